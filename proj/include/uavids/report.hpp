#pragma once

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "uavids/config.hpp"
#include "uavids/model_io.hpp"

namespace uavids {

inline constexpr const char* kReportSchemaVersion = "1.0";
inline constexpr std::array<std::string_view, 4> kStages{"preprocess", "cv", "density", "wy"};

std::string tool_version();

/// Shortest text that parses back to the same double.
std::string format_double(double value);
/// Fixed number of decimals, for tables meant to be read by people.
std::string format_fixed(double value, int decimals);

/// Quotes a CSV field when it holds a comma, quote or newline.
std::string csv_field(std::string_view text);

using CsvRow = std::vector<std::string>;
void write_csv(const std::filesystem::path& path, const CsvRow& header, const std::vector<CsvRow>& rows);
/// Header plus records; throws DataError when the file is missing or ragged.
std::vector<CsvRow> read_csv(const std::filesystem::path& path);

/// Named numeric columns, e.g. a KDE curve: x then one density per class.
struct CurveTable {
  std::vector<std::string> columns;
  Eigen::MatrixXd values;  // rows x columns
};
void write_curve_csv(const std::filesystem::path& path, const CurveTable& table);
CurveTable read_curve_csv(const std::filesystem::path& path);

/// File-name-safe form of a feature name: characters outside [A-Za-z0-9_.-]
/// become '_'.
std::string file_stem(std::string_view name);

void write_json(const std::filesystem::path& path, const Json& document);
Json read_json(const std::filesystem::path& path);

/// Throws DataError naming the first missing or mistyped field.
void validate_fragment(std::string_view stage, const Json& fragment);

/// Envelope holding the config echo, tool version and every fragment
/// present, in stage order. Contains no timestamps.
Json make_envelope(const RunConfig& config, const std::map<std::string, Json>& fragments);

}  // namespace uavids
