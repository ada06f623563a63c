#include "uavids/report.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "uavids/errors.hpp"

namespace uavids {

std::string tool_version() { return UAVIDS_VERSION; }

std::string format_double(double value) {
  char buffer[32];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
  return std::string(buffer, ec == std::errc{} ? ptr : buffer);
}

std::string format_fixed(double value, int decimals) {
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "%.*f", decimals, value);
  return buffer;
}

std::string csv_field(std::string_view text) {
  if (text.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(text);
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void write_csv(const std::filesystem::path& path, const CsvRow& header, const std::vector<CsvRow>& rows) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  auto emit = [&out](const CsvRow& row) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << csv_field(row[i]);
    out << '\n';
  };
  emit(header);
  for (const auto& row : rows) emit(row);
}

std::vector<CsvRow> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<CsvRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(split_csv_record(line));
    if (rows.size() > 1 && rows.back().size() != rows.front().size())
      throw DataError(path.string() + ": record " + std::to_string(rows.size() - 1) + " has the wrong field count");
  }
  if (rows.empty()) throw DataError(path.string() + " is empty");
  return rows;
}

void write_curve_csv(const std::filesystem::path& path, const CurveTable& table) {
  if (static_cast<std::size_t>(table.values.cols()) != table.columns.size())
    throw std::invalid_argument("curve table column count mismatch");
  std::vector<CsvRow> rows;
  rows.reserve(static_cast<std::size_t>(table.values.rows()));
  for (Eigen::Index r = 0; r < table.values.rows(); ++r) {
    CsvRow row;
    for (Eigen::Index c = 0; c < table.values.cols(); ++c) row.push_back(format_double(table.values(r, c)));
    rows.push_back(std::move(row));
  }
  write_csv(path, table.columns, rows);
}

CurveTable read_curve_csv(const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  CurveTable table;
  table.columns = rows.front();
  table.values.resize(static_cast<Eigen::Index>(rows.size() - 1), static_cast<Eigen::Index>(table.columns.size()));
  for (std::size_t r = 1; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const std::string& s = rows[r][c];
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || ptr != s.data() + s.size())
        throw DataError(path.string() + ": non-numeric value '" + s + "'");
      table.values(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(c)) = v;
    }
  return table;
}

std::string file_stem(std::string_view name) {
  std::string out;
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
                    c == '-' || c == '.';
    out += ok ? c : '_';
  }
  return out.empty() ? "_" : out;
}

void write_json(const std::filesystem::path& path, const Json& document) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << document.dump(2) << '\n';
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw DataError(path.string() + " is not valid JSON: " + e.what());
  }
}

namespace {

enum class Kind { object, array, string, number, integer, boolean };

void expect(const Json& j, const std::string& key, Kind kind, const std::string& where) {
  if (!j.contains(key)) throw DataError(where + ": missing field '" + key + "'");
  const Json& v = j.at(key);
  bool ok = false;
  switch (kind) {
    case Kind::object: ok = v.is_object(); break;
    case Kind::array: ok = v.is_array(); break;
    case Kind::string: ok = v.is_string(); break;
    case Kind::number: ok = v.is_number(); break;
    case Kind::integer: ok = v.is_number_integer(); break;
    case Kind::boolean: ok = v.is_boolean(); break;
  }
  if (!ok) throw DataError(where + ": field '" + key + "' has the wrong type");
}

void expect_unit(const Json& j, const std::string& key, const std::string& where) {
  expect(j, key, Kind::number, where);
  const double v = j.at(key).get<double>();
  if (!(v >= 0.0 && v <= 1.0)) throw DataError(where + ": field '" + key + "' outside [0, 1]");
}

void validate_preprocess(const Json& f) {
  const std::string w = "preprocess fragment";
  expect(f, "ingestion", Kind::object, w);
  for (const char* k : {"rows_read", "rows_dropped", "rows_after_dedup"}) expect(f.at("ingestion"), k, Kind::integer, w + ".ingestion");
  expect(f, "vocabulary", Kind::array, w);
  expect(f, "split", Kind::object, w);
  expect(f, "encoders", Kind::object, w);
  expect(f, "selection", Kind::object, w);
  expect(f.at("selection"), "features", Kind::array, w + ".selection");
  expect(f.at("selection"), "dropped", Kind::array, w + ".selection");
  if (f.at("selection").at("features").empty()) throw DataError(w + ": no features selected");
}

void validate_summary(const Json& s, const std::string& where) {
  for (const auto& metric : {"precision", "recall", "f1", "roc_auc"}) {
    expect(s, metric, Kind::object, where);
    const Json& m = s.at(metric);
    for (const char* k : {"mean", "min", "max", "range"}) expect_unit(m, k, where + "." + metric);
    expect(m, "stable", Kind::boolean, where + "." + metric);
  }
}

void validate_cv(const Json& f) {
  const std::string w = "cv fragment";
  expect(f, "k", Kind::integer, w);
  expect(f, "models", Kind::array, w);
  if (f.at("models").empty()) throw DataError(w + ": no models");
  for (std::size_t i = 0; i < f.at("models").size(); ++i) {
    const Json& m = f.at("models").at(i);
    const std::string mw = w + ".models[" + std::to_string(i) + "]";
    expect(m, "name", Kind::string, mw);
    expect(m, "family", Kind::string, mw);
    expect(m, "grid", Kind::array, mw);
    expect(m, "train", Kind::object, mw);
    expect(m, "test", Kind::object, mw);
    validate_summary(m.at("train"), mw + ".train");
    validate_summary(m.at("test"), mw + ".test");
    expect(m, "stable", Kind::boolean, mw);
  }
  expect(f, "best_model", Kind::string, w);
  expect(f, "holdout", Kind::object, w);
  for (const char* k : {"train_confusion", "test_confusion"}) expect(f.at("holdout"), k, Kind::array, w + ".holdout");
}

void validate_density(const Json& f) {
  const std::string w = "density fragment";
  expect(f, "bandwidth", Kind::string, w);
  expect(f, "features", Kind::array, w);
  for (const auto& feature : f.at("features")) {
    expect(feature, "feature", Kind::string, w);
    expect(feature, "curve_file", Kind::string, w);
    expect(feature, "classes", Kind::array, w);
    for (const auto& c : feature.at("classes")) {
      expect(c, "class", Kind::string, w);
      expect(c, "n", Kind::integer, w);
      for (const char* k : {"min", "q1", "median", "q3", "max", "bandwidth"}) expect(c, k, Kind::number, w);
      expect(c, "outliers", Kind::integer, w);
    }
  }
}

void validate_wy(const Json& f) {
  const std::string w = "wy fragment";
  expect(f, "classes", Kind::array, w);
  if (f.at("classes").size() != 2) throw DataError(w + ": classes must hold two names");
  expect(f, "permutations", Kind::integer, w);
  expect(f, "seed", Kind::integer, w);
  expect(f, "alpha", Kind::number, w);
  expect(f, "results", Kind::array, w);
  expect(f, "family_reject", Kind::boolean, w);
  const double lo = 1.0 / (f.at("permutations").get<double>() + 1.0);
  for (const auto& r : f.at("results")) {
    expect(r, "feature", Kind::string, w);
    expect_unit(r, "js_distance", w);
    expect(r, "p_value", Kind::number, w);
    const double p = r.at("p_value").get<double>();
    if (p < lo - 1e-15 || p > 1.0) throw DataError(w + ": p-value outside [1/(B+1), 1]");
    expect(r, "p_value_text", Kind::string, w);
    expect(r, "reject", Kind::boolean, w);
    expect(r, "overlap_intervals", Kind::array, w);
    expect_unit(r, "overlap_coefficient", w);
  }
}

}  // namespace

void validate_fragment(std::string_view stage, const Json& fragment) {
  const std::string where = std::string(stage) + " fragment";
  if (!fragment.is_object()) throw DataError(where + " is not an object");
  expect(fragment, "stage", Kind::string, where);
  expect(fragment, "schema_version", Kind::string, where);
  if (fragment.at("stage") != stage) throw DataError(where + ": stage field mismatch");
  if (fragment.at("schema_version") != kReportSchemaVersion)
    throw DataError(where + ": schema version " + fragment.at("schema_version").get<std::string>() + " unsupported");
  expect(fragment, "warnings", Kind::array, where);
  if (stage == "preprocess") validate_preprocess(fragment);
  else if (stage == "cv") validate_cv(fragment);
  else if (stage == "density") validate_density(fragment);
  else if (stage == "wy") validate_wy(fragment);
  else throw DataError("unknown report stage: " + std::string(stage));
}

Json make_envelope(const RunConfig& config, const std::map<std::string, Json>& fragments) {
  Json echo = config_to_json(config);
  echo.erase("threads");
  Json stages = Json::object();
  for (const auto stage : kStages) {
    const auto it = fragments.find(std::string(stage));
    if (it == fragments.end()) continue;
    validate_fragment(stage, it->second);
    stages[std::string(stage)] = it->second;
  }
  return Json{{"schema_version", kReportSchemaVersion},
              {"tool", Json{{"name", "uavids"}, {"version", tool_version()}}},
              {"seed", config.seed},
              {"config", echo},
              {"fragments", stages}};
}

}  // namespace uavids
