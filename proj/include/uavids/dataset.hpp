#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "uavids/errors.hpp"

namespace uavids {

enum class ColumnRole { numeric, categorical, label, drop };
enum class CategoricalEncoding { frequency, dummy, integer_label };

struct ColumnSchema {
  std::string name;
  ColumnRole role = ColumnRole::numeric;
  CategoricalEncoding encoding = CategoricalEncoding::frequency;  // categorical only
};

using Schema = std::vector<ColumnSchema>;

/// Splits one comma-delimited record; double-quoted fields may contain
/// commas and "" escapes. Unquoted whitespace around fields is trimmed.
std::vector<std::string> split_csv_record(std::string_view line);

/// Throws ConfigError unless names are unique and exactly one column is the label.
void validate_schema(const Schema& schema);
const ColumnSchema& label_column(const Schema& schema);

std::string_view to_string(ColumnRole role);
std::string_view to_string(CategoricalEncoding encoding);
ColumnRole parse_column_role(std::string_view text);
CategoricalEncoding parse_encoding(std::string_view text);

/// Class names and their integer ids. Ids follow lexicographic name order.
class LabelVocabulary {
 public:
  LabelVocabulary() = default;
  /// Sorts and de-duplicates `names`.
  static LabelVocabulary from_names(std::vector<std::string> names);

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(int id) const;
  std::optional<int> find(std::string_view name) const;
  /// Throws DataError for unknown names.
  int id(std::string_view name) const;

  friend bool operator==(const LabelVocabulary&, const LabelVocabulary&) = default;

 private:
  std::vector<std::string> names_;
};

using CategoricalValues = std::vector<std::string>;

struct Column {
  std::string name;
  std::variant<Eigen::VectorXd, CategoricalValues> data;

  bool is_numeric() const { return std::holds_alternative<Eigen::VectorXd>(data); }
  std::size_t size() const;
};

/// Column-major table of named numeric (or not yet encoded categorical)
/// columns plus an integer class label per row.
class ColumnTable {
 public:
  ColumnTable() = default;
  ColumnTable(LabelVocabulary vocabulary, std::vector<int> labels);

  void add_numeric(std::string name, Eigen::VectorXd values);
  void add_categorical(std::string name, CategoricalValues values);

  std::size_t rows() const { return labels_.size(); }
  std::size_t cols() const { return columns_.size(); }
  int n_classes() const { return static_cast<int>(vocabulary_.size()); }

  const std::vector<Column>& columns() const { return columns_; }
  const std::vector<int>& labels() const { return labels_; }
  const LabelVocabulary& vocabulary() const { return vocabulary_; }

  bool has(std::string_view name) const;
  const Column& column(std::string_view name) const;
  const Eigen::VectorXd& numeric(std::string_view name) const;
  const CategoricalValues& categorical(std::string_view name) const;
  std::vector<std::string> names() const;
  std::vector<std::string> numeric_names() const;

  /// Rows in the given order (indices may repeat).
  ColumnTable select_rows(std::span<const std::size_t> rows) const;
  /// Keeps only the named columns, in the given order.
  ColumnTable select_columns(std::span<const std::string> names) const;
  /// n_rows x names.size() design matrix.
  Eigen::MatrixXd matrix(std::span<const std::string> names) const;
  std::vector<std::size_t> class_counts() const;

 private:
  std::size_t index_of(std::string_view name) const;

  LabelVocabulary vocabulary_;
  std::vector<int> labels_;
  std::vector<Column> columns_;
};

struct LoadResult {
  ColumnTable table;
  std::size_t rows_read = 0;
  std::size_t rows_dropped = 0;
  Warnings warnings;
};

/// Reads a comma-delimited file with one header row. Columns are parsed per
/// schema role; drop-role columns are discarded. Rows with a missing or
/// unparseable value in a retained feature column are skipped and counted.
/// A missing or empty label is fatal. When `vocabulary` is given, labels
/// outside it are fatal; otherwise the vocabulary is built from the file.
LoadResult load_csv(const std::string& path, const Schema& schema,
                    const LabelVocabulary* vocabulary = nullptr);
/// Same as load_csv, reading from an in-memory document.
LoadResult parse_csv(std::string_view text, const Schema& schema,
                     const LabelVocabulary* vocabulary = nullptr);

/// Keeps the first occurrence of rows identical in every column and label.
ColumnTable dedup(const ColumnTable& table);

struct FrequencyTable {
  std::string column;
  std::map<std::string, double> frequency;
};

struct CategoryList {
  std::string column;
  CategoricalEncoding encoding = CategoricalEncoding::dummy;
  std::vector<std::string> categories;  // sorted
};

/// Encoders fitted on training rows. Apply-time never refits.
struct EncoderState {
  std::vector<FrequencyTable> frequency;
  std::vector<CategoryList> indicator;  // dummy and integer-label encodings
  Warnings warnings;

  /// Output columns produced for a dummy-encoded column, e.g. "DstPort654".
  static std::string dummy_name(std::string_view column, std::string_view category);
  std::vector<std::string> dummy_columns() const;
};

EncoderState fit_encoders(const ColumnTable& train, const Schema& schema);
/// Frequency: training frequency, unseen -> 0. Dummy: one 0/1 column per
/// training category, unseen -> all zeros. Integer label: category index,
/// unseen -> -1.
ColumnTable apply_encoders(const ColumnTable& table, const EncoderState& state);

struct SplitIndices {
  std::vector<std::size_t> train;  // ascending
  std::vector<std::size_t> test;   // ascending
};

/// Per class, round(n_c * test_fraction) rows go to test via a seeded shuffle.
SplitIndices stratified_split(std::span<const int> labels, double test_fraction, std::uint64_t seed,
                              const LabelVocabulary* vocabulary = nullptr);

struct TableSplit {
  ColumnTable train;
  ColumnTable test;
};
TableSplit stratified_split(const ColumnTable& table, double test_fraction, std::uint64_t seed);

}  // namespace uavids
