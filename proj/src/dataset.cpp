#include "uavids/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include "uavids/random.hpp"

namespace uavids {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_number(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

bool is_missing_token(std::string_view s) {
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "null" || s == "NULL";
}

}  // namespace

std::vector<std::string> split_csv_record(std::string_view line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back(trim(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  fields.emplace_back(trim(current));
  return fields;
}

void validate_schema(const Schema& schema) {
  std::set<std::string> seen;
  int labels = 0;
  for (const auto& c : schema) {
    if (c.name.empty()) throw ConfigError("schema contains an empty column name");
    if (!seen.insert(c.name).second) throw ConfigError("duplicate schema column: " + c.name);
    if (c.role == ColumnRole::label) ++labels;
  }
  if (labels != 1)
    throw ConfigError("schema must mark exactly one label column, found " + std::to_string(labels));
}

const ColumnSchema& label_column(const Schema& schema) {
  for (const auto& c : schema)
    if (c.role == ColumnRole::label) return c;
  throw ConfigError("schema has no label column");
}

std::string_view to_string(ColumnRole role) {
  switch (role) {
    case ColumnRole::numeric: return "numeric";
    case ColumnRole::categorical: return "categorical";
    case ColumnRole::label: return "label";
    case ColumnRole::drop: return "drop";
  }
  return "?";
}

std::string_view to_string(CategoricalEncoding encoding) {
  switch (encoding) {
    case CategoricalEncoding::frequency: return "frequency";
    case CategoricalEncoding::dummy: return "dummy";
    case CategoricalEncoding::integer_label: return "integer-label";
  }
  return "?";
}

ColumnRole parse_column_role(std::string_view text) {
  if (text == "numeric") return ColumnRole::numeric;
  if (text == "categorical") return ColumnRole::categorical;
  if (text == "label") return ColumnRole::label;
  if (text == "drop") return ColumnRole::drop;
  throw ConfigError("unknown column role: " + std::string(text));
}

CategoricalEncoding parse_encoding(std::string_view text) {
  if (text == "frequency") return CategoricalEncoding::frequency;
  if (text == "dummy") return CategoricalEncoding::dummy;
  if (text == "integer-label" || text == "integer_label") return CategoricalEncoding::integer_label;
  throw ConfigError("unknown categorical encoding: " + std::string(text));
}

// ---------------------------------------------------------------------------

LabelVocabulary LabelVocabulary::from_names(std::vector<std::string> names) {
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  LabelVocabulary v;
  v.names_ = std::move(names);
  return v;
}

const std::string& LabelVocabulary::name(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= names_.size())
    throw DataError("class id out of range: " + std::to_string(id));
  return names_[static_cast<std::size_t>(id)];
}

std::optional<int> LabelVocabulary::find(std::string_view name) const {
  const auto it = std::lower_bound(names_.begin(), names_.end(), name);
  if (it == names_.end() || *it != name) return std::nullopt;
  return static_cast<int>(it - names_.begin());
}

int LabelVocabulary::id(std::string_view name) const {
  if (auto id = find(name)) return *id;
  throw DataError("unknown class label: " + std::string(name));
}

// ---------------------------------------------------------------------------

std::size_t Column::size() const {
  return std::visit([](const auto& v) { return static_cast<std::size_t>(v.size()); }, data);
}

ColumnTable::ColumnTable(LabelVocabulary vocabulary, std::vector<int> labels)
    : vocabulary_(std::move(vocabulary)), labels_(std::move(labels)) {
  for (int y : labels_)
    if (y < 0 || y >= n_classes()) throw DataError("class id out of range: " + std::to_string(y));
}

void ColumnTable::add_numeric(std::string name, Eigen::VectorXd values) {
  if (has(name)) throw DataError("duplicate column: " + name);
  if (static_cast<std::size_t>(values.size()) != rows())
    throw DataError("column " + name + " has " + std::to_string(values.size()) + " rows, expected " +
                    std::to_string(rows()));
  if (!values.allFinite()) throw DataError("column " + name + " contains non-finite values");
  columns_.push_back(Column{std::move(name), std::move(values)});
}

void ColumnTable::add_categorical(std::string name, CategoricalValues values) {
  if (has(name)) throw DataError("duplicate column: " + name);
  if (values.size() != rows())
    throw DataError("column " + name + " has " + std::to_string(values.size()) + " rows, expected " +
                    std::to_string(rows()));
  columns_.push_back(Column{std::move(name), std::move(values)});
}

bool ColumnTable::has(std::string_view name) const {
  return std::any_of(columns_.begin(), columns_.end(), [&](const Column& c) { return c.name == name; });
}

std::size_t ColumnTable::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < columns_.size(); ++i)
    if (columns_[i].name == name) return i;
  throw DataError("no such column: " + std::string(name));
}

const Column& ColumnTable::column(std::string_view name) const { return columns_[index_of(name)]; }

const Eigen::VectorXd& ColumnTable::numeric(std::string_view name) const {
  const auto& c = column(name);
  if (!c.is_numeric()) throw DataError("column is not numeric: " + std::string(name));
  return std::get<Eigen::VectorXd>(c.data);
}

const CategoricalValues& ColumnTable::categorical(std::string_view name) const {
  const auto& c = column(name);
  if (c.is_numeric()) throw DataError("column is not categorical: " + std::string(name));
  return std::get<CategoricalValues>(c.data);
}

std::vector<std::string> ColumnTable::names() const {
  std::vector<std::string> out;
  for (const auto& c : columns_) out.push_back(c.name);
  return out;
}

std::vector<std::string> ColumnTable::numeric_names() const {
  std::vector<std::string> out;
  for (const auto& c : columns_)
    if (c.is_numeric()) out.push_back(c.name);
  return out;
}

ColumnTable ColumnTable::select_rows(std::span<const std::size_t> rows) const {
  std::vector<int> labels(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = labels_.at(rows[i]);
  ColumnTable out(vocabulary_, std::move(labels));
  for (const auto& c : columns_) {
    if (c.is_numeric()) {
      const auto& src = std::get<Eigen::VectorXd>(c.data);
      Eigen::VectorXd v(static_cast<Eigen::Index>(rows.size()));
      for (std::size_t i = 0; i < rows.size(); ++i) v[static_cast<Eigen::Index>(i)] = src[static_cast<Eigen::Index>(rows[i])];
      out.columns_.push_back(Column{c.name, std::move(v)});
    } else {
      const auto& src = std::get<CategoricalValues>(c.data);
      CategoricalValues v(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) v[i] = src[rows[i]];
      out.columns_.push_back(Column{c.name, std::move(v)});
    }
  }
  return out;
}

ColumnTable ColumnTable::select_columns(std::span<const std::string> names) const {
  ColumnTable out(vocabulary_, labels_);
  for (const auto& n : names) out.columns_.push_back(column(n));
  return out;
}

Eigen::MatrixXd ColumnTable::matrix(std::span<const std::string> names) const {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t j = 0; j < names.size(); ++j) m.col(static_cast<Eigen::Index>(j)) = numeric(names[j]);
  return m;
}

std::vector<std::size_t> ColumnTable::class_counts() const {
  std::vector<std::size_t> counts(vocabulary_.size(), 0);
  for (int y : labels_) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

// ---------------------------------------------------------------------------

LoadResult parse_csv(std::string_view text, const Schema& schema, const LabelVocabulary* vocabulary) {
  validate_schema(schema);
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw DataError("input has no header row");
  auto header = split_csv_record(line);
  if (!header.empty() && header.front().starts_with("\xEF\xBB\xBF")) header.front().erase(0, 3);

  std::set<std::string> header_set(header.begin(), header.end());
  if (header_set.size() != header.size()) throw DataError("header contains duplicate column names");
  std::set<std::string> schema_set;
  for (const auto& c : schema) schema_set.insert(c.name);
  if (header_set != schema_set) {
    std::string msg = "header does not match schema;";
    for (const auto& h : header_set)
      if (!schema_set.count(h)) msg += " unexpected column '" + h + "'";
    for (const auto& s : schema_set)
      if (!header_set.count(s)) msg += " missing column '" + s + "'";
    throw DataError(msg);
  }

  // Position of each schema column in the header.
  std::vector<std::size_t> position(schema.size());
  for (std::size_t i = 0; i < schema.size(); ++i)
    position[i] = static_cast<std::size_t>(std::find(header.begin(), header.end(), schema[i].name) - header.begin());

  LoadResult result;
  std::vector<std::vector<double>> numeric(schema.size());
  std::vector<CategoricalValues> categorical(schema.size());
  std::vector<std::string> label_names;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++result.rows_read;
    const auto fields = split_csv_record(line);
    if (fields.size() != header.size()) {
      ++result.rows_dropped;
      result.warnings.push_back("line " + std::to_string(line_no) + ": expected " +
                                std::to_string(header.size()) + " fields, found " +
                                std::to_string(fields.size()) + "; row dropped");
      continue;
    }
    std::string label;
    for (std::size_t i = 0; i < schema.size(); ++i) {
      if (schema[i].role != ColumnRole::label) continue;
      label = fields[position[i]];
      if (is_missing_token(label))
        throw DataError("line " + std::to_string(line_no) + ": missing label in column " + schema[i].name);
    }
    bool ok = true;
    std::vector<double> row_numeric(schema.size(), 0.0);
    for (std::size_t i = 0; i < schema.size() && ok; ++i) {
      const std::string& field = fields[position[i]];
      if (schema[i].role == ColumnRole::numeric) {
        const auto v = parse_number(field);
        if (!v) {
          ok = false;
          result.warnings.push_back("line " + std::to_string(line_no) + ": unparseable value '" + field +
                                    "' in column " + schema[i].name + "; row dropped");
        } else {
          row_numeric[i] = *v;
        }
      } else if (schema[i].role == ColumnRole::categorical && is_missing_token(field)) {
        ok = false;
        result.warnings.push_back("line " + std::to_string(line_no) + ": missing value in column " +
                                  schema[i].name + "; row dropped");
      }
    }
    if (vocabulary != nullptr && !vocabulary->find(label))
      throw DataError("line " + std::to_string(line_no) + ": unknown class label '" + label + "'");
    if (!ok) {
      ++result.rows_dropped;
      continue;
    }
    for (std::size_t i = 0; i < schema.size(); ++i) {
      if (schema[i].role == ColumnRole::numeric) numeric[i].push_back(row_numeric[i]);
      if (schema[i].role == ColumnRole::categorical) categorical[i].push_back(fields[position[i]]);
    }
    label_names.push_back(label);
  }

  LabelVocabulary vocab = vocabulary != nullptr ? *vocabulary : LabelVocabulary::from_names(label_names);
  std::vector<int> labels(label_names.size());
  for (std::size_t r = 0; r < label_names.size(); ++r) labels[r] = vocab.id(label_names[r]);

  ColumnTable table(std::move(vocab), std::move(labels));
  // Header order is kept for the retained columns.
  for (const auto& name : header) {
    const auto it = std::find_if(schema.begin(), schema.end(), [&](const ColumnSchema& c) { return c.name == name; });
    const auto i = static_cast<std::size_t>(it - schema.begin());
    if (it->role == ColumnRole::numeric)
      table.add_numeric(name, Eigen::Map<const Eigen::VectorXd>(numeric[i].data(), static_cast<Eigen::Index>(numeric[i].size())));
    else if (it->role == ColumnRole::categorical)
      table.add_categorical(name, std::move(categorical[i]));
  }
  result.table = std::move(table);
  return result;
}

LoadResult load_csv(const std::string& path, const Schema& schema, const LabelVocabulary* vocabulary) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open input file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_csv(buffer.str(), schema, vocabulary);
}

// ---------------------------------------------------------------------------

ColumnTable dedup(const ColumnTable& table) {
  std::unordered_set<std::string> seen;
  std::vector<std::size_t> keep;
  std::string key;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    key.clear();
    const int y = table.labels()[r];
    key.append(reinterpret_cast<const char*>(&y), sizeof y);
    for (const auto& c : table.columns()) {
      if (c.is_numeric()) {
        double v = std::get<Eigen::VectorXd>(c.data)[static_cast<Eigen::Index>(r)];
        if (v == 0.0) v = 0.0;  // -0 and +0 compare equal
        key.append(reinterpret_cast<const char*>(&v), sizeof v);
      } else {
        const auto& s = std::get<CategoricalValues>(c.data)[r];
        const auto len = s.size();
        key.append(reinterpret_cast<const char*>(&len), sizeof len);
        key.append(s);
      }
    }
    if (seen.insert(key).second) keep.push_back(r);
  }
  return table.select_rows(keep);
}

// ---------------------------------------------------------------------------

std::string EncoderState::dummy_name(std::string_view column, std::string_view category) {
  return std::string(column) + std::string(category);
}

std::vector<std::string> EncoderState::dummy_columns() const {
  std::vector<std::string> out;
  for (const auto& list : indicator)
    if (list.encoding == CategoricalEncoding::dummy)
      for (const auto& cat : list.categories) out.push_back(dummy_name(list.column, cat));
  return out;
}

EncoderState fit_encoders(const ColumnTable& train, const Schema& schema) {
  EncoderState state;
  for (const auto& c : schema) {
    if (c.role != ColumnRole::categorical) continue;
    const auto& values = train.categorical(c.name);
    std::map<std::string, std::size_t> counts;
    for (const auto& v : values) ++counts[v];
    if (counts.size() == 1)
      state.warnings.push_back("categorical column " + c.name + " has a single category (constant column)");
    if (c.encoding == CategoricalEncoding::frequency) {
      FrequencyTable table{c.name, {}};
      for (const auto& [cat, n] : counts)
        table.frequency[cat] = static_cast<double>(n) / static_cast<double>(values.size());
      state.frequency.push_back(std::move(table));
    } else {
      CategoryList list{c.name, c.encoding, {}};
      for (const auto& [cat, n] : counts) list.categories.push_back(cat);
      state.indicator.push_back(std::move(list));
    }
  }
  return state;
}

ColumnTable apply_encoders(const ColumnTable& table, const EncoderState& state) {
  ColumnTable out(table.vocabulary(), table.labels());
  const auto n = static_cast<Eigen::Index>(table.rows());
  for (const auto& c : table.columns()) {
    if (c.is_numeric()) {
      out.add_numeric(c.name, std::get<Eigen::VectorXd>(c.data));
      continue;
    }
    const auto& values = std::get<CategoricalValues>(c.data);
    const auto freq = std::find_if(state.frequency.begin(), state.frequency.end(),
                                   [&](const FrequencyTable& f) { return f.column == c.name; });
    if (freq != state.frequency.end()) {
      Eigen::VectorXd v(n);
      for (Eigen::Index r = 0; r < n; ++r) {
        const auto it = freq->frequency.find(values[static_cast<std::size_t>(r)]);
        v[r] = it == freq->frequency.end() ? 0.0 : it->second;
      }
      out.add_numeric(c.name, std::move(v));
      continue;
    }
    const auto list = std::find_if(state.indicator.begin(), state.indicator.end(),
                                   [&](const CategoryList& l) { return l.column == c.name; });
    if (list == state.indicator.end()) throw DataError("no fitted encoder for categorical column " + c.name);
    if (list->encoding == CategoricalEncoding::integer_label) {
      Eigen::VectorXd v(n);
      for (Eigen::Index r = 0; r < n; ++r) {
        const auto& cats = list->categories;
        const auto it = std::lower_bound(cats.begin(), cats.end(), values[static_cast<std::size_t>(r)]);
        v[r] = (it != cats.end() && *it == values[static_cast<std::size_t>(r)]) ? static_cast<double>(it - cats.begin()) : -1.0;
      }
      out.add_numeric(c.name, std::move(v));
    } else {
      for (const auto& cat : list->categories) {
        Eigen::VectorXd v(n);
        for (Eigen::Index r = 0; r < n; ++r) v[r] = values[static_cast<std::size_t>(r)] == cat ? 1.0 : 0.0;
        out.add_numeric(EncoderState::dummy_name(c.name, cat), std::move(v));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

SplitIndices stratified_split(std::span<const int> labels, double test_fraction, std::uint64_t seed,
                              const LabelVocabulary* vocabulary) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("test fraction must lie strictly between 0 and 1");
  int n_classes = 0;
  for (int y : labels) n_classes = std::max(n_classes, y + 1);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(n_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);

  SplitIndices split;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& rows = by_class[c];
    if (rows.empty()) continue;
    if (rows.size() < 2) {
      const std::string name = vocabulary != nullptr ? vocabulary->name(static_cast<int>(c)) : std::to_string(c);
      throw DataError("class " + name + " has fewer than 2 rows; cannot stratify");
    }
    Rng rng(derive_seed(seed, {c}));
    shuffle(std::span<std::size_t>(rows), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(rows.size()) * test_fraction));
    split.test.insert(split.test.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_test));
    split.train.insert(split.train.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_test), rows.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

TableSplit stratified_split(const ColumnTable& table, double test_fraction, std::uint64_t seed) {
  const auto idx = stratified_split(table.labels(), test_fraction, seed, &table.vocabulary());
  return {table.select_rows(idx.train), table.select_rows(idx.test)};
}

}  // namespace uavids
