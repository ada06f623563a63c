#include "uavids/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

namespace uavids {
namespace {

/// Typed access to one JSON object that remembers which keys were read so
/// leftovers can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const Json& object, std::string path) : object_(object), path_(std::move(path)) {
    if (!object_.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const std::string& key) const { return object_.contains(key); }

  const Json* child(const std::string& key) {
    used_.insert(key);
    return object_.contains(key) ? &object_.at(key) : nullptr;
  }

  std::string path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void read(const std::string& key, bool& out) {
    if (const Json* j = child(key)) {
      if (!j->is_boolean()) throw ConfigError(path(key) + " must be a boolean");
      out = j->get<bool>();
    }
  }
  void read(const std::string& key, int& out) {
    if (const Json* j = child(key)) {
      if (!j->is_number_integer()) throw ConfigError(path(key) + " must be an integer");
      out = j->get<int>();
    }
  }
  void read(const std::string& key, std::size_t& out) {
    if (const Json* j = child(key)) {
      if (!j->is_number_unsigned()) throw ConfigError(path(key) + " must be a non-negative integer");
      out = j->get<std::size_t>();
    }
  }
  void read(const std::string& key, double& out) {
    if (const Json* j = child(key)) {
      if (!j->is_number()) throw ConfigError(path(key) + " must be a number");
      out = j->get<double>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const Json* j = child(key)) {
      if (!j->is_string()) throw ConfigError(path(key) + " must be a string");
      out = j->get<std::string>();
    }
  }
  template <typename T>
  void read(const std::string& key, std::vector<T>& out) {
    if (const Json* j = child(key)) {
      if (!j->is_array()) throw ConfigError(path(key) + " must be an array");
      out.clear();
      for (std::size_t i = 0; i < j->size(); ++i) {
        const Json& v = j->at(i);
        const std::string p = path(key) + "[" + std::to_string(i) + "]";
        if constexpr (std::is_same_v<T, std::string>) {
          if (!v.is_string()) throw ConfigError(p + " must be a string");
        } else if constexpr (std::is_integral_v<T>) {
          if (!v.is_number_integer()) throw ConfigError(p + " must be an integer");
        } else {
          if (!v.is_number()) throw ConfigError(p + " must be a number");
        }
        out.push_back(v.get<T>());
      }
    }
  }

  void finish() const {
    for (const auto& [key, value] : object_.items())
      if (!used_.contains(key)) throw ConfigError("unknown config key: " + path(key));
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const Json& object_;
  std::string path_;
  std::set<std::string> used_;
};

Schema parse_schema(const Json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + " must map column names to roles");
  Schema schema;
  for (const auto& [name, value] : j.items()) {
    ColumnSchema column;
    column.name = name;
    const std::string p = path + "." + name;
    if (value.is_string()) {
      column.role = parse_column_role(value.get<std::string>());
    } else {
      ObjectReader r(value, p);
      std::string role, encoding;
      r.read("role", role);
      r.read("encoding", encoding);
      r.finish();
      if (role.empty()) throw ConfigError(p + ".role is required");
      column.role = parse_column_role(role);
      if (!encoding.empty()) {
        if (column.role != ColumnRole::categorical) throw ConfigError(p + ".encoding applies to categorical columns only");
        column.encoding = parse_encoding(encoding);
      }
    }
    schema.push_back(std::move(column));
  }
  return schema;
}

EngineeredFeature parse_engineered(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  EngineeredFeature f;
  std::string transform;
  r.read("source", f.source);
  r.read("transform", transform);
  r.read("exponent", f.exponent);
  r.read("name", f.name);
  r.finish();
  if (f.source.empty()) throw ConfigError(path + ".source is required");
  if (transform == "power") {
    f.kind = TransformKind::power;
    if (!r.has("exponent")) throw ConfigError(path + ".exponent is required for power transforms");
  } else if (transform == "reciprocal") {
    f.kind = TransformKind::reciprocal;
    if (r.has("exponent")) throw ConfigError(path + ".exponent applies to power transforms only");
  } else {
    throw ConfigError(path + ".transform must be power or reciprocal");
  }
  return f;
}

void parse_preprocess(const Json& j, PreprocessConfig& out) {
  ObjectReader r(j, "preprocess");
  r.read("deduplicate", out.deduplicate);
  r.read("test_fraction", out.test_fraction);
  r.read("correlation_threshold", out.correlation_threshold);
  r.read("robust_scaler", out.robust_scaler);
  r.read("outlier_k", out.outlier_k);
  if (const Json* e = r.child("engineered")) {
    if (!e->is_array()) throw ConfigError("preprocess.engineered must be an array");
    for (std::size_t i = 0; i < e->size(); ++i)
      out.engineered.push_back(parse_engineered(e->at(i), "preprocess.engineered[" + std::to_string(i) + "]"));
  }
  if (const Json* rfe = r.child("rfe")) {
    ObjectReader rr(*rfe, "preprocess.rfe");
    rr.read("enabled", out.rfe_enabled);
    rr.read("keep_threshold", out.rfe.keep_threshold);
    rr.read("step", out.rfe.step);
    rr.read("n_trees", out.rfe_forest.n_trees);
    rr.read("max_depth", out.rfe_forest.max_depth);
    rr.read("min_leaf", out.rfe_forest.min_leaf);
    rr.finish();
  }
  std::string order;
  r.read("selection_order", order);
  if (!order.empty()) out.selection_order = parse_selection_order(order);
  r.read("features", out.features);
  r.finish();
}

ModelSpec parse_model_params(ModelFamily family, const Json* j, const std::string& path) {
  ModelSpec spec;
  spec.family = family;
  if (j == nullptr) return spec;
  ObjectReader r(*j, path);
  switch (family) {
    case ModelFamily::tree:
      r.read("max_depth", spec.tree.max_depth);
      r.read("min_leaf", spec.tree.min_leaf);
      r.read("max_features", spec.tree.max_features);
      break;
    case ModelFamily::forest:
      r.read("n_trees", spec.forest.n_trees);
      r.read("max_depth", spec.forest.max_depth);
      r.read("min_leaf", spec.forest.min_leaf);
      r.read("max_features", spec.forest.max_features);
      r.read("bootstrap", spec.forest.bootstrap);
      break;
    case ModelFamily::gbdt:
      r.read("rounds", spec.gbdt.rounds);
      r.read("learning_rate", spec.gbdt.learning_rate);
      r.read("max_depth", spec.gbdt.max_depth);
      r.read("min_leaf", spec.gbdt.min_leaf);
      r.read("n_bins", spec.gbdt.n_bins);
      r.read("l2", spec.gbdt.l2);
      r.read("min_hessian", spec.gbdt.min_hessian);
      r.read("feature_fraction", spec.gbdt.feature_fraction);
      break;
  }
  r.finish();
  return spec;
}

CvModelConfig parse_model(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  std::string name, family;
  r.read("name", name);
  r.read("family", family);
  if (family.empty()) throw ConfigError(path + ".family is required");
  CvModelConfig model;
  model.base = parse_model_params(parse_model_family(family), r.child("params"), path + ".params");
  model.base.name = name.empty() ? std::string(to_string(model.base.family)) : name;
  if (const Json* g = r.child("grid")) {
    ObjectReader gr(*g, path + ".grid");
    gr.read("max_depth", model.grid.max_depth);
    if (model.base.family == ModelFamily::forest) gr.read("n_trees", model.grid.n_trees);
    if (model.base.family == ModelFamily::gbdt) {
      gr.read("rounds", model.grid.rounds);
      gr.read("learning_rate", model.grid.learning_rate);
    }
    gr.read("min_leaf", model.grid.min_leaf);
    gr.finish();
  }
  r.finish();
  return model;
}

std::vector<CvModelConfig> default_models() {
  std::vector<CvModelConfig> models(3);
  models[0].base.name = "decision_tree";
  models[0].base.family = ModelFamily::tree;
  models[1].base.name = "random_forest";
  models[1].base.family = ModelFamily::forest;
  models[2].base.name = "gbdt";
  models[2].base.family = ModelFamily::gbdt;
  return models;
}

void parse_cv(const Json& j, CvConfig& out) {
  ObjectReader r(j, "cv");
  r.read("k", out.k);
  if (const Json* m = r.child("models")) {
    if (!m->is_array()) throw ConfigError("cv.models must be an array");
    out.models.clear();
    for (std::size_t i = 0; i < m->size(); ++i)
      out.models.push_back(parse_model(m->at(i), "cv.models[" + std::to_string(i) + "]"));
  }
  r.finish();
}

void parse_density(const Json& j, DensityConfig& out) {
  ObjectReader r(j, "density");
  std::string policy;
  r.read("bandwidth", policy);
  if (!policy.empty()) out.bandwidth.policy = parse_bandwidth_policy(policy);
  r.read("cv_candidates", out.bandwidth.cv.n_candidates);
  r.read("cv_folds", out.bandwidth.cv.folds);
  r.read("grid_size", out.grid_size);
  r.read("features", out.features);
  r.finish();
}

void parse_wy(const Json& j, WyStageConfig& out) {
  ObjectReader r(j, "wy");
  std::vector<std::string> classes;
  r.read("classes", classes);
  // An empty list leaves the pair unset, matching the echo of an unset pair.
  if (!classes.empty()) {
    if (classes.size() != 2) throw ConfigError("wy.classes must name exactly two classes");
    out.test.class_v = classes[0];
    out.test.class_w = classes[1];
  }
  r.read("permutations", out.test.permutations);
  r.read("alpha", out.test.alpha);
  std::string policy, mode;
  r.read("bandwidth", policy);
  if (!policy.empty()) out.test.policy = parse_bandwidth_policy(policy);
  r.read("bandwidth_mode", mode);
  if (!mode.empty()) out.test.bandwidth_mode = parse_bandwidth_mode(mode);
  r.read("grid_size", out.test.grid_size);
  r.read("cv_candidates", out.test.cv_candidates);
  r.read("cv_folds", out.test.cv_folds);
  r.read("features", out.features);
  r.finish();
}

Json params_json(const ModelSpec& s) {
  switch (s.family) {
    case ModelFamily::tree:
      return Json{{"max_depth", s.tree.max_depth}, {"min_leaf", s.tree.min_leaf}, {"max_features", s.tree.max_features}};
    case ModelFamily::forest:
      return Json{{"n_trees", s.forest.n_trees},
                  {"max_depth", s.forest.max_depth},
                  {"min_leaf", s.forest.min_leaf},
                  {"max_features", s.forest.max_features},
                  {"bootstrap", s.forest.bootstrap}};
    case ModelFamily::gbdt:
      return Json{{"rounds", s.gbdt.rounds},       {"learning_rate", s.gbdt.learning_rate},
                  {"max_depth", s.gbdt.max_depth}, {"min_leaf", s.gbdt.min_leaf},
                  {"n_bins", s.gbdt.n_bins},       {"l2", s.gbdt.l2},
                  {"min_hessian", s.gbdt.min_hessian}, {"feature_fraction", s.gbdt.feature_fraction}};
  }
  return Json::object();
}

}  // namespace

std::string_view to_string(SelectionOrder order) {
  return order == SelectionOrder::rfe_then_correlation ? "rfe_then_correlation" : "correlation_then_rfe";
}

SelectionOrder parse_selection_order(std::string_view text) {
  if (text == "rfe_then_correlation") return SelectionOrder::rfe_then_correlation;
  if (text == "correlation_then_rfe") return SelectionOrder::correlation_then_rfe;
  throw ConfigError("unknown selection order: " + std::string(text));
}

void RunConfig::validate() const {
  if (input.empty()) throw ConfigError("input is required");
  if (schema.empty()) throw ConfigError("schema is required");
  validate_schema(schema);
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  const auto& p = preprocess;
  if (!(p.test_fraction > 0.0 && p.test_fraction < 1.0)) throw ConfigError("preprocess.test_fraction must lie in (0, 1)");
  if (!(p.correlation_threshold > 0.0 && p.correlation_threshold <= 1.0))
    throw ConfigError("preprocess.correlation_threshold must lie in (0, 1]");
  if (!(p.outlier_k > 0.0)) throw ConfigError("preprocess.outlier_k must be positive");
  if (!(p.rfe.keep_threshold >= 0.0 && p.rfe.keep_threshold <= 1.0))
    throw ConfigError("preprocess.rfe.keep_threshold must lie in [0, 1]");
  if (p.rfe.step < 1) throw ConfigError("preprocess.rfe.step must be >= 1");
  if (p.rfe_forest.n_trees < 1) throw ConfigError("preprocess.rfe.n_trees must be >= 1");
  if (cv.k < 2) throw ConfigError("cv.k must be >= 2");
  std::set<std::string> names;
  for (const auto& m : cv.models) {
    if (!names.insert(m.base.name).second) throw ConfigError("duplicate model name: " + m.base.name);
    if (m.base.forest.n_trees < 1 || m.base.gbdt.rounds < 1) throw ConfigError("model " + m.base.name + ": ensemble size must be >= 1");
    if (m.base.gbdt.n_bins < 2) throw ConfigError("model " + m.base.name + ": n_bins must be >= 2");
    for (int v : m.grid.n_trees)
      if (v < 1) throw ConfigError("model " + m.base.name + ": grid n_trees must be >= 1");
    for (int v : m.grid.rounds)
      if (v < 1) throw ConfigError("model " + m.base.name + ": grid rounds must be >= 1");
  }
  if (density.grid_size < 2) throw ConfigError("density.grid_size must be >= 2");
  if (density.bandwidth.cv.n_candidates < 1) throw ConfigError("density.cv_candidates must be >= 1");
  if (density.bandwidth.cv.folds < 2) throw ConfigError("density.cv_folds must be >= 2");
  wy.test.validate();
}

RunConfig parse_config(const Json& document, const std::string& base_dir) {
  RunConfig config;
  config.cv.models = default_models();
  ObjectReader r(document, "");
  r.read("input", config.input);
  if (const Json* s = r.child("schema")) config.schema = parse_schema(*s, "schema");
  r.read("seed", config.seed);
  r.read("output_dir", config.output_dir);
  r.read("threads", config.threads);
  if (const Json* j = r.child("preprocess")) parse_preprocess(*j, config.preprocess);
  if (const Json* j = r.child("cv")) parse_cv(*j, config.cv);
  if (const Json* j = r.child("density")) parse_density(*j, config.density);
  if (const Json* j = r.child("wy")) parse_wy(*j, config.wy);
  r.finish();
  if (!config.input.empty() && !base_dir.empty() && std::filesystem::path(config.input).is_relative())
    config.input = (std::filesystem::path(base_dir) / config.input).lexically_normal().string();
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  Json document;
  try {
    document = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("config file is not valid JSON: " + path + " (" + e.what() + ")");
  }
  return parse_config(document, std::filesystem::path(path).parent_path().string());
}

Json config_to_json(const RunConfig& c) {
  Json schema = Json::object();
  for (const auto& col : c.schema) {
    if (col.role == ColumnRole::categorical)
      schema[col.name] = Json{{"role", to_string(col.role)}, {"encoding", to_string(col.encoding)}};
    else
      schema[col.name] = to_string(col.role);
  }
  Json engineered = Json::array();
  for (const auto& f : c.preprocess.engineered) {
    Json e{{"source", f.source}, {"transform", f.kind == TransformKind::power ? "power" : "reciprocal"}};
    if (f.kind == TransformKind::power) e["exponent"] = f.exponent;
    e["name"] = f.output_name();
    engineered.push_back(e);
  }
  const auto& p = c.preprocess;
  Json models = Json::array();
  for (const auto& m : c.cv.models) {
    Json grid = Json::object();
    if (!m.grid.max_depth.empty()) grid["max_depth"] = m.grid.max_depth;
    if (!m.grid.n_trees.empty()) grid["n_trees"] = m.grid.n_trees;
    if (!m.grid.rounds.empty()) grid["rounds"] = m.grid.rounds;
    if (!m.grid.learning_rate.empty()) grid["learning_rate"] = m.grid.learning_rate;
    if (!m.grid.min_leaf.empty()) grid["min_leaf"] = m.grid.min_leaf;
    models.push_back(Json{{"name", m.base.name},
                          {"family", to_string(m.base.family)},
                          {"params", params_json(m.base)},
                          {"grid", grid}});
  }
  const auto& w = c.wy.test;
  Json classes = Json::array();
  if (!w.class_v.empty()) classes = Json{w.class_v, w.class_w};
  return Json{
      {"input", c.input},
      {"schema", schema},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"threads", c.threads},
      {"preprocess",
       Json{{"deduplicate", p.deduplicate},
            {"test_fraction", p.test_fraction},
            {"correlation_threshold", p.correlation_threshold},
            {"robust_scaler", p.robust_scaler},
            {"outlier_k", p.outlier_k},
            {"engineered", engineered},
            {"rfe",
             Json{{"enabled", p.rfe_enabled},
                  {"keep_threshold", p.rfe.keep_threshold},
                  {"step", p.rfe.step},
                  {"n_trees", p.rfe_forest.n_trees},
                  {"max_depth", p.rfe_forest.max_depth},
                  {"min_leaf", p.rfe_forest.min_leaf}}},
            {"selection_order", to_string(p.selection_order)},
            {"features", p.features}}},
      {"cv", Json{{"k", c.cv.k}, {"models", models}}},
      {"density",
       Json{{"bandwidth", to_string(c.density.bandwidth.policy)},
            {"cv_candidates", c.density.bandwidth.cv.n_candidates},
            {"cv_folds", c.density.bandwidth.cv.folds},
            {"grid_size", c.density.grid_size},
            {"features", c.density.features}}},
      {"wy",
       Json{{"classes", classes},
            {"permutations", w.permutations},
            {"alpha", w.alpha},
            {"bandwidth", to_string(w.policy)},
            {"bandwidth_mode", to_string(w.bandwidth_mode)},
            {"grid_size", w.grid_size},
            {"cv_candidates", w.cv_candidates},
            {"cv_folds", w.cv_folds},
            {"features", c.wy.features}}},
  };
}

}  // namespace uavids
