#include "uavids/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <unistd.h>

#include "uavids/parallel.hpp"
#include "uavids/random.hpp"

namespace uavids {
namespace {

// Child-seed tags under the run seed.
constexpr std::uint64_t kSplitSeed = 1;
constexpr std::uint64_t kRfeSeed = 2;
constexpr std::uint64_t kFoldSeed = 3;
constexpr std::uint64_t kModelSeed = 4;
constexpr std::uint64_t kImportanceSeed = 5;
constexpr std::uint64_t kDensitySeed = 6;

template <typename F>
Json staged(std::string_view stage, F&& body) {
  const std::string prefix = std::string(stage) + ": ";
  try {
    return body();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const DataError& e) {
    throw DataError(prefix + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(prefix + e.what());
  }
}

Json fragment_header(std::string_view stage) {
  return Json{{"stage", stage}, {"schema_version", kReportSchemaVersion}};
}

Json vector_json(const Eigen::VectorXd& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

Json matrix_json(const Eigen::MatrixXi& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Json summary_json(const std::array<MetricSummary, 4>& summary) {
  Json out = Json::object();
  for (const Metric m : kAllMetrics) {
    const auto& s = summary[static_cast<std::size_t>(m)];
    out[std::string(to_string(m))] =
        Json{{"mean", s.mean}, {"min", s.min}, {"max", s.max}, {"range", s.range}, {"stable", s.stable}};
  }
  return out;
}

Json fold_metrics_json(const FoldMetrics& f) {
  return Json{{"precision", f.precision}, {"recall", f.recall}, {"f1", f.f1}, {"roc_auc", f.roc_auc}, {"accuracy", f.accuracy}};
}

Json spec_params_json(const ModelSpec& s) {
  switch (s.family) {
    case ModelFamily::tree: return Json{{"max_depth", s.tree.max_depth}, {"min_leaf", s.tree.min_leaf}};
    case ModelFamily::forest:
      return Json{{"n_trees", s.forest.n_trees}, {"max_depth", s.forest.max_depth}, {"min_leaf", s.forest.min_leaf}};
    case ModelFamily::gbdt:
      return Json{{"rounds", s.gbdt.rounds},
                  {"learning_rate", s.gbdt.learning_rate},
                  {"max_depth", s.gbdt.max_depth},
                  {"min_leaf", s.gbdt.min_leaf}};
  }
  return Json::object();
}

Json warnings_json(const Warnings& w) { return Json(w); }

std::vector<std::string> names_of(const LabelVocabulary& vocabulary) { return vocabulary.names(); }

/// Rebuilds `table` with every column passed through `transform(name, values)`.
template <typename F>
ColumnTable map_columns(const ColumnTable& table, F&& transform) {
  ColumnTable out(table.vocabulary(), table.labels());
  for (const auto& name : table.names()) out.add_numeric(name, transform(name, table.numeric(name)));
  return out;
}

void write_processed(const std::filesystem::path& path, const ColumnTable& table, std::span<const std::string> features,
                     const std::string& label) {
  CsvRow header(features.begin(), features.end());
  header.push_back(label);
  std::vector<CsvRow> rows(table.rows());
  std::vector<const Eigen::VectorXd*> columns;
  for (const auto& f : features) columns.push_back(&table.numeric(f));
  for (std::size_t r = 0; r < table.rows(); ++r) {
    auto& row = rows[r];
    for (const auto* c : columns) row.push_back(format_double((*c)[static_cast<Eigen::Index>(r)]));
    row.push_back(table.vocabulary().name(table.labels()[r]));
  }
  write_csv(path, header, rows);
}

void write_correlation(const std::filesystem::path& path, const CorrelationMatrix& m) {
  CsvRow header{"feature"};
  header.insert(header.end(), m.names.begin(), m.names.end());
  std::vector<CsvRow> rows;
  for (std::size_t i = 0; i < m.names.size(); ++i) {
    CsvRow row{m.names[i]};
    for (std::size_t j = 0; j < m.names.size(); ++j)
      row.push_back(format_double(m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
    rows.push_back(std::move(row));
  }
  write_csv(path, header, rows);
}

void write_confusion(const std::filesystem::path& path, const ConfusionMatrix& cm, const LabelVocabulary& vocabulary) {
  CsvRow header{"true \\ predicted"};
  for (const auto& n : vocabulary.names()) header.push_back(n);
  std::vector<CsvRow> rows;
  for (Eigen::Index r = 0; r < cm.counts.rows(); ++r) {
    CsvRow row{vocabulary.name(static_cast<int>(r))};
    for (Eigen::Index c = 0; c < cm.counts.cols(); ++c) row.push_back(std::to_string(cm.counts(r, c)));
    rows.push_back(std::move(row));
  }
  write_csv(path, header, rows);
}

std::string iso_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buffer[32];
  std::strftime(buffer, sizeof buffer, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buffer;
}

Json assemble_unlocked(const RunConfig& config, std::string_view last_stage) {
  const OutputPaths out{config.output_dir};
  std::map<std::string, Json> fragments;
  for (const auto stage : kStages) {
    const auto path = out.fragment(stage);
    if (std::filesystem::exists(path)) fragments.emplace(std::string(stage), read_json(path));
  }
  const Json envelope = make_envelope(config, fragments);
  write_json(out.report(), envelope);
  write_json(out.metadata(), Json{{"generated_at", iso_timestamp()},
                                  {"last_stage", last_stage},
                                  {"threads", resolve_threads(config.threads)}});
  return envelope;
}

Json store_fragment(const RunConfig& config, std::string_view stage, const Json& fragment) {
  validate_fragment(stage, fragment);
  write_json(OutputPaths{config.output_dir}.fragment(stage), fragment);
  assemble_unlocked(config, stage);
  return fragment;
}

std::vector<std::string> stage_features(const std::vector<std::string>& requested, const PreprocessArtifacts& arts) {
  if (requested.empty()) return arts.features;
  for (const auto& f : requested)
    if (!arts.train.has(f)) throw ConfigError("feature not among the processed columns: " + f);
  return requested;
}

// ---------------------------------------------------------------------------

Json preprocess_body(const RunConfig& config) {
  const auto& pc = config.preprocess;
  const std::size_t threads = resolve_threads(config.threads);
  const OutputPaths out{config.output_dir};
  Json fragment = fragment_header("preprocess");
  Warnings warnings;

  LoadResult loaded = load_csv(config.input, config.schema);
  for (auto& w : loaded.warnings) warnings.push_back("ingest: " + w);
  ColumnTable table = std::move(loaded.table);
  const std::size_t before_dedup = table.rows();
  if (pc.deduplicate) table = dedup(table);
  fragment["ingestion"] = Json{{"rows_read", loaded.rows_read},
                               {"rows_dropped", loaded.rows_dropped},
                               {"duplicates_removed", before_dedup - table.rows()},
                               {"rows_after_dedup", table.rows()}};
  fragment["vocabulary"] = names_of(table.vocabulary());

  auto split = stratified_split(table, pc.test_fraction, derive_seed(config.seed, {kSplitSeed}));
  fragment["split"] = Json{{"test_fraction", pc.test_fraction}, {"train_rows", split.train.rows()}, {"test_rows", split.test.rows()}};
  Json counts = Json::object();
  for (const auto* part : {&split.train, &split.test}) {
    Json c = Json::object();
    const auto cc = part->class_counts();
    for (std::size_t k = 0; k < cc.size(); ++k) c[table.vocabulary().name(static_cast<int>(k))] = cc[k];
    counts[part == &split.train ? "train" : "test"] = c;
  }
  fragment["split"]["class_counts"] = counts;

  const EncoderState encoders = fit_encoders(split.train, config.schema);
  for (const auto& w : encoders.warnings) warnings.push_back("encode: " + w);
  ColumnTable train = apply_encoders(split.train, encoders);
  ColumnTable test = apply_encoders(split.test, encoders);
  Json frequency = Json::object();
  for (const auto& f : encoders.frequency) frequency[f.column] = Json(f.frequency);
  Json indicator = Json::array();
  for (const auto& c : encoders.indicator)
    indicator.push_back(Json{{"column", c.column}, {"encoding", to_string(c.encoding)}, {"categories", c.categories}});
  fragment["encoders"] = Json{{"frequency", frequency}, {"indicator", indicator}, {"dummy_columns", encoders.dummy_columns()}};

  train = engineer_features(train, pc.engineered);
  test = engineer_features(test, pc.engineered);
  Json engineered = Json::array();
  for (const auto& f : pc.engineered) engineered.push_back(f.output_name());
  fragment["engineered"] = engineered;

  Json outliers = Json::array();
  for (const auto& name : train.names()) {
    const auto& x = train.numeric(name);
    outliers.push_back(Json{{"feature", name},
                            {"count", iqr_outlier_count(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), pc.outlier_k)}});
  }
  fragment["outliers"] = Json{{"k", pc.outlier_k}, {"train", outliers}};

  Json scaler = Json::array();
  if (pc.robust_scaler) {
    std::map<std::string, RobustScalerState> states;
    for (const auto& name : train.names()) {
      states[name] = robust_fit(train.numeric(name));
      scaler.push_back(Json{{"feature", name}, {"median", states[name].median}, {"iqr", states[name].iqr}});
    }
    auto apply = [&](const std::string& name, const Eigen::VectorXd& x) -> Eigen::VectorXd {
      return robust_transform(x, states.at(name));
    };
    train = map_columns(train, apply);
    test = map_columns(test, apply);
  }
  fragment["scaler"] = Json{{"enabled", pc.robust_scaler}, {"columns", scaler}};

  // Feature selection.
  std::vector<std::string> features = train.names();
  Json selection{{"order", to_string(pc.selection_order)}, {"candidates", features}};
  Json dropped = Json::array();
  Json rfe_json = nullptr;
  Json corr_json = nullptr;
  auto run_rfe = [&] {
    if (!pc.rfe_enabled || features.size() < 2) return;
    ModelSpec spec;
    spec.name = "rfe_forest";
    spec.family = ModelFamily::forest;
    spec.forest = pc.rfe_forest;
    spec.forest.seed = derive_seed(config.seed, {kRfeSeed});
    const Eigen::MatrixXd X = train.matrix(features);
    const RfeResult r = rfe(X, features, train.labels(), train.n_classes(), spec, pc.rfe, threads);
    Json trace = Json::array();
    for (const auto& round : r.trace)
      trace.push_back(Json{{"features", round.features}, {"importance", vector_json(round.importance)}, {"eliminated", round.eliminated}});
    Json final_importance = Json::object();
    for (std::size_t i = 0; i < r.final_features.size(); ++i)
      final_importance[r.final_features[i]] = r.final_importance[static_cast<Eigen::Index>(i)];
    for (const auto& f : features)
      if (std::find(r.selected.begin(), r.selected.end(), f) == r.selected.end())
        dropped.push_back(Json{{"feature", f}, {"stage", "rfe"}, {"reason", "importance below " + format_double(pc.rfe.keep_threshold)}});
    rfe_json = Json{{"keep_threshold", pc.rfe.keep_threshold}, {"step", pc.rfe.step}, {"trace", trace},
                    {"final_importance", final_importance}, {"selected", r.selected}};
    std::vector<CsvRow> rows;
    for (std::size_t i = 0; i < r.final_features.size(); ++i)
      rows.push_back({r.final_features[i], format_double(r.final_importance[static_cast<Eigen::Index>(i)])});
    write_csv(out.plotdata("rfe_importance.csv"), {"Feature", "Importance"}, rows);
    if (r.selected.empty()) throw DataError("recursive feature elimination kept no feature");
    features = r.selected;
  };
  auto run_correlation = [&] {
    if (features.size() < 2) return;
    const auto r = drop_correlated(train, features, pc.correlation_threshold, threads, &warnings);
    Json d = Json::array();
    for (const auto& x : r.dropped) {
      const Json entry{{"feature", x.name}, {"partner", x.partner}, {"method", to_string(x.method)},
                       {"coefficient", x.coefficient}, {"reason", x.reason}};
      d.push_back(entry);
      Json tagged = entry;
      tagged["stage"] = "correlation";
      dropped.push_back(tagged);
    }
    corr_json = Json{{"threshold", pc.correlation_threshold}, {"retained", r.retained}, {"dropped", d}};
    features = r.retained;
  };
  if (!pc.features.empty()) {
    for (const auto& f : pc.features)
      if (!train.has(f)) throw ConfigError("preprocess.features names an unknown column: " + f);
    features = pc.features;
    selection["explicit"] = true;
  } else if (pc.selection_order == SelectionOrder::rfe_then_correlation) {
    run_rfe();
    run_correlation();
  } else {
    run_correlation();
    run_rfe();
  }
  selection["rfe"] = rfe_json;
  selection["correlation"] = corr_json;
  selection["dropped"] = dropped;
  selection["features"] = features;
  fragment["selection"] = selection;

  if (features.size() >= 2) {
    write_correlation(out.plotdata("correlation_pearson.csv"),
                      correlation_matrix(train, features, CorrelationMethod::pearson, threads, &warnings));
    write_correlation(out.plotdata("correlation_kendall.csv"),
                      correlation_matrix(train, features, CorrelationMethod::kendall, threads, &warnings));
  }
  std::vector<CsvRow> selected_rows;
  for (const auto& f : features) selected_rows.push_back({f});
  write_csv(out.table("selected_features.csv"), {"Feature"}, selected_rows);
  std::vector<CsvRow> dropped_rows;
  for (const auto& d : dropped) dropped_rows.push_back({d["feature"].get<std::string>(), d["stage"].get<std::string>(), d["reason"].get<std::string>()});
  write_csv(out.table("dropped_features.csv"), {"Feature", "Stage", "Reason"}, dropped_rows);

  const std::string label = label_column(config.schema).name;
  write_processed(out.artifact("train.csv"), train, features, label);
  write_processed(out.artifact("test.csv"), test, features, label);
  write_json(out.artifact("preprocess_state.json"),
             Json{{"label", label},
                  {"vocabulary", names_of(table.vocabulary())},
                  {"features", features},
                  {"encoders", fragment["encoders"]},
                  {"engineered", config_to_json(config)["preprocess"]["engineered"]},
                  {"scaler", fragment["scaler"]}});
  fragment["warnings"] = warnings_json(warnings);
  return fragment;
}

Json cv_body(const RunConfig& config) {
  const std::size_t threads = resolve_threads(config.threads);
  const OutputPaths out{config.output_dir};
  const PreprocessArtifacts arts = load_artifacts(config);
  const Eigen::MatrixXd X = arts.train.matrix(arts.features);
  const Eigen::MatrixXd X_test = arts.test.matrix(arts.features);
  const auto& y = arts.train.labels();
  const auto& y_test = arts.test.labels();
  const int n_classes = arts.train.n_classes();
  const auto& vocabulary = arts.train.vocabulary();
  if (config.cv.models.empty()) throw ConfigError("cv.models is empty");

  Json fragment = fragment_header("cv");
  fragment["k"] = config.cv.k;
  fragment["averaging"] = "macro";
  fragment["probabilities"] = "uncalibrated";
  Warnings warnings;
  Json models = Json::array();
  std::vector<CsvRow> table_rows;
  std::size_t best_model = 0;
  double best_f1 = -1.0;
  std::vector<ModelSpec> best_specs;

  for (std::size_t i = 0; i < config.cv.models.size(); ++i) {
    ModelSpec base = config.cv.models[i].base;
    const std::uint64_t model_seed = derive_seed(config.seed, {kModelSeed, i});
    base.tree.seed = base.forest.seed = base.gbdt.seed = model_seed;
    const GridSearchResult search =
        grid_search(base, config.cv.models[i].grid, X, y, n_classes, config.cv.k, derive_seed(config.seed, {kFoldSeed}), threads);
    const GridCell& best = search.cells[search.best];
    Json grid = Json::array();
    for (const auto& cell : search.cells)
      grid.push_back(Json{{"params", spec_params_json(cell.spec)},
                          {"test_f1_mean", cell.report.test_metric(Metric::f1).mean},
                          {"stable", cell.report.stable}});
    Json train_folds = Json::array(), test_folds = Json::array();
    for (const auto& f : best.report.train) train_folds.push_back(fold_metrics_json(f));
    for (const auto& f : best.report.test) test_folds.push_back(fold_metrics_json(f));
    for (const auto& w : best.report.warnings) warnings.push_back(base.name + ": " + w);
    models.push_back(Json{{"name", base.name},
                          {"family", to_string(base.family)},
                          {"grid", grid},
                          {"best_params", spec_params_json(best.spec)},
                          {"train", summary_json(best.report.train_summary)},
                          {"test", summary_json(best.report.test_summary)},
                          {"stable", best.report.stable},
                          {"zero_divisions", best.report.zero_divisions},
                          {"cv_test_confusion", matrix_json(best.report.test_confusion.counts)},
                          {"folds", Json{{"train", train_folds}, {"test", test_folds}}}});
    auto pair = [&](Metric m) {
      const auto idx = static_cast<std::size_t>(m);
      return format_fixed(100.0 * best.report.train_summary[idx].mean, 2) + "/" +
             format_fixed(100.0 * best.report.test_summary[idx].mean, 2);
    };
    table_rows.push_back({base.name, pair(Metric::precision), pair(Metric::recall), pair(Metric::f1),
                          pair(Metric::roc_auc), format_fixed(100.0 * best.report.test_metric(Metric::f1).range, 2),
                          best.report.stable ? "yes" : "no"});
    const double f1 = best.report.test_metric(Metric::f1).mean;
    if (f1 > best_f1 + 1e-12) {
      best_f1 = f1;
      best_model = i;
    }
    best_specs.push_back(best.spec);
  }
  write_csv(out.table("cv_results.csv"),
            {"Model", "Precision (Train/Test)", "Recall (Train/Test)", "F1 (Train/Test)", "ROC-AUC (Train/Test)",
             "Test F1 Range", "Stable"},
            table_rows);
  fragment["models"] = models;

  const ModelSpec& spec = best_specs[best_model];
  fragment["best_model"] = spec.name;
  const Model model = fit_model(spec, X, y, n_classes, threads);
  std::filesystem::create_directories(out.root / "models");
  save_model(model, (out.root / "models" / (file_stem(spec.name) + ".json")).string());
  const Eigen::MatrixXd proba_train = predict_proba(model, X);
  const Eigen::MatrixXd proba_test = predict_proba(model, X_test);
  const auto cm_train = confusion_matrix(y, argmax_rows(proba_train), n_classes);
  const auto cm_test = confusion_matrix(y_test, argmax_rows(proba_test), n_classes);
  write_confusion(out.table("confusion_" + file_stem(spec.name) + "_train.csv"), cm_train, vocabulary);
  write_confusion(out.table("confusion_" + file_stem(spec.name) + "_test.csv"), cm_test, vocabulary);
  Warnings holdout_warnings;
  fragment["holdout"] = Json{
      {"classes", names_of(vocabulary)},
      {"train_confusion", matrix_json(cm_train.counts)},
      {"test_confusion", matrix_json(cm_test.counts)},
      {"train_metrics", fold_metrics_json(evaluate_predictions(y, proba_train, n_classes, nullptr, &holdout_warnings))},
      {"test_metrics", fold_metrics_json(evaluate_predictions(y_test, proba_test, n_classes, nullptr, &holdout_warnings))}};
  for (auto& w : holdout_warnings) warnings.push_back("holdout: " + w);

  const auto importance = permutation_importance(model, X_test, y_test, ImportanceMetric::macro_f1,
                                                 derive_seed(config.seed, {kImportanceSeed}), true, 5, threads);
  CsvRow header{"Feature", "Macro F1 Drop"};
  for (const auto& n : vocabulary.names()) header.push_back(n + " F1 Drop");
  std::vector<CsvRow> rows;
  Json imp = Json::array();
  for (std::size_t j = 0; j < arts.features.size(); ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    CsvRow row{arts.features[j], format_double(importance.mean_drop[col])};
    Json per_class = Json::object();
    for (Eigen::Index c = 0; c < importance.per_class_drop.rows(); ++c) {
      row.push_back(format_double(importance.per_class_drop(c, col)));
      per_class[vocabulary.name(static_cast<int>(c))] = importance.per_class_drop(c, col);
    }
    rows.push_back(std::move(row));
    imp.push_back(Json{{"feature", arts.features[j]}, {"macro_f1_drop", importance.mean_drop[col]}, {"per_class", per_class}});
  }
  write_csv(out.table("permutation_importance.csv"), header, rows);
  fragment["permutation_importance"] = imp;
  fragment["warnings"] = warnings_json(warnings);
  return fragment;
}

Json density_body(const RunConfig& config) {
  const OutputPaths out{config.output_dir};
  const PreprocessArtifacts arts = load_artifacts(config);
  const ColumnTable table = arts.combined();
  const auto features = stage_features(config.density.features, arts);
  Json fragment = fragment_header("density");
  fragment["bandwidth"] = to_string(config.density.bandwidth.policy);
  fragment["grid_size"] = config.density.grid_size;
  Warnings warnings;
  Json list = Json::array();
  std::vector<CsvRow> rows;
  for (std::size_t i = 0; i < features.size(); ++i) {
    BandwidthOptions options = config.density.bandwidth;
    options.cv.seed = derive_seed(config.seed, {kDensitySeed, i});
    const FeatureShape shape = shape_summary(table, features[i], options, config.density.grid_size, &warnings);
    CurveTable curve;
    curve.columns.push_back("x");
    curve.values.resize(shape.grid.size(), static_cast<Eigen::Index>(shape.classes.size() + 1));
    curve.values.col(0) = shape.grid.points;
    Json classes = Json::array();
    for (std::size_t c = 0; c < shape.classes.size(); ++c) {
      const auto& s = shape.classes[c];
      curve.columns.push_back(s.class_name);
      curve.values.col(static_cast<Eigen::Index>(c + 1)) = s.density;
      classes.push_back(Json{{"class", s.class_name}, {"n", s.n},           {"min", s.min},
                             {"q1", s.q1},            {"median", s.median}, {"q3", s.q3},
                             {"max", s.max},          {"outliers", s.outliers}, {"bandwidth", s.bandwidth}});
      rows.push_back({features[i], s.class_name, std::to_string(s.n), format_double(s.min), format_double(s.q1),
                      format_double(s.median), format_double(s.q3), format_double(s.max), std::to_string(s.outliers),
                      format_double(s.bandwidth)});
    }
    const std::string file = "kde_" + file_stem(features[i]) + ".csv";
    write_curve_csv(out.plotdata(file), curve);
    list.push_back(Json{{"feature", features[i]},
                        {"grid", Json{{"lo", shape.grid.lo()}, {"hi", shape.grid.hi()}, {"size", shape.grid.size()}}},
                        {"classes", classes},
                        {"curve_file", "plotdata/" + file}});
  }
  write_csv(out.table("shape_summary.csv"),
            {"Feature", "Class", "n", "Min", "Q1", "Median", "Q3", "Max", "Outliers", "Bandwidth"}, rows);
  fragment["features"] = list;
  fragment["warnings"] = warnings_json(warnings);
  return fragment;
}

Json wy_body(const RunConfig& config) {
  const OutputPaths out{config.output_dir};
  WyConfig cfg = config.wy.test;
  if (cfg.class_v.empty() || cfg.class_w.empty()) throw ConfigError("wy.classes must name two classes");
  cfg.seed = config.seed;
  cfg.threads = resolve_threads(config.threads);
  const PreprocessArtifacts arts = load_artifacts(config);
  const ColumnTable table = arts.combined();
  const auto features = stage_features(config.wy.features, arts);
  const PooledSample sample = PooledSample::from_table(table, features, cfg.class_v, cfg.class_w);
  const WyTestReport report = wy_maxT(sample, cfg);
  const WyDecision decision = decide(report, cfg.alpha);

  Json fragment = fragment_header("wy");
  fragment["classes"] = Json{cfg.class_v, cfg.class_w};
  fragment["permutations"] = cfg.permutations;
  fragment["alpha"] = cfg.alpha;
  fragment["seed"] = cfg.seed;
  fragment["bandwidth"] = to_string(cfg.policy);
  fragment["bandwidth_mode"] = to_string(cfg.bandwidth_mode);
  fragment["grid_size"] = cfg.grid_size;
  if (cfg.policy == BandwidthPolicy::cv)
    fragment["cv"] = Json{{"candidates", cfg.cv_candidates}, {"folds", cfg.cv_folds}};

  Json results = Json::array();
  std::vector<CsvRow> test_rows, overlap_rows;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& r = report.features[i];
    std::vector<double> v, w;
    for (std::size_t k = 0; k < sample.rows(); ++k)
      (sample.labels[k] == 0 ? v : w).push_back(sample.values[i][static_cast<Eigen::Index>(k)]);
    const KdeModel kv = make_kde(v, r.bandwidth_v);
    const KdeModel kw = make_kde(w, r.bandwidth_w);
    const EvalGrid grid = make_grid(v, w, r.bandwidth_v, r.bandwidth_w, cfg.grid_size);
    const DensityPair pair = to_mass_pair(kv, kw, grid, cfg.engine);
    const double ovl = std::clamp(overlap_coefficient(pair), 0.0, 1.0);
    Json intervals = Json::array();
    std::string interval_text;
    for (const auto& iv : overlap_intervals(pair)) {
      intervals.push_back(Json{iv.lo, iv.hi});
      interval_text += (interval_text.empty() ? "" : ";") + ("[" + format_fixed(iv.lo, 4) + "," + format_fixed(iv.hi, 4) + "]");
    }
    CurveTable curve;
    curve.columns = {"x", "density_" + cfg.class_v, "density_" + cfg.class_w, "mass_" + cfg.class_v, "mass_" + cfg.class_w};
    curve.values.resize(grid.size(), 5);
    curve.values.col(0) = grid.points;
    curve.values.col(1) = kde_on_grid(kv, grid, cfg.engine);
    curve.values.col(2) = kde_on_grid(kw, grid, cfg.engine);
    curve.values.col(3) = pair.p;
    curve.values.col(4) = pair.q;
    const std::string file = "wy_pair_" + file_stem(r.feature) + ".csv";
    write_curve_csv(out.plotdata(file), curve);

    results.push_back(Json{{"feature", r.feature},
                           {"js_distance", r.statistic},
                           {"p_value", r.p_value},
                           {"p_value_text", format_p_value(r.p_value)},
                           {"reject", static_cast<bool>(decision.reject[i])},
                           {"n_v", r.n_v},
                           {"n_w", r.n_w},
                           {"bandwidth_v", r.bandwidth_v},
                           {"bandwidth_w", r.bandwidth_w},
                           {"overlap_coefficient", ovl},
                           {"overlap_intervals", intervals},
                           {"pair_file", "plotdata/" + file}});
    test_rows.push_back({r.feature, format_fixed(r.statistic, 6), format_p_value(r.p_value)});
    overlap_rows.push_back({r.feature, format_fixed(ovl, 6), interval_text});
  }
  write_csv(out.table("wy_test.csv"), {"Feature", "Jensen-Shannon Distance", "p-value"}, test_rows);
  write_csv(out.table("wy_overlap.csv"), {"Feature", "Overlap Coefficient", "Overlap Intervals"}, overlap_rows);
  std::vector<CsvRow> trace_rows;
  for (std::size_t b = 0; b < report.max_trace.size(); ++b)
    trace_rows.push_back({std::to_string(b + 1), format_double(report.max_trace[b])});
  write_csv(out.plotdata("wy_max_trace.csv"), {"b", "max_statistic"}, trace_rows);

  fragment["results"] = results;
  fragment["family_reject"] = decision.family_reject;
  fragment["max_trace_file"] = "plotdata/wy_max_trace.csv";
  fragment["warnings"] = warnings_json(report.warnings);
  return fragment;
}

}  // namespace

OutputLock::OutputLock(const std::filesystem::path& dir) : path_(dir / ".uavids.lock") {
  std::filesystem::create_directories(dir);
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (f == nullptr)
    throw std::runtime_error("output directory is locked by another run (remove " + path_.string() + " if stale)");
  std::fprintf(f, "%ld\n", static_cast<long>(::getpid()));
  std::fclose(f);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

ColumnTable PreprocessArtifacts::combined() const {
  std::vector<int> labels = train.labels();
  labels.insert(labels.end(), test.labels().begin(), test.labels().end());
  ColumnTable out(train.vocabulary(), labels);
  for (const auto& name : train.names()) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(labels.size()));
    v << train.numeric(name), test.numeric(name);
    out.add_numeric(name, std::move(v));
  }
  return out;
}

PreprocessArtifacts load_artifacts(const RunConfig& config) {
  const OutputPaths out{config.output_dir};
  const auto state_path = out.artifact("preprocess_state.json");
  if (!std::filesystem::exists(state_path))
    throw DataError("preprocess artifacts not found in " + config.output_dir + "; run the preprocess stage first");
  const Json state = read_json(state_path);
  PreprocessArtifacts arts;
  try {
    arts.label = state.at("label").get<std::string>();
    arts.features = state.at("features").get<std::vector<std::string>>();
    const auto vocabulary = LabelVocabulary::from_names(state.at("vocabulary").get<std::vector<std::string>>());
    Schema schema;
    for (const auto& f : arts.features) schema.push_back({f, ColumnRole::numeric});
    schema.push_back({arts.label, ColumnRole::label});
    for (auto* part : {&arts.train, &arts.test}) {
      LoadResult r = load_csv(out.artifact(part == &arts.train ? "train.csv" : "test.csv").string(), schema, &vocabulary);
      if (r.rows_dropped > 0) throw DataError("processed artifact has unreadable rows");
      *part = r.table.select_columns(arts.features);
    }
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed preprocess state: ") + e.what());
  }
  return arts;
}

Json run_preprocess(const RunConfig& config) {
  return staged("preprocess", [&] {
    config.validate();
    OutputLock lock(config.output_dir);
    return store_fragment(config, "preprocess", preprocess_body(config));
  });
}

Json run_cv(const RunConfig& config) {
  return staged("cv", [&] {
    config.validate();
    OutputLock lock(config.output_dir);
    return store_fragment(config, "cv", cv_body(config));
  });
}

Json run_density(const RunConfig& config) {
  return staged("density", [&] {
    config.validate();
    OutputLock lock(config.output_dir);
    return store_fragment(config, "density", density_body(config));
  });
}

Json run_wy(const RunConfig& config) {
  return staged("wy", [&] {
    config.validate();
    OutputLock lock(config.output_dir);
    return store_fragment(config, "wy", wy_body(config));
  });
}

Json assemble_report(const RunConfig& config) {
  return staged("report", [&] {
    config.validate();
    OutputLock lock(config.output_dir);
    return assemble_unlocked(config, "report");
  });
}

}  // namespace uavids
