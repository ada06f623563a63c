#include "uavids/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "uavids/parallel.hpp"
#include "uavids/random.hpp"

namespace uavids {

std::vector<std::size_t> FoldAssignment::test_rows(int f) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold.size(); ++i)
    if (fold[i] == f) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldAssignment::train_rows(int f) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold.size(); ++i)
    if (fold[i] != f) out.push_back(i);
  return out;
}

FoldAssignment stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed,
                                const LabelVocabulary* vocabulary) {
  if (k < 2) throw ConfigError("k-fold cross-validation needs k >= 2");
  int n_classes = 0;
  for (int y : labels) n_classes = std::max(n_classes, y + 1);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(n_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);

  FoldAssignment out{k, std::vector<int>(labels.size(), -1)};
  std::size_t cursor = 0;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& rows = by_class[c];
    if (rows.empty()) continue;
    if (rows.size() < static_cast<std::size_t>(k)) {
      const std::string name = vocabulary != nullptr ? vocabulary->name(static_cast<int>(c)) : std::to_string(c);
      throw DataError("class " + name + " has " + std::to_string(rows.size()) + " rows, fewer than k = " +
                      std::to_string(k));
    }
    Rng rng(derive_seed(seed, {c}));
    shuffle(std::span<std::size_t>(rows), rng);
    for (auto r : rows) out.fold[r] = static_cast<int>(cursor++ % static_cast<std::size_t>(k));
  }
  return out;
}

ConfusionMatrix confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred, int n_classes) {
  if (y_true.size() != y_pred.size()) throw DataError("confusion_matrix: label vectors differ in length");
  ConfusionMatrix cm{Eigen::MatrixXi::Zero(n_classes, n_classes)};
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int t = y_true[i], p = y_pred[i];
    if (t < 0 || t >= n_classes || p < 0 || p >= n_classes)
      throw DataError("confusion_matrix: label outside [0, " + std::to_string(n_classes) + ")");
    ++cm.counts(t, p);
  }
  return cm;
}

ClassificationScores prf_macro(const ConfusionMatrix& cm) {
  const int K = cm.n_classes();
  if (K == 0) throw DataError("prf_macro: empty confusion matrix");
  ClassificationScores s;
  s.per_class_precision.resize(K);
  s.per_class_recall.resize(K);
  s.per_class_f1.resize(K);
  auto ratio = [&](double num, double den) {
    if (den == 0.0) {
      ++s.zero_divisions;
      return 0.0;
    }
    return num / den;
  };
  for (int c = 0; c < K; ++c) {
    const double tp = cm.counts(c, c);
    const double predicted = cm.counts.col(c).sum();
    const double actual = cm.counts.row(c).sum();
    s.per_class_precision[c] = ratio(tp, predicted);
    s.per_class_recall[c] = ratio(tp, actual);
    const double pr = s.per_class_precision[c] + s.per_class_recall[c];
    s.per_class_f1[c] = ratio(2.0 * s.per_class_precision[c] * s.per_class_recall[c], pr);
  }
  s.precision = s.per_class_precision.mean();
  s.recall = s.per_class_recall.mean();
  s.f1 = s.per_class_f1.mean();
  return s;
}

double accuracy(const ConfusionMatrix& cm) {
  const long total = cm.total();
  return total == 0 ? 0.0 : static_cast<double>(cm.counts.trace()) / static_cast<double>(total);
}

double binary_auc(std::span<const double> scores, std::span<const char> positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (positive[order[t]]) {
        rank_sum += midrank;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::numeric_limits<double>::quiet_NaN();
  const double u = rank_sum - static_cast<double>(n_pos) * static_cast<double>(n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

AucResult roc_auc_ovr_macro(std::span<const int> y_true, const Eigen::MatrixXd& proba, Warnings* warnings) {
  if (static_cast<std::size_t>(proba.rows()) != y_true.size()) throw DataError("roc_auc: row count mismatch");
  const auto K = proba.cols();
  AucResult result;
  result.per_class = Eigen::VectorXd::Constant(K, std::numeric_limits<double>::quiet_NaN());
  std::vector<char> positive(y_true.size());
  double sum = 0.0;
  int used = 0;
  for (Eigen::Index c = 0; c < K; ++c) {
    for (std::size_t i = 0; i < y_true.size(); ++i) positive[i] = y_true[i] == c;
    const Eigen::VectorXd col = proba.col(c);
    const double auc = binary_auc(std::span<const double>(col.data(), y_true.size()), positive);
    if (std::isnan(auc)) {
      result.excluded.push_back(static_cast<int>(c));
      warn(warnings, "class " + std::to_string(c) + " lacks positives or negatives; excluded from macro AUC");
      continue;
    }
    result.per_class[c] = auc;
    sum += auc;
    ++used;
  }
  result.macro = used > 0 ? sum / used : std::numeric_limits<double>::quiet_NaN();
  return result;
}

std::string_view to_string(Metric metric) {
  switch (metric) {
    case Metric::precision: return "precision";
    case Metric::recall: return "recall";
    case Metric::f1: return "f1";
    case Metric::roc_auc: return "roc_auc";
  }
  return "?";
}

double FoldMetrics::get(Metric m) const {
  switch (m) {
    case Metric::precision: return precision;
    case Metric::recall: return recall;
    case Metric::f1: return f1;
    case Metric::roc_auc: return roc_auc;
  }
  return 0.0;
}

FoldMetrics evaluate_predictions(std::span<const int> y_true, const Eigen::MatrixXd& proba, int n_classes,
                                 int* zero_divisions, Warnings* warnings) {
  const auto cm = confusion_matrix(y_true, argmax_rows(proba), n_classes);
  const auto s = prf_macro(cm);
  if (zero_divisions != nullptr) *zero_divisions += s.zero_divisions;
  FoldMetrics m;
  m.precision = s.precision;
  m.recall = s.recall;
  m.f1 = s.f1;
  m.accuracy = accuracy(cm);
  m.roc_auc = roc_auc_ovr_macro(y_true, proba, warnings).macro;
  return m;
}

MetricSummary summarize(std::span<const FoldMetrics> folds, Metric metric) {
  MetricSummary s;
  if (folds.empty()) return s;
  s.min = std::numeric_limits<double>::infinity();
  s.max = -std::numeric_limits<double>::infinity();
  for (const auto& f : folds) {
    const double v = f.get(metric);
    s.mean += v;
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
  }
  s.mean /= static_cast<double>(folds.size());
  s.range = s.max - s.min;
  s.stable = s.range <= kStabilityRange;
  return s;
}

CvReport cross_validate(const ModelSpec& spec, const Eigen::MatrixXd& X, std::span<const int> y, int n_classes,
                        int k, std::uint64_t seed, std::size_t threads) {
  const auto folds = stratified_kfold(y, k, seed);
  CvReport report;
  report.k = k;
  report.train.resize(static_cast<std::size_t>(k));
  report.test.resize(static_cast<std::size_t>(k));
  std::vector<std::vector<int>> predictions(static_cast<std::size_t>(k));
  std::vector<std::vector<std::size_t>> test_rows(static_cast<std::size_t>(k));
  std::vector<int> zero_div(static_cast<std::size_t>(k), 0);
  std::vector<Warnings> fold_warnings(static_cast<std::size_t>(k));

  auto take_rows = [&](const std::vector<std::size_t>& rows, Eigen::MatrixXd& Xs, std::vector<int>& ys) {
    Xs.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
    ys.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      Xs.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
      ys[i] = y[rows[i]];
    }
  };

  const std::size_t outer = std::min<std::size_t>(resolve_threads(threads), static_cast<std::size_t>(k));
  const std::size_t inner = outer > 1 ? 1 : threads;
  parallel_for(static_cast<std::size_t>(k), outer, [&](std::size_t f) {
    const auto train_rows = folds.train_rows(static_cast<int>(f));
    test_rows[f] = folds.test_rows(static_cast<int>(f));
    Eigen::MatrixXd X_train, X_test;
    std::vector<int> y_train, y_test;
    take_rows(train_rows, X_train, y_train);
    take_rows(test_rows[f], X_test, y_test);
    Model model;
    try {
      model = fit_model(spec, X_train, y_train, n_classes, inner);
    } catch (const ConfigError& e) {
      throw ConfigError("fold " + std::to_string(f) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("fold " + std::to_string(f) + ": " + e.what());
    } catch (const std::exception& e) {
      throw std::runtime_error("fold " + std::to_string(f) + ": " + e.what());
    }
    report.train[f] = evaluate_predictions(y_train, predict_proba(model, X_train), n_classes, &zero_div[f], nullptr);
    const Eigen::MatrixXd proba = predict_proba(model, X_test);
    report.test[f] = evaluate_predictions(y_test, proba, n_classes, &zero_div[f], &fold_warnings[f]);
    predictions[f] = argmax_rows(proba);
  });

  report.test_confusion.counts = Eigen::MatrixXi::Zero(n_classes, n_classes);
  for (std::size_t f = 0; f < static_cast<std::size_t>(k); ++f) {
    for (std::size_t i = 0; i < test_rows[f].size(); ++i) ++report.test_confusion.counts(y[test_rows[f][i]], predictions[f][i]);
    report.zero_divisions += zero_div[f];
    for (auto& w : fold_warnings[f]) report.warnings.push_back("fold " + std::to_string(f) + ": " + w);
  }
  for (std::size_t m = 0; m < kAllMetrics.size(); ++m) {
    report.train_summary[m] = summarize(report.train, kAllMetrics[m]);
    report.test_summary[m] = summarize(report.test, kAllMetrics[m]);
    report.stable = report.stable && report.test_summary[m].stable;
  }
  return report;
}

std::size_t ParamGrid::size() const {
  auto axis = [](std::size_t n) { return n == 0 ? std::size_t{1} : n; };
  return axis(max_depth.size()) * axis(n_trees.size()) * axis(rounds.size()) * axis(learning_rate.size()) *
         axis(min_leaf.size());
}

std::vector<ModelSpec> expand_grid(const ModelSpec& base, const ParamGrid& grid) {
  std::vector<ModelSpec> cells{base};
  auto expand = [&cells](const auto& values, auto apply) {
    if (values.empty()) return;
    std::vector<ModelSpec> next;
    for (const auto& cell : cells)
      for (const auto& v : values) {
        ModelSpec s = cell;
        apply(s, v);
        next.push_back(std::move(s));
      }
    cells = std::move(next);
  };
  expand(grid.max_depth, [](ModelSpec& s, int v) {
    s.tree.max_depth = v;
    s.forest.max_depth = v;
    s.gbdt.max_depth = v;
  });
  expand(grid.n_trees, [](ModelSpec& s, int v) { s.forest.n_trees = v; });
  expand(grid.rounds, [](ModelSpec& s, int v) { s.gbdt.rounds = v; });
  expand(grid.learning_rate, [](ModelSpec& s, double v) { s.gbdt.learning_rate = v; });
  expand(grid.min_leaf, [](ModelSpec& s, double v) {
    s.tree.min_leaf = v;
    s.forest.min_leaf = v;
    s.gbdt.min_leaf = v;
  });
  return cells;
}

namespace {

int ensemble_size(const ModelSpec& s) {
  switch (s.family) {
    case ModelFamily::tree: return 1;
    case ModelFamily::forest: return s.forest.n_trees;
    case ModelFamily::gbdt: return s.gbdt.rounds;
  }
  return 0;
}

int depth_of(const ModelSpec& s) {
  switch (s.family) {
    case ModelFamily::tree: return s.tree.max_depth;
    case ModelFamily::forest: return s.forest.max_depth;
    case ModelFamily::gbdt: return s.gbdt.max_depth;
  }
  return 0;
}

}  // namespace

GridSearchResult grid_search(const ModelSpec& base, const ParamGrid& grid, const Eigen::MatrixXd& X,
                             std::span<const int> y, int n_classes, int k, std::uint64_t seed, std::size_t threads) {
  GridSearchResult result;
  for (auto& spec : expand_grid(base, grid)) {
    auto report = cross_validate(spec, X, y, n_classes, k, seed, threads);
    result.cells.push_back(GridCell{std::move(spec), std::move(report)});
  }
  constexpr double kTie = 1e-12;
  for (std::size_t i = 1; i < result.cells.size(); ++i) {
    const auto& cand = result.cells[i];
    const auto& best = result.cells[result.best];
    const double a = cand.report.test_metric(Metric::f1).mean;
    const double b = best.report.test_metric(Metric::f1).mean;
    if (a > b + kTie) {
      result.best = i;
    } else if (std::abs(a - b) <= kTie) {
      const int sa = ensemble_size(cand.spec), sb = ensemble_size(best.spec);
      if (sa < sb || (sa == sb && depth_of(cand.spec) < depth_of(best.spec))) result.best = i;
    }
  }
  return result;
}

}  // namespace uavids
