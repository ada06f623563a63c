#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "uavids/dataset.hpp"
#include "uavids/errors.hpp"
#include "uavids/trees.hpp"

namespace uavids {

/// Per-class fold index for every row.
struct FoldAssignment {
  int k = 0;
  std::vector<int> fold;

  std::vector<std::size_t> test_rows(int f) const;
  std::vector<std::size_t> train_rows(int f) const;
};

/// Seeded per-class shuffle, then round-robin over folds. The round-robin
/// position carries over between classes so total fold sizes stay balanced.
FoldAssignment stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed,
                                const LabelVocabulary* vocabulary = nullptr);

/// counts(t, p) = rows of true class t predicted as p.
struct ConfusionMatrix {
  Eigen::MatrixXi counts;

  int n_classes() const { return static_cast<int>(counts.rows()); }
  long total() const { return counts.cast<long>().sum(); }
};

ConfusionMatrix confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred, int n_classes);

struct ClassificationScores {
  double precision = 0.0;  // macro
  double recall = 0.0;
  double f1 = 0.0;
  Eigen::VectorXd per_class_precision;
  Eigen::VectorXd per_class_recall;
  Eigen::VectorXd per_class_f1;
  int zero_divisions = 0;  // 0/0 ratios reported as 0
};

ClassificationScores prf_macro(const ConfusionMatrix& cm);
double accuracy(const ConfusionMatrix& cm);

/// Mann-Whitney AUC with midranks for ties. NaN when either group is empty.
double binary_auc(std::span<const double> scores, std::span<const char> positive);

struct AucResult {
  double macro = 0.0;
  Eigen::VectorXd per_class;  // NaN for excluded classes
  std::vector<int> excluded;  // classes without both positives and negatives
};

AucResult roc_auc_ovr_macro(std::span<const int> y_true, const Eigen::MatrixXd& proba, Warnings* warnings = nullptr);

inline constexpr double kStabilityRange = 0.04;

enum class Metric { precision, recall, f1, roc_auc };
inline constexpr std::array<Metric, 4> kAllMetrics{Metric::precision, Metric::recall, Metric::f1, Metric::roc_auc};
std::string_view to_string(Metric metric);

struct FoldMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double roc_auc = 0.0;
  double accuracy = 0.0;

  double get(Metric m) const;
};

FoldMetrics evaluate_predictions(std::span<const int> y_true, const Eigen::MatrixXd& proba, int n_classes,
                                 int* zero_divisions = nullptr, Warnings* warnings = nullptr);

struct MetricSummary {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double range = 0.0;
  bool stable = true;  // range <= 0.04
};

MetricSummary summarize(std::span<const FoldMetrics> folds, Metric metric);

struct CvReport {
  int k = 0;
  std::vector<FoldMetrics> train;  // metrics on the k-1 training folds
  std::vector<FoldMetrics> test;   // metrics on the held-out fold
  std::array<MetricSummary, 4> train_summary;
  std::array<MetricSummary, 4> test_summary;
  bool stable = true;  // every held-out metric range <= 0.04
  ConfusionMatrix test_confusion;  // pooled over held-out folds
  int zero_divisions = 0;
  Warnings warnings;

  const MetricSummary& test_metric(Metric m) const { return test_summary[static_cast<std::size_t>(m)]; }
};

/// Fits on k-1 folds and scores both the training folds and the held-out
/// fold. Fit errors are rethrown with the fold id.
CvReport cross_validate(const ModelSpec& spec, const Eigen::MatrixXd& X, std::span<const int> y, int n_classes,
                        int k, std::uint64_t seed, std::size_t threads = 1);

/// Hyperparameter axes; an empty axis keeps the base spec's value.
struct ParamGrid {
  std::vector<int> max_depth;
  std::vector<int> n_trees;  // forest
  std::vector<int> rounds;   // gbdt
  std::vector<double> learning_rate;
  std::vector<double> min_leaf;

  std::size_t size() const;
};

std::vector<ModelSpec> expand_grid(const ModelSpec& base, const ParamGrid& grid);

struct GridCell {
  ModelSpec spec;
  CvReport report;
};

struct GridSearchResult {
  std::vector<GridCell> cells;
  std::size_t best = 0;
};

/// Exhaustive search; best = highest mean held-out macro F1, ties to fewer
/// trees/rounds, then lower depth.
GridSearchResult grid_search(const ModelSpec& base, const ParamGrid& grid, const Eigen::MatrixXd& X,
                             std::span<const int> y, int n_classes, int k, std::uint64_t seed,
                             std::size_t threads = 1);

}  // namespace uavids
