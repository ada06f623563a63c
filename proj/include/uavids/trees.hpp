#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace uavids {

/// Gini impurity 1 - sum (c_k / n)^2 of (possibly weighted) class counts.
template <typename Derived>
double gini(const Eigen::DenseBase<Derived>& counts) {
  const double n = counts.sum();
  if (n <= 0.0) return 0.0;
  return 1.0 - (counts.template cast<double>() / n).matrix().squaredNorm();
}

double gini(std::span<const double> counts);

struct TreeParams {
  int max_depth = 16;
  double min_leaf = 1.0;         // minimum (weighted) rows per child
  std::size_t max_features = 0;  // features examined per split; 0 = all
  std::uint64_t seed = 0;
};

struct TreeNode {
  int feature = -1;  // -1 for leaves
  double threshold = 0.0;  // rows with x <= threshold go left
  int left = -1;
  int right = -1;
  double weight = 0.0;  // weighted rows reaching the node
  double impurity = 0.0;
  std::vector<double> distribution;  // class shares, sums to 1

  bool is_leaf() const { return feature < 0; }
};

/// CART classification tree, nodes stored in preorder (root at 0).
struct DecisionTree {
  int n_features = 0;
  int n_classes = 0;
  std::vector<TreeNode> nodes;

  const TreeNode& leaf_for(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
  Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& X) const;
  /// Weighted impurity decrease per feature, not normalized.
  Eigen::VectorXd impurity_decrease() const;
  int depth() const;
};

/// Columns of X sorted ascending, one row index list per feature.
struct PresortedColumns {
  std::vector<std::vector<std::uint32_t>> order;
  static PresortedColumns build(const Eigen::MatrixXd& X);
};

/// Greedy CART on Gini gain. Split candidates are midpoints between
/// consecutive distinct values. `weights` are row multiplicities (empty =
/// all ones); rows with zero weight are ignored.
DecisionTree fit_tree(const Eigen::MatrixXd& X, std::span<const int> y, int n_classes, const TreeParams& params,
                      std::span<const double> weights = {}, const PresortedColumns* presorted = nullptr);

struct ForestParams {
  int n_trees = 100;
  int max_depth = 16;
  double min_leaf = 1.0;
  std::size_t max_features = 0;  // 0 = ceil(sqrt(p))
  bool bootstrap = true;
  std::uint64_t seed = 0;
};

struct ForestModel {
  int n_features = 0;
  int n_classes = 0;
  std::size_t max_features = 0;
  std::vector<DecisionTree> trees;
  std::vector<std::uint64_t> tree_seeds;
  std::vector<std::vector<std::uint32_t>> out_of_bag;  // per tree; not serialized

  Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& X) const;
};

/// Tree t uses seed derive_seed(params.seed, {t}) for its bootstrap and
/// feature sampling, so the model does not depend on `threads`.
ForestModel fit_forest(const Eigen::MatrixXd& X, std::span<const int> y, int n_classes, const ForestParams& params,
                       std::size_t threads = 1);

struct GbdtParams {
  int rounds = 100;
  double learning_rate = 0.1;
  int max_depth = 6;
  double min_leaf = 20.0;
  int n_bins = 255;
  double l2 = 1.0;
  double min_hessian = 1e-3;
  double feature_fraction = 1.0;
  std::uint64_t seed = 0;
};

struct RegressionNode {
  int feature = -1;
  int bin = 0;             // rows with bin index <= bin go left
  double threshold = 0.0;  // equivalent raw-value threshold (x <= threshold)
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf output before shrinkage
  double gain = 0.0;

  bool is_leaf() const { return feature < 0; }
};

struct RegressionTree {
  std::vector<RegressionNode> nodes;
  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
};

/// Quantile bin cut points; bin b holds cuts[b-1] < x <= cuts[b].
std::vector<double> histogram_cuts(std::span<const double> column, int n_bins);

/// Multiclass softmax boosting with one regression tree per class per round.
struct GbdtModel {
  int n_features = 0;
  int n_classes = 0;
  double learning_rate = 0.1;
  std::vector<std::vector<double>> cuts;  // per feature, strictly increasing
  Eigen::VectorXd initial_score;          // log class prior
  std::vector<std::vector<RegressionTree>> rounds;  // rounds x classes
  std::vector<double> train_loss;  // mean log-loss before round 1, then after each round

  Eigen::MatrixXd decision_function(const Eigen::MatrixXd& X) const;
  Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& X) const;
};

GbdtModel fit_gbdt(const Eigen::MatrixXd& X, std::span<const int> y, int n_classes, const GbdtParams& params,
                   std::size_t threads = 1);

/// Row-wise softmax.
Eigen::MatrixXd softmax(const Eigen::MatrixXd& scores);

enum class ModelFamily { tree, forest, gbdt };
std::string_view to_string(ModelFamily family);
ModelFamily parse_model_family(std::string_view text);

struct ModelSpec {
  std::string name;
  ModelFamily family = ModelFamily::forest;
  TreeParams tree;
  ForestParams forest;
  GbdtParams gbdt;
};

using Model = std::variant<DecisionTree, ForestModel, GbdtModel>;

Model fit_model(const ModelSpec& spec, const Eigen::MatrixXd& X, std::span<const int> y, int n_classes,
                std::size_t threads = 1);
int model_features(const Model& model);
int model_classes(const Model& model);
/// n x classes; throws DataError when X has the wrong number of columns.
Eigen::MatrixXd predict_proba(const Model& model, const Eigen::MatrixXd& X);
/// Row-wise argmax of predict_proba; ties go to the lowest class id.
std::vector<int> predict(const Model& model, const Eigen::MatrixXd& X);
std::vector<int> argmax_rows(const Eigen::MatrixXd& proba);

/// Gini decrease (trees, forests) or split gain (GBDT) per feature,
/// normalized to sum to 1. All zeros when the model never splits.
Eigen::VectorXd impurity_importance(const Model& model);

enum class ImportanceMetric { macro_f1, accuracy };

struct PermutationImportance {
  Eigen::VectorXd mean_drop;       // per feature
  Eigen::MatrixXd per_class_drop;  // classes x features (one-vs-rest F1); empty unless requested
};

/// Metric drop after shuffling one column at a time, averaged over `repeats`.
/// Shuffle (feature j, repeat r) uses seed derive_seed(seed, {j, r}).
PermutationImportance permutation_importance(const Model& model, const Eigen::MatrixXd& X, std::span<const int> y,
                                             ImportanceMetric metric, std::uint64_t seed, bool per_class,
                                             int repeats = 5, std::size_t threads = 1);

struct RfeParams {
  double keep_threshold = 0.025;
  std::size_t step = 1;
};

struct RfeRound {
  std::vector<std::string> features;
  Eigen::VectorXd importance;
  std::vector<std::string> eliminated;
};

struct RfeResult {
  std::vector<std::string> selected;
  std::vector<RfeRound> trace;  // one entry per elimination round
  std::vector<std::string> final_features;
  Eigen::VectorXd final_importance;
};

/// Recursive feature elimination on impurity importance. While more than one
/// feature remains and some importance falls below keep_threshold, refit and
/// drop up to `step` of the lowest-importance features that fall below it.
/// The selection is the final fit's features with importance >= keep_threshold.
RfeResult rfe(const Eigen::MatrixXd& X, std::span<const std::string> names, std::span<const int> y, int n_classes,
              const ModelSpec& spec, const RfeParams& params = {}, std::size_t threads = 1);

}  // namespace uavids
