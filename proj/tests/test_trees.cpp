#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "support.hpp"
#include "uavids/eval.hpp"
#include "uavids/trees.hpp"

using namespace uavids;

namespace {

struct Data {
  Eigen::MatrixXd X;
  std::vector<int> y;
};

// Class 0 ~ N(0,1), class 1 ~ N(4,1) in one dimension.
Data two_gaussians(std::size_t per_class, std::uint64_t seed) {
  Rng rng(seed);
  Data d;
  d.X.resize(static_cast<Eigen::Index>(2 * per_class), 1);
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const int label = i < per_class ? 0 : 1;
    d.X(static_cast<Eigen::Index>(i), 0) = rng.normal(label == 0 ? 0.0 : 4.0, 1.0);
    d.y.push_back(label);
  }
  return d;
}

// Column 0 decides the label, the remaining columns are noise.
Data informative_plus_noise(std::size_t n, std::size_t noise, std::uint64_t seed, std::size_t informative = 1) {
  Rng rng(seed);
  Data d;
  d.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(informative + noise));
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < informative + noise; ++j) {
      const double v = rng.normal();
      d.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      if (j < informative) s += v;
    }
    d.y.push_back(s > 0.0 ? 1 : 0);
  }
  return d;
}

double accuracy_of(const Model& m, const Data& d) {
  const auto pred = predict(m, d.X);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == d.y[i];
  return static_cast<double>(ok) / static_cast<double>(pred.size());
}

void expect_valid_rows(const Eigen::MatrixXd& p) {
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-9);
    EXPECT_GE(p.row(r).minCoeff(), 0.0);
  }
}

void expect_tree_invariants(const DecisionTree& t, int max_depth) {
  for (const auto& node : t.nodes) {
    double sum = 0.0;
    for (double v : node.distribution) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-12);
    if (!node.is_leaf()) {
      EXPECT_GE(node.left, 0);
      EXPECT_GE(node.right, 0);
    }
  }
  EXPECT_LE(t.depth(), max_depth);
}

}  // namespace

TEST(Gini, SpecExamples) {
  EXPECT_DOUBLE_EQ(gini(std::vector<double>{2, 2}), 0.5);
  EXPECT_DOUBLE_EQ(gini(std::vector<double>{4, 0}), 0.0);
  EXPECT_NEAR(gini(std::vector<double>{1, 1, 1, 1, 1}), 0.8, 1e-15);
  EXPECT_NEAR(gini(Eigen::Vector3i(3, 1, 0)), 1.0 - (0.75 * 0.75 + 0.25 * 0.25), 1e-15);
}

TEST(FitTree, XorSeparatedAtDepthTwo) {
  Eigen::MatrixXd X(4, 2);
  X << 0, 0, 0, 1, 1, 0, 1, 1;
  const std::vector<int> y{0, 1, 1, 0};
  TreeParams params;
  params.max_depth = 2;
  const DecisionTree tree = fit_tree(X, y, 2, params);
  EXPECT_EQ(argmax_rows(tree.predict_proba(X)), y);
  expect_tree_invariants(tree, 2);
}

TEST(FitTree, PureLabelsGiveSingleLeaf) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Random(20, 3);
  const std::vector<int> y(20, 1);
  const auto tree = fit_tree(X, y, 2, {});
  ASSERT_EQ(tree.nodes.size(), 1u);
  EXPECT_EQ(tree.nodes[0].distribution, (std::vector<double>{0.0, 1.0}));
}

TEST(FitTree, DepthZeroPredictsMajority) {
  Eigen::MatrixXd X(5, 1);
  X << 1, 2, 3, 4, 5;
  const std::vector<int> y{0, 1, 1, 1, 0};
  TreeParams params;
  params.max_depth = 0;
  const auto tree = fit_tree(X, y, 2, params);
  ASSERT_EQ(tree.nodes.size(), 1u);
  for (int p : argmax_rows(tree.predict_proba(X))) EXPECT_EQ(p, 1);
}

TEST(FitTree, ThresholdsAreMidpoints) {
  Eigen::MatrixXd X(4, 1);
  X << 1, 2, 5, 6;
  const std::vector<int> y{0, 0, 1, 1};
  const auto tree = fit_tree(X, y, 2, {});
  ASSERT_FALSE(tree.nodes[0].is_leaf());
  EXPECT_DOUBLE_EQ(tree.nodes[0].threshold, 3.5);
}

TEST(FitTree, RespectsMinLeafAndDepth) {
  const Data d = informative_plus_noise(400, 3, 5);
  TreeParams params;
  params.max_depth = 4;
  params.min_leaf = 10;
  const auto tree = fit_tree(d.X, d.y, 2, params);
  expect_tree_invariants(tree, 4);
  for (const auto& node : tree.nodes) EXPECT_GE(node.weight, 10.0);
}

TEST(FitForest, SingleTreeWithoutBootstrapEqualsTree) {
  const Data d = informative_plus_noise(300, 3, 6);
  ForestParams fp;
  fp.n_trees = 1;
  fp.bootstrap = false;
  fp.max_features = 4;
  const ForestModel forest = fit_forest(d.X, d.y, 2, fp);
  const DecisionTree tree = fit_tree(d.X, d.y, 2, TreeParams{fp.max_depth, fp.min_leaf, 4, 0});
  EXPECT_TRUE(forest.predict_proba(d.X).isApprox(tree.predict_proba(d.X)));
  EXPECT_EQ(forest.trees[0].nodes.size(), tree.nodes.size());
}

TEST(FitForest, DeterministicAcrossRunsAndWorkerCounts) {
  const Data d = informative_plus_noise(300, 4, 7);
  ForestParams fp;
  fp.n_trees = 12;
  fp.seed = 99;
  const auto a = fit_forest(d.X, d.y, 2, fp, 1).predict_proba(d.X);
  const auto b = fit_forest(d.X, d.y, 2, fp, 1).predict_proba(d.X);
  const auto c = fit_forest(d.X, d.y, 2, fp, 4).predict_proba(d.X);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
  fp.seed = 100;
  EXPECT_NE(a, fit_forest(d.X, d.y, 2, fp, 1).predict_proba(d.X));
}

TEST(FitForest, TreeCountAndOutOfBag) {
  const Data d = informative_plus_noise(200, 2, 8);
  ForestParams fp;
  fp.n_trees = 9;
  const auto forest = fit_forest(d.X, d.y, 2, fp);
  EXPECT_EQ(forest.trees.size(), 9u);
  EXPECT_EQ(forest.max_features, 2u);  // ceil(sqrt(3))
  for (const auto& oob : forest.out_of_bag) {
    // About e^-1 of rows are out of bag.
    EXPECT_GT(oob.size(), 40u);
    EXPECT_LT(oob.size(), 110u);
  }
}

TEST(FitForest, TwoGaussiansAccuracy) {
  const Data train = two_gaussians(500, 1), test = two_gaussians(500, 2);
  ForestParams fp;
  fp.n_trees = 50;
  fp.seed = 3;
  fp.min_leaf = 5;
  const Model m = fit_forest(train.X, train.y, 2, fp);
  EXPECT_GE(accuracy_of(m, test), 0.95);
  expect_valid_rows(predict_proba(m, test.X));
}

TEST(FitGbdt, RoundZeroLossIsLogK) {
  Rng rng(4);
  Eigen::MatrixXd X(500, 2);
  std::vector<int> y(500);
  for (int i = 0; i < 500; ++i) {
    y[static_cast<std::size_t>(i)] = i % 5;
    X(i, 0) = rng.normal(y[static_cast<std::size_t>(i)], 1.0);
    X(i, 1) = rng.normal();
  }
  GbdtParams gp;
  gp.rounds = 5;
  const auto m = fit_gbdt(X, y, 5, gp);
  EXPECT_NEAR(m.train_loss.front(), std::log(5.0), 1e-12);
  GbdtModel untrained = m;
  untrained.rounds.clear();
  const Eigen::MatrixXd p = untrained.predict_proba(X);
  EXPECT_TRUE(p.isApprox(Eigen::MatrixXd::Constant(500, 5, 0.2), 1e-12));
}

TEST(FitGbdt, TrainLossNonIncreasing) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Data d = informative_plus_noise(600, 4, seed, 2);
    Eigen::MatrixXd X = d.X;
    std::vector<int> y = d.y;
    // Third class carved out of the first feature to exercise K > 2.
    for (std::size_t i = 0; i < y.size(); ++i)
      if (X(static_cast<Eigen::Index>(i), 0) > 1.0) y[i] = 2;
    const auto m = fit_gbdt(X, y, 3, GbdtParams{});
    ASSERT_EQ(m.train_loss.size(), 101u);
    for (std::size_t r = 1; r < m.train_loss.size(); ++r)
      EXPECT_LE(m.train_loss[r], m.train_loss[r - 1] + 1e-9) << "round " << r;
  }
}

TEST(FitGbdt, TwoGaussiansAccuracy) {
  const Data train = two_gaussians(500, 5), test = two_gaussians(500, 6);
  const Model m = fit_gbdt(train.X, train.y, 2, GbdtParams{});
  EXPECT_GE(accuracy_of(m, test), 0.95);
  expect_valid_rows(predict_proba(m, test.X));
}

TEST(FitGbdt, CutsStrictlyIncreasingAndBounded) {
  Rng rng(7);
  Eigen::VectorXd x = test::normal_vector(rng, 5000);
  const auto cuts = histogram_cuts(test::as_span(x), 255);
  EXPECT_LE(cuts.size(), 254u);
  EXPECT_GT(cuts.size(), 200u);
  for (std::size_t i = 1; i < cuts.size(); ++i) EXPECT_LT(cuts[i - 1], cuts[i]);
  const std::vector<double> few{3, 1, 2, 2, 1};
  EXPECT_EQ(histogram_cuts(few, 255), (std::vector<double>{1.5, 2.5}));
}

TEST(FitGbdt, DeterministicAcrossWorkerCounts) {
  const Data d = informative_plus_noise(300, 3, 9);
  GbdtParams gp;
  gp.rounds = 20;
  gp.feature_fraction = 0.5;
  gp.seed = 11;
  EXPECT_EQ(fit_gbdt(d.X, d.y, 2, gp, 1).predict_proba(d.X), fit_gbdt(d.X, d.y, 2, gp, 3).predict_proba(d.X));
}

TEST(Predict, FeatureCountMismatchRejected) {
  const Data d = informative_plus_noise(100, 2, 10);
  const Model tree = fit_tree(d.X, d.y, 2, {});
  const Model gbdt = fit_gbdt(d.X, d.y, 2, GbdtParams{.rounds = 2});
  const Eigen::MatrixXd wrong = Eigen::MatrixXd::Zero(3, 2);
  EXPECT_THROW(predict_proba(tree, wrong), DataError);
  EXPECT_THROW(predict_proba(gbdt, wrong), DataError);
}

TEST(Predict, SinglePureLeafGivesOneHotRows) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Random(10, 2);
  const Model m = fit_tree(X, std::vector<int>(10, 2), 3, {});
  const Eigen::MatrixXd p = predict_proba(m, X);
  for (Eigen::Index r = 0; r < 10; ++r) EXPECT_EQ(p.row(r), Eigen::RowVector3d(0, 0, 1));
}

TEST(Predict, ArgmaxTiesGoToLowestClass) {
  Eigen::MatrixXd p(2, 3);
  p << 0.4, 0.4, 0.2, 0.1, 0.45, 0.45;
  EXPECT_EQ(argmax_rows(p), (std::vector<int>{0, 1}));
}

TEST(Predict, MonotoneTransformInvariance) {
  const Data d = informative_plus_noise(400, 2, 12);
  Eigen::MatrixXd Xt = d.X;
  Xt.col(0) = d.X.col(0).array().exp();
  Xt.col(1) = d.X.col(1).array().cube();
  ForestParams fp;
  fp.n_trees = 10;
  EXPECT_EQ(predict(fit_forest(d.X, d.y, 2, fp), d.X), predict(fit_forest(Xt, d.y, 2, fp), Xt));
  GbdtParams gp;
  gp.rounds = 20;
  EXPECT_EQ(predict(fit_gbdt(d.X, d.y, 2, gp), d.X), predict(fit_gbdt(Xt, d.y, 2, gp), Xt));
}

TEST(ImpurityImportance, SingleSplitOwnsAllImportance) {
  Eigen::MatrixXd X(4, 3);
  X << 0, 5, 1, 0, 6, 2, 0, 7, 3, 0, 8, 4;
  const std::vector<int> y{0, 0, 1, 1};
  TreeParams params;
  params.max_depth = 1;
  const Eigen::VectorXd imp = impurity_importance(fit_tree(X, y, 2, params));
  EXPECT_DOUBLE_EQ(imp.sum(), 1.0);
  EXPECT_EQ((imp.array() == 1.0).count(), 1);
  EXPECT_DOUBLE_EQ(imp[0], 0.0);
}

TEST(ImpurityImportance, NoiseBelowInformativeAndNormalized) {
  const Data d = informative_plus_noise(600, 1, 13);
  ForestParams fp;
  fp.n_trees = 30;
  fp.max_features = 2;
  for (const Model& m : {Model(fit_forest(d.X, d.y, 2, fp)), Model(fit_gbdt(d.X, d.y, 2, GbdtParams{.rounds = 30})),
                         Model(fit_tree(d.X, d.y, 2, {}))}) {
    const Eigen::VectorXd imp = impurity_importance(m);
    EXPECT_NEAR(imp.sum(), 1.0, 1e-12);
    EXPECT_GE(imp.minCoeff(), 0.0);
    EXPECT_GT(imp[0], imp[1]);
  }
}

TEST(PermutationImportance, UnusedFeatureHasNoEffect) {
  const Data d = informative_plus_noise(400, 2, 14);
  TreeParams params;
  params.max_depth = 1;
  const Model m = fit_tree(d.X, d.y, 2, params);
  const auto imp = permutation_importance(m, d.X, d.y, ImportanceMetric::macro_f1, 1, false);
  EXPECT_LE(std::abs(imp.mean_drop[1]), 0.005);
  EXPECT_LE(std::abs(imp.mean_drop[2]), 0.005);
  EXPECT_GT(imp.mean_drop[0], 0.2);
}

TEST(PermutationImportance, InformativeRanksFirstAndDeterministic) {
  const Data train = informative_plus_noise(500, 3, 15), test = informative_plus_noise(300, 3, 16);
  ForestParams fp;
  fp.n_trees = 20;
  const Model m = fit_forest(train.X, train.y, 2, fp);
  const auto a = permutation_importance(m, test.X, test.y, ImportanceMetric::macro_f1, 5, true);
  const auto b = permutation_importance(m, test.X, test.y, ImportanceMetric::macro_f1, 5, true, 5, 3);
  Eigen::Index best = 0;
  a.mean_drop.maxCoeff(&best);
  EXPECT_EQ(best, 0);
  EXPECT_EQ(a.mean_drop, b.mean_drop);
  EXPECT_EQ(a.per_class_drop, b.per_class_drop);
  EXPECT_EQ(a.per_class_drop.rows(), 2);
  EXPECT_EQ(a.per_class_drop.cols(), 4);
  const auto acc = permutation_importance(m, test.X, test.y, ImportanceMetric::accuracy, 5, false);
  EXPECT_EQ(acc.per_class_drop.size(), 0);
}

TEST(Rfe, NoiseEliminatedBeforeInformative) {
  const Data d = informative_plus_noise(600, 2, 17, 2);
  ModelSpec spec;
  spec.family = ModelFamily::forest;
  spec.forest.n_trees = 30;
  spec.forest.seed = 4;
  const std::vector<std::string> names{"signal_a", "signal_b", "noise_a", "noise_b"};
  const auto r = rfe(d.X, names, d.y, 2, spec, RfeParams{.keep_threshold = 1.0, .step = 1});
  ASSERT_EQ(r.trace.size(), 3u);
  std::vector<std::string> first_two{r.trace[0].eliminated[0], r.trace[1].eliminated[0]};
  std::sort(first_two.begin(), first_two.end());
  EXPECT_EQ(first_two, (std::vector<std::string>{"noise_a", "noise_b"}));
  EXPECT_EQ(r.final_features.size(), 1u);
}

TEST(Rfe, ZeroThresholdKeepsEverything) {
  const Data d = informative_plus_noise(300, 2, 18);
  ModelSpec spec;
  spec.family = ModelFamily::forest;
  spec.forest.n_trees = 10;
  const std::vector<std::string> names{"a", "b", "c"};
  const auto r = rfe(d.X, names, d.y, 2, spec, RfeParams{.keep_threshold = 0.0});
  EXPECT_TRUE(r.trace.empty());
  EXPECT_EQ(r.selected, names);
}

TEST(Rfe, TraceCountsRoundsAndSelectionUsesThreshold) {
  const Data d = informative_plus_noise(500, 6, 19, 2);
  ModelSpec spec;
  spec.family = ModelFamily::forest;
  spec.forest.n_trees = 20;
  std::vector<std::string> names;
  for (int j = 0; j < 8; ++j) names.push_back("f" + std::to_string(j));
  const auto r = rfe(d.X, names, d.y, 2, spec, RfeParams{.keep_threshold = 0.2, .step = 2});
  std::size_t eliminated = 0;
  for (const auto& round : r.trace) {
    EXPECT_GE(round.eliminated.size(), 1u);
    EXPECT_LE(round.eliminated.size(), 2u);
    eliminated += round.eliminated.size();
  }
  EXPECT_EQ(eliminated + r.final_features.size(), names.size());
  for (std::size_t j = 0; j < r.final_features.size(); ++j) {
    const bool kept = std::find(r.selected.begin(), r.selected.end(), r.final_features[j]) != r.selected.end();
    EXPECT_EQ(kept, r.final_importance[static_cast<Eigen::Index>(j)] >= 0.2);
  }
  EXPECT_NE(std::find(r.selected.begin(), r.selected.end(), "f0"), r.selected.end());
  EXPECT_NE(std::find(r.selected.begin(), r.selected.end(), "f1"), r.selected.end());
}
