#include "uavids/trees.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "uavids/errors.hpp"
#include "uavids/eval.hpp"
#include "uavids/parallel.hpp"
#include "uavids/preprocess.hpp"
#include "uavids/random.hpp"

namespace uavids {

double gini(std::span<const double> counts) {
  return gini(Eigen::Map<const Eigen::VectorXd>(counts.data(), static_cast<Eigen::Index>(counts.size())));
}

namespace {

constexpr double kMinGain = 1e-12;

void check_training_input(const Eigen::MatrixXd& X, std::span<const int> y, int n_classes) {
  if (static_cast<std::size_t>(X.rows()) != y.size()) throw DataError("feature matrix and labels differ in length");
  if (X.rows() == 0) throw DataError("cannot fit a model on zero rows");
  if (n_classes < 1) throw DataError("n_classes must be positive");
  for (int label : y)
    if (label < 0 || label >= n_classes) throw DataError("class id out of range: " + std::to_string(label));
  if (!X.allFinite()) throw DataError("feature matrix contains non-finite values");
}

void check_predict_input(int n_features, const Eigen::MatrixXd& X) {
  if (X.cols() != n_features)
    throw DataError("model expects " + std::to_string(n_features) + " features, got " + std::to_string(X.cols()));
}

// Depth-first CART builder over per-feature sorted row lists. All lists hold
// the same row set inside a node's [lo, hi) range.
class CartBuilder {
 public:
  CartBuilder(const Eigen::MatrixXd& X, std::span<const int> y, int n_classes, const TreeParams& params,
              std::span<const double> weights, const PresortedColumns& presorted)
      : X_(X), y_(y), n_classes_(n_classes), params_(params), rng_(params.seed),
        weight_(static_cast<std::size_t>(X.rows()), 1.0), goes_left_(static_cast<std::size_t>(X.rows()), 0) {
    if (!weights.empty()) std::copy(weights.begin(), weights.end(), weight_.begin());
    const auto p = static_cast<std::size_t>(X.cols());
    order_.resize(p);
    for (std::size_t f = 0; f < p; ++f) {
      order_[f].reserve(presorted.order[f].size());
      for (auto r : presorted.order[f])
        if (weight_[r] > 0.0) order_[f].push_back(r);
    }
    buffer_.resize(order_.empty() ? 0 : order_[0].size());
    features_.resize(p);
    std::iota(features_.begin(), features_.end(), 0);
  }

  DecisionTree build() {
    DecisionTree tree;
    tree.n_features = static_cast<int>(X_.cols());
    tree.n_classes = n_classes_;
    const std::size_t n = order_.empty() ? 0 : order_[0].size();
    if (order_.empty()) {
      // No features: a single leaf over all weighted rows.
      std::vector<std::uint32_t> rows;
      for (std::size_t r = 0; r < weight_.size(); ++r)
        if (weight_[r] > 0.0) rows.push_back(static_cast<std::uint32_t>(r));
      tree.nodes.push_back(make_leaf(rows));
      return tree;
    }
    grow(tree, 0, n, 0);
    return tree;
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double gain = -std::numeric_limits<double>::infinity();
    std::size_t left_count = 0;  // rows (not weight) going left
  };

  std::vector<double> class_weights(std::size_t lo, std::size_t hi) const {
    std::vector<double> counts(static_cast<std::size_t>(n_classes_), 0.0);
    for (std::size_t i = lo; i < hi; ++i) {
      const auto r = order_[0][i];
      counts[static_cast<std::size_t>(y_[r])] += weight_[r];
    }
    return counts;
  }

  TreeNode make_leaf(std::span<const std::uint32_t> rows) const {
    std::vector<double> counts(static_cast<std::size_t>(n_classes_), 0.0);
    for (auto r : rows) counts[static_cast<std::size_t>(y_[r])] += weight_[r];
    TreeNode node;
    node.weight = std::accumulate(counts.begin(), counts.end(), 0.0);
    node.impurity = gini(counts);
    node.distribution = counts;
    for (auto& c : node.distribution) c /= node.weight;
    return node;
  }

  int grow(DecisionTree& tree, std::size_t lo, std::size_t hi, int depth) {
    const auto counts = class_weights(lo, hi);
    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    TreeNode node;
    node.weight = total;
    node.impurity = gini(counts);
    node.distribution = counts;
    for (auto& c : node.distribution) c /= total;
    const int index = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(node);

    if (depth >= params_.max_depth || total < 2.0 * params_.min_leaf || node.impurity <= 1e-15) return index;
    const Split split = best_split(lo, hi, counts, total, node.impurity);
    // Impure nodes split even at zero gain (XOR needs it); only the absence
    // of any admissible threshold stops growth here.
    if (split.feature < 0) return index;

    const auto& sorted = order_[static_cast<std::size_t>(split.feature)];
    for (std::size_t i = lo; i < hi; ++i) goes_left_[sorted[i]] = (i - lo) < split.left_count;
    for (auto& list : order_) {
      // Stable partition keeps each feature's range sorted.
      std::size_t left = lo, right = 0;
      for (std::size_t i = lo; i < hi; ++i) {
        if (goes_left_[list[i]]) list[left++] = list[i];
        else buffer_[right++] = list[i];
      }
      std::copy(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(right), list.begin() + static_cast<std::ptrdiff_t>(left));
    }
    const std::size_t mid = lo + split.left_count;
    tree.nodes[static_cast<std::size_t>(index)].feature = split.feature;
    tree.nodes[static_cast<std::size_t>(index)].threshold = split.threshold;
    const int left = grow(tree, lo, mid, depth + 1);
    const int right = grow(tree, mid, hi, depth + 1);
    tree.nodes[static_cast<std::size_t>(index)].left = left;
    tree.nodes[static_cast<std::size_t>(index)].right = right;
    return index;
  }

  Split best_split(std::size_t lo, std::size_t hi, const std::vector<double>& counts, double total, double impurity) {
    const std::size_t p = features_.size();
    std::size_t m = params_.max_features == 0 ? p : std::min(params_.max_features, p);
    if (m < p) {
      // Partial Fisher-Yates: the first m entries become the sample.
      for (std::size_t i = 0; i < m; ++i) {
        const auto j = i + static_cast<std::size_t>(rng_.below(p - i));
        std::swap(features_[i], features_[j]);
      }
    }
    Split best;
    std::vector<double> left(static_cast<std::size_t>(n_classes_));
    double total_sq = 0.0;
    for (double c : counts) total_sq += c * c;
    for (std::size_t fi = 0; fi < m; ++fi) {
      const int f = features_[fi];
      const auto& sorted = order_[static_cast<std::size_t>(f)];
      std::fill(left.begin(), left.end(), 0.0);
      double wl = 0.0, left_sq = 0.0, right_sq = total_sq;
      for (std::size_t i = lo; i + 1 < hi; ++i) {
        const auto r = sorted[i];
        const auto c = static_cast<std::size_t>(y_[r]);
        const double w = weight_[r];
        const double right_c = counts[c] - left[c];
        left_sq += (left[c] + w) * (left[c] + w) - left[c] * left[c];
        right_sq += (right_c - w) * (right_c - w) - right_c * right_c;
        left[c] += w;
        wl += w;
        const double xi = X_(r, f);
        const double xn = X_(sorted[i + 1], f);
        if (!(xi < xn)) continue;
        const double wr = total - wl;
        if (wl < params_.min_leaf || wr < params_.min_leaf) continue;
        const double gini_l = 1.0 - left_sq / (wl * wl);
        const double gini_r = 1.0 - right_sq / (wr * wr);
        const double gain = impurity - (wl / total) * gini_l - (wr / total) * gini_r;
        if (gain > best.gain) {
          double threshold = 0.5 * (xi + xn);
          if (!(threshold < xn)) threshold = xi;
          best = Split{f, threshold, gain, i + 1 - lo};
        }
      }
    }
    return best;
  }

  const Eigen::MatrixXd& X_;
  std::span<const int> y_;
  int n_classes_;
  TreeParams params_;
  Rng rng_;
  std::vector<double> weight_;
  std::vector<char> goes_left_;
  std::vector<std::vector<std::uint32_t>> order_;
  std::vector<std::uint32_t> buffer_;
  std::vector<int> features_;
};

}  // namespace

// ---------------------------------------------------------------------------

PresortedColumns PresortedColumns::build(const Eigen::MatrixXd& X) {
  PresortedColumns out;
  out.order.resize(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index f = 0; f < X.cols(); ++f) {
    auto& o = out.order[static_cast<std::size_t>(f)];
    o.resize(static_cast<std::size_t>(X.rows()));
    std::iota(o.begin(), o.end(), 0u);
    std::stable_sort(o.begin(), o.end(), [&](std::uint32_t a, std::uint32_t b) { return X(a, f) < X(b, f); });
  }
  return out;
}

DecisionTree fit_tree(const Eigen::MatrixXd& X, std::span<const int> y, int n_classes, const TreeParams& params,
                      std::span<const double> weights, const PresortedColumns* presorted) {
  check_training_input(X, y, n_classes);
  if (!weights.empty() && weights.size() != y.size()) throw DataError("weights and labels differ in length");
  if (params.max_depth < 0) throw ConfigError("max_depth must be >= 0");
  if (X.rows() >= std::numeric_limits<std::uint32_t>::max()) throw DataError("too many rows");
  PresortedColumns local;
  if (presorted == nullptr) {
    local = PresortedColumns::build(X);
    presorted = &local;
  }
  CartBuilder builder(X, y, n_classes, params, weights, *presorted);
  return builder.build();
}

const TreeNode& DecisionTree::leaf_for(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  std::size_t i = 0;
  while (!nodes[i].is_leaf())
    i = static_cast<std::size_t>(row[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right);
  return nodes[i];
}

Eigen::MatrixXd DecisionTree::predict_proba(const Eigen::MatrixXd& X) const {
  check_predict_input(n_features, X);
  Eigen::MatrixXd out(X.rows(), n_classes);
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const auto& dist = leaf_for(X.row(r)).distribution;
    for (int c = 0; c < n_classes; ++c) out(r, c) = dist[static_cast<std::size_t>(c)];
  }
  return out;
}

Eigen::VectorXd DecisionTree::impurity_decrease() const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n_features);
  if (nodes.empty() || nodes[0].weight <= 0.0) return out;
  const double root = nodes[0].weight;
  for (const auto& node : nodes) {
    if (node.is_leaf()) continue;
    const auto& l = nodes[static_cast<std::size_t>(node.left)];
    const auto& r = nodes[static_cast<std::size_t>(node.right)];
    const double decrease = node.weight * node.impurity - l.weight * l.impurity - r.weight * r.impurity;
    out[node.feature] += std::max(0.0, decrease) / root;
  }
  return out;
}

int DecisionTree::depth() const {
  std::vector<int> depth(nodes.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    best = std::max(best, depth[i]);
    if (!nodes[i].is_leaf()) {
      depth[static_cast<std::size_t>(nodes[i].left)] = depth[i] + 1;
      depth[static_cast<std::size_t>(nodes[i].right)] = depth[i] + 1;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------

ForestModel fit_forest(const Eigen::MatrixXd& X, std::span<const int> y, int n_classes, const ForestParams& params,
                       std::size_t threads) {
  check_training_input(X, y, n_classes);
  if (params.n_trees < 1) throw ConfigError("n_trees must be >= 1");
  const auto n = static_cast<std::size_t>(X.rows());
  const auto p = static_cast<std::size_t>(X.cols());
  ForestModel model;
  model.n_features = static_cast<int>(p);
  model.n_classes = n_classes;
  model.max_features = params.max_features == 0
                           ? static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(p))))
                           : std::min(params.max_features, p);
  const auto trees = static_cast<std::size_t>(params.n_trees);
  model.trees.resize(trees);
  model.tree_seeds.resize(trees);
  model.out_of_bag.resize(trees);
  const PresortedColumns presorted = PresortedColumns::build(X);

  parallel_for(trees, threads, [&](std::size_t t) {
    const std::uint64_t seed = derive_seed(params.seed, {t});
    model.tree_seeds[t] = seed;
    std::vector<double> weights(n, 1.0);
    if (params.bootstrap) {
      Rng rng(derive_seed(seed, {0}));
      std::fill(weights.begin(), weights.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) weights[static_cast<std::size_t>(rng.below(n))] += 1.0;
      for (std::size_t i = 0; i < n; ++i)
        if (weights[i] == 0.0) model.out_of_bag[t].push_back(static_cast<std::uint32_t>(i));
    }
    TreeParams tp;
    tp.max_depth = params.max_depth;
    tp.min_leaf = params.min_leaf;
    tp.max_features = model.max_features;
    tp.seed = derive_seed(seed, {1});
    model.trees[t] = fit_tree(X, y, n_classes, tp, weights, &presorted);
  });
  return model;
}

Eigen::MatrixXd ForestModel::predict_proba(const Eigen::MatrixXd& X) const {
  check_predict_input(n_features, X);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(X.rows(), n_classes);
  for (const auto& tree : trees) out += tree.predict_proba(X);
  out /= static_cast<double>(trees.size());
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> histogram_cuts(std::span<const double> column, int n_bins) {
  if (n_bins < 2) throw ConfigError("n_bins must be >= 2");
  std::vector<double> sorted(column.begin(), column.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> distinct = sorted;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<double> cuts;
  if (distinct.size() <= static_cast<std::size_t>(n_bins)) {
    for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
      double mid = 0.5 * (distinct[i] + distinct[i + 1]);
      if (!(mid < distinct[i + 1])) mid = distinct[i];
      cuts.push_back(mid);
    }
    return cuts;
  }
  for (int k = 1; k < n_bins; ++k) {
    const double q = quantile_sorted(sorted, static_cast<double>(k) / n_bins);
    if (cuts.empty() || q > cuts.back()) cuts.push_back(q);
  }
  // The top cut must leave some rows above it.
  while (!cuts.empty() && cuts.back() >= sorted.back()) cuts.pop_back();
  return cuts;
}

namespace {

int bin_of(const std::vector<double>& cuts, double x) {
  return static_cast<int>(std::lower_bound(cuts.begin(), cuts.end(), x) - cuts.begin());
}

class HistogramTreeBuilder {
 public:
  HistogramTreeBuilder(const std::vector<std::vector<std::uint8_t>>& bins, const std::vector<std::vector<double>>& cuts,
                       const std::vector<double>& grad, const std::vector<double>& hess, const GbdtParams& params,
                       std::vector<int> features)
      : bins_(bins), cuts_(cuts), grad_(grad), hess_(hess), params_(params), features_(std::move(features)) {}

  // Fills leaf_value with the (unshrunk) output of each row's leaf.
  RegressionTree build(std::vector<double>& leaf_value) {
    RegressionTree tree;
    std::vector<std::uint32_t> rows(grad_.size());
    std::iota(rows.begin(), rows.end(), 0u);
    leaf_value.assign(grad_.size(), 0.0);
    grow(tree, rows, 0, leaf_value);
    return tree;
  }

 private:
  double score(double g, double h) const { return g * g / (h + params_.l2); }

  int grow(RegressionTree& tree, std::vector<std::uint32_t>& rows, int depth, std::vector<double>& leaf_value) {
    double G = 0.0, H = 0.0;
    for (auto r : rows) {
      G += grad_[r];
      H += hess_[r];
    }
    const int index = static_cast<int>(tree.nodes.size());
    RegressionNode node;
    node.value = -G / (H + params_.l2);
    tree.nodes.push_back(node);

    int best_feature = -1, best_bin = 0;
    double best_gain = kMinGain;
    if (depth < params_.max_depth && static_cast<double>(rows.size()) >= 2.0 * params_.min_leaf) {
      const double parent = score(G, H);
      for (int f : features_) {
        const auto& column = bins_[static_cast<std::size_t>(f)];
        const std::size_t nb = cuts_[static_cast<std::size_t>(f)].size() + 1;
        if (nb < 2) continue;
        std::vector<double> hg(nb, 0.0), hh(nb, 0.0);
        std::vector<std::size_t> hc(nb, 0);
        for (auto r : rows) {
          const auto b = column[r];
          hg[b] += grad_[r];
          hh[b] += hess_[r];
          ++hc[b];
        }
        double gl = 0.0, hl = 0.0;
        std::size_t cl = 0;
        for (std::size_t b = 0; b + 1 < nb; ++b) {
          gl += hg[b];
          hl += hh[b];
          cl += hc[b];
          const std::size_t cr = rows.size() - cl;
          if (static_cast<double>(cl) < params_.min_leaf || static_cast<double>(cr) < params_.min_leaf) continue;
          const double hr = H - hl;
          if (hl < params_.min_hessian || hr < params_.min_hessian) continue;
          const double gain = score(gl, hl) + score(G - gl, hr) - parent;
          if (gain > best_gain) {
            best_gain = gain;
            best_feature = f;
            best_bin = static_cast<int>(b);
          }
        }
      }
    }
    if (best_feature < 0) {
      for (auto r : rows) leaf_value[r] = node.value;
      return index;
    }
    std::vector<std::uint32_t> left, right;
    const auto& column = bins_[static_cast<std::size_t>(best_feature)];
    for (auto r : rows) (column[r] <= best_bin ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    auto& stored = tree.nodes[static_cast<std::size_t>(index)];
    stored.feature = best_feature;
    stored.bin = best_bin;
    stored.threshold = cuts_[static_cast<std::size_t>(best_feature)][static_cast<std::size_t>(best_bin)];
    stored.gain = best_gain;
    const int l = grow(tree, left, depth + 1, leaf_value);
    const int r = grow(tree, right, depth + 1, leaf_value);
    tree.nodes[static_cast<std::size_t>(index)].left = l;
    tree.nodes[static_cast<std::size_t>(index)].right = r;
    return index;
  }

  const std::vector<std::vector<std::uint8_t>>& bins_;
  const std::vector<std::vector<double>>& cuts_;
  const std::vector<double>& grad_;
  const std::vector<double>& hess_;
  const GbdtParams& params_;
  std::vector<int> features_;
};

double mean_log_loss(const Eigen::MatrixXd& scores, std::span<const int> y) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double m = scores.row(r).maxCoeff();
    const double lse = m + std::log((scores.row(r).array() - m).exp().sum());
    total += lse - scores(r, y[static_cast<std::size_t>(r)]);
  }
  return total / static_cast<double>(scores.rows());
}

}  // namespace

double RegressionTree::predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  std::size_t i = 0;
  while (!nodes[i].is_leaf())
    i = static_cast<std::size_t>(row[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right);
  return nodes[i].value;
}

Eigen::MatrixXd softmax(const Eigen::MatrixXd& scores) {
  Eigen::MatrixXd out(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const Eigen::ArrayXd e = (scores.row(r).array() - scores.row(r).maxCoeff()).exp().transpose();
    out.row(r) = (e / e.sum()).transpose();
  }
  return out;
}

GbdtModel fit_gbdt(const Eigen::MatrixXd& X, std::span<const int> y, int n_classes, const GbdtParams& params,
                   std::size_t threads) {
  check_training_input(X, y, n_classes);
  if (params.rounds < 1) throw ConfigError("rounds must be >= 1");
  if (params.n_bins < 2 || params.n_bins > 256) throw ConfigError("n_bins must lie in [2, 256]");
  if (!(params.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(params.feature_fraction > 0.0 && params.feature_fraction <= 1.0))
    throw ConfigError("feature_fraction must lie in (0, 1]");
  const auto n = static_cast<std::size_t>(X.rows());
  const auto p = static_cast<std::size_t>(X.cols());
  const auto K = static_cast<std::size_t>(n_classes);

  GbdtModel model;
  model.n_features = static_cast<int>(p);
  model.n_classes = n_classes;
  model.learning_rate = params.learning_rate;
  model.cuts.resize(p);
  std::vector<std::vector<std::uint8_t>> bins(p, std::vector<std::uint8_t>(n));
  for (std::size_t f = 0; f < p; ++f) {
    const Eigen::VectorXd col = X.col(static_cast<Eigen::Index>(f));
    model.cuts[f] = histogram_cuts(std::span<const double>(col.data(), n), params.n_bins);
    for (std::size_t r = 0; r < n; ++r) bins[f][r] = static_cast<std::uint8_t>(bin_of(model.cuts[f], col[static_cast<Eigen::Index>(r)]));
  }

  std::vector<double> prior(K, 0.0);
  for (int label : y) prior[static_cast<std::size_t>(label)] += 1.0;
  model.initial_score.resize(n_classes);
  for (std::size_t k = 0; k < K; ++k)
    model.initial_score[static_cast<Eigen::Index>(k)] = std::log(std::max(prior[k], 0.5) / static_cast<double>(n));

  Eigen::MatrixXd scores = model.initial_score.transpose().replicate(static_cast<Eigen::Index>(n), 1);
  model.train_loss.push_back(mean_log_loss(scores, y));
  const auto m = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(params.feature_fraction * static_cast<double>(p))));

  for (int round = 0; round < params.rounds; ++round) {
    const Eigen::MatrixXd proba = softmax(scores);
    std::vector<RegressionTree> trees(K);
    std::vector<std::vector<double>> outputs(K);
    parallel_for(K, threads, [&](std::size_t k) {
      std::vector<double> grad(n), hess(n);
      for (std::size_t r = 0; r < n; ++r) {
        const double pk = proba(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k));
        grad[r] = pk - (static_cast<std::size_t>(y[r]) == k ? 1.0 : 0.0);
        hess[r] = std::max(pk * (1.0 - pk), 1e-16);
      }
      std::vector<int> features(p);
      std::iota(features.begin(), features.end(), 0);
      if (m < p) {
        Rng rng(derive_seed(params.seed, {static_cast<std::uint64_t>(round), k}));
        shuffle(std::span<int>(features), rng);
        features.resize(m);
        std::sort(features.begin(), features.end());
      }
      HistogramTreeBuilder builder(bins, model.cuts, grad, hess, params, std::move(features));
      trees[k] = builder.build(outputs[k]);
    });
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t r = 0; r < n; ++r)
        scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) += params.learning_rate * outputs[k][r];
    model.rounds.push_back(std::move(trees));
    model.train_loss.push_back(mean_log_loss(scores, y));
  }
  return model;
}

Eigen::MatrixXd GbdtModel::decision_function(const Eigen::MatrixXd& X) const {
  check_predict_input(n_features, X);
  Eigen::MatrixXd scores = initial_score.transpose().replicate(X.rows(), 1);
  for (const auto& round : rounds)
    for (std::size_t k = 0; k < round.size(); ++k)
      for (Eigen::Index r = 0; r < X.rows(); ++r)
        scores(r, static_cast<Eigen::Index>(k)) += learning_rate * round[k].predict(X.row(r));
  return scores;
}

Eigen::MatrixXd GbdtModel::predict_proba(const Eigen::MatrixXd& X) const { return softmax(decision_function(X)); }

// ---------------------------------------------------------------------------

std::string_view to_string(ModelFamily family) {
  switch (family) {
    case ModelFamily::tree: return "tree";
    case ModelFamily::forest: return "forest";
    case ModelFamily::gbdt: return "gbdt";
  }
  return "?";
}

ModelFamily parse_model_family(std::string_view text) {
  if (text == "tree" || text == "decision_tree") return ModelFamily::tree;
  if (text == "forest" || text == "random_forest") return ModelFamily::forest;
  if (text == "gbdt" || text == "hist_gradient_boosting") return ModelFamily::gbdt;
  throw ConfigError("unknown model family: " + std::string(text));
}

Model fit_model(const ModelSpec& spec, const Eigen::MatrixXd& X, std::span<const int> y, int n_classes,
                std::size_t threads) {
  switch (spec.family) {
    case ModelFamily::tree: return fit_tree(X, y, n_classes, spec.tree);
    case ModelFamily::forest: return fit_forest(X, y, n_classes, spec.forest, threads);
    case ModelFamily::gbdt: return fit_gbdt(X, y, n_classes, spec.gbdt, threads);
  }
  throw ConfigError("unknown model family");
}

int model_features(const Model& model) {
  return std::visit([](const auto& m) { return m.n_features; }, model);
}

int model_classes(const Model& model) {
  return std::visit([](const auto& m) { return m.n_classes; }, model);
}

Eigen::MatrixXd predict_proba(const Model& model, const Eigen::MatrixXd& X) {
  return std::visit([&](const auto& m) { return m.predict_proba(X); }, model);
}

std::vector<int> argmax_rows(const Eigen::MatrixXd& proba) {
  std::vector<int> out(static_cast<std::size_t>(proba.rows()));
  for (Eigen::Index r = 0; r < proba.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < proba.cols(); ++c)
      if (proba(r, c) > proba(r, best)) best = c;
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

std::vector<int> predict(const Model& model, const Eigen::MatrixXd& X) { return argmax_rows(predict_proba(model, X)); }

Eigen::VectorXd impurity_importance(const Model& model) {
  Eigen::VectorXd raw = Eigen::VectorXd::Zero(model_features(model));
  if (const auto* tree = std::get_if<DecisionTree>(&model)) {
    raw = tree->impurity_decrease();
  } else if (const auto* forest = std::get_if<ForestModel>(&model)) {
    // Each tree is normalized before averaging.
    for (const auto& t : forest->trees) {
      const Eigen::VectorXd d = t.impurity_decrease();
      if (d.sum() > 0.0) raw += d / d.sum();
    }
  } else {
    for (const auto& round : std::get<GbdtModel>(model).rounds)
      for (const auto& t : round)
        for (const auto& node : t.nodes)
          if (!node.is_leaf()) raw[node.feature] += node.gain;
  }
  const double total = raw.sum();
  return total > 0.0 ? Eigen::VectorXd(raw / total) : raw;
}

// ---------------------------------------------------------------------------

PermutationImportance permutation_importance(const Model& model, const Eigen::MatrixXd& X, std::span<const int> y,
                                             ImportanceMetric metric, std::uint64_t seed, bool per_class,
                                             int repeats, std::size_t threads) {
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  const int K = model_classes(model);
  const auto p = X.cols();
  auto evaluate = [&](const Eigen::MatrixXd& data, double& overall, Eigen::VectorXd& class_f1) {
    const auto cm = confusion_matrix(y, predict(model, data), K);
    const auto scores = prf_macro(cm);
    overall = metric == ImportanceMetric::accuracy ? accuracy(cm) : scores.f1;
    class_f1 = scores.per_class_f1;
  };
  double base = 0.0;
  Eigen::VectorXd base_class;
  evaluate(X, base, base_class);

  PermutationImportance result;
  result.mean_drop = Eigen::VectorXd::Zero(p);
  if (per_class) result.per_class_drop = Eigen::MatrixXd::Zero(K, p);
  parallel_for(static_cast<std::size_t>(p), threads, [&](std::size_t j) {
    Eigen::MatrixXd shuffled = X;
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(X.rows()));
    for (int rep = 0; rep < repeats; ++rep) {
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng(derive_seed(seed, {j, static_cast<std::uint64_t>(rep)}));
      shuffle(std::span<Eigen::Index>(perm), rng);
      for (Eigen::Index r = 0; r < X.rows(); ++r)
        shuffled(r, static_cast<Eigen::Index>(j)) = X(perm[static_cast<std::size_t>(r)], static_cast<Eigen::Index>(j));
      double value = 0.0;
      Eigen::VectorXd class_f1;
      evaluate(shuffled, value, class_f1);
      result.mean_drop[static_cast<Eigen::Index>(j)] += (base - value) / repeats;
      if (per_class) result.per_class_drop.col(static_cast<Eigen::Index>(j)) += (base_class - class_f1) / repeats;
    }
  });
  return result;
}

RfeResult rfe(const Eigen::MatrixXd& X, std::span<const std::string> names, std::span<const int> y, int n_classes,
              const ModelSpec& spec, const RfeParams& params, std::size_t threads) {
  if (static_cast<std::size_t>(X.cols()) != names.size()) throw DataError("rfe: names and columns differ");
  if (names.size() < 2) throw DataError("rfe needs at least two features");
  if (params.step < 1) throw ConfigError("rfe step must be >= 1");
  std::vector<Eigen::Index> active(names.size());
  std::iota(active.begin(), active.end(), 0);
  RfeResult result;
  auto fit_importance = [&](const std::vector<Eigen::Index>& cols) {
    Eigen::MatrixXd sub(X.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) sub.col(static_cast<Eigen::Index>(j)) = X.col(cols[j]);
    return impurity_importance(fit_model(spec, sub, y, n_classes, threads));
  };
  auto names_of = [&](const std::vector<Eigen::Index>& cols) {
    std::vector<std::string> out;
    for (auto c : cols) out.push_back(names[static_cast<std::size_t>(c)]);
    return out;
  };

  Eigen::VectorXd importance = fit_importance(active);
  while (active.size() > 1) {
    std::vector<std::size_t> below;
    for (std::size_t j = 0; j < active.size(); ++j)
      if (importance[static_cast<Eigen::Index>(j)] < params.keep_threshold) below.push_back(j);
    if (below.empty()) break;
    std::stable_sort(below.begin(), below.end(), [&](std::size_t a, std::size_t b) {
      return importance[static_cast<Eigen::Index>(a)] < importance[static_cast<Eigen::Index>(b)];
    });
    const std::size_t count = std::min({params.step, below.size(), active.size() - 1});
    RfeRound round{names_of(active), importance, {}};
    std::vector<bool> remove(active.size(), false);
    for (std::size_t i = 0; i < count; ++i) {
      remove[below[i]] = true;
      round.eliminated.push_back(names[static_cast<std::size_t>(active[below[i]])]);
    }
    std::vector<Eigen::Index> next;
    for (std::size_t j = 0; j < active.size(); ++j)
      if (!remove[j]) next.push_back(active[j]);
    active = std::move(next);
    result.trace.push_back(std::move(round));
    importance = fit_importance(active);
  }
  result.final_features = names_of(active);
  result.final_importance = importance;
  for (std::size_t j = 0; j < active.size(); ++j)
    if (importance[static_cast<Eigen::Index>(j)] >= params.keep_threshold) result.selected.push_back(result.final_features[j]);
  return result;
}

}  // namespace uavids
