#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "uavids/dataset.hpp"
#include "uavids/density.hpp"
#include "uavids/errors.hpp"

namespace uavids {

/// Whether permutations re-select bandwidths or reuse the observed ones.
enum class BandwidthMode { reoptimize, frozen };
std::string_view to_string(BandwidthMode mode);
BandwidthMode parse_bandwidth_mode(std::string_view text);

struct WyConfig {
  std::string class_v;
  std::string class_w;
  int permutations = 1000;
  double alpha = 0.05;
  BandwidthPolicy policy = BandwidthPolicy::cv;
  BandwidthMode bandwidth_mode = BandwidthMode::reoptimize;
  int grid_size = 512;
  int cv_candidates = 10;
  int cv_folds = 3;
  KdeEngine engine = KdeEngine::automatic;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  /// Called once per (permutation, feature) with a hash of the label vector
  /// used; permutation 0 is the observed labelling. May run concurrently.
  std::function<void(std::size_t b, std::size_t feature, std::uint64_t labels_hash)> observer;

  void validate() const;
};

/// JS distance between the two groups' KDEs for one feature.
struct FeatureStatistic {
  double statistic = 0.0;
  double bandwidth_v = 0.0;
  double bandwidth_w = 0.0;
  std::size_t n_v = 0;
  std::size_t n_w = 0;
};

struct FeatureTestResult {
  std::string feature;
  double statistic = 0.0;  // observed JS distance T_i
  double p_value = 1.0;    // FWER-adjusted
  std::size_t n_v = 0;
  std::size_t n_w = 0;
  double bandwidth_v = 0.0;
  double bandwidth_w = 0.0;
};

struct WyTestReport {
  std::vector<FeatureTestResult> features;
  std::vector<double> max_trace;  // max_i T_{i,b} for b = 1..B
  WyConfig config;                // echo, observer cleared
  Warnings warnings;
};

/// Pooled two-class sample: one column per feature plus a 0 (V) / 1 (W) label.
struct PooledSample {
  std::vector<std::string> features;
  std::vector<Eigen::VectorXd> values;  // per feature, rows of V and W in table order
  std::vector<int> labels;              // 0 = V, 1 = W

  static PooledSample from_table(const ColumnTable& table, std::span<const std::string> features,
                                 const std::string& class_v, const std::string& class_w);
  std::size_t rows() const { return labels.size(); }
};

/// Statistic for one feature under a given labelling. `bandwidths`, when
/// non-null, fixes (h_v, h_w) instead of selecting them.
FeatureStatistic feature_statistic(const Eigen::VectorXd& pooled, std::span<const int> labels, const WyConfig& config,
                                   std::uint64_t seed, const std::pair<double, double>* bandwidths = nullptr,
                                   Warnings* warnings = nullptr);

/// Observed statistics T_i for each feature.
std::vector<FeatureStatistic> observed_stats(const PooledSample& sample, const WyConfig& config,
                                             Warnings* warnings = nullptr);

/// Uniform permutation of the pooled labels for iteration b, seeded by
/// derive_seed(master_seed, {b}). Requires both label values present.
std::vector<int> permute_labels(std::span<const int> labels, std::uint64_t b, std::uint64_t master_seed);

std::uint64_t labels_hash(std::span<const int> labels);

/// (1 + #{b : trace_b >= T}) / (B + 1).
double adjusted_p_value(double statistic, std::span<const double> max_trace);

/// Single-step maxT: every permutation applies one shared relabelling to all
/// features and records the maximum statistic.
WyTestReport wy_maxT(const PooledSample& sample, const WyConfig& config);
WyTestReport wy_maxT(const ColumnTable& table, std::span<const std::string> features, const WyConfig& config);

struct WyDecision {
  std::vector<bool> reject;  // per feature: p < alpha
  bool family_reject = false;
};

WyDecision decide(const WyTestReport& report, double alpha);

/// "<0.001" below 0.001, otherwise six decimals.
std::string format_p_value(double p);

}  // namespace uavids
