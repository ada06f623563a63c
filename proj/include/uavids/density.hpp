#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uavids/dataset.hpp"
#include "uavids/errors.hpp"

namespace uavids {

enum class BandwidthPolicy { scott, silverman, cv };
std::string_view to_string(BandwidthPolicy policy);
BandwidthPolicy parse_bandwidth_policy(std::string_view text);

/// Sample standard deviation (n - 1 denominator).
double sample_sd(std::span<const double> x);

/// Bandwidth used when a sample has no spread: 1e-3 * max(|x|, 1).
double fallback_bandwidth(std::span<const double> x);

/// sd * n^(-1/5).
double scott_bandwidth(std::span<const double> x, Warnings* warnings = nullptr);
/// 0.9 * min(sd, IQR / 1.34) * n^(-1/5).
double silverman_bandwidth(std::span<const double> x, Warnings* warnings = nullptr);

/// `count` log-spaced values in [0.1 * reference, 10 * reference].
std::vector<double> log_spaced_candidates(double reference, int count);

struct CvBandwidthOptions {
  std::vector<double> candidates;  // empty: log_spaced_candidates(scott, n_candidates)
  int n_candidates = 20;
  int folds = 5;
  std::uint64_t seed = 0;
};

/// Mean held-out log-likelihood of each candidate over a seeded k-fold split
/// (density floored at 1e-300 inside the log). Exact kernel sums for small
/// samples; larger samples use a linearly binned FFT estimate.
Eigen::VectorXd cv_log_likelihoods(std::span<const double> x, std::span<const double> candidates, int folds,
                                   std::uint64_t seed);

/// Candidate maximizing the held-out log-likelihood; ties go to the larger h.
double cv_bandwidth(std::span<const double> x, const CvBandwidthOptions& options = {}, Warnings* warnings = nullptr);

struct BandwidthOptions {
  BandwidthPolicy policy = BandwidthPolicy::scott;
  CvBandwidthOptions cv;
};

double select_bandwidth(std::span<const double> x, const BandwidthOptions& options, Warnings* warnings = nullptr);

/// Univariate Gaussian kernel density estimate.
struct KdeModel {
  Eigen::VectorXd samples;
  double bandwidth = 1.0;
  BandwidthPolicy policy = BandwidthPolicy::scott;

  std::span<const double> values() const {
    return {samples.data(), static_cast<std::size_t>(samples.size())};
  }
};

KdeModel fit_kde(std::span<const double> x, const BandwidthOptions& options, Warnings* warnings = nullptr);
KdeModel make_kde(std::span<const double> x, double bandwidth);

inline constexpr double kInvSqrt2Pi = 0.3989422804014327;

/// f(x) = 1/(n h) sum_j phi((x - x_j) / h), evaluated directly at every point.
template <typename Derived>
Eigen::VectorXd kde_eval(const KdeModel& model, const Eigen::DenseBase<Derived>& points) {
  const double h = model.bandwidth;
  const auto n = static_cast<double>(model.samples.size());
  Eigen::VectorXd out(points.size());
  for (Eigen::Index i = 0; i < points.size(); ++i) {
    const double x = points(i);
    out[i] = ((model.samples.array() - x) / h).square().unaryExpr([](double z2) { return std::exp(-0.5 * z2); }).sum();
  }
  return out * (kInvSqrt2Pi / (n * h));
}

/// Uniform evaluation grid.
struct EvalGrid {
  Eigen::VectorXd points;
  double spacing = 0.0;

  Eigen::Index size() const { return points.size(); }
  double lo() const { return points[0]; }
  double hi() const { return points[points.size() - 1]; }
};

/// G points over [min(all) - 5 h_max, max(all) + 5 h_max].
EvalGrid make_grid(std::span<const double> a, std::span<const double> b, double h_a, double h_b, int size = 512);
EvalGrid make_grid(std::span<const std::span<const double>> samples, double h_max, int size = 512);

enum class KdeEngine { automatic, exact, binned };

/// Density values on a uniform grid. `exact` sums every kernel (using a
/// multiplicative recurrence along the grid, truncated beyond 8.5 h);
/// `binned` linearly bins samples onto a 4x finer grid first. `automatic`
/// bins only when the sample outnumbers the fine grid.
Eigen::VectorXd kde_on_grid(const KdeModel& model, const EvalGrid& grid, KdeEngine engine = KdeEngine::automatic);

/// Two class-conditional probability mass vectors on a shared grid.
struct DensityPair {
  EvalGrid grid;
  Eigen::VectorXd p;
  Eigen::VectorXd q;
};

/// p_g = f_a(x_g) / sum f_a, q likewise. DataError when a density vanishes
/// on the whole grid.
DensityPair to_mass_pair(const KdeModel& a, const KdeModel& b, const EvalGrid& grid,
                         KdeEngine engine = KdeEngine::automatic);

/// Jensen-Shannon divergence with base-2 logs; 0 log 0 = 0. In [0, 1].
template <typename DP, typename DQ>
typename DP::Scalar js_divergence(const Eigen::MatrixBase<DP>& p, const Eigen::MatrixBase<DQ>& q) {
  using Scalar = typename DP::Scalar;
  Scalar sum(0);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const Scalar pi = p(i), qi = q(i);
    const Scalar m = (pi + qi) / Scalar(2);
    const Scalar tp = pi > Scalar(0) ? pi * std::log2(pi / m) : Scalar(0);
    const Scalar tq = qi > Scalar(0) ? qi * std::log2(qi / m) : Scalar(0);
    sum += tp + tq;  // paired so that swapping p and q is exact
  }
  return std::clamp(sum / Scalar(2), Scalar(0), Scalar(1));
}

/// Square root of the Jensen-Shannon divergence; a metric on mass vectors.
template <typename DP, typename DQ>
typename DP::Scalar js_distance(const Eigen::MatrixBase<DP>& p, const Eigen::MatrixBase<DQ>& q) {
  return std::sqrt(js_divergence(p, q));
}

inline double js_distance(const DensityPair& pair) { return js_distance(pair.p, pair.q); }

/// sum_g min(p_g, q_g).
template <typename DP, typename DQ>
typename DP::Scalar overlap_coefficient(const Eigen::MatrixBase<DP>& p, const Eigen::MatrixBase<DQ>& q) {
  return p.cwiseMin(q).sum();
}

inline double overlap_coefficient(const DensityPair& pair) { return overlap_coefficient(pair.p, pair.q); }

/// (1/2) sum_g |p_g - q_g|.
template <typename DP, typename DQ>
typename DP::Scalar total_variation(const Eigen::MatrixBase<DP>& p, const Eigen::MatrixBase<DQ>& q) {
  return (p - q).cwiseAbs().sum() / typename DP::Scalar(2);
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Maximal grid runs where min(p_g, q_g) > eps, in feature units. Default
/// eps = 1e-3 * max(max p, max q).
std::vector<Interval> overlap_intervals(const DensityPair& pair, std::optional<double> eps = std::nullopt);

struct ClassShape {
  int class_id = 0;
  std::string class_name;
  std::size_t n = 0;
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  std::size_t outliers = 0;  // 1.5 IQR rule
  double bandwidth = 0.0;
  Eigen::VectorXd density;  // on FeatureShape::grid
};

/// Box-plot and violin data for one feature, one entry per class present.
struct FeatureShape {
  std::string feature;
  EvalGrid grid;
  std::vector<ClassShape> classes;
};

FeatureShape shape_summary(const ColumnTable& table, const std::string& feature,
                           const BandwidthOptions& bandwidth = {}, int grid_size = 512,
                           Warnings* warnings = nullptr);

}  // namespace uavids
