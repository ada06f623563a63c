#pragma once

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

#include "uavids/dataset.hpp"
#include "uavids/errors.hpp"

namespace uavids {

/// Linear-interpolation quantile of unsorted values: with sorted x and
/// h = q (n - 1), x[floor(h)] + frac(h) (x[floor(h) + 1] - x[floor(h)]).
double quantile(std::span<const double> x, double q);
/// Same, for values already sorted ascending.
double quantile_sorted(std::span<const double> sorted, double q);

template <typename Derived>
double quantile(const Eigen::DenseBase<Derived>& x, double q) {
  const Eigen::VectorXd v = x;
  return quantile(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())), q);
}

struct RobustScalerState {
  double median = 0.0;
  double iqr = 0.0;

  /// IQR with zero replaced by one.
  double scale() const { return iqr > 0.0 ? iqr : 1.0; }
};

RobustScalerState robust_fit(std::span<const double> x);
Eigen::VectorXd robust_transform(std::span<const double> x, const RobustScalerState& state);

inline RobustScalerState robust_fit(const Eigen::VectorXd& x) {
  return robust_fit(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
}
inline Eigen::VectorXd robust_transform(const Eigen::VectorXd& x, const RobustScalerState& state) {
  return (x.array() - state.median) / state.scale();
}

/// True where x < Q1 - k IQR or x > Q3 + k IQR.
std::vector<bool> iqr_outlier_mask(std::span<const double> x, double k = 1.5);
std::size_t iqr_outlier_count(std::span<const double> x, double k = 1.5);

enum class TransformKind { power, reciprocal };

struct EngineeredFeature {
  std::string source;
  TransformKind kind = TransformKind::power;
  double exponent = 1.0;  // power only
  /// Output column name; empty selects "<source>^<p>" or "1/<source>".
  std::string name;

  std::string output_name() const;
};

inline constexpr double kReciprocalEpsilon = 1e-9;

/// Appends sign(x)|x|^p or 1/(x + 1e-9) columns for each entry.
ColumnTable engineer_features(const ColumnTable& table, std::span<const EngineeredFeature> features);

/// Sample Pearson correlation. Zero variance in either input gives 0 and a warning.
double pearson_corr(std::span<const double> x, std::span<const double> y, Warnings* warnings = nullptr);

/// Kendall tau-b with tie correction, O(n log n) via merge-sort inversion
/// counting. Undefined (all-tied) inputs give 0 and a warning.
double kendall_tau_b(std::span<const double> x, std::span<const double> y, Warnings* warnings = nullptr);

enum class CorrelationMethod { pearson, kendall };
std::string_view to_string(CorrelationMethod method);

struct CorrelationMatrix {
  CorrelationMethod method = CorrelationMethod::pearson;
  std::vector<std::string> names;
  Eigen::MatrixXd values;  // symmetric, unit diagonal
};

CorrelationMatrix correlation_matrix(const ColumnTable& table, std::span<const std::string> names,
                                     CorrelationMethod method, std::size_t threads = 1,
                                     Warnings* warnings = nullptr);

struct DroppedFeature {
  std::string name;
  std::string partner;  // the retained member of the violating pair
  CorrelationMethod method = CorrelationMethod::pearson;
  double coefficient = 0.0;
  std::string reason;
};

struct CorrelationDropResult {
  std::vector<std::string> retained;
  std::vector<DroppedFeature> dropped;
  CorrelationMatrix pearson;  // over the input names
  CorrelationMatrix kendall;
};

/// A pair violates when |coefficient| >= threshold under Pearson or Kendall.
/// The strongest violating pair is resolved first by dropping the member
/// with the larger mean absolute correlation to the other retained
/// features; repeats until no pair violates.
CorrelationDropResult drop_correlated(const ColumnTable& table, std::span<const std::string> names,
                                      double threshold = 0.7, std::size_t threads = 1,
                                      Warnings* warnings = nullptr);

}  // namespace uavids
