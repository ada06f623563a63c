#include "uavids/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>

#include "uavids/parallel.hpp"

namespace uavids {

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw DataError("quantile of an empty vector");
  if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("quantile level must lie in [0, 1]");
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

double quantile(std::span<const double> x, double q) {
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  return quantile_sorted(sorted, q);
}

RobustScalerState robust_fit(std::span<const double> x) {
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  RobustScalerState s;
  s.median = quantile_sorted(sorted, 0.5);
  s.iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  return s;
}

Eigen::VectorXd robust_transform(std::span<const double> x, const RobustScalerState& state) {
  return robust_transform(Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()))), state);
}

std::vector<bool> iqr_outlier_mask(std::span<const double> x, double k) {
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  const double q1 = quantile_sorted(sorted, 0.25);
  const double q3 = quantile_sorted(sorted, 0.75);
  const double lo = q1 - k * (q3 - q1);
  const double hi = q3 + k * (q3 - q1);
  std::vector<bool> mask(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) mask[i] = x[i] < lo || x[i] > hi;
  return mask;
}

std::size_t iqr_outlier_count(std::span<const double> x, double k) {
  const auto mask = iqr_outlier_mask(x, k);
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

// ---------------------------------------------------------------------------

std::string EngineeredFeature::output_name() const {
  if (!name.empty()) return name;
  if (kind == TransformKind::reciprocal) return "1/" + source;
  std::ostringstream os;
  os << source << '^' << exponent;
  return os.str();
}

ColumnTable engineer_features(const ColumnTable& table, std::span<const EngineeredFeature> features) {
  ColumnTable out = table;
  for (const auto& f : features) {
    const Eigen::VectorXd& x = table.numeric(f.source);
    Eigen::VectorXd y(x.size());
    if (f.kind == TransformKind::reciprocal) {
      y = (x.array() + kReciprocalEpsilon).inverse();
    } else {
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double magnitude = std::pow(std::abs(x[i]), f.exponent);
        y[i] = x[i] < 0.0 ? -magnitude : magnitude;
      }
    }
    if (!y.allFinite()) throw DataError("engineered feature " + f.output_name() + " produced non-finite values");
    out.add_numeric(f.output_name(), std::move(y));
  }
  return out;
}

// ---------------------------------------------------------------------------

double pearson_corr(std::span<const double> x, std::span<const double> y, Warnings* warnings) {
  if (x.size() != y.size() || x.size() < 2) throw DataError("pearson_corr needs two equal-length vectors of length >= 2");
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) {
    warn(warnings, "pearson correlation undefined for a zero-variance input; reported as 0");
    return 0.0;
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

// Number of tied pairs within runs of equal values in a sorted sequence.
template <typename It, typename Eq>
std::uint64_t tied_pairs(It first, It last, Eq equal) {
  std::uint64_t ties = 0, run = 1;
  for (It it = first; it != last; ++it) {
    if (it != first && equal(*(it - 1), *it)) {
      ++run;
    } else {
      ties += run * (run - 1) / 2;
      run = 1;
    }
  }
  return ties + run * (run - 1) / 2;
}

// Sorts v ascending and returns the number of swaps a bubble sort would need.
std::uint64_t merge_sort_swaps(std::vector<double>& v, std::vector<double>& buffer, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::uint64_t swaps = merge_sort_swaps(v, buffer, lo, mid) + merge_sort_swaps(v, buffer, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += mid - i;
      buffer[k++] = v[j++];
    } else {
      buffer[k++] = v[i++];
    }
  }
  while (i < mid) buffer[k++] = v[i++];
  while (j < hi) buffer[k++] = v[j++];
  std::copy(buffer.begin() + static_cast<std::ptrdiff_t>(lo), buffer.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

}  // namespace

double kendall_tau_b(std::span<const double> x, std::span<const double> y, Warnings* warnings) {
  if (x.size() != y.size() || x.size() < 2) throw DataError("kendall_tau_b needs two equal-length vectors of length >= 2");
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
  });

  const std::uint64_t n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  const std::uint64_t x_ties = tied_pairs(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] == x[b]; });
  const std::uint64_t joint_ties = tied_pairs(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] == x[b] && y[a] == y[b];
  });

  std::vector<double> ys(n), buffer(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[order[i]];
  const std::uint64_t swaps = merge_sort_swaps(ys, buffer, 0, n);
  const std::uint64_t y_ties = tied_pairs(ys.begin(), ys.end(), [](double a, double b) { return a == b; });

  if (x_ties == n0 || y_ties == n0) {
    warn(warnings, "kendall tau-b undefined for a constant input; reported as 0");
    return 0.0;
  }
  // concordant - discordant
  const auto numerator = static_cast<std::int64_t>(n0 - x_ties - y_ties + joint_ties) - 2 * static_cast<std::int64_t>(swaps);
  const double denominator = std::sqrt(static_cast<double>(n0 - x_ties) * static_cast<double>(n0 - y_ties));
  return std::clamp(static_cast<double>(numerator) / denominator, -1.0, 1.0);
}

std::string_view to_string(CorrelationMethod method) {
  return method == CorrelationMethod::pearson ? "pearson" : "kendall";
}

CorrelationMatrix correlation_matrix(const ColumnTable& table, std::span<const std::string> names,
                                     CorrelationMethod method, std::size_t threads, Warnings* warnings) {
  const auto p = static_cast<Eigen::Index>(names.size());
  CorrelationMatrix m{method, std::vector<std::string>(names.begin(), names.end()), Eigen::MatrixXd::Identity(p, p)};
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = i + 1; j < p; ++j) pairs.emplace_back(i, j);
  std::vector<Warnings> pair_warnings(pairs.size());
  parallel_for(pairs.size(), threads, [&](std::size_t k) {
    const auto [i, j] = pairs[k];
    const auto& a = table.numeric(names[static_cast<std::size_t>(i)]);
    const auto& b = table.numeric(names[static_cast<std::size_t>(j)]);
    const std::span<const double> sa(a.data(), static_cast<std::size_t>(a.size()));
    const std::span<const double> sb(b.data(), static_cast<std::size_t>(b.size()));
    const double r = method == CorrelationMethod::pearson ? pearson_corr(sa, sb, &pair_warnings[k])
                                                          : kendall_tau_b(sa, sb, &pair_warnings[k]);
    m.values(i, j) = m.values(j, i) = r;
  });
  for (std::size_t k = 0; k < pairs.size(); ++k)
    for (auto& w : pair_warnings[k])
      warn(warnings, names[static_cast<std::size_t>(pairs[k].first)] + " vs " +
                         names[static_cast<std::size_t>(pairs[k].second)] + ": " + w);
  return m;
}

CorrelationDropResult drop_correlated(const ColumnTable& table, std::span<const std::string> names,
                                      double threshold, std::size_t threads, Warnings* warnings) {
  if (names.size() < 2) throw DataError("drop_correlated needs at least two numeric columns");
  CorrelationDropResult result;
  result.pearson = correlation_matrix(table, names, CorrelationMethod::pearson, threads, warnings);
  result.kendall = correlation_matrix(table, names, CorrelationMethod::kendall, threads, warnings);
  const Eigen::MatrixXd abs_p = result.pearson.values.cwiseAbs();
  const Eigen::MatrixXd abs_k = result.kendall.values.cwiseAbs();
  const Eigen::MatrixXd strength = abs_p.cwiseMax(abs_k);
  const auto p = static_cast<Eigen::Index>(names.size());
  std::vector<bool> alive(static_cast<std::size_t>(p), true);

  auto mean_abs = [&](Eigen::Index i) {
    double sum = 0.0;
    int count = 0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (j == i || !alive[static_cast<std::size_t>(j)]) continue;
      sum += 0.5 * (abs_p(i, j) + abs_k(i, j));
      ++count;
    }
    return count > 0 ? sum / count : 0.0;
  };

  for (;;) {
    Eigen::Index bi = -1, bj = -1;
    double best = -1.0;
    for (Eigen::Index i = 0; i < p; ++i) {
      if (!alive[static_cast<std::size_t>(i)]) continue;
      for (Eigen::Index j = i + 1; j < p; ++j) {
        if (!alive[static_cast<std::size_t>(j)]) continue;
        if (strength(i, j) >= threshold && strength(i, j) > best) {
          best = strength(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    if (bi < 0) break;
    // Ties in mean correlation drop the later column.
    const Eigen::Index drop = mean_abs(bi) > mean_abs(bj) ? bi : bj;
    const Eigen::Index keep = drop == bi ? bj : bi;
    const bool by_pearson = abs_p(bi, bj) >= abs_k(bi, bj);
    DroppedFeature d;
    d.name = names[static_cast<std::size_t>(drop)];
    d.partner = names[static_cast<std::size_t>(keep)];
    d.method = by_pearson ? CorrelationMethod::pearson : CorrelationMethod::kendall;
    d.coefficient = by_pearson ? result.pearson.values(bi, bj) : result.kendall.values(bi, bj);
    std::ostringstream reason;
    reason << '|' << to_string(d.method) << "(" << d.name << ", " << d.partner << ")| = " << std::abs(d.coefficient)
           << " >= " << threshold;
    d.reason = reason.str();
    result.dropped.push_back(std::move(d));
    alive[static_cast<std::size_t>(drop)] = false;
  }
  for (Eigen::Index i = 0; i < p; ++i)
    if (alive[static_cast<std::size_t>(i)]) result.retained.push_back(names[static_cast<std::size_t>(i)]);
  return result;
}

}  // namespace uavids
