#include "uavids/density.hpp"

#include <unsupported/Eigen/FFT>

#include <complex>
#include <limits>
#include <numeric>

#include "uavids/preprocess.hpp"
#include "uavids/random.hpp"

namespace uavids {

namespace {

// Kernel terms beyond this many bandwidths are below 1e-15 of the peak.
constexpr double kKernelCutoff = 8.5;
constexpr double kDensityFloor = 1e-300;
// exp(-z^2 / 2) underflows to zero beyond this, so held-out sums stay exact.
constexpr double kCvKernelCutoff = 38.6;
// Samples above this size use the binned cross-validation path.
constexpr std::size_t kExactCvLimit = 2000;
constexpr int kCvBinnedGrid = 4096;
constexpr int kFineFactor = 4;

std::string describe_sample(std::span<const double> x) {
  return "sample of size " + std::to_string(x.size());
}

// Mass of each sample spread linearly onto the two neighbouring points of a
// uniform grid starting at lo with the given spacing.
Eigen::VectorXd linear_bin(std::span<const double> x, double lo, double spacing, Eigen::Index size) {
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(size);
  for (double v : x) {
    const double pos = (v - lo) / spacing;
    auto i = static_cast<Eigen::Index>(std::floor(pos));
    if (i < 0) {
      counts[0] += 1.0;
      continue;
    }
    if (i >= size - 1) {
      counts[size - 1] += 1.0;
      continue;
    }
    const double frac = pos - static_cast<double>(i);
    counts[i] += 1.0 - frac;
    counts[i + 1] += frac;
  }
  return counts;
}

// Gaussian kernel sums of samples at the points lo + g * spacing using
// exp(-z^2/2) ratios between neighbouring grid points.
Eigen::VectorXd exact_grid_sums(std::span<const double> x, double h, double lo, double spacing, Eigen::Index size) {
  Eigen::VectorXd sums = Eigen::VectorXd::Zero(size);
  const double d = spacing / h;
  const double step_decay = std::exp(-d * d);
  for (double xj : x) {
    auto g0 = static_cast<Eigen::Index>(std::llround((xj - lo) / spacing));
    g0 = std::clamp<Eigen::Index>(g0, 0, size - 1);
    const double z0 = (lo + static_cast<double>(g0) * spacing - xj) / h;
    if (std::abs(z0) > kKernelCutoff) continue;
    if (d > 0.5) {
      // Coarse grid relative to h: only a few points are in reach.
      const auto reach = static_cast<Eigen::Index>(std::ceil(kKernelCutoff / d)) + 1;
      for (Eigen::Index g = std::max<Eigen::Index>(0, g0 - reach); g <= std::min(size - 1, g0 + reach); ++g) {
        const double z = (lo + static_cast<double>(g) * spacing - xj) / h;
        sums[g] += std::exp(-0.5 * z * z);
      }
      continue;
    }
    const double k0 = std::exp(-0.5 * z0 * z0);
    sums[g0] += k0;
    // Rightwards: k(g+1) = k(g) * exp(-z d - d^2/2); the ratio itself decays by exp(-d^2).
    double k = k0, ratio = std::exp(-z0 * d - 0.5 * d * d), z = z0;
    for (Eigen::Index g = g0 + 1; g < size; ++g) {
      k *= ratio;
      ratio *= step_decay;
      z += d;
      if (z > kKernelCutoff) break;
      sums[g] += k;
    }
    k = k0;
    ratio = std::exp(z0 * d - 0.5 * d * d);
    z = z0;
    for (Eigen::Index g = g0 - 1; g >= 0; --g) {
      k *= ratio;
      ratio *= step_decay;
      z -= d;
      if (z < -kKernelCutoff) break;
      sums[g] += k;
    }
  }
  return sums;
}

// Linear convolution of counts with a symmetric kernel table via FFT.
class BinnedConvolver {
 public:
  explicit BinnedConvolver(const Eigen::VectorXd& counts) : size_(counts.size()) {
    n_fft_ = 1;
    while (n_fft_ < 2 * static_cast<std::size_t>(size_)) n_fft_ <<= 1;
    std::vector<double> padded(n_fft_, 0.0);
    std::copy(counts.data(), counts.data() + size_, padded.begin());
    fft_.fwd(counts_hat_, padded);
  }

  Eigen::VectorXd convolve(const Eigen::VectorXd& kernel_half) {
    std::vector<double> kernel(n_fft_, 0.0);
    const auto width = std::min<std::size_t>(static_cast<std::size_t>(kernel_half.size()), static_cast<std::size_t>(size_));
    for (std::size_t k = 0; k < width; ++k) {
      kernel[k] = kernel_half[static_cast<Eigen::Index>(k)];
      if (k > 0) kernel[n_fft_ - k] = kernel_half[static_cast<Eigen::Index>(k)];
    }
    std::vector<std::complex<double>> kernel_hat;
    fft_.fwd(kernel_hat, kernel);
    for (std::size_t i = 0; i < n_fft_; ++i) kernel_hat[i] *= counts_hat_[i];
    std::vector<double> out;
    fft_.inv(out, kernel_hat);
    Eigen::VectorXd result(size_);
    for (Eigen::Index i = 0; i < size_; ++i) result[i] = std::max(0.0, out[static_cast<std::size_t>(i)]);
    return result;
  }

 private:
  Eigen::Index size_;
  std::size_t n_fft_ = 0;
  Eigen::FFT<double> fft_;
  std::vector<std::complex<double>> counts_hat_;
};

Eigen::VectorXd kernel_table(double h, double spacing, Eigen::Index max_len) {
  const auto len = std::min<Eigen::Index>(max_len, static_cast<Eigen::Index>(std::ceil(kKernelCutoff * h / spacing)) + 1);
  Eigen::VectorXd table(len);
  for (Eigen::Index k = 0; k < len; ++k) {
    const double z = static_cast<double>(k) * spacing / h;
    table[k] = std::exp(-0.5 * z * z);
  }
  return table;
}

std::vector<int> fold_of(std::size_t n, int folds, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  shuffle(std::span<std::size_t>(order), rng);
  std::vector<int> fold(n);
  for (std::size_t i = 0; i < n; ++i) fold[order[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));
  return fold;
}

double log_floor(double density) { return std::log(std::max(density, kDensityFloor)); }

}  // namespace

std::string_view to_string(BandwidthPolicy policy) {
  switch (policy) {
    case BandwidthPolicy::scott: return "scott";
    case BandwidthPolicy::silverman: return "silverman";
    case BandwidthPolicy::cv: return "cv";
  }
  return "?";
}

BandwidthPolicy parse_bandwidth_policy(std::string_view text) {
  if (text == "scott") return BandwidthPolicy::scott;
  if (text == "silverman") return BandwidthPolicy::silverman;
  if (text == "cv") return BandwidthPolicy::cv;
  throw ConfigError("unknown bandwidth policy: " + std::string(text) + " (expected scott, silverman or cv)");
}

double sample_sd(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

double fallback_bandwidth(std::span<const double> x) {
  double scale = 1.0;
  for (double v : x) scale = std::max(scale, std::abs(v));
  return 1e-3 * scale;
}

double scott_bandwidth(std::span<const double> x, Warnings* warnings) {
  if (x.empty()) throw DataError("bandwidth of an empty sample");
  const double sd = sample_sd(x);
  if (!(sd > 0.0)) {
    warn(warnings, "zero spread in " + describe_sample(x) + "; using fallback bandwidth");
    return fallback_bandwidth(x);
  }
  return sd * std::pow(static_cast<double>(x.size()), -0.2);
}

double silverman_bandwidth(std::span<const double> x, Warnings* warnings) {
  if (x.empty()) throw DataError("bandwidth of an empty sample");
  const double sd = sample_sd(x);
  const double iqr = x.size() >= 2 ? quantile(x, 0.75) - quantile(x, 0.25) : 0.0;
  const double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) {
    warn(warnings, "zero spread in " + describe_sample(x) + "; using fallback bandwidth");
    return fallback_bandwidth(x);
  }
  return 0.9 * spread * std::pow(static_cast<double>(x.size()), -0.2);
}

std::vector<double> log_spaced_candidates(double reference, int count) {
  if (count < 1) throw ConfigError("candidate count must be >= 1");
  if (count == 1) return {reference};
  std::vector<double> out(static_cast<std::size_t>(count));
  const double lo = std::log(0.1 * reference), hi = std::log(10.0 * reference);
  for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = std::exp(lo + (hi - lo) * i / (count - 1));
  return out;
}

Eigen::VectorXd cv_log_likelihoods(std::span<const double> x, std::span<const double> candidates, int folds,
                                   std::uint64_t seed) {
  if (folds < 2) throw ConfigError("cross-validated bandwidth needs at least 2 folds");
  if (x.size() < static_cast<std::size_t>(folds))
    throw DataError("cross-validated bandwidth needs at least as many samples as folds");
  for (double h : candidates)
    if (!(h > 0.0)) throw ConfigError("bandwidth candidates must be positive");
  const std::size_t n = x.size();
  const auto fold = fold_of(n, folds, seed);
  Eigen::VectorXd total = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(candidates.size()));

  if (n <= kExactCvLimit) {
    for (int f = 0; f < folds; ++f) {
      std::vector<double> train;
      for (std::size_t i = 0; i < n; ++i)
        if (fold[i] != f) train.push_back(x[i]);
      std::sort(train.begin(), train.end());
      const auto n_train = static_cast<double>(train.size());
      for (std::size_t c = 0; c < candidates.size(); ++c) {
        const double h = candidates[c];
        const double norm = kInvSqrt2Pi / (n_train * h);
        for (std::size_t i = 0; i < n; ++i) {
          if (fold[i] != f) continue;
          const auto first = std::lower_bound(train.begin(), train.end(), x[i] - kCvKernelCutoff * h);
          const auto last = std::upper_bound(first, train.end(), x[i] + kCvKernelCutoff * h);
          double sum = 0.0;
          for (auto it = first; it != last; ++it) {
            const double z = (x[i] - *it) / h;
            sum += std::exp(-0.5 * z * z);
          }
          total[static_cast<Eigen::Index>(c)] += log_floor(sum * norm);
        }
      }
    }
    return total / static_cast<double>(n);
  }

  // Binned path: training folds are linearly binned onto a fine grid over the
  // sample range, smoothed by FFT convolution and read back by interpolation.
  const auto [min_it, max_it] = std::minmax_element(x.begin(), x.end());
  double lo = *min_it, hi = *max_it;
  if (hi <= lo) hi = lo + 1.0;
  const Eigen::Index size = kCvBinnedGrid;
  const double spacing = (hi - lo) / static_cast<double>(size - 1);
  for (int f = 0; f < folds; ++f) {
    std::vector<double> train;
    for (std::size_t i = 0; i < n; ++i)
      if (fold[i] != f) train.push_back(x[i]);
    BinnedConvolver conv(linear_bin(train, lo, spacing, size));
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const double h = candidates[c];
      const Eigen::VectorXd density =
          conv.convolve(kernel_table(h, spacing, size)) * (kInvSqrt2Pi / (static_cast<double>(train.size()) * h));
      for (std::size_t i = 0; i < n; ++i) {
        if (fold[i] != f) continue;
        const double pos = (x[i] - lo) / spacing;
        const auto g = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::floor(pos)), 0, size - 2);
        const double frac = std::clamp(pos - static_cast<double>(g), 0.0, 1.0);
        total[static_cast<Eigen::Index>(c)] += log_floor((1.0 - frac) * density[g] + frac * density[g + 1]);
      }
    }
  }
  return total / static_cast<double>(n);
}

double cv_bandwidth(std::span<const double> x, const CvBandwidthOptions& options, Warnings* warnings) {
  if (x.empty()) throw DataError("bandwidth of an empty sample");
  std::vector<double> candidates = options.candidates;
  if (candidates.empty()) {
    if (!(sample_sd(x) > 0.0)) {
      warn(warnings, "zero spread in " + describe_sample(x) + "; using fallback bandwidth");
      return fallback_bandwidth(x);
    }
    candidates = log_spaced_candidates(scott_bandwidth(x), options.n_candidates);
  }
  if (candidates.size() == 1) return candidates.front();
  std::sort(candidates.begin(), candidates.end());
  const Eigen::VectorXd scores = cv_log_likelihoods(x, candidates, options.folds, options.seed);
  std::size_t best = 0;
  for (std::size_t c = 1; c < candidates.size(); ++c)
    if (scores[static_cast<Eigen::Index>(c)] >= scores[static_cast<Eigen::Index>(best)]) best = c;
  return candidates[best];
}

double select_bandwidth(std::span<const double> x, const BandwidthOptions& options, Warnings* warnings) {
  switch (options.policy) {
    case BandwidthPolicy::scott: return scott_bandwidth(x, warnings);
    case BandwidthPolicy::silverman: return silverman_bandwidth(x, warnings);
    case BandwidthPolicy::cv: return cv_bandwidth(x, options.cv, warnings);
  }
  throw ConfigError("unknown bandwidth policy");
}

KdeModel make_kde(std::span<const double> x, double bandwidth) {
  if (x.empty()) throw DataError("KDE needs at least one sample");
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) throw DataError("KDE bandwidth must be positive and finite");
  KdeModel m;
  m.samples = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  m.bandwidth = bandwidth;
  return m;
}

KdeModel fit_kde(std::span<const double> x, const BandwidthOptions& options, Warnings* warnings) {
  KdeModel m = make_kde(x, select_bandwidth(x, options, warnings));
  m.policy = options.policy;
  return m;
}

// ---------------------------------------------------------------------------

EvalGrid make_grid(std::span<const std::span<const double>> samples, double h_max, int size) {
  if (size < 2) throw ConfigError("grid size must be >= 2");
  if (!(h_max > 0.0)) throw DataError("grid padding bandwidth must be positive");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : samples) {
    if (s.empty()) throw DataError("cannot build a grid over an empty sample");
    const auto [a, b] = std::minmax_element(s.begin(), s.end());
    lo = std::min(lo, *a);
    hi = std::max(hi, *b);
  }
  lo -= 5.0 * h_max;
  hi += 5.0 * h_max;
  EvalGrid grid;
  grid.points = Eigen::VectorXd::LinSpaced(size, lo, hi);
  grid.spacing = (hi - lo) / static_cast<double>(size - 1);
  return grid;
}

EvalGrid make_grid(std::span<const double> a, std::span<const double> b, double h_a, double h_b, int size) {
  const std::span<const double> both[] = {a, b};
  return make_grid(both, std::max(h_a, h_b), size);
}

Eigen::VectorXd kde_on_grid(const KdeModel& model, const EvalGrid& grid, KdeEngine engine) {
  const auto x = model.values();
  const double h = model.bandwidth;
  const Eigen::Index G = grid.size();
  const Eigen::Index fine = (G - 1) * kFineFactor + 1;
  if (engine == KdeEngine::automatic)
    engine = static_cast<Eigen::Index>(x.size()) > fine ? KdeEngine::binned : KdeEngine::exact;
  const double norm = kInvSqrt2Pi / (static_cast<double>(x.size()) * h);
  if (engine == KdeEngine::exact) return exact_grid_sums(x, h, grid.lo(), grid.spacing, G) * norm;

  const double fine_spacing = grid.spacing / kFineFactor;
  const Eigen::VectorXd counts = linear_bin(x, grid.lo(), fine_spacing, fine);
  const Eigen::VectorXd table = kernel_table(h, fine_spacing, fine);
  const auto width = table.size();
  Eigen::VectorXd out(G);
  for (Eigen::Index g = 0; g < G; ++g) {
    const Eigen::Index centre = g * kFineFactor;
    const Eigen::Index first = std::max<Eigen::Index>(0, centre - width + 1);
    const Eigen::Index last = std::min<Eigen::Index>(fine - 1, centre + width - 1);
    double sum = 0.0;
    for (Eigen::Index i = first; i <= last; ++i) sum += counts[i] * table[std::abs(i - centre)];
    out[g] = sum * norm;
  }
  return out;
}

DensityPair to_mass_pair(const KdeModel& a, const KdeModel& b, const EvalGrid& grid, KdeEngine engine) {
  DensityPair pair{grid, kde_on_grid(a, grid, engine), kde_on_grid(b, grid, engine)};
  const double sa = pair.p.sum(), sb = pair.q.sum();
  if (!(sa > 0.0) || !(sb > 0.0) || !std::isfinite(sa) || !std::isfinite(sb))
    throw DataError("density vanishes on the evaluation grid; the grid does not cover the samples");
  pair.p /= sa;
  pair.q /= sb;
  return pair;
}

std::vector<Interval> overlap_intervals(const DensityPair& pair, std::optional<double> eps) {
  const double threshold = eps.value_or(1e-3 * std::max(pair.p.maxCoeff(), pair.q.maxCoeff()));
  std::vector<Interval> out;
  const Eigen::Index G = pair.p.size();
  Eigen::Index start = -1;
  for (Eigen::Index g = 0; g <= G; ++g) {
    const bool inside = g < G && std::min(pair.p[g], pair.q[g]) > threshold;
    if (inside && start < 0) start = g;
    if (!inside && start >= 0) {
      out.push_back({pair.grid.points[start], pair.grid.points[g - 1]});
      start = -1;
    }
  }
  return out;
}

FeatureShape shape_summary(const ColumnTable& table, const std::string& feature, const BandwidthOptions& bandwidth,
                           int grid_size, Warnings* warnings) {
  const Eigen::VectorXd& column = table.numeric(feature);
  std::vector<std::vector<double>> by_class(table.vocabulary().size());
  for (std::size_t r = 0; r < table.rows(); ++r)
    by_class[static_cast<std::size_t>(table.labels()[r])].push_back(column[static_cast<Eigen::Index>(r)]);

  FeatureShape shape;
  shape.feature = feature;
  std::vector<std::span<const double>> spans;
  double h_max = 0.0;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& values = by_class[c];
    if (values.empty()) continue;
    std::sort(values.begin(), values.end());
    ClassShape s;
    s.class_id = static_cast<int>(c);
    s.class_name = table.vocabulary().name(static_cast<int>(c));
    s.n = values.size();
    s.min = values.front();
    s.q1 = quantile_sorted(values, 0.25);
    s.median = quantile_sorted(values, 0.5);
    s.q3 = quantile_sorted(values, 0.75);
    s.max = values.back();
    s.outliers = iqr_outlier_count(values);
    Warnings local;
    s.bandwidth = values.size() >= 2 ? select_bandwidth(values, bandwidth, &local) : fallback_bandwidth(values);
    for (auto& w : local) warn(warnings, feature + " / " + s.class_name + ": " + w);
    h_max = std::max(h_max, s.bandwidth);
    spans.emplace_back(values);
    shape.classes.push_back(std::move(s));
  }
  if (shape.classes.empty()) throw DataError("shape_summary: table has no rows");
  shape.grid = make_grid(spans, h_max, grid_size);
  for (std::size_t i = 0; i < shape.classes.size(); ++i)
    shape.classes[i].density = kde_on_grid(make_kde(spans[i], shape.classes[i].bandwidth), shape.grid);
  return shape;
}

}  // namespace uavids
