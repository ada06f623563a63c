#include "uavids/wytest.hpp"

#include <algorithm>
#include <cstdio>

#include "uavids/parallel.hpp"
#include "uavids/random.hpp"

namespace uavids {

std::string_view to_string(BandwidthMode mode) {
  return mode == BandwidthMode::reoptimize ? "reoptimize" : "frozen";
}

BandwidthMode parse_bandwidth_mode(std::string_view text) {
  if (text == "reoptimize") return BandwidthMode::reoptimize;
  if (text == "frozen") return BandwidthMode::frozen;
  throw ConfigError("unknown bandwidth mode: " + std::string(text) + " (expected reoptimize or frozen)");
}

void WyConfig::validate() const {
  if (permutations < 1) throw ConfigError("permutation count must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie strictly between 0 and 1");
  if (grid_size < 2) throw ConfigError("grid size must be >= 2");
  if (cv_candidates < 1) throw ConfigError("cv candidate count must be >= 1");
  if (cv_folds < 2) throw ConfigError("cv folds must be >= 2");
  if (!class_v.empty() && class_v == class_w) throw ConfigError("the two classes must differ");
}

PooledSample PooledSample::from_table(const ColumnTable& table, std::span<const std::string> features,
                                      const std::string& class_v, const std::string& class_w) {
  const auto v = table.vocabulary().find(class_v);
  const auto w = table.vocabulary().find(class_w);
  if (!v) throw DataError("class not present in data: " + class_v);
  if (!w) throw DataError("class not present in data: " + class_w);
  if (*v == *w) throw ConfigError("the two classes must differ");
  std::vector<std::size_t> rows;
  PooledSample s;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    const int y = table.labels()[r];
    if (y == *v || y == *w) {
      rows.push_back(r);
      s.labels.push_back(y == *v ? 0 : 1);
    }
  }
  for (const auto& f : features) {
    const Eigen::VectorXd& column = table.numeric(f);
    Eigen::VectorXd values(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) values[static_cast<Eigen::Index>(i)] = column[static_cast<Eigen::Index>(rows[i])];
    s.features.push_back(f);
    s.values.push_back(std::move(values));
  }
  return s;
}

FeatureStatistic feature_statistic(const Eigen::VectorXd& pooled, std::span<const int> labels, const WyConfig& config,
                                   std::uint64_t seed, const std::pair<double, double>* bandwidths,
                                   Warnings* warnings) {
  std::vector<double> group_v, group_w;
  group_v.reserve(labels.size());
  group_w.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    (labels[i] == 0 ? group_v : group_w).push_back(pooled[static_cast<Eigen::Index>(i)]);
  if (group_v.empty() || group_w.empty()) throw DataError("both classes need at least one sample");

  FeatureStatistic out;
  out.n_v = group_v.size();
  out.n_w = group_w.size();
  if (pooled.minCoeff() == pooled.maxCoeff()) {
    warn(warnings, "feature is constant in both classes; statistic set to 0");
    out.bandwidth_v = out.bandwidth_w = fallback_bandwidth(group_v);
    return out;
  }
  if (bandwidths != nullptr) {
    out.bandwidth_v = bandwidths->first;
    out.bandwidth_w = bandwidths->second;
  } else {
    BandwidthOptions options;
    options.policy = config.policy;
    options.cv.n_candidates = config.cv_candidates;
    options.cv.folds = config.cv_folds;
    // One fold seed for both groups, so identical groups get identical bandwidths.
    options.cv.seed = seed;
    auto pick = [&](const std::vector<double>& g) {
      if (g.size() < 2) {
        warn(warnings, "group of size 1; using fallback bandwidth");
        return fallback_bandwidth(g);
      }
      BandwidthOptions o = options;
      if (o.policy == BandwidthPolicy::cv && g.size() < static_cast<std::size_t>(o.cv.folds)) {
        warn(warnings, "group smaller than cv folds; using scott bandwidth");
        o.policy = BandwidthPolicy::scott;
      }
      return select_bandwidth(g, o, warnings);
    };
    out.bandwidth_v = pick(group_v);
    out.bandwidth_w = pick(group_w);
  }
  const KdeModel kv = make_kde(group_v, out.bandwidth_v);
  const KdeModel kw = make_kde(group_w, out.bandwidth_w);
  const EvalGrid grid = make_grid(group_v, group_w, out.bandwidth_v, out.bandwidth_w, config.grid_size);
  out.statistic = js_distance(to_mass_pair(kv, kw, grid, config.engine));
  return out;
}

std::uint64_t labels_hash(std::span<const int> labels) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (int v : labels) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned>(v));
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<FeatureStatistic> observed_stats(const PooledSample& sample, const WyConfig& config, Warnings* warnings) {
  config.validate();
  std::size_t n_v = 0;
  for (int y : sample.labels) n_v += y == 0 ? 1 : 0;
  const std::size_t n_w = sample.labels.size() - n_v;
  if (n_v == 0 || n_w == 0) throw DataError("both classes must be present for the permutation test");
  if (n_v < 20 || n_w < 20)
    warn(warnings, "class sizes (" + std::to_string(n_v) + ", " + std::to_string(n_w) + ") below 20; KDEs are unreliable");
  std::vector<FeatureStatistic> out(sample.features.size());
  std::vector<Warnings> local(sample.features.size());
  const auto hash = labels_hash(sample.labels);
  parallel_for(sample.features.size(), config.threads, [&](std::size_t i) {
    if (config.observer) config.observer(0, i, hash);
    out[i] = feature_statistic(sample.values[i], sample.labels, config, derive_seed(config.seed, {0, i}), nullptr, &local[i]);
  });
  for (std::size_t i = 0; i < local.size(); ++i)
    for (auto& w : local[i]) warn(warnings, sample.features[i] + ": " + w);
  return out;
}

std::vector<int> permute_labels(std::span<const int> labels, std::uint64_t b, std::uint64_t master_seed) {
  const bool has_v = std::find(labels.begin(), labels.end(), 0) != labels.end();
  const bool has_w = std::find(labels.begin(), labels.end(), 1) != labels.end();
  if (!has_v || !has_w) throw DataError("permutation needs both classes present");
  std::vector<int> out(labels.begin(), labels.end());
  Rng rng(derive_seed(master_seed, {b}));
  shuffle(std::span<int>(out), rng);
  return out;
}

double adjusted_p_value(double statistic, std::span<const double> max_trace) {
  const auto exceed = std::count_if(max_trace.begin(), max_trace.end(), [&](double t) { return t >= statistic; });
  return (1.0 + static_cast<double>(exceed)) / (static_cast<double>(max_trace.size()) + 1.0);
}

WyTestReport wy_maxT(const PooledSample& sample, const WyConfig& config) {
  config.validate();
  WyTestReport report;
  report.config = config;
  report.config.observer = nullptr;
  const auto observed = observed_stats(sample, config, &report.warnings);

  std::vector<std::pair<double, double>> frozen;
  for (const auto& s : observed) frozen.emplace_back(s.bandwidth_v, s.bandwidth_w);

  const auto B = static_cast<std::size_t>(config.permutations);
  const std::size_t p = sample.features.size();
  report.max_trace.assign(B, 0.0);
  parallel_for(B, config.threads, [&](std::size_t index) {
    const std::size_t b = index + 1;
    const auto labels = permute_labels(sample.labels, b, config.seed);
    const auto hash = config.observer ? labels_hash(labels) : 0;
    double max_stat = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
      if (config.observer) config.observer(b, i, hash);
      const auto* fixed = config.bandwidth_mode == BandwidthMode::frozen ? &frozen[i] : nullptr;
      FeatureStatistic s;
      try {
        s = feature_statistic(sample.values[i], labels, config, derive_seed(config.seed, {b, i}), fixed, nullptr);
      } catch (const DataError& e) {
        throw DataError("permutation " + std::to_string(b) + ", feature " + sample.features[i] + ": " + e.what());
      } catch (const std::exception& e) {
        throw std::runtime_error("permutation " + std::to_string(b) + ", feature " + sample.features[i] + ": " + e.what());
      }
      max_stat = std::max(max_stat, s.statistic);
    }
    report.max_trace[index] = max_stat;
  });

  for (std::size_t i = 0; i < p; ++i) {
    FeatureTestResult r;
    r.feature = sample.features[i];
    r.statistic = observed[i].statistic;
    r.p_value = adjusted_p_value(r.statistic, report.max_trace);
    r.n_v = observed[i].n_v;
    r.n_w = observed[i].n_w;
    r.bandwidth_v = observed[i].bandwidth_v;
    r.bandwidth_w = observed[i].bandwidth_w;
    report.features.push_back(std::move(r));
  }
  return report;
}

WyTestReport wy_maxT(const ColumnTable& table, std::span<const std::string> features, const WyConfig& config) {
  return wy_maxT(PooledSample::from_table(table, features, config.class_v, config.class_w), config);
}

WyDecision decide(const WyTestReport& report, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie strictly between 0 and 1");
  WyDecision d;
  for (const auto& f : report.features) {
    d.reject.push_back(f.p_value < alpha);
    d.family_reject = d.family_reject || d.reject.back();
  }
  return d;
}

std::string format_p_value(double p) {
  if (p < 0.001) return "<0.001";
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.6f", p);
  return buffer;
}

}  // namespace uavids
