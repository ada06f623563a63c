// Acceptance runner: prints one PASS, FAIL or SKIP line per criterion and
// exits non-zero when any criterion fails.
//
// Criteria 4 to 6 need the UAVIDS-2025 data. Set UAVIDS_CONFIG to a run
// config whose schema describes the dataset CSV; UAVIDS_DATASET, when set,
// overrides the config's input path.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "uavids/pipeline.hpp"
#include "uavids/random.hpp"
#include "uavids/wytest.hpp"

using namespace uavids;

namespace {

enum class Status { pass, fail, skip };

struct Outcome {
  Status status = Status::pass;
  std::string detail;
};

/// Collects failed checks; the first few are kept for the report line.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    ++total_;
    if (ok) return;
    ++failed_;
    if (failures_.size() < 3) failures_.push_back(what);
  }
  Outcome outcome(const std::string& summary) const {
    if (failed_ == 0) return {Status::pass, summary + " (" + std::to_string(total_) + " checks)"};
    std::string d = std::to_string(failed_) + "/" + std::to_string(total_) + " checks failed";
    for (const auto& f : failures_) d += "; " + f;
    return {Status::fail, d};
  }

 private:
  std::size_t total_ = 0;
  std::size_t failed_ = 0;
  std::vector<std::string> failures_;
};

std::span<const double> view(const Eigen::VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

Eigen::VectorXd normals(Rng& rng, std::size_t n, double mean = 0.0, double sd = 1.0) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (auto& x : v) x = rng.normal(mean, sd);
  return v;
}

Eigen::VectorXd random_mass(Rng& rng, Eigen::Index size) {
  Eigen::VectorXd v(size);
  for (auto& x : v) x = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
  if (v.sum() == 0.0) v[0] = 1.0;
  return v / v.sum();
}

double brute_kendall(std::span<const double> x, std::span<const double> y) {
  double concordant = 0, discordant = 0, tie_x = 0, tie_y = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double dx = x[i] - x[j], dy = y[i] - y[j];
      if (dx == 0 && dy == 0) continue;
      if (dx == 0) {
        ++tie_x;
      } else if (dy == 0) {
        ++tie_y;
      } else if ((dx > 0) == (dy > 0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  const double denominator = std::sqrt((concordant + discordant + tie_x) * (concordant + discordant + tie_y));
  return denominator == 0.0 ? 0.0 : (concordant - discordant) / denominator;  // constant input reports 0
}

// Gaussian KDE summed directly, kept separate from the library code.
double kde_at(const std::vector<double>& samples, double h, double x) {
  double s = 0.0;
  for (double v : samples) s += std::exp(-0.5 * (x - v) * (x - v) / (h * h));
  return s / (static_cast<double>(samples.size()) * h * std::sqrt(2.0 * std::numbers::pi));
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

// n_v rows of V then n_w rows of W, `features` independent N(0,1) columns;
// feature 0 of W is shifted by `shift`.
PooledSample two_groups(std::size_t n, std::size_t features, double shift, std::uint64_t seed) {
  Rng rng(seed);
  PooledSample s;
  s.labels.assign(n, 0);
  s.labels.insert(s.labels.end(), n, 1);
  for (std::size_t f = 0; f < features; ++f) {
    s.features.push_back("feature" + std::to_string(f + 1));
    Eigen::VectorXd v(static_cast<Eigen::Index>(2 * n));
    for (std::size_t i = 0; i < 2 * n; ++i)
      v[static_cast<Eigen::Index>(i)] = rng.normal(f == 0 && i >= n ? shift : 0.0, 1.0);
    s.values.push_back(v);
  }
  return s;
}

// ---------------------------------------------------------------------------

Outcome property_suite() {
  Checks c;
  Rng rng(20240501);

  for (int rep = 0; rep < 1000; ++rep) {
    const Eigen::Index size = 2 + static_cast<Eigen::Index>(rng.below(40));
    const Eigen::VectorXd p = random_mass(rng, size), q = random_mass(rng, size), r = random_mass(rng, size);
    const double pq = js_distance(p, q);
    c.expect(pq == js_distance(q, p), "JS symmetry");
    c.expect(js_distance(p, p) <= 1e-12, "JS identity");
    c.expect(pq >= 0.0 && pq <= 1.0, "JS bounds");
    c.expect(pq <= js_distance(p, r) + js_distance(r, q) + 1e-12, "JS triangle inequality");
  }

  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t B = 1 + rng.below(500);
    std::vector<double> trace(B);
    for (auto& t : trace) t = rng.uniform();
    std::vector<double> stats(8);
    for (auto& t : stats) t = rng.uniform() * 1.2;
    std::sort(stats.begin(), stats.end());
    double previous = 2.0;
    for (double t : stats) {
      const double p = adjusted_p_value(t, trace);
      c.expect(p >= 1.0 / static_cast<double>(B + 1) && p <= 1.0, "adjusted p bounds");
      c.expect(p <= previous, "adjusted p monotone in T");
      previous = p;
    }
  }

  for (std::size_t n : {2u, 10u, 100u, 1000u, 10000u}) {
    const Eigen::VectorXd x = normals(rng, n, 3.0, 2.0);
    const double h = scott_bandwidth(view(x));
    const auto grid = make_grid(view(x), view(x), h, h, 2048);
    const Eigen::VectorXd f = kde_eval(make_kde(view(x), h), grid.points);
    const double integral = grid.spacing * (f.sum() - 0.5 * (f[0] + f[f.size() - 1]));
    c.expect(std::abs(integral - 1.0) <= 1e-3, "KDE trapezoid normalization at n=" + std::to_string(n));
  }

  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 2 + rng.below(199);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(rng.below(1 + n / 4));
      y[i] = rng.uniform() < 0.5 ? static_cast<double>(rng.below(6)) : rng.normal();
    }
    const double fast = kendall_tau_b(x, y);
    const double slow = brute_kendall(x, y);
    c.expect(std::abs(fast - slow) <= 1e-12,
             "Kendall n=" + std::to_string(n) + " " + format_double(fast) + " vs " + format_double(slow));
  }

  for (int rep = 0; rep < 50; ++rep) {
    const Eigen::VectorXd x = normals(rng, 5 + rng.below(300), rng.normal(), 1.0 + rng.uniform() * 5);
    const Eigen::VectorXd z = robust_transform(x, robust_fit(x));
    c.expect(std::abs(quantile(z, 0.5)) <= 1e-12, "robust scaler median 0");
    c.expect(std::abs(quantile(z, 0.75) - quantile(z, 0.25) - 1.0) <= 1e-12, "robust scaler IQR 1");
  }

  for (int rep = 0; rep < 30; ++rep) {
    std::vector<int> labels;
    const int classes = 2 + static_cast<int>(rng.below(4));
    for (int k = 0; k < classes; ++k) labels.insert(labels.end(), 10 + rng.below(90), k);
    const auto split = stratified_split(labels, 0.2, rng.next());
    std::vector<std::size_t> all = split.train;
    all.insert(all.end(), split.test.begin(), split.test.end());
    std::sort(all.begin(), all.end());
    c.expect(std::adjacent_find(all.begin(), all.end()) == all.end() && all.size() == labels.size(),
             "split partitions rows");
    for (int k = 0; k < classes; ++k) {
      const auto n_k = static_cast<double>(std::count(labels.begin(), labels.end(), k));
      const auto t_k = std::count_if(split.test.begin(), split.test.end(), [&](std::size_t i) { return labels[i] == k; });
      c.expect(std::abs(static_cast<double>(t_k) - n_k * 0.2) <= 1.0, "split per-class balance");
    }
    for (int k_folds : {2, 5, 10}) {
      const auto folds = stratified_kfold(labels, k_folds, rng.next());
      for (int k = 0; k < classes; ++k) {
        std::vector<int> sizes(static_cast<std::size_t>(k_folds), 0);
        for (std::size_t i = 0; i < labels.size(); ++i)
          if (labels[i] == k) ++sizes[static_cast<std::size_t>(folds.fold[i])];
        const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
        c.expect(*hi - *lo <= 1, "k-fold per-class balance");
      }
    }
  }

  for (int rep = 0; rep < 3; ++rep) {
    const std::size_t n = 400;
    Eigen::MatrixXd X(static_cast<Eigen::Index>(n), 4);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(i % 3);
      for (Eigen::Index j = 0; j < 4; ++j)
        X(static_cast<Eigen::Index>(i), j) = rng.normal(j == 0 ? y[i] : 0.0, 1.0);
    }
    GbdtParams gp;
    gp.rounds = 60;
    gp.seed = rng.next();
    const GbdtModel m = fit_gbdt(X, y, 3, gp);
    for (std::size_t r = 1; r < m.train_loss.size(); ++r)
      c.expect(m.train_loss[r] <= m.train_loss[r - 1] + 1e-9, "GBDT train loss non-increasing");
    ForestParams fp;
    fp.n_trees = 20;
    fp.seed = rng.next();
    for (const Model& model : {Model(m), Model(fit_forest(X, y, 3, fp)), Model(fit_tree(X, y, 3, {}))}) {
      const Eigen::MatrixXd proba = predict_proba(model, normals(rng, 200 * 4).reshaped(200, 4));
      for (Eigen::Index r = 0; r < proba.rows(); ++r)
        c.expect(std::abs(proba.row(r).sum() - 1.0) <= 1e-9 && proba.row(r).minCoeff() >= 0.0, "probability rows");
    }
  }
  return c.outcome("metric axioms, p-value bounds, KDE normalization, Kendall oracle, scaler, splits, GBDT loss");
}

Outcome synthetic_null() {
  int rejections = 0;
  for (std::uint64_t rep = 0; rep < 20; ++rep) {
    WyConfig cfg;
    cfg.class_v = "V";
    cfg.class_w = "W";
    cfg.permutations = 200;
    cfg.policy = BandwidthPolicy::scott;
    cfg.seed = derive_seed(2, {rep});
    cfg.threads = 4;
    const auto report = wy_maxT(two_groups(500, 7, 0.0, derive_seed(1, {rep})), cfg);
    double min_p = 1.0;
    for (const auto& f : report.features) min_p = std::min(min_p, f.p_value);
    rejections += min_p < 0.05;
  }
  const std::string detail = std::to_string(rejections) + " of 20 null repetitions with min adjusted p < 0.05";
  return {rejections <= 2 ? Status::pass : Status::fail, detail};
}

Outcome synthetic_alternative() {
  const PooledSample sample = two_groups(500, 7, 2.0, 31);
  WyConfig cfg;
  cfg.class_v = "V";
  cfg.class_w = "W";
  cfg.permutations = 1000;
  cfg.policy = BandwidthPolicy::scott;
  cfg.seed = 32;
  cfg.threads = 4;
  const auto report = wy_maxT(sample, cfg);
  Checks c;
  const auto& first = report.features[0];
  c.expect(first.p_value == 1.0 / 1001.0, "feature1 p = " + format_double(first.p_value));
  c.expect(format_p_value(first.p_value) == "<0.001", "feature1 p text");
  for (std::size_t i = 1; i < report.features.size(); ++i)
    c.expect(report.features[i].p_value > 0.05,
             report.features[i].feature + " p = " + format_double(report.features[i].p_value));

  // Continuous JS distance between the two fitted KDEs by the trapezoid rule.
  const auto all = to_std(sample.values[0]);
  const std::vector<double> v(all.begin(), all.begin() + 500), w(all.begin() + 500, all.end());
  const double hv = first.bandwidth_v, hw = first.bandwidth_w, pad = 5.0 * std::max(hv, hw);
  const double lo = *std::min_element(all.begin(), all.end()) - pad;
  const double hi = *std::max_element(all.begin(), all.end()) + pad;
  constexpr int G = 8192;
  const double dx = (hi - lo) / (G - 1);
  double divergence = 0.0;
  for (int g = 0; g < G; ++g) {
    const double x = lo + g * dx;
    const double f = kde_at(v, hv, x), q = kde_at(w, hw, x), m = 0.5 * (f + q);
    double term = 0.0;
    if (f > 0) term += 0.5 * f * std::log2(f / m);
    if (q > 0) term += 0.5 * q * std::log2(q / m);
    divergence += (g == 0 || g == G - 1 ? 0.5 : 1.0) * term * dx;
  }
  const double oracle = std::sqrt(std::max(divergence, 0.0));
  c.expect(std::abs(first.statistic - oracle) <= 1e-3,
           "T1 " + format_double(first.statistic) + " vs oracle " + format_double(oracle));
  return c.outcome("T1 = " + format_fixed(first.statistic, 6) + ", oracle " + format_fixed(oracle, 6) + ", p1 " +
                   format_p_value(first.p_value));
}

// ---------------------------------------------------------------------------
// Dataset-dependent criteria.

struct ReferenceRow {
  const char* feature;
  double js;
  bool significant;
};

constexpr ReferenceRow kReference[] = {
    {"LostPackets", 0.376153, true},  {"RxBytes", 0.743254, true},     {"RxByteRate/s", 0.197168, false},
    {"MeanDelay/s", 0.546946, true},  {"MeanJitter/s", 0.546824, true}, {"PacketDropRate", 0.825746, true},
    {"AverageHopCount", 0.539645, true},
};

struct DatasetRun {
  bool available = false;
  std::string error;
  Json preprocess, cv, wy;
};

DatasetRun run_dataset() {
  DatasetRun run;
  const char* config_path = std::getenv("UAVIDS_CONFIG");
  if (config_path == nullptr || *config_path == '\0') return run;
  run.available = true;
  try {
    RunConfig config = load_config(config_path);
    if (const char* data = std::getenv("UAVIDS_DATASET"); data != nullptr && *data != '\0') config.input = data;
    config.output_dir = (std::filesystem::temp_directory_path() / "uavids-acceptance").string();
    std::filesystem::remove_all(config.output_dir);
    config.wy.test.class_v = "Blackhole";
    config.wy.test.class_w = "Wormhole";
    config.wy.test.permutations = 1000;
    config.wy.test.policy = BandwidthPolicy::cv;
    config.wy.features.clear();
    for (const auto& row : kReference) config.wy.features.emplace_back(row.feature);
    run.preprocess = run_preprocess(config);
    run.cv = run_cv(config);
    run.wy = run_wy(config);
  } catch (const std::exception& e) {
    run.error = e.what();
  }
  return run;
}

Outcome reference_distances(const DatasetRun& run) {
  if (!run.available) return {Status::skip, "set UAVIDS_CONFIG to a UAVIDS-2025 run config"};
  if (!run.error.empty()) return {Status::fail, run.error};
  Checks c;
  const auto& results = run.wy.at("results");
  double largest = -1, smallest = 2;
  std::string largest_name, smallest_name;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    const double js = r.at("js_distance").get<double>(), p = r.at("p_value").get<double>();
    const auto& row = kReference[i];
    c.expect(std::abs(js - row.js) <= 0.08, std::string(row.feature) + " JS " + format_fixed(js, 6));
    if (row.significant)
      c.expect(p == 1.0 / 1001.0, std::string(row.feature) + " p " + format_p_value(p));
    else
      c.expect(p == 1.0, std::string(row.feature) + " p " + format_p_value(p));
    if (js > largest) largest = js, largest_name = row.feature;
    if (js < smallest) smallest = js, smallest_name = row.feature;
  }
  c.expect(largest_name == "PacketDropRate", "largest JS at " + largest_name);
  c.expect(smallest_name == "RxByteRate/s", "smallest JS at " + smallest_name);
  return c.outcome("significance pattern and JS distances match the reference values");
}

Outcome classification_pattern(const DatasetRun& run) {
  if (!run.available) return {Status::skip, "set UAVIDS_CONFIG to a UAVIDS-2025 run config"};
  if (!run.error.empty()) return {Status::fail, run.error};
  Checks c;
  bool forest_seen = false;
  for (const auto& m : run.cv.at("models")) {
    const std::string name = m.at("name");
    for (const char* metric : {"precision", "recall", "f1", "roc_auc"})
      c.expect(m.at("test").at(metric).at("range").get<double>() <= 0.04, name + " " + metric + " fold range");
    if (m.at("family") == "forest") {
      forest_seen = true;
      const double f1 = m.at("test").at("f1").at("mean").get<double>();
      c.expect(f1 >= 0.90, name + " test F1 " + format_fixed(f1, 4));
    }
  }
  c.expect(forest_seen, "config has a random forest model");
  const auto classes = run.cv.at("holdout").at("classes").get<std::vector<std::string>>();
  const auto& cm = run.cv.at("holdout").at("test_confusion");
  long best = -1;
  std::string pair;
  for (std::size_t t = 0; t < classes.size(); ++t)
    for (std::size_t p = 0; p < classes.size(); ++p)
      if (t != p && cm[t][p].get<long>() > best) {
        best = cm[t][p].get<long>();
        pair = classes[t] + "->" + classes[p];
      }
  c.expect(pair == "Blackhole->Wormhole" || pair == "Wormhole->Blackhole", "largest confusion " + pair);
  return c.outcome("forest F1, fold stability and confusion pattern");
}

Outcome overlap_zone(const DatasetRun& run) {
  if (!run.available) return {Status::skip, "set UAVIDS_CONFIG to a UAVIDS-2025 run config"};
  if (!run.error.empty()) return {Status::fail, run.error};
  for (const auto& r : run.wy.at("results")) {
    if (r.at("feature") != "PacketDropRate") continue;
    std::string seen;
    for (const auto& iv : r.at("overlap_intervals")) {
      const double lo = iv[0].get<double>(), hi = iv[1].get<double>();
      seen += " [" + format_fixed(lo, 3) + ", " + format_fixed(hi, 3) + "]";
      if (std::abs(lo - 0.25) <= 0.15 && std::abs(hi - 1.4) <= 0.15) return {Status::pass, "interval" + seen};
    }
    return {Status::fail, "no interval near [0.25, 1.4]:" + seen};
  }
  return {Status::fail, "PacketDropRate missing from the permutation test results"};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  DatasetRun dataset;
  bool dataset_loaded = false;
  auto with_dataset = [&](Outcome (*f)(const DatasetRun&)) {
    return [&, f] {
      if (!dataset_loaded) {
        dataset = run_dataset();
        dataset_loaded = true;
      }
      return f(dataset);
    };
  };
  const std::vector<Criterion> criteria{
      {1, "property suite", property_suite},
      {2, "synthetic null controls FWER", synthetic_null},
      {3, "synthetic alternative detected", synthetic_alternative},
      {4, "Blackhole vs Wormhole reference distances", with_dataset(reference_distances)},
      {5, "classification pattern", with_dataset(classification_pattern)},
      {6, "overlap zone", with_dataset(overlap_zone)},
  };
  int failures = 0;
  for (const auto& criterion : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criterion.run();
    } catch (const std::exception& e) {
      o = {Status::fail, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const char* label = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "SKIP";
    failures += o.status == Status::fail;
    std::cout << label << " criterion " << criterion.id << " (" << criterion.name << "): " << o.detail << " ["
              << format_fixed(seconds, 1) << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
