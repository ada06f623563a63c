#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "uavids/pipeline.hpp"

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitRuntime = 3;

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
};

struct WyFlags {
  std::string classes;
  std::optional<int> permutations;
  std::optional<std::string> bandwidth;
  std::optional<double> alpha;
};

uavids::RunConfig resolve(const GlobalFlags& g, const WyFlags& w) {
  if (g.config.empty()) throw uavids::ConfigError("--config is required");
  uavids::RunConfig config = uavids::load_config(g.config);
  if (g.seed) config.seed = *g.seed;
  if (g.out) config.output_dir = *g.out;
  if (g.threads) config.threads = *g.threads;
  if (!w.classes.empty()) {
    const auto comma = w.classes.find(',');
    if (comma == std::string::npos || w.classes.find(',', comma + 1) != std::string::npos)
      throw uavids::ConfigError("--classes expects two names separated by one comma");
    config.wy.test.class_v = w.classes.substr(0, comma);
    config.wy.test.class_w = w.classes.substr(comma + 1);
  }
  if (w.permutations) config.wy.test.permutations = *w.permutations;
  if (w.bandwidth) config.wy.test.policy = uavids::parse_bandwidth_policy(*w.bandwidth);
  if (w.alpha) config.wy.test.alpha = *w.alpha;
  config.validate();
  return config;
}

void print_warnings(const uavids::Json& fragment) {
  if (!fragment.contains("warnings")) return;
  for (const auto& w : fragment.at("warnings")) std::cerr << "warning: " << w.get<std::string>() << '\n';
}

void print_summary(const std::string& stage, const uavids::Json& fragment, const uavids::RunConfig& config) {
  if (stage == "preprocess") {
    const auto& ing = fragment.at("ingestion");
    std::cout << "rows read " << ing.at("rows_read") << ", dropped " << ing.at("rows_dropped") << ", duplicates removed "
              << ing.at("duplicates_removed") << '\n';
    std::cout << "selected features:";
    for (const auto& f : fragment.at("selection").at("features")) std::cout << ' ' << f.get<std::string>();
    std::cout << '\n';
  } else if (stage == "cv") {
    for (const auto& m : fragment.at("models"))
      std::cout << m.at("name").get<std::string>() << ": test F1 " << uavids::format_fixed(m.at("test").at("f1").at("mean").get<double>(), 4)
                << (m.at("stable").get<bool>() ? " (stable)" : " (unstable)") << '\n';
    std::cout << "best model: " << fragment.at("best_model").get<std::string>() << '\n';
  } else if (stage == "density") {
    std::cout << fragment.at("features").size() << " features summarized\n";
  } else if (stage == "wy") {
    std::cout << "Feature,Jensen-Shannon Distance,p-value\n";
    for (const auto& r : fragment.at("results"))
      std::cout << r.at("feature").get<std::string>() << ',' << uavids::format_fixed(r.at("js_distance").get<double>(), 6) << ','
                << r.at("p_value_text").get<std::string>() << '\n';
    std::cout << "family H0 " << (fragment.at("family_reject").get<bool>() ? "rejected" : "retained") << '\n';
  }
  std::cout << "report: " << uavids::OutputPaths{config.output_dir}.report().string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UAV intrusion-detection analysis toolkit", "uavids"};
  app.set_version_flag("--version", std::string(UAVIDS_VERSION));
  app.require_subcommand(1);
  GlobalFlags global;
  WyFlags wy_flags;
  app.add_option("--config", global.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", global.seed, "master seed (overrides config)");
  app.add_option("--out", global.out, "output directory (overrides config)");
  app.add_option("--threads", global.threads, "worker threads, 0 = all cores (overrides config)");
  app.fallthrough();

  app.add_subcommand("preprocess", "clean, encode, split, scale and select features");
  app.add_subcommand("cv", "grid search and stratified k-fold cross-validation per model");
  app.add_subcommand("density", "box-plot statistics and KDE curves per feature and class");
  auto* wy = app.add_subcommand("wy", "Westfall-Young maxT permutation test for a class pair");
  wy->add_option("--classes", wy_flags.classes, "class pair as V,W");
  wy->add_option("--permutations", wy_flags.permutations, "permutation count B");
  wy->add_option("--bandwidth", wy_flags.bandwidth, "scott, silverman or cv")
      ->check(CLI::IsMember({"scott", "silverman", "cv"}));
  wy->add_option("--alpha", wy_flags.alpha, "significance level");
  app.add_subcommand("report", "merge stored stage fragments into report.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    const uavids::RunConfig config = resolve(global, wy_flags);
    uavids::Json fragment;
    if (stage == "preprocess") fragment = uavids::run_preprocess(config);
    else if (stage == "cv") fragment = uavids::run_cv(config);
    else if (stage == "density") fragment = uavids::run_density(config);
    else if (stage == "wy") fragment = uavids::run_wy(config);
    else {
      const auto envelope = uavids::assemble_report(config);
      std::cout << "stages in report:";
      for (const auto& [name, value] : envelope.at("fragments").items()) std::cout << ' ' << name;
      std::cout << "\nreport: " << uavids::OutputPaths{config.output_dir}.report().string() << '\n';
      return 0;
    }
    print_warnings(fragment);
    print_summary(stage, fragment, config);
    return 0;
  } catch (const uavids::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const uavids::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
