#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "uavids/dataset.hpp"
#include "uavids/density.hpp"
#include "uavids/eval.hpp"
#include "uavids/model_io.hpp"
#include "uavids/preprocess.hpp"
#include "uavids/trees.hpp"
#include "uavids/wytest.hpp"

namespace uavids {

enum class SelectionOrder { rfe_then_correlation, correlation_then_rfe };
std::string_view to_string(SelectionOrder order);
SelectionOrder parse_selection_order(std::string_view text);

struct PreprocessConfig {
  bool deduplicate = true;
  double test_fraction = 0.2;
  double correlation_threshold = 0.7;
  bool robust_scaler = true;
  double outlier_k = 1.5;
  std::vector<EngineeredFeature> engineered;
  bool rfe_enabled = true;
  RfeParams rfe;
  ForestParams rfe_forest{.n_trees = 100, .max_depth = 16};
  SelectionOrder selection_order = SelectionOrder::rfe_then_correlation;
  /// When non-empty, these features are kept and selection is skipped.
  std::vector<std::string> features;
};

struct CvModelConfig {
  ModelSpec base;
  ParamGrid grid;
};

struct CvConfig {
  int k = 10;
  std::vector<CvModelConfig> models;  // defaults to tree, forest and gbdt
};

struct DensityConfig {
  BandwidthOptions bandwidth;
  int grid_size = 512;
  std::vector<std::string> features;  // empty: the selected features
};

struct WyStageConfig {
  WyConfig test;
  std::vector<std::string> features;  // empty: the selected features
};

struct RunConfig {
  std::string input;
  Schema schema;
  std::uint64_t seed = 42;
  std::string output_dir = "uavids-out";
  std::size_t threads = 0;  // 0 = hardware concurrency
  PreprocessConfig preprocess;
  CvConfig cv;
  DensityConfig density;
  WyStageConfig wy;

  /// Throws ConfigError on inconsistent values.
  void validate() const;
};

/// Parses a JSON config. Unknown keys anywhere are rejected with their path.
/// Relative input paths resolve against `base_dir`.
RunConfig parse_config(const Json& document, const std::string& base_dir = "");
RunConfig load_config(const std::string& path);

/// Fully resolved config, defaults included; stable key order.
Json config_to_json(const RunConfig& config);

}  // namespace uavids
