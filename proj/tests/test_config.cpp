#include <gtest/gtest.h>

#include <fstream>

#include "support.hpp"
#include "uavids/config.hpp"

using namespace uavids;

namespace {

Json minimal() {
  return Json::parse(R"({
    "input": "flows.csv",
    "schema": {"DstPort": {"role": "categorical", "encoding": "dummy"}, "PacketDropRate": "numeric",
               "FlowId": "drop", "Label": "label"}
  })");
}

std::string config_error(const Json& j) {
  try {
    parse_config(j).validate();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsFromMinimalDocument) {
  const RunConfig c = parse_config(minimal());
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.input, "flows.csv");
  ASSERT_EQ(c.schema.size(), 4u);
  EXPECT_EQ(c.schema[0].name, "DstPort");
  EXPECT_EQ(c.schema[0].role, ColumnRole::categorical);
  EXPECT_EQ(c.schema[0].encoding, CategoricalEncoding::dummy);
  EXPECT_EQ(c.schema[2].role, ColumnRole::drop);
  EXPECT_EQ(label_column(c.schema).name, "Label");
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.output_dir, "uavids-out");
  EXPECT_DOUBLE_EQ(c.preprocess.test_fraction, 0.2);
  EXPECT_DOUBLE_EQ(c.preprocess.correlation_threshold, 0.7);
  EXPECT_DOUBLE_EQ(c.preprocess.rfe.keep_threshold, 0.025);
  EXPECT_TRUE(c.preprocess.rfe_enabled);
  EXPECT_EQ(c.cv.k, 10);
  ASSERT_EQ(c.cv.models.size(), 3u);
  EXPECT_EQ(c.cv.models[1].base.name, "random_forest");
  EXPECT_EQ(c.density.bandwidth.policy, BandwidthPolicy::scott);
  EXPECT_EQ(c.wy.test.permutations, 1000);
  EXPECT_DOUBLE_EQ(c.wy.test.alpha, 0.05);
  EXPECT_EQ(c.wy.test.policy, BandwidthPolicy::cv);
  EXPECT_EQ(c.wy.test.bandwidth_mode, BandwidthMode::reoptimize);
}

TEST(Config, UnknownKeysRejectedWithPath) {
  Json j = minimal();
  j["sed"] = 1;
  EXPECT_NE(config_error(j).find("unknown config key: sed"), std::string::npos);

  j = minimal();
  j["wy"] = Json{{"permutation", 10}};
  EXPECT_NE(config_error(j).find("wy.permutation"), std::string::npos);

  j = minimal();
  j["cv"] = Json::parse(R"({"models": [{"family": "forest", "params": {"n_tree": 5}}]})");
  EXPECT_NE(config_error(j).find("cv.models[0].params.n_tree"), std::string::npos);

  j = minimal();
  j["cv"] = Json::parse(R"({"models": [{"family": "tree", "grid": {"n_trees": [5]}}]})");
  EXPECT_NE(config_error(j).find("cv.models[0].grid.n_trees"), std::string::npos);

  j = minimal();
  j["schema"]["DstPort"]["encodng"] = "dummy";
  EXPECT_NE(config_error(j).find("schema.DstPort.encodng"), std::string::npos);
}

TEST(Config, TypeErrorsNamePath) {
  Json j = minimal();
  j["seed"] = -3;
  EXPECT_NE(config_error(j).find("seed must be a non-negative integer"), std::string::npos);
  j = minimal();
  j["preprocess"] = Json{{"deduplicate", "yes"}};
  EXPECT_NE(config_error(j).find("preprocess.deduplicate must be a boolean"), std::string::npos);
  j = minimal();
  j["density"] = Json{{"features", Json{"a", 3}}};
  EXPECT_NE(config_error(j).find("density.features[1] must be a string"), std::string::npos);
}

TEST(Config, ValueValidation) {
  const std::vector<std::pair<std::string, std::string>> cases{
      {R"({"preprocess": {"test_fraction": 1.0}})", "test_fraction"},
      {R"({"preprocess": {"correlation_threshold": 0}})", "correlation_threshold"},
      {R"({"preprocess": {"rfe": {"keep_threshold": 1.5}}})", "keep_threshold"},
      {R"({"preprocess": {"selection_order": "random"}})", "selection order"},
      {R"({"cv": {"k": 1}})", "cv.k"},
      {R"({"cv": {"models": [{"family": "svm"}]}})", "unknown model family"},
      {R"({"cv": {"models": [{"name": "a", "family": "tree"}, {"name": "a", "family": "gbdt"}]}})", "duplicate"},
      {R"({"density": {"bandwidth": "wide"}})", "bandwidth policy"},
      {R"({"wy": {"classes": ["Blackhole"]}})", "exactly two"},
      {R"({"wy": {"classes": ["A", "A"]}})", "differ"},
      {R"({"wy": {"alpha": 1.0}})", "alpha"},
      {R"({"wy": {"permutations": 0}})", "permutation"},
      {R"({"wy": {"bandwidth_mode": "thawed"}})", "bandwidth mode"},
      {R"({"preprocess": {"engineered": [{"source": "x", "transform": "power"}]}})", "exponent is required"},
      {R"({"preprocess": {"engineered": [{"source": "x", "transform": "log"}]}})", "power or reciprocal"},
  };
  for (const auto& [patch, needle] : cases) {
    Json j = minimal();
    j.merge_patch(Json::parse(patch));
    EXPECT_NE(config_error(j).find(needle), std::string::npos) << patch << " -> " << config_error(j);
  }
  Json no_label = minimal();
  no_label["schema"]["Label"] = "numeric";
  EXPECT_FALSE(config_error(no_label).empty());
  Json no_input = minimal();
  no_input.erase("input");
  EXPECT_NE(config_error(no_input).find("input is required"), std::string::npos);
}

TEST(Config, EchoRoundTrips) {
  Json j = minimal();
  j.merge_patch(Json::parse(R"({
    "seed": 7, "threads": 2,
    "preprocess": {"engineered": [{"source": "PacketDropRate", "transform": "power", "exponent": 2}],
                   "rfe": {"enabled": false}, "selection_order": "correlation_then_rfe"},
    "cv": {"k": 5, "models": [{"name": "rf", "family": "forest", "params": {"n_trees": 30},
                               "grid": {"max_depth": [4, 8], "n_trees": [10, 30]}}]},
    "density": {"bandwidth": "silverman", "grid_size": 256},
    "wy": {"classes": ["Blackhole", "Wormhole"], "permutations": 200, "bandwidth": "scott",
           "bandwidth_mode": "frozen"}
  })"));
  const RunConfig c = parse_config(j);
  const Json echo = config_to_json(c);
  EXPECT_EQ(echo.at("seed"), 7);
  EXPECT_EQ(echo.at("wy").at("permutations"), 200);
  EXPECT_EQ(echo.at("cv").at("models")[0].at("grid").at("n_trees"), Json({10, 30}));
  EXPECT_EQ(config_to_json(parse_config(echo)).dump(), echo.dump());
  const Json defaults = config_to_json(parse_config(minimal()));
  EXPECT_EQ(config_to_json(parse_config(defaults)).dump(), defaults.dump());
}

TEST(Config, RelativeInputResolvesAgainstConfigFile) {
  test::TempDir dir("config");
  const auto path = dir.path() / "run.json";
  { std::ofstream(path) << minimal().dump(); }
  EXPECT_EQ(load_config(path.string()).input, (dir.path() / "flows.csv").string());
  Json abs = minimal();
  abs["input"] = "/data/flows.csv";
  { std::ofstream(path) << abs.dump(); }
  EXPECT_EQ(load_config(path.string()).input, "/data/flows.csv");
  { std::ofstream(path) << "{broken"; }
  EXPECT_THROW(load_config(path.string()), ConfigError);
  EXPECT_THROW(load_config((dir.path() / "missing.json").string()), ConfigError);
}
