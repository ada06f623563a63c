#include "uavids/model_io.hpp"

#include <fstream>

#include "uavids/errors.hpp"

namespace uavids {
namespace {

Json vector_json(const Eigen::VectorXd& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

Eigen::VectorXd json_vector(const Json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

Json tree_json(const DecisionTree& tree) {
  Json feature = Json::array(), threshold = Json::array(), left = Json::array(), right = Json::array(),
       weight = Json::array(), impurity = Json::array(), distribution = Json::array();
  for (const auto& n : tree.nodes) {
    feature.push_back(n.feature);
    threshold.push_back(n.threshold);
    left.push_back(n.left);
    right.push_back(n.right);
    weight.push_back(n.weight);
    impurity.push_back(n.impurity);
    distribution.push_back(n.distribution);
  }
  return Json{{"n_features", tree.n_features}, {"n_classes", tree.n_classes}, {"feature", feature},
              {"threshold", threshold},         {"left", left},               {"right", right},
              {"weight", weight},               {"impurity", impurity},       {"distribution", distribution}};
}

DecisionTree json_tree(const Json& j) {
  DecisionTree tree;
  tree.n_features = j.at("n_features").get<int>();
  tree.n_classes = j.at("n_classes").get<int>();
  const auto& feature = j.at("feature");
  const std::size_t n = feature.size();
  tree.nodes.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& node = tree.nodes[i];
    node.feature = feature.at(i).get<int>();
    node.threshold = j.at("threshold").at(i).get<double>();
    node.left = j.at("left").at(i).get<int>();
    node.right = j.at("right").at(i).get<int>();
    node.weight = j.at("weight").at(i).get<double>();
    node.impurity = j.at("impurity").at(i).get<double>();
    node.distribution = j.at("distribution").at(i).get<std::vector<double>>();
  }
  return tree;
}

Json regression_json(const RegressionTree& tree) {
  Json feature = Json::array(), bin = Json::array(), threshold = Json::array(), left = Json::array(),
       right = Json::array(), value = Json::array(), gain = Json::array();
  for (const auto& n : tree.nodes) {
    feature.push_back(n.feature);
    bin.push_back(n.bin);
    threshold.push_back(n.threshold);
    left.push_back(n.left);
    right.push_back(n.right);
    value.push_back(n.value);
    gain.push_back(n.gain);
  }
  return Json{{"feature", feature}, {"bin", bin},     {"threshold", threshold}, {"left", left},
              {"right", right},     {"value", value}, {"gain", gain}};
}

RegressionTree json_regression(const Json& j) {
  RegressionTree tree;
  const std::size_t n = j.at("feature").size();
  tree.nodes.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& node = tree.nodes[i];
    node.feature = j.at("feature").at(i).get<int>();
    node.bin = j.at("bin").at(i).get<int>();
    node.threshold = j.at("threshold").at(i).get<double>();
    node.left = j.at("left").at(i).get<int>();
    node.right = j.at("right").at(i).get<int>();
    node.value = j.at("value").at(i).get<double>();
    node.gain = j.at("gain").at(i).get<double>();
  }
  return tree;
}

Json body_json(const DecisionTree& tree) { return Json{{"family", "tree"}, {"tree", tree_json(tree)}}; }

Json body_json(const ForestModel& forest) {
  Json trees = Json::array();
  for (const auto& t : forest.trees) trees.push_back(tree_json(t));
  return Json{{"family", "forest"},
              {"n_features", forest.n_features},
              {"n_classes", forest.n_classes},
              {"max_features", forest.max_features},
              {"tree_seeds", forest.tree_seeds},
              {"trees", trees}};
}

Json body_json(const GbdtModel& gbdt) {
  Json rounds = Json::array();
  for (const auto& round : gbdt.rounds) {
    Json per_class = Json::array();
    for (const auto& t : round) per_class.push_back(regression_json(t));
    rounds.push_back(per_class);
  }
  return Json{{"family", "gbdt"},
              {"n_features", gbdt.n_features},
              {"n_classes", gbdt.n_classes},
              {"learning_rate", gbdt.learning_rate},
              {"cuts", gbdt.cuts},
              {"initial_score", vector_json(gbdt.initial_score)},
              {"train_loss", gbdt.train_loss},
              {"rounds", rounds}};
}

}  // namespace

Json model_to_json(const Model& model) {
  Json out{{"format", kModelFormat}, {"version", kModelFormatVersion}};
  const Json body = std::visit([](const auto& m) { return body_json(m); }, model);
  for (const auto& [key, value] : body.items()) out[key] = value;
  return out;
}

Model model_from_json(const Json& document) {
  try {
    if (!document.is_object() || document.value("format", "") != kModelFormat)
      throw DataError("not a uavids model document");
    const int version = document.at("version").get<int>();
    if (version != kModelFormatVersion) throw DataError("unsupported model format version " + std::to_string(version));
    const auto family = parse_model_family(document.at("family").get<std::string>());
    switch (family) {
      case ModelFamily::tree:
        return json_tree(document.at("tree"));
      case ModelFamily::forest: {
        ForestModel forest;
        forest.n_features = document.at("n_features").get<int>();
        forest.n_classes = document.at("n_classes").get<int>();
        forest.max_features = document.at("max_features").get<std::size_t>();
        forest.tree_seeds = document.at("tree_seeds").get<std::vector<std::uint64_t>>();
        for (const auto& t : document.at("trees")) forest.trees.push_back(json_tree(t));
        return forest;
      }
      case ModelFamily::gbdt: {
        GbdtModel gbdt;
        gbdt.n_features = document.at("n_features").get<int>();
        gbdt.n_classes = document.at("n_classes").get<int>();
        gbdt.learning_rate = document.at("learning_rate").get<double>();
        gbdt.cuts = document.at("cuts").get<std::vector<std::vector<double>>>();
        gbdt.initial_score = json_vector(document.at("initial_score"));
        gbdt.train_loss = document.at("train_loss").get<std::vector<double>>();
        for (const auto& round : document.at("rounds")) {
          std::vector<RegressionTree> per_class;
          for (const auto& t : round) per_class.push_back(json_regression(t));
          gbdt.rounds.push_back(std::move(per_class));
        }
        return gbdt;
      }
    }
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed model document: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("malformed model document: ") + e.what());
  }
  throw DataError("malformed model document");
}

void save_model(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model file: " + path);
  out << model_to_json(model).dump() << '\n';
}

Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file: " + path);
  Json document;
  try {
    document = Json::parse(in);
  } catch (const Json::exception& e) {
    throw DataError("model file is not valid JSON: " + path);
  }
  return model_from_json(document);
}

}  // namespace uavids
