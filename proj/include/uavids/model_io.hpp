#pragma once

#include <json.hpp>

#include <string>

#include "uavids/trees.hpp"

namespace uavids {

using Json = nlohmann::ordered_json;

/// Model files are JSON documents tagged {"format": "uavids-model",
/// "version": 1, "family": ...}. Doubles round-trip exactly.
inline constexpr const char* kModelFormat = "uavids-model";
inline constexpr int kModelFormatVersion = 1;

Json model_to_json(const Model& model);
/// Throws DataError on a missing tag, unknown version or malformed body.
Model model_from_json(const Json& document);

void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

}  // namespace uavids
