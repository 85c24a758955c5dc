#pragma once

#include <string>

#include <json.hpp>

#include "cohlab/architectures.hpp"

namespace cohlab {

nlohmann::json encoder_config_to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

nlohmann::json arch_spec_to_json(const ArchitectureSpec& spec);
ArchitectureSpec arch_spec_from_json(const nlohmann::json& j);

/// Writes <prefix>.json (ArchitectureSpec + parameter manifest: name, shape,
/// offset, count) and <prefix>.bin (little-endian f64, concatenated in
/// manifest order).
void save_model(const std::string& prefix, const Model& model);
Model load_model(const std::string& prefix);

}  // namespace cohlab
