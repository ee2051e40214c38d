#pragma once

#include "compose.hpp"

#include <json.hpp>

#include <string>

namespace flab {

// Process specs in the lab config format:
//   {"regime":"independent","epsilon":0.0,"factors":[{"kind":"mess3","alpha":0.6,"x":0.15}, ...]}
// Chain factors list their variants keyed by control value:
//   {"variants":[{"kind":"mess3",...}, ...]}
nlohmann::json factor_to_json(const FactorSpec& f);
FactorSpec factor_from_json(const nlohmann::json& j, const std::string& path);

nlohmann::json process_to_json(const ComposedSpec& spec);
ComposedSpec process_from_json(const nlohmann::json& j, const std::string& path = "process");

// Hex SHA-256 of the canonical JSON serialization.
std::string process_fingerprint(const ComposedSpec& spec);
std::string sha256_hex(std::string_view bytes);

}  // namespace flab
