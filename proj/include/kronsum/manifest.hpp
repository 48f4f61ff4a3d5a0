#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace kronsum {

inline constexpr const char* kToolVersion = "0.1.0";

std::string sha256_hex(std::string_view bytes);

// Compact dump with sorted keys: invariant to whitespace and key order.
std::string canonical_json(const nlohmann::json& j);
std::string config_hash(const nlohmann::json& config);

struct RunManifest {
  std::string command;
  std::string config_hash;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::uint64_t seed = 0;
  std::string tool_version = kToolVersion;

  nlohmann::json to_json() const;
};

}  // namespace kronsum
