#include "kronsum/manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <memory>

#include "kronsum/errors.hpp"

namespace kronsum {

std::string sha256_hex(std::string_view bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1)
    throw Error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

std::string canonical_json(const nlohmann::json& j) { return j.dump(); }

std::string config_hash(const nlohmann::json& config) { return sha256_hex(canonical_json(config)); }

nlohmann::json RunManifest::to_json() const {
  return nlohmann::json{{"command", command},           {"config_hash", config_hash},
                        {"inputs", inputs},             {"outputs", outputs},
                        {"seed", seed},                 {"tool_version", tool_version}};
}

}  // namespace kronsum
