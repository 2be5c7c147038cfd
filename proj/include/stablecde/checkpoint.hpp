#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "stablecde/array.hpp"

namespace stablecde::io {

// Versioned checkpoint container: magic, version, JSON header (shapes,
// config echo, epoch, loss snapshot), then the flat little-endian 64-bit
// parameter payload.
inline constexpr char kMagic[4] = {'S', 'C', 'D', 'E'};
inline constexpr std::uint32_t kVersion = 1;

void save_checkpoint(const std::string& path, const nlohmann::json& header,
                     const std::vector<std::pair<std::string, const ad::Array*>>& arrays);

struct LoadedCheckpoint {
  nlohmann::json header;
  std::vector<std::pair<std::string, ad::Array>> arrays;
  const ad::Array& get(const std::string& name) const;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace stablecde::io
