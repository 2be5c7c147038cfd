#include "stablecde/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "stablecde/errors.hpp"

namespace stablecde::io {

namespace {

void require_little_endian() {
  if constexpr (std::endian::native != std::endian::little)
    throw NumericalError("checkpoint: payload is little-endian only");
}

}  // namespace

void save_checkpoint(const std::string& path, const nlohmann::json& header,
                     const std::vector<std::pair<std::string, const ad::Array*>>& arrays) {
  require_little_endian();
  nlohmann::json h = header;
  nlohmann::json shapes = nlohmann::json::array();
  std::size_t payload = 0;
  for (const auto& [name, arr] : arrays) {
    nlohmann::json dims = nlohmann::json::array();
    for (std::size_t s : arr->shape()) dims.push_back(s);
    shapes.push_back({{"name", name}, {"shape", dims}});
    payload += arr->size();
  }
  h["shapes"] = shapes;
  h["payload_doubles"] = payload;
  const std::string hs = h.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("save_checkpoint: cannot open " + path);
  f.write(kMagic, 4);
  const std::uint32_t ver = kVersion;
  f.write(reinterpret_cast<const char*>(&ver), sizeof ver);
  const std::uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  f.write(hs.data(), static_cast<long>(hs.size()));
  for (const auto& [name, arr] : arrays)
    f.write(reinterpret_cast<const char*>(arr->data()),
            static_cast<long>(arr->size() * sizeof(double)));
  if (!f) throw DataError("save_checkpoint: write failed for " + path);
}

const ad::Array& LoadedCheckpoint::get(const std::string& name) const {
  for (const auto& [n, a] : arrays)
    if (n == name) return a;
  throw DataError("checkpoint: missing array " + name);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  require_little_endian();
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("load_checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("load_checkpoint: bad magic in " + path);
  std::uint32_t ver = 0;
  f.read(reinterpret_cast<char*>(&ver), sizeof ver);
  if (ver != kVersion)
    throw DataError("load_checkpoint: unsupported version " + std::to_string(ver));
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<long>(hlen));
  if (!f) throw DataError("load_checkpoint: truncated header in " + path);

  LoadedCheckpoint lc;
  try {
    lc.header = nlohmann::json::parse(hs);
  } catch (const std::exception& e) {
    throw DataError("load_checkpoint: header parse error: " + std::string(e.what()));
  }
  for (const auto& entry : lc.header.at("shapes")) {
    const std::string name = entry.at("name").get<std::string>();
    std::vector<std::size_t> shape;
    for (const auto& d : entry.at("shape")) shape.push_back(d.get<std::size_t>());
    ad::Array arr(shape);
    f.read(reinterpret_cast<char*>(arr.data()),
           static_cast<long>(arr.size() * sizeof(double)));
    if (!f) throw DataError("load_checkpoint: truncated payload in " + path);
    lc.arrays.emplace_back(name, std::move(arr));
  }
  return lc;
}

}  // namespace stablecde::io
