#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace imbpos {

// A named tensor of little-endian float64 values.
struct Blob {
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

// On-disk layout:
//   bytes 0..7    magic "IMBPOSC1"
//   bytes 8..15   manifest length L (uint64, little-endian)
//   next L bytes  UTF-8 JSON manifest; its "blobs" array lists
//                 {name, shape, offset, count} with offset/count in doubles
//   remainder     concatenated float64 payloads, little-endian
// The round trip is bit-exact: payloads are copied, never formatted.
struct Container {
  nlohmann::json manifest = nlohmann::json::object();
  std::map<std::string, Blob> blobs;
};

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

}  // namespace imbpos
