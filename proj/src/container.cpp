#include "imbpos/container.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "imbpos/error.hpp"

namespace imbpos {

namespace {

constexpr char kMagic[8] = {'I', 'M', 'B', 'P', 'O', 'S', 'C', '1'};

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return __builtin_bswap64(v);
  }
  return v;
}

void write_u64(std::ostream& out, std::uint64_t v) {
  v = to_le(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return to_le(v);
}

}  // namespace

void write_container(const std::filesystem::path& path, const Container& c) {
  nlohmann::json manifest = c.manifest;
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, blob] : c.blobs) {
    std::size_t expected = 1;
    for (std::size_t d : blob.shape) expected *= d;
    if (expected != blob.data.size()) {
      throw Error(ErrorCode::ShapeMismatch, "blob '" + name + "' shape does not match payload size");
    }
    index.push_back({{"name", name}, {"shape", blob.shape}, {"offset", offset}, {"count", blob.data.size()}});
    offset += blob.data.size();
  }
  manifest["blobs"] = index;
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof kMagic);
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, blob] : c.blobs) {
    for (double v : blob.data) {
      write_u64(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw Error(ErrorCode::IoError, path.string() + " is not a container file");
  }
  const std::uint64_t length = read_u64(in);
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw Error(ErrorCode::IoError, "truncated manifest in " + path.string());

  Container c;
  c.manifest = nlohmann::json::parse(text);
  const nlohmann::json index = c.manifest.at("blobs");
  c.manifest.erase("blobs");

  std::vector<double> payload;
  while (true) {
    std::uint64_t raw = 0;
    in.read(reinterpret_cast<char*>(&raw), sizeof raw);
    if (in.gcount() == 0) break;
    if (in.gcount() != sizeof raw) throw Error(ErrorCode::IoError, "truncated payload in " + path.string());
    payload.push_back(std::bit_cast<double>(to_le(raw)));
  }
  for (const auto& entry : index) {
    Blob blob;
    blob.shape = entry.at("shape").get<std::vector<std::size_t>>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto count = entry.at("count").get<std::size_t>();
    if (offset + count > payload.size()) {
      throw Error(ErrorCode::IoError, "blob out of range in " + path.string());
    }
    blob.data.assign(payload.begin() + static_cast<std::ptrdiff_t>(offset),
                     payload.begin() + static_cast<std::ptrdiff_t>(offset + count));
    c.blobs.emplace(entry.at("name").get<std::string>(), std::move(blob));
  }
  return c;
}

}  // namespace imbpos
