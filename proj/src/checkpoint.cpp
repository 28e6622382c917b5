#include "voxelcom/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

namespace voxelcom {

static_assert(std::endian::native == std::endian::little, "little-endian host assumed");

namespace {

constexpr char kMagic[4] = {'V', 'C', 'K', 'P'};
constexpr uint16_t kVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) fail(ErrorKind::io, "checkpoint: truncated file " + path);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Params& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "checkpoint: cannot write " + path);
  os.write(kMagic, 4);
  put(os, kVersion);
  put(os, static_cast<uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    if (name.size() > 0xffff) fail(ErrorKind::io, "checkpoint: name too long: " + name);
    put(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(os, static_cast<uint8_t>(t.shape().rank()));
    for (int i = 0; i < t.shape().rank(); ++i) put(os, static_cast<uint32_t>(t.shape()[i]));
    std::span<const float> d = t.data();
    os.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(float)));
  }
  if (!os) fail(ErrorKind::io, "checkpoint: write failed for " + path);
}

Params load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::prerequisite, "checkpoint: missing file " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    fail(ErrorKind::io, "checkpoint: bad magic in " + path);
  const auto version = get<uint16_t>(is, path);
  if (version != kVersion)
    fail(ErrorKind::io, "checkpoint: unsupported version " + std::to_string(version) + " in " + path);
  const auto count = get<uint32_t>(is, path);
  Params out;
  for (uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<uint16_t>(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) fail(ErrorKind::io, "checkpoint: truncated file " + path);
    const auto rank = get<uint8_t>(is, path);
    if (rank == 0 || rank > Shape::kMaxRank) fail(ErrorKind::io, "checkpoint: bad rank in " + path);
    Shape s;
    for (uint8_t r = 0; r < rank; ++r) s.push(static_cast<int64_t>(get<uint32_t>(is, path)));
    std::vector<float> payload(static_cast<size_t>(s.numel()));
    is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!is) fail(ErrorKind::io, "checkpoint: truncated file " + path);
    out.emplace(std::move(name), Tensor::from(s, std::move(payload)));
  }
  return out;
}

uint64_t fnv1a64(const void* data, size_t n, uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::string file_hash_hex(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::prerequisite, "hash: missing file " + path);
  uint64_t h = 14695981039346656037ull;
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof(buf));
    h = fnv1a64(buf, static_cast<size_t>(is.gcount()), h);
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return std::string(hex);
}

}  // namespace voxelcom
