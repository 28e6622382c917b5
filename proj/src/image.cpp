#include "voxelcom/image.hpp"

#include <cmath>
#include <fstream>
#include <vector>

namespace voxelcom {

void save_ppm(const std::string& path, const Tensor& image) {
  const Shape& s = image.shape();
  if (s.rank() != 3 || s[2] != 3) fail(ErrorKind::shape, "ppm: image must be [H,W,3], got " + s.str());
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "ppm: cannot write " + path);
  os << "P6\n" << s[1] << " " << s[0] << "\n255\n";
  std::span<const float> d = image.data();
  std::vector<unsigned char> row(static_cast<size_t>(s.numel()));
  for (int64_t i = 0; i < image.numel(); ++i) {
    float v = std::min(1.f, std::max(0.f, d[i]));
    row[static_cast<size_t>(i)] = static_cast<unsigned char>(std::lround(v * 255.f));
  }
  os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  if (!os) fail(ErrorKind::io, "ppm: write failed for " + path);
}

Tensor load_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::prerequisite, "ppm: missing file " + path);
  std::string magic;
  is >> magic;
  if (magic != "P6") fail(ErrorKind::io, "ppm: bad magic in " + path);
  auto next_int = [&]() {
    int v = 0;
    is >> std::ws;
    while (is.peek() == '#') {
      std::string line;
      std::getline(is, line);
      is >> std::ws;
    }
    is >> v;
    if (!is) fail(ErrorKind::io, "ppm: bad header in " + path);
    return v;
  };
  const int w = next_int();
  const int h = next_int();
  const int maxv = next_int();
  if (w <= 0 || h <= 0 || maxv != 255) fail(ErrorKind::io, "ppm: unsupported header in " + path);
  is.get();  // single whitespace after maxval
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!is) fail(ErrorKind::io, "ppm: truncated pixel data in " + path);
  std::vector<float> v(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) v[i] = static_cast<float>(raw[i]) / 255.f;
  return Tensor::from(Shape{h, w, 3}, std::move(v));
}

}  // namespace voxelcom
