#include "voxelcom/scene.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "voxelcom/image.hpp"
#include "voxelcom/rng.hpp"

namespace voxelcom {

namespace {

using nlohmann::json;

Vec3 random_color(Rng& rng) {
  return {rng.uniform(0.2, 0.95), rng.uniform(0.2, 0.95), rng.uniform(0.2, 0.95)};
}

}  // namespace

bool SceneGeometry::lookup(const Vec3& p, Vec3* color) const {
  for (const auto& s : spheres) {
    const double dx = p[0] - s.center[0], dy = p[1] - s.center[1], dz = p[2] - s.center[2];
    if (dx * dx + dy * dy + dz * dz <= s.radius * s.radius) {
      if (color) *color = s.color;
      return true;
    }
  }
  for (const auto& b : boxes) {
    if (p[0] >= b.lo[0] && p[0] <= b.hi[0] && p[1] >= b.lo[1] && p[1] <= b.hi[1] &&
        p[2] >= b.lo[2] && p[2] <= b.hi[2]) {
      if (color) *color = b.color;
      return true;
    }
  }
  for (const auto& f : floors) {
    if (p[2] >= f.z_lo && p[2] <= f.z_hi) {
      if (color) {
        const auto ix = static_cast<int64_t>(std::floor(p[0] / f.cell));
        const auto iy = static_cast<int64_t>(std::floor(p[1] / f.cell));
        *color = ((ix + iy) & 1) ? f.color_b : f.color_a;
      }
      return true;
    }
  }
  return false;
}

VoxelFeatureGrid VoxelFeatureGrid::empty(int64_t d, int64_t h, int64_t w, int64_t c) {
  VoxelFeatureGrid g;
  g.D = d;
  g.H = h;
  g.W = w;
  g.C = c;
  g.values = Tensor::zeros(Shape{d, h, w, c});
  return g;
}

void View::validate() const {
  if (focal <= 0 || width <= 0 || height <= 0) fail(ErrorKind::config, "view: nonpositive intrinsics");
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0;
      for (int k = 0; k < 3; ++k)
        dot += pose[static_cast<size_t>(4 * k + i)] * pose[static_cast<size_t>(4 * k + j)];
      const double want = i == j ? 1.0 : 0.0;
      if (std::abs(dot - want) > 1e-5) fail(ErrorKind::config, "view: rotation not orthonormal");
    }
}

VoxelFeatureGrid rasterize_scene(const SceneGeometry& geom, std::array<int64_t, 3> dims, int64_t C) {
  if (C < 4 || C > 16) fail(ErrorKind::config, "scene: C must be in [4,16], got " + std::to_string(C));
  for (int64_t d : dims)
    if (d < 1 || d > 64) fail(ErrorKind::config, "scene: dims must be in [1,64]");
  VoxelFeatureGrid g = VoxelFeatureGrid::empty(dims[0], dims[1], dims[2], C);
  std::span<float> v = g.values.mutable_data();
  int64_t off = 0;
  for (int64_t d = 0; d < g.D; ++d)
    for (int64_t h = 0; h < g.H; ++h)
      for (int64_t w = 0; w < g.W; ++w, off += C) {
        const Vec3 p{-1.0 + 2.0 * (static_cast<double>(d) + 0.5) / static_cast<double>(g.D),
                     -1.0 + 2.0 * (static_cast<double>(h) + 0.5) / static_cast<double>(g.H),
                     -1.0 + 2.0 * (static_cast<double>(w) + 0.5) / static_cast<double>(g.W)};
        Vec3 color{0.5, 0.5, 0.5};
        const bool inside = geom.lookup(p, &color);
        v[off] = static_cast<float>(inside ? geom.inside_logit : geom.outside_logit);
        for (int64_t c = 1; c < C; ++c)
          v[off + c] = c <= 3 ? static_cast<float>(color[static_cast<size_t>(c - 1)]) : 0.f;
      }
  return g;
}

GeneratedScene generate_scene(const std::string& kind, uint64_t seed, std::array<int64_t, 3> dims,
                              int64_t C) {
  SceneGeometry geom;
  geom.kind = kind;
  Rng rng = Rng::derive(seed, "scene/" + kind);
  if (kind == "spheres") {
    const int n = 3 + static_cast<int>(rng.uniform_int(3));
    for (int i = 0; i < n; ++i) {
      SphereObj s;
      s.radius = rng.uniform(0.15, 0.3);
      for (auto& c : s.center) c = rng.uniform(-0.55, 0.55);
      s.color = random_color(rng);
      geom.spheres.push_back(s);
    }
  } else if (kind == "boxes") {
    const int n = 2 + static_cast<int>(rng.uniform_int(3));
    for (int i = 0; i < n; ++i) {
      BoxObj b;
      for (int a = 0; a < 3; ++a) {
        const double c = rng.uniform(-0.5, 0.5);
        const double half = rng.uniform(0.1, 0.25);
        b.lo[static_cast<size_t>(a)] = c - half;
        b.hi[static_cast<size_t>(a)] = c + half;
      }
      b.color = random_color(rng);
      geom.boxes.push_back(b);
    }
  } else if (kind == "checker_room") {
    CheckerFloor f;
    f.color_a = random_color(rng);
    f.color_b = random_color(rng);
    geom.floors.push_back(f);
    for (int i = 0; i < 2; ++i) {
      BoxObj b;
      const double cx = rng.uniform(-0.45, 0.45), cy = rng.uniform(-0.45, 0.45);
      const double half = rng.uniform(0.1, 0.2);
      b.lo = {cx - half, cy - half, -0.75};
      b.hi = {cx + half, cy + half, -0.75 + 2 * half};
      b.color = random_color(rng);
      geom.boxes.push_back(b);
    }
  } else if (kind == "empty") {
    geom.outside_logit = -40.0;
  } else {
    fail(ErrorKind::config, "scene: unsupported kind '" + kind + "'");
  }
  return {geom, rasterize_scene(geom, dims, C)};
}

std::vector<View> make_view_sphere(int count, int width, int height, double fov_deg,
                                   double radius) {
  if (count < 1) fail(ErrorKind::config, "views: count must be >= 1");
  std::vector<View> out;
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int k = 0; k < count; ++k) {
    const double z = count == 1 ? 0.4 : 0.75 - 1.0 * static_cast<double>(k) / (count - 1);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double az = golden * k;
    const Vec3 pos{radius * r * std::cos(az), radius * r * std::sin(az), radius * z};

    // Camera looks along its -z axis toward the origin; world up is +z.
    Vec3 zc{pos[0], pos[1], pos[2]};
    const double nz = std::sqrt(zc[0] * zc[0] + zc[1] * zc[1] + zc[2] * zc[2]);
    for (auto& c : zc) c /= nz;
    Vec3 xc{-zc[1], zc[0], 0.0};
    const double nx = std::sqrt(xc[0] * xc[0] + xc[1] * xc[1]);
    for (auto& c : xc) c /= nx;
    const Vec3 yc{zc[1] * xc[2] - zc[2] * xc[1], zc[2] * xc[0] - zc[0] * xc[2],
                  zc[0] * xc[1] - zc[1] * xc[0]};

    View v;
    v.width = width;
    v.height = height;
    v.focal = 0.5 * width / std::tan(0.5 * fov_deg * M_PI / 180.0);
    v.cx = 0.5 * width;
    v.cy = 0.5 * height;
    v.direction_id = k;
    for (int i = 0; i < 3; ++i) {
      v.pose[static_cast<size_t>(4 * i + 0)] = xc[static_cast<size_t>(i)];
      v.pose[static_cast<size_t>(4 * i + 1)] = yc[static_cast<size_t>(i)];
      v.pose[static_cast<size_t>(4 * i + 2)] = zc[static_cast<size_t>(i)];
      v.pose[static_cast<size_t>(4 * i + 3)] = pos[static_cast<size_t>(i)];
    }
    v.pose[15] = 1.0;
    v.validate();
    out.push_back(v);
  }
  return out;
}

std::vector<uint8_t> patch_occupancy(const SceneGeometry& geom, std::array<int64_t, 3> dims,
                                     int factor) {
  const int64_t pd = dims[0] / factor, ph = dims[1] / factor, pw = dims[2] / factor;
  std::vector<uint8_t> occ(static_cast<size_t>(pd * ph * pw), 0);
  for (int64_t d = 0; d < dims[0]; ++d)
    for (int64_t h = 0; h < dims[1]; ++h)
      for (int64_t w = 0; w < dims[2]; ++w) {
        const Vec3 p{-1.0 + 2.0 * (static_cast<double>(d) + 0.5) / static_cast<double>(dims[0]),
                     -1.0 + 2.0 * (static_cast<double>(h) + 0.5) / static_cast<double>(dims[1]),
                     -1.0 + 2.0 * (static_cast<double>(w) + 0.5) / static_cast<double>(dims[2])};
        if (geom.occupied(p))
          occ[static_cast<size_t>(((d / factor) * ph + h / factor) * pw + w / factor)] = 1;
      }
  return occ;
}

void save_grid(const std::string& path, const VoxelFeatureGrid& g) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "grid: cannot write " + path);
  os.write("VFG1", 4);
  const uint32_t dims[4] = {static_cast<uint32_t>(g.D), static_cast<uint32_t>(g.H),
                            static_cast<uint32_t>(g.W), static_cast<uint32_t>(g.C)};
  os.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  os.write(reinterpret_cast<const char*>(g.bbox_min.data()), 3 * sizeof(float));
  os.write(reinterpret_cast<const char*>(g.bbox_max.data()), 3 * sizeof(float));
  std::span<const float> d = g.values.data();
  os.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(float)));
  if (!os) fail(ErrorKind::io, "grid: write failed for " + path);
}

VoxelFeatureGrid load_grid(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::prerequisite, "grid: missing file " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "VFG1", 4) != 0) fail(ErrorKind::io, "grid: bad magic in " + path);
  uint32_t dims[4];
  is.read(reinterpret_cast<char*>(dims), sizeof(dims));
  VoxelFeatureGrid g;
  g.D = dims[0];
  g.H = dims[1];
  g.W = dims[2];
  g.C = dims[3];
  is.read(reinterpret_cast<char*>(g.bbox_min.data()), 3 * sizeof(float));
  is.read(reinterpret_cast<char*>(g.bbox_max.data()), 3 * sizeof(float));
  if (!is) fail(ErrorKind::io, "grid: truncated header in " + path);
  std::vector<float> payload(static_cast<size_t>(g.D * g.H * g.W * g.C));
  is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!is) fail(ErrorKind::io, "grid: truncated payload in " + path);
  g.values = Tensor::from(Shape{g.D, g.H, g.W, g.C}, std::move(payload));
  return g;
}

void save_views(const std::string& path, const std::vector<View>& views,
                const std::vector<std::string>& image_paths) {
  if (!image_paths.empty() && image_paths.size() != views.size())
    fail(ErrorKind::config, "views: image path count mismatch");
  json arr = json::array();
  for (size_t i = 0; i < views.size(); ++i) {
    const View& v = views[i];
    json jv;
    jv["pose"] = v.pose;
    jv["focal"] = v.focal;
    jv["cx"] = v.cx;
    jv["cy"] = v.cy;
    jv["width"] = v.width;
    jv["height"] = v.height;
    jv["direction_id"] = v.direction_id;
    if (!image_paths.empty()) jv["image"] = image_paths[i];
    arr.push_back(std::move(jv));
  }
  std::ofstream os(path);
  if (!os) fail(ErrorKind::io, "views: cannot write " + path);
  os << arr.dump(1) << "\n";
}

std::vector<View> load_views(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::prerequisite, "views: missing file " + path);
  json arr;
  try {
    is >> arr;
  } catch (const json::exception& e) {
    fail(ErrorKind::io, "views: bad JSON in " + path + ": " + e.what());
  }
  const auto dir = std::filesystem::path(path).parent_path();
  std::vector<View> out;
  for (const auto& jv : arr) {
    View v;
    const auto pose = jv.at("pose").get<std::vector<double>>();
    if (pose.size() != 16) fail(ErrorKind::io, "views: pose must have 16 entries in " + path);
    std::copy(pose.begin(), pose.end(), v.pose.begin());
    v.focal = jv.at("focal").get<double>();
    v.cx = jv.at("cx").get<double>();
    v.cy = jv.at("cy").get<double>();
    v.width = jv.at("width").get<int>();
    v.height = jv.at("height").get<int>();
    v.direction_id = jv.at("direction_id").get<int>();
    if (jv.contains("image")) v.image = load_ppm((dir / jv.at("image").get<std::string>()).string());
    v.validate();
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace voxelcom
