#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "voxelcom/tensor.hpp"

namespace voxelcom {

using Vec3 = std::array<double, 3>;

struct SphereObj {
  Vec3 center;
  double radius;
  Vec3 color;
};

struct BoxObj {
  Vec3 lo, hi;
  Vec3 color;
};

// Checkerboard slab spanning z in [z_lo, z_hi], alternating colors in x/y.
struct CheckerFloor {
  double z_lo = -0.95, z_hi = -0.75;
  double cell = 0.25;
  Vec3 color_a{0.85, 0.85, 0.85}, color_b{0.15, 0.15, 0.15};
};

// Analytic scene description. Kept alongside the rasterized grid so tests can
// ask exact geometric questions (projected areas, occupancy per region).
struct SceneGeometry {
  std::string kind;
  std::vector<SphereObj> spheres;
  std::vector<BoxObj> boxes;
  std::vector<CheckerFloor> floors;  // 0 or 1
  double inside_logit = 30.0;        // density logit inside objects
  double outside_logit = -10.0;      // near-zero density elsewhere; -40 for empty

  bool lookup(const Vec3& p, Vec3* color) const;
  bool occupied(const Vec3& p) const { return lookup(p, nullptr); }
};

struct VoxelFeatureGrid {
  int64_t D = 0, H = 0, W = 0, C = 0;
  std::array<float, 3> bbox_min{-1.f, -1.f, -1.f};
  std::array<float, 3> bbox_max{1.f, 1.f, 1.f};
  Tensor values;  // [D,H,W,C]; channel 0 density logit, 1..3 color

  int64_t m() const { return D * H * W * C; }
  static VoxelFeatureGrid empty(int64_t d, int64_t h, int64_t w, int64_t c);
};

struct View {
  std::array<double, 16> pose{};  // row-major camera-to-world; rotation orthonormal
  double focal = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  int direction_id = 0;
  Tensor image;  // [H,W,3] in [0,1]; may be undefined for novel poses

  void validate() const;  // orthonormality within 1e-5, positive intrinsics
};

struct SceneDataset {
  std::vector<View> train_views, test_views;
  std::string scene_id;
};

struct GeneratedScene {
  SceneGeometry geometry;
  VoxelFeatureGrid grid;
};

// kind in {spheres, boxes, checker_room, empty}. Deterministic in seed.
GeneratedScene generate_scene(const std::string& kind, uint64_t seed,
                              std::array<int64_t, 3> dims, int64_t C);

// Rasterizes analytic geometry onto a voxel grid (unit bbox [-1,1]^3).
VoxelFeatureGrid rasterize_scene(const SceneGeometry& geom, std::array<int64_t, 3> dims, int64_t C);

// count views spread on a sphere of given radius looking at the origin;
// golden-spiral placement, deterministic.
std::vector<View> make_view_sphere(int count, int width, int height, double fov_deg,
                                   double radius);

// Marks each patch of the (dims/factor)^3 lattice as occupied when any voxel
// center inside it lies in an analytic object.
std::vector<uint8_t> patch_occupancy(const SceneGeometry& geom, std::array<int64_t, 3> dims,
                                     int factor);

// Grid file ("VFG1"): dims, C, bbox, f32 payload, little-endian.
void save_grid(const std::string& path, const VoxelFeatureGrid& g);
VoxelFeatureGrid load_grid(const std::string& path);

// Views file: JSON array of poses + intrinsics + image paths (relative).
void save_views(const std::string& path, const std::vector<View>& views,
                const std::vector<std::string>& image_paths);
std::vector<View> load_views(const std::string& path);  // loads images too

}  // namespace voxelcom
