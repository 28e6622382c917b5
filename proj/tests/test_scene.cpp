#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "testutil.hpp"
#include "voxelcom/image.hpp"
#include "voxelcom/render.hpp"
#include "voxelcom/scene.hpp"

using namespace voxelcom;
using testutil::fd_check;

namespace {

View face_on_view(double dist, int size, double fov_deg) {
  // Camera on +x axis looking at the origin (-z axis of the camera frame).
  View v;
  v.width = size;
  v.height = size;
  v.focal = 0.5 * size / std::tan(0.5 * fov_deg * M_PI / 180.0);
  v.cx = 0.5 * size;
  v.cy = 0.5 * size;
  const double R[9] = {0, 0, 1, -1, 0, 0, 0, -1, 0};  // columns: x_cam, y_cam, z_cam
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) v.pose[static_cast<size_t>(4 * i + j)] = R[3 * i + j];
    v.pose[static_cast<size_t>(4 * i + 3)] = i == 0 ? dist : 0.0;
  }
  v.pose[15] = 1.0;
  return v;
}

VoxelFeatureGrid colored_voxel_grid(int64_t n, std::vector<std::array<int64_t, 3>> voxels,
                                    std::vector<Vec3> colors) {
  // Density only in the listed voxels; the color field is painted over each
  // voxel's whole neighborhood so trilinear blending cannot mix in background.
  VoxelFeatureGrid g = VoxelFeatureGrid::empty(n, n, n, 4);
  std::span<float> v = g.values.mutable_data();
  for (int64_t i = 0; i < n * n * n; ++i) v[i * 4] = -40.f;
  for (size_t k = 0; k < voxels.size(); ++k) {
    const auto [d, h, w] = voxels[k];
    v[((d * n + h) * n + w) * 4] = 200.f;
    for (int64_t dd = -1; dd <= 1; ++dd)
      for (int64_t dh = -1; dh <= 1; ++dh)
        for (int64_t dw = -1; dw <= 1; ++dw) {
          const int64_t off = (((d + dd) * n + h + dh) * n + w + dw) * 4;
          for (int c = 0; c < 3; ++c) v[off + 1 + c] = static_cast<float>(colors[k][static_cast<size_t>(c)]);
        }
  }
  return g;
}

}  // namespace

TEST_CASE("generate_scene is deterministic and validates kind") {
  GeneratedScene a = generate_scene("spheres", 7, {32, 32, 32}, 4);
  GeneratedScene b = generate_scene("spheres", 7, {32, 32, 32}, 4);
  CHECK(std::memcmp(a.grid.values.data().data(), b.grid.values.data().data(),
                    static_cast<size_t>(a.grid.m()) * sizeof(float)) == 0);
  GeneratedScene c = generate_scene("spheres", 8, {32, 32, 32}, 4);
  CHECK(std::memcmp(a.grid.values.data().data(), c.grid.values.data().data(),
                    static_cast<size_t>(a.grid.m()) * sizeof(float)) != 0);
  CHECK_THROWS_AS((void)generate_scene("teapots", 1, {16, 16, 16}, 4), Error);
}

TEST_CASE("empty scene renders to pure background everywhere") {
  GeneratedScene s = generate_scene("empty", 3, {16, 16, 16}, 4);
  Tensor img = render_image(s.grid, face_on_view(2.8, 16, 50.0), 32);
  for (float p : img.data()) CHECK(p == 0.5f);

  Graph g;
  RaySet rays = make_rays(face_on_view(2.8, 4, 50.0));
  RayBatch batch = prepare_batch(s.grid, rays.origins, rays.dirs, rays.count, 16);
  Value pix = render_batch(g, g.constant(s.grid.values), batch);
  for (float p : pix.tensor().data()) CHECK(p == 0.5f);
}

TEST_CASE("centered sphere silhouette matches analytic projected disc area") {
  SceneGeometry geom;
  geom.kind = "one_sphere";
  geom.spheres.push_back({{0, 0, 0}, 0.65, {0.9, 0.2, 0.2}});
  VoxelFeatureGrid grid = rasterize_scene(geom, {64, 64, 64}, 4);
  const double dist = 2.6;
  const int size = 128;
  View v = face_on_view(dist, size, 50.0);
  Tensor img = render_image(grid, v, 256);
  int64_t count = 0;
  std::span<const float> px = img.data();
  for (int64_t p = 0; p < size * size; ++p)
    if (std::abs(px[p * 3] - 0.5f) > 0.2f) count += 1;
  const double pix_radius = v.focal * std::tan(std::asin(0.65 / dist));
  const double analytic = M_PI * pix_radius * pix_radius;
  CHECK(std::abs(static_cast<double>(count) - analytic) / analytic < 0.05);
}

TEST_CASE("make_rays: pinhole geometry") {
  View v = face_on_view(3.0, 17, 45.0);  // odd size: center pixel hits the principal point
  v.cx = 8.5;
  v.cy = 8.5;
  RaySet rs = make_rays(v);
  CHECK(rs.count == 17 * 17);
  for (int r = 0; r < rs.count; ++r) {
    const double* d = &rs.dirs[static_cast<size_t>(r) * 3];
    CHECK(std::abs(std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) - 1.0) < 1e-6);
  }
  // Center pixel (8,8): along camera -z, which is world -x for this pose.
  const double* dc = &rs.dirs[static_cast<size_t>(8 * 17 + 8) * 3];
  CHECK(dc[0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(std::abs(dc[1]) < 1e-9);
  CHECK(std::abs(dc[2]) < 1e-9);
  // Corner pixel angle vs atan(half-extent / focal).
  const double* d0 = &rs.dirs[0];
  const double cosang = -d0[0];  // dot with camera forward (-z_cam = world -x)
  const double half = std::hypot(v.cx - 0.5, v.cy - 0.5);
  const double want = std::atan(half / v.focal);
  CHECK(std::abs(std::acos(cosang) - want) < 1e-6);
}

TEST_CASE("opaque voxel compositing against brute-force oracle") {
  const int64_t n = 9;
  View v = face_on_view(3.0, 1, 10.0);
  v.cx = 0.5;
  v.cy = 0.5;  // single ray through the exact center

  VoxelFeatureGrid one = colored_voxel_grid(n, {{4, 4, 4}}, {{0.2, 0.7, 0.9}});
  Tensor px = render_image(one, v, 10000);
  CHECK(px.data()[0] == doctest::Approx(0.2).epsilon(1e-3));
  CHECK(px.data()[1] == doctest::Approx(0.7).epsilon(1e-3));
  CHECK(px.data()[2] == doctest::Approx(0.9).epsilon(1e-3));

  // Ray travels along -x (world), entering at d = n-1 side first.
  VoxelFeatureGrid two = colored_voxel_grid(n, {{2, 4, 4}, {6, 4, 4}}, {{0.9, 0.1, 0.1}, {0.1, 0.9, 0.1}});
  Tensor px2 = render_image(two, v, 10000);
  CHECK(px2.data()[0] == doctest::Approx(0.1).epsilon(1e-3));
  CHECK(px2.data()[1] == doctest::Approx(0.9).epsilon(1e-3));
}

TEST_CASE("compositing weights plus background weight sum to one") {
  GeneratedScene s = generate_scene("spheres", 11, {16, 16, 16}, 4);
  VoxelFeatureGrid white = s.grid, black = s.grid;
  {
    std::span<float> w = white.values.mutable_data(), b = black.values.mutable_data();
    for (int64_t i = 0; i < white.m(); i += 4)
      for (int64_t c = 1; c < 4; ++c) {
        w[i + c] = 1.f;
        b[i + c] = 0.f;
      }
  }
  View v = face_on_view(2.8, 12, 50.0);
  Tensor iw = render_image(white, v, 64);
  Tensor ib = render_image(black, v, 64);
  std::span<const float> pw = iw.data(), pb = ib.data();
  for (int64_t i = 0; i < iw.numel(); ++i) {
    // white: sum(w)+0.5T, black: 0.5T, so their sum is sum(w)+T.
    CHECK(std::abs((pw[i] + pb[i]) - 1.0) < 1e-5);
  }
}

TEST_CASE("render converges as steps double on 3 fixed scenes") {
  int scene_idx = 0;
  for (const char* kind : {"spheres", "boxes", "checker_room"}) {
    GeneratedScene s = generate_scene(kind, 20 + scene_idx++, {16, 16, 16}, 4);
    View v = face_on_view(2.8, 16, 50.0);
    Tensor a = render_image(s.grid, v, 32);
    Tensor b = render_image(s.grid, v, 64);
    Tensor c = render_image(s.grid, v, 128);
    double d1 = 0, d2 = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
      d1 = std::max(d1, std::abs(static_cast<double>(a.data()[i]) - b.data()[i]));
      d2 = std::max(d2, std::abs(static_cast<double>(b.data()[i]) - c.data()[i]));
    }
    CHECK(d2 < std::max(2.0 * d1, 1e-6));
  }
}

TEST_CASE("graph renderer matches the plain renderer") {
  GeneratedScene s = generate_scene("boxes", 31, {16, 16, 16}, 4);
  View v = face_on_view(2.8, 8, 50.0);
  Tensor plain = render_image(s.grid, v, 24);
  RaySet rays = make_rays(v);
  RayBatch batch = prepare_batch(s.grid, rays.origins, rays.dirs, rays.count, 24);
  Graph g;
  Value pix = render_batch(g, g.constant(s.grid.values), batch);
  std::span<const float> a = plain.data(), b = pix.tensor().data();
  for (int64_t i = 0; i < plain.numel(); ++i) CHECK(std::abs(a[i] - b[i]) < 2e-4);
}

TEST_CASE("render MSE gradient wrt grid passes finite differences") {
  Rng rng(77);
  Params p;
  {
    std::vector<float> vals(4 * 4 * 4 * 4);
    for (size_t i = 0; i < vals.size(); ++i)
      vals[i] = static_cast<float>(i % 4 == 0 ? rng.uniform(-1.5, 1.5) : rng.uniform(0.1, 0.9));
    p.emplace("grid", Tensor::from(Shape{4, 4, 4, 4}, std::move(vals)));
  }
  VoxelFeatureGrid meta = VoxelFeatureGrid::empty(4, 4, 4, 4);
  View v = face_on_view(2.8, 2, 50.0);
  RaySet rays = make_rays(v);
  RayBatch batch = prepare_batch(meta, rays.origins, rays.dirs, rays.count, 8);
  Tensor target = testutil::random_tensor(Shape{4, 3}, rng, 0.0, 1.0);
  auto build = [batch, target](Graph& g, Binder& bind) {
    return mse(g, render_batch(g, bind("grid"), batch), g.constant(target));
  };
  auto rep = fd_check(p, build, 0x1p-10, 24);
  INFO(rep.worst);
  CHECK(rep.max_rel < 1e-2);
}

TEST_CASE("grid, views and image files round-trip") {
  GeneratedScene s = generate_scene("checker_room", 4, {16, 16, 16}, 4);
  const std::string dir = "scene_io_test";
  std::filesystem::create_directories(dir);
  save_grid(dir + "/g.vfg", s.grid);
  VoxelFeatureGrid g2 = load_grid(dir + "/g.vfg");
  CHECK(g2.D == 16);
  CHECK(g2.C == 4);
  CHECK(std::memcmp(g2.values.data().data(), s.grid.values.data().data(),
                    static_cast<size_t>(s.grid.m()) * sizeof(float)) == 0);

  std::vector<View> views = make_view_sphere(3, 8, 8, 50.0, 2.8);
  std::vector<std::string> paths;
  for (size_t i = 0; i < views.size(); ++i) {
    views[i].image = render_image(s.grid, views[i], 32);
    paths.push_back("im" + std::to_string(i) + ".ppm");
    save_ppm(dir + "/" + paths.back(), views[i].image);
  }
  save_views(dir + "/views.json", views, paths);
  std::vector<View> loaded = load_views(dir + "/views.json");
  REQUIRE(loaded.size() == views.size());
  for (size_t i = 0; i < views.size(); ++i) {
    for (int j = 0; j < 16; ++j) CHECK(loaded[i].pose[static_cast<size_t>(j)] == views[i].pose[static_cast<size_t>(j)]);
    CHECK(loaded[i].focal == views[i].focal);
    std::span<const float> a = views[i].image.data(), b = loaded[i].image.data();
    for (int64_t k = 0; k < views[i].image.numel(); ++k)
      CHECK(std::abs(a[k] - b[k]) <= 0.5f / 255.f + 1e-6f);
  }
  CHECK_THROWS_AS((void)load_grid(dir + "/nope.vfg"), Error);
}

TEST_CASE("patch occupancy marks sphere center, not corners") {
  SceneGeometry geom;
  geom.spheres.push_back({{0, 0, 0}, 0.5, {1, 0, 0}});
  auto occ = patch_occupancy(geom, {32, 32, 32}, 4);
  REQUIRE(occ.size() == 8 * 8 * 8);
  auto at = [&](int64_t d, int64_t r, int64_t c) { return occ[static_cast<size_t>((d * 8 + r) * 8 + c)]; };
  CHECK(at(3, 3, 3) == 1);
  CHECK(at(4, 4, 4) == 1);
  CHECK(at(0, 0, 0) == 0);
  CHECK(at(7, 7, 7) == 0);
}
