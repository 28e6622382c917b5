#include "voxelcom/render.hpp"

#include <cmath>

namespace voxelcom {

namespace {

struct TriSample {
  int64_t idx[8];
  double w[8];
};

// Trilinear stencil at voxel-center coordinates x in [-0.5, D-0.5] per axis.
TriSample trilinear(const double x[3], const int64_t dims[3]) {
  int64_t i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    const double fl = std::floor(x[a]);
    i0[a] = static_cast<int64_t>(fl);
    f[a] = x[a] - fl;
  }
  auto cl = [&](int64_t i, int a) { return std::min(dims[a] - 1, std::max<int64_t>(0, i)); };
  TriSample s;
  int k = 0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx, ++k) {
        const int64_t d = cl(i0[0] + dz, 0), h = cl(i0[1] + dy, 1), w = cl(i0[2] + dx, 2);
        s.idx[k] = (d * dims[1] + h) * dims[2] + w;
        s.w[k] = (dz ? f[0] : 1 - f[0]) * (dy ? f[1] : 1 - f[1]) * (dx ? f[2] : 1 - f[2]);
      }
  return s;
}

// Slab test; returns false on miss. t0 clamped to 0 (camera may sit inside).
bool ray_box(const double o[3], const double d[3], const float lo[3], const float hi[3],
             double* t0, double* t1) {
  double a = 0.0, b = 1e30;
  for (int ax = 0; ax < 3; ++ax) {
    if (std::abs(d[ax]) < 1e-12) {
      if (o[ax] < lo[ax] || o[ax] > hi[ax]) return false;
      continue;
    }
    double u = (lo[ax] - o[ax]) / d[ax];
    double v = (hi[ax] - o[ax]) / d[ax];
    if (u > v) std::swap(u, v);
    a = std::max(a, u);
    b = std::min(b, v);
  }
  if (b <= a) return false;
  *t0 = a;
  *t1 = b;
  return true;
}

double softplus_d(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

RaySet make_rays(const View& v) {
  v.validate();
  RaySet rs;
  rs.count = v.width * v.height;
  rs.origins.reserve(static_cast<size_t>(rs.count) * 3);
  rs.dirs.reserve(static_cast<size_t>(rs.count) * 3);
  for (int r = 0; r < v.height; ++r)
    for (int c = 0; c < v.width; ++c) {
      const double dc[3] = {(c + 0.5 - v.cx) / v.focal, -(r + 0.5 - v.cy) / v.focal, -1.0};
      double dw[3];
      for (int i = 0; i < 3; ++i)
        dw[i] = v.pose[static_cast<size_t>(4 * i)] * dc[0] +
                v.pose[static_cast<size_t>(4 * i + 1)] * dc[1] +
                v.pose[static_cast<size_t>(4 * i + 2)] * dc[2];
      const double n = std::sqrt(dw[0] * dw[0] + dw[1] * dw[1] + dw[2] * dw[2]);
      for (int i = 0; i < 3; ++i) {
        rs.origins.push_back(v.pose[static_cast<size_t>(4 * i + 3)]);
        rs.dirs.push_back(dw[i] / n);
      }
    }
  return rs;
}

RayBatch prepare_batch(const VoxelFeatureGrid& meta, std::span<const double> origins,
                       std::span<const double> dirs, int count, int steps) {
  if (steps < 2) fail(ErrorKind::config, "render: steps_per_ray must be >= 2");
  RayBatch b;
  b.rays = count;
  b.steps = steps;
  b.idx.assign(static_cast<size_t>(count) * steps * 8, 0);
  b.w8.assign(static_cast<size_t>(count) * steps * 8, 0.f);
  b.delta.assign(static_cast<size_t>(count) * steps, 0.f);
  const int64_t dims[3] = {meta.D, meta.H, meta.W};
  for (int r = 0; r < count; ++r) {
    const double* o = &origins[static_cast<size_t>(r) * 3];
    const double* d = &dirs[static_cast<size_t>(r) * 3];
    double t0, t1;
    if (!ray_box(o, d, meta.bbox_min.data(), meta.bbox_max.data(), &t0, &t1)) continue;
    const double dt = (t1 - t0) / steps;
    for (int k = 0; k < steps; ++k) {
      const double t = t0 + (k + 0.5) * dt;
      double x[3];
      for (int a = 0; a < 3; ++a) {
        const double p = o[a] + t * d[a];
        const double norm = (p - meta.bbox_min[a]) / (meta.bbox_max[a] - meta.bbox_min[a]);
        x[a] = norm * static_cast<double>(dims[a]) - 0.5;
      }
      const TriSample s = trilinear(x, dims);
      const size_t base = (static_cast<size_t>(r) * steps + k) * 8;
      for (int j = 0; j < 8; ++j) {
        b.idx[base + j] = s.idx[j];
        b.w8[base + j] = static_cast<float>(s.w[j]);
      }
      b.delta[static_cast<size_t>(r) * steps + k] = static_cast<float>(dt);
    }
  }
  return b;
}

Value render_batch(Graph& g, Value grid_leaf, const RayBatch& b) {
  const Shape& gs = grid_leaf.shape();
  if (gs.rank() != 4) fail(ErrorKind::shape, "render: grid must be [D,H,W,C], got " + gs.str());
  const int64_t C = gs[3];
  if (C < 4) fail(ErrorKind::shape, "render: need >= 4 channels, got " + std::to_string(C));
  const int64_t R = b.rays, S = b.steps, RS = R * S;

  Value flat = g.reshape(grid_leaf, Shape{gs[0] * gs[1] * gs[2], C});
  Value gathered = g.gather_rows(flat, b.idx);
  Value w8 = g.constant(Tensor::from(Shape{RS * 8, 1}, std::vector<float>(b.w8)));
  Value samples8 = g.reshape(g.mul(gathered, w8), Shape{RS, 8 * C});

  // Constant 0/1 matrices: corner summation and channel selection.
  std::vector<float> m8(static_cast<size_t>(8 * C * C), 0.f);
  for (int64_t k = 0; k < 8; ++k)
    for (int64_t c = 0; c < C; ++c) m8[static_cast<size_t>((k * C + c) * C + c)] = 1.f;
  Value samples = g.matmul(samples8, g.constant(Tensor::from(Shape{8 * C, C}, std::move(m8))));

  std::vector<float> seld(static_cast<size_t>(C), 0.f);
  seld[0] = 1.f;
  std::vector<float> selc(static_cast<size_t>(C) * 3, 0.f);
  for (int64_t i = 0; i < 3; ++i) selc[static_cast<size_t>((i + 1) * 3 + i)] = 1.f;
  Value sigma = g.softplus(g.matmul(samples, g.constant(Tensor::from(Shape{C, 1}, std::move(seld)))));
  Value rgb = g.clamp01(g.matmul(samples, g.constant(Tensor::from(Shape{C, 3}, std::move(selc)))));

  Value delta = g.constant(Tensor::from(Shape{RS, 1}, std::vector<float>(b.delta)));
  Value sd = g.reshape(g.mul(sigma, delta), Shape{R, S});  // optical depth per segment

  std::vector<float> strict(static_cast<size_t>(S * S), 0.f);
  for (int64_t j = 0; j < S; ++j)
    for (int64_t k = j + 1; k < S; ++k) strict[static_cast<size_t>(j * S + k)] = 1.f;
  Value cum = g.matmul(sd, g.constant(Tensor::from(Shape{S, S}, std::move(strict))));
  Value T = g.exp(g.scale(cum, -1.f));
  Value alpha = g.shift(g.scale(g.exp(g.scale(sd, -1.f)), -1.f), 1.f);
  Value wgt = g.mul(T, alpha);  // [R,S]

  Value wrgb = g.reshape(g.mul(rgb, g.reshape(wgt, Shape{RS, 1})), Shape{R, S * 3});
  std::vector<float> msum(static_cast<size_t>(S * 3 * 3), 0.f);
  for (int64_t k = 0; k < S; ++k)
    for (int64_t c = 0; c < 3; ++c) msum[static_cast<size_t>((k * 3 + c) * 3 + c)] = 1.f;
  Value fg = g.matmul(wrgb, g.constant(Tensor::from(Shape{S * 3, 3}, std::move(msum))));

  Value total = g.matmul(sd, g.constant(Tensor::full(Shape{S, 1}, 1.f)));
  Value bg = g.scale(g.exp(g.scale(total, -1.f)), 0.5f);  // [R,1]
  return g.add(fg, bg);
}

Tensor render_image(const VoxelFeatureGrid& grid, const View& v, int steps) {
  if (steps < 2) fail(ErrorKind::config, "render: steps_per_ray must be >= 2");
  const RaySet rs = make_rays(v);
  Tensor out = Tensor::zeros(Shape{v.height, v.width, 3});
  std::span<float> px = out.mutable_data();
  std::span<const float> gv = grid.values.data();
  const int64_t dims[3] = {grid.D, grid.H, grid.W};
  const int64_t C = grid.C;
  for (int r = 0; r < rs.count; ++r) {
    const double* o = &rs.origins[static_cast<size_t>(r) * 3];
    const double* d = &rs.dirs[static_cast<size_t>(r) * 3];
    double t0, t1;
    double acc[3] = {0, 0, 0};
    double trans = 1.0;
    if (ray_box(o, d, grid.bbox_min.data(), grid.bbox_max.data(), &t0, &t1)) {
      const double dt = (t1 - t0) / steps;
      for (int k = 0; k < steps; ++k) {
        const double t = t0 + (k + 0.5) * dt;
        double x[3];
        for (int a = 0; a < 3; ++a) {
          const double p = o[a] + t * d[a];
          const double norm = (p - grid.bbox_min[a]) / (grid.bbox_max[a] - grid.bbox_min[a]);
          x[a] = norm * static_cast<double>(dims[a]) - 0.5;
        }
        const TriSample s = trilinear(x, dims);
        double feat[4] = {0, 0, 0, 0};
        for (int j = 0; j < 8; ++j) {
          const float* row = &gv[s.idx[j] * C];
          for (int c = 0; c < 4; ++c) feat[c] += s.w[j] * row[c];
        }
        const double sigma = softplus_d(feat[0]);
        const double alpha = 1.0 - std::exp(-sigma * dt);
        for (int c = 0; c < 3; ++c)
          acc[c] += trans * alpha * std::min(1.0, std::max(0.0, feat[c + 1]));
        trans *= std::exp(-sigma * dt);
      }
    }
    for (int c = 0; c < 3; ++c)
      px[static_cast<size_t>(r) * 3 + c] = static_cast<float>(acc[c] + trans * 0.5);
  }
  return out;
}

Value mse(Graph& g, Value a, Value b) {
  if (!(a.shape() == b.shape()))
    fail(ErrorKind::shape, "mse: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Value d = g.sub(a, b);
  return g.scale(g.reduce_sum(g.mul(d, d)), 1.f / static_cast<float>(a.shape().numel()));
}

}  // namespace voxelcom
