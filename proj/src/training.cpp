#include "voxelcom/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "voxelcom/adam.hpp"
#include "voxelcom/nn.hpp"
#include "voxelcom/rng.hpp"

namespace voxelcom {

double stage_lr(double base, int iter, int total, double warmup_frac, double decay) {
  if (total < 1) fail(ErrorKind::config, "lr schedule: stage length must be >= 1");
  if (iter < 0 || iter >= total) fail(ErrorKind::config, "lr schedule: iter out of range");
  const int warm = std::max(1, static_cast<int>(std::llround(warmup_frac * total)));
  if (iter < warm) return base * static_cast<double>(iter + 1) / static_cast<double>(warm);
  if (total == warm) return base;
  const double t = static_cast<double>(iter - warm) / static_cast<double>(total - warm);
  return base * std::pow(decay, t);
}

void write_train_log(const std::string& path, const TrainLog& log) {
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) fail(ErrorKind::io, "cannot open training log " + path);
  std::fprintf(f, "stage,iter,r_v,r_z,feat_mse,recon_mse,total,lr,snr_db\n");
  for (const LossReport& r : log)
    std::fprintf(f, "%d,%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.3f\n", r.stage, r.iter, r.r_v,
                 r.r_z, r.feat_mse, r.recon_mse, r.total, r.lr, r.snr_db);
  std::fclose(f);
}

namespace {

LossReport assemble(int stage, int iter, double lambda, double r_v, double r_z, double feat,
                    double recon, double lr, double snr) {
  LossReport r;
  r.stage = stage;
  r.iter = iter;
  r.r_v = r_v;
  r.r_z = r_z;
  r.feat_mse = feat;
  r.recon_mse = recon;
  r.total = lambda * (r_v + r_z) + feat + recon;
  r.lr = lr;
  r.snr_db = snr;
  return r;
}

void check_finite_loss(double loss, int stage, int iter, double lr) {
  if (std::isfinite(loss)) return;
  fail(ErrorKind::numeric, "stage " + std::to_string(stage) + ": loss diverged at iter " +
                               std::to_string(iter) + " (lr " + std::to_string(lr) +
                               " likely too high)");
}

// One ray batch sampled uniformly over all train-view pixels.
void sample_rays(const SceneDataset& data, const std::vector<RaySet>& rays, int batch, Rng& rng,
                 std::vector<double>& org, std::vector<double>& dir, std::vector<float>& tgt) {
  org.resize(static_cast<size_t>(batch) * 3);
  dir.resize(static_cast<size_t>(batch) * 3);
  tgt.resize(static_cast<size_t>(batch) * 3);
  for (int i = 0; i < batch; ++i) {
    const size_t vi = rng.uniform_int(data.train_views.size());
    const RaySet& rs = rays[vi];
    const size_t ri = rng.uniform_int(static_cast<uint64_t>(rs.count));
    std::span<const float> img = data.train_views[vi].image.data();
    for (size_t a = 0; a < 3; ++a) {
      org[3 * static_cast<size_t>(i) + a] = rs.origins[3 * ri + a];
      dir[3 * static_cast<size_t>(i) + a] = rs.dirs[3 * ri + a];
      tgt[3 * static_cast<size_t>(i) + a] = img[3 * ri + a];
    }
  }
}

Tensor uniform_half_noise(const Shape& s, Rng& rng) {
  std::vector<float> v(static_cast<size_t>(s.numel()));
  for (float& x : v) x = static_cast<float>(rng.uniform() - 0.5);
  return Tensor::from(s, std::move(v));
}

Tensor gaussian_noise(const Shape& s, double stddev, Rng& rng) {
  std::vector<float> v(static_cast<size_t>(s.numel()));
  for (float& x : v) x = static_cast<float>(rng.normal() * stddev);
  return Tensor::from(s, std::move(v));
}

// Crop sizes (multiples of 4) that keep the hyper lattice of the full grid,
// so the learned z prior sees a fixed dimensionality.
std::vector<int64_t> crop_sizes(int64_t d) {
  const int64_t want = (d / 4 + 3) / 4;
  std::vector<int64_t> out;
  for (int64_t s = 4; s <= d; s += 4)
    if ((s / 4 + 3) / 4 == want) out.push_back(s);
  return out;
}

// Flips always; crops only sometimes. The entropy model must mostly train on
// the true grid borders it will code at deploy time, or it learns that window
// edges are unpredictable and overspends bandwidth on the (empty) outer shell.
Tensor augment_grid(const Tensor& f, Rng& rng) {
  const Shape& sh = f.shape();
  const int64_t dims[3] = {sh[0], sh[1], sh[2]}, C = sh[3];
  const bool crop = rng.bernoulli(0.3);
  int64_t size[3], off[3];
  bool flip[3];
  for (int a = 0; a < 3; ++a) {
    size[a] = dims[a];
    off[a] = 0;
    if (crop) {
      const std::vector<int64_t> sizes = crop_sizes(dims[a]);
      size[a] = sizes[rng.uniform_int(sizes.size())];
      off[a] = 4 * static_cast<int64_t>(rng.uniform_int(
                       static_cast<uint64_t>((dims[a] - size[a]) / 4 + 1)));
    }
    flip[a] = rng.bernoulli(0.5);
  }
  std::vector<float> out(static_cast<size_t>(size[0] * size[1] * size[2] * C));
  std::span<const float> src = f.data();
  size_t w = 0;
  for (int64_t z = 0; z < size[0]; ++z) {
    const int64_t sz = off[0] + (flip[0] ? size[0] - 1 - z : z);
    for (int64_t y = 0; y < size[1]; ++y) {
      const int64_t sy = off[1] + (flip[1] ? size[1] - 1 - y : y);
      for (int64_t x = 0; x < size[2]; ++x) {
        const int64_t sx = off[2] + (flip[2] ? size[2] - 1 - x : x);
        const size_t base = static_cast<size_t>(((sz * dims[1] + sy) * dims[2] + sx) * C);
        for (int64_t c = 0; c < C; ++c) out[w++] = src[base + static_cast<size_t>(c)];
      }
    }
  }
  return Tensor::from(Shape{size[0], size[1], size[2], C}, std::move(out));
}

double mean_sq_diff(const Tensor& a, const Tensor& b) {
  std::span<const float> pa = a.data(), pb = b.data();
  double acc = 0;
  for (size_t i = 0; i < pa.size(); ++i) {
    const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(pa.size());
}

// Shared transmit graph: residual head, allocation from sigma, power
// normalization, fresh masked channel noise, decoder head.
Value transmit(Graph& g, Binder& bind, Value v, const MuSigma& ms, const Tensor& sigma_t,
               const JsccConfig& cfg, double snr_db, Rng& rng) {
  const BandwidthAllocation alloc = allocate(expected_rate_report(sigma_t), cfg.eta, cfg.q_levels);
  const Tensor rmask = alloc_real_mask(alloc);
  const Tensor pmask = alloc_patch_mask(alloc);
  Value head = g.mul(fe_forward(g, bind, g.sub(v, ms.mu)), g.constant(rmask));
  const int64_t np = alloc.n_payload();
  Value sent = head;
  if (np > 0) {
    sent = power_normalize(g, head, np);
    const double stddev = std::sqrt(0.5 * std::pow(10.0, -snr_db / 10.0));
    Tensor noise = gaussian_noise(rmask.shape(), stddev, rng);
    sent = g.add(sent, g.mul(g.constant(noise), g.constant(rmask)));
  }
  Value dec = fd_forward(g, bind, sent);
  return g.add(ms.mu, g.mul(dec, g.constant(pmask)));
}

}  // namespace

void stage1_fit_nerf(VoxelFeatureGrid& grid, const SceneDataset& data,
                     const TrainingSchedule& sch, uint64_t seed, TrainLog* log) {
  if (data.train_views.empty()) fail(ErrorKind::config, "stage 1: dataset has no train views");
  if (sch.t1 < 1 || sch.ray_batch < 1 || sch.ray_steps < 1)
    fail(ErrorKind::config, "stage 1: t1, ray_batch, ray_steps must be >= 1");
  std::vector<RaySet> rays;
  rays.reserve(data.train_views.size());
  for (const View& v : data.train_views) rays.push_back(make_rays(v));

  Params gp{{"grid", grid.values}};
  AdamState opt;
  Rng rng = Rng::derive(seed, "train/stage1");
  std::vector<double> org, dir;
  std::vector<float> tgt;
  for (int it = 0; it < sch.t1; ++it) {
    sample_rays(data, rays, sch.ray_batch, rng, org, dir, tgt);
    const RayBatch batch = prepare_batch(grid, org, dir, sch.ray_batch, sch.ray_steps);
    Graph g;
    Binder bind(g, gp);
    Value img = render_batch(g, bind("grid"), batch);
    Value target = g.constant(Tensor::from(Shape{sch.ray_batch, 3}, tgt));
    Value loss = mse(g, img, target);
    const double lr = stage_lr(sch.lr1, it, sch.t1, sch.warmup_frac, sch.decay);
    const double L = g.scalar_f64(loss);
    check_finite_loss(L, 1, it, lr);
    Params grads = bind.grads(g.backward(loss));
    adam_step(gp, grads, opt, lr);
    if (log && (it % sch.log_every == 0 || it == sch.t1 - 1))
      log->push_back(assemble(1, it, sch.lambda, 0, 0, 0, L, lr, 0.0));
  }
  grid.values = gp.at("grid");
}

void stage2_train_codec(Params& params, const VoxelFeatureGrid& grid, const CodecShape& s,
                        const JsccConfig& cfg, const TrainingSchedule& sch, uint64_t seed,
                        TrainLog* log) {
  if (sch.t2 < 1) fail(ErrorKind::config, "stage 2: t2 must be >= 1");
  if (sch.lambda <= 0) fail(ErrorKind::config, "stage 2: lambda must be positive");
  if (grid.values.shape() != Shape{s.D, s.H, s.W, s.C})
    fail(ErrorKind::shape, "stage 2: grid does not match codec shape");
  Params fresh = init_codec_params(s, seed);
  for (auto& [k, v] : fresh) params.emplace(k, std::move(v));
  init_jscc_params(params, s, seed);

  AdamState opt;
  Rng rng = Rng::derive(seed, "train/stage2");
  for (int it = 0; it < sch.t2; ++it) {
    const Tensor f = augment_grid(grid.values, rng);
    const Shape& fs = f.shape();
    const CodecShape cs = CodecShape::from_grid(static_cast<int>(fs[0]), static_cast<int>(fs[1]),
                                                static_cast<int>(fs[2]), static_cast<int>(fs[3]));
    Graph g;
    Binder bind(g, params);
    Value fv = g.constant(f);
    Value va = analysis(g, bind, fv, cs);
    Value v = as_patches(g, va, cs);
    Value z = hyper_encode(g, bind, va, cs);
    // Additive uniform relaxation of the quantizers.
    Value vt = g.add(v, g.constant(uniform_half_noise(g.value(v).shape(), rng)));
    Value zt = g.add(z, g.constant(uniform_half_noise(g.value(z).shape(), rng)));
    MuSigma ms = hyper_decode(g, bind, zt, cs);
    Value rv_bits = bits_of_p(g, gaussian_bin_p(g, vt, ms.mu, ms.sigma));
    Value rz_bits = bits_of_p(g, z_bin_p(g, bind, zt, cs));
    Value vhat = transmit(g, bind, v, ms, g.value(ms.sigma), cfg, sch.train_snr_db, rng);
    Value fhat = synthesis(g, bind, as_grid(g, vhat, cs), cs);
    Value dfeat = mse(g, fhat, fv);
    Value loss =
        g.add(dfeat, g.scale(g.add(rv_bits, rz_bits), static_cast<float>(sch.lambda)));
    const double lr = stage_lr(sch.lr2, it, sch.t2, sch.warmup_frac, sch.decay);
    const double L = g.scalar_f64(loss);
    check_finite_loss(L, 2, it, lr);
    Params grads = bind.grads(g.backward(loss));
    adam_step(params, grads, opt, lr);
    if (log && (it % sch.log_every == 0 || it == sch.t2 - 1))
      log->push_back(assemble(2, it, sch.lambda, g.scalar_f64(rv_bits), g.scalar_f64(rz_bits),
                              g.scalar_f64(dfeat), 0.0, lr, sch.train_snr_db));
  }
}

void stage3_finetune_nerf(VoxelFeatureGrid& grid, const Params& params, const CodecShape& s,
                          const JsccConfig& cfg, const SceneDataset& data,
                          const TrainingSchedule& sch, uint64_t seed, TrainLog* log) {
  if (data.train_views.empty()) fail(ErrorKind::config, "stage 3: dataset has no train views");
  if (sch.t3 < 1) fail(ErrorKind::config, "stage 3: t3 must be >= 1");
  if (!sch.debug_identity_codec && !params.count("ga/c1.w"))
    fail(ErrorKind::prerequisite, "stage 3: codec parameters missing (run stage 2 first)");
  if (grid.values.shape() != Shape{s.D, s.H, s.W, s.C})
    fail(ErrorKind::shape, "stage 3: grid does not match codec shape");
  std::vector<RaySet> rays;
  rays.reserve(data.train_views.size());
  for (const View& v : data.train_views) rays.push_back(make_rays(v));

  Params all = params;
  all.insert_or_assign("grid", grid.values);
  AdamState opt;
  Rng rng = Rng::derive(seed, "train/stage3");
  std::vector<double> org, dir;
  std::vector<float> tgt;
  for (int it = 0; it < sch.t3; ++it) {
    sample_rays(data, rays, sch.ray_batch, rng, org, dir, tgt);
    const RayBatch batch = prepare_batch(grid, org, dir, sch.ray_batch, sch.ray_steps);
    Graph g;
    Binder bind(g, all);
    Value gl = bind("grid");
    Value fhat = gl;
    Value v{}, z{};
    MuSigma ms{};
    Tensor zq;
    if (!sch.debug_identity_codec) {
      Value va = analysis(g, bind, gl, s);
      v = as_patches(g, va, s);
      z = hyper_encode(g, bind, va, s);
      // The deployed path quantizes z; mu, sigma and the allocation are
      // constants for this step, gradients reach the grid through v.
      zq = quantize_z(g.value(z));
      ms = hyper_decode(g, bind, g.constant(zq), s);
      Value vhat = transmit(g, bind, v, ms, g.value(ms.sigma), cfg, sch.train_snr_db, rng);
      fhat = synthesis(g, bind, as_grid(g, vhat, s), s);
    }
    Value img = render_batch(g, fhat, batch);
    Value target = g.constant(Tensor::from(Shape{sch.ray_batch, 3}, tgt));
    Value loss = mse(g, img, target);
    const double lr = stage_lr(sch.lr3, it, sch.t3, sch.warmup_frac, sch.decay);
    const double L = g.scalar_f64(loss);
    check_finite_loss(L, 3, it, lr);
    Params grads = bind.grads(g.backward(loss));
    Params gstep;
    gstep.emplace("grid", grads.at("grid"));
    adam_step(all, gstep, opt, lr);
    if (log && (it % sch.log_every == 0 || it == sch.t3 - 1)) {
      double rv = 0, rz = 0, feat = 0;
      if (!sch.debug_identity_codec) {
        rv = rate_report(g.value(v), g.value(ms.mu), g.value(ms.sigma)).r_v;
        rz = z_bits(params, zq, s);
        feat = mean_sq_diff(g.value(fhat), g.value(gl));
      }
      log->push_back(assemble(3, it, sch.lambda, rv, rz, feat, L, lr, sch.train_snr_db));
    }
  }
  grid.values = all.at("grid");
}

double eval_feat_mse(const Params& params, const Tensor& grid, const CodecShape& s,
                     const JsccConfig& cfg) {
  const ChannelFrame tx = jscc_encode(params, grid, s, cfg);
  const Tensor vhat = jscc_decode(params, tx, s, cfg);
  const Tensor fhat = run_synthesis(params, vhat.reshaped(Shape{s.pd, s.ph, s.pw, s.dv}), s);
  return mean_sq_diff(fhat, grid);
}

}  // namespace voxelcom
