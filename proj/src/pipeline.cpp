#include "voxelcom/pipeline.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "voxelcom/baseline.hpp"
#include "voxelcom/image.hpp"
#include "voxelcom/jscc.hpp"
#include "voxelcom/render.hpp"

namespace voxelcom {

namespace fs = std::filesystem;

ViewSplit make_views(const SceneSection& sc) {
  const int total = sc.views + sc.test_views;
  auto all = make_view_sphere(total, sc.image_size, sc.image_size, sc.fov_deg, sc.radius);
  std::set<int> test_idx;
  for (int j = 0; j < sc.test_views; ++j)
    test_idx.insert(static_cast<int>((j + 0.5) * total / sc.test_views));
  ViewSplit out;
  for (int i = 0; i < total; ++i) {
    if (test_idx.count(i)) out.test.push_back(all[i]);
    else out.train.push_back(all[i]);
  }
  return out;
}

std::string scene_id_of(const SceneSection& sc) {
  return sc.kind + "-s" + std::to_string(sc.seed);
}

namespace {

std::string render_and_save(const VoxelFeatureGrid& grid, View& v, int steps,
                            const std::string& dir, const std::string& name) {
  v.image = render_image(grid, v, steps);
  save_ppm(dir + "/" + name, v.image);
  return name;
}

}  // namespace

std::vector<std::string> write_scene_artifacts(const ExperimentConfig& cfg, const ExpPaths& paths) {
  fs::create_directories(paths.scene_dir());
  GeneratedScene gs = generate_scene(cfg.scene.kind, cfg.scene.seed, cfg.scene.dims,
                                     cfg.scene.channels);
  save_grid(paths.grid_gt(), gs.grid);
  ViewSplit split = make_views(cfg.scene);
  const int steps = cfg.training.ray_steps;
  std::vector<std::string> written{paths.grid_gt()};

  char name[64];
  std::vector<std::string> train_imgs, test_imgs;
  for (size_t i = 0; i < split.train.size(); ++i) {
    std::snprintf(name, sizeof(name), "img_train_%02zu.ppm", i);
    train_imgs.push_back(render_and_save(gs.grid, split.train[i], steps, paths.scene_dir(), name));
    written.push_back(paths.scene_dir() + "/" + name);
  }
  for (size_t i = 0; i < split.test.size(); ++i) {
    std::snprintf(name, sizeof(name), "img_test_%02zu.ppm", i);
    test_imgs.push_back(render_and_save(gs.grid, split.test[i], steps, paths.scene_dir(), name));
    written.push_back(paths.scene_dir() + "/" + name);
  }
  save_views(paths.views_train(), split.train, train_imgs);
  save_views(paths.views_test(), split.test, test_imgs);
  written.push_back(paths.views_train());
  written.push_back(paths.views_test());
  return written;
}

double mean_view_psnr(const VoxelFeatureGrid& grid, const std::vector<View>& refs, int steps) {
  if (refs.empty()) fail(ErrorKind::config, "mean_view_psnr: no reference views");
  double acc = 0;
  for (const View& v : refs) {
    if (!v.image.defined()) fail(ErrorKind::prerequisite, "mean_view_psnr: view has no image");
    acc += psnr(render_image(grid, v, steps), v.image);
  }
  return acc / static_cast<double>(refs.size());
}

TransmitOutcome transmit_grid(const ExperimentConfig& cfg, const Params& codec_params,
                              const VoxelFeatureGrid& grid, const std::vector<View>& test_views,
                              const std::string& scene_id, const std::string& method,
                              double snr_true_db, double snr_est_db, uint64_t seed) {
  if (method != "jscc" && method != "separation")
    fail(ErrorKind::config, "method must be jscc or separation, got '" + method + "'");
  char label[96];
  std::snprintf(label, sizeof(label), "transmit/%s/t=%.4f/e=%.4f", method.c_str(), snr_true_db,
                snr_est_db);
  Rng rng = Rng::derive(seed, label);

  TransmitOutcome out;
  out.fhat = grid;
  const CodecShape s = CodecShape::from_grid(static_cast<int>(grid.D), static_cast<int>(grid.H),
                                             static_cast<int>(grid.W), static_cast<int>(grid.C));
  if (method == "jscc") {
    ChannelFrame tx = jscc_encode(codec_params, grid.values, s, cfg.jscc);
    ChannelFrame rx = apply_channel(tx, cfg.jscc, snr_true_db, snr_est_db, rng);
    out.alloc = tx.alloc;
    out.rec.cbr = compute_cbr(tx.n_total, s.m());
    try {
      Tensor vhat = jscc_decode(codec_params, rx, s, cfg.jscc);
      Tensor vgrid = vhat.reshaped({s.pd, s.ph, s.pw, s.dv});
      out.fhat.values = run_synthesis(codec_params, vgrid, s);
    } catch (const Error&) {
      // Side-info CRC failure: the receiver has no allocation to decode with.
      // Score the outage as a blank grid rather than aborting the sweep.
      out.frame_ok = false;
      out.fhat.values = Tensor::zeros(grid.values.shape());
    }
  } else {
    SeparationConfig bc = cfg.baseline;
    bc.seed = seed;
    SeparationResult r = run_separation(grid.values, bc, snr_true_db, snr_est_db, rng);
    out.fhat.values = r.fhat;
    out.frame_ok = r.header_ok;
    out.rec.cbr = compute_cbr(r.n_total, s.m());
  }

  out.rec.method = method;
  out.rec.snr_true_db = snr_true_db;
  out.rec.snr_est_db = snr_est_db;
  out.rec.seed = seed;
  out.rec.scene_id = scene_id;
  const int steps = cfg.training.ray_steps;
  double acc_psnr = 0, acc_ssim = 0;
  if (test_views.empty()) fail(ErrorKind::prerequisite, "transmit: no test views to score");
  for (const View& v : test_views) {
    Tensor img = render_image(out.fhat, v, steps);
    acc_psnr += psnr(img, v.image);
    acc_ssim += ssim(img, v.image);
  }
  out.rec.psnr_db = acc_psnr / static_cast<double>(test_views.size());
  out.rec.ssim = acc_ssim / static_cast<double>(test_views.size());
  return out;
}

void write_heat_csv(const std::string& path, const BandwidthAllocation& a, const CodecShape& s) {
  if (static_cast<int64_t>(a.k_bar.size()) != s.P)
    fail(ErrorKind::shape, "heat csv: allocation has " + std::to_string(a.k_bar.size()) +
                               " patches, shape wants " + std::to_string(s.P));
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) fail(ErrorKind::io, "heat csv: cannot write " + path);
  std::fputs("d,r,c,k_bar\n", f);
  int64_t i = 0;
  for (int d = 0; d < s.pd; ++d)
    for (int r = 0; r < s.ph; ++r)
      for (int c = 0; c < s.pw; ++c, ++i)
        std::fprintf(f, "%d,%d,%d,%d\n", d, r, c, a.k_bar[i]);
  std::fclose(f);
}

std::vector<HeatRow> read_heat_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "heat csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "d,r,c,k_bar")
    fail(ErrorKind::io, "heat csv: bad header in " + path);
  std::vector<HeatRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    HeatRow h;
    if (std::sscanf(line.c_str(), "%d,%d,%d,%d", &h.d, &h.r, &h.c, &h.k_bar) != 4)
      fail(ErrorKind::io, "heat csv: bad row '" + line + "' in " + path);
    rows.push_back(h);
  }
  return rows;
}

double tune_eta_for_cbr(const Params& params, const Tensor& grid, const CodecShape& s,
                        const JsccConfig& cfg, double target_cbr, double* achieved) {
  if (target_cbr <= 0) fail(ErrorKind::config, "tune_eta_for_cbr: target must be positive");
  Tensor vgrid = run_analysis(params, grid, s);
  Tensor z = quantize_z(run_hyper_encode(params, vgrid, s));
  auto [mu, sigma] = run_hyper_decode(params, z, s);
  RateReport rr = expected_rate_report(sigma);
  const int64_t side_bits = 8 * (static_cast<int64_t>(s.dz) + 6);
  const int64_t n_side = side_symbol_count(cfg.side_mcs, side_bits);
  const int64_t target = std::llround(target_cbr * static_cast<double>(s.m()));

  auto payload_at = [&](double eta) {
    return allocate(rr, eta, cfg.q_levels).n_payload();
  };
  double lo = 1e-9, hi = 1e9;
  if (payload_at(hi) + n_side <= target) {
    lo = hi;
  } else {
    for (int it = 0; it < 200; ++it) {
      double mid = std::sqrt(lo * hi);
      if (payload_at(mid) + n_side < target) lo = mid;
      else hi = mid;
    }
  }
  auto miss = [&](double eta) {
    return std::llabs(payload_at(eta) + n_side - target);
  };
  double eta = miss(lo) <= miss(hi) ? lo : hi;
  if (achieved)
    *achieved = compute_cbr(payload_at(eta) + n_side, s.m());
  return eta;
}

}  // namespace voxelcom
