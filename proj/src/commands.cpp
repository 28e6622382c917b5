#include "voxelcom/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <vector>

#include "json.hpp"
#include "voxelcom/checkpoint.hpp"
#include "voxelcom/config.hpp"
#include "voxelcom/image.hpp"
#include "voxelcom/pipeline.hpp"
#include "voxelcom/render.hpp"
#include "voxelcom/training.hpp"

namespace voxelcom {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

using ArgMap = std::map<std::string, std::string>;

struct RunPlan {
  ExperimentConfig cfg;
  std::string cfg_text;
  std::string exp_dir;  // where prerequisites live
  std::string out_dir;  // where outputs go (== exp_dir except under replay)
  uint64_t seed = 0;
  ArgMap args;
};

std::string fmt_f64(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string fmt_snr_tag(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "minf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", x);
  std::string s(buf);
  for (char& c : s) {
    if (c == '.') c = 'p';
    if (c == '-') c = 'm';
  }
  return s;
}

double arg_f64(const ArgMap& args, const std::string& key, double fallback) {
  auto it = args.find(key);
  return it == args.end() ? fallback : std::stod(it->second);
}

std::string arg_str(const ArgMap& args, const std::string& key, const std::string& fallback) {
  auto it = args.find(key);
  return it == args.end() ? fallback : it->second;
}

void need_file(const std::string& path, const std::string& what, const std::string& producer) {
  if (!fs::exists(path))
    fail(ErrorKind::prerequisite,
         what + " not found at " + path + "; run `voxelcom " + producer + "` first");
}

// Grid preference: finetuned when present, else the stage-1 fit.
std::string pick_grid(const ExpPaths& p) {
  if (fs::exists(p.grid_finetune())) return p.grid_finetune();
  need_file(p.grid_fit(), "fitted grid", "fit");
  return p.grid_fit();
}

std::vector<std::string> scene_input_files(const ExpPaths& p) {
  need_file(p.views_train(), "scene views", "gen-scene");
  need_file(p.views_test(), "scene views", "gen-scene");
  std::vector<std::string> files{p.views_train(), p.views_test()};
  for (const auto& e : fs::directory_iterator(p.scene_dir()))
    if (e.path().extension() == ".ppm") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  return files;
}

SceneDataset load_dataset(const ExperimentConfig& cfg, const ExpPaths& p) {
  SceneDataset ds;
  ds.train_views = load_views(p.views_train());
  ds.test_views = load_views(p.views_test());
  ds.scene_id = scene_id_of(cfg.scene);
  return ds;
}

void write_manifest(const RunPlan& plan, const std::string& command,
                    const std::string& manifest_path, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  json m;
  m["command"] = command;
  m["seed"] = plan.seed;
  m["exp_dir"] = fs::absolute(plan.exp_dir).string();
  m["config"] = plan.cfg_text;
  m["args"] = plan.args;
  json jin = json::array();
  for (const auto& f : inputs)
    jin.push_back({{"path", fs::absolute(f).string()}, {"hash", file_hash_hex(f)}});
  m["inputs"] = jin;
  json jout = json::array();
  for (const auto& f : outputs)
    jout.push_back({{"path", fs::relative(f, plan.out_dir).string()}, {"hash", file_hash_hex(f)}});
  m["outputs"] = jout;
  std::ofstream os(manifest_path);
  if (!os) fail(ErrorKind::io, "cannot write " + manifest_path);
  os << m.dump(1) << "\n";
}

void do_gen_scene(const RunPlan& plan) {
  ExpPaths out{plan.out_dir};
  auto written = write_scene_artifacts(plan.cfg, out);
  write_manifest(plan, "gen-scene", out.scene_dir() + "/manifest.json", {}, written);
  std::cout << "gen-scene: " << scene_id_of(plan.cfg.scene) << ", " << written.size()
            << " files under " << out.scene_dir() << "\n";
}

void do_fit(const RunPlan& plan) {
  ExpPaths in{plan.exp_dir};
  auto inputs = scene_input_files(in);
  SceneDataset ds = load_dataset(plan.cfg, in);
  const auto& d = plan.cfg.scene.dims;
  VoxelFeatureGrid grid =
      VoxelFeatureGrid::empty(d[0], d[1], d[2], plan.cfg.scene.channels);
  TrainLog log;
  stage1_fit_nerf(grid, ds, plan.cfg.training, plan.seed, &log);
  std::string dir = plan.out_dir + "/fit";
  fs::create_directories(dir);
  save_grid(dir + "/grid_stage1.vfg", grid);
  write_train_log(dir + "/train_log.csv", log);
  write_manifest(plan, "fit", dir + "/manifest.json", inputs,
                 {dir + "/grid_stage1.vfg", dir + "/train_log.csv"});
  std::cout << "fit: " << log.size() << " logged steps, final recon mse "
            << (log.empty() ? 0.0 : log.back().recon_mse) << "\n";
}

void do_train_codec(const RunPlan& plan) {
  ExpPaths in{plan.exp_dir};
  need_file(in.grid_fit(), "fitted grid", "fit");
  VoxelFeatureGrid grid = load_grid(in.grid_fit());
  CodecShape s = CodecShape::from_grid(static_cast<int>(grid.D), static_cast<int>(grid.H),
                                       static_cast<int>(grid.W), static_cast<int>(grid.C));
  Params params;
  TrainLog log;
  stage2_train_codec(params, grid, s, plan.cfg.jscc, plan.cfg.training, plan.seed, &log);
  std::string dir = plan.out_dir + "/codec";
  fs::create_directories(dir);
  save_checkpoint(dir + "/params.vckp", params);
  write_train_log(dir + "/train_log.csv", log);
  write_manifest(plan, "train-codec", dir + "/manifest.json", {in.grid_fit()},
                 {dir + "/params.vckp", dir + "/train_log.csv"});
  std::cout << "train-codec: lambda " << plan.cfg.codec.lambda << ", final loss "
            << (log.empty() ? 0.0 : log.back().total) << "\n";
}

void do_finetune(const RunPlan& plan) {
  ExpPaths in{plan.exp_dir};
  auto inputs = scene_input_files(in);
  need_file(in.grid_fit(), "fitted grid", "fit");
  need_file(in.codec_params(), "trained codec", "train-codec");
  inputs.push_back(in.grid_fit());
  inputs.push_back(in.codec_params());
  VoxelFeatureGrid grid = load_grid(in.grid_fit());
  Params params = load_checkpoint(in.codec_params());
  CodecShape s = CodecShape::from_grid(static_cast<int>(grid.D), static_cast<int>(grid.H),
                                       static_cast<int>(grid.W), static_cast<int>(grid.C));
  SceneDataset ds = load_dataset(plan.cfg, in);
  TrainLog log;
  stage3_finetune_nerf(grid, params, s, plan.cfg.jscc, ds, plan.cfg.training, plan.seed, &log);
  std::string dir = plan.out_dir + "/finetune";
  fs::create_directories(dir);
  save_grid(dir + "/grid_stage3.vfg", grid);
  write_train_log(dir + "/train_log.csv", log);
  write_manifest(plan, "finetune", dir + "/manifest.json", inputs,
                 {dir + "/grid_stage3.vfg", dir + "/train_log.csv"});
  std::cout << "finetune: " << log.size() << " logged steps, final recon mse "
            << (log.empty() ? 0.0 : log.back().recon_mse) << "\n";
}

void do_transmit(const RunPlan& plan) {
  const ExperimentConfig& cfg = plan.cfg;
  ExpPaths in{plan.exp_dir};
  double snr_true = arg_f64(plan.args, "snr_true", cfg.channel.snr_db.front());
  double snr_est = arg_f64(plan.args, "snr_est", cfg.channel.snr_est_db);
  std::string method = arg_str(plan.args, "method", "jscc");

  std::string grid_path = pick_grid(in);
  need_file(in.codec_params(), "trained codec", "train-codec");
  need_file(in.views_test(), "scene views", "gen-scene");
  VoxelFeatureGrid grid = load_grid(grid_path);
  Params params = load_checkpoint(in.codec_params());
  std::vector<View> test_views = load_views(in.views_test());

  TransmitOutcome out = transmit_grid(cfg, params, grid, test_views, scene_id_of(cfg.scene),
                                      method, snr_true, snr_est, plan.seed);

  std::string tag = method + "_t" + fmt_snr_tag(snr_true) + "_e" + fmt_snr_tag(snr_est);
  std::string dir = plan.out_dir + "/transmit/" + tag;
  fs::create_directories(dir);
  std::vector<std::string> outputs;
  write_rd_csv(dir + "/metrics.csv", {out.rec});
  outputs.push_back(dir + "/metrics.csv");
  if (!out.alloc.k_bar.empty()) {
    write_heat_csv(dir + "/alloc_heat.csv", out.alloc, cfg.shape());
    outputs.push_back(dir + "/alloc_heat.csv");
  }
  Tensor recon = render_image(out.fhat, test_views.front(), cfg.training.ray_steps);
  save_ppm(dir + "/recon_view00.ppm", recon);
  outputs.push_back(dir + "/recon_view00.ppm");
  write_manifest(plan, "transmit", dir + "/manifest.json",
                 {grid_path, in.codec_params(), in.views_test()}, outputs);
  std::cout << "transmit " << method << " true=" << snr_true << "dB est=" << snr_est
            << "dB -> psnr=" << out.rec.psnr_db << "dB ssim=" << out.rec.ssim
            << " cbr=" << out.rec.cbr << (out.frame_ok ? "" : " [frame lost]") << "\n";
}

void do_render(const RunPlan& plan) {
  ExpPaths in{plan.exp_dir};
  std::string grid_path = arg_str(plan.args, "grid", "");
  if (grid_path.empty()) grid_path = pick_grid(in);
  else need_file(grid_path, "grid file", "fit");
  VoxelFeatureGrid grid = load_grid(grid_path);
  int view = static_cast<int>(arg_f64(plan.args, "view", 0));
  ViewSplit split = make_views(plan.cfg.scene);
  if (view < 0 || view >= static_cast<int>(split.test.size()))
    fail(ErrorKind::config, "render: view index " + std::to_string(view) + " out of range [0," +
                                std::to_string(split.test.size()) + ")");
  Tensor img = render_image(grid, split.test[view], plan.cfg.training.ray_steps);
  std::string dir = plan.out_dir + "/render";
  fs::create_directories(dir);
  char name[32];
  std::snprintf(name, sizeof(name), "view_%02d.ppm", view);
  save_ppm(dir + "/" + name, img);
  write_manifest(plan, "render", dir + "/manifest.json", {grid_path},
                 {dir + "/" + name});
  std::cout << "render: view " << view << " -> " << dir << "/" << name << "\n";
}

void prewarm_ldpc_codes() {
  code_for_rate(1, 2);
  code_for_rate(2, 3);
  code_for_rate(3, 4);
}

void do_sweep(const RunPlan& plan) {
  const ExperimentConfig& cfg = plan.cfg;
  ExpPaths in{plan.exp_dir};
  std::string axis = arg_str(plan.args, "axis", "");
  bool parallel = arg_str(plan.args, "parallel", "0") == "1";
  if (axis != "cbr" && axis != "snr")
    fail(ErrorKind::config, "sweep axis must be cbr or snr, got '" + axis + "'");
  need_file(in.views_test(), "scene views", "gen-scene");
  std::vector<View> test_views = load_views(in.views_test());
  const std::string scene_id = scene_id_of(cfg.scene);
  prewarm_ldpc_codes();

  std::string dir = plan.out_dir + "/sweep/" + axis;
  fs::create_directories(dir);
  std::vector<std::string> inputs, outputs;
  std::vector<MetricsRecord> rows;

  if (axis == "cbr") {
    need_file(in.grid_fit(), "fitted grid", "fit");
    inputs = {in.grid_fit(), in.views_test()};
    VoxelFeatureGrid grid = load_grid(in.grid_fit());
    CodecShape s = CodecShape::from_grid(static_cast<int>(grid.D), static_cast<int>(grid.H),
                                         static_cast<int>(grid.W), static_cast<int>(grid.C));
    const auto& lambdas = cfg.codec.lambda_sweep;
    struct PointOut {
      MetricsRecord rec;
      BandwidthAllocation alloc;
      Params params;
      TrainLog log;
    };
    std::vector<PointOut> pts(lambdas.size());
    auto run_point = [&](size_t i) {
      ExperimentConfig pc = cfg;
      pc.codec.lambda = lambdas[i];
      pc.training.lambda = lambdas[i];
      uint64_t pseed = fold_seed(plan.seed, "sweep/cbr/lambda=" + fmt_f64(lambdas[i]));
      stage2_train_codec(pts[i].params, grid, s, pc.jscc, pc.training, pseed, &pts[i].log);
      double snr = cfg.channel.snr_est_db;
      TransmitOutcome o = transmit_grid(pc, pts[i].params, grid, test_views, scene_id, "jscc",
                                        snr, snr, pseed);
      pts[i].rec = o.rec;
      pts[i].rec.seed = plan.seed;  // rows carry the run seed, not the fold
      pts[i].alloc = o.alloc;
    };
    if (parallel) {
      std::vector<std::future<void>> futs;
      for (size_t i = 0; i < lambdas.size(); ++i)
        futs.push_back(std::async(std::launch::async, run_point, i));
      for (auto& f : futs) f.get();
    } else {
      for (size_t i = 0; i < lambdas.size(); ++i) run_point(i);
    }
    for (size_t i = 0; i < lambdas.size(); ++i) {
      std::string sub = dir + "/lambda_" + std::to_string(i);
      fs::create_directories(sub);
      save_checkpoint(sub + "/params.vckp", pts[i].params);
      write_train_log(sub + "/train_log.csv", pts[i].log);
      write_heat_csv(sub + "/alloc_heat.csv", pts[i].alloc, s);
      outputs.push_back(sub + "/params.vckp");
      outputs.push_back(sub + "/train_log.csv");
      outputs.push_back(sub + "/alloc_heat.csv");
      rows.push_back(pts[i].rec);
    }
    write_rd_csv(dir + "/rd_cbr.csv", rows);
    outputs.push_back(dir + "/rd_cbr.csv");
  } else {
    std::string grid_path = pick_grid(in);
    need_file(in.codec_params(), "trained codec", "train-codec");
    inputs = {grid_path, in.codec_params(), in.views_test()};
    VoxelFeatureGrid grid = load_grid(grid_path);
    Params params = load_checkpoint(in.codec_params());
    struct Point {
      double snr_true;
      std::string method;
    };
    std::vector<Point> points;
    for (double snr : cfg.channel.snr_db)
      for (const char* m : {"jscc", "separation"}) points.push_back({snr, m});
    std::vector<TransmitOutcome> outs(points.size());
    auto run_point = [&](size_t i) {
      outs[i] = transmit_grid(cfg, params, grid, test_views, scene_id, points[i].method,
                              points[i].snr_true, cfg.channel.snr_est_db, plan.seed);
    };
    if (parallel) {
      std::vector<std::future<void>> futs;
      for (size_t i = 0; i < points.size(); ++i)
        futs.push_back(std::async(std::launch::async, run_point, i));
      for (auto& f : futs) f.get();
    } else {
      for (size_t i = 0; i < points.size(); ++i) run_point(i);
    }
    for (size_t i = 0; i < points.size(); ++i) rows.push_back(outs[i].rec);
    for (size_t i = 0; i < points.size(); ++i) {
      if (!outs[i].alloc.k_bar.empty()) {
        write_heat_csv(dir + "/alloc_heat.csv", outs[i].alloc, cfg.shape());
        outputs.push_back(dir + "/alloc_heat.csv");
        break;  // the allocation is channel-independent; one map suffices
      }
    }
    write_rd_csv(dir + "/rd_snr.csv", rows);
    outputs.push_back(dir + "/rd_snr.csv");
  }
  write_manifest(plan, "sweep", dir + "/manifest.json", inputs, outputs);
  std::cout << "sweep " << axis << ": " << rows.size() << " rows under " << dir << "\n";
}

void dispatch(const std::string& command, const RunPlan& plan) {
  if (command == "gen-scene") do_gen_scene(plan);
  else if (command == "fit") do_fit(plan);
  else if (command == "train-codec") do_train_codec(plan);
  else if (command == "finetune") do_finetune(plan);
  else if (command == "transmit") do_transmit(plan);
  else if (command == "render") do_render(plan);
  else if (command == "sweep") do_sweep(plan);
  else fail(ErrorKind::config, "unknown command in manifest: '" + command + "'");
}

RunPlan plan_from_ctx(const CmdContext& ctx) {
  RunPlan plan;
  plan.cfg_text = read_text_file(ctx.config_path);
  plan.cfg = parse_config(plan.cfg_text);
  plan.exp_dir = ctx.out_dir;
  plan.out_dir = ctx.out_dir;
  plan.seed = effective_seed(plan.cfg, ctx.seed);
  if (ctx.snr_true) plan.args["snr_true"] = fmt_f64(*ctx.snr_true);
  if (ctx.snr_est) plan.args["snr_est"] = fmt_f64(*ctx.snr_est);
  return plan;
}

}  // namespace

int cmd_gen_scene(const CmdContext& ctx) {
  do_gen_scene(plan_from_ctx(ctx));
  return 0;
}

int cmd_fit(const CmdContext& ctx) {
  do_fit(plan_from_ctx(ctx));
  return 0;
}

int cmd_train_codec(const CmdContext& ctx) {
  do_train_codec(plan_from_ctx(ctx));
  return 0;
}

int cmd_finetune(const CmdContext& ctx) {
  do_finetune(plan_from_ctx(ctx));
  return 0;
}

int cmd_transmit(const CmdContext& ctx) {
  RunPlan plan = plan_from_ctx(ctx);
  plan.args["method"] = ctx.method;
  if (!plan.args.count("snr_true")) plan.args["snr_true"] = fmt_f64(plan.cfg.channel.snr_db.front());
  if (!plan.args.count("snr_est")) plan.args["snr_est"] = fmt_f64(plan.cfg.channel.snr_est_db);
  do_transmit(plan);
  return 0;
}

int cmd_render(const CmdContext& ctx) {
  RunPlan plan = plan_from_ctx(ctx);
  plan.args["view"] = std::to_string(ctx.view);
  if (!ctx.grid_path.empty()) plan.args["grid"] = ctx.grid_path;
  do_render(plan);
  return 0;
}

int cmd_sweep(const CmdContext& ctx) {
  RunPlan plan = plan_from_ctx(ctx);
  plan.args["axis"] = ctx.axis;
  plan.args["parallel"] = ctx.parallel ? "1" : "0";
  do_sweep(plan);
  return 0;
}

int cmd_replay(const CmdContext& ctx) {
  std::ifstream is(ctx.manifest_path);
  if (!is) fail(ErrorKind::prerequisite, "manifest not found: " + ctx.manifest_path);
  json m;
  try {
    is >> m;
  } catch (const json::exception& e) {
    fail(ErrorKind::io, std::string("bad manifest JSON: ") + e.what());
  }

  RunPlan plan;
  plan.cfg_text = m.at("config").get<std::string>();
  plan.cfg = parse_config(plan.cfg_text);
  plan.seed = m.at("seed").get<uint64_t>();
  plan.exp_dir = m.at("exp_dir").get<std::string>();
  plan.out_dir = ctx.out_dir;
  for (auto& [k, v] : m.at("args").items()) plan.args[k] = v.get<std::string>();

  for (const auto& jin : m.at("inputs")) {
    std::string path = jin.at("path").get<std::string>();
    if (!fs::exists(path))
      fail(ErrorKind::prerequisite, "replay: input missing: " + path);
    std::string h = file_hash_hex(path);
    if (h != jin.at("hash").get<std::string>())
      fail(ErrorKind::prerequisite, "replay: input changed since the manifest was written: " + path);
  }

  const std::string command = m.at("command").get<std::string>();
  dispatch(command, plan);

  size_t checked = 0, bad_count = 0;
  for (const auto& jout : m.at("outputs")) {
    std::string rel = jout.at("path").get<std::string>();
    std::string path = plan.out_dir + "/" + rel;
    ++checked;
    if (!fs::exists(path) || file_hash_hex(path) != jout.at("hash").get<std::string>()) {
      std::cerr << "replay mismatch: " << rel << "\n";
      ++bad_count;
    }
  }
  if (bad_count)
    fail(ErrorKind::numeric, "replay: " + std::to_string(bad_count) + " of " +
                                 std::to_string(checked) + " outputs differ");
  std::cout << "replay " << command << ": " << checked << " outputs verified bit-exact\n";
  return 0;
}

}  // namespace voxelcom
