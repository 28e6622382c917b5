#include <functional>
#include <iostream>

#include "CLI11.hpp"
#include "voxelcom/commands.hpp"
#include "voxelcom/tensor.hpp"

using voxelcom::CmdContext;

namespace {

void add_common(CLI::App* sub, CmdContext& ctx, bool need_config = true) {
  auto* c = sub->add_option("-c,--config", ctx.config_path, "experiment config (INI)");
  if (need_config) c->required();
  sub->add_option("-o,--out", ctx.out_dir, "experiment directory")->capture_default_str();
  sub->add_option("--seed", [&ctx](const CLI::results_t& r) {
    ctx.seed = std::stoull(r[0]);
    return true;
  }, "run seed (beats VOXELCOM_SEED and the config)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxelcom: voxel scene transmission experiments"};
  app.require_subcommand(1);

  CmdContext ctx;
  std::function<int()> run;

  auto* gen = app.add_subcommand("gen-scene", "rasterize a scene and render its views");
  add_common(gen, ctx);
  gen->callback([&] { run = [&] { return voxelcom::cmd_gen_scene(ctx); }; });

  auto* fit = app.add_subcommand("fit", "stage 1: fit the voxel grid to the training views");
  add_common(fit, ctx);
  fit->callback([&] { run = [&] { return voxelcom::cmd_fit(ctx); }; });

  auto* tc = app.add_subcommand("train-codec", "stage 2: train codec + rate heads on the fit grid");
  add_common(tc, ctx);
  tc->callback([&] { run = [&] { return voxelcom::cmd_train_codec(ctx); }; });

  auto* ft = app.add_subcommand("finetune", "stage 3: finetune the grid through the frozen codec");
  add_common(ft, ctx);
  ft->callback([&] { run = [&] { return voxelcom::cmd_finetune(ctx); }; });

  auto* tx = app.add_subcommand("transmit", "one transmission + receiver-side view scoring");
  add_common(tx, ctx);
  tx->add_option("--snr-true", [&ctx](const CLI::results_t& r) {
    ctx.snr_true = std::stod(r[0]);
    return true;
  }, "channel SNR in dB ('inf' for noiseless)");
  tx->add_option("--snr-est", [&ctx](const CLI::results_t& r) {
    ctx.snr_est = std::stod(r[0]);
    return true;
  }, "receiver SNR estimate in dB");
  tx->add_option("--method", ctx.method, "jscc | separation")->capture_default_str();
  tx->callback([&] { run = [&] { return voxelcom::cmd_transmit(ctx); }; });

  auto* rd = app.add_subcommand("render", "render one held-out view from a grid checkpoint");
  add_common(rd, ctx);
  rd->add_option("--view", ctx.view, "test view index")->capture_default_str();
  rd->add_option("--grid", ctx.grid_path, "explicit grid file (default: finetune, else fit)");
  rd->callback([&] { run = [&] { return voxelcom::cmd_render(ctx); }; });

  auto* sw = app.add_subcommand("sweep", "rate (cbr) or robustness (snr) sweep -> RD CSV");
  add_common(sw, ctx);
  sw->add_option("--axis", ctx.axis, "cbr | snr")->required();
  sw->add_flag("--parallel", ctx.parallel, "run sweep points concurrently");
  sw->callback([&] { run = [&] { return voxelcom::cmd_sweep(ctx); }; });

  auto* rp = app.add_subcommand("replay", "re-run a manifest and verify outputs bit-exactly");
  add_common(rp, ctx, false);
  rp->add_option("--manifest", ctx.manifest_path, "manifest.json to replay")->required();
  rp->callback([&] { run = [&] { return voxelcom::cmd_replay(ctx); }; });

  try {
    app.parse(argc, argv);
    return run ? run() : 2;
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const voxelcom::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}
