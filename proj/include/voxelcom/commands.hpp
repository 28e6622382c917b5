#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace voxelcom {

// Parsed command line for one subcommand invocation. Commands read their
// prerequisites from --out (the experiment directory), write their own
// subdirectory under it, and drop a manifest next to their outputs.
struct CmdContext {
  std::string config_path;
  std::string out_dir = "exp";
  std::optional<uint64_t> seed;       // --seed beats VOXELCOM_SEED beats [scene] seed
  std::optional<double> snr_true;     // transmit; defaults to the first [channel] snr_db
  std::optional<double> snr_est;      // transmit; defaults to [channel] snr_est_db
  std::string method = "jscc";        // jscc | separation
  std::string axis;                   // sweep: cbr | snr
  int view = 0;                       // render: test-view index
  bool parallel = false;              // sweep points via std::async
  std::string grid_path;              // render: explicit grid file override
  std::string manifest_path;          // replay
};

int cmd_gen_scene(const CmdContext& ctx);
int cmd_fit(const CmdContext& ctx);
int cmd_train_codec(const CmdContext& ctx);
int cmd_finetune(const CmdContext& ctx);
int cmd_transmit(const CmdContext& ctx);
int cmd_render(const CmdContext& ctx);
int cmd_sweep(const CmdContext& ctx);
// Re-runs the command recorded in a manifest into --out and verifies that
// every recorded output hash matches. Inputs must still match their hashes.
int cmd_replay(const CmdContext& ctx);

}  // namespace voxelcom
