#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxelcom/codec.hpp"
#include "voxelcom/jscc.hpp"
#include "voxelcom/render.hpp"
#include "voxelcom/scene.hpp"

namespace voxelcom {

struct TrainingSchedule {
  int t1 = 2000, t2 = 2000, t3 = 1000;
  double lr1 = 0.05, lr2 = 1e-3, lr3 = 0.01;
  double lambda = 0.01;
  int ray_batch = 1024;
  int ray_steps = 48;
  double train_snr_db = 10.0;
  double warmup_frac = 0.02;  // linear warmup over this fraction of a stage
  double decay = 0.1;         // lr multiplier reached by the end of a stage
  int log_every = 25;
  bool debug_identity_codec = false;  // stage 3 bypasses the codec entirely
};

struct LossReport {
  int stage = 0;
  int iter = 0;
  double r_v = 0, r_z = 0;
  double feat_mse = 0, recon_mse = 0;
  double total = 0;  // always lambda*(r_v+r_z) + feat_mse + recon_mse
  double lr = 0;
  double snr_db = 0;
};
using TrainLog = std::vector<LossReport>;

double stage_lr(double base, int iter, int total, double warmup_frac, double decay);
void write_train_log(const std::string& path, const TrainLog& log);

// Stage 1: fit the voxel grid to the training views by ray-batch MSE.
void stage1_fit_nerf(VoxelFeatureGrid& grid, const SceneDataset& data,
                     const TrainingSchedule& sch, uint64_t seed, TrainLog* log);

// Stage 2: freeze the grid, train codec + variable-rate heads on the relaxed
// rate-distortion objective through the training-SNR channel. Random flips
// and 4-aligned crops (sizes that keep the hyper lattice fixed) augment the
// single frozen grid.
void stage2_train_codec(Params& params, const VoxelFeatureGrid& grid, const CodecShape& s,
                        const JsccConfig& cfg, const TrainingSchedule& sch, uint64_t seed,
                        TrainLog* log);

// Stage 3: freeze the codec, finetune grid values against rendered pixel MSE
// through the deployed transmit path (quantized z, fresh channel noise).
void stage3_finetune_nerf(VoxelFeatureGrid& grid, const Params& params, const CodecShape& s,
                          const JsccConfig& cfg, const SceneDataset& data,
                          const TrainingSchedule& sch, uint64_t seed, TrainLog* log);

// Noiseless transmit of the grid through the deployed codec path; mean squared
// feature-grid error. The stage-2 improvement metric.
double eval_feat_mse(const Params& params, const Tensor& grid, const CodecShape& s,
                     const JsccConfig& cfg);

}  // namespace voxelcom
