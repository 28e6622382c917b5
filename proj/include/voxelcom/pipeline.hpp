#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "voxelcom/config.hpp"
#include "voxelcom/metrics.hpp"
#include "voxelcom/scene.hpp"

namespace voxelcom {

// Artifact layout inside an experiment directory. Commands write into their
// own subdirectory and read prerequisites from the siblings.
struct ExpPaths {
  std::string root;

  std::string scene_dir() const { return root + "/scene"; }
  std::string grid_gt() const { return scene_dir() + "/grid_gt.vfg"; }
  std::string views_train() const { return scene_dir() + "/views_train.json"; }
  std::string views_test() const { return scene_dir() + "/views_test.json"; }

  std::string fit_dir() const { return root + "/fit"; }
  std::string grid_fit() const { return fit_dir() + "/grid_stage1.vfg"; }

  std::string codec_dir() const { return root + "/codec"; }
  std::string codec_params() const { return codec_dir() + "/params.vckp"; }

  std::string finetune_dir() const { return root + "/finetune"; }
  std::string grid_finetune() const { return finetune_dir() + "/grid_stage3.vfg"; }
};

// Deterministic camera rig: views + test_views poses on one golden-spiral
// sphere; every test index is spread across the spiral, the rest train.
struct ViewSplit {
  std::vector<View> train, test;
};
ViewSplit make_views(const SceneSection& sc);

std::string scene_id_of(const SceneSection& sc);

// Renders ground-truth images for both splits from the rasterized grid and
// writes grid + views + images under paths.scene_dir(). Returns written files.
std::vector<std::string> write_scene_artifacts(const ExperimentConfig& cfg, const ExpPaths& paths);

// One transmission of a fitted grid: encode, channel at (snr_true, snr_est),
// decode, render the held-out views, score against their reference images.
struct TransmitOutcome {
  MetricsRecord rec;
  BandwidthAllocation alloc;  // k_bar empty for the separation method
  VoxelFeatureGrid fhat;
  bool frame_ok = true;  // side-info CRC / header survived
};
TransmitOutcome transmit_grid(const ExperimentConfig& cfg, const Params& codec_params,
                              const VoxelFeatureGrid& grid, const std::vector<View>& test_views,
                              const std::string& scene_id, const std::string& method,
                              double snr_true_db, double snr_est_db, uint64_t seed);

// Mean PSNR of renders of `grid` against reference view images.
double mean_view_psnr(const VoxelFeatureGrid& grid, const std::vector<View>& refs, int steps);

// Per-patch bandwidth map, one row per patch: d,r,c,k_bar.
void write_heat_csv(const std::string& path, const BandwidthAllocation& a, const CodecShape& s);
struct HeatRow {
  int d = 0, r = 0, c = 0, k_bar = 0;
};
std::vector<HeatRow> read_heat_csv(const std::string& path);

// Searches eta so that the frame's total symbol count lands on target_cbr.
// Returns the tuned eta; the achieved CBR is written through if requested.
double tune_eta_for_cbr(const Params& params, const Tensor& grid, const CodecShape& s,
                        const JsccConfig& cfg, double target_cbr, double* achieved = nullptr);

}  // namespace voxelcom
