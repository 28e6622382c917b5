#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxelcom/tensor.hpp"

namespace voxelcom {

struct MetricsRecord {
  std::string method;  // "jscc" | "separation"
  double snr_true_db = 0, snr_est_db = 0;
  double cbr = 0, psnr_db = 0, ssim = 0;
  uint64_t seed = 0;
  std::string scene_id;
};

// 10*log10(max_val^2 / MSE), clamped to [0, 99]; exact match reports the cap.
double psnr(const Tensor& a, const Tensor& b, double max_val = 1.0);

// Mean SSIM over valid 11x11 windows (Gaussian sigma 1.5) on the channel-mean
// luma, C1=(0.01)^2, C2=(0.03)^2 with L=1.
double ssim(const Tensor& a, const Tensor& b);

extern const char* kRdCsvHeader;  // method,snr_true_db,snr_est_db,cbr,psnr_db,ssim,seed,scene_id
std::string rd_csv_row(const MetricsRecord& r);

// Groups by (method, snr_true_db), sorts each group by cbr, writes CSV.
void write_rd_csv(const std::string& path, std::vector<MetricsRecord> records);
std::vector<MetricsRecord> read_rd_csv(const std::string& path);

}  // namespace voxelcom
