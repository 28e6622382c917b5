#include "voxelcom/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace voxelcom {

double psnr(const Tensor& a, const Tensor& b, double max_val) {
  if (!(a.shape() == b.shape()))
    fail(ErrorKind::shape, "psnr: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  std::span<const float> x = a.data(), y = b.data();
  double mse = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(x[i]) - y[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse <= 0.0) return 99.0;
  const double db = 10.0 * std::log10(max_val * max_val / mse);
  return std::min(99.0, std::max(0.0, db));
}

namespace {

std::vector<double> luma(const Tensor& img) {
  const Shape& s = img.shape();
  std::vector<double> out(static_cast<size_t>(s[0] * s[1]), 0.0);
  std::span<const float> d = img.data();
  const int64_t C = s.rank() == 3 ? s[2] : 1;
  for (int64_t p = 0; p < s[0] * s[1]; ++p) {
    double acc = 0;
    for (int64_t c = 0; c < C; ++c) acc += d[p * C + c];
    out[static_cast<size_t>(p)] = acc / static_cast<double>(C);
  }
  return out;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape()))
    fail(ErrorKind::shape, "ssim: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  const Shape& s = a.shape();
  if (s.rank() < 2 || s[0] < 11 || s[1] < 11)
    fail(ErrorKind::shape, "ssim: image must be at least 11x11, got " + s.str());
  const int64_t H = s[0], W = s[1];
  const std::vector<double> x = luma(a), y = luma(b);

  double kernel[11];
  double ksum = 0;
  for (int i = 0; i < 11; ++i) {
    const double d = i - 5.0;
    kernel[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    ksum += kernel[i];
  }
  for (double& k : kernel) k /= ksum;

  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  double total = 0;
  int64_t windows = 0;
  for (int64_t r = 0; r + 11 <= H; ++r)
    for (int64_t c = 0; c + 11 <= W; ++c) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double w = kernel[i] * kernel[j];
          const double xv = x[static_cast<size_t>((r + i) * W + (c + j))];
          const double yv = y[static_cast<size_t>((r + i) * W + (c + j))];
          mx += w * xv;
          my += w * yv;
          sxx += w * xv * xv;
          syy += w * yv * yv;
          sxy += w * xv * yv;
        }
      const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
      total += ((2 * mx * my + C1) * (2 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
      windows += 1;
    }
  return total / static_cast<double>(windows);
}

const char* kRdCsvHeader = "method,snr_true_db,snr_est_db,cbr,psnr_db,ssim,seed,scene_id";

std::string rd_csv_row(const MetricsRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%.2f,%.2f,%.9g,%.4f,%.6f,%llu,%s", r.method.c_str(),
                r.snr_true_db, r.snr_est_db, r.cbr, r.psnr_db, r.ssim,
                static_cast<unsigned long long>(r.seed), r.scene_id.c_str());
  return buf;
}

void write_rd_csv(const std::string& path, std::vector<MetricsRecord> records) {
  std::stable_sort(records.begin(), records.end(), [](const MetricsRecord& a, const MetricsRecord& b) {
    if (a.method != b.method) return a.method < b.method;
    if (a.snr_true_db != b.snr_true_db) return a.snr_true_db < b.snr_true_db;
    return a.cbr < b.cbr;
  });
  std::ofstream os(path);
  if (!os) fail(ErrorKind::io, "csv: cannot write " + path);
  os << kRdCsvHeader << "\n";
  for (const auto& r : records) os << rd_csv_row(r) << "\n";
}

std::vector<MetricsRecord> read_rd_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::prerequisite, "csv: missing file " + path);
  std::string line;
  std::getline(is, line);
  if (line != kRdCsvHeader) fail(ErrorKind::io, "csv: unexpected header in " + path);
  std::vector<MetricsRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    MetricsRecord r;
    auto next = [&]() {
      if (!std::getline(ss, field, ',')) fail(ErrorKind::io, "csv: short row in " + path);
      return field;
    };
    r.method = next();
    r.snr_true_db = std::stod(next());
    r.snr_est_db = std::stod(next());
    r.cbr = std::stod(next());
    r.psnr_db = std::stod(next());
    r.ssim = std::stod(next());
    r.seed = std::stoull(next());
    r.scene_id = next();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace voxelcom
