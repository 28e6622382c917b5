#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "voxelcom/graph.hpp"
#include "voxelcom/nn.hpp"

namespace voxelcom {

// Grid -> latent geometry. The analysis transform downsamples by 2 (stride-2
// conv), refines (stride-1 conv), then folds 2x2x2 neighborhoods into patch
// vectors, so grid dims must be divisible by 4. The hyperprior downsamples the
// patch lattice by 4 with two stride-2 convs into a 2-channel z field.
struct CodecShape {
  int D = 0, H = 0, W = 0, C = 0;
  int pd = 0, ph = 0, pw = 0, P = 0;
  int dv = 0;
  int zd = 0, zh = 0, zw = 0, zc = 2;
  int dz = 0;
  static CodecShape from_grid(int D, int H, int W, int C);
  int64_t m() const { return static_cast<int64_t>(D) * H * W * C; }
};

inline constexpr double kSigmaMin = 1e-3;
inline constexpr double kPMin = 1.0 / 4294967296.0;  // 2^-32
inline constexpr int kPriorKnots = 10;
inline constexpr double kPriorLo = -8.0, kPriorHi = 8.0;

// Parameter names: ga/c1 ga/c2, gs/c1 gs/c2, ha/c1 ha/c2, hs/c1 hs/c2 hs/c3
// (each with /w and /b), and zprior/theta of shape [dz, knots].
Params init_codec_params(const CodecShape& s, uint64_t seed);

Value analysis(Graph& g, Binder& bind, Value grid, const CodecShape& s);
Value synthesis(Graph& g, Binder& bind, Value vgrid, const CodecShape& s);
Value hyper_encode(Graph& g, Binder& bind, Value vgrid, const CodecShape& s);
struct MuSigma {
  Value mu, sigma;  // each [P, dv]
};
MuSigma hyper_decode(Graph& g, Binder& bind, Value z, const CodecShape& s);

// [pd,ph,pw,dv] <-> [P,dv]
Value as_patches(Graph& g, Value vgrid, const CodecShape& s);
Value as_grid(Graph& g, Value patches, const CodecShape& s);

// Unit-bin mass of the Gaussian-convolved-with-uniform model, floored so that
// -log2 p stays in [0, 32]: p_eff = p*(1 - p_min) + p_min.
Value gaussian_bin_p(Graph& g, Value v, Value mu, Value sigma);
// Same floored bin mass for z under the learned per-dimension piecewise-linear
// CDF prior (fixed knot positions, learned normalized weights).
Value z_bin_p(Graph& g, Binder& bind, Value ztilde, const CodecShape& s);
// Scalar bits: sum of -log2 over all elements of p.
Value bits_of_p(Graph& g, Value p);

// Scalar (f64) versions used by the wire path and the tests.
double likelihood(double v, double mu, double sigma);
// Expected -log2 p over v ~ N(mu, sigma^2) convolved with U(-1/2,1/2); depends
// only on sigma. Composite Gauss-Legendre over [-(8*sigma+2), 8*sigma+2].
double expected_bits_per_dim(double sigma);

struct RateReport {
  std::vector<double> per_patch_bits;
  double r_v = 0;  // == sum(per_patch_bits)
  double r_z = 0;
};
// Bits of actual latents under (mu, sigma); v, mu, sigma are [P, dv].
RateReport rate_report(const Tensor& v, const Tensor& mu, const Tensor& sigma);
// Receiver-computable variant: expected bits per patch from sigma alone.
RateReport expected_rate_report(const Tensor& sigma);
// Bits of a z sample under the learned prior (evaluated through the graph).
double z_bits(const Params& params, const Tensor& z, const CodecShape& s);

// Eager single-tensor runs through a throwaway graph.
Tensor run_analysis(const Params& p, const Tensor& grid, const CodecShape& s);
Tensor run_synthesis(const Params& p, const Tensor& vgrid, const CodecShape& s);
Tensor run_hyper_encode(const Params& p, const Tensor& vgrid, const CodecShape& s);
std::pair<Tensor, Tensor> run_hyper_decode(const Params& p, const Tensor& z, const CodecShape& s);

}  // namespace voxelcom
