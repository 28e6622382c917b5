#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "testutil.hpp"
#include "voxelcom/codec.hpp"

using namespace voxelcom;
using testutil::fd_check;
using testutil::random_tensor;
using testutil::rel_err;

namespace {

// Normal mass over [a,b] by Simpson's rule on the pdf, independent of erfc.
double normal_mass_simpson(double a, double b, int n = 2000) {
  const double inv_sqrt2pi = 0.3989422804014327;
  auto pdf = [&](double t) { return inv_sqrt2pi * std::exp(-0.5 * t * t); };
  const double h = (b - a) / n;
  double s = pdf(a) + pdf(b);
  for (int i = 1; i < n; ++i) s += pdf(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

// Trapezoid-rule oracle for the expected codeword length. The density of the
// noised latent is itself the unfloored bin mass, so integrate
// density(t) * -log2(floored(t)) on a fine uniform grid.
double expected_bits_trapezoid(double sigma) {
  const double L = 8.0 * sigma + 2.0;
  const int n = 200000;
  const double h = 2.0 * L / n;
  const double inv_ln2 = 1.0 / std::log(2.0);
  auto f = [&](double t) {
    double peff = likelihood(t, 0.0, sigma);
    double mass = (peff - kPMin) / (1.0 - kPMin);
    if (mass <= 0) return 0.0;
    return mass * (-std::log(peff) * inv_ln2);
  };
  double s = 0.5 * (f(-L) + f(L));
  for (int i = 1; i < n; ++i) s += f(-L + i * h);
  return s * h;
}

// Directional central difference across every bound parameter at once. The
// per-op suite pins each op's gradient element by element; for a deep f32
// composite a whole-gradient probe is the meaningful check, because single
// element steps are dominated by forward rounding noise when the true
// component is tiny. Rademacher directions keep the perturbation exactly
// representable. Each direction is checked at two step sizes and the better
// agreement counts: the larger step can straddle leaky_relu kinks, the
// smaller one amplifies rounding noise on low-magnitude losses, and a correct
// gradient passes at one of the two.
double directional_fd_worst(const Params& params,
                            const std::function<Value(Graph&, Binder&)>& build, int directions,
                            uint64_t seed) {
  auto eval = [&](const Params& p) {
    Params copy = p;
    Graph g;
    Binder bind(g, copy);
    return g.scalar_f64(build(g, bind));
  };
  Params work = params;
  Graph g;
  Binder bind(g, work);
  Params an = bind.grads(g.backward(build(g, bind)));
  REQUIRE(!an.empty());

  double worst = 0.0;
  for (int trial = 0; trial < directions; ++trial) {
    double best = 1e30;
    for (double eps : {0x1p-10, 0x1p-13}) {
      Rng rng = Rng::derive(seed, "fd/dir/" + std::to_string(trial));
      Params plus = params, minus = params;
      double an_dir = 0.0;
      for (const auto& [name, grad] : an) {
        auto p = plus.at(name).mutable_data();
        auto m = minus.at(name).mutable_data();
        for (int64_t i = 0; i < grad.numel(); ++i) {
          const float u = rng.bernoulli(0.5) ? 1.0f : -1.0f;
          const float hi = p[i] + static_cast<float>(eps) * u;
          const float lo = m[i] - static_cast<float>(eps) * u;
          an_dir += static_cast<double>(grad.data()[i]) *
                    (static_cast<double>(hi) - static_cast<double>(lo)) / (2.0 * eps);
          p[i] = hi;
          m[i] = lo;
        }
      }
      const double fd = (eval(plus) - eval(minus)) / (2.0 * eps);
      best = std::min(best, rel_err(an_dir, fd));
    }
    worst = std::max(worst, best);
  }
  return worst;
}

Tensor row_permuted(const Tensor& t, const std::vector<int64_t>& dst) {
  const Shape& s = t.shape();
  Tensor out = Tensor::zeros(s);
  for (int64_t i = 0; i < s[0]; ++i)
    for (int64_t j = 0; j < s[1]; ++j)
      out.mutable_data()[dst[static_cast<size_t>(i)] * s[1] + j] = t.data()[i * s[1] + j];
  return out;
}

}  // namespace

TEST_CASE("unit bin mass at the origin matches a quadrature oracle") {
  const double oracle = normal_mass_simpson(-0.5, 0.5);
  CHECK(std::abs(likelihood(0.0, 0.0, 1.0) - oracle) < 1e-6);
  CHECK(std::abs(likelihood(0.0, 0.0, 1.0) - 0.382925) < 1e-5);
  CHECK(std::abs(likelihood(1.25, 3.0, 0.5) -
                 normal_mass_simpson((1.25 - 3.0 - 0.5) / 0.5, (1.25 - 3.0 + 0.5) / 0.5)) < 1e-6);
}

TEST_CASE("bin masses over the integer lattice sum to one") {
  Rng rng = Rng::derive(31, "codec/partition");
  for (int trial = 0; trial < 100; ++trial) {
    const double mu = rng.uniform(-6.0, 6.0);
    const double sigma = trial == 0 ? kSigmaMin : rng.uniform(1e-2, 8.0);
    double sum = 0.0;
    for (int v = -600; v <= 600; ++v) sum += likelihood(v, mu, sigma);
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("floored mass keeps codeword lengths inside [0, 32] bits") {
  CHECK(likelihood(500.0, 0.0, kSigmaMin) >= kPMin);
  CHECK(-std::log2(likelihood(500.0, 0.0, kSigmaMin)) <= 32.0);
  CHECK(likelihood(3.0, 3.0, kSigmaMin) <= 1.0);
  CHECK(likelihood(3.0, 3.0, kSigmaMin) > 1.0 - 1e-9);
  CHECK(-std::log2(likelihood(3.0, 3.0, kSigmaMin)) >= 0.0);
  CHECK_THROWS_AS(likelihood(0.0, 0.0, 0.0), Error);
}

TEST_CASE("graph bin mass agrees with the scalar path") {
  Rng rng = Rng::derive(77, "codec/graph-mass");
  Tensor v = random_tensor(Shape{4, 8}, rng, -4.0, 4.0);
  Tensor mu = random_tensor(Shape{4, 8}, rng, -4.0, 4.0);
  Tensor sig = random_tensor(Shape{4, 8}, rng, 0.1, 3.0);
  Graph g;
  Value p = gaussian_bin_p(g, g.constant(v), g.constant(mu), g.constant(sig));
  const Tensor& pt = p.tensor();
  for (int64_t i = 0; i < 32; ++i) {
    const double want = likelihood(v.data()[i], mu.data()[i], sig.data()[i]);
    CHECK(std::abs(pt.data()[i] - want) < 5e-5);
  }

  RateReport r = rate_report(v, mu, sig);
  Value bits = bits_of_p(g, p);
  CHECK(rel_err(g.scalar_f64(bits), r.r_v) < 2e-3);
}

TEST_CASE("expected bits match a trapezoid oracle and grow with sigma") {
  for (double sigma : {0.05, 0.3, 1.0, 2.5}) {
    CAPTURE(sigma);
    CHECK(rel_err(expected_bits_per_dim(sigma), expected_bits_trapezoid(sigma)) < 1e-5);
  }
  // The unit quantization bin swallows a near-delta latent except for an
  // O(sigma) transition band at the bin edges.
  CHECK(expected_bits_per_dim(1e-3) < 5e-3);
  double prev = -1.0;
  for (double sigma : {0.05, 0.3, 1.0, 2.5, 8.0}) {
    const double e = expected_bits_per_dim(sigma);
    CHECK(e > prev);
    prev = e;
  }
  // Wide Gaussians approach the differential entropy of N(0, sigma^2).
  CHECK(std::abs(expected_bits_per_dim(8.0) - (std::log2(8.0) + 2.0470955648)) < 0.02);
}

TEST_CASE("expected bits agree with a sampled average") {
  Rng rng = Rng::derive(5, "codec/mc");
  const double sigma = 1.0;
  double acc = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double t = sigma * rng.normal() + rng.uniform(-0.5, 0.5);
    acc += -std::log2(likelihood(t, 0.0, sigma));
  }
  CHECK(std::abs(acc / n - expected_bits_per_dim(sigma)) < 0.01);
}

TEST_CASE("codec shapes derive from grid dims") {
  CodecShape s = CodecShape::from_grid(32, 32, 32, 4);
  CHECK(s.pd == 8);
  CHECK(s.P == 512);
  CHECK(s.dv == 32);
  CHECK(s.zd == 2);
  CHECK(s.dz == 16);
  CHECK(s.m() == 32 * 32 * 32 * 4);

  CodecShape t = CodecShape::from_grid(8, 4, 4, 4);
  CHECK(t.pd == 2);
  CHECK(t.ph == 1);
  CHECK(t.P == 2);
  CHECK(t.dv == 32);
  CHECK(t.zd == 1);
  CHECK(t.dz == 2);

  CHECK_THROWS_AS(CodecShape::from_grid(30, 32, 32, 4), Error);
  CHECK_THROWS_AS(CodecShape::from_grid(0, 4, 4, 4), Error);
  CHECK_THROWS_AS(CodecShape::from_grid(8, 4, 4, 0), Error);
  CHECK_THROWS_AS(CodecShape::from_grid(8, 4, 4, 17), Error);
}

TEST_CASE("transforms produce the declared shapes and sigma stays floored") {
  const CodecShape s = CodecShape::from_grid(8, 4, 4, 4);
  Params params = init_codec_params(s, 5);
  Rng rng = Rng::derive(6, "codec/shapes");
  Tensor grid = random_tensor(Shape{8, 4, 4, 4}, rng, 0.0, 1.0);

  Tensor va = run_analysis(params, grid, s);
  CHECK(va.shape() == Shape{2, 1, 1, 32});
  Tensor z = run_hyper_encode(params, va, s);
  CHECK(z.shape() == Shape{1, 1, 1, 2});
  auto [mu, sigma] = run_hyper_decode(params, z, s);
  CHECK(mu.shape() == Shape{2, 32});
  CHECK(sigma.shape() == Shape{2, 32});
  for (int64_t i = 0; i < sigma.numel(); ++i) CHECK(sigma.data()[i] >= 0.999f * kSigmaMin);
  Tensor recon = run_synthesis(params, va, s);
  CHECK(recon.shape() == Shape{8, 4, 4, 4});

  const CodecShape big = CodecShape::from_grid(32, 32, 32, 4);
  Params bp = init_codec_params(big, 5);
  Tensor bgrid = random_tensor(Shape{32, 32, 32, 4}, rng, 0.0, 1.0);
  Tensor bva = run_analysis(bp, bgrid, big);
  CHECK(bva.shape() == Shape{8, 8, 8, 32});
  Tensor bz = run_hyper_encode(bp, bva, big);
  CHECK(bz.shape() == Shape{2, 2, 2, 2});
  auto [bmu, bsigma] = run_hyper_decode(bp, bz, big);
  CHECK(bmu.shape() == Shape{512, 32});
  CHECK(run_synthesis(bp, bva, big).shape() == Shape{32, 32, 32, 4});
}

TEST_CASE("zero grid with zero analysis biases maps to zero patches") {
  const CodecShape s = CodecShape::from_grid(8, 4, 4, 4);
  Params params = init_codec_params(s, 9);
  params.at("ga/c1.b") = Tensor::zeros(Shape{16});
  params.at("ga/c2.b") = Tensor::zeros(Shape{4});
  Tensor va = run_analysis(params, Tensor::zeros(Shape{8, 4, 4, 4}), s);
  for (int64_t i = 0; i < va.numel(); ++i) CHECK(va.data()[i] == 0.0f);
}

TEST_CASE("rate report is additive and permutation equivariant") {
  Rng rng = Rng::derive(41, "codec/report");
  const int64_t P = 16, d = 8;
  Tensor v = random_tensor(Shape{P, d}, rng, -4.0, 4.0);
  Tensor mu = random_tensor(Shape{P, d}, rng, -4.0, 4.0);
  Tensor sig = random_tensor(Shape{P, d}, rng, 0.05, 3.0);
  RateReport r = rate_report(v, mu, sig);
  double sum = 0.0;
  for (double b : r.per_patch_bits) {
    CHECK(b > 0.0);
    sum += b;
  }
  CHECK(r.r_v == sum);

  std::vector<int64_t> dst(P);
  for (int64_t i = 0; i < P; ++i) dst[static_cast<size_t>(i)] = (i * 7 + 3) % P;
  RateReport rp = rate_report(row_permuted(v, dst), row_permuted(mu, dst), row_permuted(sig, dst));
  for (int64_t i = 0; i < P; ++i)
    CHECK(rp.per_patch_bits[static_cast<size_t>(dst[static_cast<size_t>(i)])] ==
          r.per_patch_bits[static_cast<size_t>(i)]);
  CHECK(rel_err(rp.r_v, r.r_v) < 1e-12);
}

TEST_CASE("latents at the mean cost almost nothing; spread costs bits") {
  Rng rng = Rng::derive(43, "codec/cost");
  Tensor mu = random_tensor(Shape{6, 8}, rng, -4.0, 4.0);
  Tensor sig = Tensor::full(Shape{6, 8}, static_cast<float>(kSigmaMin));
  RateReport tight = rate_report(mu, mu, sig);
  for (double b : tight.per_patch_bits) CHECK(b < 1e-5);

  for (int trial = 0; trial < 20; ++trial) {
    Tensor s1 = random_tensor(Shape{6, 8}, rng, 0.05, 4.0);
    Tensor s2 = s1.clone();
    for (int64_t i = 0; i < s2.numel(); ++i) s2.mutable_data()[i] *= 2.0f;
    CHECK(expected_rate_report(s2).r_v > expected_rate_report(s1).r_v);
  }
}

TEST_CASE("z prior with uniform weights gives the hand-computed mass") {
  const CodecShape s = CodecShape::from_grid(8, 4, 4, 4);
  Params params = init_codec_params(s, 3);
  // theta == 0 -> equal segment weights 1/10; the unit bin at the origin then
  // has mass exactly 1/16, i.e. 4 bits per dimension.
  const double bits = z_bits(params, Tensor::zeros(Shape{1, 1, 1, 2}), s);
  CHECK(std::abs(bits - 8.0) < 1e-3);
}

TEST_CASE("z prior masses sum to one for random weights") {
  const CodecShape s = CodecShape::from_grid(8, 4, 4, 4);
  Rng rng = Rng::derive(59, "codec/zprior");
  for (int trial = 0; trial < 30; ++trial) {
    Params params = init_codec_params(s, 3);
    if (trial > 0) params.at("zprior/theta") = random_tensor(Shape{s.dz, kPriorKnots}, rng, -2.0, 2.0);
    Params copy = params;
    Graph g;
    Binder bind(g, copy);
    std::vector<double> sums(static_cast<size_t>(s.dz), 0.0);
    for (int v = -9; v <= 9; ++v) {
      Value p = z_bin_p(g, bind, g.constant(Tensor::full(Shape{1, 1, 1, 2}, static_cast<float>(v))), s);
      for (int64_t i = 0; i < s.dz; ++i) {
        const float pi = p.tensor().data()[i];
        CHECK(pi >= static_cast<float>(kPMin));
        sums[static_cast<size_t>(i)] += pi;
      }
    }
    for (double sum : sums) CHECK(std::abs(sum - 1.0) < 2e-5);
  }
}

TEST_CASE("composite finite differences through the full codec") {
  const CodecShape s = CodecShape::from_grid(8, 4, 4, 4);
  Params params = init_codec_params(s, 21);
  Rng rng = Rng::derive(22, "codec/fd");
  Tensor grid = random_tensor(Shape{8, 4, 4, 4}, rng, 0.0, 1.0);
  Tensor target = random_tensor(Shape{8, 4, 4, 4}, rng, 0.0, 1.0);

  auto rate_path = [grid, s](Graph& g, Binder& bind) {
    Value va = analysis(g, bind, g.constant(grid), s);
    Value v = as_patches(g, va, s);
    MuSigma ms = hyper_decode(g, bind, hyper_encode(g, bind, va, s), s);
    return g.reduce_sum(g.log(gaussian_bin_p(g, v, ms.mu, ms.sigma)));
  };
  auto z_path = [grid, s](Graph& g, Binder& bind) {
    Value va = analysis(g, bind, g.constant(grid), s);
    Value z = hyper_encode(g, bind, va, s);
    return g.reduce_sum(g.log(z_bin_p(g, bind, z, s)));
  };
  auto recon_path = [grid, target, s](Graph& g, Binder& bind) {
    Value va = analysis(g, bind, g.constant(grid), s);
    Value diff = g.sub(synthesis(g, bind, va, s), g.constant(target));
    return g.reduce_sum(g.mul(diff, diff));
  };

  for (const auto& [name, build] :
       std::vector<std::pair<std::string, std::function<Value(Graph&, Binder&)>>>{
           {"rate", rate_path}, {"z", z_path}, {"recon", recon_path}}) {
    CAPTURE(name);
    CHECK(directional_fd_worst(params, build, 8, 97) < 1e-2);
  }
}
