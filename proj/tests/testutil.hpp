#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "voxelcom/nn.hpp"
#include "voxelcom/rng.hpp"

namespace voxelcom::testutil {

inline double rel_err(double a, double b, double guard = 1e-2) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), guard});
}

inline Tensor random_tensor(Shape s, Rng& rng, double lo, double hi) {
  std::vector<float> v(static_cast<size_t>(s.numel()));
  for (float& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor::from(s, std::move(v));
}

struct FdReport {
  double max_rel = 0.0;
  int probes = 0;
  std::string worst;  // "param[i]: analytic vs fd"
};

// Central-difference gradient check. `build` must be a pure function of the
// bound parameters (capture constants by value) and return a scalar loss whose
// final op is reduce_sum so the f64 accumulator is used. Perturbations are
// applied in f32 and the actually representable step is used as the divisor.
inline FdReport fd_check(const Params& params,
                         const std::function<Value(Graph&, Binder&)>& build,
                         double eps = 0x1p-10, int probes_per_param = 6,
                         uint64_t probe_seed = 7) {
  auto eval = [&](const Params& p) {
    Params copy = p;
    Graph g;
    Binder bind(g, copy);
    Value loss = build(g, bind);
    return g.scalar_f64(loss);
  };

  Params work = params;
  Graph g;
  Binder bind(g, work);
  Value loss = build(g, bind);
  Params analytic = bind.grads(g.backward(loss));

  FdReport rep;
  Rng rng = Rng::derive(probe_seed, "fd/probes");
  for (const auto& [name, grad] : analytic) {
    const int64_t n = grad.numel();
    const int probes = n <= probes_per_param ? static_cast<int>(n) : probes_per_param;
    for (int k = 0; k < probes; ++k) {
      const int64_t i = n <= probes_per_param ? k : rng.uniform_int(static_cast<uint64_t>(n));
      Params plus = params;
      Params minus = params;
      const float orig = params.at(name).data()[i];
      const float hi = orig + static_cast<float>(eps);
      const float lo = orig - static_cast<float>(eps);
      plus.at(name).mutable_data()[i] = hi;
      minus.at(name).mutable_data()[i] = lo;
      const double fd = (eval(plus) - eval(minus)) / (static_cast<double>(hi) - static_cast<double>(lo));
      const double an = grad.data()[i];
      const double r = rel_err(an, fd);
      rep.probes += 1;
      if (r > rep.max_rel) {
        rep.max_rel = r;
        rep.worst = name + "[" + std::to_string(i) + "]: " + std::to_string(an) + " vs " + std::to_string(fd);
      }
    }
  }
  return rep;
}

}  // namespace voxelcom::testutil
