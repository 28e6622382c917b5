#include "voxelcom/adam.hpp"

#include <cmath>

namespace voxelcom {

void adam_step(Params& params, const Params& grads, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
  if (lr <= 0.0) fail(ErrorKind::config, "adam: lr must be positive, got " + std::to_string(lr));
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (const auto& [name, grad] : grads) {
    auto it = params.find(name);
    if (it == params.end()) fail(ErrorKind::shape, "adam: gradient for unknown parameter " + name);
    Tensor& p = it->second;
    if (!(p.shape() == grad.shape()))
      fail(ErrorKind::shape, "adam: " + name + " shape mismatch " + p.shape().str() + " vs " + grad.shape().str());
    auto mit = state.m.find(name);
    if (mit == state.m.end()) {
      mit = state.m.emplace(name, Tensor::zeros(p.shape())).first;
      state.v.emplace(name, Tensor::zeros(p.shape()));
    }
    std::span<float> m = mit->second.mutable_data();
    std::span<float> v = state.v.at(name).mutable_data();
    std::span<float> x = p.mutable_data();
    std::span<const float> g = grad.data();
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double gi = g[i];
      const double mi = beta1 * m[i] + (1.0 - beta1) * gi;
      const double vi = beta2 * v[i] + (1.0 - beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      x[i] = static_cast<float>(x[i] - lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
    }
  }
}

}  // namespace voxelcom
