#pragma once

#include <string>
#include <utility>
#include <vector>

#include "voxelcom/adam.hpp"
#include "voxelcom/graph.hpp"
#include "voxelcom/rng.hpp"

namespace voxelcom {

// Uniform init in [-b, b] with b = sqrt(1/fan_in). The stream is derived from
// the parameter name so layer order in code never changes the draw.
inline Tensor init_uniform(Shape s, int64_t fan_in, uint64_t seed, const std::string& name) {
  Rng rng = Rng::derive(seed, "init/" + name);
  const float b = static_cast<float>(std::sqrt(1.0 / static_cast<double>(fan_in)));
  std::vector<float> v(static_cast<size_t>(s.numel()));
  for (float& x : v) x = static_cast<float>(rng.uniform(-b, b));
  return Tensor::from(s, std::move(v));
}

// Adds a conv3d weight [k,k,k,Ci,Co] and bias [Co] pair unless already present
// (idempotent so model builders can be re-run on loaded checkpoints).
inline void ensure_conv_param(Params& p, const std::string& name, int k, int64_t ci, int64_t co,
                              uint64_t seed) {
  if (p.count(name + ".w")) return;
  const int64_t fan_in = static_cast<int64_t>(k) * k * k * ci;
  p.emplace(name + ".w", init_uniform(Shape{k, k, k, ci, co}, fan_in, seed, name + ".w"));
  p.emplace(name + ".b", init_uniform(Shape{co}, fan_in, seed, name + ".b"));
}

inline void ensure_dense_param(Params& p, const std::string& name, int64_t in, int64_t out,
                               uint64_t seed) {
  if (p.count(name + ".w")) return;
  p.emplace(name + ".w", init_uniform(Shape{in, out}, in, seed, name + ".w"));
  p.emplace(name + ".b", init_uniform(Shape{out}, in, seed, name + ".b"));
}

// Binds named parameters into a graph as grad-enabled leaves and maps the
// resulting GradMap (node id keyed) back to names.
class Binder {
 public:
  Binder(Graph& g, Params& params) : g_(g), params_(params) {}

  Value operator()(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) fail(ErrorKind::prerequisite, "missing parameter " + name);
    for (const auto& [n, v] : bound_)
      if (n == name) return v;
    Tensor t = it->second;  // shares storage
    t.set_requires_grad(true);
    Value v = g_.leaf(std::move(t));
    bound_.emplace_back(name, v);
    return v;
  }

  Params grads(const GradMap& gm) const {
    Params out;
    for (const auto& [name, v] : bound_) {
      auto it = gm.find(v.id);
      if (it != gm.end()) out.emplace(name, it->second);
    }
    return out;
  }

 private:
  Graph& g_;
  Params& params_;
  std::vector<std::pair<std::string, Value>> bound_;
};

// conv3d followed by a broadcast bias add.
inline Value conv_layer(Graph& g, Binder& bind, const std::string& name, Value x, int stride) {
  return g.add(g.conv3d(x, bind(name + ".w"), stride), bind(name + ".b"));
}

inline Value dense_layer(Graph& g, Binder& bind, const std::string& name, Value x) {
  return g.add(g.matmul(x, bind(name + ".w")), bind(name + ".b"));
}

}  // namespace voxelcom
