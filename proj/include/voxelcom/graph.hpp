#pragma once

#include <array>
#include <map>
#include <memory>
#include <vector>

#include "voxelcom/tensor.hpp"

namespace voxelcom {

// Operation kinds the engine knows how to differentiate. The set is fixed and
// each kind has a hand-written forward/backward pair; there is no general tape
// of closures. conv3d supports stride 1/2 and kernel 1/3 only.
enum class OpKind {
  leaf,
  add,
  mul,
  matmul,
  conv3d,
  leaky_relu,
  softplus,
  clamp01,
  exp,
  log,
  sqrt,
  reciprocal,
  normal_cdf,
  reshape,
  patch_merge,
  patch_split,
  reduce_sum,
  gather_rows,
};

const char* op_name(OpKind k);

class Graph;

// Handle to a node in a Graph. Cheap to copy; valid as long as the graph lives.
struct Value {
  Graph* graph = nullptr;
  int id = -1;
  bool defined() const { return graph != nullptr && id >= 0; }
  const Shape& shape() const;
  const Tensor& tensor() const;
};

using GradMap = std::map<int, Tensor>;  // parameter node id -> gradient

// Reverse-mode autodiff over a fixed op set. Nodes are appended in evaluation
// order, which is also a topological order; backward walks it once in reverse.
// Forward values are computed eagerly. Single-threaded by contract; run
// independent graphs on independent threads if needed.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Value leaf(Tensor t);  // requires_grad taken from the tensor
  Value constant(Tensor t) { return leaf(Tensor(t).set_requires_grad(false)); }
  Value constant_scalar(float v) { return constant(Tensor::scalar(v)); }

  Value add(Value a, Value b);
  Value mul(Value a, Value b);
  Value matmul(Value a, Value b);
  // x: [D,H,W,Cin], w: [k,k,k,Cin,Cout]; pad 1 for k==3, 0 for k==1.
  Value conv3d(Value x, Value w, int stride);
  Value leaky_relu(Value x, float slope);
  Value softplus(Value x);
  Value clamp01(Value x);
  Value exp(Value x);
  Value log(Value x);
  Value sqrt(Value x);
  Value reciprocal(Value x);
  Value normal_cdf(Value x);
  Value reshape(Value x, Shape s);
  // [D,H,W,C] -> [D/wd,H/wh,W/ww,C*wd*wh*ww]; exact inverse is patch_split.
  Value patch_merge(Value x, std::array<int, 3> window);
  Value patch_split(Value x, std::array<int, 3> window);
  Value reduce_sum(Value x);  // all elements -> scalar, f64 accumulation
  Value gather_rows(Value x, std::vector<int64_t> idx);

  // Convenience compounds (built from the ops above).
  Value sub(Value a, Value b) { return add(a, mul(b, constant_scalar(-1.f))); }
  Value scale(Value a, float s) { return mul(a, constant_scalar(s)); }
  Value shift(Value a, float s) { return add(a, constant_scalar(s)); }

  const Tensor& value(Value v) const;
  // Exact f64 accumulation of a reduce_sum node (used by loss reporting and
  // the finite-difference checker).
  double scalar_f64(Value v) const;

  // dLoss/dParam for every leaf with requires_grad. loss must be scalar.
  GradMap backward(Value loss);

  size_t size() const { return nodes_.size(); }
  const std::vector<int>& param_ids() const { return param_ids_; }

  // NaN/Inf checking after every op. On by default; turn off only in hot
  // loops that are already covered by a checked variant.
  void set_check_finite(bool v) { check_finite_ = v; }

 private:
  struct Node {
    OpKind kind = OpKind::leaf;
    int a = -1, b = -1;
    Tensor value;
    bool needs_grad = false;
    float scalar_attr = 0.f;                      // leaky_relu slope
    int stride = 1;                               // conv3d
    std::array<int, 3> window{1, 1, 1};           // patch_merge/split
    Shape in_shape;                               // reshape/reduce backward
    std::shared_ptr<std::vector<int64_t>> index;  // gather_rows
    double cached_sum = 0.0;                      // reduce_sum
  };

  int push(Node n);
  Value wrap(int id) { return Value{this, id}; }
  const Node& node(Value v) const;
  void check(Value v, const char* op) const;

  std::vector<Node> nodes_;
  std::vector<int> param_ids_;
  bool check_finite_ = true;

  friend struct Value;
};

// Generic dispatcher mirroring the forward_op(kind, inputs...) surface; used by
// the op-level test harness.
struct OpAttrs {
  float slope = 0.01f;
  int stride = 1;
  std::array<int, 3> window{2, 2, 2};
  Shape reshape_to;
  std::vector<int64_t> indices;
};
Value forward_op(Graph& g, OpKind kind, std::span<const Value> inputs, const OpAttrs& attrs = {});

}  // namespace voxelcom
