#include "voxelcom/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace voxelcom {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

// Numpy-style trailing broadcast of two shapes.
Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  int rank = std::max(a.rank(), b.rank());
  std::vector<int64_t> dims(static_cast<size_t>(rank), 1);
  for (int i = 0; i < rank; ++i) {
    int64_t da = i < rank - a.rank() ? 1 : a[i - (rank - a.rank())];
    int64_t db = i < rank - b.rank() ? 1 : b[i - (rank - b.rank())];
    if (da != db && da != 1 && db != 1)
      fail(ErrorKind::shape,
           std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
    dims[static_cast<size_t>(i)] = std::max(da, db);
  }
  return Shape(dims);
}

// Strides of an input as seen from the broadcast output (0 on expanded axes).
std::array<int64_t, Shape::kMaxRank> broadcast_strides(const Shape& in, const Shape& out) {
  std::array<int64_t, Shape::kMaxRank> st{};
  int off = out.rank() - in.rank();
  int64_t s = 1;
  for (int i = in.rank() - 1; i >= 0; --i) {
    st[static_cast<size_t>(i + off)] = (in[i] == 1 && out[i + off] != 1) ? 0 : s;
    s *= in[i];
  }
  return st;
}

template <class F>
void broadcast_binary(const Tensor& a, const Tensor& b, Tensor& out, F&& f) {
  const Shape& os = out.shape();
  std::span<const float> pa = a.data(), pb = b.data();
  std::span<float> po = out.mutable_data();
  const int64_t n = os.numel();
  if (a.shape() == b.shape()) {  // fast path
    for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
    return;
  }
  if (b.numel() == 1) {
    const float bv = pb[0];
    for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i], bv);
    return;
  }
  if (a.numel() == 1) {
    const float av = pa[0];
    for (int64_t i = 0; i < n; ++i) po[i] = f(av, pb[i]);
    return;
  }
  auto sa = broadcast_strides(a.shape(), os);
  auto sb = broadcast_strides(b.shape(), os);
  std::array<int64_t, Shape::kMaxRank> idx{};
  const int rank = os.rank();
  int64_t offa = 0, offb = 0;
  for (int64_t i = 0; i < n; ++i) {
    po[i] = f(pa[offa], pb[offb]);
    for (int d = rank - 1; d >= 0; --d) {
      auto ud = static_cast<size_t>(d);
      if (++idx[ud] < os[d]) {
        offa += sa[ud];
        offb += sb[ud];
        break;
      }
      idx[ud] = 0;
      offa -= sa[ud] * (os[d] - 1);
      offb -= sb[ud] * (os[d] - 1);
    }
  }
}

// Sum grad over the axes a broadcast expanded, yielding a tensor of `target` shape.
Tensor reduce_to_shape(const Tensor& grad, const Shape& target) {
  if (grad.shape() == target) return grad;
  Tensor out = Tensor::zeros(target);
  auto st = broadcast_strides(target, grad.shape());
  std::span<const float> pg = grad.data();
  std::span<float> po = out.mutable_data();
  const Shape& os = grad.shape();
  const int rank = os.rank();
  std::array<int64_t, Shape::kMaxRank> idx{};
  int64_t off = 0;
  const int64_t n = os.numel();
  for (int64_t i = 0; i < n; ++i) {
    po[off] += pg[i];
    for (int d = rank - 1; d >= 0; --d) {
      auto ud = static_cast<size_t>(d);
      if (++idx[ud] < os[d]) {
        off += st[ud];
        break;
      }
      idx[ud] = 0;
      off -= st[ud] * (os[d] - 1);
    }
  }
  return out;
}

struct ConvDims {
  int64_t D, H, W, Ci, Co, k, pad, stride, Do, Ho, Wo;
};

ConvDims conv_dims(const Shape& x, const Shape& w, int stride) {
  if (x.rank() != 4) fail(ErrorKind::shape, "conv3d: input must be [D,H,W,C], got " + x.str());
  if (w.rank() != 5) fail(ErrorKind::shape, "conv3d: kernel must be [k,k,k,Ci,Co], got " + w.str());
  ConvDims d{};
  d.D = x[0];
  d.H = x[1];
  d.W = x[2];
  d.Ci = x[3];
  d.k = w[0];
  d.Co = w[4];
  if (w[1] != d.k || w[2] != d.k) fail(ErrorKind::shape, "conv3d: kernel not cubic " + w.str());
  if (w[3] != d.Ci)
    fail(ErrorKind::shape, "conv3d: shape mismatch " + x.str() + " vs " + w.str());
  if (d.k != 1 && d.k != 3) fail(ErrorKind::shape, "conv3d: kernel must be 1 or 3");
  if (stride != 1 && stride != 2) fail(ErrorKind::shape, "conv3d: stride must be 1 or 2");
  d.pad = d.k == 3 ? 1 : 0;
  d.stride = stride;
  d.Do = (d.D + 2 * d.pad - d.k) / stride + 1;
  d.Ho = (d.H + 2 * d.pad - d.k) / stride + 1;
  d.Wo = (d.W + 2 * d.pad - d.k) / stride + 1;
  return d;
}

void patch_dims(const Shape& s, const std::array<int, 3>& w, const char* op) {
  if (s.rank() != 4) fail(ErrorKind::shape, std::string(op) + ": input must be [D,H,W,C], got " + s.str());
  for (int i = 0; i < 3; ++i) {
    if (w[static_cast<size_t>(i)] < 1) fail(ErrorKind::shape, std::string(op) + ": bad window");
    if (s[i] % w[static_cast<size_t>(i)] != 0)
      fail(ErrorKind::shape, std::string(op) + ": extent " + std::to_string(s[i]) +
                                 " not divisible by window " + std::to_string(w[static_cast<size_t>(i)]));
  }
}

}  // namespace

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::matmul: return "matmul";
    case OpKind::conv3d: return "conv3d";
    case OpKind::leaky_relu: return "leaky_relu";
    case OpKind::softplus: return "softplus";
    case OpKind::clamp01: return "clamp01";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::sqrt: return "sqrt";
    case OpKind::reciprocal: return "reciprocal";
    case OpKind::normal_cdf: return "normal_cdf";
    case OpKind::reshape: return "reshape";
    case OpKind::patch_merge: return "patch_merge";
    case OpKind::patch_split: return "patch_split";
    case OpKind::reduce_sum: return "reduce_sum";
    case OpKind::gather_rows: return "gather_rows";
  }
  return "?";
}

const Shape& Value::shape() const { return tensor().shape(); }
const Tensor& Value::tensor() const { return graph->value(*this); }

const Graph::Node& Graph::node(Value v) const {
  if (v.graph != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    fail(ErrorKind::shape, "graph: value does not belong to this graph");
  return nodes_[static_cast<size_t>(v.id)];
}

void Graph::check(Value v, const char* op) const {
  if (v.graph != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    fail(ErrorKind::shape, std::string(op) + ": input value not from this graph");
}

int Graph::push(Node n) {
  if (check_finite_ && !n.value.all_finite())
    fail(ErrorKind::numeric, std::string(op_name(n.kind)) + ": non-finite values in output");
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Value Graph::leaf(Tensor t) {
  Node n;
  n.kind = OpKind::leaf;
  n.needs_grad = t.requires_grad();
  n.value = std::move(t);
  int id = push(std::move(n));
  if (nodes_[static_cast<size_t>(id)].needs_grad) param_ids_.push_back(id);
  return wrap(id);
}

const Tensor& Graph::value(Value v) const { return node(v).value; }

double Graph::scalar_f64(Value v) const {
  const Node& n = node(v);
  if (n.value.numel() != 1) fail(ErrorKind::shape, "scalar_f64: not a scalar");
  if (n.kind == OpKind::reduce_sum) return n.cached_sum;
  return static_cast<double>(n.value.data()[0]);
}

Value Graph::add(Value a, Value b) {
  check(a, "add");
  check(b, "add");
  Node n;
  n.kind = OpKind::add;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  n.value = Tensor::zeros(broadcast_shape(a.shape(), b.shape(), "add"));
  broadcast_binary(node(a).value, node(b).value, n.value, [](float x, float y) { return x + y; });
  return wrap(push(std::move(n)));
}

Value Graph::mul(Value a, Value b) {
  check(a, "mul");
  check(b, "mul");
  Node n;
  n.kind = OpKind::mul;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  n.value = Tensor::zeros(broadcast_shape(a.shape(), b.shape(), "mul"));
  broadcast_binary(node(a).value, node(b).value, n.value, [](float x, float y) { return x * y; });
  return wrap(push(std::move(n)));
}

Value Graph::matmul(Value a, Value b) {
  check(a, "matmul");
  check(b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.rank() != 2 || sb.rank() != 2 || sa[1] != sb[0])
    fail(ErrorKind::shape, "matmul: shape mismatch " + sa.str() + " vs " + sb.str());
  const int64_t M = sa[0], K = sa[1], N = sb[1];
  Node n;
  n.kind = OpKind::matmul;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  n.value = Tensor::zeros(Shape{M, N});
  std::span<const float> pa = node(a).value.data(), pb = node(b).value.data();
  std::span<float> po = n.value.mutable_data();
  std::vector<double> row(static_cast<size_t>(N));
  for (int64_t m = 0; m < M; ++m) {
    std::fill(row.begin(), row.end(), 0.0);
    for (int64_t k = 0; k < K; ++k) {
      const double av = pa[m * K + k];
      const float* bk = &pb[k * N];
      for (int64_t j = 0; j < N; ++j) row[static_cast<size_t>(j)] += av * bk[j];
    }
    for (int64_t j = 0; j < N; ++j) po[m * N + j] = static_cast<float>(row[static_cast<size_t>(j)]);
  }
  return wrap(push(std::move(n)));
}

Value Graph::conv3d(Value x, Value w, int stride) {
  check(x, "conv3d");
  check(w, "conv3d");
  ConvDims d = conv_dims(x.shape(), w.shape(), stride);
  Node n;
  n.kind = OpKind::conv3d;
  n.a = x.id;
  n.b = w.id;
  n.stride = stride;
  n.needs_grad = node(x).needs_grad || node(w).needs_grad;
  n.value = Tensor::zeros(Shape{d.Do, d.Ho, d.Wo, d.Co});
  std::span<const float> px = node(x).value.data(), pw = node(w).value.data();
  std::span<float> po = n.value.mutable_data();
  std::vector<double> acc(static_cast<size_t>(d.Co));
  for (int64_t od = 0; od < d.Do; ++od)
    for (int64_t oh = 0; oh < d.Ho; ++oh)
      for (int64_t ow = 0; ow < d.Wo; ++ow) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int64_t kd = 0; kd < d.k; ++kd) {
          int64_t id = od * d.stride + kd - d.pad;
          if (id < 0 || id >= d.D) continue;
          for (int64_t kh = 0; kh < d.k; ++kh) {
            int64_t ih = oh * d.stride + kh - d.pad;
            if (ih < 0 || ih >= d.H) continue;
            for (int64_t kw = 0; kw < d.k; ++kw) {
              int64_t iw = ow * d.stride + kw - d.pad;
              if (iw < 0 || iw >= d.W) continue;
              const float* xr = &px[((id * d.H + ih) * d.W + iw) * d.Ci];
              const float* wr = &pw[((kd * d.k + kh) * d.k + kw) * d.Ci * d.Co];
              for (int64_t ci = 0; ci < d.Ci; ++ci) {
                const double xv = xr[ci];
                const float* wc = &wr[ci * d.Co];
                for (int64_t co = 0; co < d.Co; ++co) acc[static_cast<size_t>(co)] += xv * wc[co];
              }
            }
          }
        }
        float* orow = &po[((od * d.Ho + oh) * d.Wo + ow) * d.Co];
        for (int64_t co = 0; co < d.Co; ++co) orow[co] = static_cast<float>(acc[static_cast<size_t>(co)]);
      }
  return wrap(push(std::move(n)));
}

Value Graph::leaky_relu(Value x, float slope) {
  check(x, "leaky_relu");
  Node n;
  n.kind = OpKind::leaky_relu;
  n.a = x.id;
  n.scalar_attr = slope;
  n.needs_grad = node(x).needs_grad;
  n.value = Tensor::zeros(x.shape());
  std::span<const float> pi = node(x).value.data();
  std::span<float> po = n.value.mutable_data();
  for (int64_t i = 0; i < n.value.numel(); ++i) po[i] = pi[i] > 0.f ? pi[i] : slope * pi[i];
  return wrap(push(std::move(n)));
}

Value Graph::softplus(Value x) {
  check(x, "softplus");
  Node n;
  n.kind = OpKind::softplus;
  n.a = x.id;
  n.needs_grad = node(x).needs_grad;
  n.value = Tensor::zeros(x.shape());
  std::span<const float> pi = node(x).value.data();
  std::span<float> po = n.value.mutable_data();
  for (int64_t i = 0; i < n.value.numel(); ++i) {
    double v = pi[i];
    po[i] = static_cast<float>(std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))));
  }
  return wrap(push(std::move(n)));
}

Value Graph::clamp01(Value x) {
  check(x, "clamp01");
  Node n;
  n.kind = OpKind::clamp01;
  n.a = x.id;
  n.needs_grad = node(x).needs_grad;
  n.value = Tensor::zeros(x.shape());
  std::span<const float> pi = node(x).value.data();
  std::span<float> po = n.value.mutable_data();
  for (int64_t i = 0; i < n.value.numel(); ++i) po[i] = std::min(1.f, std::max(0.f, pi[i]));
  return wrap(push(std::move(n)));
}

Value Graph::exp(Value x) {
  check(x, "exp");
  Node n;
  n.kind = OpKind::exp;
  n.a = x.id;
  n.needs_grad = node(x).needs_grad;
  n.value = Tensor::zeros(x.shape());
  std::span<const float> pi = node(x).value.data();
  std::span<float> po = n.value.mutable_data();
  for (int64_t i = 0; i < n.value.numel(); ++i) po[i] = std::exp(pi[i]);
  return wrap(push(std::move(n)));
}

Value Graph::log(Value x) {
  check(x, "log");
  Node n;
  n.kind = OpKind::log;
  n.a = x.id;
  n.needs_grad = node(x).needs_grad;
  n.value = Tensor::zeros(x.shape());
  std::span<const float> pi = node(x).value.data();
  std::span<float> po = n.value.mutable_data();
  for (int64_t i = 0; i < n.value.numel(); ++i) po[i] = std::log(pi[i]);
  return wrap(push(std::move(n)));
}

Value Graph::sqrt(Value x) {
  check(x, "sqrt");
  Node n;
  n.kind = OpKind::sqrt;
  n.a = x.id;
  n.needs_grad = node(x).needs_grad;
  n.value = Tensor::zeros(x.shape());
  std::span<const float> pi = node(x).value.data();
  std::span<float> po = n.value.mutable_data();
  for (int64_t i = 0; i < n.value.numel(); ++i) po[i] = std::sqrt(pi[i]);
  return wrap(push(std::move(n)));
}

Value Graph::reciprocal(Value x) {
  check(x, "reciprocal");
  Node n;
  n.kind = OpKind::reciprocal;
  n.a = x.id;
  n.needs_grad = node(x).needs_grad;
  n.value = Tensor::zeros(x.shape());
  std::span<const float> pi = node(x).value.data();
  std::span<float> po = n.value.mutable_data();
  for (int64_t i = 0; i < n.value.numel(); ++i) po[i] = 1.f / pi[i];
  return wrap(push(std::move(n)));
}

Value Graph::normal_cdf(Value x) {
  check(x, "normal_cdf");
  Node n;
  n.kind = OpKind::normal_cdf;
  n.a = x.id;
  n.needs_grad = node(x).needs_grad;
  n.value = Tensor::zeros(x.shape());
  std::span<const float> pi = node(x).value.data();
  std::span<float> po = n.value.mutable_data();
  for (int64_t i = 0; i < n.value.numel(); ++i)
    po[i] = static_cast<float>(0.5 * std::erfc(-static_cast<double>(pi[i]) * kInvSqrt2));
  return wrap(push(std::move(n)));
}

Value Graph::reshape(Value x, Shape s) {
  check(x, "reshape");
  Node n;
  n.kind = OpKind::reshape;
  n.a = x.id;
  n.in_shape = x.shape();
  n.needs_grad = node(x).needs_grad;
  n.value = node(x).value.reshaped(s);  // shares data
  return wrap(push(std::move(n)));
}

namespace {
// merge: forward copies [D,H,W,C] into [D/wd,H/wh,W/ww,C*wd*wh*ww]; the output
// channel index orders the window lexicographically (dz,dy,dx) then c.
void patch_copy(const Shape& grid, const std::array<int, 3>& w, std::span<const float> src,
                std::span<float> dst, bool merge) {
  const int64_t D = grid[0], H = grid[1], W = grid[2], C = grid[3];
  const int64_t wd = w[0], wh = w[1], ww = w[2];
  const int64_t Ho = H / wh, Wo = W / ww;
  int64_t out = 0;
  for (int64_t od = 0; od < D / wd; ++od)
    for (int64_t oh = 0; oh < Ho; ++oh)
      for (int64_t ow = 0; ow < Wo; ++ow)
        for (int64_t dz = 0; dz < wd; ++dz)
          for (int64_t dy = 0; dy < wh; ++dy)
            for (int64_t dx = 0; dx < ww; ++dx) {
              int64_t in = (((od * wd + dz) * H + (oh * wh + dy)) * W + (ow * ww + dx)) * C;
              if (merge)
                std::memcpy(&dst[out], &src[in], static_cast<size_t>(C) * sizeof(float));
              else
                std::memcpy(&dst[in], &src[out], static_cast<size_t>(C) * sizeof(float));
              out += C;
            }
}
}  // namespace

Value Graph::patch_merge(Value x, std::array<int, 3> window) {
  check(x, "patch_merge");
  patch_dims(x.shape(), window, "patch_merge");
  const Shape& s = x.shape();
  Shape out{s[0] / window[0], s[1] / window[1], s[2] / window[2],
            s[3] * window[0] * window[1] * window[2]};
  Node n;
  n.kind = OpKind::patch_merge;
  n.a = x.id;
  n.window = window;
  n.in_shape = s;
  n.needs_grad = node(x).needs_grad;
  n.value = Tensor::zeros(out);
  patch_copy(s, window, node(x).value.data(), n.value.mutable_data(), true);
  return wrap(push(std::move(n)));
}

Value Graph::patch_split(Value x, std::array<int, 3> window) {
  check(x, "patch_split");
  const Shape& s = x.shape();
  if (s.rank() != 4) fail(ErrorKind::shape, "patch_split: input must be [D,H,W,C], got " + s.str());
  const int64_t wvol = static_cast<int64_t>(window[0]) * window[1] * window[2];
  if (s[3] % wvol != 0)
    fail(ErrorKind::shape, "patch_split: channels " + std::to_string(s[3]) +
                               " not divisible by window volume " + std::to_string(wvol));
  Shape out{s[0] * window[0], s[1] * window[1], s[2] * window[2], s[3] / wvol};
  Node n;
  n.kind = OpKind::patch_split;
  n.a = x.id;
  n.window = window;
  n.in_shape = s;
  n.needs_grad = node(x).needs_grad;
  n.value = Tensor::zeros(out);
  patch_copy(out, window, node(x).value.data(), n.value.mutable_data(), false);
  return wrap(push(std::move(n)));
}

Value Graph::reduce_sum(Value x) {
  check(x, "reduce_sum");
  Node n;
  n.kind = OpKind::reduce_sum;
  n.a = x.id;
  n.in_shape = x.shape();
  n.needs_grad = node(x).needs_grad;
  double acc = 0.0;
  for (float v : node(x).value.data()) acc += v;
  n.cached_sum = acc;
  n.value = Tensor::scalar(static_cast<float>(acc));
  return wrap(push(std::move(n)));
}

Value Graph::gather_rows(Value x, std::vector<int64_t> idx) {
  check(x, "gather_rows");
  const Shape& s = x.shape();
  if (s.rank() != 2) fail(ErrorKind::shape, "gather_rows: input must be [N,C], got " + s.str());
  const int64_t N = s[0], C = s[1];
  for (int64_t i : idx)
    if (i < 0 || i >= N) fail(ErrorKind::shape, "gather_rows: index " + std::to_string(i) + " out of [0," + std::to_string(N) + ")");
  Node n;
  n.kind = OpKind::gather_rows;
  n.a = x.id;
  n.in_shape = s;
  n.needs_grad = node(x).needs_grad;
  n.index = std::make_shared<std::vector<int64_t>>(std::move(idx));
  const int64_t M = static_cast<int64_t>(n.index->size());
  n.value = Tensor::zeros(Shape{M, C});
  std::span<const float> px = node(x).value.data();
  std::span<float> po = n.value.mutable_data();
  for (int64_t m = 0; m < M; ++m)
    std::memcpy(&po[m * C], &px[(*n.index)[static_cast<size_t>(m)] * C], static_cast<size_t>(C) * sizeof(float));
  return wrap(push(std::move(n)));
}

GradMap Graph::backward(Value loss) {
  check(loss, "backward");
  if (nodes_.empty()) fail(ErrorKind::shape, "backward: empty graph");
  if (node(loss).value.numel() != 1) fail(ErrorKind::shape, "backward: loss must be scalar, got " + node(loss).value.shape().str());

  std::vector<Tensor> grads(nodes_.size());
  grads[static_cast<size_t>(loss.id)] = Tensor::scalar(1.f);

  auto accum = [&](int id, const Tensor& g) {
    if (id < 0) return;
    Node& tn = nodes_[static_cast<size_t>(id)];
    if (!tn.needs_grad) return;
    Tensor reduced = reduce_to_shape(g, tn.value.shape());
    Tensor& slot = grads[static_cast<size_t>(id)];
    if (!slot.defined()) {
      slot = reduced.clone();
    } else {
      std::span<float> pd = slot.mutable_data();
      std::span<const float> ps = reduced.data();
      for (int64_t i = 0; i < slot.numel(); ++i) pd[i] += ps[i];
    }
  };

  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    Tensor& g = grads[static_cast<size_t>(i)];
    if (!g.defined() || !n.needs_grad || n.kind == OpKind::leaf) {
      if (n.kind != OpKind::leaf) g = Tensor();
      continue;
    }
    const Tensor& gv = g;
    switch (n.kind) {
      case OpKind::add: {
        accum(n.a, gv);
        accum(n.b, gv);
        break;
      }
      case OpKind::mul: {
        const Tensor& av = nodes_[static_cast<size_t>(n.a)].value;
        const Tensor& bv = nodes_[static_cast<size_t>(n.b)].value;
        if (nodes_[static_cast<size_t>(n.a)].needs_grad) {
          Tensor ga = Tensor::zeros(gv.shape());
          broadcast_binary(gv, bv, ga, [](float x, float y) { return x * y; });
          accum(n.a, ga);
        }
        if (nodes_[static_cast<size_t>(n.b)].needs_grad) {
          Tensor gb = Tensor::zeros(gv.shape());
          broadcast_binary(gv, av, gb, [](float x, float y) { return x * y; });
          accum(n.b, gb);
        }
        break;
      }
      case OpKind::matmul: {
        const Tensor& A = nodes_[static_cast<size_t>(n.a)].value;
        const Tensor& B = nodes_[static_cast<size_t>(n.b)].value;
        const int64_t M = A.shape()[0], K = A.shape()[1], N = B.shape()[1];
        std::span<const float> pg = gv.data(), pA = A.data(), pB = B.data();
        if (nodes_[static_cast<size_t>(n.a)].needs_grad) {
          Tensor ga = Tensor::zeros(A.shape());
          std::span<float> pa = ga.mutable_data();
          for (int64_t m = 0; m < M; ++m)
            for (int64_t k = 0; k < K; ++k) {
              double acc = 0.0;
              const float* gr = &pg[m * N];
              const float* br = &pB[k * N];
              for (int64_t j = 0; j < N; ++j) acc += static_cast<double>(gr[j]) * br[j];
              pa[m * K + k] = static_cast<float>(acc);
            }
          accum(n.a, ga);
        }
        if (nodes_[static_cast<size_t>(n.b)].needs_grad) {
          Tensor gb = Tensor::zeros(B.shape());
          std::span<float> pb = gb.mutable_data();
          std::vector<double> row(static_cast<size_t>(N));
          for (int64_t k = 0; k < K; ++k) {
            std::fill(row.begin(), row.end(), 0.0);
            for (int64_t m = 0; m < M; ++m) {
              const double av = pA[m * K + k];
              const float* gr = &pg[m * N];
              for (int64_t j = 0; j < N; ++j) row[static_cast<size_t>(j)] += av * gr[j];
            }
            for (int64_t j = 0; j < N; ++j) pb[k * N + j] = static_cast<float>(row[static_cast<size_t>(j)]);
          }
          accum(n.b, gb);
        }
        break;
      }
      case OpKind::conv3d: {
        const Tensor& X = nodes_[static_cast<size_t>(n.a)].value;
        const Tensor& Wt = nodes_[static_cast<size_t>(n.b)].value;
        ConvDims d = conv_dims(X.shape(), Wt.shape(), n.stride);
        std::span<const float> pg = gv.data(), px = X.data(), pw = Wt.data();
        const bool need_x = nodes_[static_cast<size_t>(n.a)].needs_grad;
        const bool need_w = nodes_[static_cast<size_t>(n.b)].needs_grad;
        Tensor gx = need_x ? Tensor::zeros(X.shape()) : Tensor();
        Tensor gw = need_w ? Tensor::zeros(Wt.shape()) : Tensor();
        std::span<float> pgx = need_x ? gx.mutable_data() : std::span<float>();
        std::span<float> pgw = need_w ? gw.mutable_data() : std::span<float>();
        for (int64_t od = 0; od < d.Do; ++od)
          for (int64_t oh = 0; oh < d.Ho; ++oh)
            for (int64_t ow = 0; ow < d.Wo; ++ow) {
              const float* grow = &pg[((od * d.Ho + oh) * d.Wo + ow) * d.Co];
              for (int64_t kd = 0; kd < d.k; ++kd) {
                int64_t id = od * d.stride + kd - d.pad;
                if (id < 0 || id >= d.D) continue;
                for (int64_t kh = 0; kh < d.k; ++kh) {
                  int64_t ih = oh * d.stride + kh - d.pad;
                  if (ih < 0 || ih >= d.H) continue;
                  for (int64_t kw = 0; kw < d.k; ++kw) {
                    int64_t iw = ow * d.stride + kw - d.pad;
                    if (iw < 0 || iw >= d.W) continue;
                    const int64_t xoff = ((id * d.H + ih) * d.W + iw) * d.Ci;
                    const int64_t woff = ((kd * d.k + kh) * d.k + kw) * d.Ci * d.Co;
                    for (int64_t ci = 0; ci < d.Ci; ++ci) {
                      const float* wc = &pw[woff + ci * d.Co];
                      if (need_x) {
                        double acc = 0.0;
                        for (int64_t co = 0; co < d.Co; ++co) acc += static_cast<double>(grow[co]) * wc[co];
                        pgx[xoff + ci] += static_cast<float>(acc);
                      }
                      if (need_w) {
                        const float xv = px[xoff + ci];
                        float* gwc = &pgw[woff + ci * d.Co];
                        for (int64_t co = 0; co < d.Co; ++co) gwc[co] += xv * grow[co];
                      }
                    }
                  }
                }
              }
            }
        if (need_x) accum(n.a, gx);
        if (need_w) accum(n.b, gw);
        break;
      }
      case OpKind::leaky_relu: {
        const Tensor& X = nodes_[static_cast<size_t>(n.a)].value;
        Tensor gx = Tensor::zeros(X.shape());
        std::span<const float> px = X.data(), pg = gv.data();
        std::span<float> pgx = gx.mutable_data();
        for (int64_t j = 0; j < X.numel(); ++j) pgx[j] = px[j] > 0.f ? pg[j] : n.scalar_attr * pg[j];
        accum(n.a, gx);
        break;
      }
      case OpKind::softplus: {
        const Tensor& X = nodes_[static_cast<size_t>(n.a)].value;
        Tensor gx = Tensor::zeros(X.shape());
        std::span<const float> px = X.data(), pg = gv.data();
        std::span<float> pgx = gx.mutable_data();
        for (int64_t j = 0; j < X.numel(); ++j) {
          double s = 1.0 / (1.0 + std::exp(-static_cast<double>(px[j])));
          pgx[j] = static_cast<float>(s * pg[j]);
        }
        accum(n.a, gx);
        break;
      }
      case OpKind::clamp01: {
        const Tensor& X = nodes_[static_cast<size_t>(n.a)].value;
        Tensor gx = Tensor::zeros(X.shape());
        std::span<const float> px = X.data(), pg = gv.data();
        std::span<float> pgx = gx.mutable_data();
        for (int64_t j = 0; j < X.numel(); ++j) pgx[j] = (px[j] >= 0.f && px[j] <= 1.f) ? pg[j] : 0.f;
        accum(n.a, gx);
        break;
      }
      case OpKind::exp: {
        Tensor gx = Tensor::zeros(n.value.shape());
        std::span<const float> py = n.value.data(), pg = gv.data();
        std::span<float> pgx = gx.mutable_data();
        for (int64_t j = 0; j < n.value.numel(); ++j) pgx[j] = py[j] * pg[j];
        accum(n.a, gx);
        break;
      }
      case OpKind::log: {
        const Tensor& X = nodes_[static_cast<size_t>(n.a)].value;
        Tensor gx = Tensor::zeros(X.shape());
        std::span<const float> px = X.data(), pg = gv.data();
        std::span<float> pgx = gx.mutable_data();
        for (int64_t j = 0; j < X.numel(); ++j) pgx[j] = pg[j] / px[j];
        accum(n.a, gx);
        break;
      }
      case OpKind::sqrt: {
        Tensor gx = Tensor::zeros(n.value.shape());
        std::span<const float> py = n.value.data(), pg = gv.data();
        std::span<float> pgx = gx.mutable_data();
        for (int64_t j = 0; j < n.value.numel(); ++j) pgx[j] = 0.5f * pg[j] / py[j];
        accum(n.a, gx);
        break;
      }
      case OpKind::reciprocal: {
        Tensor gx = Tensor::zeros(n.value.shape());
        std::span<const float> py = n.value.data(), pg = gv.data();
        std::span<float> pgx = gx.mutable_data();
        for (int64_t j = 0; j < n.value.numel(); ++j) pgx[j] = -py[j] * py[j] * pg[j];
        accum(n.a, gx);
        break;
      }
      case OpKind::normal_cdf: {
        const Tensor& X = nodes_[static_cast<size_t>(n.a)].value;
        Tensor gx = Tensor::zeros(X.shape());
        std::span<const float> px = X.data(), pg = gv.data();
        std::span<float> pgx = gx.mutable_data();
        for (int64_t j = 0; j < X.numel(); ++j) {
          double x = px[j];
          pgx[j] = static_cast<float>(kInvSqrt2Pi * std::exp(-0.5 * x * x) * pg[j]);
        }
        accum(n.a, gx);
        break;
      }
      case OpKind::reshape: {
        accum(n.a, gv.reshaped(n.in_shape));
        break;
      }
      case OpKind::patch_merge: {
        Tensor gx = Tensor::zeros(n.in_shape);
        patch_copy(n.in_shape, n.window, gv.data(), gx.mutable_data(), false);
        accum(n.a, gx);
        break;
      }
      case OpKind::patch_split: {
        Tensor gx = Tensor::zeros(n.in_shape);
        patch_copy(n.value.shape(), n.window, gv.data(), gx.mutable_data(), true);
        accum(n.a, gx);
        break;
      }
      case OpKind::reduce_sum: {
        accum(n.a, Tensor::full(n.in_shape, gv.data()[0]));
        break;
      }
      case OpKind::gather_rows: {
        Tensor gx = Tensor::zeros(n.in_shape);
        const int64_t C = n.in_shape[1];
        std::span<const float> pg = gv.data();
        std::span<float> pgx = gx.mutable_data();
        const auto& idx = *n.index;
        for (size_t m = 0; m < idx.size(); ++m) {
          float* dst = &pgx[idx[m] * C];
          const float* src = &pg[static_cast<int64_t>(m) * C];
          for (int64_t c = 0; c < C; ++c) dst[c] += src[c];
        }
        accum(n.a, gx);
        break;
      }
      case OpKind::leaf:
        break;
    }
    g = Tensor();  // free as we go
  }

  GradMap out;
  for (int id : param_ids_) {
    if (id > loss.id) continue;
    Tensor& g = grads[static_cast<size_t>(id)];
    if (!g.defined()) g = Tensor::zeros(nodes_[static_cast<size_t>(id)].value.shape());
    out.emplace(id, std::move(g));
  }
  return out;
}

Value forward_op(Graph& g, OpKind kind, std::span<const Value> in, const OpAttrs& attrs) {
  switch (kind) {
    case OpKind::add: return g.add(in[0], in[1]);
    case OpKind::mul: return g.mul(in[0], in[1]);
    case OpKind::matmul: return g.matmul(in[0], in[1]);
    case OpKind::conv3d: return g.conv3d(in[0], in[1], attrs.stride);
    case OpKind::leaky_relu: return g.leaky_relu(in[0], attrs.slope);
    case OpKind::softplus: return g.softplus(in[0]);
    case OpKind::clamp01: return g.clamp01(in[0]);
    case OpKind::exp: return g.exp(in[0]);
    case OpKind::log: return g.log(in[0]);
    case OpKind::sqrt: return g.sqrt(in[0]);
    case OpKind::reciprocal: return g.reciprocal(in[0]);
    case OpKind::normal_cdf: return g.normal_cdf(in[0]);
    case OpKind::reshape: return g.reshape(in[0], attrs.reshape_to);
    case OpKind::patch_merge: return g.patch_merge(in[0], attrs.window);
    case OpKind::patch_split: return g.patch_split(in[0], attrs.window);
    case OpKind::reduce_sum: return g.reduce_sum(in[0]);
    case OpKind::gather_rows: return g.gather_rows(in[0], attrs.indices);
    case OpKind::leaf: break;
  }
  fail(ErrorKind::shape, "forward_op: unsupported kind");
}

}  // namespace voxelcom
