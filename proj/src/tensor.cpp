#include "voxelcom/tensor.hpp"

#include <cmath>
#include <sstream>

namespace voxelcom {

void Shape::push(int64_t d) {
  if (rank_ >= kMaxRank) fail(ErrorKind::shape, "shape: more than " + std::to_string(kMaxRank) + " axes");
  if (d <= 0) fail(ErrorKind::shape, "shape: nonpositive extent " + std::to_string(d));
  dims_[static_cast<size_t>(rank_++)] = d;
}

int64_t Shape::numel() const {
  int64_t n = 1;
  for (int i = 0; i < rank_; ++i) n *= dims_[static_cast<size_t>(i)];
  return n;
}

bool Shape::operator==(const Shape& o) const {
  if (rank_ != o.rank_) return false;
  for (int i = 0; i < rank_; ++i)
    if (dims_[static_cast<size_t>(i)] != o.dims_[static_cast<size_t>(i)]) return false;
  return true;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (int i = 0; i < rank_; ++i) {
    if (i) os << ',';
    os << dims_[static_cast<size_t>(i)];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape s) {
  Tensor t;
  t.shape_ = s;
  t.data_ = std::make_shared<std::vector<float>>(static_cast<size_t>(s.numel()), 0.f);
  return t;
}

Tensor Tensor::full(Shape s, float value) {
  Tensor t = zeros(s);
  for (float& v : *t.data_) v = value;
  return t;
}

Tensor Tensor::from(Shape s, std::vector<float> values) {
  if (static_cast<int64_t>(values.size()) != s.numel())
    fail(ErrorKind::shape, "tensor: " + std::to_string(values.size()) + " values for shape " + s.str());
  Tensor t;
  t.shape_ = s;
  t.data_ = std::make_shared<std::vector<float>>(std::move(values));
  return t;
}

std::span<float> Tensor::mutable_data() {
  if (!data_) fail(ErrorKind::shape, "tensor: undefined");
  if (data_.use_count() > 1) data_ = std::make_shared<std::vector<float>>(*data_);
  return {data_->data(), data_->size()};
}

float Tensor::item() const {
  if (numel() != 1) fail(ErrorKind::shape, "tensor: item() on shape " + shape_.str());
  return (*data_)[0];
}

bool Tensor::all_finite() const {
  for (float v : *data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::reshaped(Shape s) const {
  if (s.numel() != numel())
    fail(ErrorKind::shape, "reshape: " + shape_.str() + " -> " + s.str() + " changes element count");
  Tensor t = *this;
  t.shape_ = s;
  return t;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = std::make_shared<std::vector<float>>(*data_);
  t.requires_grad_ = requires_grad_;
  return t;
}

}  // namespace voxelcom
