#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxelcom {

// Error taxonomy mapped to CLI exit codes (see commands.cpp).
enum class ErrorKind { config = 2, prerequisite = 3, numeric = 4, shape = 4, io = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

// Shape of a dense row-major tensor, at most 5 axes.
class Shape {
 public:
  static constexpr int kMaxRank = 5;

  Shape() = default;
  Shape(std::initializer_list<int64_t> dims) : rank_(0) {
    for (int64_t d : dims) push(d);
  }
  explicit Shape(std::span<const int64_t> dims) {
    for (int64_t d : dims) push(d);
  }

  void push(int64_t d);
  int rank() const { return rank_; }
  int64_t operator[](int i) const { return dims_[static_cast<size_t>(i)]; }
  int64_t numel() const;
  bool operator==(const Shape& o) const;
  bool operator!=(const Shape& o) const { return !(*this == o); }
  std::string str() const;

 private:
  std::array<int64_t, kMaxRank> dims_{};
  int rank_ = 0;
};

// Dense f32 tensor, row-major. Data is shared and treated as immutable once a
// tensor has been handed to a Graph; mutate only through the optimizer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, float value);
  static Tensor from(Shape s, std::vector<float> values);
  static Tensor scalar(float value) { return from(Shape{1}, {value}); }

  const Shape& shape() const { return shape_; }
  int64_t numel() const { return shape_.numel(); }
  bool defined() const { return data_ != nullptr; }

  std::span<const float> data() const { return {data_->data(), data_->size()}; }
  // Unshared write access; used by the optimizer and by loaders.
  std::span<float> mutable_data();

  float item() const;
  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool v) {
    requires_grad_ = v;
    return *this;
  }

  bool all_finite() const;
  Tensor reshaped(Shape s) const;  // shares data
  Tensor clone() const;

 private:
  Shape shape_;
  std::shared_ptr<std::vector<float>> data_;
  bool requires_grad_ = false;
};

}  // namespace voxelcom
