#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace st {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;
// Copy of rows [lo, hi) along the leading axis.
Tensor rows_slice(const Tensor& t, int lo, int hi);

// Dense row-major float32 array. Rank 0 (empty shape) is a scalar holding
// one element. Immutable use is the norm: operations return fresh tensors.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<float> data);

  static Tensor scalar(float v);
  static Tensor full(Shape shape, float v);

  const Shape& shape() const { return shape_; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty() && shape_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  int dim(int axis) const { return shape_[static_cast<size_t>(axis)]; }
  int rank() const { return static_cast<int>(shape_.size()); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  // Exact bitwise comparison (shape + payload).
  bool bit_equal(const Tensor& other) const;

  const std::vector<float>& vec() const { return data_; }

 private:
  Shape shape_;
  std::vector<float> data_;
};

}  // namespace st
