#include "core/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "core/error.hpp"

namespace st {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (int d : shape_) {
    if (d <= 0) throw Error::numeric("tensor dimension must be positive, got " + shape_str(shape_));
  }
  data_.assign(static_cast<size_t>(numel(shape_)), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (int d : shape_) {
    if (d <= 0) throw Error::numeric("tensor dimension must be positive, got " + shape_str(shape_));
  }
  if (numel(shape_) != static_cast<int64_t>(data_.size())) {
    throw Error::numeric("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::scalar(float v) { return Tensor(Shape{}, std::vector<float>{v}); }

Tensor Tensor::full(Shape shape, float v) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = v;
  return t;
}

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool Tensor::bit_equal(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  return std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
}

Tensor rows_slice(const Tensor& t, int lo, int hi) {
  if (t.rank() < 1 || lo < 0 || hi > t.dim(0) || lo >= hi)
    throw Error::numeric("rows_slice: bad range [" + std::to_string(lo) + "," +
                         std::to_string(hi) + ") for " + shape_str(t.shape()));
  const int64_t per = t.size() / t.dim(0);
  Shape s = t.shape();
  s[0] = hi - lo;
  std::vector<float> data(t.data() + lo * per, t.data() + hi * per);
  return Tensor(std::move(s), std::move(data));
}

}  // namespace st
