#include "gptgnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "gptgnn/errors.hpp"

namespace gptgnn {

namespace {

std::size_t checked_size(const std::vector<int>& shape) {
  if (shape.empty() || shape.size() > 3) throw ShapeError("tensor rank must be 1..3, got " + shape_string(shape));
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape, float fill) : shape_(std::move(shape)) {
  data_.assign(checked_size(shape_), fill);
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_size(shape_) != data_.size())
    throw ShapeError("buffer of " + std::to_string(data_.size()) + " values for shape " + shape_string(shape_));
}

Tensor Tensor::identity(int n) {
  Tensor t = matrix(n, n);
  for (int i = 0; i < n; ++i) t(i, i) = 1.0f;
  return t;
}

int Tensor::rows() const {
  if (shape_.size() == 1) return 1;
  if (shape_.size() == 2) return shape_[0];
  if (shape_.size() == 3) return shape_[0] * shape_[1];
  return 0;
}

int Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

float Tensor::item() const {
  if (data_.size() != 1) throw NotScalar("tensor of shape " + shape_string(shape_) + " is not a scalar");
  return data_[0];
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

std::string shape_string(const std::vector<int>& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
  return s.empty() ? "()" : s;
}

}  // namespace gptgnn
