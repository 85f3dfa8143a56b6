#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace gptgnn {

/// Dense row-major float tensor of rank 1 to 3. Most of the library works on
/// rank-2 matrices; rank-1 tensors behave as a single row.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, float fill = 0.0f);
  Tensor(std::vector<int> shape, std::vector<float> data);

  static Tensor matrix(int rows, int cols, float fill = 0.0f) { return Tensor({rows, cols}, fill); }
  static Tensor matrix(int rows, int cols, std::vector<float> data) {
    return Tensor({rows, cols}, std::move(data));
  }
  static Tensor scalar(float v) { return Tensor({1, 1}, std::vector<float>{v}); }
  static Tensor identity(int n);

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  int rows() const;
  int cols() const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  std::span<float> row(int r) { return {data_.data() + static_cast<std::size_t>(r) * cols(), static_cast<std::size_t>(cols())}; }
  std::span<const float> row(int r) const {
    return {data_.data() + static_cast<std::size_t>(r) * cols(), static_cast<std::size_t>(cols())};
  }

  float& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols() + c]; }
  float operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols() + c]; }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  float item() const;
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  void fill(float v);
  bool all_finite() const;

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<int> shape_;
  std::vector<float> data_;
};

std::string shape_string(const std::vector<int>& shape);

}  // namespace gptgnn
