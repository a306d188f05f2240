#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace snpx {

// Dense row-major float tensor. Rank is dynamic; all numeric state in the
// project flows through this one type.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<float> data);
  Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, float v);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // 2-d and 3-d indexed access (row-major). Bounds are the caller's problem.
  float& at(int i, int j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  float at(int i, int j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  float& at(int c, int i, int j) {
    return data_[static_cast<size_t>((c * shape_[1] + i) * shape_[2] + j)];
  }
  float at(int c, int i, int j) const {
    return data_[static_cast<size_t>((c * shape_[1] + i) * shape_[2] + j)];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  void fill(float v);
  bool all_finite() const;

  // Throws std::runtime_error naming `what` if any element is NaN/inf.
  void check_finite(const std::string& what) const;

  std::string shape_str() const;

 private:
  std::vector<int> shape_;
  std::vector<float> data_;
};

int64_t shape_numel(const std::vector<int>& shape);

}  // namespace snpx
