#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "snpx/rng.hpp"
#include "snpx/tensor.hpp"

namespace snpx {

// One learnable tensor plus its gradient accumulator and Adam moments.
struct Param {
  Tensor value;
  Tensor grad;
  Tensor m;
  Tensor v;
};

// Named parameter collection. Backed by std::map so every iteration over
// parameters (updates, checkpointing, copying) happens in one fixed order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, std::vector<int> shape);
  bool has(const std::string& name) const { return params_.count(name) > 0; }
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;

  // Weight init: uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]; biases stay 0.
  Tensor& add_dense(const std::string& prefix, int in_dim, int out_dim, Rng& rng);
  Tensor& add_conv(const std::string& prefix, int cin, int cout, int k, Rng& rng);

  void zero_grads();

  // Adam with beta1=0.9, beta2=0.999, eps=1e-8 on the accumulated gradients.
  void adam_step(float lr);

  // Copies parameter values (not moments, not step count) from `other`.
  // Shapes and names must match exactly.
  void copy_values_from(const ParamStore& other);

  int64_t step_count() const { return step_; }
  void set_step_count(int64_t s) { step_ = s; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  size_t size() const { return params_.size(); }

  int64_t total_elements() const;

 private:
  std::map<std::string, Param> params_;
  int64_t step_ = 0;
};

}  // namespace snpx
