#include "snpx/params.hpp"

#include <cmath>
#include <stdexcept>

namespace snpx {

Tensor& ParamStore::add(const std::string& name, std::vector<int> shape) {
  if (has(name)) throw std::invalid_argument("param already exists: " + name);
  Param p;
  p.value = Tensor(shape);
  p.grad = Tensor(shape);
  p.m = Tensor(shape);
  p.v = Tensor(std::move(shape));
  return params_.emplace(name, std::move(p)).first->second.value;
}

Param& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no such param: " + name);
  return it->second;
}

const Param& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no such param: " + name);
  return it->second;
}

Tensor& ParamStore::add_dense(const std::string& prefix, int in_dim, int out_dim,
                              Rng& rng) {
  Tensor& w = add(prefix + ".w", {out_dim, in_dim});
  const float bound = 1.0f / std::sqrt(static_cast<float>(in_dim));
  for (int64_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
  add(prefix + ".b", {out_dim});
  return w;
}

Tensor& ParamStore::add_conv(const std::string& prefix, int cin, int cout, int k,
                             Rng& rng) {
  Tensor& w = add(prefix + ".w", {cout, cin, k, k});
  const float bound = 1.0f / std::sqrt(static_cast<float>(cin * k * k));
  for (int64_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
  add(prefix + ".b", {cout});
  return w;
}

void ParamStore::zero_grads() {
  for (auto& [name, p] : params_) p.grad.fill(0.0f);
}

void ParamStore::adam_step(float lr) {
  constexpr float kBeta1 = 0.9f, kBeta2 = 0.999f, kEps = 1e-8f;
  ++step_;
  const float c1 = 1.0f - std::pow(kBeta1, static_cast<float>(step_));
  const float c2 = 1.0f - std::pow(kBeta2, static_cast<float>(step_));
  for (auto& [name, p] : params_) {
    for (int64_t i = 0; i < p.value.size(); ++i) {
      const float g = p.grad[i];
      p.m[i] = kBeta1 * p.m[i] + (1.0f - kBeta1) * g;
      p.v[i] = kBeta2 * p.v[i] + (1.0f - kBeta2) * g * g;
      const float mhat = p.m[i] / c1;
      const float vhat = p.v[i] / c2;
      p.value[i] -= lr * mhat / (std::sqrt(vhat) + kEps);
    }
  }
}

void ParamStore::copy_values_from(const ParamStore& other) {
  if (other.params_.size() != params_.size()) {
    throw std::invalid_argument("param store layout mismatch");
  }
  auto it = params_.begin();
  auto ot = other.params_.begin();
  for (; it != params_.end(); ++it, ++ot) {
    if (it->first != ot->first || !it->second.value.same_shape(ot->second.value)) {
      throw std::invalid_argument("param store layout mismatch at " + it->first);
    }
    it->second.value = ot->second.value;
  }
}

int64_t ParamStore::total_elements() const {
  int64_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.size();
  return n;
}

}  // namespace snpx
