#include "snpx/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "snpx/kernels.hpp"

namespace snpx {

namespace {

// Stable softmax into `p` (resized by caller to match z).
void softmax_into(const float* z, float* p, int n) {
  float m = z[0];
  for (int i = 1; i < n; ++i) m = std::max(m, z[i]);
  float sum = 0.0f;
  for (int i = 0; i < n; ++i) {
    p[i] = std::exp(z[i] - m);
    sum += p[i];
  }
  for (int i = 0; i < n; ++i) p[i] /= sum;
}

float log_sum_exp(const float* z, int n) {
  float m = z[0];
  for (int i = 1; i < n; ++i) m = std::max(m, z[i]);
  float sum = 0.0f;
  for (int i = 0; i < n; ++i) sum += std::exp(z[i] - m);
  return m + std::log(sum);
}

}  // namespace

void Tape::check_id(int id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size())) {
    throw std::invalid_argument("tape: bad node id");
  }
}

const Tensor& Tape::val_of(int id) const {
  const Node& n = nodes_[static_cast<size_t>(id)];
  return n.vptr ? *n.vptr : n.val;
}

Tensor& Tape::grad_of(int id) { return nodes_[static_cast<size_t>(id)].grd; }

const Tensor& Tape::value(int id) const {
  check_id(id);
  return val_of(id);
}

const Tensor& Tape::grad(int id) const {
  check_id(id);
  return nodes_[static_cast<size_t>(id)].grd;
}

int Tape::make_node(std::vector<int> shape) {
  Node n;
  n.val = Tensor(shape);
  n.grd = Tensor(std::move(shape));
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::input(const Tensor& t) {
  Node n;
  n.val = t;
  n.grd = Tensor(t.shape());
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::param(const Tensor& external) {
  Node n;
  n.vptr = &external;
  n.grd = Tensor(external.shape());
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::dense(int x, int w, int b) {
  check_id(x);
  check_id(w);
  check_id(b);
  const Tensor& xv = val_of(x);
  const Tensor& wv = val_of(w);
  const Tensor& bv = val_of(b);
  if (wv.rank() != 2) throw std::invalid_argument("dense: weight must be rank 2");
  const int out_dim = wv.dim(0), in_dim = wv.dim(1);
  if (xv.size() != in_dim) {
    throw std::invalid_argument("dense: input size " + xv.shape_str() +
                                " does not match weight " + wv.shape_str());
  }
  if (bv.size() != out_dim) throw std::invalid_argument("dense: bias size mismatch");
  const int out = make_node({out_dim});
  kernels::dense_forward(xv.data(), wv.data(), bv.data(),
                         nodes_.back().val.data(), in_dim, out_dim);
  ops_.push_back({OpKind::Dense, x, w, b, out, 0, 0, 0, 0, 0});
  return out;
}

int Tape::conv2d(int x, int w, int b, int stride, int pad) {
  check_id(x);
  check_id(w);
  check_id(b);
  const Tensor& xv = val_of(x);
  const Tensor& wv = val_of(w);
  const Tensor& bv = val_of(b);
  if (xv.rank() != 3) throw std::invalid_argument("conv2d: input must be [c,h,w]");
  if (wv.rank() != 4 || wv.dim(2) != wv.dim(3)) {
    throw std::invalid_argument("conv2d: weight must be [cout,cin,k,k]");
  }
  if (wv.dim(1) != xv.dim(0)) throw std::invalid_argument("conv2d: channel mismatch");
  const int cout = wv.dim(0), k = wv.dim(2);
  if (bv.size() != cout) throw std::invalid_argument("conv2d: bias size mismatch");
  const int ho = kernels::conv_out_dim(xv.dim(1), k, stride, pad);
  const int wo = kernels::conv_out_dim(xv.dim(2), k, stride, pad);
  const int out = make_node({cout, ho, wo});
  kernels::conv2d_forward(xv.data(), wv.data(), bv.data(), nodes_.back().val.data(),
                          xv.dim(0), xv.dim(1), xv.dim(2), cout, k, stride, pad);
  ops_.push_back({OpKind::Conv2d, x, w, b, out, stride, pad, 0, 0, 0});
  return out;
}

int Tape::relu(int x) {
  check_id(x);
  const Tensor& xv = val_of(x);
  const int out = make_node(xv.shape());
  Tensor& y = nodes_.back().val;
  for (int64_t i = 0; i < xv.size(); ++i) y[i] = xv[i] > 0.0f ? xv[i] : 0.0f;
  ops_.push_back({OpKind::Relu, x, -1, -1, out, 0, 0, 0, 0, 0});
  return out;
}

int Tape::softmax(int x) {
  check_id(x);
  const Tensor& xv = val_of(x);
  if (xv.rank() != 1) throw std::invalid_argument("softmax: input must be rank 1");
  const int out = make_node(xv.shape());
  softmax_into(xv.data(), nodes_.back().val.data(), static_cast<int>(xv.size()));
  ops_.push_back({OpKind::Softmax, x, -1, -1, out, 0, 0, 0, 0, 0});
  return out;
}

int Tape::reshape(int x, std::vector<int> new_shape) {
  check_id(x);
  const Tensor& xv = val_of(x);
  if (shape_numel(new_shape) != xv.size()) {
    throw std::invalid_argument("reshape: element count mismatch");
  }
  const int out = make_node(std::move(new_shape));
  std::copy(xv.data(), xv.data() + xv.size(), nodes_.back().val.data());
  ops_.push_back({OpKind::Reshape, x, -1, -1, out, 0, 0, 0, 0, 0});
  return out;
}

int Tape::flatten(int x) {
  check_id(x);
  return reshape(x, {static_cast<int>(val_of(x).size())});
}

int Tape::upsample2x(int x) {
  check_id(x);
  const Tensor& xv = val_of(x);
  if (xv.rank() != 3) throw std::invalid_argument("upsample2x: input must be [c,h,w]");
  const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  const int out = make_node({c, 2 * h, 2 * w});
  Tensor& y = nodes_.back().val;
  for (int ci = 0; ci < c; ++ci) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const float v = xv.at(ci, i, j);
        y.at(ci, 2 * i, 2 * j) = v;
        y.at(ci, 2 * i, 2 * j + 1) = v;
        y.at(ci, 2 * i + 1, 2 * j) = v;
        y.at(ci, 2 * i + 1, 2 * j + 1) = v;
      }
    }
  }
  ops_.push_back({OpKind::Upsample2x, x, -1, -1, out, 0, 0, 0, 0, 0});
  return out;
}

int Tape::concat(int x, int y) {
  check_id(x);
  check_id(y);
  const Tensor& xv = val_of(x);
  const Tensor& yv = val_of(y);
  if (xv.rank() != 1 || yv.rank() != 1) {
    throw std::invalid_argument("concat: both inputs must be rank 1");
  }
  const int nx = static_cast<int>(xv.size()), ny = static_cast<int>(yv.size());
  const int out = make_node({nx + ny});
  Tensor& o = nodes_.back().val;
  std::copy(xv.data(), xv.data() + nx, o.data());
  std::copy(yv.data(), yv.data() + ny, o.data() + nx);
  ops_.push_back({OpKind::Concat, x, y, -1, out, 0, 0, 0, 0, 0});
  return out;
}

int Tape::pick(int x, int index) {
  check_id(x);
  const Tensor& xv = val_of(x);
  if (xv.rank() != 1) throw std::invalid_argument("pick: input must be rank 1");
  if (index < 0 || index >= xv.size()) throw std::invalid_argument("pick: index out of range");
  const int out = make_node({1});
  nodes_.back().val[0] = xv[index];
  ops_.push_back({OpKind::Pick, x, -1, -1, out, index, 0, 0, 0, 0});
  return out;
}

int Tape::add(int x, int y) {
  check_id(x);
  check_id(y);
  const Tensor& xv = val_of(x);
  const Tensor& yv = val_of(y);
  if (!xv.same_shape(yv)) throw std::invalid_argument("add: shape mismatch");
  const int out = make_node(xv.shape());
  Tensor& o = nodes_.back().val;
  for (int64_t i = 0; i < xv.size(); ++i) o[i] = xv[i] + yv[i];
  ops_.push_back({OpKind::Add, x, y, -1, out, 0, 0, 0, 0, 0});
  return out;
}

int Tape::scale(int x, float s) {
  check_id(x);
  const Tensor& xv = val_of(x);
  const int out = make_node(xv.shape());
  Tensor& o = nodes_.back().val;
  for (int64_t i = 0; i < xv.size(); ++i) o[i] = s * xv[i];
  ops_.push_back({OpKind::Scale, x, -1, -1, out, 0, 0, s, 0, 0});
  return out;
}

int Tape::cross_entropy(int logits, int target_dist) {
  check_id(logits);
  check_id(target_dist);
  const Tensor& zv = val_of(logits);
  const Tensor& tv = val_of(target_dist);
  if (zv.rank() != 1 || !zv.same_shape(tv)) {
    throw std::invalid_argument("cross_entropy: logits/target shape mismatch");
  }
  float tsum = 0.0f;
  for (int64_t i = 0; i < tv.size(); ++i) {
    if (tv[i] < -1e-6f) throw std::invalid_argument("cross_entropy: negative target mass");
    tsum += tv[i];
  }
  if (std::abs(tsum - 1.0f) > 1e-4f) {
    throw std::invalid_argument("cross_entropy: target must sum to 1");
  }
  const int n = static_cast<int>(zv.size());
  const float lse = log_sum_exp(zv.data(), n);
  float dot = 0.0f;
  for (int i = 0; i < n; ++i) dot += tv[i] * zv[i];
  const int out = make_node({1});
  nodes_.back().val[0] = lse - dot;
  ops_.push_back({OpKind::CrossEntropy, logits, target_dist, -1, out, 0, 0, 0, 0, 0});
  return out;
}

int Tape::huber(int pred, int target, float delta) {
  check_id(pred);
  check_id(target);
  const Tensor& pv = val_of(pred);
  const Tensor& tv = val_of(target);
  if (!pv.same_shape(tv)) throw std::invalid_argument("huber: shape mismatch");
  if (delta <= 0.0f) throw std::invalid_argument("huber: delta must be positive");
  const int64_t n = pv.size();
  float acc = 0.0f;
  for (int64_t i = 0; i < n; ++i) {
    const float e = pv[i] - tv[i];
    const float ae = std::abs(e);
    acc += ae <= delta ? 0.5f * e * e : delta * (ae - 0.5f * delta);
  }
  const int out = make_node({1});
  nodes_.back().val[0] = acc / static_cast<float>(n);
  ops_.push_back({OpKind::Huber, pred, target, -1, out, 0, 0, delta, 0, 0});
  return out;
}

int Tape::l2_loss(int pred, int target) {
  check_id(pred);
  check_id(target);
  const Tensor& pv = val_of(pred);
  const Tensor& tv = val_of(target);
  if (!pv.same_shape(tv)) throw std::invalid_argument("l2_loss: shape mismatch");
  const int64_t n = pv.size();
  float acc = 0.0f;
  for (int64_t i = 0; i < n; ++i) {
    const float e = pv[i] - tv[i];
    acc += e * e;
  }
  const int out = make_node({1});
  nodes_.back().val[0] = 0.5f * acc / static_cast<float>(n);
  ops_.push_back({OpKind::L2Loss, pred, target, -1, out, 0, 0, 0, 0, 0});
  return out;
}

int Tape::ppo_clip(int logits, int action, float old_logp, float advantage, float alpha) {
  check_id(logits);
  const Tensor& zv = val_of(logits);
  if (zv.rank() != 1) throw std::invalid_argument("ppo_clip: logits must be rank 1");
  const int n = static_cast<int>(zv.size());
  if (action < 0 || action >= n) throw std::invalid_argument("ppo_clip: action out of range");
  if (alpha <= 0.0f) throw std::invalid_argument("ppo_clip: alpha must be positive");
  const float logp = zv[action] - log_sum_exp(zv.data(), n);
  const float ratio = std::exp(logp - old_logp);
  const float clipped = std::clamp(ratio, 1.0f - alpha, 1.0f + alpha);
  const int out = make_node({1});
  nodes_.back().val[0] = -std::min(ratio * advantage, clipped * advantage);
  ops_.push_back(
      {OpKind::PpoClip, logits, -1, -1, out, action, 0, old_logp, advantage, alpha});
  return out;
}

int Tape::entropy(int logits) {
  check_id(logits);
  const Tensor& zv = val_of(logits);
  if (zv.rank() != 1) throw std::invalid_argument("entropy: logits must be rank 1");
  const int n = static_cast<int>(zv.size());
  std::vector<float> p(static_cast<size_t>(n));
  softmax_into(zv.data(), p.data(), n);
  float h = 0.0f;
  for (int i = 0; i < n; ++i) {
    if (p[i] > 0.0f) h -= p[i] * std::log(p[i]);
  }
  const int out = make_node({1});
  nodes_.back().val[0] = h;
  ops_.push_back({OpKind::Entropy, logits, -1, -1, out, 0, 0, 0, 0, 0});
  return out;
}

void Tape::backward(int loss, float seed) {
  check_id(loss);
  if (swept_) throw std::runtime_error("tape: backward called twice");
  if (val_of(loss).size() != 1) throw std::invalid_argument("tape: loss must be scalar");
  swept_ = true;
  grad_of(loss)[0] = seed;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) backward_op(*it);
}

void Tape::backward_op(const OpRecord& op) {
  const Tensor& dy = nodes_[static_cast<size_t>(op.out)].grd;
  switch (op.kind) {
    case OpKind::Dense: {
      const Tensor& xv = val_of(op.a);
      const Tensor& wv = val_of(op.b);
      const int out_dim = wv.dim(0), in_dim = wv.dim(1);
      kernels::dense_backward_input(wv.data(), dy.data(), grad_of(op.a).data(),
                                    in_dim, out_dim);
      kernels::dense_backward_params(xv.data(), dy.data(), grad_of(op.b).data(),
                                     grad_of(op.c).data(), in_dim, out_dim);
      break;
    }
    case OpKind::Conv2d: {
      const Tensor& xv = val_of(op.a);
      const Tensor& wv = val_of(op.b);
      const int cout = wv.dim(0), k = wv.dim(2);
      kernels::conv2d_backward_input(wv.data(), dy.data(), grad_of(op.a).data(),
                                     xv.dim(0), xv.dim(1), xv.dim(2), cout, k, op.i0,
                                     op.i1);
      kernels::conv2d_backward_params(xv.data(), dy.data(), grad_of(op.b).data(),
                                      grad_of(op.c).data(), xv.dim(0), xv.dim(1),
                                      xv.dim(2), cout, k, op.i0, op.i1);
      break;
    }
    case OpKind::Relu: {
      const Tensor& xv = val_of(op.a);
      Tensor& dx = grad_of(op.a);
      for (int64_t i = 0; i < xv.size(); ++i) {
        if (xv[i] > 0.0f) dx[i] += dy[i];
      }
      break;
    }
    case OpKind::Softmax: {
      const Tensor& p = nodes_[static_cast<size_t>(op.out)].val;
      Tensor& dx = grad_of(op.a);
      float dot = 0.0f;
      for (int64_t i = 0; i < p.size(); ++i) dot += dy[i] * p[i];
      for (int64_t i = 0; i < p.size(); ++i) dx[i] += p[i] * (dy[i] - dot);
      break;
    }
    case OpKind::Reshape: {
      Tensor& dx = grad_of(op.a);
      for (int64_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
      break;
    }
    case OpKind::Upsample2x: {
      Tensor& dx = grad_of(op.a);
      const int c = dx.dim(0), h = dx.dim(1), w = dx.dim(2);
      for (int ci = 0; ci < c; ++ci) {
        for (int i = 0; i < h; ++i) {
          for (int j = 0; j < w; ++j) {
            dx.at(ci, i, j) += dy.at(ci, 2 * i, 2 * j) + dy.at(ci, 2 * i, 2 * j + 1) +
                               dy.at(ci, 2 * i + 1, 2 * j) +
                               dy.at(ci, 2 * i + 1, 2 * j + 1);
          }
        }
      }
      break;
    }
    case OpKind::Concat: {
      Tensor& dx = grad_of(op.a);
      Tensor& dz = grad_of(op.b);
      const int64_t nx = dx.size();
      for (int64_t i = 0; i < nx; ++i) dx[i] += dy[i];
      for (int64_t i = 0; i < dz.size(); ++i) dz[i] += dy[nx + i];
      break;
    }
    case OpKind::Pick: {
      grad_of(op.a)[op.i0] += dy[0];
      break;
    }
    case OpKind::Add: {
      Tensor& dx = grad_of(op.a);
      Tensor& dz = grad_of(op.b);
      for (int64_t i = 0; i < dx.size(); ++i) {
        dx[i] += dy[i];
        dz[i] += dy[i];
      }
      break;
    }
    case OpKind::Scale: {
      Tensor& dx = grad_of(op.a);
      for (int64_t i = 0; i < dx.size(); ++i) dx[i] += op.f0 * dy[i];
      break;
    }
    case OpKind::CrossEntropy: {
      const Tensor& zv = val_of(op.a);
      const Tensor& tv = val_of(op.b);
      const int n = static_cast<int>(zv.size());
      std::vector<float> p(static_cast<size_t>(n));
      softmax_into(zv.data(), p.data(), n);
      Tensor& dz = grad_of(op.a);
      Tensor& dt = grad_of(op.b);
      const float lse = log_sum_exp(zv.data(), n);
      for (int i = 0; i < n; ++i) {
        dz[i] += dy[0] * (p[i] - tv[i]);
        dt[i] += dy[0] * (lse - zv[i]);  // d/dt of (lse - t.z) per component
      }
      break;
    }
    case OpKind::Huber: {
      const Tensor& pv = val_of(op.a);
      const Tensor& tv = val_of(op.b);
      Tensor& dp = grad_of(op.a);
      Tensor& dt = grad_of(op.b);
      const float inv_n = 1.0f / static_cast<float>(pv.size());
      for (int64_t i = 0; i < pv.size(); ++i) {
        const float g = std::clamp(pv[i] - tv[i], -op.f0, op.f0) * inv_n * dy[0];
        dp[i] += g;
        dt[i] -= g;
      }
      break;
    }
    case OpKind::L2Loss: {
      const Tensor& pv = val_of(op.a);
      const Tensor& tv = val_of(op.b);
      Tensor& dp = grad_of(op.a);
      Tensor& dt = grad_of(op.b);
      const float inv_n = 1.0f / static_cast<float>(pv.size());
      for (int64_t i = 0; i < pv.size(); ++i) {
        const float g = (pv[i] - tv[i]) * inv_n * dy[0];
        dp[i] += g;
        dt[i] -= g;
      }
      break;
    }
    case OpKind::PpoClip: {
      const Tensor& zv = val_of(op.a);
      const int n = static_cast<int>(zv.size());
      const int action = op.i0;
      const float old_logp = op.f0, advantage = op.f1, alpha = op.f2;
      std::vector<float> p(static_cast<size_t>(n));
      softmax_into(zv.data(), p.data(), n);
      const float logp = zv[action] - log_sum_exp(zv.data(), n);
      const float ratio = std::exp(logp - old_logp);
      const float clipped = std::clamp(ratio, 1.0f - alpha, 1.0f + alpha);
      // Gradient flows only when the unclipped branch is the active minimum.
      if (ratio * advantage <= clipped * advantage) {
        Tensor& dz = grad_of(op.a);
        const float coef = -dy[0] * advantage * ratio;
        for (int i = 0; i < n; ++i) {
          const float ind = (i == action) ? 1.0f : 0.0f;
          dz[i] += coef * (ind - p[i]);
        }
      }
      break;
    }
    case OpKind::Entropy: {
      const Tensor& zv = val_of(op.a);
      const int n = static_cast<int>(zv.size());
      std::vector<float> p(static_cast<size_t>(n));
      softmax_into(zv.data(), p.data(), n);
      float h = 0.0f;
      for (int i = 0; i < n; ++i) {
        if (p[i] > 0.0f) h -= p[i] * std::log(p[i]);
      }
      Tensor& dz = grad_of(op.a);
      for (int i = 0; i < n; ++i) {
        if (p[i] > 0.0f) dz[i] += dy[0] * (-p[i] * (std::log(p[i]) + h));
      }
      break;
    }
  }
}

}  // namespace snpx
