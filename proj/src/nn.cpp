#include "snpx/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "snpx/kernels.hpp"

namespace snpx {

namespace {

void check_obs_shape(const std::vector<int>& s) {
  if (s.size() != 3) throw std::invalid_argument("observation shape must be [c,h,w]");
}

}  // namespace

void ParamBinder::accumulate(ParamStore& into, float scale) const {
  for (const auto& [name, id] : bound_) {
    Tensor& acc = into.at(name).grad;
    const Tensor& g = tape_.grad(id);
    if (!acc.same_shape(g)) throw std::runtime_error("grad shape mismatch for " + name);
    for (int64_t i = 0; i < acc.size(); ++i) acc[i] += scale * g[i];
  }
}

// ---- QNetwork ----

QNetwork::QNetwork(std::vector<int> obs_shape, int actions, uint64_t seed)
    : obs_shape_(std::move(obs_shape)), actions_(actions) {
  check_obs_shape(obs_shape_);
  Rng rng = Rng::substream(seed, "qnet-init");
  const int c = obs_shape_[0], h = obs_shape_[1], w = obs_shape_[2];
  store_.add_conv("conv1", c, 8, 4, rng);
  store_.add_conv("conv2", 8, 16, 3, rng);
  const int h1 = kernels::conv_out_dim(h, 4, 2, 0);
  const int w1 = kernels::conv_out_dim(w, 4, 2, 0);
  const int h2 = kernels::conv_out_dim(h1, 3, 1, 0);
  const int w2 = kernels::conv_out_dim(w1, 3, 1, 0);
  store_.add_dense("fc1", 16 * h2 * w2, 128, rng);
  store_.add_dense("head", 128, actions_, rng);
}

int QNetwork::forward(Tape& t, int state, ParamBinder& bind) const {
  int x = t.conv2d(state, bind("conv1.w"), bind("conv1.b"), 2, 0);
  x = t.relu(x);
  x = t.conv2d(x, bind("conv2.w"), bind("conv2.b"), 1, 0);
  x = t.relu(x);
  x = t.flatten(x);
  x = t.dense(x, bind("fc1.w"), bind("fc1.b"));
  x = t.relu(x);
  return t.dense(x, bind("head.w"), bind("head.b"));
}

Tensor QNetwork::q_values(const Tensor& state) const {
  Tape t;
  ParamBinder bind(t, store_);
  const int out = forward(t, t.input(state), bind);
  return t.value(out);
}

int QNetwork::greedy_action(const Tensor& state) const {
  return argmax(q_values(state));
}

// ---- PolicyValueNetwork ----

PolicyValueNetwork::PolicyValueNetwork(std::vector<int> obs_shape, int actions,
                                       uint64_t seed)
    : obs_shape_(std::move(obs_shape)), actions_(actions) {
  check_obs_shape(obs_shape_);
  Rng rng = Rng::substream(seed, "pvnet-init");
  const int c = obs_shape_[0], h = obs_shape_[1], w = obs_shape_[2];
  store_.add_conv("conv1", c, 8, 4, rng);
  store_.add_conv("conv2", 8, 16, 3, rng);
  const int h1 = kernels::conv_out_dim(h, 4, 2, 0);
  const int w1 = kernels::conv_out_dim(w, 4, 2, 0);
  const int h2 = kernels::conv_out_dim(h1, 3, 1, 0);
  const int w2 = kernels::conv_out_dim(w1, 3, 1, 0);
  store_.add_dense("fc1", 16 * h2 * w2, 128, rng);
  store_.add_dense("pi", 128, actions_, rng);
  store_.add_dense("v", 128, 1, rng);
}

PolicyValueNetwork::Heads PolicyValueNetwork::forward(Tape& t, int state,
                                                      ParamBinder& bind) const {
  int x = t.conv2d(state, bind("conv1.w"), bind("conv1.b"), 2, 0);
  x = t.relu(x);
  x = t.conv2d(x, bind("conv2.w"), bind("conv2.b"), 1, 0);
  x = t.relu(x);
  x = t.flatten(x);
  x = t.dense(x, bind("fc1.w"), bind("fc1.b"));
  x = t.relu(x);
  Heads h;
  h.logits = t.dense(x, bind("pi.w"), bind("pi.b"));
  h.value = t.dense(x, bind("v.w"), bind("v.b"));
  return h;
}

Tensor PolicyValueNetwork::policy_logits(const Tensor& state) const {
  Tape t;
  ParamBinder bind(t, store_);
  const Heads h = forward(t, t.input(state), bind);
  return t.value(h.logits);
}

int PolicyValueNetwork::greedy_action(const Tensor& state) const {
  return argmax(policy_logits(state));
}

// ---- ProxyNet ----

ProxyNet::ProxyNet(std::vector<int> obs_shape, int out_dim, uint64_t seed)
    : obs_shape_(std::move(obs_shape)), out_dim_(out_dim) {
  check_obs_shape(obs_shape_);
  if (out_dim_ <= 0) throw std::invalid_argument("proxy out_dim must be positive");
  Rng rng = Rng::substream(seed, "proxy-init");
  const int c = obs_shape_[0], h = obs_shape_[1], w = obs_shape_[2];
  store_.add_conv("conv1", c, 8, 4, rng);
  const int h1 = kernels::conv_out_dim(h, 4, 2, 0);
  const int w1 = kernels::conv_out_dim(w, 4, 2, 0);
  store_.add_dense("fc1", 8 * h1 * w1, 96, rng);
  store_.add_dense("head", 96, out_dim_, rng);
}

int ProxyNet::forward(Tape& t, int state, ParamBinder& bind) const {
  int x = t.conv2d(state, bind("conv1.w"), bind("conv1.b"), 2, 0);
  x = t.relu(x);
  x = t.flatten(x);
  x = t.dense(x, bind("fc1.w"), bind("fc1.b"));
  x = t.relu(x);
  return t.dense(x, bind("head.w"), bind("head.b"));
}

Tensor ProxyNet::predict(const Tensor& state) const {
  Tape t;
  ParamBinder bind(t, store_);
  const int out = forward(t, t.input(state), bind);
  return t.value(out);
}

// ---- PsychicNet ----

PsychicNet::PsychicNet(std::vector<int> obs_shape, int actions, uint64_t seed)
    : obs_shape_(std::move(obs_shape)), actions_(actions) {
  check_obs_shape(obs_shape_);
  const int c = obs_shape_[0], h = obs_shape_[1], w = obs_shape_[2];
  if (h % 2 != 0 || w % 2 != 0) {
    throw std::invalid_argument("frame predictor needs even frame dimensions");
  }
  Rng rng = Rng::substream(seed, "psychic-init");
  store_.add_conv("conv1", c, 8, 4, rng);
  const int h1 = kernels::conv_out_dim(h, 4, 2, 0);
  const int w1 = kernels::conv_out_dim(w, 4, 2, 0);
  store_.add_dense("fc1", 8 * h1 * w1, 96, rng);
  const int bottleneck = 96 + (actions_ > 0 ? actions_ : 0);
  store_.add_dense("dec_fc", bottleneck, 8 * (h / 2) * (w / 2), rng);
  store_.add_conv("dec_conv", 8, 1, 3, rng);
}

int PsychicNet::forward(Tape& t, int state, ParamBinder& bind, int action) const {
  if (actions_ > 0) {
    if (action < 0 || action >= actions_) {
      throw std::invalid_argument("action-conditional frame predictor needs an action");
    }
  } else if (action != -1) {
    throw std::invalid_argument("frame predictor is not action-conditional");
  }
  const int h = obs_shape_[1], w = obs_shape_[2];
  int x = t.conv2d(state, bind("conv1.w"), bind("conv1.b"), 2, 0);
  x = t.relu(x);
  x = t.flatten(x);
  x = t.dense(x, bind("fc1.w"), bind("fc1.b"));
  x = t.relu(x);
  if (actions_ > 0) {
    x = t.concat(x, t.input(one_hot(action, actions_)));
  }
  x = t.dense(x, bind("dec_fc.w"), bind("dec_fc.b"));
  x = t.relu(x);
  x = t.reshape(x, {8, h / 2, w / 2});
  x = t.upsample2x(x);
  return t.conv2d(x, bind("dec_conv.w"), bind("dec_conv.b"), 1, 1);
}

Tensor PsychicNet::predict_frame(const Tensor& state, int action) const {
  Tape t;
  ParamBinder bind(t, store_);
  const int out = forward(t, t.input(state), bind, action);
  return t.value(out);
}

// ---- helpers ----

int argmax(const Tensor& t) {
  if (t.size() == 0) throw std::invalid_argument("argmax of empty tensor");
  int best = 0;
  for (int64_t i = 1; i < t.size(); ++i) {
    if (t[i] > t[best]) best = static_cast<int>(i);
  }
  return best;
}

Tensor one_hot(int index, int n) {
  if (index < 0 || index >= n) throw std::invalid_argument("one_hot index out of range");
  Tensor t({n});
  t[index] = 1.0f;
  return t;
}

Tensor softmax_copy(const Tensor& logits) {
  Tensor p(logits.shape());
  float m = logits[0];
  for (int64_t i = 1; i < logits.size(); ++i) m = std::max(m, logits[i]);
  float sum = 0.0f;
  for (int64_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    sum += p[i];
  }
  for (int64_t i = 0; i < p.size(); ++i) p[i] /= sum;
  return p;
}

int sample_from_logits(const Tensor& logits, Rng& rng) {
  const Tensor p = softmax_copy(logits);
  const float u = rng.uniform();
  float cum = 0.0f;
  for (int64_t i = 0; i < p.size(); ++i) {
    cum += p[i];
    if (u < cum) return static_cast<int>(i);
  }
  return static_cast<int>(p.size()) - 1;  // guard against rounding
}

float log_prob_of(const Tensor& logits, int action) {
  if (action < 0 || action >= logits.size()) {
    throw std::invalid_argument("log_prob_of: action out of range");
  }
  float m = logits[0];
  for (int64_t i = 1; i < logits.size(); ++i) m = std::max(m, logits[i]);
  float sum = 0.0f;
  for (int64_t i = 0; i < logits.size(); ++i) sum += std::exp(logits[i] - m);
  return logits[action] - m - std::log(sum);
}

}  // namespace snpx
