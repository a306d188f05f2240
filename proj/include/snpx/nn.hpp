#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "snpx/params.hpp"
#include "snpx/tape.hpp"

namespace snpx {

// Attaches a store's parameters to one tape and remembers which node each
// one became, so per-sample gradients can later be folded back into the
// store's accumulators in a fixed order. One binder per tape.
class ParamBinder {
 public:
  ParamBinder(Tape& tape, const ParamStore& store) : tape_(tape), store_(store) {}

  int operator()(const std::string& name) {
    const int id = tape_.param(store_.at(name).value);
    bound_.emplace_back(name, id);
    return id;
  }

  // Adds scale * (tape gradient) into `into`'s grad accumulators. Call after
  // backward(), outside any parallel region, in a fixed sample order.
  void accumulate(ParamStore& into, float scale = 1.0f) const;

 private:
  Tape& tape_;
  const ParamStore& store_;
  std::vector<std::pair<std::string, int>> bound_;
};

// Q-network over stacked frames: conv(8,k4,s2) - conv(16,k3,s1) - dense(128)
// - dense(actions), ReLU between layers.
class QNetwork {
 public:
  QNetwork(std::vector<int> obs_shape, int actions, uint64_t seed);

  int forward(Tape& t, int state, ParamBinder& bind) const;
  Tensor q_values(const Tensor& state) const;
  int greedy_action(const Tensor& state) const;

  int action_count() const { return actions_; }
  const std::vector<int>& obs_shape() const { return obs_shape_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

 private:
  std::vector<int> obs_shape_;
  int actions_;
  ParamStore store_;
};

// Actor-critic network sharing the Q-network body, with separate policy and
// value heads.
class PolicyValueNetwork {
 public:
  struct Heads {
    int logits;
    int value;
  };

  PolicyValueNetwork(std::vector<int> obs_shape, int actions, uint64_t seed);

  Heads forward(Tape& t, int state, ParamBinder& bind) const;
  Tensor policy_logits(const Tensor& state) const;
  int greedy_action(const Tensor& state) const;

  int action_count() const { return actions_; }
  const std::vector<int>& obs_shape() const { return obs_shape_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

 private:
  std::vector<int> obs_shape_;
  int actions_;
  ParamStore store_;
};

// Eavesdropper-side model, deliberately smaller than the victim networks:
// a single conv bank and a 96-wide dense layer. out_dim = action count for
// action imitation, 1 for return regression.
class ProxyNet {
 public:
  ProxyNet(std::vector<int> obs_shape, int out_dim, uint64_t seed);

  int forward(Tape& t, int state, ParamBinder& bind) const;
  Tensor predict(const Tensor& state) const;

  int out_dim() const { return out_dim_; }
  const std::vector<int>& obs_shape() const { return obs_shape_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

 private:
  std::vector<int> obs_shape_;
  int out_dim_;
  ParamStore store_;
};

// Next-frame predictor: conv encoder to a 96-wide bottleneck, dense decoder
// to a half-resolution grid, nearest upsample, and a 3x3 conv to the frame.
// With actions > 0 a one-hot action is joined at the bottleneck, making the
// model action-conditional.
class PsychicNet {
 public:
  PsychicNet(std::vector<int> obs_shape, int actions, uint64_t seed);

  // action must be a valid index when action-conditional, and -1 otherwise.
  int forward(Tape& t, int state, ParamBinder& bind, int action = -1) const;
  Tensor predict_frame(const Tensor& state, int action = -1) const;

  bool action_conditional() const { return actions_ > 0; }
  int action_count() const { return actions_; }
  const std::vector<int>& obs_shape() const { return obs_shape_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

 private:
  std::vector<int> obs_shape_;
  int actions_;
  ParamStore store_;
};

// Softmax sampling / log-prob helpers shared by the PPO agent and proxies.
int sample_from_logits(const Tensor& logits, Rng& rng);
float log_prob_of(const Tensor& logits, int action);
int argmax(const Tensor& t);
Tensor one_hot(int index, int n);
Tensor softmax_copy(const Tensor& logits);

}  // namespace snpx
