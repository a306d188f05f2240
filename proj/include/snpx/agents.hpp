#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "snpx/env.hpp"
#include "snpx/nn.hpp"
#include "snpx/replay.hpp"

namespace snpx {

struct AgentConfig {
  std::string algorithm = "dqn";  // dqn | ppo
  float gamma = 0.99f;
  int64_t train_steps = 120000;   // environment steps
  float lr = 1e-3f;
  float harden_eta = 0.0f;        // additive U[-eta,eta] observation noise
  uint64_t seed = 1;

  // dqn
  int replay_capacity = 50000;
  int batch_size = 32;
  int target_sync = 1000;         // updates of the frozen bootstrap net
  float eps_start = 1.0f;
  float eps_end = 0.05f;
  int64_t eps_decay_steps = 0;    // 0 -> train_steps / 2
  int train_every = 4;            // env steps per gradient update
  int warmup = 2000;              // replay entries before updates begin

  // ppo
  float clip_alpha = 0.2f;
  int rollout_len = 512;
  int ppo_epochs = 4;
  int minibatch = 64;
  float value_weight = 0.5f;
  float entropy_weight = 0.01f;

  void validate() const;  // throws std::invalid_argument
};

// A trained (or baseline) action selector. Exactly one of q/pv is set for
// dqn/ppo; both stay empty for the uniform-random baseline.
struct Policy {
  std::string algorithm;  // dqn | ppo | random
  int actions = 3;
  std::vector<int> obs_shape;
  std::unique_ptr<QNetwork> q;
  std::unique_ptr<PolicyValueNetwork> pv;
};

Policy make_random_policy(int actions);

enum class ActMode { kGreedy, kEpsGreedy, kSample };

// Greedy: argmax scores, ties to the lowest index. EpsGreedy: uniform with
// probability eps. Sample: categorical from the policy head (ppo only).
int act(const Policy& policy, const Tensor& state, ActMode mode, Rng& rng,
        float eps = 0.0f);

// Q-values (dqn) or policy logits (ppo) for one state.
Tensor policy_scores(const Policy& policy, const Tensor& state);

// Mean Huber TD error over the batch; bootstrap zeroed at terminals. When
// grads is non-null, d(loss)/d(params) is accumulated into it.
float td_loss(const QNetwork& q, const QNetwork& target,
              const std::vector<Transition>& batch, float gamma,
              ParamStore* grads = nullptr);

// Mean clipped-ratio objective (positive is good): ratios come in as log
// probabilities. Throws on a zero old-policy probability.
float ppo_surrogate(const std::vector<float>& new_logp,
                    const std::vector<float>& old_logp,
                    const std::vector<float>& advantages, float alpha);

struct TrainLogRow {
  int64_t step = 0;
  float loss = 0.0f;
  float episode_reward = 0.0f;
};
using TrainLog = std::function<void(const TrainLogRow&)>;

Policy train_dqn(Env& env, const AgentConfig& cfg, const TrainLog& log = {});
Policy train_ppo(Env& env, const AgentConfig& cfg, const TrainLog& log = {});
Policy train_agent(Env& env, const AgentConfig& cfg, const TrainLog& log = {});

struct EvalResult {
  float mean = 0.0f;                // per-episode reward mean
  std::vector<float> per_episode;
};

// What the policy sees instead of the true state. The environment always
// advances on true states; hooks only bend the policy's perception.
using AttackHook = std::function<Tensor(const Tensor& state, int episode, int step)>;

using EnvFactory = std::function<std::unique_ptr<Env>(int episode)>;

// Runs full episodes (possibly in parallel; each episode owns its env) and
// reports per-episode reward sums. Deterministic for a fixed factory.
EvalResult evaluate(const Policy& policy, const EnvFactory& factory, int episodes,
                    const AttackHook* hook = nullptr);

// Convenience overload: builds each episode's env from the descriptor with a
// per-episode seed substream.
EvalResult evaluate(const Policy& policy, const EnvDescriptor& desc, int episodes,
                    const AttackHook* hook = nullptr);

// Additive U[-eta,eta] pixel noise, clipped back to [0,1].
Tensor harden_view(const Tensor& state, float eta, Rng& rng);

}  // namespace snpx
