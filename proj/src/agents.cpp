#include "snpx/agents.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string>

namespace snpx {

void AgentConfig::validate() const {
  if (algorithm != "dqn" && algorithm != "ppo") {
    throw std::invalid_argument("algorithm must be dqn or ppo, got: " + algorithm);
  }
  if (!(gamma >= 0.0f && gamma <= 1.0f)) throw std::invalid_argument("gamma outside [0,1]");
  if (train_steps <= 0) throw std::invalid_argument("train_steps must be positive");
  if (lr <= 0.0f) throw std::invalid_argument("lr must be positive");
  if (harden_eta < 0.0f) throw std::invalid_argument("harden_eta must be >= 0");
  if (replay_capacity < 2) throw std::invalid_argument("replay_capacity too small");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (target_sync < 1) throw std::invalid_argument("target_sync must be >= 1");
  if (eps_start < 0.0f || eps_start > 1.0f || eps_end < 0.0f || eps_end > 1.0f) {
    throw std::invalid_argument("epsilon endpoints outside [0,1]");
  }
  if (train_every < 1) throw std::invalid_argument("train_every must be >= 1");
  if (warmup < batch_size) throw std::invalid_argument("warmup must cover a batch");
  if (clip_alpha <= 0.0f) throw std::invalid_argument("clip_alpha must be positive");
  if (rollout_len < 2) throw std::invalid_argument("rollout_len must be >= 2");
  if (ppo_epochs < 1) throw std::invalid_argument("ppo_epochs must be >= 1");
  if (minibatch < 1) throw std::invalid_argument("minibatch must be >= 1");
  if (value_weight < 0.0f || entropy_weight < 0.0f) {
    throw std::invalid_argument("loss weights must be >= 0");
  }
}

Policy make_random_policy(int actions) {
  Policy p;
  p.algorithm = "random";
  p.actions = actions;
  return p;
}

Tensor policy_scores(const Policy& policy, const Tensor& state) {
  if (policy.algorithm == "dqn") return policy.q->q_values(state);
  if (policy.algorithm == "ppo") return policy.pv->policy_logits(state);
  throw std::invalid_argument("policy '" + policy.algorithm + "' has no score head");
}

int act(const Policy& policy, const Tensor& state, ActMode mode, Rng& rng, float eps) {
  if (policy.algorithm == "random") return rng.uniform_int(policy.actions);
  if (mode == ActMode::kEpsGreedy && rng.uniform() < eps) {
    return rng.uniform_int(policy.actions);
  }
  const Tensor scores = policy_scores(policy, state);
  if (mode == ActMode::kSample) return sample_from_logits(scores, rng);
  return argmax(scores);
}

Tensor harden_view(const Tensor& state, float eta, Rng& rng) {
  Tensor out = state;
  for (int64_t i = 0; i < out.size(); ++i) {
    out[i] = std::clamp(out[i] + rng.uniform(-eta, eta), 0.0f, 1.0f);
  }
  return out;
}

float td_loss(const QNetwork& q, const QNetwork& target,
              const std::vector<Transition>& batch, float gamma, ParamStore* grads) {
  if (batch.empty()) throw std::invalid_argument("td_loss needs a nonempty batch");
  const float inv = 1.0f / static_cast<float>(batch.size());
  double loss_sum = 0.0;
  for (const Transition& tr : batch) {
    float y = tr.reward;
    if (!tr.terminal) {
      const Tensor qn = target.q_values(tr.next_state);
      float best = qn[0];
      for (int64_t i = 1; i < qn.size(); ++i) best = std::max(best, qn[i]);
      y += gamma * best;
    }
    Tape t;
    ParamBinder bind(t, q.params());
    const int qs = q.forward(t, t.input(tr.state), bind);
    const int picked = t.pick(qs, tr.action);
    Tensor target_t({1});
    target_t[0] = y;
    const int loss = t.huber(picked, t.input(target_t), 1.0f);
    if (grads) {
      t.backward(loss);
      bind.accumulate(*grads, inv);
    }
    loss_sum += t.value(loss)[0];
  }
  return static_cast<float>(loss_sum * inv);
}

float ppo_surrogate(const std::vector<float>& new_logp,
                    const std::vector<float>& old_logp,
                    const std::vector<float>& advantages, float alpha) {
  if (alpha <= 0.0f) throw std::invalid_argument("alpha must be positive");
  const size_t n = new_logp.size();
  if (n == 0 || old_logp.size() != n || advantages.size() != n) {
    throw std::invalid_argument("ppo_surrogate needs equal-length nonempty inputs");
  }
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (!std::isfinite(old_logp[i]) || std::exp(old_logp[i]) <= 0.0f) {
      throw std::runtime_error("old policy assigns zero probability to a taken action");
    }
    const float ratio = std::exp(new_logp[i] - old_logp[i]);
    const float clipped = std::clamp(ratio, 1.0f - alpha, 1.0f + alpha);
    sum += std::min(ratio * advantages[i], clipped * advantages[i]);
  }
  return static_cast<float>(sum / static_cast<double>(n));
}

namespace {

float eps_at(const AgentConfig& cfg, int64_t step) {
  const int64_t decay = cfg.eps_decay_steps > 0 ? cfg.eps_decay_steps : cfg.train_steps / 2;
  if (decay <= 0) return cfg.eps_end;
  const float frac = std::min(1.0f, static_cast<float>(step) / static_cast<float>(decay));
  return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac;
}

[[noreturn]] void abort_divergence(const char* algo, int64_t step, float loss) {
  throw std::runtime_error(std::string(algo) + " training diverged: loss " +
                           std::to_string(loss) + " at step " + std::to_string(step) +
                           "; lower the learning rate or check reward scale");
}

struct PvOut {
  Tensor logits;
  float value;
};

PvOut pv_eval(const PolicyValueNetwork& pv, const Tensor& state) {
  Tape t;
  ParamBinder bind(t, pv.params());
  const auto heads = pv.forward(t, t.input(state), bind);
  return {t.value(heads.logits), t.value(heads.value)[0]};
}

}  // namespace

Policy train_dqn(Env& env, const AgentConfig& cfg, const TrainLog& log) {
  cfg.validate();
  const int g = env.grid();
  const int actions = env.action_count();
  const std::vector<int> obs_shape{4, g, g};
  auto qnet = std::make_unique<QNetwork>(obs_shape, actions, cfg.seed);
  QNetwork target(obs_shape, actions, cfg.seed);
  target.params().copy_values_from(qnet->params());

  ReplayBuffer replay(cfg.replay_capacity, g);
  Rng rng = Rng::substream(cfg.seed, "dqn-train");
  env.reset();

  const size_t frame_off = static_cast<size_t>(3) * g * g;
  float ep_reward = 0.0f;
  float last_loss = 0.0f;
  int64_t updates = 0;

  for (int64_t step = 0; step < cfg.train_steps; ++step) {
    const Tensor& obs = env.observation();
    const bool ep_start = env.episode_step() == 0;
    int a;
    if (rng.uniform() < eps_at(cfg, step)) {
      a = rng.uniform_int(actions);
    } else if (cfg.harden_eta > 0.0f) {
      a = qnet->greedy_action(harden_view(obs, cfg.harden_eta, rng));
    } else {
      a = qnet->greedy_action(obs);
    }
    // The frame must outlive the step() that overwrites the stack.
    std::vector<float> frame(obs.data() + frame_off, obs.data() + frame_off + g * g);
    const EnvStep s = env.step(a);
    replay.push(frame.data(), ep_start, a, s.reward, s.terminal);
    ep_reward += s.reward;
    if (s.terminal) {
      if (log) log({step, last_loss, ep_reward});
      ep_reward = 0.0f;
      env.reset();
    }

    if (replay.size() >= cfg.warmup && step % cfg.train_every == 0) {
      std::vector<Transition> batch = replay.sample_batch(cfg.batch_size, rng);
      if (cfg.harden_eta > 0.0f) {
        for (Transition& tr : batch) {
          tr.state = harden_view(tr.state, cfg.harden_eta, rng);
          tr.next_state = harden_view(tr.next_state, cfg.harden_eta, rng);
        }
      }
      qnet->params().zero_grads();
      last_loss = td_loss(*qnet, target, batch, cfg.gamma, &qnet->params());
      if (!std::isfinite(last_loss)) abort_divergence("dqn", step, last_loss);
      qnet->params().adam_step(cfg.lr);
      if (++updates % cfg.target_sync == 0) {
        target.params().copy_values_from(qnet->params());
      }
    }
  }

  Policy p;
  p.algorithm = "dqn";
  p.actions = actions;
  p.obs_shape = obs_shape;
  p.q = std::move(qnet);
  return p;
}

Policy train_ppo(Env& env, const AgentConfig& cfg, const TrainLog& log) {
  cfg.validate();
  const int g = env.grid();
  const int actions = env.action_count();
  const std::vector<int> obs_shape{4, g, g};
  auto pv = std::make_unique<PolicyValueNetwork>(obs_shape, actions, cfg.seed);
  Rng rng = Rng::substream(cfg.seed, "ppo-train");
  env.reset();

  struct Step {
    Tensor state;  // exactly what the policy saw (noise included)
    int action;
    float old_logp;
    float value;
    float reward;
    bool terminal;
  };

  float ep_reward = 0.0f;
  float last_loss = 0.0f;
  int64_t step = 0;

  while (step < cfg.train_steps) {
    const int T = static_cast<int>(
        std::min<int64_t>(cfg.rollout_len, cfg.train_steps - step));
    std::vector<Step> ro;
    ro.reserve(T);
    for (int t = 0; t < T; ++t, ++step) {
      Tensor seen = cfg.harden_eta > 0.0f
                        ? harden_view(env.observation(), cfg.harden_eta, rng)
                        : env.observation();
      const PvOut out = pv_eval(*pv, seen);
      const int a = sample_from_logits(out.logits, rng);
      const float lp = log_prob_of(out.logits, a);
      const EnvStep s = env.step(a);
      ep_reward += s.reward;
      ro.push_back({std::move(seen), a, lp, out.value, s.reward, s.terminal});
      if (s.terminal) {
        if (log) log({step, last_loss, ep_reward});
        ep_reward = 0.0f;
        env.reset();
      }
    }

    // Empirical returns; a rollout cut mid-episode bootstraps from the
    // critic's value of the state it stopped in.
    std::vector<float> returns(T);
    float run = 0.0f;
    if (!ro.back().terminal) {
      Tensor seen = cfg.harden_eta > 0.0f
                        ? harden_view(env.observation(), cfg.harden_eta, rng)
                        : env.observation();
      run = pv_eval(*pv, seen).value;
    }
    for (int t = T - 1; t >= 0; --t) {
      if (ro[t].terminal) run = 0.0f;
      run = ro[t].reward + cfg.gamma * run;
      returns[t] = run;
    }

    // Standardized (return - critic value) advantages.
    std::vector<float> adv(T);
    double mean = 0.0;
    for (int t = 0; t < T; ++t) {
      adv[t] = returns[t] - ro[t].value;
      mean += adv[t];
    }
    mean /= T;
    double var = 0.0;
    for (int t = 0; t < T; ++t) var += (adv[t] - mean) * (adv[t] - mean);
    const float sd = std::max(1e-6f, static_cast<float>(std::sqrt(var / T)));
    for (int t = 0; t < T; ++t) adv[t] = (adv[t] - static_cast<float>(mean)) / sd;

    std::vector<int> order(T);
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
      for (int i = T - 1; i > 0; --i) {
        std::swap(order[i], order[rng.uniform_int(i + 1)]);
      }
      for (int mb = 0; mb < T; mb += cfg.minibatch) {
        const int m = std::min(cfg.minibatch, T - mb);
        const float inv = 1.0f / static_cast<float>(m);
        pv->params().zero_grads();
        double loss_sum = 0.0;
        for (int i = mb; i < mb + m; ++i) {
          const Step& st = ro[order[i]];
          Tape t;
          ParamBinder bind(t, pv->params());
          const auto heads = pv->forward(t, t.input(st.state), bind);
          const int clip =
              t.ppo_clip(heads.logits, st.action, st.old_logp, adv[order[i]], cfg.clip_alpha);
          Tensor vt({1});
          vt[0] = returns[order[i]];
          const int vloss = t.huber(heads.value, t.input(vt), 1.0f);
          const int ent = t.entropy(heads.logits);
          const int total =
              t.add(clip, t.add(t.scale(vloss, cfg.value_weight),
                                t.scale(ent, -cfg.entropy_weight)));
          t.backward(total);
          bind.accumulate(pv->params(), inv);
          loss_sum += t.value(total)[0];
        }
        last_loss = static_cast<float>(loss_sum / m);
        if (!std::isfinite(last_loss)) abort_divergence("ppo", step, last_loss);
        pv->params().adam_step(cfg.lr);
      }
    }
  }

  Policy p;
  p.algorithm = "ppo";
  p.actions = actions;
  p.obs_shape = obs_shape;
  p.pv = std::move(pv);
  return p;
}

Policy train_agent(Env& env, const AgentConfig& cfg, const TrainLog& log) {
  cfg.validate();
  return cfg.algorithm == "dqn" ? train_dqn(env, cfg, log) : train_ppo(env, cfg, log);
}

EvalResult evaluate(const Policy& policy, const EnvFactory& factory, int episodes,
                    const AttackHook* hook) {
  if (episodes < 1) throw std::invalid_argument("evaluate needs episodes >= 1");
  EvalResult res;
  res.per_episode.assign(episodes, 0.0f);
  std::string first_error;

#pragma omp parallel for schedule(dynamic)
  for (int e = 0; e < episodes; ++e) {
    try {
      auto env = factory(e);
      env->reset();
      Rng rng = Rng::substream(0x65766c75ULL, "eval-act", static_cast<uint64_t>(e));
      float total = 0.0f;
      for (int step = 0;; ++step) {
        const Tensor& obs = env->observation();
        int a;
        if (hook && *hook) {
          const Tensor seen = (*hook)(obs, e, step);
          a = act(policy, seen, ActMode::kGreedy, rng);
        } else {
          a = act(policy, obs, ActMode::kGreedy, rng);
        }
        const EnvStep s = env->step(a);  // the env always sees true states
        total += s.reward;
        if (s.terminal) break;
      }
      res.per_episode[e] = total;
    } catch (const std::exception& ex) {
#pragma omp critical
      if (first_error.empty()) first_error = ex.what();
    }
  }
  if (!first_error.empty()) throw std::runtime_error("evaluate failed: " + first_error);

  double sum = 0.0;
  for (float r : res.per_episode) sum += r;
  res.mean = static_cast<float>(sum / episodes);
  return res;
}

EvalResult evaluate(const Policy& policy, const EnvDescriptor& desc, int episodes,
                    const AttackHook* hook) {
  EnvFactory factory = [&desc](int episode) {
    EnvDescriptor d = desc;
    d.seed = Rng::mix(desc.seed, "eval-episode", static_cast<uint64_t>(episode));
    return make_env(d);
  };
  return evaluate(policy, factory, episodes, hook);
}

}  // namespace snpx
