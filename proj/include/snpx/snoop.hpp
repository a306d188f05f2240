#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "snpx/agents.hpp"
#include "snpx/env.hpp"
#include "snpx/nn.hpp"
#include "snpx/rng.hpp"
#include "snpx/tensor.hpp"

namespace snpx {

// Which signals the eavesdropper can read off the wire. S: states only;
// R adds rewards; A adds actions.
enum class ThreatModel { S, SR, SA, SRA };

constexpr bool snoops_rewards(ThreatModel t) {
  return t == ThreatModel::SR || t == ThreatModel::SRA;
}
constexpr bool snoops_actions(ThreatModel t) {
  return t == ThreatModel::SA || t == ThreatModel::SRA;
}

std::string threat_name(ThreatModel t);
ThreatModel threat_from_name(const std::string& name);

// Capacity-bounded store of eavesdropped steps. Signals outside the threat
// model are not merely hidden — the accessors and fill calls for them do not
// exist on this type, so reading a forbidden field cannot compile. States
// are stored one frame per record and stacks are rebuilt on access, mirroring
// the environments' reset padding.
template <ThreatModel TM>
class SnoopBuffer {
 public:
  explicit SnoopBuffer(int grid, int stack = 4) : grid_(grid), stack_(stack) {
    if (grid < 1 || stack < 1) throw std::invalid_argument("bad snoop geometry");
  }

  int size() const { return n_; }
  int grid() const { return grid_; }
  int stack() const { return stack_; }

  void clear() {
    n_ = 0;
    state_frames_.clear();
    next_frames_.clear();
    starts_.clear();
    ends_.clear();
    rewards_.clear();
    actions_.clear();
  }

  // Producer side: one call per observed step, in rollout order. Records win
  // exactly the fields the threat model exposes.
  void add(const float* state_frame, const float* next_frame, bool episode_start,
           bool episode_end)
    requires(TM == ThreatModel::S)
  {
    add_base(state_frame, next_frame, episode_start, episode_end);
  }
  void add(const float* state_frame, const float* next_frame, bool episode_start,
           bool episode_end, float reward)
    requires(TM == ThreatModel::SR)
  {
    add_base(state_frame, next_frame, episode_start, episode_end);
    rewards_.push_back(reward);
  }
  void add(const float* state_frame, const float* next_frame, bool episode_start,
           bool episode_end, int action)
    requires(TM == ThreatModel::SA)
  {
    add_base(state_frame, next_frame, episode_start, episode_end);
    actions_.push_back(action);
  }
  void add(const float* state_frame, const float* next_frame, bool episode_start,
           bool episode_end, float reward, int action)
    requires(TM == ThreatModel::SRA)
  {
    add_base(state_frame, next_frame, episode_start, episode_end);
    rewards_.push_back(reward);
    actions_.push_back(action);
  }

  // Rebuilt 4-frame stack the agent saw at record i.
  Tensor state(int i) const {
    check(i);
    Tensor out({stack_, grid_, grid_});
    int j = i;
    for (int k = stack_ - 1; k >= 0; --k) {
      std::memcpy(out.data() + static_cast<size_t>(k) * frame_sz(),
                  state_frames_.data() + static_cast<size_t>(j) * frame_sz(),
                  sizeof(float) * frame_sz());
      if (!starts_[j]) --j;
    }
    return out;
  }

  // The stack one step later: state(i) shifted left plus the next frame.
  Tensor next_state(int i) const {
    check(i);
    Tensor out = state(i);
    std::memmove(out.data(), out.data() + frame_sz(),
                 sizeof(float) * frame_sz() * (stack_ - 1));
    std::memcpy(out.data() + static_cast<size_t>(stack_ - 1) * frame_sz(),
                next_frames_.data() + static_cast<size_t>(i) * frame_sz(),
                sizeof(float) * frame_sz());
    return out;
  }

  // Newest frame of s_{t+1}: the frame-prediction target.
  const float* next_frame(int i) const {
    check(i);
    return next_frames_.data() + static_cast<size_t>(i) * frame_sz();
  }

  bool episode_start(int i) const {
    check(i);
    return starts_[i] != 0;
  }
  bool episode_end(int i) const {
    check(i);
    return ends_[i] != 0;
  }

  float reward(int i) const
    requires(snoops_rewards(TM))
  {
    check(i);
    return rewards_[i];
  }
  int action(int i) const
    requires(snoops_actions(TM))
  {
    check(i);
    return actions_[i];
  }

 private:
  size_t frame_sz() const { return static_cast<size_t>(grid_) * grid_; }

  void check(int i) const {
    if (i < 0 || i >= n_) throw std::out_of_range("snoop record index");
  }

  void add_base(const float* state_frame, const float* next_frame, bool start,
                bool end) {
    state_frames_.insert(state_frames_.end(), state_frame, state_frame + frame_sz());
    next_frames_.insert(next_frames_.end(), next_frame, next_frame + frame_sz());
    starts_.push_back(start ? 1 : 0);
    ends_.push_back(end ? 1 : 0);
    ++n_;
  }

  int grid_, stack_, n_ = 0;
  std::vector<float> state_frames_, next_frames_;
  std::vector<uint8_t> starts_, ends_;
  std::vector<float> rewards_;
  std::vector<int> actions_;
};

// Observes the agent running its own greedy policy and transcribes whatever
// the threat model permits. The adversary drives nothing: every env call
// below corresponds to one step the agent itself takes.
template <ThreatModel TM>
SnoopBuffer<TM> snoop_collect(const Policy& agent, Env& env, int n_records) {
  if (n_records < 1) throw std::invalid_argument("n_records must be >= 1");
  const int g = env.grid();
  SnoopBuffer<TM> buf(g);
  Rng rng = Rng::substream(0x736e6f6fULL, "snoop-act");  // greedy: draws unused
  const size_t off = static_cast<size_t>(3) * g * g;
  env.reset();
  while (buf.size() < n_records) {
    const Tensor& obs = env.observation();
    const bool start = env.episode_step() == 0;
    std::vector<float> frame(obs.data() + off, obs.data() + off + g * g);
    const int a = act(agent, obs, ActMode::kGreedy, rng);
    const EnvStep s = env.step(a);
    const float* next = env.observation().data() + off;
    if constexpr (TM == ThreatModel::S) {
      buf.add(frame.data(), next, start, s.terminal);
    } else if constexpr (TM == ThreatModel::SR) {
      buf.add(frame.data(), next, start, s.terminal, s.reward);
    } else if constexpr (TM == ThreatModel::SA) {
      buf.add(frame.data(), next, start, s.terminal, a);
    } else {
      buf.add(frame.data(), next, start, s.terminal, s.reward, a);
    }
    if (s.terminal) env.reset();
  }
  return buf;
}

enum class ProxyKind { kImitator, kAssessor, kPsychic, kAcPsychic };

std::string proxy_kind_name(ProxyKind k);
ProxyKind proxy_kind_from_name(const std::string& name);

// Which threat models can feed each proxy: the psychic needs only states,
// the assessor needs rewards, the imitator needs actions, and the
// action-conditioned psychic is paired with the assessor so it needs both.
constexpr bool kind_allows(ProxyKind k, ThreatModel t) {
  switch (k) {
    case ProxyKind::kImitator:
      return snoops_actions(t);
    case ProxyKind::kAssessor:
      return snoops_rewards(t);
    case ProxyKind::kPsychic:
      return true;
    case ProxyKind::kAcPsychic:
      return snoops_actions(t) && snoops_rewards(t);
  }
  return false;
}

// A trained eavesdropper model plus the bookkeeping needed to reuse its
// training loss as an attack objective.
struct ProxyModel {
  ProxyKind kind = ProxyKind::kImitator;
  ThreatModel threat = ThreatModel::SRA;
  std::vector<int> obs_shape;
  int actions = 3;
  std::unique_ptr<ProxyNet> net;         // imitator (logits) / assessor (value)
  std::unique_ptr<PsychicNet> frame_net; // psychic / ac_psychic
};

ProxyModel make_proxy_model(ProxyKind kind, ThreatModel threat,
                            std::vector<int> obs_shape, int actions, uint64_t seed);

struct ProxyTrainConfig {
  int buffer_records = 20000;
  int epochs = 30;            // per buffer refill
  int batch_size = 64;
  int64_t total_iterations = 250000;  // single-sample presentations overall
  float lr = 1e-3f;
  float gamma = 0.99f;        // return discount for assessor targets
  uint64_t seed = 2;

  void validate() const;
};

// Discounted suffix sums over one episode's rewards: G_t = sum_k gamma^k r_{t+k+1}.
std::vector<float> empirical_returns(const std::vector<float>& episode_rewards,
                                     float gamma);

struct ReturnsResult {
  std::vector<float> values;
  bool standardized = true;  // false: zero-variance buffer, values left raw
};

// Zero-mean unit-variance rescale across the whole buffer.
ReturnsResult standardize_returns(std::vector<float> all_returns);

namespace detail {

// Shared minibatch/epoch engine. make_loss builds one sample's loss node on
// a fresh tape; returns per-epoch mean losses. Stops early once `budget`
// sample presentations are spent; budget is decremented in place.
std::vector<float> fit_epochs(
    ParamStore& store, int n_samples, int epochs, int batch_size, float lr,
    int64_t& budget, Rng& rng,
    const std::function<int(Tape&, ParamBinder&, int sample)>& make_loss);

// Assessor regression targets for a buffer: per-episode empirical returns,
// standardized buffer-wide. Partial trailing episodes keep their truncated
// suffix sums.
ReturnsResult assessor_targets(const std::vector<float>& rewards,
                               const std::vector<uint8_t>& ends, float gamma);

}  // namespace detail

// ---- single-cycle trainers over a frozen buffer ----
// Each consumes `budget` presentations (capped by cfg.total_iterations when
// called standalone) and appends per-epoch losses if asked.

template <ThreatModel TM>
  requires(snoops_actions(TM))
std::vector<float> fit_imitator(ProxyModel& m, const SnoopBuffer<TM>& buf,
                                const ProxyTrainConfig& cfg, int64_t& budget, Rng& rng) {
  auto loss = [&](Tape& t, ParamBinder& bind, int i) {
    const int logits = m.net->forward(t, t.input(buf.state(i)), bind);
    return t.cross_entropy(logits, t.input(one_hot(buf.action(i), m.actions)));
  };
  return detail::fit_epochs(m.net->params(), buf.size(), cfg.epochs, cfg.batch_size,
                            cfg.lr, budget, rng, loss);
}

template <ThreatModel TM>
  requires(snoops_rewards(TM))
std::vector<float> fit_assessor(ProxyModel& m, const SnoopBuffer<TM>& buf,
                                const ProxyTrainConfig& cfg, int64_t& budget, Rng& rng) {
  std::vector<float> rewards(buf.size());
  std::vector<uint8_t> ends(buf.size());
  for (int i = 0; i < buf.size(); ++i) {
    rewards[i] = buf.reward(i);
    ends[i] = buf.episode_end(i) ? 1 : 0;
  }
  const ReturnsResult targets = detail::assessor_targets(rewards, ends, cfg.gamma);
  auto loss = [&, targets](Tape& t, ParamBinder& bind, int i) {
    const int pred = m.net->forward(t, t.input(buf.state(i)), bind);
    Tensor y({1});
    y[0] = targets.values[i];
    return t.huber(pred, t.input(y), 1.0f);
  };
  return detail::fit_epochs(m.net->params(), buf.size(), cfg.epochs, cfg.batch_size,
                            cfg.lr, budget, rng, loss);
}

template <ThreatModel TM>
std::vector<float> fit_psychic(ProxyModel& m, const SnoopBuffer<TM>& buf,
                               const ProxyTrainConfig& cfg, int64_t& budget, Rng& rng) {
  const int g = buf.grid();
  auto loss = [&, g](Tape& t, ParamBinder& bind, int i) {
    const int pred = m.frame_net->forward(t, t.input(buf.state(i)), bind);
    Tensor target({1, g, g});
    std::memcpy(target.data(), buf.next_frame(i),
                sizeof(float) * static_cast<size_t>(g) * g);
    return t.l2_loss(pred, t.input(target));
  };
  return detail::fit_epochs(m.frame_net->params(), buf.size(), cfg.epochs,
                            cfg.batch_size, cfg.lr, budget, rng, loss);
}

template <ThreatModel TM>
  requires(TM == ThreatModel::SRA)
std::vector<float> fit_ac_psychic(ProxyModel& m, const SnoopBuffer<TM>& buf,
                                  const ProxyTrainConfig& cfg, int64_t& budget,
                                  Rng& rng) {
  const int g = buf.grid();
  auto loss = [&, g](Tape& t, ParamBinder& bind, int i) {
    const int pred =
        m.frame_net->forward(t, t.input(buf.state(i)), bind, buf.action(i));
    Tensor target({1, g, g});
    std::memcpy(target.data(), buf.next_frame(i),
                sizeof(float) * static_cast<size_t>(g) * g);
    return t.l2_loss(pred, t.input(target));
  };
  return detail::fit_epochs(m.frame_net->params(), buf.size(), cfg.epochs,
                            cfg.batch_size, cfg.lr, budget, rng, loss);
}

// ---- the spec-shaped single-buffer entry points ----

template <ThreatModel TM>
  requires(snoops_actions(TM))
ProxyModel train_imitator(const SnoopBuffer<TM>& buf, const ProxyTrainConfig& cfg) {
  cfg.validate();
  ProxyModel m = make_proxy_model(ProxyKind::kImitator, TM, {buf.stack(), buf.grid(), buf.grid()},
                                  3, cfg.seed);
  int64_t budget = cfg.total_iterations;
  Rng rng = Rng::substream(cfg.seed, "fit-imitator");
  fit_imitator(m, buf, cfg, budget, rng);
  return m;
}

template <ThreatModel TM>
  requires(snoops_rewards(TM))
ProxyModel train_assessor(const SnoopBuffer<TM>& buf, const ProxyTrainConfig& cfg) {
  cfg.validate();
  ProxyModel m = make_proxy_model(ProxyKind::kAssessor, TM, {buf.stack(), buf.grid(), buf.grid()},
                                  3, cfg.seed);
  int64_t budget = cfg.total_iterations;
  Rng rng = Rng::substream(cfg.seed, "fit-assessor");
  fit_assessor(m, buf, cfg, budget, rng);
  return m;
}

template <ThreatModel TM>
ProxyModel train_psychic(const SnoopBuffer<TM>& buf, const ProxyTrainConfig& cfg) {
  cfg.validate();
  ProxyModel m = make_proxy_model(ProxyKind::kPsychic, TM, {buf.stack(), buf.grid(), buf.grid()},
                                  0, cfg.seed);
  int64_t budget = cfg.total_iterations;
  Rng rng = Rng::substream(cfg.seed, "fit-psychic");
  fit_psychic(m, buf, cfg, budget, rng);
  return m;
}

template <ThreatModel TM>
  requires(TM == ThreatModel::SRA)
ProxyModel train_ac_psychic(const SnoopBuffer<TM>& buf, const ProxyTrainConfig& cfg) {
  cfg.validate();
  ProxyModel m = make_proxy_model(ProxyKind::kAcPsychic, TM, {buf.stack(), buf.grid(), buf.grid()},
                                  3, cfg.seed);
  int64_t budget = cfg.total_iterations;
  Rng rng = Rng::substream(cfg.seed, "fit-ac-psychic");
  fit_ac_psychic(m, buf, cfg, budget, rng);
  return m;
}

struct ProxyTrainResult {
  ProxyModel model;
  std::vector<float> epoch_losses;  // across all refill cycles
};

// The refill pipeline: {snoop a fresh buffer off the agent's own rollouts,
// train `epochs` epochs at `batch_size`} until the presentation budget is
// spent. Each refill observes a fresh env seeded from a per-cycle substream.
template <ThreatModel TM>
ProxyTrainResult train_proxy(ProxyKind kind, const Policy& agent,
                             const EnvDescriptor& env_desc, const ProxyTrainConfig& cfg) {
  cfg.validate();
  if (!kind_allows(kind, TM)) {
    throw std::invalid_argument("proxy '" + proxy_kind_name(kind) +
                                "' is not trainable under threat model " +
                                threat_name(TM));
  }
  ProxyTrainResult out;
  out.model = make_proxy_model(
      kind, TM, {4, env_desc.grid, env_desc.grid},
      kind == ProxyKind::kPsychic ? 0 : 3, cfg.seed);
  Rng rng = Rng::substream(cfg.seed, "proxy-pipeline");
  int64_t budget = cfg.total_iterations;
  for (uint64_t cycle = 0; budget > 0; ++cycle) {
    EnvDescriptor d = env_desc;
    d.seed = Rng::mix(cfg.seed, "snoop-refill", cycle);
    auto env = make_env(d);
    SnoopBuffer<TM> buf = snoop_collect<TM>(agent, *env, cfg.buffer_records);
    std::vector<float> losses;
    if constexpr (snoops_actions(TM)) {
      if (kind == ProxyKind::kImitator) {
        losses = fit_imitator(out.model, buf, cfg, budget, rng);
      }
    }
    if constexpr (snoops_rewards(TM)) {
      if (kind == ProxyKind::kAssessor) {
        losses = fit_assessor(out.model, buf, cfg, budget, rng);
      }
    }
    if (kind == ProxyKind::kPsychic) {
      losses = fit_psychic(out.model, buf, cfg, budget, rng);
    }
    if constexpr (TM == ThreatModel::SRA) {
      if (kind == ProxyKind::kAcPsychic) {
        losses = fit_ac_psychic(out.model, buf, cfg, budget, rng);
      }
    }
    out.epoch_losses.insert(out.epoch_losses.end(), losses.begin(), losses.end());
  }
  return out;
}

// ---- held-out quality metrics ----

template <ThreatModel TM>
  requires(snoops_actions(TM))
float imitator_agreement(const ProxyModel& m, const SnoopBuffer<TM>& heldout) {
  int hits = 0;
  for (int i = 0; i < heldout.size(); ++i) {
    if (argmax(m.net->predict(heldout.state(i))) == heldout.action(i)) ++hits;
  }
  return static_cast<float>(hits) / static_cast<float>(heldout.size());
}

template <ThreatModel TM>
  requires(snoops_rewards(TM))
float assessor_pearson(const ProxyModel& m, const SnoopBuffer<TM>& heldout, float gamma) {
  const int n = heldout.size();
  std::vector<float> rewards(n);
  std::vector<uint8_t> ends(n);
  for (int i = 0; i < n; ++i) {
    rewards[i] = heldout.reward(i);
    ends[i] = heldout.episode_end(i) ? 1 : 0;
  }
  const ReturnsResult targets = detail::assessor_targets(rewards, ends, gamma);
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    const double x = m.net->predict(heldout.state(i))[0];
    const double y = targets.values[i];
    sx += x;
    sy += y;
    sxx += x * x;
    syy += y * y;
    sxy += x * y;
  }
  const double cov = sxy / n - (sx / n) * (sy / n);
  const double vx = sxx / n - (sx / n) * (sx / n);
  const double vy = syy / n - (sy / n) * (sy / n);
  if (vx <= 0 || vy <= 0) return 0.0f;
  return static_cast<float>(cov / std::sqrt(vx * vy));
}

struct PsychicMse {
  float model = 0.0f;
  float copy_last = 0.0f;  // predict-nothing-changes baseline
};

// Lets psychic_mse stay one template while the action accessor only exists
// on action-bearing buffers.
template <ThreatModel TM>
int heldout_action(const SnoopBuffer<TM>& buf, int i) {
  if constexpr (snoops_actions(TM)) {
    return buf.action(i);
  } else {
    (void)buf;
    (void)i;
    throw std::logic_error("action-conditioned metric on an action-free buffer");
  }
}

template <ThreatModel TM>
PsychicMse psychic_mse(const ProxyModel& m, const SnoopBuffer<TM>& heldout) {
  const int g = heldout.grid();
  const size_t fs = static_cast<size_t>(g) * g;
  double model_acc = 0.0, copy_acc = 0.0;
  for (int i = 0; i < heldout.size(); ++i) {
    const Tensor state = heldout.state(i);
    const Tensor pred = m.kind == ProxyKind::kAcPsychic
                            ? m.frame_net->predict_frame(state, heldout_action(heldout, i))
                            : m.frame_net->predict_frame(state);
    const float* truth = heldout.next_frame(i);
    const float* last = state.data() + (heldout.stack() - 1) * fs;
    for (size_t p = 0; p < fs; ++p) {
      const double dm = pred[static_cast<int64_t>(p)] - truth[p];
      const double dc = last[p] - truth[p];
      model_acc += dm * dm;
      copy_acc += dc * dc;
    }
  }
  const double denom = static_cast<double>(heldout.size()) * fs;
  return {static_cast<float>(model_acc / denom), static_cast<float>(copy_acc / denom)};
}

}  // namespace snpx
