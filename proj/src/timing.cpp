#include "snpx/timing.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace snpx {

std::string timing_kind_name(TimingKind k) {
  switch (k) {
    case TimingKind::kEveryStep:
      return "every_step";
    case TimingKind::kRandomRate:
      return "random_rate";
    case TimingKind::kPreferenceThreshold:
      return "preference_threshold";
  }
  throw std::invalid_argument("unknown timing kind value");
}

TimingKind timing_kind_from_name(const std::string& name) {
  if (name == "every_step") return TimingKind::kEveryStep;
  if (name == "random_rate") return TimingKind::kRandomRate;
  if (name == "preference_threshold") return TimingKind::kPreferenceThreshold;
  throw std::invalid_argument("unknown timing kind: " + name);
}

std::string preference_source_name(PreferenceSource s) {
  return s == PreferenceSource::kAcpAssessor ? "acp_assessor" : "surrogate_q";
}

PreferenceSource preference_source_from_name(const std::string& name) {
  if (name == "acp_assessor") return PreferenceSource::kAcpAssessor;
  if (name == "surrogate_q") return PreferenceSource::kSurrogateQ;
  throw std::invalid_argument("unknown preference source: " + name);
}

void TimingStrategy::validate() const {
  if (!(rate >= 0.0f && rate <= 1.0f)) {
    throw std::invalid_argument("random rate outside [0,1]");
  }
  if (!(beta >= 0.0f && beta <= 1.0f)) {
    throw std::invalid_argument("preference threshold outside [0,1]");
  }
}

float preference_from_values(const Tensor& q) {
  if (q.size() < 2) throw std::invalid_argument("preference needs >= 2 values");
  float hi = q[0];
  for (int64_t i = 1; i < q.size(); ++i) hi = std::max(hi, q[i]);
  double denom = 0.0;
  for (int64_t i = 0; i < q.size(); ++i) denom += std::exp(static_cast<double>(q[i] - hi));
  double pmax = 0.0, pmin = 1.0;
  for (int64_t i = 0; i < q.size(); ++i) {
    const double p = std::exp(static_cast<double>(q[i] - hi)) / denom;
    pmax = std::max(pmax, p);
    pmin = std::min(pmin, p);
  }
  const float c = static_cast<float>(pmax - pmin);
  // Strictly below 1 even when f32 rounding saturates the softmax, so a
  // threshold of 1 reliably never fires.
  return std::min(c, 0x1.fffffep-1f);
}

namespace {

// Hypothetical next observation: the stack shifted one frame with the
// predicted frame appended.
Tensor shift_stack(const Tensor& state, const Tensor& frame) {
  const auto& shape = state.shape();
  const int stack = shape[0];
  const size_t fs = static_cast<size_t>(shape[1]) * shape[2];
  Tensor out = state;
  std::memmove(out.data(), out.data() + fs, sizeof(float) * fs * (stack - 1));
  std::memcpy(out.data() + static_cast<size_t>(stack - 1) * fs, frame.data(),
              sizeof(float) * fs);
  return out;
}

}  // namespace

float preference_acp(const ProxyModel& assessor, const ProxyModel& ac_psychic,
                     const Tensor& state, int action_count) {
  if (assessor.kind != ProxyKind::kAssessor || !assessor.net) {
    throw std::invalid_argument("preference_acp needs a trained assessor");
  }
  if (ac_psychic.kind != ProxyKind::kAcPsychic || !ac_psychic.frame_net) {
    throw std::invalid_argument("preference_acp needs an action-conditioned psychic");
  }
  Tensor values({action_count});
  for (int a = 0; a < action_count; ++a) {
    const Tensor frame = ac_psychic.frame_net->predict_frame(state, a);
    const Tensor hypothetical = shift_stack(state, frame);
    values[a] = assessor.net->predict(hypothetical)[0];
  }
  return preference_from_values(values);
}

float preference_surrogate(const Policy& surrogate, const Tensor& state) {
  return preference_from_values(policy_scores(surrogate, state));
}

PreferenceFn make_acp_preference(const ProxyModel& assessor,
                                 const ProxyModel& ac_psychic, int action_count) {
  return [&assessor, &ac_psychic, action_count](const Tensor& s) {
    return preference_acp(assessor, ac_psychic, s, action_count);
  };
}

PreferenceFn make_surrogate_preference(const Policy& surrogate) {
  return [&surrogate](const Tensor& s) { return preference_surrogate(surrogate, s); };
}

float calibrate_beta(const PreferenceFn& preference, const std::vector<Tensor>& states,
                     float target_rate, size_t min_states) {
  if (!preference) throw std::invalid_argument("null preference function");
  if (states.size() < min_states) {
    throw std::invalid_argument("calibration needs at least " +
                                std::to_string(min_states) + " held-out states");
  }
  if (!(target_rate >= 0.0f && target_rate <= 1.0f)) {
    throw std::invalid_argument("target rate outside [0,1]");
  }
  std::vector<float> cs(states.size());
  for (size_t i = 0; i < states.size(); ++i) cs[i] = preference(states[i]);
  std::sort(cs.begin(), cs.end());
  if (cs.front() == cs.back()) {
    throw std::runtime_error("constant preference distribution cannot be calibrated");
  }
  const size_t n = cs.size();
  const size_t k = static_cast<size_t>(
      std::floor((1.0 - static_cast<double>(target_rate)) * static_cast<double>(n)));
  if (k >= n) {
    // target_rate == 0: one ulp above the sample maximum, so nothing fires.
    return std::nextafter(cs.back(), 2.0f);
  }
  return cs[k];
}

float TimedAttackLog::attack_rate() const {
  if (steps.empty()) return 0.0f;
  int64_t hit = 0;
  for (const TimedStepRecord& r : steps) hit += r.attacked ? 1 : 0;
  return static_cast<float>(hit) / static_cast<float>(steps.size());
}

double TimedAttackLog::total_reward() const {
  double s = 0.0;
  for (const TimedStepRecord& r : steps) s += r.reward;
  return s;
}

double TimedAttackLog::reward_per_episode() const {
  const double total = total_reward();
  if (episodes_completed == 0) {
    return steps.empty() ? 0.0 : total / static_cast<double>(steps.size());
  }
  return total / static_cast<double>(episodes_completed);
}

TimedAttackLog run_timed_attack(const Policy& target, const EnvDescriptor& env_desc,
                                const TimingStrategy& strategy,
                                const AttackHook& crafting, int64_t total_steps,
                                uint64_t seed, const PreferenceFn& preference) {
  strategy.validate();
  if (total_steps < 1) throw std::invalid_argument("total_steps must be >= 1");
  if (!crafting) throw std::invalid_argument("null crafting hook");
  if (strategy.kind == TimingKind::kPreferenceThreshold && !preference) {
    throw std::invalid_argument("threshold strategy needs a preference function");
  }

  EnvDescriptor d = env_desc;
  d.seed = Rng::mix(seed, "timed-env");
  auto env = make_env(d);
  Rng decide = Rng::substream(seed, "timed-decide");
  Rng act_rng = Rng::substream(seed, "timed-act");

  TimedAttackLog log;
  log.steps.reserve(static_cast<size_t>(total_steps));
  env->reset();
  for (int64_t step = 0; step < total_steps; ++step) {
    const Tensor& obs = env->observation();
    TimedStepRecord rec;
    rec.step = step;
    switch (strategy.kind) {
      case TimingKind::kEveryStep:
        rec.attacked = true;
        break;
      case TimingKind::kRandomRate:
        rec.attacked = decide.uniform() < strategy.rate;
        break;
      case TimingKind::kPreferenceThreshold:
        rec.c = preference(obs);
        rec.c_computed = true;
        rec.attacked = rec.c >= strategy.beta;
        break;
    }
    // The perturbation touches only the agent's view; the env keeps its own
    // true state.
    const int action = rec.attacked
                           ? act(target, crafting(obs, 0, static_cast<int>(step)),
                                 ActMode::kGreedy, act_rng)
                           : act(target, obs, ActMode::kGreedy, act_rng);
    const EnvStep s = env->step(action);
    rec.action = action;
    rec.reward = s.reward;
    log.steps.push_back(rec);
    if (s.terminal) {
      ++log.episodes_completed;
      env->reset();
    }
  }
  return log;
}

}  // namespace snpx
