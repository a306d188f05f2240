#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "snpx/agents.hpp"
#include "snpx/env.hpp"
#include "snpx/snoop.hpp"
#include "snpx/tensor.hpp"

namespace snpx {

// When to spend the perturbation budget: always, at a fixed random rate, or
// only when the preference signal crosses a threshold.
enum class TimingKind { kEveryStep, kRandomRate, kPreferenceThreshold };
enum class PreferenceSource { kAcpAssessor, kSurrogateQ };

std::string timing_kind_name(TimingKind k);
TimingKind timing_kind_from_name(const std::string& name);
std::string preference_source_name(PreferenceSource s);
PreferenceSource preference_source_from_name(const std::string& name);

struct TimingStrategy {
  TimingKind kind = TimingKind::kEveryStep;
  float rate = 1.0f;  // random-rate probability p
  float beta = 0.0f;  // preference threshold; 1.0 means "never fires"
  PreferenceSource source = PreferenceSource::kAcpAssessor;

  void validate() const;
};

// How much the agent is presumed to care about this state: the softmax
// spread max_a Softmax(q)_a - min_a Softmax(q)_a. Computed with
// max-subtraction and clamped to [0, 1) so a saturated spread still admits a
// never-fire threshold of 1.
float preference_from_values(const Tensor& q);

// Eavesdropper's preference: roll each action through the action-conditioned
// psychic, value every hypothetical next state with the assessor, and spread
// the resulting values. Both proxies must come from an SRA snoop.
float preference_acp(const ProxyModel& assessor, const ProxyModel& ac_psychic,
                     const Tensor& state, int action_count);

// White-box comparison baseline: the same spread over a surrogate's own
// action scores.
float preference_surrogate(const Policy& surrogate, const Tensor& state);

using PreferenceFn = std::function<float(const Tensor& state)>;

PreferenceFn make_acp_preference(const ProxyModel& assessor,
                                 const ProxyModel& ac_psychic, int action_count);
PreferenceFn make_surrogate_preference(const Policy& surrogate);

// Threshold hitting a requested firing rate on held-out states: the
// (1 - target_rate) quantile of c. Needs at least min_states samples; a
// constant c distribution cannot be calibrated and throws.
float calibrate_beta(const PreferenceFn& preference, const std::vector<Tensor>& states,
                     float target_rate, size_t min_states = 1000);

struct TimedStepRecord {
  int64_t step = 0;
  float c = 0.0f;        // meaningful only when c_computed
  bool c_computed = false;
  bool attacked = false;
  int action = 0;
  float reward = 0.0f;
};

struct TimedAttackLog {
  std::vector<TimedStepRecord> steps;
  int64_t episodes_completed = 0;

  float attack_rate() const;
  double total_reward() const;
  // Reward normalized per completed episode; total/steps if none completed.
  double reward_per_episode() const;
};

// Algorithm-1 loop: run the target greedily for total_steps, perturbing its
// view (never the environment) whenever the strategy fires. `preference` is
// required for the threshold strategy and ignored otherwise.
TimedAttackLog run_timed_attack(const Policy& target, const EnvDescriptor& env_desc,
                                const TimingStrategy& strategy,
                                const AttackHook& crafting, int64_t total_steps,
                                uint64_t seed,
                                const PreferenceFn& preference = nullptr);

}  // namespace snpx
