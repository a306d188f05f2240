#pragma once

#include <functional>
#include <string>
#include <vector>

#include "snpx/agents.hpp"
#include "snpx/attacks.hpp"
#include "snpx/tensor.hpp"

namespace snpx {

// Per-pixel relevance scores for one state under one model; same spatial
// shape as a frame, all entries nonnegative.
struct SaliencyMap {
  int h = 0;
  int w = 0;
  std::vector<float> scores;

  float at(int i, int j) const { return scores[static_cast<size_t>(i) * w + j]; }
  float total() const;
};

// Any state -> output-vector view of a model. Saliency only needs forward
// evaluations, so policies and proxies plug in through the same signature.
using ModelOutput = std::function<Tensor(const Tensor&)>;

ModelOutput output_of(const Policy& p);
ModelOutput output_of(const ProxyModel& m);  // ac-psychic rejected (needs an action)

// Perturbation saliency: for each stride-sampled location of the newest
// frame, softly replace a sigma-wide neighborhood with its Gaussian-blurred
// version and score S(i,j) = 0.5 * |out(s) - out(s_blurred)|^2. Off-grid
// pixels take their nearest sampled score. Deterministic; blur is an exact
// identity on constant regions (border-renormalized kernel).
SaliencyMap saliency(const ModelOutput& out, const Tensor& state, float sigma = 2.0f,
                     int stride = 2);

// Fraction of total saliency mass carried by `pixels` (pairs of row, col),
// divided by the fraction a uniform map would give them. 1 = no concentration.
float mass_ratio(const SaliencyMap& map, const std::vector<std::pair<int, int>>& pixels);

// Cosine statistics between two crafting gradients over a state sample.
struct AlignmentReport {
  std::vector<float> cosines;  // one per usable state, in input order
  int zero_grad_states = 0;    // excluded: either side's gradient vanished
  float mean = 0.0f;
  float median = 0.0f;
  float stddev = 0.0f;
};

// Per-state cosine between the proxy's and the target's input gradients,
// each taken through its own crafting loss with its own frozen pseudo-label.
AlignmentReport gradient_alignment(const CraftSource& proxy, const CraftSource& target,
                                   const std::vector<Tensor>& states);

// States drawn from the policy's own greedy rollouts, for alignment and
// saliency sampling. Deterministic in (desc, seed).
std::vector<Tensor> rollout_states(const Policy& p, const EnvDescriptor& desc, int n,
                                   uint64_t seed);

// One completed evaluation cell of an attack sweep.
struct SweepCell {
  std::string env;
  std::string agent_algo;     // dqn | ppo
  std::string attack_source;  // surrogate|imitator|assessor|psychic|uniform_noise|none|random_policy
  std::string method;         // fgm | mifgm | uniform_noise | none
  std::string norm;           // linf | l2 | none
  float epsilon = 0.0f;
  EvalResult result;
};

struct SweepTable {
  std::vector<SweepCell> rows;  // deterministically ordered
};

// Validates and orders sweep results: every (env, agent) group must carry a
// clean row (source "none", epsilon 0) and a "random_policy" reference row;
// source/method/norm names must come from the fixed vocabularies; each row's
// mean must equal the average of its per-episode column. Pure: the same cells
// always aggregate to the same table.
SweepTable aggregate_sweep(std::vector<SweepCell> cells);

}  // namespace snpx
