#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "snpx/agents.hpp"
#include "snpx/snoop.hpp"
#include "snpx/tensor.hpp"

namespace snpx {

enum class AttackMethod { kFgm, kMifgm, kUniformNoise };
enum class NormKind { kLinf, kL2 };

std::string method_name(AttackMethod m);
AttackMethod method_from_name(const std::string& name);
std::string norm_name(NormKind n);
NormKind norm_from_name(const std::string& name);

// Observation-perturbation recipe. epsilon == 0 is legal only as a hook spec
// (it produces the identity hook); the crafting ops themselves demand a
// positive budget.
struct AttackSpec {
  AttackMethod method = AttackMethod::kFgm;
  NormKind norm = NormKind::kLinf;
  float epsilon = 0.03f;
  int steps = 1;          // T; meaningful for mifgm only
  float momentum = 1.0f;  // mu; meaningful for mifgm only

  void validate() const;
};

// Offset added to a regressor's own output so the crafting loss never starts
// at an exact zero.
inline constexpr float kCSmall = 0.01f;

// Stand-in ground truth derived from the model's own output: classifiers
// label x with their argmax class, regressors with their output plus kCSmall.
struct PseudoLabel {
  Tensor target;
  bool classifier = false;
};

PseudoLabel pseudo_label_from_logits(const Tensor& logits);
PseudoLabel pseudo_label_from_regression(const Tensor& output, float c_small = kCSmall);
PseudoLabel pseudo_label(const Policy& p, const Tensor& x);
PseudoLabel pseudo_label(const ProxyModel& m, const Tensor& x);

// One crafting objective: evaluates J(x, pseudo-label(x)) with the label
// frozen from this same forward pass, writes dJ/dx into `grad` (resized to
// x's shape) and returns J. The wrapped model is captured by reference and
// must outlive every copy of the source.
struct CraftSource {
  std::string name;
  std::function<float(const Tensor& x, Tensor& grad)> eval;
};

CraftSource source_from_policy(const Policy& p, std::string name = "surrogate");
CraftSource source_from_proxy(const ProxyModel& m);

// Single-step gradient attack. linf: x + eps * sign(g); l2: x + eps * g/|g|_2;
// both clipped to pixel range [0,1]. A vanishing gradient returns x unchanged
// and sets *zero_grad when provided.
Tensor fgm(const CraftSource& src, const Tensor& x, const AttackSpec& spec,
           bool* zero_grad = nullptr);

// Momentum-iterative variant: velocity v <- mu * v + g/|g|_1, stepped at
// eps/T per iteration, re-projected onto the eps-ball around the original x
// and onto [0,1] after every step. steps == 1 degenerates to fgm's direction.
Tensor mifgm(const CraftSource& src, const Tensor& x, const AttackSpec& spec,
             bool* zero_grad = nullptr);

// Model-free reference perturbation. linf: i.i.d. U[-eps, eps] per pixel;
// l2: a uniformly random direction at radius eps. Deterministic in `seed`.
Tensor uniform_noise(const Tensor& x, float epsilon, NormKind norm, uint64_t seed);

// Wraps a crafting op as an evaluation hook. Stateless and pure: the same
// state always maps to the same perturbed state, and the episode/step
// arguments are ignored. epsilon == 0 gives the identity hook.
AttackHook make_attack_hook(const CraftSource& src, const AttackSpec& spec);

// Noise hook: pure as well — the per-state randomness is derived from a hash
// of the state's bytes mixed with `seed`.
AttackHook make_noise_hook(const AttackSpec& spec, uint64_t seed);

float linf_dist(const Tensor& a, const Tensor& b);
float l2_dist(const Tensor& a, const Tensor& b);

// FNV-1a over the tensor's raw bytes; the purity anchor for noise hooks.
uint64_t state_hash(const Tensor& t);

}  // namespace snpx
