#include "snpx/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "snpx/nn.hpp"
#include "snpx/tape.hpp"

namespace snpx {

namespace {

float clip01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

bool all_zero(const Tensor& g) {
  for (int64_t i = 0; i < g.size(); ++i) {
    if (g[i] != 0.0f) return false;
  }
  return true;
}

float l1_norm(const Tensor& g) {
  // Fixed-order accumulation in double: crafting must be bit-reproducible.
  double s = 0.0;
  for (int64_t i = 0; i < g.size(); ++i) s += std::fabs(g[i]);
  return static_cast<float>(s);
}

float l2_norm(const Tensor& g) {
  double s = 0.0;
  for (int64_t i = 0; i < g.size(); ++i) s += static_cast<double>(g[i]) * g[i];
  return static_cast<float>(std::sqrt(s));
}

void require_positive_eps(const AttackSpec& spec) {
  if (spec.epsilon <= 0.0f) {
    throw std::invalid_argument("crafting needs a positive perturbation budget");
  }
}

// One linf/l2 step of size `step` along direction g, then projection onto
// the eps-ball around x0 and the pixel box.
void apply_step(Tensor& x, const Tensor& g, const Tensor& x0, float step, float eps,
                NormKind norm) {
  const int64_t n = x.size();
  if (norm == NormKind::kLinf) {
    for (int64_t i = 0; i < n; ++i) {
      const float s = g[i] > 0.0f ? 1.0f : (g[i] < 0.0f ? -1.0f : 0.0f);
      float v = x[i] + step * s;
      v = std::clamp(v, x0[i] - eps, x0[i] + eps);
      x[i] = clip01(v);
    }
    return;
  }
  const float gn = l2_norm(g);
  if (gn == 0.0f) return;
  for (int64_t i = 0; i < n; ++i) x[i] += step * (g[i] / gn);
  // Radial projection back onto the l2 ball around the original state.
  double d2 = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(x[i]) - x0[i];
    d2 += d * d;
  }
  const float dist = static_cast<float>(std::sqrt(d2));
  if (dist > eps) {
    const float scale = eps / dist;
    for (int64_t i = 0; i < n; ++i) x[i] = x0[i] + (x[i] - x0[i]) * scale;
  }
  for (int64_t i = 0; i < n; ++i) x[i] = clip01(x[i]);
}

}  // namespace

std::string method_name(AttackMethod m) {
  switch (m) {
    case AttackMethod::kFgm:
      return "fgm";
    case AttackMethod::kMifgm:
      return "mifgm";
    case AttackMethod::kUniformNoise:
      return "uniform_noise";
  }
  throw std::invalid_argument("unknown attack method value");
}

AttackMethod method_from_name(const std::string& name) {
  if (name == "fgm") return AttackMethod::kFgm;
  if (name == "mifgm") return AttackMethod::kMifgm;
  if (name == "uniform_noise") return AttackMethod::kUniformNoise;
  throw std::invalid_argument("unknown attack method: " + name);
}

std::string norm_name(NormKind n) {
  return n == NormKind::kLinf ? "linf" : "l2";
}

NormKind norm_from_name(const std::string& name) {
  if (name == "linf") return NormKind::kLinf;
  if (name == "l2") return NormKind::kL2;
  throw std::invalid_argument("unknown norm: " + name);
}

void AttackSpec::validate() const {
  if (epsilon < 0.0f) throw std::invalid_argument("epsilon must be >= 0");
  if (momentum < 0.0f) throw std::invalid_argument("momentum must be >= 0");
  if (method == AttackMethod::kMifgm) {
    if (steps < 2) throw std::invalid_argument("mifgm needs steps >= 2");
  } else if (steps != 1) {
    throw std::invalid_argument("steps != 1 is meaningful only for mifgm");
  }
}

PseudoLabel pseudo_label_from_logits(const Tensor& logits) {
  PseudoLabel out;
  out.classifier = true;
  out.target = one_hot(argmax(logits), static_cast<int>(logits.size()));
  return out;
}

PseudoLabel pseudo_label_from_regression(const Tensor& output, float c_small) {
  PseudoLabel out;
  out.classifier = false;
  out.target = output;
  for (int64_t i = 0; i < out.target.size(); ++i) out.target[i] += c_small;
  return out;
}

PseudoLabel pseudo_label(const Policy& p, const Tensor& x) {
  return pseudo_label_from_logits(policy_scores(p, x));
}

PseudoLabel pseudo_label(const ProxyModel& m, const Tensor& x) {
  switch (m.kind) {
    case ProxyKind::kImitator:
      return pseudo_label_from_logits(m.net->predict(x));
    case ProxyKind::kAssessor:
      return pseudo_label_from_regression(m.net->predict(x));
    case ProxyKind::kPsychic:
      return pseudo_label_from_regression(m.frame_net->predict_frame(x));
    case ProxyKind::kAcPsychic:
      break;
  }
  throw std::invalid_argument(
      "the action-conditioned psychic is a timing oracle, not a crafting source");
}

CraftSource source_from_policy(const Policy& p, std::string name) {
  if (!p.q && !p.pv) {
    throw std::invalid_argument("crafting needs a network-backed policy");
  }
  CraftSource src;
  src.name = std::move(name);
  src.eval = [&p](const Tensor& x, Tensor& grad) {
    Tape t;
    const int xin = t.input(x);
    int scores;
    if (p.q) {
      ParamBinder bind(t, p.q->params());
      scores = p.q->forward(t, xin, bind);
    } else {
      ParamBinder bind(t, p.pv->params());
      scores = p.pv->forward(t, xin, bind).logits;
    }
    const int label = t.input(one_hot(argmax(t.value(scores)), p.actions));
    const int loss = t.cross_entropy(scores, label);
    t.backward(loss);
    grad = t.grad(xin);
    return t.value(loss)[0];
  };
  return src;
}

CraftSource source_from_proxy(const ProxyModel& m) {
  CraftSource src;
  src.name = proxy_kind_name(m.kind);
  switch (m.kind) {
    case ProxyKind::kImitator:
      src.eval = [&m](const Tensor& x, Tensor& grad) {
        Tape t;
        ParamBinder bind(t, m.net->params());
        const int xin = t.input(x);
        const int logits = m.net->forward(t, xin, bind);
        const int label =
            t.input(one_hot(argmax(t.value(logits)), m.net->out_dim()));
        const int loss = t.cross_entropy(logits, label);
        t.backward(loss);
        grad = t.grad(xin);
        return t.value(loss)[0];
      };
      return src;
    case ProxyKind::kAssessor:
      src.eval = [&m](const Tensor& x, Tensor& grad) {
        Tape t;
        ParamBinder bind(t, m.net->params());
        const int xin = t.input(x);
        const int pred = m.net->forward(t, xin, bind);
        Tensor target = t.value(pred);
        for (int64_t i = 0; i < target.size(); ++i) target[i] += kCSmall;
        const int loss = t.huber(pred, t.input(target), 1.0f);
        t.backward(loss);
        grad = t.grad(xin);
        return t.value(loss)[0];
      };
      return src;
    case ProxyKind::kPsychic:
      src.eval = [&m](const Tensor& x, Tensor& grad) {
        Tape t;
        ParamBinder bind(t, m.frame_net->params());
        const int xin = t.input(x);
        const int pred = m.frame_net->forward(t, xin, bind);
        Tensor target = t.value(pred);
        for (int64_t i = 0; i < target.size(); ++i) target[i] += kCSmall;
        // The tape's l2_loss halves the mean square; the crafting objective
        // is the plain mean, so it starts at exactly mean(kCSmall^2).
        const int loss = t.scale(t.l2_loss(pred, t.input(target)), 2.0f);
        t.backward(loss);
        grad = t.grad(xin);
        return t.value(loss)[0];
      };
      return src;
    case ProxyKind::kAcPsychic:
      break;
  }
  throw std::invalid_argument(
      "the action-conditioned psychic is a timing oracle, not a crafting source");
}

Tensor fgm(const CraftSource& src, const Tensor& x, const AttackSpec& spec,
           bool* zero_grad) {
  require_positive_eps(spec);
  if (zero_grad) *zero_grad = false;
  Tensor grad;
  src.eval(x, grad);
  Tensor out = x;
  if (all_zero(grad)) {
    if (zero_grad) *zero_grad = true;
    return out;
  }
  apply_step(out, grad, x, spec.epsilon, spec.epsilon, spec.norm);
  return out;
}

Tensor mifgm(const CraftSource& src, const Tensor& x, const AttackSpec& spec,
             bool* zero_grad) {
  require_positive_eps(spec);
  if (spec.steps < 1) throw std::invalid_argument("mifgm needs steps >= 1");
  if (zero_grad) *zero_grad = false;

  Tensor out = x;
  Tensor velocity(x.shape());
  Tensor grad;
  bool moved = false;
  const float step = spec.epsilon / static_cast<float>(spec.steps);
  for (int t = 0; t < spec.steps; ++t) {
    src.eval(out, grad);
    const float gn = l1_norm(grad);
    for (int64_t i = 0; i < velocity.size(); ++i) {
      velocity[i] = spec.momentum * velocity[i] + (gn > 0.0f ? grad[i] / gn : 0.0f);
    }
    if (all_zero(velocity)) {
      if (moved) break;           // momentum spent; keep what we have
      continue;                   // nothing to follow yet
    }
    apply_step(out, velocity, x, step, spec.epsilon, spec.norm);
    moved = true;
  }
  if (!moved && zero_grad) *zero_grad = true;
  return out;
}

Tensor uniform_noise(const Tensor& x, float epsilon, NormKind norm, uint64_t seed) {
  if (epsilon <= 0.0f) {
    throw std::invalid_argument("crafting needs a positive perturbation budget");
  }
  Rng rng(seed);
  Tensor out = x;
  const int64_t n = x.size();
  if (norm == NormKind::kLinf) {
    for (int64_t i = 0; i < n; ++i) {
      out[i] = clip01(x[i] + rng.uniform(-epsilon, epsilon));
    }
    return out;
  }
  Tensor dir(x.shape());
  for (int64_t i = 0; i < n; ++i) dir[i] = rng.normal();
  const float dn = l2_norm(dir);
  if (dn == 0.0f) return out;  // astronomically unlikely; keep x
  for (int64_t i = 0; i < n; ++i) out[i] = clip01(x[i] + epsilon * (dir[i] / dn));
  return out;
}

AttackHook make_attack_hook(const CraftSource& src, const AttackSpec& spec) {
  spec.validate();
  if (spec.epsilon == 0.0f) {
    return [](const Tensor& s, int, int) { return s; };
  }
  if (spec.method == AttackMethod::kUniformNoise) {
    throw std::invalid_argument("uniform noise takes no crafting source; "
                                "use make_noise_hook");
  }
  const CraftSource copy = src;
  if (spec.method == AttackMethod::kFgm) {
    return [copy, spec](const Tensor& s, int, int) { return fgm(copy, s, spec); };
  }
  return [copy, spec](const Tensor& s, int, int) { return mifgm(copy, s, spec); };
}

AttackHook make_noise_hook(const AttackSpec& spec, uint64_t seed) {
  spec.validate();
  if (spec.method != AttackMethod::kUniformNoise) {
    throw std::invalid_argument("make_noise_hook expects the uniform_noise method");
  }
  if (spec.epsilon == 0.0f) {
    return [](const Tensor& s, int, int) { return s; };
  }
  const float eps = spec.epsilon;
  const NormKind norm = spec.norm;
  return [eps, norm, seed](const Tensor& s, int, int) {
    return uniform_noise(s, eps, norm, state_hash(s) ^ seed);
  };
}

float linf_dist(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw std::invalid_argument("size mismatch");
  float m = 0.0f;
  for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

float l2_dist(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw std::invalid_argument("size mismatch");
  double s = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return static_cast<float>(std::sqrt(s));
}

uint64_t state_hash(const Tensor& t) {
  uint64_t h = 0xcbf29ce484222325ull;
  const unsigned char* bytes = reinterpret_cast<const unsigned char*>(t.data());
  const size_t n = sizeof(float) * static_cast<size_t>(t.size());
  for (size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace snpx
