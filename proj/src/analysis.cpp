#include "snpx/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <stdexcept>
#include <tuple>

#include "snpx/env.hpp"
#include "snpx/rng.hpp"

namespace snpx {

float SaliencyMap::total() const {
  double sum = 0.0;
  for (float s : scores) sum += s;
  return static_cast<float>(sum);
}

ModelOutput output_of(const Policy& p) {
  if (p.algorithm == "random")
    throw std::invalid_argument("random policy has no output to perturb");
  return [&p](const Tensor& s) { return policy_scores(p, s); };
}

ModelOutput output_of(const ProxyModel& m) {
  switch (m.kind) {
    case ProxyKind::kImitator:
    case ProxyKind::kAssessor:
      return [&m](const Tensor& s) { return m.net->predict(s); };
    case ProxyKind::kPsychic:
      return [&m](const Tensor& s) { return m.frame_net->predict_frame(s); };
    case ProxyKind::kAcPsychic:
      throw std::invalid_argument("ac-psychic output needs an action; bind one "
                                  "into a ModelOutput lambda explicitly");
  }
  throw std::logic_error("unreachable");
}

namespace {

// Gaussian blur of one h*w frame, kernel renormalized inside the grid so a
// constant region blurs to itself exactly (including at borders).
std::vector<float> blur_frame(const float* f, int h, int w, float sigma) {
  const int radius = static_cast<int>(std::ceil(3.0f * sigma));
  std::vector<float> kernel(2 * radius + 1);
  for (int d = -radius; d <= radius; ++d)
    kernel[d + radius] = std::exp(-static_cast<float>(d * d) / (2.0f * sigma * sigma));

  std::vector<float> out(static_cast<size_t>(h) * w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double acc = 0.0, wsum = 0.0;
      for (int di = -radius; di <= radius; ++di) {
        const int y = i + di;
        if (y < 0 || y >= h) continue;
        for (int dj = -radius; dj <= radius; ++dj) {
          const int x = j + dj;
          if (x < 0 || x >= w) continue;
          const double kw = static_cast<double>(kernel[di + radius]) * kernel[dj + radius];
          acc += kw * f[y * w + x];
          wsum += kw;
        }
      }
      out[static_cast<size_t>(i) * w + j] = static_cast<float>(acc / wsum);
    }
  }
  return out;
}

float half_sq_dist(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return static_cast<float>(0.5 * acc);
}

}  // namespace

SaliencyMap saliency(const ModelOutput& out, const Tensor& state, float sigma,
                     int stride) {
  if (!out) throw std::invalid_argument("saliency: null model output");
  if (sigma <= 0.0f || stride < 1) throw std::invalid_argument("saliency: bad sigma/stride");
  const auto& shape = state.shape();
  if (shape.size() != 3) throw std::invalid_argument("saliency: state must be [C,H,W]");
  const int c = shape[0], h = shape[1], w = shape[2];
  const size_t frame = static_cast<size_t>(h) * w;
  const float* newest = state.data() + static_cast<size_t>(c - 1) * frame;

  const std::vector<float> blurred = blur_frame(newest, h, w, sigma);
  const Tensor base = out(state);

  SaliencyMap map;
  map.h = h;
  map.w = w;
  map.scores.assign(frame, 0.0f);

  const float inv_two_sq = 1.0f / (2.0f * sigma * sigma);
  Tensor probe = state;
  float* probe_newest = probe.data() + static_cast<size_t>(c - 1) * frame;
  for (int i = 0; i < h; i += stride) {
    for (int j = 0; j < w; j += stride) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const float d2 = static_cast<float>((y - i) * (y - i) + (x - j) * (x - j));
          const float m = std::exp(-d2 * inv_two_sq);
          const size_t px = static_cast<size_t>(y) * w + x;
          probe_newest[px] = (1.0f - m) * newest[px] + m * blurred[px];
        }
      }
      map.scores[static_cast<size_t>(i) * w + j] = half_sq_dist(base, out(probe));
    }
  }

  // Nearest sampled score for off-grid pixels.
  const auto nearest = [stride](int v, int limit) {
    int s = static_cast<int>(std::lround(static_cast<double>(v) / stride)) * stride;
    if (s >= limit) s -= stride;
    return s;
  };
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      if (i % stride == 0 && j % stride == 0) continue;
      map.scores[static_cast<size_t>(i) * w + j] =
          map.scores[static_cast<size_t>(nearest(i, h)) * w + nearest(j, w)];
    }
  }
  return map;
}

float mass_ratio(const SaliencyMap& map, const std::vector<std::pair<int, int>>& pixels) {
  if (pixels.empty()) throw std::invalid_argument("mass_ratio: empty pixel set");
  const float total = map.total();
  if (total <= 0.0f) return 0.0f;
  double on = 0.0;
  for (const auto& [i, j] : pixels) {
    if (i < 0 || i >= map.h || j < 0 || j >= map.w)
      throw std::invalid_argument("mass_ratio: pixel out of range");
    on += map.at(i, j);
  }
  const double mass_frac = on / total;
  const double area_frac =
      static_cast<double>(pixels.size()) / (static_cast<double>(map.h) * map.w);
  return static_cast<float>(mass_frac / area_frac);
}

AlignmentReport gradient_alignment(const CraftSource& proxy, const CraftSource& target,
                                   const std::vector<Tensor>& states) {
  if (!proxy.eval || !target.eval)
    throw std::invalid_argument("gradient_alignment: null crafting source");
  if (states.empty()) throw std::invalid_argument("gradient_alignment: no states");

  AlignmentReport rep;
  Tensor gp, gt;
  for (const Tensor& s : states) {
    proxy.eval(s, gp);
    target.eval(s, gt);
    double dot = 0.0, np = 0.0, nt = 0.0;
    for (int64_t i = 0; i < gp.size(); ++i) {
      dot += static_cast<double>(gp[i]) * gt[i];
      np += static_cast<double>(gp[i]) * gp[i];
      nt += static_cast<double>(gt[i]) * gt[i];
    }
    if (np == 0.0 || nt == 0.0) {
      ++rep.zero_grad_states;
      continue;
    }
    const double c = dot / (std::sqrt(np) * std::sqrt(nt));
    rep.cosines.push_back(static_cast<float>(std::clamp(c, -1.0, 1.0)));
  }

  if (!rep.cosines.empty()) {
    double sum = 0.0;
    for (float c : rep.cosines) sum += c;
    rep.mean = static_cast<float>(sum / rep.cosines.size());
    double var = 0.0;
    for (float c : rep.cosines) {
      const double d = c - rep.mean;
      var += d * d;
    }
    rep.stddev = static_cast<float>(std::sqrt(var / rep.cosines.size()));
    std::vector<float> sorted = rep.cosines;
    std::sort(sorted.begin(), sorted.end());
    const size_t n = sorted.size();
    rep.median = n % 2 ? sorted[n / 2] : 0.5f * (sorted[n / 2 - 1] + sorted[n / 2]);
  }
  return rep;
}

std::vector<Tensor> rollout_states(const Policy& p, const EnvDescriptor& desc, int n,
                                   uint64_t seed) {
  if (n < 1) throw std::invalid_argument("rollout_states: n must be positive");
  EnvDescriptor d = desc;
  d.seed = Rng::mix(seed, "rollout-states");
  const auto env = make_env(d);
  Rng rng = Rng::substream(seed, "rollout-act");

  std::vector<Tensor> states;
  states.reserve(n);
  env->reset();
  while (static_cast<int>(states.size()) < n) {
    states.push_back(env->observation());
    env->step(act(p, states.back(), ActMode::kGreedy, rng));
    if (env->terminal()) env->reset();
  }
  return states;
}

namespace {

const std::set<std::string>& source_vocab() {
  static const std::set<std::string> v = {"surrogate",     "imitator", "assessor",
                                          "psychic",       "uniform_noise",
                                          "none",          "random_policy"};
  return v;
}

void validate_cell(const SweepCell& c) {
  const auto fail = [&c](const std::string& why) {
    throw std::invalid_argument("sweep cell (" + c.env + ", " + c.agent_algo + ", " +
                                c.attack_source + "): " + why);
  };
  if (c.env.empty()) fail("empty env");
  if (c.agent_algo != "dqn" && c.agent_algo != "ppo") fail("unknown agent algo");
  if (!source_vocab().count(c.attack_source)) fail("unknown attack source");
  if (c.result.per_episode.empty()) fail("no per-episode rewards");

  double avg = 0.0;
  for (float r : c.result.per_episode) avg += r;
  avg /= c.result.per_episode.size();
  if (std::abs(avg - c.result.mean) > 1e-5)
    fail("mean does not match its per-episode column");

  const bool baseline = c.attack_source == "none" || c.attack_source == "random_policy";
  if (baseline) {
    if (c.method != "none" || c.norm != "none" || c.epsilon != 0.0f)
      fail("baseline rows must carry method none, norm none, epsilon 0");
    return;
  }
  if (c.attack_source == "uniform_noise") {
    if (c.method != "uniform_noise") fail("noise rows must use method uniform_noise");
  } else if (c.method != "fgm" && c.method != "mifgm") {
    fail("gradient rows must use method fgm or mifgm");
  }
  if (c.norm != "linf" && c.norm != "l2") fail("unknown norm");
  if (c.epsilon <= 0.0f) fail("attack rows need a positive epsilon");
}

}  // namespace

SweepTable aggregate_sweep(std::vector<SweepCell> cells) {
  if (cells.empty()) throw std::invalid_argument("aggregate_sweep: no cells");
  for (const SweepCell& c : cells) validate_cell(c);

  std::set<std::pair<std::string, std::string>> groups, clean, random_ref;
  for (const SweepCell& c : cells) {
    const auto key = std::make_pair(c.env, c.agent_algo);
    groups.insert(key);
    if (c.attack_source == "none") clean.insert(key);
    if (c.attack_source == "random_policy") random_ref.insert(key);
  }
  for (const auto& g : groups) {
    if (!clean.count(g))
      throw std::invalid_argument("aggregate_sweep: missing clean baseline for (" +
                                  g.first + ", " + g.second + ")");
    if (!random_ref.count(g))
      throw std::invalid_argument("aggregate_sweep: missing random-policy reference for (" +
                                  g.first + ", " + g.second + ")");
  }

  std::stable_sort(cells.begin(), cells.end(),
                   [](const SweepCell& a, const SweepCell& b) {
                     return std::tie(a.env, a.agent_algo, a.attack_source, a.method,
                                     a.norm, a.epsilon) <
                            std::tie(b.env, b.agent_algo, b.attack_source, b.method,
                                     b.norm, b.epsilon);
                   });
  return SweepTable{std::move(cells)};
}

}  // namespace snpx
