#include "snpx/snoop.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace snpx {

std::string threat_name(ThreatModel t) {
  switch (t) {
    case ThreatModel::S:
      return "S";
    case ThreatModel::SR:
      return "SR";
    case ThreatModel::SA:
      return "SA";
    case ThreatModel::SRA:
      return "SRA";
  }
  throw std::invalid_argument("unknown threat model value");
}

ThreatModel threat_from_name(const std::string& name) {
  if (name == "S") return ThreatModel::S;
  if (name == "SR") return ThreatModel::SR;
  if (name == "SA") return ThreatModel::SA;
  if (name == "SRA") return ThreatModel::SRA;
  throw std::invalid_argument("unknown threat model: " + name);
}

std::string proxy_kind_name(ProxyKind k) {
  switch (k) {
    case ProxyKind::kImitator:
      return "imitator";
    case ProxyKind::kAssessor:
      return "assessor";
    case ProxyKind::kPsychic:
      return "psychic";
    case ProxyKind::kAcPsychic:
      return "ac_psychic";
  }
  throw std::invalid_argument("unknown proxy kind value");
}

ProxyKind proxy_kind_from_name(const std::string& name) {
  if (name == "imitator") return ProxyKind::kImitator;
  if (name == "assessor") return ProxyKind::kAssessor;
  if (name == "psychic") return ProxyKind::kPsychic;
  if (name == "ac_psychic") return ProxyKind::kAcPsychic;
  throw std::invalid_argument("unknown proxy kind: " + name);
}

ProxyModel make_proxy_model(ProxyKind kind, ThreatModel threat,
                            std::vector<int> obs_shape, int actions, uint64_t seed) {
  if (!kind_allows(kind, threat)) {
    throw std::invalid_argument("proxy '" + proxy_kind_name(kind) +
                                "' is not permitted under threat model " +
                                threat_name(threat));
  }
  ProxyModel m;
  m.kind = kind;
  m.threat = threat;
  m.obs_shape = obs_shape;
  m.actions = actions;
  switch (kind) {
    case ProxyKind::kImitator:
      m.net = std::make_unique<ProxyNet>(obs_shape, actions, seed);
      break;
    case ProxyKind::kAssessor:
      m.net = std::make_unique<ProxyNet>(obs_shape, 1, seed);
      break;
    case ProxyKind::kPsychic:
      m.frame_net = std::make_unique<PsychicNet>(obs_shape, 0, seed);
      break;
    case ProxyKind::kAcPsychic:
      m.frame_net = std::make_unique<PsychicNet>(obs_shape, actions, seed);
      break;
  }
  return m;
}

void ProxyTrainConfig::validate() const {
  if (buffer_records < 1) throw std::invalid_argument("buffer_records must be >= 1");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (total_iterations < 0) throw std::invalid_argument("total_iterations must be >= 0");
  if (lr <= 0.0f) throw std::invalid_argument("lr must be positive");
  if (!(gamma >= 0.0f && gamma <= 1.0f)) throw std::invalid_argument("gamma outside [0,1]");
}

std::vector<float> empirical_returns(const std::vector<float>& episode_rewards,
                                     float gamma) {
  std::vector<float> out(episode_rewards.size());
  float run = 0.0f;
  for (int i = static_cast<int>(episode_rewards.size()) - 1; i >= 0; --i) {
    run = episode_rewards[i] + gamma * run;
    out[i] = run;
  }
  return out;
}

ReturnsResult standardize_returns(std::vector<float> all_returns) {
  ReturnsResult res;
  const size_t n = all_returns.size();
  if (n == 0) {
    res.standardized = false;
    return res;
  }
  double mean = 0.0;
  for (float v : all_returns) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (float v : all_returns) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  if (var <= 1e-12) {
    res.standardized = false;  // zero-variance buffer: leave values raw
    res.values = std::move(all_returns);
    return res;
  }
  const double inv_sd = 1.0 / std::sqrt(var);
  res.values.resize(n);
  for (size_t i = 0; i < n; ++i) {
    res.values[i] = static_cast<float>((all_returns[i] - mean) * inv_sd);
  }
  return res;
}

namespace detail {

ReturnsResult assessor_targets(const std::vector<float>& rewards,
                               const std::vector<uint8_t>& ends, float gamma) {
  std::vector<float> all;
  all.reserve(rewards.size());
  size_t ep_begin = 0;
  for (size_t i = 0; i < rewards.size(); ++i) {
    const bool last = i + 1 == rewards.size();
    if (ends[i] || last) {
      const std::vector<float> ep(rewards.begin() + ep_begin, rewards.begin() + i + 1);
      const std::vector<float> g = empirical_returns(ep, gamma);
      all.insert(all.end(), g.begin(), g.end());
      ep_begin = i + 1;
    }
  }
  return standardize_returns(std::move(all));
}

std::vector<float> fit_epochs(
    ParamStore& store, int n_samples, int epochs, int batch_size, float lr,
    int64_t& budget, Rng& rng,
    const std::function<int(Tape&, ParamBinder&, int sample)>& make_loss) {
  std::vector<float> epoch_losses;
  if (n_samples < 1 || budget <= 0) return epoch_losses;
  std::vector<int> order(n_samples);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < epochs && budget > 0; ++epoch) {
    for (int i = n_samples - 1; i > 0; --i) {
      std::swap(order[i], order[rng.uniform_int(i + 1)]);
    }
    double epoch_acc = 0.0;
    int64_t epoch_n = 0;
    for (int mb = 0; mb < n_samples && budget > 0; mb += batch_size) {
      const int m = static_cast<int>(std::min<int64_t>(
          std::min(batch_size, n_samples - mb), budget));
      const float inv = 1.0f / static_cast<float>(m);
      store.zero_grads();
      double loss_sum = 0.0;
      for (int i = mb; i < mb + m; ++i) {
        Tape t;
        ParamBinder bind(t, store);
        const int loss = make_loss(t, bind, order[i]);
        t.backward(loss);
        bind.accumulate(store, inv);
        loss_sum += t.value(loss)[0];
      }
      const float mean_loss = static_cast<float>(loss_sum / m);
      if (!std::isfinite(mean_loss)) {
        throw std::runtime_error("proxy training diverged: loss " +
                                 std::to_string(mean_loss));
      }
      store.adam_step(lr);
      budget -= m;
      epoch_acc += loss_sum;
      epoch_n += m;
    }
    if (epoch_n > 0) {
      epoch_losses.push_back(static_cast<float>(epoch_acc / static_cast<double>(epoch_n)));
    }
  }
  return epoch_losses;
}

}  // namespace detail

}  // namespace snpx
