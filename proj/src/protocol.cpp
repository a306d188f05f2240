#include "snpx/protocol.hpp"

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "snpx/attacks.hpp"
#include "snpx/io.hpp"
#include "snpx/timing.hpp"

namespace snpx {

namespace fs = std::filesystem;

namespace {

// Desk constants of the pipeline itself (everything sweep-sized lives in the
// config instead).
constexpr int kHeldoutRecords = 4000;    // fresh snoop for quality gates
constexpr int kAlignmentStates = 500;    // alignment sample size
constexpr int kSaliencyStates = 3;       // rendered example states
constexpr float kTimedEpsilon = 0.03f;   // timed-attack crafting budget (linf anchor)

const ProxyModel* find_proxy(const std::map<std::string, ProxyModel>& proxies,
                             const std::string& name) {
  const auto it = proxies.find(name);
  return it == proxies.end() ? nullptr : &it->second;
}

ProxyModel train_one_proxy(ProxyKind kind, ThreatModel tm, const Policy& target,
                           const EnvDescriptor& d, const ProxyTrainConfig& ptc) {
  switch (tm) {
    case ThreatModel::S:
      return train_proxy<ThreatModel::S>(kind, target, d, ptc).model;
    case ThreatModel::SR:
      return train_proxy<ThreatModel::SR>(kind, target, d, ptc).model;
    case ThreatModel::SA:
      return train_proxy<ThreatModel::SA>(kind, target, d, ptc).model;
    case ThreatModel::SRA:
      return train_proxy<ThreatModel::SRA>(kind, target, d, ptc).model;
  }
  throw std::logic_error("unreachable threat model");
}

template <ThreatModel TM>
ProxyQuality quality_impl(const ExperimentConfig& cfg, uint64_t seed,
                          const Policy& target,
                          const std::map<std::string, ProxyModel>& proxies) {
  EnvDescriptor d = cfg.env;
  d.seed = Rng::mix(seed, "heldout-env");
  const auto env = make_env(d);
  const SnoopBuffer<TM> held = snoop_collect<TM>(target, *env, kHeldoutRecords);

  ProxyQuality q;
  if constexpr (snoops_actions(TM)) {
    if (const ProxyModel* m = find_proxy(proxies, "imitator"))
      q.imitator_agreement = imitator_agreement(*m, held);
  }
  if constexpr (snoops_rewards(TM)) {
    if (const ProxyModel* m = find_proxy(proxies, "assessor"))
      q.assessor_pearson = assessor_pearson(*m, held, cfg.proxy_train.gamma);
  }
  if (const ProxyModel* m = find_proxy(proxies, "psychic")) {
    const PsychicMse mse = psychic_mse(*m, held);
    q.psychic_mse = mse.model;
    q.copy_last_mse = mse.copy_last;
  }
  if constexpr (TM == ThreatModel::SRA) {
    if (const ProxyModel* m = find_proxy(proxies, "ac_psychic"))
      q.ac_psychic_mse = psychic_mse(*m, held).model;
  }
  return q;
}

Policy load_agent_checkpoint(const std::string& path, const ExperimentConfig& cfg,
                             const char* role) {
  const CheckpointMeta meta = read_checkpoint_meta(path);
  if (meta.env != cfg.env.name)
    throw std::invalid_argument(std::string(role) + " checkpoint is for env '" +
                                meta.env + "', config wants '" + cfg.env.name + "'");
  if (meta.kind != cfg.agent.algorithm)
    throw std::invalid_argument(std::string(role) + " checkpoint holds a '" + meta.kind +
                                "' agent, config wants '" + cfg.agent.algorithm + "'");
  return load_policy(path);
}

std::string now_stamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%F %T", std::localtime(&t));
  return buf;
}

}  // namespace

Policy stage_train_target(const ExperimentConfig& cfg, uint64_t seed) {
  if (!cfg.target_checkpoint.empty())
    return load_agent_checkpoint(cfg.target_checkpoint, cfg, "target");
  EnvDescriptor d = cfg.env;
  d.seed = Rng::mix(seed, "target-env");
  const auto env = make_env(d);
  AgentConfig a = cfg.agent;
  a.harden_eta = cfg.target_harden_eta;
  a.seed = Rng::mix(seed, "target-agent");
  return train_agent(*env, a);
}

Policy stage_train_surrogate(const ExperimentConfig& cfg, uint64_t seed) {
  if (!cfg.surrogate_checkpoint.empty())
    return load_agent_checkpoint(cfg.surrogate_checkpoint, cfg, "surrogate");
  // Identical recipe to the target (augmentation included); only the seed
  // differs — the adversary's full-access upper bound.
  EnvDescriptor d = cfg.env;
  d.seed = Rng::mix(seed, "surrogate-env");
  const auto env = make_env(d);
  AgentConfig a = cfg.agent;
  a.harden_eta = cfg.target_harden_eta;
  a.seed = Rng::mix(seed, "surrogate-agent");
  return train_agent(*env, a);
}

ProxyModel load_proxy_checkpoint(const std::string& path,
                                 const std::string& expected_kind,
                                 const std::string& env_name) {
  const CheckpointMeta meta = read_checkpoint_meta(path);
  if (meta.env != env_name)
    throw std::invalid_argument("proxy checkpoint '" + expected_kind + "' is for env '" +
                                meta.env + "', config wants '" + env_name + "'");
  if (meta.kind != expected_kind)
    throw std::invalid_argument("proxy checkpoint for '" + expected_kind +
                                "' holds a '" + meta.kind + "'");
  return load_proxy(path);
}

std::map<std::string, ProxyModel> stage_train_proxies(const ExperimentConfig& cfg,
                                                      uint64_t seed,
                                                      const Policy& target) {
  const ThreatModel tm = threat_from_name(cfg.threat);
  std::map<std::string, ProxyModel> out;
  for (const std::string& name : cfg.proxies) {
    const auto it = cfg.proxy_checkpoints.find(name);
    if (it != cfg.proxy_checkpoints.end()) {
      out.emplace(name, load_proxy_checkpoint(it->second, name, cfg.env.name));
      continue;
    }
    ProxyTrainConfig ptc = cfg.proxy_train;
    ptc.seed = Rng::mix(seed, "proxy-" + name);
    out.emplace(name, train_one_proxy(proxy_kind_from_name(name), tm, target, cfg.env, ptc));
  }
  return out;
}

ProxyQuality stage_proxy_quality(const ExperimentConfig& cfg, uint64_t seed,
                                 const Policy& target,
                                 const std::map<std::string, ProxyModel>& proxies) {
  switch (threat_from_name(cfg.threat)) {
    case ThreatModel::S:
      return quality_impl<ThreatModel::S>(cfg, seed, target, proxies);
    case ThreatModel::SR:
      return quality_impl<ThreatModel::SR>(cfg, seed, target, proxies);
    case ThreatModel::SA:
      return quality_impl<ThreatModel::SA>(cfg, seed, target, proxies);
    case ThreatModel::SRA:
      return quality_impl<ThreatModel::SRA>(cfg, seed, target, proxies);
  }
  throw std::logic_error("unreachable threat model");
}

SweepTable stage_attack_sweep(const ExperimentConfig& cfg, uint64_t seed,
                              const Policy& target, const Policy* surrogate,
                              const std::map<std::string, ProxyModel>& proxies) {
  EnvDescriptor d = cfg.env;
  d.seed = Rng::mix(seed, "sweep-eval");

  std::vector<SweepCell> cells;
  const auto push = [&](const std::string& source, const std::string& method,
                        const std::string& norm, float eps, EvalResult res) {
    SweepCell c;
    c.env = cfg.env.name;
    c.agent_algo = cfg.agent.algorithm;
    c.attack_source = source;
    c.method = method;
    c.norm = norm;
    c.epsilon = eps;
    c.result = std::move(res);
    cells.push_back(std::move(c));
  };

  push("none", "none", "none", 0.0f, evaluate(target, d, cfg.eval_episodes));
  const Policy random_policy = make_random_policy(target.actions);
  push("random_policy", "none", "none", 0.0f,
       evaluate(random_policy, d, cfg.eval_episodes));

  // Gradient sources, in a fixed order.
  std::vector<std::pair<std::string, CraftSource>> sources;
  if (surrogate) sources.emplace_back("surrogate", source_from_policy(*surrogate));
  for (const char* name : {"imitator", "assessor", "psychic"}) {
    if (const ProxyModel* m = find_proxy(proxies, name))
      sources.emplace_back(name, source_from_proxy(*m));
  }

  const auto norm_grid = [&](NormKind norm) -> const std::vector<float>& {
    return norm == NormKind::kLinf ? cfg.attacks.linf_eps : cfg.attacks.l2_eps;
  };

  for (const auto& [source_name, src] : sources) {
    for (const std::string& method : cfg.attacks.methods) {
      for (const NormKind norm : {NormKind::kLinf, NormKind::kL2}) {
        for (const float eps : norm_grid(norm)) {
          AttackSpec spec;
          spec.method = method_from_name(method);
          spec.norm = norm;
          spec.epsilon = eps;
          spec.steps = spec.method == AttackMethod::kMifgm ? cfg.attacks.mifgm_steps : 1;
          spec.momentum = cfg.attacks.mifgm_momentum;
          spec.validate();
          const AttackHook hook = make_attack_hook(src, spec);
          push(source_name, method, norm_name(norm), eps,
               evaluate(target, d, cfg.eval_episodes, &hook));
        }
      }
    }
  }

  // Model-free reference noise at every budget.
  for (const NormKind norm : {NormKind::kLinf, NormKind::kL2}) {
    int idx = 0;
    for (const float eps : norm_grid(norm)) {
      AttackSpec spec;
      spec.method = AttackMethod::kUniformNoise;
      spec.norm = norm;
      spec.epsilon = eps;
      const AttackHook hook = make_noise_hook(
          spec, Rng::mix(seed, "noise-" + norm_name(norm), static_cast<uint64_t>(idx++)));
      push("uniform_noise", "uniform_noise", norm_name(norm), eps,
           evaluate(target, d, cfg.eval_episodes, &hook));
    }
  }

  return aggregate_sweep(std::move(cells));
}

std::vector<TimedRow> stage_timed_attacks(const ExperimentConfig& cfg,
                                          const std::vector<uint64_t>& seeds,
                                          const Policy& target, const Policy* surrogate,
                                          const std::map<std::string, ProxyModel>& proxies) {
  if (seeds.empty()) throw std::invalid_argument("timed attacks need at least one seed");
  const uint64_t master = seeds.front();

  const ProxyModel* imitator = find_proxy(proxies, "imitator");
  const ProxyModel* assessor = find_proxy(proxies, "assessor");
  const ProxyModel* acp = find_proxy(proxies, "ac_psychic");
  if (!imitator && !surrogate)
    throw std::invalid_argument("timed attacks need an imitator or a surrogate to craft");

  const CraftSource craft =
      imitator ? source_from_proxy(*imitator) : source_from_policy(*surrogate);
  AttackSpec spec;
  spec.epsilon = kTimedEpsilon;  // fgm, linf defaults
  const AttackHook hook = make_attack_hook(craft, spec);

  const std::vector<Tensor> calib = rollout_states(
      target, cfg.env, cfg.timing.calibration_states, Rng::mix(master, "timed-calib"));

  PreferenceFn acp_pref;
  float acp_beta = 0.0f;
  if (assessor && acp) {
    acp_pref = make_acp_preference(*assessor, *acp, target.actions);
    acp_beta = calibrate_beta(acp_pref, calib, cfg.timing.attack_rate);
  }
  PreferenceFn sur_pref;
  float sur_beta = 0.0f;
  if (surrogate) {
    sur_pref = make_surrogate_preference(*surrogate);
    sur_beta = calibrate_beta(sur_pref, calib, cfg.timing.attack_rate);
  }

  std::vector<TimedRow> rows;
  const auto push = [&rows](const std::string& strategy, uint64_t seed, float beta,
                            const TimedAttackLog& log) {
    rows.push_back({strategy, seed, beta, log.attack_rate(), log.total_reward(),
                    log.reward_per_episode(), log.episodes_completed});
  };

  for (const uint64_t s : seeds) {
    float matched_rate = cfg.timing.attack_rate;
    if (acp_pref) {
      TimingStrategy ts;
      ts.kind = TimingKind::kPreferenceThreshold;
      ts.beta = acp_beta;
      ts.source = PreferenceSource::kAcpAssessor;
      const TimedAttackLog log =
          run_timed_attack(target, cfg.env, ts, hook, cfg.timing.total_steps, s, acp_pref);
      push("acp_threshold", s, acp_beta, log);
      matched_rate = log.attack_rate();
    }
    {
      TimingStrategy ts;
      ts.kind = TimingKind::kRandomRate;
      ts.rate = matched_rate;
      const TimedAttackLog log =
          run_timed_attack(target, cfg.env, ts, hook, cfg.timing.total_steps, s);
      push("random_rate", s, 0.0f, log);
    }
    if (sur_pref) {
      TimingStrategy ts;
      ts.kind = TimingKind::kPreferenceThreshold;
      ts.beta = sur_beta;
      ts.source = PreferenceSource::kSurrogateQ;
      const TimedAttackLog log =
          run_timed_attack(target, cfg.env, ts, hook, cfg.timing.total_steps, s, sur_pref);
      push("surrogate_threshold", s, sur_beta, log);
    }
  }
  return rows;
}

std::map<std::string, AlignmentReport> stage_alignment(
    const ExperimentConfig& cfg, uint64_t seed, const Policy& target,
    const std::map<std::string, ProxyModel>& proxies) {
  const std::vector<Tensor> states =
      rollout_states(target, cfg.env, kAlignmentStates, Rng::mix(seed, "align"));
  const CraftSource tgt = source_from_policy(target, "target");

  std::map<std::string, AlignmentReport> out;
  for (const char* name : {"imitator", "assessor", "psychic"}) {
    if (const ProxyModel* m = find_proxy(proxies, name))
      out.emplace(name, gradient_alignment(source_from_proxy(*m), tgt, states));
  }
  return out;
}

void stage_saliency(const ExperimentConfig& cfg, uint64_t seed, const Policy& target,
                    const Policy* surrogate,
                    const std::map<std::string, ProxyModel>& proxies) {
  const fs::path images = fs::path(cfg.out_dir) / "images";
  fs::create_directories(images);
  const auto img = [&images](const std::string& name) {
    return (images / name).string();
  };

  const std::vector<Tensor> states =
      rollout_states(target, cfg.env, kSaliencyStates, Rng::mix(seed, "saliency"));
  const ModelOutput out = output_of(target);
  const int g = cfg.env.grid;
  const size_t newest_off =
      static_cast<size_t>(target.obs_shape.at(0) - 1) * g * g;
  for (int k = 0; k < kSaliencyStates; ++k) {
    const float* newest = states[k].data() + newest_off;
    write_pgm(img("state_" + std::to_string(k) + ".pgm"), newest, g, g);
    write_pgm(img("saliency_" + std::to_string(k) + ".pgm"), saliency(out, states[k]));
  }

  // One perturbation rendered at the crafting anchor for visual inspection.
  const ProxyModel* imitator = find_proxy(proxies, "imitator");
  if (!imitator && !surrogate) return;
  const CraftSource src =
      imitator ? source_from_proxy(*imitator) : source_from_policy(*surrogate);
  AttackSpec spec;
  spec.epsilon = kTimedEpsilon;
  const Tensor adv = fgm(src, states[0], spec);
  const float* adv_newest = adv.data() + newest_off;
  write_pgm(img("perturbed_0.pgm"), adv_newest, g, g);
  Tensor delta({g, g});
  const float* clean_newest = states[0].data() + newest_off;
  for (int i = 0; i < g * g; ++i) delta[i] = adv_newest[i] - clean_newest[i];
  write_pgm(img("delta_0.pgm"), delta.data(), g, g, -spec.epsilon, spec.epsilon);
}

SweepTable sweep_from_csv(const CsvTable& table) {
  const std::vector<std::string> want = {"env",  "agent",   "source",
                                         "method", "norm",  "epsilon",
                                         "seed", "episode", "reward"};
  if (table.header != want)
    throw std::invalid_argument("sweep csv: unexpected header");

  std::vector<SweepCell> cells;
  std::map<std::vector<std::string>, size_t> index;
  for (const auto& row : table.rows) {
    if (row.size() != want.size())
      throw std::invalid_argument("sweep csv: short row");
    const std::vector<std::string> key(row.begin(), row.begin() + 6);
    auto it = index.find(key);
    if (it == index.end()) {
      SweepCell c;
      c.env = row[0];
      c.agent_algo = row[1];
      c.attack_source = row[2];
      c.method = row[3];
      c.norm = row[4];
      c.epsilon = std::stof(row[5]);
      it = index.emplace(key, cells.size()).first;
      cells.push_back(std::move(c));
    }
    cells[it->second].result.per_episode.push_back(std::stof(row[8]));
  }
  for (SweepCell& c : cells) {
    double sum = 0.0;
    for (const float r : c.result.per_episode) sum += r;
    c.result.mean =
        static_cast<float>(sum / static_cast<double>(c.result.per_episode.size()));
  }
  return aggregate_sweep(std::move(cells));
}

CsvTable quality_csv(const ProxyQuality& q) {
  CsvTable t;
  t.header = {"metric", "value"};
  if (q.imitator_agreement >= 0.0f)
    t.rows.push_back({"imitator_agreement", float_text(q.imitator_agreement)});
  if (q.assessor_pearson >= -1.0f)
    t.rows.push_back({"assessor_pearson", float_text(q.assessor_pearson)});
  if (q.psychic_mse >= 0.0f) {
    t.rows.push_back({"psychic_mse", float_text(q.psychic_mse)});
    t.rows.push_back({"copy_last_mse", float_text(q.copy_last_mse)});
  }
  if (q.ac_psychic_mse >= 0.0f)
    t.rows.push_back({"ac_psychic_mse", float_text(q.ac_psychic_mse)});
  return t;
}

CsvTable timed_csv(const std::vector<TimedRow>& rows) {
  CsvTable t;
  t.header = {"strategy", "seed",          "beta",
              "attack_rate", "total_reward", "reward_per_episode",
              "episodes"};
  for (const TimedRow& r : rows) {
    t.rows.push_back({r.strategy, std::to_string(r.seed), float_text(r.beta),
                      float_text(r.attack_rate),
                      float_text(static_cast<float>(r.total_reward)),
                      float_text(static_cast<float>(r.reward_per_episode)),
                      std::to_string(r.episodes)});
  }
  return t;
}

CsvTable alignment_csv(const std::map<std::string, AlignmentReport>& reports) {
  CsvTable t;
  t.header = {"proxy", "n_states", "zero_grad_states", "mean", "median", "stddev"};
  for (const auto& [name, rep] : reports) {
    t.rows.push_back({name, std::to_string(rep.cosines.size()),
                      std::to_string(rep.zero_grad_states), float_text(rep.mean),
                      float_text(rep.median), float_text(rep.stddev)});
  }
  return t;
}

std::string sweep_svg(const SweepTable& table, const std::string& env,
                      const std::string& agent_algo, const std::string& norm) {
  float clean = 0.0f, random_ref = 0.0f;
  bool have_clean = false, have_random = false;
  std::map<std::pair<std::string, std::string>, PlotSeries> by_source_method;
  float eps_lo = 0.0f, eps_hi = 0.0f;

  for (const SweepCell& c : table.rows) {
    if (c.env != env || c.agent_algo != agent_algo) continue;
    if (c.attack_source == "none") {
      clean = c.result.mean;
      have_clean = true;
    } else if (c.attack_source == "random_policy") {
      random_ref = c.result.mean;
      have_random = true;
    } else if (c.norm == norm) {
      PlotSeries& s = by_source_method[{c.attack_source, c.method}];
      if (s.label.empty())
        s.label = c.attack_source == "uniform_noise" ? c.attack_source
                                                     : c.attack_source + " " + c.method;
      s.points.emplace_back(c.epsilon, c.result.mean);
      eps_lo = by_source_method.size() == 1 && s.points.size() == 1
                   ? c.epsilon
                   : std::min(eps_lo, c.epsilon);
      eps_hi = std::max(eps_hi, c.epsilon);
    }
  }
  if (!have_clean || !have_random)
    throw std::invalid_argument("sweep_svg: baselines missing for " + env + "/" +
                                agent_algo);

  std::vector<PlotSeries> series;
  if (!by_source_method.empty()) {
    series.push_back({"clean", {{eps_lo, clean}, {eps_hi, clean}}});
    series.push_back({"random_policy", {{eps_lo, random_ref}, {eps_hi, random_ref}}});
    for (auto& [key, s] : by_source_method) series.push_back(std::move(s));
  } else {
    series.push_back({"clean", {{0.0f, clean}, {1.0f, clean}}});
    series.push_back({"random_policy", {{0.0f, random_ref}, {1.0f, random_ref}}});
  }
  return svg_line_plot(env + " / " + agent_algo + " (" + norm + ")",
                       "epsilon (" + norm + ")", "mean reward", series);
}

ProtocolResult run_full_protocol(const ExperimentConfig& cfg) {
  cfg.validate();
  const uint64_t master = cfg.seeds.front();

  fs::create_directories(fs::path(cfg.out_dir) / "checkpoints");
  fs::create_directories(fs::path(cfg.out_dir) / "results");
  fs::create_directories(fs::path(cfg.out_dir) / "images");
  const auto out_path = [&cfg](const std::string& rel) {
    return (fs::path(cfg.out_dir) / rel).string();
  };
  save_config(out_path("config.json"), cfg);

  // The run log is the only artifact carrying wall-clock state.
  std::ofstream log(out_path("run.log"), std::ios::trunc);
  const auto run_stage = [&log](const std::string& name, auto&& body) {
    log << now_stamp() << " start " << name << "\n" << std::flush;
    try {
      body();
    } catch (const std::exception& e) {
      log << now_stamp() << " FAIL " << name << ": " << e.what() << "\n" << std::flush;
      throw StageError(name, e.what());
    }
    log << now_stamp() << " done " << name << "\n" << std::flush;
  };

  ProtocolResult result;
  result.out_dir = cfg.out_dir;

  Policy target, surrogate;
  run_stage("train-target", [&] {
    target = stage_train_target(cfg, master);
    save_policy(out_path("checkpoints/target.snpx"), target, cfg.env.name, master);
  });
  run_stage("train-surrogate", [&] {
    surrogate = stage_train_surrogate(cfg, master);
    save_policy(out_path("checkpoints/surrogate.snpx"), surrogate, cfg.env.name, master);
  });

  std::map<std::string, ProxyModel> proxies;
  run_stage("train-proxies", [&] {
    proxies = stage_train_proxies(cfg, master, target);
    for (const auto& [name, model] : proxies)
      save_proxy(out_path("checkpoints/" + name + ".snpx"), model, cfg.env.name, master);
  });

  run_stage("proxy-quality", [&] {
    result.quality = stage_proxy_quality(cfg, master, target, proxies);
    write_text_file(out_path("results/quality.csv"), csv_text(quality_csv(result.quality)));
  });

  run_stage("attack-sweep", [&] {
    result.sweep = stage_attack_sweep(cfg, master, target, &surrogate, proxies);
    write_text_file(out_path("results/sweep.csv"),
                    csv_text(sweep_csv(result.sweep, master)));
    write_svg(out_path("results/reward_vs_eps_linf.svg"),
              sweep_svg(result.sweep, cfg.env.name, cfg.agent.algorithm, "linf"));
    write_svg(out_path("results/reward_vs_eps_l2.svg"),
              sweep_svg(result.sweep, cfg.env.name, cfg.agent.algorithm, "l2"));
    for (const SweepCell& c : result.sweep.rows) {
      if (c.attack_source == "none") result.target_clean_mean = c.result.mean;
      if (c.attack_source == "random_policy") result.random_mean = c.result.mean;
    }
  });

  run_stage("timed-attacks", [&] {
    result.timed = stage_timed_attacks(cfg, cfg.seeds, target, &surrogate, proxies);
    write_text_file(out_path("results/timed.csv"), csv_text(timed_csv(result.timed)));
  });

  run_stage("alignment", [&] {
    result.alignment = stage_alignment(cfg, master, target, proxies);
    write_text_file(out_path("results/alignment.csv"),
                    csv_text(alignment_csv(result.alignment)));
  });

  run_stage("saliency",
            [&] { stage_saliency(cfg, master, target, &surrogate, proxies); });

  return result;
}

}  // namespace snpx
