#include "snpx/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "snpx/attacks.hpp"
#include "snpx/io.hpp"

namespace snpx {

namespace {

using nlohmann::json;

void check_keys(const json& j, const char* where,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw std::invalid_argument(std::string("config: ") + where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) known |= it.key() == k;
    if (!known)
      throw std::invalid_argument("config: unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& into, const char* where) {
  if (!j.contains(key)) return;
  try {
    into = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument(std::string("config: bad value for '") + key + "' in " +
                                where);
  }
}

EnvDescriptor env_from_json(const json& j) {
  check_keys(j, "env", {"name", "grid", "max_episode_len", "drops"});
  EnvDescriptor d;
  get_if(j, "name", d.name, "env");
  get_if(j, "grid", d.grid, "env");
  get_if(j, "max_episode_len", d.max_episode_len, "env");
  get_if(j, "drops", d.drops, "env");
  return d;
}

AgentConfig agent_from_json(const json& j) {
  check_keys(j, "agent",
             {"algorithm", "gamma", "train_steps", "lr", "replay_capacity",
              "batch_size", "target_sync", "eps_start", "eps_end", "eps_decay_steps",
              "train_every", "warmup", "clip_alpha", "rollout_len", "ppo_epochs",
              "minibatch", "value_weight", "entropy_weight"});
  AgentConfig a;
  get_if(j, "algorithm", a.algorithm, "agent");
  get_if(j, "gamma", a.gamma, "agent");
  get_if(j, "train_steps", a.train_steps, "agent");
  get_if(j, "lr", a.lr, "agent");
  get_if(j, "replay_capacity", a.replay_capacity, "agent");
  get_if(j, "batch_size", a.batch_size, "agent");
  get_if(j, "target_sync", a.target_sync, "agent");
  get_if(j, "eps_start", a.eps_start, "agent");
  get_if(j, "eps_end", a.eps_end, "agent");
  get_if(j, "eps_decay_steps", a.eps_decay_steps, "agent");
  get_if(j, "train_every", a.train_every, "agent");
  get_if(j, "warmup", a.warmup, "agent");
  get_if(j, "clip_alpha", a.clip_alpha, "agent");
  get_if(j, "rollout_len", a.rollout_len, "agent");
  get_if(j, "ppo_epochs", a.ppo_epochs, "agent");
  get_if(j, "minibatch", a.minibatch, "agent");
  get_if(j, "value_weight", a.value_weight, "agent");
  get_if(j, "entropy_weight", a.entropy_weight, "agent");
  return a;
}

ProxyTrainConfig proxy_train_from_json(const json& j) {
  check_keys(j, "proxy_train",
             {"buffer_records", "epochs", "batch_size", "total_iterations", "lr",
              "gamma"});
  ProxyTrainConfig p;
  get_if(j, "buffer_records", p.buffer_records, "proxy_train");
  get_if(j, "epochs", p.epochs, "proxy_train");
  get_if(j, "batch_size", p.batch_size, "proxy_train");
  get_if(j, "total_iterations", p.total_iterations, "proxy_train");
  get_if(j, "lr", p.lr, "proxy_train");
  get_if(j, "gamma", p.gamma, "proxy_train");
  return p;
}

AttackGrid attacks_from_json(const json& j) {
  check_keys(j, "attacks",
             {"linf_eps", "l2_eps", "methods", "mifgm_steps", "mifgm_momentum"});
  AttackGrid g;
  get_if(j, "linf_eps", g.linf_eps, "attacks");
  get_if(j, "l2_eps", g.l2_eps, "attacks");
  get_if(j, "methods", g.methods, "attacks");
  get_if(j, "mifgm_steps", g.mifgm_steps, "attacks");
  get_if(j, "mifgm_momentum", g.mifgm_momentum, "attacks");
  return g;
}

TimingConfig timing_from_json(const json& j) {
  check_keys(j, "timing", {"attack_rate", "total_steps", "calibration_states"});
  TimingConfig t;
  get_if(j, "attack_rate", t.attack_rate, "timing");
  get_if(j, "total_steps", t.total_steps, "timing");
  get_if(j, "calibration_states", t.calibration_states, "timing");
  return t;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (env.name != "mini-catch" && env.name != "mini-catch-stochastic" &&
      env.name != "mini-pong")
    throw std::invalid_argument("config: unknown env " + env.name);
  agent.validate();
  if (target_harden_eta < 0.0f)
    throw std::invalid_argument("config: target_harden_eta must be >= 0");

  const ThreatModel tm = threat_from_name(threat);
  std::set<std::string> seen;
  for (const std::string& name : proxies) {
    const ProxyKind kind = proxy_kind_from_name(name);
    if (!seen.insert(name).second)
      throw std::invalid_argument("config: duplicate proxy " + name);
    if (!kind_allows(kind, tm))
      throw std::invalid_argument("config: proxy " + name +
                                  " cannot be trained under threat model " + threat);
  }
  proxy_train.validate();

  if (attacks.linf_eps.empty() || attacks.l2_eps.empty())
    throw std::invalid_argument("config: each norm needs at least one epsilon");
  for (float e : attacks.linf_eps)
    if (e <= 0.0f) throw std::invalid_argument("config: non-positive linf epsilon");
  for (float e : attacks.l2_eps)
    if (e <= 0.0f) throw std::invalid_argument("config: non-positive l2 epsilon");
  if (attacks.methods.empty())
    throw std::invalid_argument("config: no crafting methods");
  for (const std::string& m : attacks.methods)
    if (m != "fgm" && m != "mifgm")
      throw std::invalid_argument("config: unknown crafting method " + m);
  if (attacks.mifgm_steps < 2)
    throw std::invalid_argument("config: mifgm needs at least 2 steps");
  if (attacks.mifgm_momentum < 0.0f)
    throw std::invalid_argument("config: negative mifgm momentum");

  if (!(timing.attack_rate > 0.0f) || timing.attack_rate > 1.0f)
    throw std::invalid_argument("config: timing attack_rate must be in (0, 1]");
  if (timing.total_steps < 1)
    throw std::invalid_argument("config: timing total_steps must be positive");
  if (timing.calibration_states < 1000)
    throw std::invalid_argument("config: beta calibration needs >= 1000 states");

  if (eval_episodes < 1)
    throw std::invalid_argument("config: eval_episodes must be positive");
  if (seeds.empty()) throw std::invalid_argument("config: seed list is empty");
  if (out_dir.empty()) throw std::invalid_argument("config: out_dir is empty");
  for (const auto& [kind, path] : proxy_checkpoints) {
    proxy_kind_from_name(kind);
    if (path.empty())
      throw std::invalid_argument("config: empty checkpoint path for proxy " + kind);
  }
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  check_keys(j, "config",
             {"env", "agent", "target_harden_eta", "threat", "proxies", "proxy_train",
              "attacks", "timing", "eval_episodes", "seeds", "out_dir",
              "target_checkpoint", "surrogate_checkpoint", "proxy_checkpoints"});
  ExperimentConfig c;
  if (j.contains("env")) c.env = env_from_json(j.at("env"));
  if (j.contains("agent")) c.agent = agent_from_json(j.at("agent"));
  get_if(j, "target_harden_eta", c.target_harden_eta, "config");
  get_if(j, "threat", c.threat, "config");
  get_if(j, "proxies", c.proxies, "config");
  if (j.contains("proxy_train")) c.proxy_train = proxy_train_from_json(j.at("proxy_train"));
  if (j.contains("attacks")) c.attacks = attacks_from_json(j.at("attacks"));
  if (j.contains("timing")) c.timing = timing_from_json(j.at("timing"));
  get_if(j, "eval_episodes", c.eval_episodes, "config");
  get_if(j, "seeds", c.seeds, "config");
  get_if(j, "out_dir", c.out_dir, "config");
  get_if(j, "target_checkpoint", c.target_checkpoint, "config");
  get_if(j, "surrogate_checkpoint", c.surrogate_checkpoint, "config");
  get_if(j, "proxy_checkpoints", c.proxy_checkpoints, "config");
  c.validate();
  return c;
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  json j;
  j["env"] = {{"name", c.env.name},
              {"grid", c.env.grid},
              {"max_episode_len", c.env.max_episode_len},
              {"drops", c.env.drops}};
  j["agent"] = {{"algorithm", c.agent.algorithm},
                {"gamma", c.agent.gamma},
                {"train_steps", c.agent.train_steps},
                {"lr", c.agent.lr},
                {"replay_capacity", c.agent.replay_capacity},
                {"batch_size", c.agent.batch_size},
                {"target_sync", c.agent.target_sync},
                {"eps_start", c.agent.eps_start},
                {"eps_end", c.agent.eps_end},
                {"eps_decay_steps", c.agent.eps_decay_steps},
                {"train_every", c.agent.train_every},
                {"warmup", c.agent.warmup},
                {"clip_alpha", c.agent.clip_alpha},
                {"rollout_len", c.agent.rollout_len},
                {"ppo_epochs", c.agent.ppo_epochs},
                {"minibatch", c.agent.minibatch},
                {"value_weight", c.agent.value_weight},
                {"entropy_weight", c.agent.entropy_weight}};
  j["target_harden_eta"] = c.target_harden_eta;
  j["threat"] = c.threat;
  j["proxies"] = c.proxies;
  j["proxy_train"] = {{"buffer_records", c.proxy_train.buffer_records},
                      {"epochs", c.proxy_train.epochs},
                      {"batch_size", c.proxy_train.batch_size},
                      {"total_iterations", c.proxy_train.total_iterations},
                      {"lr", c.proxy_train.lr},
                      {"gamma", c.proxy_train.gamma}};
  j["attacks"] = {{"linf_eps", c.attacks.linf_eps},
                  {"l2_eps", c.attacks.l2_eps},
                  {"methods", c.attacks.methods},
                  {"mifgm_steps", c.attacks.mifgm_steps},
                  {"mifgm_momentum", c.attacks.mifgm_momentum}};
  j["timing"] = {{"attack_rate", c.timing.attack_rate},
                 {"total_steps", c.timing.total_steps},
                 {"calibration_states", c.timing.calibration_states}};
  j["eval_episodes"] = c.eval_episodes;
  j["seeds"] = c.seeds;
  j["out_dir"] = c.out_dir;
  j["target_checkpoint"] = c.target_checkpoint;
  j["surrogate_checkpoint"] = c.surrogate_checkpoint;
  j["proxy_checkpoints"] = c.proxy_checkpoints;
  return j;
}

ExperimentConfig load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw std::invalid_argument("config: " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void save_config(const std::string& path, const ExperimentConfig& c) {
  write_text_file(path, config_to_json(c).dump(2) + "\n");
}

}  // namespace snpx
