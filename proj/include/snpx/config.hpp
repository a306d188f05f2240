#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "snpx/agents.hpp"
#include "snpx/env.hpp"
#include "snpx/snoop.hpp"

namespace snpx {

// Crafting sweep shape: five budgets per norm by default, anchored on the
// canonical linf 0.03 / l2 2.4 operating points.
struct AttackGrid {
  std::vector<float> linf_eps = {0.005f, 0.01f, 0.02f, 0.03f, 0.05f};
  std::vector<float> l2_eps = {0.5f, 1.0f, 1.6f, 2.4f, 4.0f};
  std::vector<std::string> methods = {"fgm", "mifgm"};
  int mifgm_steps = 10;
  float mifgm_momentum = 1.0f;
};

struct TimingConfig {
  float attack_rate = 0.25f;    // calibration target for threshold strategies
  int64_t total_steps = 10000;  // per timed run
  int calibration_states = 2000;
};

// One experiment end to end. Every desk-scale constant lives here so larger
// settings stay expressible without code changes.
struct ExperimentConfig {
  EnvDescriptor env = {.name = "mini-catch"};  // env.seed derives from the run seed
  AgentConfig agent;                 // shared by target and surrogate
  float target_harden_eta = 0.03f;   // observation-noise augmentation (target only)
  std::string threat = "SRA";
  std::vector<std::string> proxies = {"imitator", "assessor", "psychic", "ac_psychic"};
  ProxyTrainConfig proxy_train;
  AttackGrid attacks;
  TimingConfig timing;
  int eval_episodes = 10;
  std::vector<uint64_t> seeds = {1};
  std::string out_dir = "out";

  // Optional checkpoint inputs for partial pipelines; existence is checked at
  // use time by the consuming command, not here.
  std::string target_checkpoint;
  std::string surrogate_checkpoint;
  std::map<std::string, std::string> proxy_checkpoints;  // proxy kind -> path

  void validate() const;  // throws std::invalid_argument
};

// Strict parsing: unknown keys anywhere raise std::invalid_argument, so a
// typo'd field can never silently fall back to a default.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& c);

ExperimentConfig load_config(const std::string& path);
void save_config(const std::string& path, const ExperimentConfig& c);

}  // namespace snpx
