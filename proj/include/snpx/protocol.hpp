#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "snpx/agents.hpp"
#include "snpx/analysis.hpp"
#include "snpx/config.hpp"
#include "snpx/io.hpp"
#include "snpx/snoop.hpp"

namespace snpx {

// A pipeline stage failed; partial artifacts written so far stay on disk.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "' failed: " + what),
        stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct TimedRow {
  std::string strategy;  // acp_threshold | random_rate | surrogate_threshold
  uint64_t seed = 0;
  float beta = 0.0f;  // 0 for random_rate
  float attack_rate = 0.0f;
  double total_reward = 0.0;
  double reward_per_episode = 0.0;
  int64_t episodes = 0;
};

// Held-out quality gates; negative sentinel = not measured (proxy absent or
// forbidden by the threat model).
struct ProxyQuality {
  float imitator_agreement = -1.0f;
  float assessor_pearson = -2.0f;
  float psychic_mse = -1.0f;
  float copy_last_mse = -1.0f;
  float ac_psychic_mse = -1.0f;
};

struct ProtocolResult {
  std::string out_dir;
  float target_clean_mean = 0.0f;
  float random_mean = 0.0f;
  SweepTable sweep;
  std::vector<TimedRow> timed;
  std::map<std::string, AlignmentReport> alignment;  // proxy kind -> report
  ProxyQuality quality;
};

// ---- stage pieces ----
// Each is deterministic in (cfg, seed) and reusable standalone (the CLI's
// partial subcommands and the acceptance harness call them directly). When a
// matching checkpoint path is set in cfg, the training stage loads instead.

Policy stage_train_target(const ExperimentConfig& cfg, uint64_t seed);
Policy stage_train_surrogate(const ExperimentConfig& cfg, uint64_t seed);
std::map<std::string, ProxyModel> stage_train_proxies(const ExperimentConfig& cfg,
                                                      uint64_t seed,
                                                      const Policy& target);
ProxyQuality stage_proxy_quality(const ExperimentConfig& cfg, uint64_t seed,
                                 const Policy& target,
                                 const std::map<std::string, ProxyModel>& proxies);
SweepTable stage_attack_sweep(const ExperimentConfig& cfg, uint64_t seed,
                              const Policy& target, const Policy* surrogate,
                              const std::map<std::string, ProxyModel>& proxies);
std::vector<TimedRow> stage_timed_attacks(const ExperimentConfig& cfg,
                                          const std::vector<uint64_t>& seeds,
                                          const Policy& target, const Policy* surrogate,
                                          const std::map<std::string, ProxyModel>& proxies);
std::map<std::string, AlignmentReport> stage_alignment(
    const ExperimentConfig& cfg, uint64_t seed, const Policy& target,
    const std::map<std::string, ProxyModel>& proxies);

// Renders example states and their saliency maps under <out_dir>/images, plus
// one perturbed view crafted from the imitator (surrogate fallback) when
// either is available.
void stage_saliency(const ExperimentConfig& cfg, uint64_t seed, const Policy& target,
                    const Policy* surrogate,
                    const std::map<std::string, ProxyModel>& proxies);

// Rebuilds sweep cells from rows written by sweep_csv (inverse transform; the
// result revalidates through aggregate_sweep).
SweepTable sweep_from_csv(const CsvTable& table);

// Loads a proxy checkpoint and rejects kind or environment mismatches.
ProxyModel load_proxy_checkpoint(const std::string& path,
                                 const std::string& expected_kind,
                                 const std::string& env_name);

// ---- result serialization (all byte-deterministic) ----

CsvTable quality_csv(const ProxyQuality& q);
CsvTable timed_csv(const std::vector<TimedRow>& rows);
CsvTable alignment_csv(const std::map<std::string, AlignmentReport>& reports);

// Reward-vs-epsilon figure for one norm: one series per (source, method)
// plus flat clean and random-policy reference lines.
std::string sweep_svg(const SweepTable& table, const std::string& env,
                      const std::string& agent_algo, const std::string& norm);

// ---- the full pipeline ----
// train target (noise-augmented) -> train surrogate -> snoop -> train proxies
// -> quality gates -> epsilon sweeps -> timed attacks -> alignment + saliency
// artifacts. Artifacts land under cfg.out_dir; cfg.seeds[0] drives every
// stage except the timed attacks, which fan out across all seeds. Any stage
// failure raises StageError naming the stage; earlier artifacts survive.
ProtocolResult run_full_protocol(const ExperimentConfig& cfg);

}  // namespace snpx
