// Drives the installed command-line binary end to end. The binary path comes
// from the SNPX_CLI environment variable (set by the test harness).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "snpx/protocol.hpp"

using namespace snpx;
namespace fs = std::filesystem;

namespace {

struct TmpDir {
  fs::path path;
  TmpDir() {
    path = fs::temp_directory_path() / ("snpx-cli-test-" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TmpDir() { fs::remove_all(path); }
  std::string dir(const std::string& name) const { return (path / name).string(); }
};

std::string cli_binary() {
  const char* p = std::getenv("SNPX_CLI");
  REQUIRE_MESSAGE(p != nullptr, "SNPX_CLI must point at the built binary");
  return p;
}

// Runs `snpx <args>` capturing exit code; stdout/stderr go to a scratch file.
int run_cli(const std::string& args, const std::string& capture_path) {
  const std::string cmd =
      cli_binary() + " " + args + " >" + capture_path + " 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Small enough that the whole pipeline stays in seconds.
ExperimentConfig cli_config(const std::string& out_dir) {
  ExperimentConfig cfg;
  cfg.env.name = "mini-catch";
  cfg.env.drops = 2;
  cfg.env.max_episode_len = 80;
  cfg.agent.train_steps = 200;
  cfg.agent.replay_capacity = 1000;
  cfg.agent.warmup = 60;
  cfg.agent.target_sync = 20;
  cfg.agent.eps_decay_steps = 100;
  cfg.threat = "SRA";
  cfg.proxies = {"imitator", "assessor", "psychic", "ac_psychic"};
  cfg.proxy_train.buffer_records = 300;
  cfg.proxy_train.total_iterations = 400;
  cfg.proxy_train.epochs = 4;
  cfg.attacks.linf_eps = {0.03f};
  cfg.attacks.l2_eps = {0.8f};
  cfg.attacks.methods = {"fgm"};
  cfg.timing.attack_rate = 0.3f;
  cfg.timing.total_steps = 120;
  cfg.timing.calibration_states = 1000;
  cfg.eval_episodes = 2;
  cfg.seeds = {31};
  cfg.out_dir = out_dir;
  cfg.validate();
  return cfg;
}

}  // namespace

TEST_CASE("usage errors exit 1, help exits 0") {
  TmpDir tmp;
  const std::string cap = tmp.dir("cap.txt");
  CHECK(run_cli("--help", cap) == 0);
  CHECK(slurp(cap).find("Subcommands") != std::string::npos);
  CHECK(run_cli("", cap) == 1);
  CHECK(run_cli("no-such-subcommand", cap) == 1);
  CHECK(run_cli("train-agent --no-such-flag", cap) == 1);
  CHECK(run_cli("train-agent --config /no/such/config.json", cap) == 1);
}

TEST_CASE("attack-sweep without a trained target names the missing checkpoint") {
  TmpDir tmp;
  const std::string cfg_path = tmp.dir("cfg.json");
  save_config(cfg_path, cli_config(tmp.dir("run")));
  const std::string cap = tmp.dir("cap.txt");
  CHECK(run_cli("attack-sweep --config " + cfg_path, cap) == 1);
  const std::string msg = slurp(cap);
  CHECK(msg.find("target checkpoint not found") != std::string::npos);
  CHECK(msg.find(tmp.dir("run") + "/checkpoints/target.snpx") != std::string::npos);
}

TEST_CASE("stagewise pipeline over one directory, then report") {
  TmpDir tmp;
  const std::string cfg_path = tmp.dir("cfg.json");
  const std::string run = tmp.dir("run");
  save_config(cfg_path, cli_config(run));
  const std::string cap = tmp.dir("cap.txt");
  const std::string base = " --config " + cfg_path;

  // train-agent is deterministic: same invocation twice, identical bytes.
  REQUIRE(run_cli("train-agent" + base + " --out " + tmp.dir("det1"), cap) == 0);
  REQUIRE(run_cli("train-agent" + base + " --out " + tmp.dir("det2"), cap) == 0);
  CHECK(slurp(tmp.dir("det1") + "/checkpoints/target.snpx") ==
        slurp(tmp.dir("det2") + "/checkpoints/target.snpx"));

  // A different seed must change the checkpoint.
  REQUIRE(run_cli("train-agent" + base + " --seed 99 --out " + tmp.dir("det3"), cap) ==
          0);
  CHECK(slurp(tmp.dir("det1") + "/checkpoints/target.snpx") !=
        slurp(tmp.dir("det3") + "/checkpoints/target.snpx"));

  REQUIRE(run_cli("train-agent" + base, cap) == 0);
  REQUIRE(run_cli("train-agent --role surrogate" + base, cap) == 0);
  CHECK(fs::exists(run + "/checkpoints/target.snpx"));
  CHECK(fs::exists(run + "/checkpoints/surrogate.snpx"));
  CHECK(slurp(run + "/checkpoints/target.snpx") !=
        slurp(run + "/checkpoints/surrogate.snpx"));

  REQUIRE(run_cli("train-proxy" + base, cap) == 0);
  for (const char* name : {"imitator", "assessor", "psychic", "ac_psychic"})
    CHECK(fs::exists(run + "/checkpoints/" + std::string(name) + ".snpx"));
  CHECK(fs::exists(run + "/results/quality.csv"));

  REQUIRE(run_cli("snoop" + base, cap) == 0);
  const std::string snoop = slurp(run + "/results/snoop.csv");
  CHECK(snoop.find("record,episode_start,episode_end,reward,action") == 0);
  CHECK(fs::exists(run + "/images/snoop_state_0.pgm"));

  REQUIRE(run_cli("attack-sweep" + base, cap) == 0);
  CHECK(fs::exists(run + "/results/sweep.csv"));
  CHECK(fs::exists(run + "/results/reward_vs_eps_linf.svg"));
  CHECK(fs::exists(run + "/results/reward_vs_eps_l2.svg"));

  REQUIRE(run_cli("timed-attack" + base, cap) == 0);
  const std::string timed = slurp(run + "/results/timed.csv");
  CHECK(timed.find("acp_threshold") != std::string::npos);
  CHECK(timed.find("random_rate") != std::string::npos);
  CHECK(timed.find("surrogate_threshold") != std::string::npos);

  REQUIRE(run_cli("saliency" + base, cap) == 0);
  CHECK(fs::exists(run + "/images/saliency_0.pgm"));
  CHECK(fs::exists(run + "/images/perturbed_0.pgm"));

  REQUIRE(run_cli("align" + base, cap) == 0);
  const std::string align = slurp(run + "/results/alignment.csv");
  CHECK(align.find("imitator") != std::string::npos);
  CHECK(align.find("psychic") != std::string::npos);

  // report: one CSV + one SVG per (env, agent) pair in the sweep.
  REQUIRE(run_cli("report" + base, cap) == 0);
  CHECK(fs::exists(run + "/results/report_mini-catch_dqn.csv"));
  CHECK(fs::exists(run + "/results/report_mini-catch_dqn.svg"));
  const CsvTable summary =
      parse_csv(read_text_file(run + "/results/report_mini-catch_dqn.csv"));
  CHECK(summary.header.back() == "mean_reward");
  // 2 baselines + 4 sources x 1 method x 2 norms x 1 eps + 2 noise cells.
  CHECK(summary.rows.size() == 12);
}

TEST_CASE("report without a sweep exits 1 naming the missing file") {
  TmpDir tmp;
  const std::string cfg_path = tmp.dir("cfg.json");
  save_config(cfg_path, cli_config(tmp.dir("empty")));
  const std::string cap = tmp.dir("cap.txt");
  CHECK(run_cli("report --config " + cfg_path, cap) == 1);
  CHECK(slurp(cap).find("sweep results not found") != std::string::npos);
}
