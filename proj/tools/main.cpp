// Command-line front end: each subcommand runs one pipeline stage against a
// JSON experiment config, writing artifacts under the output directory.
// Exit codes: 0 success, 1 configuration/usage error, 2 runtime failure.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "snpx/protocol.hpp"

using namespace snpx;
namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  uint64_t seed = 0;
  bool seed_set = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config JSON")
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", out_dir, "output directory (overrides config out_dir)");
    cmd->add_option("--seed", seed, "master seed (overrides config seeds[0])")
        ->each([this](const std::string&) { seed_set = true; });
  }

  ExperimentConfig resolve() const {
    ExperimentConfig cfg;
    if (!config_path.empty()) {
      try {
        cfg = load_config(config_path);
      } catch (const std::invalid_argument&) {
        throw;
      } catch (const std::exception& e) {
        throw std::invalid_argument(e.what());
      }
    }
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (seed_set) {
      if (cfg.seeds.empty()) cfg.seeds = {seed};
      else cfg.seeds[0] = seed;
    }
    cfg.validate();
    return cfg;
  }
};

std::string checkpoint_dir(const ExperimentConfig& cfg) {
  return (fs::path(cfg.out_dir) / "checkpoints").string();
}

std::string results_dir(const ExperimentConfig& cfg) {
  return (fs::path(cfg.out_dir) / "results").string();
}

// A checkpoint path is either named in the config or discovered at the
// conventional spot under out_dir. Configured paths and required roles must
// exist; an undiscovered optional role resolves to "".
std::string resolve_checkpoint(const ExperimentConfig& cfg,
                               const std::string& configured,
                               const std::string& file_name, bool required,
                               const char* role) {
  const std::string path =
      configured.empty() ? (fs::path(checkpoint_dir(cfg)) / file_name).string()
                         : configured;
  if (fs::exists(path)) return path;
  if (required || !configured.empty())
    throw std::invalid_argument(std::string(role) + " checkpoint not found: " + path);
  return "";
}

Policy load_target(ExperimentConfig& cfg) {
  cfg.target_checkpoint =
      resolve_checkpoint(cfg, cfg.target_checkpoint, "target.snpx", true, "target");
  return stage_train_target(cfg, cfg.seeds.front());
}

// Surrogate is optional for most stages: nullopt when neither configured nor
// discoverable.
std::optional<Policy> load_surrogate(ExperimentConfig& cfg) {
  cfg.surrogate_checkpoint = resolve_checkpoint(cfg, cfg.surrogate_checkpoint,
                                                "surrogate.snpx", false, "surrogate");
  if (cfg.surrogate_checkpoint.empty()) return std::nullopt;
  return stage_train_surrogate(cfg, cfg.seeds.front());
}

// Loads every configured-or-discoverable proxy from cfg.proxies; trains
// nothing.
std::map<std::string, ProxyModel> load_available_proxies(const ExperimentConfig& cfg) {
  std::map<std::string, ProxyModel> out;
  for (const std::string& name : cfg.proxies) {
    const auto it = cfg.proxy_checkpoints.find(name);
    const std::string path =
        resolve_checkpoint(cfg, it == cfg.proxy_checkpoints.end() ? "" : it->second,
                           name + ".snpx", false, name.c_str());
    if (!path.empty()) out.emplace(name, load_proxy_checkpoint(path, name, cfg.env.name));
  }
  return out;
}

void cmd_train_agent(const CommonFlags& flags, const std::string& role) {
  ExperimentConfig cfg = flags.resolve();
  const uint64_t master = cfg.seeds.front();
  cfg.target_checkpoint.clear();
  cfg.surrogate_checkpoint.clear();
  const bool surrogate = role == "surrogate";
  const Policy p = surrogate ? stage_train_surrogate(cfg, master)
                             : stage_train_target(cfg, master);
  fs::create_directories(checkpoint_dir(cfg));
  const std::string path =
      (fs::path(checkpoint_dir(cfg)) / (role + ".snpx")).string();
  save_policy(path, p, cfg.env.name, master);
  const EvalResult clean = evaluate(p, cfg.env, cfg.eval_episodes);
  std::cout << "trained " << role << " (" << cfg.agent.algorithm << ", "
            << cfg.env.name << "): clean mean reward " << clean.mean << "\n"
            << "wrote " << path << "\n";
}

void cmd_train_proxy(const CommonFlags& flags) {
  ExperimentConfig cfg = flags.resolve();
  const uint64_t master = cfg.seeds.front();
  const Policy target = load_target(cfg);
  const auto proxies = stage_train_proxies(cfg, master, target);
  fs::create_directories(checkpoint_dir(cfg));
  for (const auto& [name, model] : proxies) {
    const std::string path = (fs::path(checkpoint_dir(cfg)) / (name + ".snpx")).string();
    save_proxy(path, model, cfg.env.name, master);
    std::cout << "wrote " << path << "\n";
  }
  const ProxyQuality q = stage_proxy_quality(cfg, master, target, proxies);
  fs::create_directories(results_dir(cfg));
  write_text_file((fs::path(results_dir(cfg)) / "quality.csv").string(),
                  csv_text(quality_csv(q)));
  std::cout << "wrote " << (fs::path(results_dir(cfg)) / "quality.csv").string() << "\n";
}

template <ThreatModel TM>
void snoop_artifacts(const ExperimentConfig& cfg, const Policy& target) {
  EnvDescriptor d = cfg.env;
  d.seed = Rng::mix(cfg.seeds.front(), "snoop-cli");
  const auto env = make_env(d);
  const SnoopBuffer<TM> buf =
      snoop_collect<TM>(target, *env, cfg.proxy_train.buffer_records);

  CsvTable t;
  t.header = {"record", "episode_start", "episode_end"};
  if constexpr (snoops_rewards(TM)) t.header.push_back("reward");
  if constexpr (snoops_actions(TM)) t.header.push_back("action");
  for (int i = 0; i < buf.size(); ++i) {
    std::vector<std::string> row = {std::to_string(i),
                                    buf.episode_start(i) ? "1" : "0",
                                    buf.episode_end(i) ? "1" : "0"};
    if constexpr (snoops_rewards(TM)) row.push_back(float_text(buf.reward(i)));
    if constexpr (snoops_actions(TM)) row.push_back(std::to_string(buf.action(i)));
    t.rows.push_back(std::move(row));
  }
  fs::create_directories(results_dir(cfg));
  write_text_file((fs::path(results_dir(cfg)) / "snoop.csv").string(), csv_text(t));

  const fs::path images = fs::path(cfg.out_dir) / "images";
  fs::create_directories(images);
  const int g = buf.grid();
  for (int i = 0; i < std::min(8, buf.size()); ++i) {
    const Tensor s = buf.state(i);
    write_pgm((images / ("snoop_state_" + std::to_string(i) + ".pgm")).string(),
              s.data() + static_cast<size_t>(buf.stack() - 1) * g * g, g, g);
  }
  std::cout << "snooped " << buf.size() << " records under " << cfg.threat << " into "
            << results_dir(cfg) << "/snoop.csv\n";
}

void cmd_snoop(const CommonFlags& flags) {
  ExperimentConfig cfg = flags.resolve();
  const Policy target = load_target(cfg);
  switch (threat_from_name(cfg.threat)) {
    case ThreatModel::S: return snoop_artifacts<ThreatModel::S>(cfg, target);
    case ThreatModel::SR: return snoop_artifacts<ThreatModel::SR>(cfg, target);
    case ThreatModel::SA: return snoop_artifacts<ThreatModel::SA>(cfg, target);
    case ThreatModel::SRA: return snoop_artifacts<ThreatModel::SRA>(cfg, target);
  }
}

void cmd_attack_sweep(const CommonFlags& flags) {
  ExperimentConfig cfg = flags.resolve();
  const uint64_t master = cfg.seeds.front();
  const Policy target = load_target(cfg);
  const std::optional<Policy> surrogate = load_surrogate(cfg);
  const auto proxies = load_available_proxies(cfg);

  const SweepTable table = stage_attack_sweep(
      cfg, master, target, surrogate ? &*surrogate : nullptr, proxies);
  fs::create_directories(results_dir(cfg));
  const fs::path res(results_dir(cfg));
  write_text_file((res / "sweep.csv").string(), csv_text(sweep_csv(table, master)));
  write_svg((res / "reward_vs_eps_linf.svg").string(),
            sweep_svg(table, cfg.env.name, cfg.agent.algorithm, "linf"));
  write_svg((res / "reward_vs_eps_l2.svg").string(),
            sweep_svg(table, cfg.env.name, cfg.agent.algorithm, "l2"));
  std::cout << "swept " << table.rows.size() << " cells into " << (res / "sweep.csv").string()
            << "\n";
}

void cmd_timed_attack(const CommonFlags& flags) {
  ExperimentConfig cfg = flags.resolve();
  const Policy target = load_target(cfg);
  const std::optional<Policy> surrogate = load_surrogate(cfg);
  const auto proxies = load_available_proxies(cfg);

  const std::vector<TimedRow> rows = stage_timed_attacks(
      cfg, cfg.seeds, target, surrogate ? &*surrogate : nullptr, proxies);
  fs::create_directories(results_dir(cfg));
  const std::string path = (fs::path(results_dir(cfg)) / "timed.csv").string();
  write_text_file(path, csv_text(timed_csv(rows)));
  std::cout << "ran " << rows.size() << " timed-attack runs into " << path << "\n";
}

void cmd_saliency(const CommonFlags& flags) {
  ExperimentConfig cfg = flags.resolve();
  const Policy target = load_target(cfg);
  const std::optional<Policy> surrogate = load_surrogate(cfg);
  const auto proxies = load_available_proxies(cfg);
  stage_saliency(cfg, cfg.seeds.front(), target, surrogate ? &*surrogate : nullptr,
                 proxies);
  std::cout << "wrote saliency images under " << cfg.out_dir << "/images\n";
}

void cmd_align(const CommonFlags& flags) {
  ExperimentConfig cfg = flags.resolve();
  const Policy target = load_target(cfg);
  const auto proxies = load_available_proxies(cfg);
  const auto reports = stage_alignment(cfg, cfg.seeds.front(), target, proxies);
  fs::create_directories(results_dir(cfg));
  const std::string path = (fs::path(results_dir(cfg)) / "alignment.csv").string();
  write_text_file(path, csv_text(alignment_csv(reports)));
  for (const auto& [name, rep] : reports)
    std::cout << name << ": mean cosine " << rep.mean << " over "
              << rep.cosines.size() << " states (" << rep.zero_grad_states
              << " zero-gradient)\n";
  std::cout << "wrote " << path << "\n";
}

void cmd_report(const CommonFlags& flags) {
  ExperimentConfig cfg = flags.resolve();
  const std::string sweep_path = (fs::path(results_dir(cfg)) / "sweep.csv").string();
  if (!fs::exists(sweep_path))
    throw std::invalid_argument("sweep results not found: " + sweep_path);

  const SweepTable table = sweep_from_csv(parse_csv(read_text_file(sweep_path)));
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const SweepCell& c : table.rows) {
    const std::pair<std::string, std::string> key{c.env, c.agent_algo};
    if (std::find(pairs.begin(), pairs.end(), key) == pairs.end()) pairs.push_back(key);
  }

  for (const auto& [env, algo] : pairs) {
    CsvTable summary;
    summary.header = {"env",     "agent", "source",   "method",
                      "norm",    "epsilon", "episodes", "mean_reward"};
    bool any_linf = false;
    for (const SweepCell& c : table.rows) {
      if (c.env != env || c.agent_algo != algo) continue;
      if (c.norm == "linf") any_linf = true;
      summary.rows.push_back({c.env, c.agent_algo, c.attack_source, c.method, c.norm,
                              float_text(c.epsilon),
                              std::to_string(c.result.per_episode.size()),
                              float_text(c.result.mean)});
    }
    const std::string stem = "report_" + env + "_" + algo;
    const fs::path res(results_dir(cfg));
    write_text_file((res / (stem + ".csv")).string(), csv_text(summary));
    write_svg((res / (stem + ".svg")).string(),
              sweep_svg(table, env, algo, any_linf ? "linf" : "l2"));
    std::cout << "wrote " << (res / (stem + ".csv")).string() << " and "
              << (res / (stem + ".svg")).string() << "\n";
  }
}

void cmd_protocol(const CommonFlags& flags) {
  const ExperimentConfig cfg = flags.resolve();
  const ProtocolResult res = run_full_protocol(cfg);
  std::cout << "protocol complete in " << res.out_dir << "\n"
            << "clean mean reward " << res.target_clean_mean << ", random policy "
            << res.random_mean << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Desk-scale laboratory for eavesdropping adversaries: train pixel agents,\n"
      "fit proxy models from snooped signals, craft and time observation attacks."};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string train_role = "target";

  CLI::App* train_agent =
      app.add_subcommand("train-agent", "train the target (or surrogate) agent");
  train_agent->add_option("--role", train_role, "target | surrogate")
      ->check(CLI::IsMember({"target", "surrogate"}));
  CLI::App* train_proxy = app.add_subcommand(
      "train-proxy", "train configured proxies from snooped signals, then grade them");
  CLI::App* snoop =
      app.add_subcommand("snoop", "record an eavesdropped stream to CSV + images");
  CLI::App* attack_sweep = app.add_subcommand(
      "attack-sweep", "evaluate every attack source across the epsilon grids");
  CLI::App* timed_attack = app.add_subcommand(
      "timed-attack", "compare attack-timing strategies at a fixed rate");
  CLI::App* saliency =
      app.add_subcommand("saliency", "render example states and saliency maps");
  CLI::App* align = app.add_subcommand(
      "align", "measure proxy-vs-target gradient alignment");
  CLI::App* report = app.add_subcommand(
      "report", "summarize a completed sweep into per-(env,agent) CSV + SVG");
  CLI::App* protocol = app.add_subcommand(
      "protocol", "run the full pipeline: agents, proxies, sweeps, timing, analysis");
  for (CLI::App* cmd : {train_agent, train_proxy, snoop, attack_sweep, timed_attack,
                        saliency, align, report, protocol})
    flags.attach(cmd);

  train_agent->callback([&] { cmd_train_agent(flags, train_role); });
  train_proxy->callback([&] { cmd_train_proxy(flags); });
  snoop->callback([&] { cmd_snoop(flags); });
  attack_sweep->callback([&] { cmd_attack_sweep(flags); });
  timed_attack->callback([&] { cmd_timed_attack(flags); });
  saliency->callback([&] { cmd_saliency(flags); });
  align->callback([&] { cmd_align(flags); });
  report->callback([&] { cmd_report(flags); });
  protocol->callback([&] { cmd_protocol(flags); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const StageError& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
