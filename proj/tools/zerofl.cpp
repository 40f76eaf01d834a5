// zerofl: run federated SWAT experiments from a config file.

#include <cstdlib>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "zerofl/runner.hpp"

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("zerofl");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");
  const char* env = std::getenv("ZEROFL_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
}

struct Overrides {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::size_t> snapshot_every;
};

zerofl::ExperimentConfig load(const Overrides& o) {
  auto cfg = zerofl::parse_config(o.config, o.seed);
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (o.workers) cfg.workers = *o.workers;
  if (o.snapshot_every) cfg.snapshot_every = *o.snapshot_every;
  zerofl::validate_config(cfg);
  return cfg;
}

void add_config_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "experiment config file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "output directory (overrides run.out_dir)");
  cmd->add_option("--seed", o.seed, "experiment seed (overrides federation.seed)");
  cmd->add_option("--workers", o.workers, "client worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--snapshot-every", o.snapshot_every, "heatmap snapshot period in rounds, 0 disables");
}

int cmd_run(const Overrides& o) {
  const auto cfg = load(o);
  spdlog::info("run: {} rounds, {} of {} clients, strategy {}, sp {}, r_mask {}, out {}", cfg.federation.rounds,
               cfg.federation.clients_per_round, cfg.federation.total_clients,
               zerofl::to_string(cfg.federation.strategy), cfg.federation.sp, cfg.federation.r_mask, cfg.out_dir);
  const auto res = zerofl::run_to_dir(cfg, cfg.out_dir, [](const zerofl::RoundRecord& r) {
    spdlog::debug("round {:>4} lr {:.5f} loss {:.4f} acc {:.4f} up {} B savings {:.2f}x", r.round, r.lr,
                  r.train_loss, r.test_accuracy, r.bytes_up, r.savings);
  });
  if (!res.records.empty()) {
    const auto& last = res.records.back();
    spdlog::info("final test accuracy {:.4f}, savings {:.2f}x", last.test_accuracy, last.savings);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Federated SWAT training with sparse uplink"};
  app.require_subcommand(1);

  Overrides run_opts;
  auto* run = app.add_subcommand("run", "run an experiment and write its artifacts");
  add_config_flags(run, run_opts);

  Overrides echo_opts;
  auto* echo = app.add_subcommand("echo-config", "print the validated config with every default filled in");
  add_config_flags(echo, echo_opts);

  std::string dir_a, dir_b;
  auto* compare = app.add_subcommand("compare", "compare final accuracy and savings of two runs");
  compare->add_option("run_a", dir_a, "first run directory")->required();
  compare->add_option("run_b", dir_b, "second run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_opts);
    if (*echo) {
      std::cout << zerofl::to_config_text(load(echo_opts));
      return 0;
    }
    if (*compare) {
      std::cout << zerofl::format_comparison(zerofl::compare_runs(dir_a, dir_b));
      return 0;
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
