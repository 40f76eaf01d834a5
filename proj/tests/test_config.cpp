#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "zerofl/config.hpp"
#include "zerofl/error.hpp"
#include "zerofl/runner.hpp"

using namespace zerofl;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path tmp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("zerofl_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string config_error_key(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<none>";
}

const std::string kGolden = std::string(ZEROFL_TEST_DATA) + "/golden.ini";

}  // namespace

TEST_CASE("minimal config gets every default") {
  const auto cfg = parse_config_text("version = 1\n[federation]\nseed = 3\n");
  ExperimentConfig want;
  want.federation.seed = 3;
  CHECK(cfg == want);
  const auto text = to_config_text(cfg);
  for (const char* key : {"total_clients = 32", "clients_per_round = 8", "rounds = 150", "strategy = topk_weights",
                          "aggregator = fedavg", "activation_topk = per_batch", "beta2 = ", "alpha = 1",
                          "snapshot_every = 20", "arch = mlp", "source = synthetic", "workers = 1"}) {
    CHECK_MESSAGE(text.find(key) != std::string::npos, key);
  }
  CHECK(parse_config_text(text) == cfg);
}

TEST_CASE("config errors name the key") {
  CHECK(config_error_key("version = 1\n[federation]\nseed = 1\nsp = 1.5\n") == "federation.sp");
  CHECK(config_error_key("version = 1\n[federation]\nseed = 1\nbogus = 2\n") == "federation.bogus");
  CHECK(config_error_key("version = 1\n[federation]\nseed = 1\nrounds = many\n") == "federation.rounds");
  CHECK(config_error_key("version = 1\n[federation]\nseed = 1\nseed = 2\n") == "federation.seed");
  CHECK(config_error_key("version = 1\n[federation]\nrounds = 3\n") == "federation.seed");
  CHECK(config_error_key("[federation]\nseed = 1\n") == "version");
  CHECK(config_error_key("version = 2\n[federation]\nseed = 1\n") == "version");
  CHECK(config_error_key("version = 1\n[nope]\n") == "nope");
  CHECK(config_error_key("version = 1\n[federation]\nseed = 1\nstrategy = magic\n") == "federation.strategy");
  CHECK(config_error_key("version = 1\n[federation]\nseed = 1\nclients_per_round = 40\n") ==
        "federation.clients_per_round");
  CHECK(config_error_key("version = 1\n[partition]\nalpha = 0\n[federation]\nseed = 1\n") == "partition.alpha");
  CHECK(config_error_key("version = 1\n[federation]\nseed = 1\n[data]\nsource = idx\n") == "data.train_images");
  CHECK_THROWS_AS(parse_config("/nonexistent/zerofl.ini"), Error);
}

TEST_CASE("seed override") {
  CHECK(parse_config_text("version = 1\n", 9).federation.seed == 9);
  CHECK(parse_config_text("version = 1\n[federation]\nseed = 4\n", 9).federation.seed == 9);
}

TEST_CASE("comments and whitespace") {
  const auto cfg = parse_config_text("# head\n  version = 1  \n\n[federation] ; trailing\n  seed=7 # why not\nsp = 0.5\n");
  CHECK(cfg.federation.seed == 7);
  CHECK(cfg.federation.sp == 0.5);
}

TEST_CASE("round trip of a non default config") {
  ExperimentConfig c;
  c.federation.total_clients = 10;
  c.federation.clients_per_round = 4;
  c.federation.strategy = Strategy::TopKWeightsDiff;
  c.federation.sp = 0.123456789012345;
  c.federation.r_mask = 0.3;
  c.federation.activation_scope = ActivationTopK::PerSample;
  c.federation.aggregator = Aggregator::FedAdam;
  c.federation.fedadam.tau = 1e-9;
  c.federation.seed = 18446744073709551615ull;
  c.data.spread = 0.1 / 3.0;
  c.model.arch = ModelSpec::Arch::Cnn;
  c.model.sparse_layer_bias = true;
  c.alpha = 0.05;
  c.snapshot_every = 0;
  c.out_dir = "some dir/x";
  c.workers = 3;
  CHECK(parse_config_text(to_config_text(c)) == c);
}

TEST_CASE("metrics header") {
  const std::vector<std::string> layers{"conv1", "fc1"};
  CHECK(metrics_header(layers) == std::vector<std::string>{"round", "lr", "train_loss", "test_acc", "bytes_up",
                                                           "bytes_dense", "savings", "nz_conv1", "nz_fc1"});
}

TEST_CASE("golden config reproduces golden metrics") {
  const auto dir = tmp_dir("golden");
  run_to_dir(parse_config(kGolden), dir);
  CHECK(slurp(dir / "metrics.csv") == slurp(std::string(ZEROFL_TEST_DATA) + "/golden_metrics.csv"));
  for (const char* f : {"config.txt", "heatmap.txt", "overlap.csv", "jaccard.csv", "flops.csv", "final_model.zfu"}) {
    CHECK_MESSAGE(fs::exists(dir / f), f);
  }
  // the echoed config runs the same experiment
  CHECK(parse_config(dir / "config.txt") == parse_config(kGolden));
  CHECK(read_update_file(dir / "final_model.zfu").layers.size() == 5);
}

TEST_CASE("reruns are bitwise identical across worker counts") {
  auto cfg = parse_config(kGolden);
  const auto a = tmp_dir("det_a"), b = tmp_dir("det_b");
  run_to_dir(cfg, a);
  cfg.workers = 4;
  run_to_dir(cfg, b);
  CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
  CHECK(slurp(a / "final_model.zfu") == slurp(b / "final_model.zfu"));
}

TEST_CASE("compare runs") {
  const auto a = tmp_dir("cmp_a");
  const auto cfg = parse_config(kGolden);
  run_to_dir(cfg, a);
  const auto same = compare_runs(a, a);
  CHECK(same.accuracy_delta == 0.0);
  CHECK(same.savings_delta == 0.0);
  CHECK(same.bytes_up_delta == 0.0);
  CHECK(same.a.rounds == 5);
  CHECK(format_comparison(same).find("accuracy") != std::string::npos);
  CHECK_THROWS_AS(compare_runs(a, tmp_dir("cmp_missing")), Error);
}

TEST_CASE("uplink bytes grow with r_mask") {
  auto cfg = parse_config(kGolden);
  std::uint64_t prev = 0;
  for (double r : {0.0, 0.1, 0.2}) {
    cfg.federation.r_mask = r;
    const auto dir = tmp_dir("rmask");
    run_to_dir(cfg, dir);
    const auto s = summarize_run(dir);
    CHECK(s.total_bytes_up > prev);
    prev = s.total_bytes_up;
  }
}

TEST_CASE("one round run is quick") {
  auto cfg = parse_config(kGolden);
  cfg.federation.rounds = 1;
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = run_to_dir(cfg, tmp_dir("t1"));
  const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
  CHECK(res.records.size() == 1);
  CHECK(dt.count() < 5.0);
}
