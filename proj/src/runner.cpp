#include "zerofl/runner.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace zerofl {

namespace {

std::string fmt(const char* spec, double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

RunInputs prepare_run(const ExperimentConfig& cfg) {
  validate_config(cfg);
  const std::uint64_t seed = cfg.federation.seed;
  RunInputs in;
  if (cfg.data.source == DataConfig::Source::Synthetic) {
    const Dataset all = synth_blobs(cfg.data.classes, cfg.data.per_class, cfg.data.dims, cfg.data.spread,
                                    derive_seed(seed, Stream::Data));
    std::tie(in.train, in.test) = train_test_split(all, cfg.data.test_fraction, derive_seed(seed, Stream::Split));
  } else {
    in.train = load_idx(cfg.data.train_images, cfg.data.train_labels);
    in.test = load_idx(cfg.data.test_images, cfg.data.test_labels);
    if (in.train.sample_shape() != in.test.sample_shape()) {
      throw ShapeError("data", "train and test samples differ in shape");
    }
  }
  in.plan = lda_partition(in.train, cfg.federation.total_clients, cfg.alpha, derive_seed(seed, Stream::Partition));
  Rng rng(derive_seed(seed, Stream::Init));
  const std::size_t classes = std::max(in.train.num_classes(), in.test.num_classes());
  in.init = make_model(cfg.model, in.train.sample_shape(), classes, rng);
  return in;
}

std::vector<std::string> metrics_header(std::span<const std::string> sparse_layers) {
  std::vector<std::string> h{"round", "lr", "train_loss", "test_acc", "bytes_up", "bytes_dense", "savings"};
  for (const auto& l : sparse_layers) h.push_back("nz_" + l);
  return h;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const RoundRecord> records,
                       std::span<const std::string> sparse_layers) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  const auto header = metrics_header(sparse_layers);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& r : records) {
    out << r.round << ',' << fmt("%.10g", r.lr) << ',' << fmt("%.6f", r.train_loss) << ','
        << fmt("%.6f", r.test_accuracy) << ',' << r.bytes_up << ',' << r.bytes_dense << ',' << fmt("%.6f", r.savings);
    for (const auto& layer : sparse_layers) {
      double ratio = 0.0;
      bool found = false;
      for (const auto& [name, v] : r.overlap.ratios) {
        if (name == layer) {
          ratio = v;
          found = true;
        }
      }
      if (!found) throw ValueError("round " + std::to_string(r.round) + " has no ratio for layer " + layer);
      out << ',' << fmt("%.6f", ratio);
    }
    out << '\n';
  }
}

ExperimentResult run_to_dir(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                            std::function<void(const RoundRecord&)> on_round) {
  const RunInputs in = prepare_run(cfg);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create output directory " + out_dir.string() + ": " + ec.message());
  {
    std::ofstream probe(out_dir / "config.txt");
    if (!probe) throw Error("output directory " + out_dir.string() + " is not writable");
    probe << to_config_text(cfg);
  }

  RunOptions opts;
  opts.workers = cfg.workers;
  opts.validation_fraction = cfg.data.validation_fraction;
  opts.snapshot_every = cfg.snapshot_every;
  opts.on_round = std::move(on_round);
  ExperimentResult res = run_experiment(cfg.federation, in.init, in.train, in.plan, in.test, opts);

  const auto layers = sparsifiable_layers(in.init);
  write_metrics_csv(out_dir / "metrics.csv", res.records, layers);
  res.heatmap.write(out_dir / "heatmap.txt");
  std::vector<OverlapReport> overlaps;
  for (const auto& r : res.records) overlaps.push_back(r.overlap);
  write_overlap_csv(out_dir / "overlap.csv", overlaps);
  write_jaccard_csv(out_dir / "jaccard.csv", mask_stability(res.heatmap));
  write_flops_csv(out_dir / "flops.csv", flops_report(res.final_model, cfg.federation.sp));
  std::size_t samples = 0;
  for (const auto& a : in.plan.assignments) samples += a.size();
  write_update_file(out_dir / "final_model.zfu",
                    build_update(res.final_model, res.final_model, Strategy::FullDense, cfg.federation.sp,
                                 cfg.federation.r_mask, static_cast<std::uint32_t>(samples)));
  return res;
}

RunSummary summarize_run(const std::filesystem::path& run_dir) {
  const auto path = run_dir / "metrics.csv";
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(FormatError::Kind::Truncated, path.string() + " is empty");
  const auto header = split_csv(line);
  auto column = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw FormatError(FormatError::Kind::Invariant, path.string() + " has no column " + name);
  };
  const std::size_t acc = column("test_acc"), sav = column("savings"), up = column("bytes_up");
  RunSummary s;
  double savings_sum = 0.0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw FormatError(FormatError::Kind::Invariant, path.string() + ": row width differs from header");
    }
    ++s.rounds;
    s.final_accuracy = std::stod(cells[acc]);
    savings_sum += std::stod(cells[sav]);
    s.total_bytes_up += std::stoull(cells[up]);
  }
  if (s.rounds > 0) s.mean_savings = savings_sum / static_cast<double>(s.rounds);
  return s;
}

Comparison compare_runs(const std::filesystem::path& run_a, const std::filesystem::path& run_b) {
  Comparison c;
  c.a = summarize_run(run_a);
  c.b = summarize_run(run_b);
  c.accuracy_delta = c.b.final_accuracy - c.a.final_accuracy;
  c.savings_delta = c.b.mean_savings - c.a.mean_savings;
  c.bytes_up_delta = static_cast<double>(c.b.total_bytes_up) - static_cast<double>(c.a.total_bytes_up);
  return c;
}

std::string format_comparison(const Comparison& c) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%-10s %10s %10s %10s\n"
                "%-10s %10.4f %10.4f %+10.4f\n"
                "%-10s %10.3f %10.3f %+10.3f\n"
                "%-10s %10llu %10llu %+10.0f\n",
                "metric", "a", "b", "delta", "accuracy", c.a.final_accuracy, c.b.final_accuracy, c.accuracy_delta,
                "savings", c.a.mean_savings, c.b.mean_savings, c.savings_delta, "bytes_up",
                static_cast<unsigned long long>(c.a.total_bytes_up),
                static_cast<unsigned long long>(c.b.total_bytes_up), c.bytes_up_delta);
  return buf;
}

}  // namespace zerofl
