#include "zerofl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <vector>

namespace zerofl {

namespace {

struct Field {
  const char* section;
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    throw ValueError("expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

double to_double(const std::string& s) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    throw ValueError("expected a real number, got '" + s + "'");
  }
  if (!std::isfinite(v)) throw ValueError("expected a finite number, got '" + s + "'");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ValueError("expected true or false, got '" + s + "'");
}

template <typename M>
Field size_field(const char* sec, const char* key, M member) {
  return {sec, key, [member](ExperimentConfig& c, const std::string& v) { member(c) = to_u64(v); },
          [member](const ExperimentConfig& c) {
            return std::to_string(member(const_cast<ExperimentConfig&>(c)));
          }};
}

template <typename M>
Field real_field(const char* sec, const char* key, M member) {
  return {sec, key, [member](ExperimentConfig& c, const std::string& v) { member(c) = to_double(v); },
          [member](const ExperimentConfig& c) { return fmt_double(member(const_cast<ExperimentConfig&>(c))); }};
}

template <typename M>
Field text_field(const char* sec, const char* key, M member) {
  return {sec, key, [member](ExperimentConfig& c, const std::string& v) { member(c) = v; },
          [member](const ExperimentConfig& c) { return member(const_cast<ExperimentConfig&>(c)); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    using C = ExperimentConfig;
    std::vector<Field> f;
    f.push_back(size_field("federation", "total_clients", [](C& c) -> auto& { return c.federation.total_clients; }));
    f.push_back(
        size_field("federation", "clients_per_round", [](C& c) -> auto& { return c.federation.clients_per_round; }));
    f.push_back(size_field("federation", "rounds", [](C& c) -> auto& { return c.federation.rounds; }));
    f.push_back(size_field("federation", "local_epochs", [](C& c) -> auto& { return c.federation.local_epochs; }));
    f.push_back(size_field("federation", "batch_size", [](C& c) -> auto& { return c.federation.batch_size; }));
    f.push_back({"federation", "strategy",
                 [](C& c, const std::string& v) { c.federation.strategy = parse_strategy(v); },
                 [](const C& c) { return std::string(to_string(c.federation.strategy)); }});
    f.push_back(real_field("federation", "sp", [](C& c) -> auto& { return c.federation.sp; }));
    f.push_back(real_field("federation", "r_mask", [](C& c) -> auto& { return c.federation.r_mask; }));
    f.push_back({"federation", "activation_topk",
                 [](C& c, const std::string& v) {
                   if (v == "per_batch") {
                     c.federation.activation_scope = ActivationTopK::PerBatch;
                   } else if (v == "per_sample") {
                     c.federation.activation_scope = ActivationTopK::PerSample;
                   } else {
                     throw ValueError("expected per_batch or per_sample, got '" + v + "'");
                   }
                 },
                 [](const C& c) {
                   return std::string(c.federation.activation_scope == ActivationTopK::PerBatch ? "per_batch"
                                                                                                : "per_sample");
                 }});
    f.push_back({"federation", "aggregator",
                 [](C& c, const std::string& v) { c.federation.aggregator = parse_aggregator(v); },
                 [](const C& c) { return std::string(to_string(c.federation.aggregator)); }});
    f.push_back(real_field("federation", "lr_start", [](C& c) -> auto& { return c.federation.lr_start; }));
    f.push_back(real_field("federation", "lr_end", [](C& c) -> auto& { return c.federation.lr_end; }));
    f.push_back({"federation", "seed",
                 [](C& c, const std::string& v) { c.federation.seed = to_u64(v); },
                 [](const C& c) { return std::to_string(c.federation.seed); }});

    f.push_back(real_field("fedadam", "beta1", [](C& c) -> auto& { return c.federation.fedadam.beta1; }));
    f.push_back(real_field("fedadam", "beta2", [](C& c) -> auto& { return c.federation.fedadam.beta2; }));
    f.push_back(real_field("fedadam", "tau", [](C& c) -> auto& { return c.federation.fedadam.tau; }));
    f.push_back(real_field("fedadam", "server_lr", [](C& c) -> auto& { return c.federation.fedadam.server_lr; }));

    f.push_back({"data", "source",
                 [](C& c, const std::string& v) {
                   if (v == "synthetic") {
                     c.data.source = DataConfig::Source::Synthetic;
                   } else if (v == "idx") {
                     c.data.source = DataConfig::Source::Idx;
                   } else {
                     throw ValueError("expected synthetic or idx, got '" + v + "'");
                   }
                 },
                 [](const C& c) {
                   return std::string(c.data.source == DataConfig::Source::Synthetic ? "synthetic" : "idx");
                 }});
    f.push_back(size_field("data", "classes", [](C& c) -> auto& { return c.data.classes; }));
    f.push_back(size_field("data", "per_class", [](C& c) -> auto& { return c.data.per_class; }));
    f.push_back(size_field("data", "dims", [](C& c) -> auto& { return c.data.dims; }));
    f.push_back(real_field("data", "spread", [](C& c) -> auto& { return c.data.spread; }));
    f.push_back(real_field("data", "test_fraction", [](C& c) -> auto& { return c.data.test_fraction; }));
    f.push_back(text_field("data", "train_images", [](C& c) -> auto& { return c.data.train_images; }));
    f.push_back(text_field("data", "train_labels", [](C& c) -> auto& { return c.data.train_labels; }));
    f.push_back(text_field("data", "test_images", [](C& c) -> auto& { return c.data.test_images; }));
    f.push_back(text_field("data", "test_labels", [](C& c) -> auto& { return c.data.test_labels; }));
    f.push_back(
        real_field("data", "validation_fraction", [](C& c) -> auto& { return c.data.validation_fraction; }));

    f.push_back({"model", "arch",
                 [](C& c, const std::string& v) {
                   if (v == "mlp") {
                     c.model.arch = ModelSpec::Arch::Mlp;
                   } else if (v == "cnn") {
                     c.model.arch = ModelSpec::Arch::Cnn;
                   } else {
                     throw ValueError("expected mlp or cnn, got '" + v + "'");
                   }
                 },
                 [](const C& c) { return std::string(c.model.arch == ModelSpec::Arch::Mlp ? "mlp" : "cnn"); }});
    f.push_back(size_field("model", "hidden", [](C& c) -> auto& { return c.model.hidden; }));
    f.push_back({"model", "sparse_layer_bias",
                 [](C& c, const std::string& v) { c.model.sparse_layer_bias = to_bool(v); },
                 [](const C& c) { return std::string(c.model.sparse_layer_bias ? "true" : "false"); }});

    f.push_back(real_field("partition", "alpha", [](C& c) -> auto& { return c.alpha; }));
    f.push_back(size_field("analysis", "snapshot_every", [](C& c) -> auto& { return c.snapshot_every; }));
    f.push_back(text_field("run", "out_dir", [](C& c) -> auto& { return c.out_dir; }));
    f.push_back(size_field("run", "workers", [](C& c) -> auto& { return c.workers; }));
    return f;
  }();
  return table;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

void require(bool ok, const char* key, const std::string& msg) {
  if (!ok) throw ConfigError(key, msg);
}

}  // namespace

void validate_config(const ExperimentConfig& c) {
  const auto& f = c.federation;
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  require(f.total_clients >= 1, "federation.total_clients", "must be >= 1");
  require(f.clients_per_round >= 1 && f.clients_per_round <= f.total_clients, "federation.clients_per_round",
          "must lie in [1, total_clients]");
  require(f.local_epochs >= 1, "federation.local_epochs", "must be >= 1");
  require(f.batch_size >= 1, "federation.batch_size", "must be >= 1");
  require(unit(f.sp), "federation.sp", "must lie in [0, 1], got " + fmt_double(f.sp));
  require(unit(f.r_mask), "federation.r_mask", "must lie in [0, 1], got " + fmt_double(f.r_mask));
  require(f.lr_start > 0.0, "federation.lr_start", "must be positive");
  require(f.lr_end > 0.0, "federation.lr_end", "must be positive");
  require(unit(f.fedadam.beta1), "fedadam.beta1", "must lie in [0, 1]");
  require(unit(f.fedadam.beta2), "fedadam.beta2", "must lie in [0, 1]");
  require(f.fedadam.tau > 0.0, "fedadam.tau", "must be positive");
  require(f.fedadam.server_lr > 0.0, "fedadam.server_lr", "must be positive");

  const auto& d = c.data;
  if (d.source == DataConfig::Source::Synthetic) {
    require(d.classes >= 2, "data.classes", "must be >= 2");
    require(d.per_class >= 1, "data.per_class", "must be >= 1");
    require(d.dims >= 1, "data.dims", "must be >= 1");
    require(d.spread >= 0.0, "data.spread", "must be >= 0");
    require(d.test_fraction > 0.0 && d.test_fraction < 1.0, "data.test_fraction", "must lie in (0, 1)");
  } else {
    require(!d.train_images.empty(), "data.train_images", "required when source = idx");
    require(!d.train_labels.empty(), "data.train_labels", "required when source = idx");
    require(!d.test_images.empty(), "data.test_images", "required when source = idx");
    require(!d.test_labels.empty(), "data.test_labels", "required when source = idx");
  }
  require(d.validation_fraction >= 0.0 && d.validation_fraction < 1.0, "data.validation_fraction",
          "must lie in [0, 1)");
  require(c.model.hidden >= 1, "model.hidden", "must be >= 1");
  require(c.alpha > 0.0, "partition.alpha", "must be positive");
  require(!c.out_dir.empty(), "run.out_dir", "must not be empty");
  require(c.workers >= 1, "run.workers", "must be >= 1");
}

ExperimentConfig parse_config_text(std::string_view text, std::optional<std::uint64_t> seed_override) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::string section;
  bool have_version = false;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(std::string_view(raw).substr(0, raw.find_first_of("#;")));
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("", where + ": unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (std::none_of(fields().begin(), fields().end(), [&](const Field& f) { return section == f.section; })) {
        throw ConfigError(section, where + ": unknown section");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("", where + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const std::string path = section.empty() ? key : section + "." + key;
    if (!seen.insert(path).second) throw ConfigError(path, "duplicate key");

    if (path == "version") {
      std::uint64_t v = 0;
      try {
        v = to_u64(value);
      } catch (const ValueError& e) {
        throw ConfigError(path, e.what());
      }
      if (v != kConfigVersion) throw ConfigError(path, "unsupported version " + value);
      have_version = true;
      continue;
    }
    const Field* field = nullptr;
    for (const auto& f : fields()) {
      if (section == f.section && key == f.key) field = &f;
    }
    if (!field) throw ConfigError(path, "unknown key");
    try {
      field->set(cfg, value);
    } catch (const ValueError& e) {
      throw ConfigError(path, e.what());
    }
  }
  if (!have_version) throw ConfigError("version", "missing; expected version = " + std::to_string(kConfigVersion));
  if (seed_override) {
    cfg.federation.seed = *seed_override;
  } else if (!seen.contains("federation.seed")) {
    throw ConfigError("federation.seed", "required");
  }
  validate_config(cfg);
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str(), seed_override);
}

std::string to_config_text(const ExperimentConfig& cfg) {
  std::string out = "version = " + std::to_string(kConfigVersion) + "\n";
  std::string section;
  for (const auto& f : fields()) {
    if (section != f.section) {
      section = f.section;
      out += "\n[" + section + "]\n";
    }
    out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

}  // namespace zerofl
