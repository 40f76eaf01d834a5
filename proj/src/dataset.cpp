#include "zerofl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>

#include "zerofl/rng.hpp"

namespace zerofl {

Dataset::Dataset(Shape sample_shape, std::size_t num_classes, std::vector<float> features, std::vector<int> labels)
    : sample_shape_(std::move(sample_shape)),
      num_classes_(num_classes),
      features_(std::move(features)),
      labels_(std::move(labels)) {
  if (sample_shape_.empty()) throw ShapeError("sample_shape", "dataset sample shape is empty");
  if (features_.size() != labels_.size() * sample_numel()) {
    throw ShapeError("features", "feature buffer holds " + std::to_string(features_.size()) + " values for " +
                                     std::to_string(labels_.size()) + " samples of shape " +
                                     shape_to_string(sample_shape_));
  }
  for (int y : labels_) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes_) {
      throw ValueError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes_) + ")");
    }
  }
}

std::span<const float> Dataset::sample(std::size_t i) const {
  if (i >= size()) throw ValueError("sample index " + std::to_string(i) + " out of range");
  return std::span<const float>(features_).subspan(i * sample_numel(), sample_numel());
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ValueError("empty batch");
  Shape shape{indices.size()};
  shape.insert(shape.end(), sample_shape_.begin(), sample_shape_.end());
  std::vector<float> values;
  values.reserve(indices.size() * sample_numel());
  for (auto i : indices) {
    const auto s = sample(i);
    values.insert(values.end(), s.begin(), s.end());
  }
  return Tensor(std::move(shape), std::move(values));
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels_.at(i));
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  std::vector<float> values;
  values.reserve(indices.size() * sample_numel());
  for (auto i : indices) {
    const auto s = sample(i);
    values.insert(values.end(), s.begin(), s.end());
  }
  return Dataset(sample_shape_, num_classes_, std::move(values), batch_labels(indices));
}

std::vector<std::size_t> Dataset::class_histogram(std::span<const std::size_t> indices) const {
  std::vector<std::size_t> hist(num_classes_, 0);
  for (auto i : indices) ++hist[static_cast<std::size_t>(labels_.at(i))];
  return hist;
}

Dataset synth_blobs(std::size_t num_classes, std::size_t samples_per_class, std::size_t dims, double spread,
                    std::uint64_t seed) {
  if (num_classes == 0 || samples_per_class == 0 || dims == 0) {
    throw ValueError("synth_blobs needs positive class, sample and dimension counts");
  }
  if (!(spread >= 0.0) || !std::isfinite(spread)) throw ValueError("spread must be finite and >= 0");
  Rng rng(derive_seed(seed, Stream::Data));
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::vector<double>> means(num_classes, std::vector<double>(dims));
  for (auto& m : means) {
    double norm = 0.0;
    while (norm < 1e-12) {
      for (double& v : m) v = normal(rng);
      norm = std::sqrt(std::inner_product(m.begin(), m.end(), m.begin(), 0.0));
    }
    for (double& v : m) v /= norm;
  }

  std::vector<float> features;
  std::vector<int> labels;
  features.reserve(num_classes * samples_per_class * dims);
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t s = 0; s < samples_per_class; ++s) {
      for (std::size_t d = 0; d < dims; ++d) {
        const double noise = spread > 0.0 ? spread * normal(rng) : 0.0;
        features.push_back(static_cast<float>(means[c][d] + noise));
      }
      labels.push_back(static_cast<int>(c));
    }
  }
  return Dataset({dims}, num_classes, std::move(features), std::move(labels));
}

namespace {

std::vector<double> dirichlet(const std::vector<double>& conc, Rng& rng) {
  const std::size_t k = conc.size();
  std::vector<double> p(k);
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    p[i] = std::gamma_distribution<double>(conc[i], 1.0)(rng);
    sum += p[i];
  }
  if (!(sum > 0.0) || !std::isfinite(sum)) {
    // Every draw underflowed (tiny alpha): all mass on one class.
    std::fill(p.begin(), p.end(), 0.0);
    p[std::uniform_int_distribution<std::size_t>(0, k - 1)(rng)] = 1.0;
    return p;
  }
  for (double& v : p) v /= sum;
  return p;
}

// Concentrations alpha * k * share: alpha per class while the pools are balanced,
// tilted toward whatever classes are left as they drain.
std::vector<double> concentrations(double alpha, const std::vector<std::size_t>& live,
                                   const std::vector<std::vector<std::size_t>>& pools) {
  double remaining = 0.0;
  for (auto c : live) remaining += static_cast<double>(pools[c].size());
  std::vector<double> conc;
  conc.reserve(live.size());
  for (auto c : live) {
    conc.push_back(alpha * static_cast<double>(live.size()) * static_cast<double>(pools[c].size()) / remaining);
  }
  return conc;
}

std::size_t categorical(const std::vector<double>& p, Rng& rng) {
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return i;
  }
  for (std::size_t i = p.size(); i-- > 0;) {
    if (p[i] > 0.0) return i;
  }
  return p.size() - 1;
}

}  // namespace

PartitionPlan lda_partition(const Dataset& ds, std::size_t num_clients, double alpha, std::uint64_t seed) {
  if (num_clients == 0) throw ValueError("num_clients must be positive");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ValueError("alpha must be a positive finite number");
  const std::size_t per_client = ds.size() / num_clients;
  if (per_client == 0) {
    throw ValueError("cannot give " + std::to_string(num_clients) + " clients an equal non-empty share of " +
                     std::to_string(ds.size()) + " samples");
  }
  Rng rng(derive_seed(seed, Stream::Partition));

  std::vector<std::vector<std::size_t>> pools(ds.num_classes());
  const auto labels = ds.labels();
  for (std::size_t i = 0; i < labels.size(); ++i) pools[static_cast<std::size_t>(labels[i])].push_back(i);
  for (auto& pool : pools) std::shuffle(pool.begin(), pool.end(), rng);

  PartitionPlan plan;
  plan.alpha = alpha;
  plan.assignments.resize(num_clients);
  for (auto& client : plan.assignments) {
    std::vector<std::size_t> live;
    for (std::size_t c = 0; c < pools.size(); ++c) {
      if (!pools[c].empty()) live.push_back(c);
    }
    std::vector<double> p = dirichlet(concentrations(alpha, live, pools), rng);
    client.reserve(per_client);
    while (client.size() < per_client) {
      const std::size_t pick = categorical(p, rng);
      const std::size_t cls = live[pick];
      client.push_back(pools[cls].back());
      pools[cls].pop_back();
      if (pools[cls].empty() && client.size() < per_client) {
        live.erase(live.begin() + static_cast<std::ptrdiff_t>(pick));
        p.erase(p.begin() + static_cast<std::ptrdiff_t>(pick));
        const double rest = std::accumulate(p.begin(), p.end(), 0.0);
        if (rest > 0.0 && std::isfinite(rest)) {
          for (double& v : p) v /= rest;
        } else {
          p = dirichlet(concentrations(alpha, live, pools), rng);
        }
      }
    }
    std::sort(client.begin(), client.end());
  }
  return plan;
}

ValidationSplit client_validation_split(std::span<const std::size_t> samples, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ValueError("validation fraction must lie in [0, 1]");
  const std::size_t n = samples.size();
  const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (n_val >= n) {
    throw ValueError("validation split of " + std::to_string(n_val) + "/" + std::to_string(n) +
                     " samples leaves no training data");
  }
  std::vector<std::size_t> order(samples.begin(), samples.end());
  Rng rng(derive_seed(seed, Stream::Validation));
  std::shuffle(order.begin(), order.end(), rng);
  ValidationSplit split;
  split.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ValueError("test fraction must lie in (0, 1)");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, Stream::Split));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ds.size())));
  if (n_test == 0 || n_test >= ds.size()) throw ValueError("train/test split leaves one side empty");
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {ds.subset(train), ds.subset(test)};
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t at, const std::filesystem::path& path) {
  if (at + 4 > buf.size()) {
    throw FormatError(FormatError::Kind::Truncated, path.string() + ": truncated IDX header");
  }
  return (std::uint32_t{buf[at]} << 24) | (std::uint32_t{buf[at + 1]} << 16) | (std::uint32_t{buf[at + 2]} << 8) |
         std::uint32_t{buf[at + 3]};
}

struct IdxFile {
  std::vector<std::uint32_t> dims;
  std::vector<unsigned char> payload;
};

IdxFile parse_idx(const std::filesystem::path& path, std::uint32_t expected_magic) {
  const auto buf = read_file(path);
  if (buf.empty()) throw FormatError(FormatError::Kind::Truncated, path.string() + ": empty IDX file");
  const std::uint32_t magic = read_be32(buf, 0, path);
  if (magic != expected_magic) {
    char text[64];
    std::snprintf(text, sizeof text, "bad IDX magic 0x%08X (expected 0x%08X)", magic, expected_magic);
    throw FormatError(FormatError::Kind::BadMagic, path.string() + ": " + text);
  }
  IdxFile f;
  const std::size_t ndim = magic & 0xFFu;
  std::size_t count = 1;
  for (std::size_t d = 0; d < ndim; ++d) {
    f.dims.push_back(read_be32(buf, 4 + 4 * d, path));
    count *= f.dims.back();
  }
  const std::size_t offset = 4 + 4 * ndim;
  if (buf.size() < offset + count) {
    throw FormatError(FormatError::Kind::Truncated, path.string() + ": IDX payload holds " +
                                                        std::to_string(buf.size() - offset) + " of " +
                                                        std::to_string(count) + " bytes");
  }
  if (buf.size() != offset + count) {
    throw FormatError(FormatError::Kind::Invariant, path.string() + ": trailing bytes after IDX payload");
  }
  f.payload.assign(buf.begin() + static_cast<std::ptrdiff_t>(offset), buf.end());
  return f;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const IdxFile img = parse_idx(images, 0x00000803u);
  const IdxFile lab = parse_idx(labels, 0x00000801u);
  if (img.dims[0] != lab.dims[0]) {
    throw FormatError(FormatError::Kind::Invariant, "image count " + std::to_string(img.dims[0]) +
                                                        " does not match label count " + std::to_string(lab.dims[0]));
  }
  if (img.dims[0] == 0 || img.dims[1] == 0 || img.dims[2] == 0) {
    throw FormatError(FormatError::Kind::Invariant, images.string() + ": IDX dims must be positive");
  }
  std::vector<float> features(img.payload.size());
  std::transform(img.payload.begin(), img.payload.end(), features.begin(),
                 [](unsigned char px) { return static_cast<float>(px) / 255.0f; });
  std::vector<int> ys(lab.payload.begin(), lab.payload.end());
  const int max_label = *std::max_element(ys.begin(), ys.end());
  return Dataset({1, img.dims[1], img.dims[2]}, static_cast<std::size_t>(max_label) + 1, std::move(features),
                 std::move(ys));
}

}  // namespace zerofl
