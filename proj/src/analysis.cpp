#include "zerofl/analysis.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace zerofl {

double nonzero_ratio(const Tensor& t) {
  if (t.empty()) throw ValueError("nonzero_ratio of an empty tensor");
  const auto nz = std::count_if(t.values().begin(), t.values().end(), [](float v) { return v != 0.0f; });
  return static_cast<double>(nz) / static_cast<double>(t.numel());
}

double nonzero_ratio(const ModelParams& model, const std::string& layer) {
  const auto& l = model.layers()[model.layer_index(layer)];
  if (!l.trainable()) throw ValueError("layer '" + layer + "' has no weights");
  return nonzero_ratio(l.weight);
}

std::vector<std::string> sparsifiable_layers(const ModelParams& model) {
  std::vector<std::string> out;
  for (const auto& l : model.layers()) {
    if (l.sparsifiable) out.push_back(l.name);
  }
  return out;
}

OverlapReport overlap_report(const ModelParams& model, std::size_t round, double keep_fraction) {
  OverlapReport r;
  r.round = round;
  r.keep_fraction = keep_fraction;
  for (const auto& name : sparsifiable_layers(model)) r.ratios.emplace_back(name, nonzero_ratio(model, name));
  return r;
}

void MaskHeatmap::snapshot(const ModelParams& model, std::size_t round) {
  std::vector<std::uint8_t> col;
  for (const auto& name : layers_) {
    const auto& l = model.layers()[model.layer_index(name)];
    if (!l.trainable()) throw ValueError("layer '" + name + "' has no weights");
    for (float v : l.weight.values()) col.push_back(v != 0.0f ? 1 : 0);
  }
  if (!columns_.empty() && col.size() != columns_.front().size()) {
    throw ShapeError("heatmap", "snapshot size changed between rounds");
  }
  columns_.push_back(std::move(col));
  rounds_.push_back(round);
}

void MaskHeatmap::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  const std::size_t n_rows = rows();
  std::string line;
  for (std::size_t r = 0; r < n_rows; ++r) {
    line.clear();
    for (std::size_t c = 0; c < columns_.size(); ++c) {
      if (c > 0) line += ' ';
      line += columns_[c][r] ? '1' : '0';
    }
    out << line << '\n';
  }
}

double jaccard(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw ShapeError("mask", "masks differ in length");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0, y = b[i] != 0;
    inter += (x && y) ? 1 : 0;
    uni += (x || y) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<JaccardPair> mask_stability(const MaskHeatmap& heatmap) {
  std::vector<JaccardPair> out;
  const auto& cols = heatmap.columns();
  for (std::size_t i = 0; i < cols.size(); ++i) {
    for (std::size_t j = i + 1; j < cols.size(); ++j) {
      out.push_back({heatmap.rounds()[i], heatmap.rounds()[j], jaccard(cols[i], cols[j])});
    }
  }
  return out;
}

FlopsReport flops_report(const ModelParams& model, double sp, std::size_t batch) {
  if (!(sp >= 0.0 && sp <= 1.0)) throw ValueError("sp must lie in [0, 1]");
  FlopsReport rep;
  rep.sp = sp;
  const auto shapes = model.activation_shapes();
  const auto& layers = model.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (!l.trainable()) continue;
    FlopsReport::Row row;
    row.layer = l.name;
    row.sparsifiable = l.sparsifiable;
    const double density = l.sparsifiable ? 1.0 - sp : 1.0;
    if (l.kind == LayerKind::Conv) {
      const Shape& out = shapes[i + 1];
      row.dense_macs = mac_count(l.conv, batch, out[1], out[2], 1.0);
      row.sparse_macs = mac_count(l.conv, batch, out[1], out[2], density);
    } else {
      row.dense_macs = mac_count_linear(l.weight.dim(1), l.weight.dim(0), batch, 1.0);
      row.sparse_macs = mac_count_linear(l.weight.dim(1), l.weight.dim(0), batch, density);
    }
    rep.dense_total += row.dense_macs;
    rep.sparse_total += row.sparse_macs;
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void write_overlap_csv(const std::filesystem::path& path, std::span<const OverlapReport> reports) {
  auto out = open_csv(path);
  out << "round,layer,keep_fraction,ratio\n";
  for (const auto& r : reports) {
    for (const auto& [layer, ratio] : r.ratios) {
      out << r.round << ',' << layer << ',' << fmt_real(r.keep_fraction) << ',' << fmt_real(ratio) << '\n';
    }
  }
}

void write_jaccard_csv(const std::filesystem::path& path, std::span<const JaccardPair> pairs) {
  auto out = open_csv(path);
  out << "round_a,round_b,jaccard\n";
  for (const auto& p : pairs) out << p.round_a << ',' << p.round_b << ',' << fmt_real(p.similarity) << '\n';
}

void write_flops_csv(const std::filesystem::path& path, const FlopsReport& report) {
  auto out = open_csv(path);
  out << "layer,sparsifiable,dense_macs,sparse_macs\n";
  for (const auto& r : report.rows) {
    out << r.layer << ',' << (r.sparsifiable ? 1 : 0) << ',' << r.dense_macs << ',' << r.sparse_macs << '\n';
  }
  out << "total,," << report.dense_total << ',' << report.sparse_total << '\n';
}

}  // namespace zerofl
