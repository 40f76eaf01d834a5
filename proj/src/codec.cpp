#include "zerofl/codec.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

namespace zerofl {

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::FullDense: return "full_dense";
    case Strategy::TopKWeights: return "topk_weights";
    case Strategy::DiffTopKWeights: return "diff_topk_weights";
    case Strategy::TopKWeightsDiff: return "topk_weights_diff";
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view name) {
  for (auto s : {Strategy::FullDense, Strategy::TopKWeights, Strategy::DiffTopKWeights, Strategy::TopKWeightsDiff}) {
    if (name == to_string(s)) return s;
  }
  throw ValueError("unknown strategy '" + std::string(name) + "'");
}

namespace {

[[noreturn]] void invariant(const std::string& what) { throw FormatError(FormatError::Kind::Invariant, what); }

std::pair<std::uint32_t, std::uint32_t> matrix_view(const Shape& shape) {
  if (shape.empty()) throw ShapeError("rank", "CSR needs a tensor of rank >= 1");
  const std::size_t rows = shape[0];
  const std::size_t cols = shape_numel(shape) / rows;
  if (rows > std::numeric_limits<std::uint32_t>::max() || cols > std::numeric_limits<std::uint32_t>::max() ||
      rows * cols > std::numeric_limits<std::uint32_t>::max()) {
    throw ValueError("tensor too large for 32-bit CSR indices");
  }
  return {static_cast<std::uint32_t>(rows), static_cast<std::uint32_t>(cols)};
}

}  // namespace

void CsrLayerPayload::validate() const {
  if (rows == 0 || cols == 0) invariant("CSR rows and cols must be positive");
  if (row_ptr.size() != std::size_t{rows} + 1) invariant("CSR row_ptr must hold rows + 1 entries");
  if (col_idx.size() != values.size()) invariant("CSR col_idx and values differ in length");
  if (row_ptr.front() != 0) invariant("CSR row_ptr[0] must be 0");
  if (row_ptr.back() != values.size()) invariant("CSR row_ptr[rows] must equal nnz");
  for (std::uint32_t r = 0; r < rows; ++r) {
    if (row_ptr[r] > row_ptr[r + 1]) invariant("CSR row_ptr must be non-decreasing");
    for (std::uint32_t j = row_ptr[r]; j < row_ptr[r + 1]; ++j) {
      if (col_idx[j] >= cols) invariant("CSR column index out of range");
      if (j > row_ptr[r] && col_idx[j] <= col_idx[j - 1]) invariant("CSR columns must increase within a row");
    }
  }
}

CsrLayerPayload csr_encode(const Tensor& t) {
  const auto [rows, cols] = matrix_view(t.shape());
  CsrLayerPayload p;
  p.rows = rows;
  p.cols = cols;
  p.row_ptr.reserve(rows + 1);
  p.row_ptr.push_back(0);
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) {
      const float v = t[std::size_t{r} * cols + c];
      if (v != 0.0f) {
        p.col_idx.push_back(c);
        p.values.push_back(v);
      }
    }
    p.row_ptr.push_back(static_cast<std::uint32_t>(p.values.size()));
  }
  return p;
}

CsrLayerPayload csr_encode_masked(const Tensor& t, const TopKMask& mask) {
  require_same_shape(t.shape(), mask.tensor_shape, "mask");
  const auto [rows, cols] = matrix_view(t.shape());
  CsrLayerPayload p;
  p.rows = rows;
  p.cols = cols;
  p.row_ptr.assign(std::size_t{rows} + 1, 0);
  p.col_idx.reserve(mask.size());
  p.values.reserve(mask.size());
  for (auto flat : mask.active_indices) {
    const std::uint32_t r = flat / cols;
    p.row_ptr[r + 1] += 1;
    p.col_idx.push_back(flat % cols);
    p.values.push_back(t[flat]);
  }
  for (std::uint32_t r = 0; r < rows; ++r) p.row_ptr[r + 1] += p.row_ptr[r];
  return p;
}

Tensor csr_decode(const CsrLayerPayload& p) {
  p.validate();
  Tensor out({p.rows, p.cols});
  for (std::uint32_t r = 0; r < p.rows; ++r) {
    for (std::uint32_t j = p.row_ptr[r]; j < p.row_ptr[r + 1]; ++j) {
      out[std::size_t{r} * p.cols + p.col_idx[j]] = p.values[j];
    }
  }
  return out;
}

Tensor LayerPayload::decode() const {
  if (const auto* dense = std::get_if<Tensor>(&data)) {
    require_same_shape(dense->shape(), dims, name);
    return *dense;
  }
  const auto& csr = std::get<CsrLayerPayload>(data);
  const auto [rows, cols] = matrix_view(dims);
  if (csr.rows != rows || csr.cols != cols) invariant(name + ": CSR matrix view does not match dims");
  return csr_decode(csr).reshaped(dims);
}

ModelUpdate build_update(const ModelParams& w_t, const ModelParams& w_e, Strategy strategy, double sp,
                         double r_mask, std::uint32_t num_samples) {
  if (num_samples == 0) throw ValueError("num_samples must be >= 1");
  const double keep = keep_fraction_for(sp, r_mask);
  const auto infos = w_e.params();
  const auto before = w_t.params();
  if (infos.size() != before.size()) throw ShapeError("model", "w_t and w_E have different parameter sets");
  for (std::size_t p = 0; p < infos.size(); ++p) {
    if (infos[p].name != before[p].name || infos[p].sparsifiable != before[p].sparsifiable) {
      throw ShapeError(infos[p].name, "w_t and w_E differ at parameter " + infos[p].name);
    }
    require_same_shape(infos[p].shape, before[p].shape, infos[p].name);
  }

  ModelUpdate u;
  u.strategy = strategy;
  u.sp = static_cast<float>(sp);
  u.r_mask = static_cast<float>(r_mask);
  u.num_samples = num_samples;

  const auto trained = w_e.param_tensors();
  const auto received = w_t.param_tensors();
  for (std::size_t p = 0; p < infos.size(); ++p) {
    const Tensor& we = *trained[p];
    Tensor diff = we;
    if (sends_diff(strategy)) {
      const auto wt = received[p]->values();
      for (std::size_t j = 0; j < diff.numel(); ++j) diff[j] = we[j] - wt[j];
    }
    LayerPayload lp;
    lp.name = infos[p].name;
    lp.dims = infos[p].shape;
    const bool sparse = infos[p].sparsifiable && strategy != Strategy::FullDense;
    if (!sparse) {
      lp.data = sends_diff(strategy) ? diff : we;
    } else {
      switch (strategy) {
        case Strategy::TopKWeights: lp.data = csr_encode_masked(we, topk_mask(we, keep)); break;
        case Strategy::DiffTopKWeights: lp.data = csr_encode_masked(diff, topk_mask(we, keep)); break;
        case Strategy::TopKWeightsDiff: lp.data = csr_encode_masked(diff, topk_mask(diff, keep)); break;
        case Strategy::FullDense: break;
      }
    }
    u.layers.push_back(std::move(lp));
  }
  return u;
}

std::vector<Tensor> decode_update(const ModelUpdate& u) {
  std::vector<Tensor> out;
  out.reserve(u.layers.size());
  for (const auto& lp : u.layers) out.push_back(lp.decode());
  return out;
}

// ---------------------------------------------------------------------------
// ZFU wire format

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(FormatError::Kind::Truncated, std::string("ZFU payload truncated while reading ") + what);
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + static_cast<std::size_t>(i)]} << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void check_header_values(std::uint8_t strategy, float sp, float r_mask, std::uint32_t num_samples,
                         std::size_t layer_count, bool writing) {
  auto fail = [&](const std::string& what) {
    if (writing) throw ValueError(what);
    invariant(what);
  };
  if (strategy > static_cast<std::uint8_t>(Strategy::TopKWeightsDiff)) fail("unknown strategy byte");
  if (!(sp >= 0.0f && sp <= 1.0f)) fail("sp outside [0, 1]");
  if (!(r_mask >= 0.0f && r_mask <= 1.0f)) fail("r_mask outside [0, 1]");
  if (num_samples == 0) fail("num_samples must be >= 1");
  if (layer_count == 0) fail("update has no layers");
}

}  // namespace

std::vector<std::uint8_t> serialize_update(const ModelUpdate& u) {
  check_header_values(static_cast<std::uint8_t>(u.strategy), u.sp, u.r_mask, u.num_samples, u.layers.size(), true);
  if (u.layers.size() > std::numeric_limits<std::uint32_t>::max()) throw ValueError("too many layers");
  Writer w;
  w.bytes(kZfuMagic, 4);
  w.u8(static_cast<std::uint8_t>(u.strategy));
  w.f32(u.sp);
  w.f32(u.r_mask);
  w.u32(u.num_samples);
  w.u32(static_cast<std::uint32_t>(u.layers.size()));
  std::set<std::string> names;
  for (const auto& lp : u.layers) {
    if (lp.name.empty() || lp.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw ValueError("layer name must be 1..65535 bytes");
    }
    if (!names.insert(lp.name).second) throw ValueError("duplicate layer name '" + lp.name + "'");
    if (lp.dims.empty() || lp.dims.size() > 255) throw ValueError(lp.name + ": rank must be 1..255");
    w.u16(static_cast<std::uint16_t>(lp.name.size()));
    w.bytes(lp.name.data(), lp.name.size());
    w.u8(lp.is_csr() ? 1 : 0);
    w.u8(static_cast<std::uint8_t>(lp.dims.size()));
    for (auto d : lp.dims) {
      if (d == 0 || d > std::numeric_limits<std::uint32_t>::max()) throw ValueError(lp.name + ": bad dimension");
      w.u32(static_cast<std::uint32_t>(d));
    }
    if (const auto* dense = std::get_if<Tensor>(&lp.data)) {
      require_same_shape(dense->shape(), lp.dims, lp.name);
      for (float v : dense->values()) w.f32(v);
    } else {
      const auto& csr = std::get<CsrLayerPayload>(lp.data);
      const auto [rows, cols] = matrix_view(lp.dims);
      if (csr.rows != rows || csr.cols != cols) throw ShapeError(lp.name, lp.name + ": CSR view does not match dims");
      csr.validate();
      w.u32(static_cast<std::uint32_t>(csr.nnz()));
      for (auto v : csr.row_ptr) w.u32(v);
      for (auto v : csr.col_idx) w.u32(v);
      for (float v : csr.values) w.f32(v);
    }
  }
  return w.take();
}

ModelUpdate deserialize_update(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const std::string magic = r.str(4, "magic");
  if (std::memcmp(magic.data(), kZfuMagic, 4) != 0) {
    throw FormatError(FormatError::Kind::BadMagic, "not a ZFU payload (bad magic)");
  }
  ModelUpdate u;
  const std::uint8_t strategy = r.u8("strategy");
  u.sp = r.f32("sp");
  u.r_mask = r.f32("r_mask");
  u.num_samples = r.u32("num_samples");
  const std::uint32_t layer_count = r.u32("layer_count");
  check_header_values(strategy, u.sp, u.r_mask, u.num_samples, layer_count, false);
  u.strategy = static_cast<Strategy>(strategy);

  std::set<std::string> names;
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    LayerPayload lp;
    const std::uint16_t name_len = r.u16("name length");
    if (name_len == 0) invariant("empty layer name");
    lp.name = r.str(name_len, "layer name");
    if (!names.insert(lp.name).second) invariant("duplicate layer name '" + lp.name + "'");
    const std::uint8_t encoding = r.u8("encoding");
    if (encoding > 1) invariant(lp.name + ": unknown encoding " + std::to_string(encoding));
    const std::uint8_t ndim = r.u8("ndim");
    if (ndim == 0) invariant(lp.name + ": rank 0 tensor");
    std::uint64_t numel = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      const std::uint32_t dim = r.u32("dims");
      if (dim == 0) invariant(lp.name + ": zero dimension");
      numel *= dim;
      if (numel > std::numeric_limits<std::uint32_t>::max()) invariant(lp.name + ": tensor too large");
      lp.dims.push_back(dim);
    }
    if (encoding == 0) {
      r.need(4 * numel, "dense values");
      std::vector<float> values(numel);
      for (auto& v : values) v = r.f32("dense values");
      lp.data = Tensor(lp.dims, std::move(values));
    } else {
      CsrLayerPayload csr;
      const auto [rows, cols] = matrix_view(lp.dims);
      csr.rows = rows;
      csr.cols = cols;
      const std::uint32_t nnz = r.u32("nnz");
      if (nnz > numel) invariant(lp.name + ": nnz exceeds tensor size");
      r.need(4 * (std::uint64_t{rows} + 1) + 8 * std::uint64_t{nnz}, "CSR arrays");
      csr.row_ptr.resize(std::size_t{rows} + 1);
      for (auto& v : csr.row_ptr) v = r.u32("row_ptr");
      csr.col_idx.resize(nnz);
      for (auto& v : csr.col_idx) v = r.u32("col_idx");
      csr.values.resize(nnz);
      for (auto& v : csr.values) v = r.f32("values");
      csr.validate();
      lp.data = std::move(csr);
    }
    u.layers.push_back(std::move(lp));
  }
  if (r.remaining() != 0) invariant("trailing bytes after last layer");
  return u;
}

void write_update_file(const std::filesystem::path& path, const ModelUpdate& u) {
  const auto bytes = serialize_update(u);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

ModelUpdate read_update_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return deserialize_update(bytes);
}

std::size_t dense_update_bytes(const ModelParams& model) {
  return serialize_update(build_update(model, model, Strategy::FullDense, 0.0, 0.0, 1)).size();
}

double savings_factor(std::size_t dense_bytes, std::size_t update_bytes) {
  if (update_bytes == 0) throw ValueError("update size must be positive");
  return static_cast<double>(dense_bytes) / static_cast<double>(update_bytes);
}

}  // namespace zerofl
