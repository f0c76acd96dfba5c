#pragma once

/// \file models.hpp
/// Student (pre-ranking), teacher (ranking) and two-tower (VPDM) networks.
///
/// A network maps [query features | item features] through a linear embedding
/// layer, a stack of ReLU hidden layers and a linear representation layer of
/// width `representation_dim`; the score is sigmoid(rep . w_out + b_out). The
/// representation is what the contrastive transfer loss compares between the
/// two networks, so both must agree on its width.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cit/error.hpp"
#include "cit/tensor.hpp"

namespace cit {

struct FeatureDims {
  std::size_t query = 0;
  std::size_t item = 0;
  friend bool operator==(const FeatureDims&, const FeatureDims&) = default;
};

struct ModelConfig {
  FeatureDims feature_dims;
  std::size_t embedding_dim = 16;
  std::vector<std::size_t> hidden_sizes;
  std::size_t representation_dim = 8;
  bool frozen = false;

  std::size_t input_dim() const { return feature_dims.query + feature_dims.item; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void validate(const ModelConfig& c) {
  if (c.input_dim() == 0) throw ConfigError("model config: zero input dimension");
  if (c.embedding_dim == 0) throw ConfigError("model config: embedding_dim must be positive");
  if (c.hidden_sizes.empty()) throw ConfigError("model config: hidden_sizes must be non-empty");
  for (std::size_t i = 0; i < c.hidden_sizes.size(); ++i) {
    if (c.hidden_sizes[i] == 0) {
      throw ConfigError("model config: hidden layer " + std::to_string(i) + " has zero width");
    }
  }
  if (c.representation_dim == 0) throw ConfigError("model config: representation_dim must be positive");
}

struct LayerShape {
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;
  Activation activation = Activation::identity;
};

/// embedding -> hidden.i (relu) -> representation -> score.
inline std::vector<LayerShape> layer_plan(const ModelConfig& c) {
  std::vector<LayerShape> plan;
  plan.push_back({"embedding", c.input_dim(), c.embedding_dim, Activation::identity});
  std::size_t prev = c.embedding_dim;
  for (std::size_t i = 0; i < c.hidden_sizes.size(); ++i) {
    plan.push_back({"hidden." + std::to_string(i), prev, c.hidden_sizes[i], Activation::relu});
    prev = c.hidden_sizes[i];
  }
  plan.push_back({"representation", prev, c.representation_dim, Activation::identity});
  plan.push_back({"score", c.representation_dim, 1, Activation::identity});
  return plan;
}

inline std::size_t parameter_count(const ModelConfig& c) {
  std::size_t n = 0;
  for (const auto& l : layer_plan(c)) n += (l.in + 1) * l.out;
  return n;
}

struct NamedParam {
  std::string name;
  Matrix value;
  friend bool operator==(const NamedParam&, const NamedParam&) = default;
};

/// Gradient set aligned index-for-index with ModelParams::params.
using Gradients = std::vector<Matrix>;

struct ModelParams {
  ModelConfig config;
  std::vector<NamedParam> params;  // weight, bias per layer in layer_plan order

  bool frozen() const { return config.frozen; }
  std::size_t layer_count() const { return params.size() / 2; }
  const Matrix& weight(std::size_t layer) const { return params[2 * layer].value; }
  const Matrix& bias(std::size_t layer) const { return params[2 * layer + 1].value; }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
  }

  Gradients zero_gradients() const {
    Gradients g;
    g.reserve(params.size());
    for (const auto& p : params) g.emplace_back(p.value.rows(), p.value.cols());
    return g;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Weights ~ N(0, 1/fan_in), biases zero.
inline ModelParams build_model(const ModelConfig& config, Rng& rng) {
  validate(config);
  ModelParams m;
  m.config = config;
  for (const auto& layer : layer_plan(config)) {
    Matrix w(layer.in, layer.out);
    const double std = 1.0 / std::sqrt(static_cast<double>(layer.in));
    for (auto& v : w.values()) v = rng.normal(0.0, std);
    m.params.push_back({layer.name + ".weight", std::move(w)});
    m.params.push_back({layer.name + ".bias", Matrix(1, layer.out)});
  }
  return m;
}

/// Returns a frozen copy: the teacher handed to student training.
inline ModelParams freeze(ModelParams m) {
  m.config.frozen = true;
  return m;
}

// ---------------------------------------------------------------------------
// Inputs
// ---------------------------------------------------------------------------

/// Writes [query | item prefix] into `out`. The item vector may be longer than
/// the model's item width: a student only sees the leading coordinates.
inline void assemble_input(const ModelConfig& c, std::span<const double> query, std::span<const double> item,
                           std::span<double> out) {
  if (query.size() != c.feature_dims.query) {
    throw ShapeError("model input: query features have length " + std::to_string(query.size()) + ", expected " +
                     std::to_string(c.feature_dims.query));
  }
  if (item.size() < c.feature_dims.item) {
    throw ShapeError("model input: item features have length " + std::to_string(item.size()) + ", expected at least " +
                     std::to_string(c.feature_dims.item));
  }
  if (out.size() != c.input_dim()) throw ShapeError("model input: output row has wrong width");
  std::copy(query.begin(), query.end(), out.begin());
  std::copy_n(item.begin(), c.feature_dims.item, out.begin() + static_cast<std::ptrdiff_t>(query.size()));
  for (double v : out) {
    if (!std::isfinite(v)) throw InputError("model input: non-finite feature value");
  }
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct BatchForward {
  std::vector<DenseCache> layers;

  const Matrix& representations() const { return layers[layers.size() - 2].output; }
  std::size_t rows() const { return layers.back().output.rows(); }
  double logit(std::size_t i) const { return layers.back().output(i, 0); }
  double score(std::size_t i) const { return sigmoid(logit(i)); }
  std::vector<double> logits() const {
    const auto v = layers.back().output.values();
    return {v.begin(), v.end()};
  }
};

/// Forward pass over a batch of assembled input rows.
inline BatchForward forward_batch(const ModelParams& m, Matrix inputs) {
  if (inputs.cols() != m.config.input_dim()) {
    throw ShapeError("forward: inputs " + inputs.shape() + " do not match model input width " +
                     std::to_string(m.config.input_dim()));
  }
  const auto plan = layer_plan(m.config);
  BatchForward f;
  f.layers.reserve(plan.size());
  for (std::size_t l = 0; l < plan.size(); ++l) {
    Matrix x = l == 0 ? std::move(inputs) : f.layers.back().output;
    f.layers.push_back(dense_forward(std::move(x), m.weight(l), m.bias(l), plan[l].activation));
  }
  return f;
}

/// Parameter gradients given dL/dlogit per row and (optionally) dL/drep per
/// row. An empty `d_rep` means the representation is not used directly.
inline Gradients backward_batch(const ModelParams& m, const BatchForward& f, std::span<const double> d_logits,
                                const Matrix& d_rep = {}) {
  if (m.frozen()) throw ContractError("backward on frozen parameters");
  const std::size_t n = f.rows();
  if (d_logits.size() != n) throw ShapeError("backward: d_logits length does not match batch");
  if (d_rep.size() != 0 && !d_rep.same_shape(f.representations())) {
    throw ShapeError("backward: d_rep " + d_rep.shape() + " does not match representations " +
                     f.representations().shape());
  }
  Gradients g(m.params.size());
  Matrix upstream(n, 1, std::vector<double>(d_logits.begin(), d_logits.end()));
  for (std::size_t l = f.layers.size(); l-- > 0;) {
    DenseGrads lg = dense_backward(f.layers[l], m.weight(l), upstream);
    g[2 * l] = std::move(lg.grad_w);
    g[2 * l + 1] = std::move(lg.grad_b);
    upstream = std::move(lg.grad_x);
    // upstream now holds dL/d(output of layer l-1); the representation layer
    // sits right below the score layer.
    if (l == f.layers.size() - 1 && d_rep.size() != 0) {
      for (std::size_t i = 0; i < upstream.size(); ++i) upstream[i] += d_rep[i];
    }
  }
  return g;
}

struct Forward {
  std::vector<double> rep;
  double score = 0.0;
  double logit = 0.0;
  BatchForward cache;
};

inline Forward forward(const ModelParams& m, std::span<const double> query, std::span<const double> item) {
  Matrix in(1, m.config.input_dim());
  assemble_input(m.config, query, item, in.row(0));
  Forward out;
  out.cache = forward_batch(m, std::move(in));
  const auto r = out.cache.representations().row(0);
  out.rep.assign(r.begin(), r.end());
  out.logit = out.cache.logit(0);
  out.score = sigmoid(out.logit);
  return out;
}

struct FrozenForward {
  std::vector<double> rep;
  double score = 0.0;
  double logit = 0.0;
};

/// Teacher forward. Returns plain values with no cache, so nothing downstream
/// can route a gradient back into the teacher.
inline FrozenForward forward_frozen(const ModelParams& m, std::span<const double> query,
                                    std::span<const double> item) {
  if (!m.frozen()) throw ContractError("forward_frozen called on unfrozen parameters");
  Forward f = forward(m, query, item);
  return {std::move(f.rep), f.score, f.logit};
}

// ---------------------------------------------------------------------------
// Two-tower (vector product) baseline
// ---------------------------------------------------------------------------

struct TowerPair {
  ModelParams query_tower;
  ModelParams item_tower;
};

/// Tower encoding: the tower's representation of `features` (prefix of the
/// tower's input width). The score head of a tower is unused.
inline BatchForward encode_tower(const ModelParams& tower, std::span<const double> features) {
  const std::size_t width = tower.config.input_dim();
  if (features.size() < width) {
    throw ShapeError("tower input: got " + std::to_string(features.size()) + " features, need " +
                     std::to_string(width));
  }
  Matrix in(1, width);
  for (std::size_t i = 0; i < width; ++i) {
    if (!std::isfinite(features[i])) throw InputError("tower input: non-finite feature value");
    in[i] = features[i];
  }
  return forward_batch(tower, std::move(in));
}

inline double vector_product_forward(const ModelParams& query_tower, const ModelParams& item_tower,
                                     std::span<const double> query_features, std::span<const double> item_features) {
  if (query_tower.config.representation_dim != item_tower.config.representation_dim) {
    throw ShapeError("vector product: tower output lengths " + std::to_string(query_tower.config.representation_dim) +
                     " and " + std::to_string(item_tower.config.representation_dim) + " differ");
  }
  const auto q = encode_tower(query_tower, query_features);
  const auto x = encode_tower(item_tower, item_features);
  return sigmoid(dot(q.representations().row(0), x.representations().row(0)));
}

struct TowerGradients {
  Gradients query;
  Gradients item;
  double loss = 0.0;
};

/// Cross-entropy gradient of one (query, item, label) example through both towers.
inline TowerGradients vector_product_ce_gradients(const TowerPair& towers, std::span<const double> query_features,
                                                  std::span<const double> item_features, double label) {
  const auto q = encode_tower(towers.query_tower, query_features);
  const auto x = encode_tower(towers.item_tower, item_features);
  const auto qr = q.representations().row(0);
  const auto xr = x.representations().row(0);
  const double logit = dot(qr, xr);
  const double p = std::clamp(sigmoid(logit), 1e-12, 1.0 - 1e-12);
  TowerGradients out;
  out.loss = -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
  const double d = sigmoid(logit) - label;
  Matrix dq(1, qr.size()), dx(1, xr.size());
  for (std::size_t i = 0; i < qr.size(); ++i) {
    dq[i] = d * xr[i];
    dx[i] = d * qr[i];
  }
  const std::array<double, 1> zero{0.0};
  out.query = backward_batch(towers.query_tower, q, zero, dq);
  out.item = backward_batch(towers.item_tower, x, zero, dx);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint file
// ---------------------------------------------------------------------------

/// A model plus the training metadata stored next to it.
struct Checkpoint {
  ModelParams model;
  std::uint64_t epoch = 0;
  std::vector<double> validation_gauc;
  std::string config_echo;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

inline constexpr std::array<char, 8> kCheckpointMagic{'C', 'I', 'T', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t fnv1a(std::span<const char> bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void raw(std::span<const char> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  std::vector<char>& bytes() { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const char> b) : b_(b) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u64();
    auto s = take(n);
    return {s.begin(), s.end()};
  }
  std::span<const char> take(std::uint64_t n) {
    if (n > b_.size() - pos_) throw DataError("checkpoint: truncated file");
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }

 private:
  std::span<const char> b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Layout (all integers little-endian):
///   magic[8] version:u32
///   query_dim:u64 item_dim:u64 embedding_dim:u64 n_hidden:u64 hidden[n]:u64
///   representation_dim:u64 frozen:u8
///   n_params:u64 { name:str rows:u64 cols:u64 data:f64[rows*cols] }*
///   epoch:u64 n_history:u64 history:f64[n] config_echo:str
///   checksum:u64   (FNV-1a 64 over every preceding byte)
/// where str = length:u64 followed by raw bytes.
inline std::vector<char> serialize(const Checkpoint& ckpt) {
  detail::ByteWriter w;
  w.raw(detail::kCheckpointMagic);
  w.u32(detail::kCheckpointVersion);
  const auto& c = ckpt.model.config;
  w.u64(c.feature_dims.query);
  w.u64(c.feature_dims.item);
  w.u64(c.embedding_dim);
  w.u64(c.hidden_sizes.size());
  for (auto h : c.hidden_sizes) w.u64(h);
  w.u64(c.representation_dim);
  w.u8(c.frozen ? 1 : 0);
  w.u64(ckpt.model.params.size());
  for (const auto& p : ckpt.model.params) {
    w.str(p.name);
    w.u64(p.value.rows());
    w.u64(p.value.cols());
    for (double v : p.value.values()) w.f64(v);
  }
  w.u64(ckpt.epoch);
  w.u64(ckpt.validation_gauc.size());
  for (double v : ckpt.validation_gauc) w.f64(v);
  w.str(ckpt.config_echo);
  const auto sum = detail::fnv1a(w.bytes());
  w.u64(sum);
  return std::move(w.bytes());
}

inline Checkpoint deserialize(std::span<const char> bytes) {
  if (bytes.size() < detail::kCheckpointMagic.size() + 4 + 8) throw DataError("checkpoint: file too short");
  const auto body = bytes.first(bytes.size() - 8);
  detail::ByteReader tail(bytes.last(8));
  if (tail.u64() != detail::fnv1a(body)) throw DataError("checkpoint: checksum mismatch");

  detail::ByteReader r(body);
  const auto magic = r.take(detail::kCheckpointMagic.size());
  if (!std::equal(magic.begin(), magic.end(), detail::kCheckpointMagic.begin())) {
    throw DataError("checkpoint: bad magic");
  }
  const auto version = r.u32();
  if (version != detail::kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ck;
  auto& c = ck.model.config;
  c.feature_dims.query = r.u64();
  c.feature_dims.item = r.u64();
  c.embedding_dim = r.u64();
  const auto n_hidden = r.u64();
  if (n_hidden > 1024) throw DataError("checkpoint: implausible layer count");
  for (std::uint64_t i = 0; i < n_hidden; ++i) c.hidden_sizes.push_back(r.u64());
  c.representation_dim = r.u64();
  c.frozen = r.u8() != 0;
  validate(c);
  const auto plan = layer_plan(c);
  const auto n_params = r.u64();
  if (n_params != 2 * plan.size()) throw DataError("checkpoint: parameter count does not match config");
  for (std::uint64_t i = 0; i < n_params; ++i) {
    NamedParam p;
    p.name = r.str();
    const auto rows = r.u64();
    const auto cols = r.u64();
    const auto& layer = plan[i / 2];
    const bool is_weight = i % 2 == 0;
    const std::size_t want_rows = is_weight ? layer.in : 1;
    if (rows != want_rows || cols != layer.out) {
      throw DataError("checkpoint: parameter '" + p.name + "' has shape " + Matrix::shape_string(rows, cols));
    }
    std::vector<double> data(rows * cols);
    for (auto& v : data) v = r.f64();
    p.value = Matrix(rows, cols, std::move(data));
    ck.model.params.push_back(std::move(p));
  }
  ck.epoch = r.u64();
  const auto n_hist = r.u64();
  if (n_hist > (body.size() - r.position()) / 8) throw DataError("checkpoint: truncated history");
  for (std::uint64_t i = 0; i < n_hist; ++i) ck.validation_gauc.push_back(r.f64());
  ck.config_echo = r.str();
  if (r.position() != body.size()) throw DataError("checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint file not found: " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace cit
