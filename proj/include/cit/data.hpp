#pragma once

/// \file data.hpp
/// Synthetic click logs shaped like a search funnel, the line-oriented dataset
/// file, day-based splits and in-request negative sampling.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "cit/error.hpp"
#include "cit/parallel.hpp"
#include "cit/tensor.hpp"

namespace cit {

struct GenConfig {
  std::size_t n_requests = 20000;
  std::size_t candidates_per_request = 200;  // v
  std::size_t display_cutoff = 30;
  std::size_t query_dim = 8;
  std::size_t item_dim = 24;
  std::size_t teacher_extra_dims = 8;  // trailing item coordinates only the teacher sees
  double noise_std = 0.5;              // relevance noise
  double relevance_scale = 2.0;        // std of the query-item interaction term
  double click_bias = -4.0;            // shifts click probabilities down
  double display_noise_std = 1.0;      // noise of the upstream proxy that picks displayed items
  std::uint64_t seed = 1;
  std::size_t n_days = 18;

  std::size_t student_item_dim() const { return item_dim - teacher_extra_dims; }
  friend bool operator==(const GenConfig&, const GenConfig&) = default;
};

/// Collects every violated invariant; empty when the config is valid.
inline std::vector<std::string> violations(const GenConfig& c) {
  std::vector<std::string> v;
  if (c.candidates_per_request == 0) v.emplace_back("candidates_per_request must be >= 1");
  if (c.display_cutoff > c.candidates_per_request) v.emplace_back("display_cutoff must be <= candidates_per_request");
  if (c.query_dim == 0) v.emplace_back("query_dim must be >= 1");
  if (c.item_dim == 0) v.emplace_back("item_dim must be >= 1");
  if (c.teacher_extra_dims >= c.item_dim) v.emplace_back("teacher_extra_dims must be < item_dim");
  if (!(c.noise_std >= 0.0)) v.emplace_back("noise_std must be >= 0");
  if (!(c.display_noise_std >= 0.0)) v.emplace_back("display_noise_std must be >= 0");
  if (!(c.relevance_scale >= 0.0)) v.emplace_back("relevance_scale must be >= 0");
  if (c.n_days == 0) v.emplace_back("n_days must be >= 1");
  return v;
}

struct Candidate {
  std::uint64_t item_id = 0;
  bool displayed = false;
  bool clicked = false;
  double latent_relevance = 0.0;  // generator-side truth, never a model input

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

/// One search request. Item features live in a v x item_dim matrix whose row i
/// belongs to candidates[i]; a student reads a prefix of each row.
struct Request {
  std::uint64_t request_id = 0;
  std::size_t day = 0;
  std::vector<double> query;
  std::vector<Candidate> candidates;
  Matrix item_features;

  std::size_t size() const { return candidates.size(); }
  std::span<const double> item(std::size_t i) const { return item_features.row(i); }
  std::size_t click_count() const {
    return static_cast<std::size_t>(
        std::count_if(candidates.begin(), candidates.end(), [](const Candidate& c) { return c.clicked; }));
  }

  friend bool operator==(const Request&, const Request&) = default;
};

struct Corpus {
  std::size_t query_dim = 0;
  std::size_t item_dim = 0;
  std::vector<Request> requests;

  bool empty() const { return requests.empty(); }
  std::size_t size() const { return requests.size(); }
  friend bool operator==(const Corpus&, const Corpus&) = default;
};

/// item_dim x query_dim matrix M of the relevance model <M q, z>.
inline Matrix mixing_matrix(const GenConfig& c) {
  Rng rng = Rng(c.seed).derive(~0ULL);
  Matrix m(c.item_dim, c.query_dim);
  const double std = c.relevance_scale / std::sqrt(static_cast<double>(c.item_dim * c.query_dim));
  for (auto& v : m.values()) v = rng.normal(0.0, std);
  return m;
}

/// Fills one request from its own derived stream, so the corpus does not
/// depend on how requests are distributed over workers.
inline Request generate_request(const GenConfig& c, const Matrix& mixing, std::uint64_t request_id) {
  Rng rng = Rng(c.seed).derive(request_id);
  const std::size_t v = c.candidates_per_request;
  Request r;
  r.request_id = request_id;
  r.day = static_cast<std::size_t>(request_id % c.n_days);
  r.query.resize(c.query_dim);
  for (auto& x : r.query) x = rng.normal();

  std::vector<double> mq(c.item_dim, 0.0);  // M q
  for (std::size_t i = 0; i < c.item_dim; ++i)
    for (std::size_t j = 0; j < c.query_dim; ++j) mq[i] += mixing(i, j) * r.query[j];

  r.item_features = Matrix(v, c.item_dim);
  r.candidates.resize(v);
  std::vector<double> proxy(v);
  for (std::size_t k = 0; k < v; ++k) {
    auto z = r.item_features.row(k);
    for (auto& x : z) x = rng.normal();
    auto& cand = r.candidates[k];
    cand.item_id = request_id * v + k;
    cand.latent_relevance = dot(mq, z) + c.click_bias + (c.noise_std > 0.0 ? rng.normal(0.0, c.noise_std) : 0.0);
    proxy[k] = cand.latent_relevance + (c.display_noise_std > 0.0 ? rng.normal(0.0, c.display_noise_std) : 0.0);
  }

  std::vector<std::size_t> order(v);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return proxy[a] > proxy[b]; });
  for (std::size_t rank = 0; rank < c.display_cutoff; ++rank) r.candidates[order[rank]].displayed = true;
  // Clicks are drawn in candidate order, only for displayed items.
  for (auto& cand : r.candidates) {
    if (cand.displayed) cand.clicked = rng.bernoulli(sigmoid(cand.latent_relevance));
  }
  return r;
}

inline Corpus generate_corpus(const GenConfig& c, std::size_t workers = 1) {
  if (auto v = violations(c); !v.empty()) {
    std::string msg = "invalid generator config:";
    for (const auto& s : v) msg += " " + s + ";";
    throw ConfigError(msg);
  }
  Corpus corpus;
  corpus.query_dim = c.query_dim;
  corpus.item_dim = c.item_dim;
  corpus.requests.resize(c.n_requests);
  const Matrix mixing = mixing_matrix(c);
  parallel_for(c.n_requests, workers, [&](std::size_t i) { corpus.requests[i] = generate_request(c, mixing, i); });
  return corpus;
}

// ---------------------------------------------------------------------------
// Dataset file
// ---------------------------------------------------------------------------
//
//   cascade-cit-dataset v1 <query_dim> <item_dim>
//   <request_id>\t<day>\t<q_1 .. q_Q>\t<cand>\t<cand>...
//
// with each <cand> = "item_id f_1 .. f_D displayed clicked latent_relevance"
// (space separated; flags are 0/1; reals use 17 significant digits).

inline constexpr std::string_view kDatasetMagic = "cascade-cit-dataset";
inline constexpr std::string_view kDatasetVersion = "v1";

namespace detail {

inline void append_double(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  out.append(buf, res.ptr);
}

inline void append_uint(std::string& out, std::uint64_t v) {
  char buf[24];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

}  // namespace detail

inline std::string format_request(const Request& r) {
  std::string line;
  detail::append_uint(line, r.request_id);
  line += '\t';
  detail::append_uint(line, r.day);
  line += '\t';
  for (std::size_t i = 0; i < r.query.size(); ++i) {
    if (i) line += ' ';
    detail::append_double(line, r.query[i]);
  }
  for (std::size_t k = 0; k < r.candidates.size(); ++k) {
    const auto& c = r.candidates[k];
    line += '\t';
    detail::append_uint(line, c.item_id);
    for (double f : r.item(k)) {
      line += ' ';
      detail::append_double(line, f);
    }
    line += c.displayed ? " 1" : " 0";
    line += c.clicked ? " 1 " : " 0 ";
    detail::append_double(line, c.latent_relevance);
  }
  return line;
}

inline std::string dataset_header(std::size_t query_dim, std::size_t item_dim) {
  return std::string(kDatasetMagic) + " " + std::string(kDatasetVersion) + " " + std::to_string(query_dim) + " " +
         std::to_string(item_dim);
}

inline void write_dataset(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open dataset for writing: " + path);
  out << dataset_header(corpus.query_dim, corpus.item_dim) << '\n';
  for (const auto& r : corpus.requests) out << format_request(r) << '\n';
  if (!out) throw DataError("failed writing dataset: " + path);
}

namespace detail {

class LineParser {
 public:
  LineParser(std::string_view line, std::size_t line_no) : s_(line), line_no_(line_no) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw DataError("dataset line " + std::to_string(line_no_) + ": " + what);
  }

  std::string_view field(char sep) {
    if (pos_ > s_.size()) fail("missing field");
    const auto end = s_.find(sep, pos_);
    std::string_view f = s_.substr(pos_, end == std::string_view::npos ? std::string_view::npos : end - pos_);
    pos_ = end == std::string_view::npos ? s_.size() + 1 : end + 1;
    return f;
  }
  bool done() const { return pos_ > s_.size(); }
  std::size_t line_no() const { return line_no_; }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
  std::size_t line_no_;
};

template <typename T>
T parse_number(std::string_view tok, const LineParser& p, const char* what) {
  T v{};
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
    p.fail(std::string("cannot parse ") + what + " '" + std::string(tok) + "'");
  }
  return v;
}

}  // namespace detail

inline Request parse_request(std::string_view line, std::size_t line_no, std::size_t query_dim, std::size_t item_dim) {
  detail::LineParser p(line, line_no);
  Request r;
  r.request_id = detail::parse_number<std::uint64_t>(p.field('\t'), p, "request_id");
  r.day = detail::parse_number<std::size_t>(p.field('\t'), p, "day");
  {
    detail::LineParser q(p.field('\t'), line_no);
    for (std::size_t i = 0; i < query_dim; ++i) {
      if (q.done()) p.fail("query vector too short");
      r.query.push_back(detail::parse_number<double>(q.field(' '), p, "query feature"));
    }
    if (!q.done()) p.fail("query vector too long");
  }
  std::vector<double> features;
  while (!p.done()) {
    detail::LineParser c(p.field('\t'), line_no);
    Candidate cand;
    auto next = [&](const char* what) {
      if (c.done()) p.fail(std::string("candidate record truncated before ") + what);
      return c.field(' ');
    };
    cand.item_id = detail::parse_number<std::uint64_t>(next("item_id"), p, "item_id");
    for (std::size_t i = 0; i < item_dim; ++i) features.push_back(detail::parse_number<double>(next("features"), p, "item feature"));
    const auto displayed = detail::parse_number<int>(next("displayed"), p, "displayed flag");
    const auto clicked = detail::parse_number<int>(next("clicked"), p, "clicked flag");
    if ((displayed != 0 && displayed != 1) || (clicked != 0 && clicked != 1)) p.fail("flags must be 0 or 1");
    cand.displayed = displayed == 1;
    cand.clicked = clicked == 1;
    cand.latent_relevance = detail::parse_number<double>(next("latent_relevance"), p, "latent_relevance");
    if (!c.done()) p.fail("candidate record has trailing fields");
    if (cand.clicked && !cand.displayed) p.fail("item " + std::to_string(cand.item_id) + " clicked but not displayed");
    r.candidates.push_back(cand);
  }
  if (r.candidates.empty()) p.fail("request has no candidates");
  r.item_features = Matrix(r.candidates.size(), item_dim, std::move(features));
  return r;
}

inline Corpus load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("dataset file not found: " + path);
  Corpus corpus;
  std::string line;
  if (!std::getline(in, line)) return corpus;  // empty file -> empty corpus
  {
    detail::LineParser h(line, 1);
    if (h.field(' ') != kDatasetMagic) h.fail("not a cascade-cit dataset");
    const auto version = h.field(' ');
    if (version != kDatasetVersion) h.fail("unsupported dataset version '" + std::string(version) + "'");
    corpus.query_dim = detail::parse_number<std::size_t>(h.field(' '), h, "query_dim");
    corpus.item_dim = detail::parse_number<std::size_t>(h.field(' '), h, "item_dim");
    if (!h.done()) h.fail("trailing header fields");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    corpus.requests.push_back(parse_request(line, line_no, corpus.query_dim, corpus.item_dim));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Splits and sampling
// ---------------------------------------------------------------------------

struct Splits {
  Corpus train;
  Corpus valid;
  Corpus test;
};

/// Consecutive day ranges [0, train), [train, train+valid), [.., +test).
inline Splits partition_dataset(Corpus corpus, std::size_t train_days, std::size_t valid_days, std::size_t test_days,
                                std::size_t n_days) {
  if (train_days + valid_days + test_days > n_days) {
    throw ConfigError("partition: " + std::to_string(train_days + valid_days + test_days) +
                      " days requested but corpus has " + std::to_string(n_days));
  }
  Splits s;
  for (Corpus* c : {&s.train, &s.valid, &s.test}) {
    c->query_dim = corpus.query_dim;
    c->item_dim = corpus.item_dim;
  }
  for (auto& r : corpus.requests) {
    if (r.day < train_days) {
      s.train.requests.push_back(std::move(r));
    } else if (r.day < train_days + valid_days) {
      s.valid.requests.push_back(std::move(r));
    } else if (r.day < train_days + valid_days + test_days) {
      s.test.requests.push_back(std::move(r));
    }
  }
  return s;
}

struct NegativeSample {
  std::vector<std::size_t> indices;
  bool with_replacement = false;  // pool was smaller than K
};

/// K distinct draws from `negative_pool` (uniform, without replacement). With
/// fewer than K negatives available the draw falls back to sampling with
/// replacement and the result is flagged.
inline NegativeSample sample_negatives(std::span<const std::size_t> negative_pool, std::size_t positive_index,
                                       std::size_t k, Rng& rng) {
  if (std::find(negative_pool.begin(), negative_pool.end(), positive_index) != negative_pool.end()) {
    throw InputError("sample_negatives: positive index " + std::to_string(positive_index) + " is in the negative pool");
  }
  NegativeSample out;
  if (negative_pool.empty() || k == 0) {
    out.with_replacement = k > 0;
    return out;
  }
  const std::size_t n = negative_pool.size();
  if (n < k) {
    out.with_replacement = true;
    for (std::size_t i = 0; i < k; ++i) out.indices.push_back(negative_pool[rng.uniform_index(n)]);
    return out;
  }
  // Partial Fisher-Yates over a copy of the pool.
  std::vector<std::size_t> pool(negative_pool.begin(), negative_pool.end());
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.uniform_index(n - i);
    std::swap(pool[i], pool[j]);
  }
  out.indices.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
  return out;
}

}  // namespace cit
