#pragma once

/// \file config.hpp
/// Run configuration: every knob of one pipeline run, loaded from a flat
/// key=value file with [sections]. Loading never stops at the first problem;
/// it collects every violation so a user can fix the file in one pass.
///
///   [data]     GenConfig fields, plus train_days / valid_days / test_days
///   [teacher]  embedding_dim, hidden_sizes (comma list), representation_dim
///   [student]  same keys as [teacher]
///   [train]    TrainConfig fields
///   [cascade]  v, u, k
///   [paths]    data, teacher, student, out

#include <charconv>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "cit/cascade.hpp"
#include "cit/data.hpp"
#include "cit/error.hpp"
#include "cit/models.hpp"
#include "cit/trainer.hpp"

namespace cit {

struct SplitDays {
  std::size_t train = 14;
  std::size_t valid = 2;
  std::size_t test = 2;
  friend bool operator==(const SplitDays&, const SplitDays&) = default;
};

struct Paths {
  std::string out = "out";
  std::string data;     // default: <out>/dataset.txt
  std::string teacher;  // default: <out>/teacher.ckpt
  std::string student;  // default: <out>/student.ckpt

  std::string data_path() const { return data.empty() ? out + "/dataset.txt" : data; }
  std::string teacher_path() const { return teacher.empty() ? out + "/teacher.ckpt" : teacher; }
  std::string student_path() const { return student.empty() ? out + "/student.ckpt" : student; }
};

/// Layer sizes of one network; input widths come from the data section.
struct NetShape {
  std::size_t embedding_dim = 16;
  std::vector<std::size_t> hidden_sizes;
  std::size_t representation_dim = 8;
  friend bool operator==(const NetShape&, const NetShape&) = default;
};

struct RunConfig {
  GenConfig data;
  SplitDays split;
  NetShape teacher{32, {128, 64, 32}, 8};
  NetShape student{16, {32, 16}, 8};
  TrainConfig train;
  CascadeConfig cascade;
  Paths paths;

  ModelConfig teacher_model() const {
    return {{data.query_dim, data.item_dim}, teacher.embedding_dim, teacher.hidden_sizes, teacher.representation_dim,
            false};
  }
  ModelConfig student_model() const {
    const std::size_t item = data.item_dim > data.teacher_extra_dims ? data.student_item_dim() : 0;
    return {{data.query_dim, item}, student.embedding_dim, student.hidden_sizes, student.representation_dim, false};
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
bool parse_number(std::string_view text, T& out) {
  const auto* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc{} && p == end;
}

inline bool parse_list(std::string_view text, std::vector<std::size_t>& out) {
  std::vector<std::size_t> v;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto piece = trim(text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    std::size_t x = 0;
    if (piece.empty() || !parse_number(std::string_view(piece), x)) return false;
    v.push_back(x);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  out = std::move(v);
  return true;
}

}  // namespace detail

/// Sets one key. Returns an error message, or an empty string on success.
/// Shared by the file loader and command-line overrides.
inline std::string set_config_value(RunConfig& c, const std::string& section, const std::string& key,
                                    const std::string& value) {
  using detail::parse_number;
  const std::string_view v = value;
  auto bad = [&] { return "invalid value '" + value + "' for " + section + "." + key; };
  auto size = [&](std::size_t& dst) { return parse_number(v, dst) ? std::string{} : bad(); };
  auto u64 = [&](std::uint64_t& dst) { return parse_number(v, dst) ? std::string{} : bad(); };
  auto real = [&](double& dst) { return parse_number(v, dst) ? std::string{} : bad(); };

  if (section == "data") {
    auto& d = c.data;
    if (key == "n_requests") return size(d.n_requests);
    if (key == "candidates_per_request" || key == "v") return size(d.candidates_per_request);
    if (key == "display_cutoff") return size(d.display_cutoff);
    if (key == "query_dim") return size(d.query_dim);
    if (key == "item_dim") return size(d.item_dim);
    if (key == "teacher_extra_dims") return size(d.teacher_extra_dims);
    if (key == "noise_std") return real(d.noise_std);
    if (key == "relevance_scale") return real(d.relevance_scale);
    if (key == "click_bias") return real(d.click_bias);
    if (key == "display_noise_std") return real(d.display_noise_std);
    if (key == "seed") return u64(d.seed);
    if (key == "n_days") return size(d.n_days);
    if (key == "train_days") return size(c.split.train);
    if (key == "valid_days") return size(c.split.valid);
    if (key == "test_days") return size(c.split.test);
  } else if (section == "teacher" || section == "student") {
    auto& n = section == "teacher" ? c.teacher : c.student;
    if (key == "embedding_dim") return size(n.embedding_dim);
    if (key == "representation_dim") return size(n.representation_dim);
    if (key == "hidden_sizes") return detail::parse_list(v, n.hidden_sizes) ? std::string{} : bad();
  } else if (section == "train") {
    auto& t = c.train;
    if (key == "scheme") {
      if (value == "click") t.scheme = LabelScheme::click;
      else if (value == "teacher_top_u") t.scheme = LabelScheme::teacher_top_u;
      else return bad();
      return {};
    }
    if (key == "objective") {
      if (value == "ce_only") t.objective = Objective::ce_only;
      else if (value == "ce_plus_cit") t.objective = Objective::ce_plus_cit;
      else if (value == "ce_plus_kd") t.objective = Objective::ce_plus_kd;
      else if (value == "pairwise") t.objective = Objective::pairwise;
      else return bad();
      return {};
    }
    if (key == "cit_variant") {
      if (value == "standard") t.cit_variant = CitVariant::standard;
      else if (value == "literal") t.cit_variant = CitVariant::literal;
      else return bad();
      return {};
    }
    if (key == "lambda") return real(t.lambda);
    if (key == "tau") return real(t.tau);
    if (key == "negatives" || key == "k_negatives") return size(t.negatives);
    if (key == "u") return size(t.u);
    if (key == "epochs") return size(t.epochs);
    if (key == "batch_requests") return size(t.batch_requests);
    if (key == "lr") return real(t.lr);
    if (key == "seed") return u64(t.seed);
    if (key == "early_stop_patience") return size(t.early_stop_patience);
    if (key == "kd_temperature") return real(t.kd_temperature);
    if (key == "max_anchors") return size(t.max_anchors);
    if (key == "workers") return size(t.workers);
  } else if (section == "cascade") {
    if (key == "v") return size(c.cascade.v);
    if (key == "u") return size(c.cascade.u);
    if (key == "k") return size(c.cascade.k);
  } else if (section == "paths") {
    if (key == "out") return c.paths.out = value, std::string{};
    if (key == "data") return c.paths.data = value, std::string{};
    if (key == "teacher") return c.paths.teacher = value, std::string{};
    if (key == "student") return c.paths.student = value, std::string{};
  } else {
    return "unknown section [" + section + "]";
  }
  return "unknown key '" + key + "' in [" + section + "]";
}

/// Every violated invariant, including the cross-section ones.
inline std::vector<std::string> violations(const RunConfig& c) {
  std::vector<std::string> out;
  auto add = [&](const std::string& prefix, const std::vector<std::string>& v) {
    for (const auto& s : v) out.push_back(prefix + s);
  };
  add("data: ", violations(c.data));
  add("train: ", violations(c.train));
  add("cascade: ", violations(c.cascade));
  for (const auto* name : {"teacher", "student"}) {
    const auto& n = std::string(name) == "teacher" ? c.teacher : c.student;
    if (n.embedding_dim == 0) out.push_back(std::string(name) + ": embedding_dim must be >= 1");
    if (n.hidden_sizes.empty()) out.push_back(std::string(name) + ": hidden_sizes must be non-empty");
    for (auto h : n.hidden_sizes)
      if (h == 0) out.push_back(std::string(name) + ": hidden_sizes entries must be >= 1");
    if (n.representation_dim == 0) out.push_back(std::string(name) + ": representation_dim must be >= 1");
  }
  if (c.teacher.representation_dim != c.student.representation_dim) {
    out.emplace_back("student.representation_dim must equal teacher.representation_dim");
  }
  if (c.cascade.v != c.data.candidates_per_request) {
    out.emplace_back("cascade.v must equal data.candidates_per_request");
  }
  if (c.train.u != c.cascade.u) out.emplace_back("train.u must equal cascade.u");
  if (c.split.train == 0 || c.split.valid == 0 || c.split.test == 0) {
    out.emplace_back("data: train_days, valid_days and test_days must each be >= 1");
  }
  if (c.split.train + c.split.valid + c.split.test > c.data.n_days) {
    out.emplace_back("data: train_days + valid_days + test_days must be <= n_days");
  }
  return out;
}

/// Parses config text on top of the defaults. Syntax problems are appended to
/// `problems`; valid lines still apply.
inline RunConfig parse_config(std::string_view text, std::vector<std::string>& problems) {
  RunConfig c;
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    auto line = detail::trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') {
        problems.push_back(where + "unterminated section header");
        continue;
      }
      section = detail::trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back(where + "expected key = value");
      continue;
    }
    if (section.empty()) {
      problems.push_back(where + "key outside of any [section]");
      continue;
    }
    const auto key = detail::trim(std::string_view(line).substr(0, eq));
    const auto value = detail::trim(std::string_view(line).substr(eq + 1));
    if (auto err = set_config_value(c, section, key, value); !err.empty()) problems.push_back(where + err);
  }
  return c;
}

/// Loads and parses a config file. A missing file raises InputError; syntax
/// problems are returned through `problems`.
inline RunConfig load_config(const std::string& path, std::vector<std::string>& problems) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("config file not found: " + path);
  std::ostringstream s;
  s << f.rdbuf();
  return parse_config(s.str(), problems);
}

/// Canonical rendering of every setting that can change a result. Paths and
/// the worker count are left out.
inline std::string describe(const RunConfig& c) {
  std::ostringstream o;
  o.precision(17);
  const auto& d = c.data;
  o << "[data]\nn_requests=" << d.n_requests << "\ncandidates_per_request=" << d.candidates_per_request
    << "\ndisplay_cutoff=" << d.display_cutoff << "\nquery_dim=" << d.query_dim << "\nitem_dim=" << d.item_dim
    << "\nteacher_extra_dims=" << d.teacher_extra_dims << "\nnoise_std=" << d.noise_std
    << "\nrelevance_scale=" << d.relevance_scale << "\nclick_bias=" << d.click_bias
    << "\ndisplay_noise_std=" << d.display_noise_std << "\nseed=" << d.seed << "\nn_days=" << d.n_days
    << "\ntrain_days=" << c.split.train << "\nvalid_days=" << c.split.valid << "\ntest_days=" << c.split.test << "\n";
  for (const auto* name : {"teacher", "student"}) {
    const auto& n = std::string(name) == "teacher" ? c.teacher : c.student;
    o << "[" << name << "]\nembedding_dim=" << n.embedding_dim << "\nhidden_sizes=";
    for (std::size_t i = 0; i < n.hidden_sizes.size(); ++i) o << (i ? "," : "") << n.hidden_sizes[i];
    o << "\nrepresentation_dim=" << n.representation_dim << "\n";
  }
  o << "[train]\n" << describe(c.train);
  o << "[cascade]\nv=" << c.cascade.v << "\nu=" << c.cascade.u << "\nk=" << c.cascade.k << "\n";
  return o.str();
}

/// 64-bit FNV-1a of the canonical rendering, as 16 hex digits.
inline std::string config_hash(const RunConfig& c) {
  const auto text = describe(c);
  const auto h = detail::fnv1a(std::span<const char>(text.data(), text.size()));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace cit
