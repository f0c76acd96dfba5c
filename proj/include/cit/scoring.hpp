#pragma once

#include <functional>
#include <span>
#include <vector>

#include "cit/data.hpp"
#include "cit/models.hpp"

namespace cit {

/// Assembled model inputs for the given candidate rows of a request (all rows
/// when `rows` is empty).
inline Matrix request_inputs(const ModelConfig& c, const Request& r, std::span<const std::size_t> rows = {}) {
  const std::size_t n = rows.empty() ? r.size() : rows.size();
  Matrix in(n, c.input_dim());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = rows.empty() ? i : rows[i];
    try {
      assemble_input(c, r.query, r.item(k), in.row(i));
    } catch (const InputError& e) {
      throw InputError("request " + std::to_string(r.request_id) + ", candidate " + std::to_string(k) + ": " +
                       e.what());
    }
  }
  return in;
}

/// Logits of every candidate in a request.
inline std::vector<double> score_request(const ModelParams& m, const Request& r) {
  return forward_batch(m, request_inputs(m.config, r)).logits();
}

/// Maps a request to one ranking score per candidate (higher is better).
using Scorer = std::function<std::vector<double>(const Request&)>;

inline Scorer model_scorer(const ModelParams& m) {
  return [&m](const Request& r) { return score_request(m, r); };
}

inline std::vector<double> score_request(const TowerPair& towers, const Request& r) {
  const auto q = encode_tower(towers.query_tower, r.query);
  const std::size_t width = towers.item_tower.config.input_dim();
  Matrix items(r.size(), width);
  for (std::size_t k = 0; k < r.size(); ++k) {
    const auto row = r.item(k);
    if (row.size() < width) throw ShapeError("tower input: item features too short");
    std::copy_n(row.begin(), width, items.row(k).begin());
  }
  const auto x = forward_batch(towers.item_tower, std::move(items));
  std::vector<double> out(r.size());
  for (std::size_t k = 0; k < r.size(); ++k) {
    out[k] = dot(q.representations().row(0), x.representations().row(k));
  }
  return out;
}

inline Scorer tower_scorer(const TowerPair& towers) {
  return [&towers](const Request& r) { return score_request(towers, r); };
}

/// Graded relevance used for NDCG: the generator's click probability.
inline double graded_relevance(const Candidate& c) { return sigmoid(c.latent_relevance); }

}  // namespace cit
