#pragma once

/// \file metrics.hpp
/// Offline ranking metrics: AUC, request-grouped AUC, NDCG@k and Recall@u.
///
/// Ties are resolved the same way everywhere: higher score first, then lower
/// position (candidates are stored in item-id order).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "cit/error.hpp"

namespace cit {

/// AUC by the rank-sum statistic with mid-ranks for ties, which equals the
/// fraction of (positive, negative) pairs ordered correctly with ties counted
/// as one half. Empty when either class is absent.
inline std::optional<double> auc_if_defined(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(scores[i])) throw NumericError("auc: non-finite score");
    if (labels[i] != 0 && labels[i] != 1) throw InputError("auc: labels must be 0 or 1");
    order[i] = i;
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) {
        rank_sum += mid_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  const double correct_pairs = rank_sum - np * (np + 1.0) / 2.0;
  return correct_pairs / (np * static_cast<double>(n_neg));
}

inline double auc(std::span<const double> scores, std::span<const int> labels) {
  auto a = auc_if_defined(scores, labels);
  if (!a) throw NotComputable("auc: needs at least one positive and one negative label");
  return *a;
}

struct GroupScores {
  std::vector<double> scores;
  std::vector<int> labels;
};

struct GaucResult {
  double value = 0.0;
  std::size_t n_evaluated = 0;
  std::size_t n_skipped = 0;
};

/// Per-request AUC averaged with weight n_pos * n_neg; requests whose AUC is
/// undefined are skipped and counted.
inline GaucResult gauc(std::span<const GroupScores> groups) {
  GaucResult r;
  double weighted = 0.0;
  double total_weight = 0.0;
  for (const auto& g : groups) {
    const auto a = auc_if_defined(g.scores, g.labels);
    if (!a) {
      ++r.n_skipped;
      continue;
    }
    const auto n_pos = static_cast<double>(std::count(g.labels.begin(), g.labels.end(), 1));
    const double w = n_pos * (static_cast<double>(g.labels.size()) - n_pos);
    weighted += w * *a;
    total_weight += w;
    ++r.n_evaluated;
  }
  if (r.n_evaluated == 0) throw NotComputable("gauc: no request has both positive and negative labels");
  r.value = weighted / total_weight;
  return r;
}

inline double dcg_gain(double relevance) { return std::exp2(relevance) - 1.0; }
inline double dcg_discount(std::size_t position) { return std::log2(static_cast<double>(position) + 1.0); }

/// DCG@k of a list in the given order (positions are 1-based).
inline double dcg_at_k(std::span<const double> ranked_relevances, std::size_t k) {
  double dcg = 0.0;
  const std::size_t n = std::min(k, ranked_relevances.size());
  for (std::size_t i = 0; i < n; ++i) dcg += dcg_gain(ranked_relevances[i]) / dcg_discount(i + 1);
  return dcg;
}

/// NDCG@k with gain 2^rel - 1 and discount 1/log2(pos + 1); the ideal DCG is
/// taken over the whole list. Returns 0 when the ideal DCG is 0.
inline double ndcg_at_k(std::span<const double> ranked_relevances, std::size_t k) {
  if (k == 0) throw InputError("ndcg_at_k: k must be >= 1");
  for (double r : ranked_relevances) {
    if (!(r >= 0.0)) throw InputError("ndcg_at_k: relevance must be non-negative and finite");
  }
  std::vector<double> ideal(ranked_relevances.begin(), ranked_relevances.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double idcg = dcg_at_k(ideal, k);
  if (idcg == 0.0) return 0.0;
  return dcg_at_k(ranked_relevances, k) / idcg;
}

/// |selected ∩ reference| / |reference|.
inline double recall_at_u(std::span<const std::uint64_t> selected, std::span<const std::uint64_t> reference) {
  if (reference.empty()) throw NotComputable("recall_at_u: empty reference set");
  const std::unordered_set<std::uint64_t> ref(reference.begin(), reference.end());
  const std::unordered_set<std::uint64_t> sel(selected.begin(), selected.end());
  std::size_t hit = 0;
  for (auto id : ref) hit += sel.count(id);
  return static_cast<double>(hit) / static_cast<double>(ref.size());
}

enum class RecallReference { teacher_top_u, clicked };

inline std::string to_string(RecallReference r) { return r == RecallReference::clicked ? "clicked" : "teacher_top_u"; }

struct MetricsReport {
  double gauc = 0.0;
  double ndcg_at_k = 0.0;
  double recall_at_u = 0.0;
  std::size_t k = 0;
  std::size_t u = 0;
  std::size_t n_requests_evaluated = 0;
  std::size_t n_requests_skipped = 0;
};

}  // namespace cit
