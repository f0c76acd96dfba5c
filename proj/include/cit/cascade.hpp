#pragma once

/// \file cascade.hpp
/// Two-stage funnel: the student keeps its top-u of v candidates, the teacher
/// re-ranks those u and the top-k of that order is the final list.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cit/data.hpp"
#include "cit/error.hpp"
#include "cit/labeling.hpp"
#include "cit/metrics.hpp"
#include "cit/parallel.hpp"
#include "cit/scoring.hpp"

namespace cit {

struct CascadeConfig {
  std::size_t v = 200;
  std::size_t u = 20;
  std::size_t k = 5;
  friend bool operator==(const CascadeConfig&, const CascadeConfig&) = default;
};

inline std::vector<std::string> violations(const CascadeConfig& c) {
  std::vector<std::string> out;
  if (c.k == 0) out.emplace_back("cascade k must be >= 1");
  if (c.k > c.u) out.emplace_back("cascade requires k <= u");
  if (c.u > c.v) out.emplace_back("cascade requires u <= v");
  return out;
}

struct RankedItem {
  std::uint64_t item_id = 0;
  double score = 0.0;
  friend bool operator==(const RankedItem&, const RankedItem&) = default;
};

struct CascadeResult {
  std::vector<RankedItem> final_list;       // teacher order, length min(k, u)
  std::vector<std::uint64_t> preranked_set;  // student's top-u, in student order
  double end_ndcg_at_k = 0.0;
  double consistency_recall = 0.0;
};

/// Cascade over precomputed per-candidate scores.
inline CascadeResult run_cascade_scores(const Request& r, std::span<const double> student_scores,
                                        std::span<const double> teacher_scores, const CascadeConfig& c) {
  if (auto v = violations(c); !v.empty()) throw ConfigError("cascade: " + v.front());
  if (r.size() != c.v) {
    throw InputError("cascade: request " + std::to_string(r.request_id) + " has " + std::to_string(r.size()) +
                     " candidates, config expects v=" + std::to_string(c.v));
  }
  if (student_scores.size() != r.size() || teacher_scores.size() != r.size()) {
    throw ShapeError("cascade: score vectors do not match candidate count");
  }
  CascadeResult out;
  const auto student_order = rank_descending(student_scores);
  std::vector<std::size_t> kept(student_order.begin(), student_order.begin() + static_cast<std::ptrdiff_t>(c.u));
  for (auto i : kept) out.preranked_set.push_back(r.candidates[i].item_id);

  // Teacher re-ranks the kept items; ties fall back to the lower index.
  std::sort(kept.begin(), kept.end());
  std::stable_sort(kept.begin(), kept.end(),
                   [&](std::size_t a, std::size_t b) { return teacher_scores[a] > teacher_scores[b]; });
  const std::size_t final_len = std::min(c.k, c.u);
  for (std::size_t i = 0; i < final_len; ++i) {
    out.final_list.push_back({r.candidates[kept[i]].item_id, teacher_scores[kept[i]]});
  }

  // NDCG of the final list against the ideal over all v candidates.
  std::vector<double> ranked;
  std::vector<std::uint8_t> used(r.size(), 0);
  ranked.reserve(r.size());
  for (std::size_t i = 0; i < final_len; ++i) {
    ranked.push_back(graded_relevance(r.candidates[kept[i]]));
    used[kept[i]] = 1;
  }
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (!used[i]) ranked.push_back(graded_relevance(r.candidates[i]));
  }
  out.end_ndcg_at_k = ndcg_at_k(ranked, c.k);

  const auto teacher_order = rank_descending(teacher_scores);
  std::vector<std::uint64_t> reference;
  for (std::size_t i = 0; i < c.u; ++i) reference.push_back(r.candidates[teacher_order[i]].item_id);
  out.consistency_recall = recall_at_u(out.preranked_set, reference);
  return out;
}

inline CascadeResult run_cascade(const Request& r, const ModelParams& student, const ModelParams& teacher,
                                 const CascadeConfig& c) {
  const auto s = score_request(student, r);
  const auto t = score_request(teacher, r);
  return run_cascade_scores(r, s, t, c);
}

struct RequestCascade {
  std::uint64_t request_id = 0;
  double end_ndcg_at_k = 0.0;
  double consistency_recall = 0.0;
};

struct CascadeReport {
  CascadeConfig config;
  std::size_t n_requests = 0;
  double mean_end_ndcg_at_k = 0.0;
  double mean_consistency_recall = 0.0;
  std::vector<RequestCascade> per_request;
};

inline CascadeReport summarize_cascade(const CascadeConfig& c, std::vector<RequestCascade> rows) {
  if (rows.empty()) throw InputError("evaluate_cascade: empty corpus");
  CascadeReport rep;
  rep.config = c;
  rep.n_requests = rows.size();
  double ndcg = 0.0, recall = 0.0;
  for (const auto& row : rows) {
    ndcg += row.end_ndcg_at_k;
    recall += row.consistency_recall;
  }
  rep.mean_end_ndcg_at_k = ndcg / static_cast<double>(rows.size());
  rep.mean_consistency_recall = recall / static_cast<double>(rows.size());
  rep.per_request = std::move(rows);
  return rep;
}

inline CascadeReport evaluate_cascade(const Corpus& corpus, const Scorer& student, const Scorer& teacher,
                                      const CascadeConfig& c, std::size_t workers = 1) {
  if (corpus.empty()) throw InputError("evaluate_cascade: empty corpus");
  std::vector<RequestCascade> rows(corpus.size());
  parallel_for(corpus.size(), workers, [&](std::size_t i) {
    const auto& r = corpus.requests[i];
    const auto res = run_cascade_scores(r, student(r), teacher(r), c);
    rows[i] = {r.request_id, res.end_ndcg_at_k, res.consistency_recall};
  });
  return summarize_cascade(c, std::move(rows));
}

inline CascadeReport evaluate_cascade(const Corpus& corpus, const ModelParams& student, const ModelParams& teacher,
                                      const CascadeConfig& c, std::size_t workers = 1) {
  return evaluate_cascade(corpus, model_scorer(student), model_scorer(teacher), c, workers);
}

}  // namespace cit
