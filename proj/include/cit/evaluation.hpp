#pragma once

/// \file evaluation.hpp
/// Full offline metric suite for one model on one split, plus the cascade.

#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cit/cascade.hpp"
#include "cit/data.hpp"
#include "cit/labeling.hpp"
#include "cit/metrics.hpp"
#include "cit/parallel.hpp"
#include "cit/scoring.hpp"

namespace cit {

struct EvalOptions {
  CascadeConfig cascade;
  RecallReference recall_reference = RecallReference::teacher_top_u;
  std::size_t workers = 1;
};

struct EvalReport {
  MetricsReport metrics;
  CascadeReport cascade;
};

namespace detail {

struct RequestEval {
  GroupScores clicks;
  double ndcg = 0.0;
  std::optional<double> recall;
  RequestCascade cascade;
};

}  // namespace detail

/// Student metrics on `split`:
///  - gauc: displayed candidates against click labels;
///  - ndcg_at_k: student order over all candidates, graded by expected click;
///  - recall_at_u: student top-u against the reference set (teacher top-u by
///    default, or the clicked items);
///  - cascade: student top-u -> teacher top-k.
inline EvalReport evaluate_model(const Corpus& split, const Scorer& student, const Scorer& teacher,
                                 const EvalOptions& opt) {
  if (split.empty()) throw InputError("evaluate_model: empty split");
  const auto& cc = opt.cascade;
  std::vector<detail::RequestEval> rows(split.size());
  parallel_for(split.size(), opt.workers, [&](std::size_t i) {
    const auto& r = split.requests[i];
    const auto s = student(r);
    const auto t = teacher(r);
    auto& row = rows[i];
    for (std::size_t k = 0; k < r.size(); ++k) {
      if (!r.candidates[k].displayed) continue;
      row.clicks.scores.push_back(s[k]);
      row.clicks.labels.push_back(r.candidates[k].clicked ? 1 : 0);
    }
    const auto order = rank_descending(s);
    std::vector<double> ranked;
    ranked.reserve(r.size());
    for (auto k : order) ranked.push_back(graded_relevance(r.candidates[k]));
    row.ndcg = ndcg_at_k(ranked, cc.k);

    std::vector<std::uint64_t> selected;
    for (std::size_t k = 0; k < std::min(cc.u, r.size()); ++k) selected.push_back(r.candidates[order[k]].item_id);
    std::vector<std::uint64_t> reference;
    if (opt.recall_reference == RecallReference::teacher_top_u) {
      const auto torder = rank_descending(t);
      for (std::size_t k = 0; k < std::min(cc.u, r.size()); ++k) reference.push_back(r.candidates[torder[k]].item_id);
    } else {
      for (const auto& c : r.candidates)
        if (c.clicked) reference.push_back(c.item_id);
    }
    if (!reference.empty()) row.recall = recall_at_u(selected, reference);

    const auto cas = run_cascade_scores(r, s, t, cc);
    row.cascade = {r.request_id, cas.end_ndcg_at_k, cas.consistency_recall};
  });

  EvalReport rep;
  auto& m = rep.metrics;
  m.k = cc.k;
  m.u = cc.u;
  std::vector<GroupScores> groups;
  groups.reserve(rows.size());
  std::vector<RequestCascade> cas;
  double ndcg = 0.0, recall = 0.0;
  std::size_t n_recall = 0;
  for (auto& row : rows) {
    groups.push_back(std::move(row.clicks));
    ndcg += row.ndcg;
    if (row.recall) {
      recall += *row.recall;
      ++n_recall;
    }
    cas.push_back(row.cascade);
  }
  const auto g = gauc(groups);
  m.gauc = g.value;
  m.n_requests_evaluated = g.n_evaluated;
  m.n_requests_skipped = g.n_skipped;
  m.ndcg_at_k = ndcg / static_cast<double>(rows.size());
  m.recall_at_u = n_recall ? recall / static_cast<double>(n_recall) : 0.0;
  rep.cascade = summarize_cascade(cc, std::move(cas));
  return rep;
}

/// Aligned text table; one row per (name, report).
inline std::string format_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::ostringstream o;
  o << std::left << std::setw(14) << "Method" << std::right << std::setw(10) << "NDCG" << std::setw(10) << "G-AUC"
    << std::setw(10) << "Recall" << '\n';
  o << std::fixed << std::setprecision(4);
  for (const auto& [name, m] : rows) {
    o << std::left << std::setw(14) << name << std::right << std::setw(10) << m.ndcg_at_k << std::setw(10) << m.gauc
      << std::setw(10) << m.recall_at_u << '\n';
  }
  return o.str();
}

}  // namespace cit
