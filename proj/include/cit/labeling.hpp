#pragma once

/// \file labeling.hpp
/// Per-request labels (click feedback or the teacher's top-u) and the policy
/// deciding which loss terms a request feeds.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cit/data.hpp"
#include "cit/error.hpp"

namespace cit {

enum class LabelScheme { click, teacher_top_u };

inline std::string to_string(LabelScheme s) { return s == LabelScheme::click ? "click" : "teacher_top_u"; }

struct LabelSet {
  std::vector<std::uint8_t> labels;    // aligned with request candidates
  std::vector<std::uint8_t> eligible;  // candidates that carry a usable label
  LabelScheme scheme = LabelScheme::click;
  std::size_t u = 0;                   // teacher_top_u only
  bool degenerate = false;             // u >= v: everything labelled positive

  std::size_t size() const { return labels.size(); }
  std::size_t positives() const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1)); }
};

/// 1 for displayed and clicked, 0 for displayed and not clicked. Items that
/// were never displayed carry no feedback and are marked ineligible.
inline LabelSet click_labels(const Request& r) {
  if (r.candidates.empty()) throw InputError("click_labels: request " + std::to_string(r.request_id) + " is empty");
  LabelSet s;
  s.scheme = LabelScheme::click;
  s.labels.resize(r.size());
  s.eligible.resize(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    const auto& c = r.candidates[i];
    if (c.clicked && !c.displayed) {
      throw DataError("request " + std::to_string(r.request_id) + ": item " + std::to_string(c.item_id) +
                      " is clicked but was never displayed");
    }
    s.labels[i] = c.clicked ? 1 : 0;
    s.eligible[i] = c.displayed ? 1 : 0;
  }
  return s;
}

/// Candidate indices ordered by descending score; equal scores keep the lower
/// index first.
inline std::vector<std::size_t> rank_descending(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

/// The u best-scored candidates are positives, the other v-u negatives.
inline LabelSet teacher_top_u_labels(std::span<const double> teacher_scores, std::size_t u) {
  if (teacher_scores.empty()) throw InputError("teacher_top_u_labels: no candidates");
  if (u == 0) throw InputError("teacher_top_u_labels: u must be >= 1");
  for (double s : teacher_scores) {
    if (!std::isfinite(s)) throw NumericError("teacher_top_u_labels: non-finite teacher score");
  }
  LabelSet s;
  s.scheme = LabelScheme::teacher_top_u;
  s.u = u;
  const std::size_t v = teacher_scores.size();
  s.labels.assign(v, 0);
  s.eligible.assign(v, 1);
  if (u >= v) {
    s.degenerate = true;
    std::fill(s.labels.begin(), s.labels.end(), 1);
    return s;
  }
  const auto order = rank_descending(teacher_scores);
  for (std::size_t i = 0; i < u; ++i) s.labels[order[i]] = 1;
  return s;
}

struct TrainingPolicy {
  bool use_ce = false;
  bool use_cit = false;
  std::vector<std::size_t> eligible_positive_indices;
  std::vector<std::size_t> eligible_negative_indices;
};

/// Requests without a click still train the transfer term; the pointwise term
/// is switched off for them. Under teacher_top_u every candidate is eligible,
/// displayed or not.
inline TrainingPolicy make_policy(const Request& r, const LabelSet& labels) {
  if (r.candidates.empty()) throw InputError("make_policy: request " + std::to_string(r.request_id) + " is empty");
  if (labels.size() != r.size()) {
    throw ShapeError("make_policy: " + std::to_string(labels.size()) + " labels for " + std::to_string(r.size()) +
                     " candidates");
  }
  TrainingPolicy p;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels.eligible[i]) continue;
    (labels.labels[i] ? p.eligible_positive_indices : p.eligible_negative_indices).push_back(i);
  }
  p.use_cit = true;
  p.use_ce = labels.scheme == LabelScheme::teacher_top_u || !p.eligible_positive_indices.empty();
  return p;
}

}  // namespace cit
