#pragma once

/// \file oracles.hpp
/// Brute-force metric oracles, written independently of the library: pair
/// counting, selection-sort ranking and direct sums. Shared by the unit tests
/// and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

namespace cit::oracle {

// Pair counting: 1 per correctly ordered pair, 1/2 per tie.
inline std::optional<double> auc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  double good = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1.0;
      if (s[i] > s[j]) good += 1.0;
      else if (s[i] == s[j]) good += 0.5;
    }
  if (pairs == 0.0) return std::nullopt;
  return good / pairs;
}

// Selection sort: repeatedly take the highest score, lowest index on ties.
inline std::vector<std::size_t> order_oracle(const std::vector<double>& s) {
  std::vector<std::size_t> out;
  std::vector<bool> used(s.size(), false);
  for (std::size_t r = 0; r < s.size(); ++r) {
    std::size_t best = s.size();
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (used[i]) continue;
      if (best == s.size() || s[i] > s[best]) best = i;
    }
    used[best] = true;
    out.push_back(best);
  }
  return out;
}

inline double dcg_oracle(const std::vector<double>& rel_in_order, std::size_t k) {
  double d = 0.0;
  for (std::size_t p = 1; p <= std::min(k, rel_in_order.size()); ++p) {
    d += (std::pow(2.0, rel_in_order[p - 1]) - 1.0) / std::log2(static_cast<double>(p) + 1.0);
  }
  return d;
}

inline double ndcg_oracle(const std::vector<double>& scores, const std::vector<double>& rel, std::size_t k) {
  std::vector<double> ranked;
  for (auto i : order_oracle(scores)) ranked.push_back(rel[i]);
  const auto ideal_order = order_oracle(rel);
  std::vector<double> ideal;
  for (auto i : ideal_order) ideal.push_back(rel[i]);
  const double idcg = dcg_oracle(ideal, k);
  return idcg == 0.0 ? 0.0 : dcg_oracle(ranked, k) / idcg;
}

inline double recall_oracle(const std::vector<double>& student, const std::vector<double>& teacher, std::size_t u) {
  const auto so = order_oracle(student), to = order_oracle(teacher);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < u; ++i)
    for (std::size_t j = 0; j < u; ++j) hit += so[i] == to[j] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(u);
}

// Weighted mean of per-group AUCs, weight positives x negatives.
inline std::optional<double> gauc_oracle(const std::vector<std::vector<double>>& scores,
                                         const std::vector<std::vector<int>>& labels, std::size_t* skipped = nullptr) {
  double num = 0.0, den = 0.0;
  std::size_t skip = 0;
  for (std::size_t g = 0; g < scores.size(); ++g) {
    const auto a = auc_oracle(scores[g], labels[g]);
    if (!a) {
      ++skip;
      continue;
    }
    const double pos = static_cast<double>(std::count(labels[g].begin(), labels[g].end(), 1));
    const double w = pos * (static_cast<double>(labels[g].size()) - pos);
    num += w * *a;
    den += w;
  }
  if (skipped) *skipped = skip;
  if (den == 0.0) return std::nullopt;
  return num / den;
}

}  // namespace cit::oracle
