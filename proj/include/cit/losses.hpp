#pragma once

/// \file losses.hpp
/// Training objectives: pointwise cross-entropy, the contrastive transfer loss
/// (InfoNCE over student/teacher representations), the lambda-mixed objective,
/// listwise knowledge distillation and a pairwise logistic loss.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "cit/error.hpp"
#include "cit/tensor.hpp"

namespace cit {

inline constexpr double kProbClamp = 1e-12;

struct ScalarLoss {
  double value = 0.0;
  double grad = 0.0;
};

/// -[y ln p + (1-y) ln(1-p)] with p clamped to [1e-12, 1-1e-12]; `grad` is dL/dp.
inline ScalarLoss cross_entropy(double score, int label) {
  if (label != 0 && label != 1) throw InputError("cross_entropy: label must be 0 or 1, got " + std::to_string(label));
  if (!std::isfinite(score)) throw NumericError("cross_entropy: non-finite score");
  const double p = std::clamp(score, kProbClamp, 1.0 - kProbClamp);
  if (label == 1) return {-std::log(p), -1.0 / p};
  return {-std::log1p(-p), 1.0 / (1.0 - p)};
}

/// Cross-entropy on a logit; gradient is dL/dlogit = sigmoid(logit) - y.
/// Matches cross_entropy(sigmoid(logit), y) away from the clamp.
inline ScalarLoss cross_entropy_logit(double logit, int label) {
  if (label != 0 && label != 1) throw InputError("cross_entropy: label must be 0 or 1, got " + std::to_string(label));
  if (!std::isfinite(logit)) throw NumericError("cross_entropy: non-finite logit");
  const double p = sigmoid(logit);
  const double value = cross_entropy(p, label).value;
  return {value, p - static_cast<double>(label)};
}

// ---------------------------------------------------------------------------
// Contrastive transfer
// ---------------------------------------------------------------------------

enum class CitVariant {
  /// Denominator is the anchor's self-similarity plus the K negatives, exactly
  /// as the objective is usually printed. Can go negative.
  literal,
  /// Conventional InfoNCE: denominator is the positive pair plus the K
  /// negatives. Always >= 0.
  standard,
};

/// One anchor: the student's representation of a positive item, the teacher's
/// representation of the same item (a constant), and K student-encoded
/// negatives from the same request.
struct CitBatch {
  std::span<const double> anchor_rep;
  std::span<const double> teacher_rep;
  const Matrix* negative_reps = nullptr;  // K x d
  double tau = 0.1;
  CitVariant variant = CitVariant::standard;
};

struct CitLoss {
  double value = 0.0;
  std::vector<double> d_anchor;  // dL / d anchor_rep
  Matrix d_negatives;            // dL / d negative_reps (K x d)
  // No entry for the teacher representation: it is treated as a constant.
};

namespace detail {

/// ln sum exp(x) with max subtraction.
inline double log_sum_exp(std::span<const double> x) {
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace detail

inline CitLoss cit_loss(const CitBatch& b) {
  if (!(b.tau > 0.0)) throw InputError("cit_loss: temperature must be positive");
  if (b.negative_reps == nullptr || b.negative_reps->rows() == 0) {
    throw InputError("cit_loss: at least one negative is required");
  }
  const Matrix& neg = *b.negative_reps;
  const std::size_t d = b.anchor_rep.size();
  if (b.teacher_rep.size() != d || neg.cols() != d) {
    throw ShapeError("cit_loss: representation widths differ (anchor " + std::to_string(d) + ", teacher " +
                     std::to_string(b.teacher_rep.size()) + ", negatives " + std::to_string(neg.cols()) + ")");
  }
  const std::size_t k = neg.rows();
  const double inv_tau = 1.0 / b.tau;

  // logits[0] is the first denominator term, logits[1..K] the negatives.
  std::vector<double> logits(k + 1);
  const double positive = dot(b.anchor_rep, b.teacher_rep) * inv_tau;
  logits[0] = b.variant == CitVariant::standard ? positive : dot(b.anchor_rep, b.anchor_rep) * inv_tau;
  for (std::size_t j = 0; j < k; ++j) logits[j + 1] = dot(b.anchor_rep, neg.row(j)) * inv_tau;

  const double lse = detail::log_sum_exp(logits);
  CitLoss out;
  out.value = lse - positive;
  if (!std::isfinite(out.value)) throw NumericError("cit_loss: non-finite loss");

  std::vector<double> p(k + 1);
  for (std::size_t j = 0; j <= k; ++j) p[j] = std::exp(logits[j] - lse);

  out.d_anchor.assign(d, 0.0);
  out.d_negatives = Matrix(k, d);
  for (std::size_t i = 0; i < d; ++i) {
    double g = -b.teacher_rep[i];
    if (b.variant == CitVariant::standard) {
      g += p[0] * b.teacher_rep[i];
    } else {
      g += p[0] * 2.0 * b.anchor_rep[i];
    }
    for (std::size_t j = 0; j < k; ++j) g += p[j + 1] * neg(j, i);
    out.d_anchor[i] = g * inv_tau;
  }
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < d; ++i) out.d_negatives(j, i) = p[j + 1] * b.anchor_rep[i] * inv_tau;
  }
  return out;
}

/// lambda * ce + (1 - lambda) * cit.
inline double combined_loss(double ce, double cit, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InputError("combined_loss: lambda must lie in [0, 1]");
  if (lambda == 1.0) return ce;
  if (lambda == 0.0) return cit;
  return lambda * ce + (1.0 - lambda) * cit;
}

/// Same affine combination applied to two aligned gradient vectors.
inline std::vector<double> combine_gradients(std::span<const double> ce, std::span<const double> cit, double lambda) {
  if (ce.size() != cit.size()) throw ShapeError("combine_gradients: length mismatch");
  std::vector<double> out(ce.size());
  for (std::size_t i = 0; i < ce.size(); ++i) out[i] = combined_loss(ce[i], cit[i], lambda);
  return out;
}

// ---------------------------------------------------------------------------
// Knowledge distillation
// ---------------------------------------------------------------------------

struct KdLoss {
  double value = 0.0;
  std::vector<double> d_student;  // dL / d student_scores
};

/// KL(softmax(teacher/T) || softmax(student/T)) over the candidates of one
/// request. Gradients flow to the student scores only.
inline KdLoss kd_loss(std::span<const double> teacher_scores, std::span<const double> student_scores,
                      double temperature = 1.0) {
  if (teacher_scores.size() != student_scores.size()) {
    throw ShapeError("kd_loss: " + std::to_string(teacher_scores.size()) + " teacher scores vs " +
                     std::to_string(student_scores.size()) + " student scores");
  }
  if (teacher_scores.size() < 2) throw InputError("kd_loss: needs at least two candidates");
  if (!(temperature > 0.0)) throw InputError("kd_loss: temperature must be positive");
  const std::size_t n = teacher_scores.size();
  std::vector<double> t(n), s(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(teacher_scores[i]) || !std::isfinite(student_scores[i])) {
      throw NumericError("kd_loss: non-finite score");
    }
    t[i] = teacher_scores[i] / temperature;
    s[i] = student_scores[i] / temperature;
  }
  const double lt = detail::log_sum_exp(t);
  const double ls = detail::log_sum_exp(s);
  KdLoss out;
  out.d_student.resize(n);
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double log_p = t[i] - lt;
    const double log_q = s[i] - ls;
    const double p = std::exp(log_p);
    kl += p * (log_p - log_q);
    out.d_student[i] = (std::exp(log_q) - p) / temperature;
  }
  // Rounding can leave a tiny negative residue when p == q.
  out.value = std::max(0.0, kl);
  return out;
}

// ---------------------------------------------------------------------------
// Pairwise
// ---------------------------------------------------------------------------

struct PairwiseLoss {
  double value = 0.0;
  double d_pos = 0.0;
  double d_neg = 0.0;
};

/// -ln sigmoid(pos - neg), evaluated as softplus(neg - pos).
inline PairwiseLoss pairwise_loss(double score_pos, double score_neg) {
  if (!std::isfinite(score_pos) || !std::isfinite(score_neg)) throw NumericError("pairwise_loss: non-finite logit");
  const double margin = score_pos - score_neg;
  PairwiseLoss out;
  out.value = margin > 0.0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
  const double g = -sigmoid(-margin);
  out.d_pos = g;
  out.d_neg = -g;
  return out;
}

// ---------------------------------------------------------------------------
// Mutual information
// ---------------------------------------------------------------------------

/// InfoNCE estimate ln(N) - L of the mutual information between the paired
/// representations, for a contrastive loss over N = K + 1 terms.
inline double mi_lower_bound_estimate(double mean_cit_loss, std::size_t n_terms) {
  if (n_terms < 2) throw InputError("mi_lower_bound_estimate: need at least two terms");
  return std::log(static_cast<double>(n_terms)) - mean_cit_loss;
}

}  // namespace cit
