#pragma once

/// \file trainer.hpp
/// Two-phase training. The teacher is trained on click feedback first; the
/// student is then trained against the frozen teacher with
///
///   L = lambda * L_ce + (1 - lambda) * L_transfer
///
/// where the transfer term is the contrastive loss, listwise KD or a pairwise
/// loss depending on the objective. Batches are groups of whole requests, so
/// negatives always come from the anchor's own request.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cit/data.hpp"
#include "cit/error.hpp"
#include "cit/labeling.hpp"
#include "cit/losses.hpp"
#include "cit/metrics.hpp"
#include "cit/models.hpp"
#include "cit/parallel.hpp"
#include "cit/scoring.hpp"
#include "cit/tensor.hpp"

namespace cit {

enum class Objective { ce_only, ce_plus_cit, ce_plus_kd, pairwise };

inline std::string to_string(Objective o) {
  switch (o) {
    case Objective::ce_only: return "ce_only";
    case Objective::ce_plus_cit: return "ce_plus_cit";
    case Objective::ce_plus_kd: return "ce_plus_kd";
    case Objective::pairwise: return "pairwise";
  }
  return "?";
}

inline bool needs_teacher(Objective o) { return o == Objective::ce_plus_cit || o == Objective::ce_plus_kd; }

struct TrainConfig {
  /// Labels for the pointwise and pairwise terms. The contrastive and KD terms
  /// always take their positives from the teacher's top-u.
  LabelScheme scheme = LabelScheme::click;
  Objective objective = Objective::ce_plus_cit;
  double lambda = 0.35;
  double tau = 1.0;
  std::size_t negatives = 50;  // K
  std::size_t u = 20;
  std::size_t epochs = 6;
  std::size_t batch_requests = 8;
  double lr = 5e-3;
  std::uint64_t seed = 1;
  std::size_t early_stop_patience = 3;
  CitVariant cit_variant = CitVariant::standard;
  double kd_temperature = 1.0;
  std::size_t max_anchors = 0;  // 0 = every eligible positive
  std::size_t workers = 1;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline std::vector<std::string> violations(const TrainConfig& c) {
  std::vector<std::string> v;
  if (!(c.lambda >= 0.0 && c.lambda <= 1.0)) v.emplace_back("lambda must lie in [0, 1]");
  if (!(c.tau > 0.0)) v.emplace_back("tau must be positive");
  if (c.negatives == 0) v.emplace_back("negatives (K) must be >= 1");
  if (c.u == 0) v.emplace_back("u must be >= 1");
  if (c.epochs == 0) v.emplace_back("epochs must be >= 1");
  if (c.batch_requests == 0) v.emplace_back("batch_requests must be >= 1");
  if (!(c.lr > 0.0)) v.emplace_back("lr must be positive");
  if (!(c.kd_temperature > 0.0)) v.emplace_back("kd_temperature must be positive");
  if (c.workers == 0) v.emplace_back("workers must be >= 1");
  return v;
}

/// Canonical key=value rendering, used as the checkpoint config echo. The
/// worker count is left out: it never changes results.
inline std::string describe(const TrainConfig& c) {
  std::ostringstream o;
  o.precision(17);
  o << "scheme=" << to_string(c.scheme) << "\nobjective=" << to_string(c.objective) << "\nlambda=" << c.lambda
    << "\ntau=" << c.tau << "\nnegatives=" << c.negatives << "\nu=" << c.u << "\nepochs=" << c.epochs
    << "\nbatch_requests=" << c.batch_requests << "\nlr=" << c.lr << "\nseed=" << c.seed
    << "\nearly_stop_patience=" << c.early_stop_patience
    << "\ncit_variant=" << (c.cit_variant == CitVariant::standard ? "standard" : "literal")
    << "\nkd_temperature=" << c.kd_temperature << "\nmax_anchors=" << c.max_anchors << "\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// Teacher constants
// ---------------------------------------------------------------------------

/// What a frozen teacher contributes to one request. Computed once: the teacher
/// never changes, so neither do these.
struct TeacherView {
  std::vector<double> logits;           // every candidate
  LabelSet top_u;                       // teacher top-u labels over all candidates
  std::vector<std::size_t> positives;   // top-u indices in teacher rank order
  std::vector<std::size_t> negatives;   // the rest, ascending
  Matrix positive_reps;                 // teacher representations, row-aligned with `positives`
};

inline TeacherView teacher_view(const ModelParams& teacher, const Request& r, std::size_t u) {
  if (!teacher.frozen()) throw ContractError("teacher_view: teacher parameters must be frozen");
  const auto f = forward_batch(teacher, request_inputs(teacher.config, r));
  TeacherView tv;
  tv.logits = f.logits();
  tv.top_u = teacher_top_u_labels(tv.logits, u);
  const auto order = rank_descending(tv.logits);
  const std::size_t n_pos = std::min(u, r.size());
  tv.positives.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_pos));
  for (std::size_t i = 0; i < r.size(); ++i)
    if (!tv.top_u.labels[i]) tv.negatives.push_back(i);
  const auto& reps = f.representations();
  tv.positive_reps = Matrix(n_pos, reps.cols());
  for (std::size_t i = 0; i < n_pos; ++i) {
    std::copy_n(reps.row(tv.positives[i]).begin(), reps.cols(), tv.positive_reps.row(i).begin());
  }
  return tv;
}

inline std::vector<TeacherView> teacher_views(const ModelParams& teacher, const Corpus& corpus, std::size_t u,
                                              std::size_t workers) {
  std::vector<TeacherView> views(corpus.size());
  parallel_for(corpus.size(), workers,
               [&](std::size_t i) { views[i] = teacher_view(teacher, corpus.requests[i], u); });
  return views;
}

// ---------------------------------------------------------------------------
// Per-request gradient
// ---------------------------------------------------------------------------

struct RequestGradient {
  Gradients grads;  // empty when no term was active
  double ce_loss = 0.0;
  double transfer_loss = 0.0;
  double total_loss = 0.0;
  bool ce_active = false;
  bool transfer_active = false;
  bool resampled = false;  // a negative draw fell back to sampling with replacement

  bool active() const { return ce_active || transfer_active; }
};

/// Loss and student gradient for one request. `teacher` must be provided for
/// the transfer objectives and for the teacher_top_u scheme.
inline RequestGradient request_gradient(const ModelParams& model, const Request& r, const TeacherView* teacher,
                                        const TrainConfig& cfg, Rng rng) {
  // A transfer term with zero weight is skipped, so lambda = 1 trains exactly
  // like ce_only.
  const bool transfer = cfg.objective != Objective::ce_only && cfg.lambda < 1.0;
  if ((needs_teacher(cfg.objective) || cfg.scheme == LabelScheme::teacher_top_u) && teacher == nullptr) {
    throw InputError("objective " + to_string(cfg.objective) + " with scheme " + to_string(cfg.scheme) +
                     " needs a teacher");
  }
  const double ce_weight = transfer ? cfg.lambda : 1.0;
  const double transfer_weight = 1.0 - cfg.lambda;

  const LabelSet labels = cfg.scheme == LabelScheme::click ? click_labels(r) : teacher->top_u;
  const TrainingPolicy policy = make_policy(r, labels);

  RequestGradient out;
  // Rows of the request that enter the forward pass.
  std::vector<std::uint8_t> needed(r.size(), 0);
  std::vector<std::size_t> ce_rows;
  if (policy.use_ce) {
    for (std::size_t i = 0; i < r.size(); ++i)
      if (labels.eligible[i]) ce_rows.push_back(i);
    out.ce_active = !ce_rows.empty();
    for (auto i : ce_rows) needed[i] = 1;
  }

  struct Anchor {
    std::size_t index;
    std::size_t teacher_row;  // row in TeacherView::positive_reps
    std::vector<std::size_t> negatives;
  };
  std::vector<Anchor> anchors;
  std::vector<std::size_t> kd_members;
  if (cfg.objective == Objective::ce_plus_kd) {
    // KD distils over the candidates the label scheme trains on: displayed
    // items under click labels, every candidate under teacher top-u.
    for (std::size_t i = 0; i < r.size(); ++i)
      if (labels.eligible[i]) kd_members.push_back(i);
    if (kd_members.size() >= 2) {
      for (auto i : kd_members) needed[i] = 1;
      out.transfer_active = true;
    }
  } else if (transfer) {
    std::vector<std::size_t> pos, pool;
    if (cfg.objective == Objective::pairwise) {
      pos = policy.eligible_positive_indices;
      pool = policy.eligible_negative_indices;
    } else {
      pos = teacher->positives;
      pool = teacher->negatives;
    }
    if (cfg.max_anchors > 0 && pos.size() > cfg.max_anchors) pos.resize(cfg.max_anchors);
    if (!pool.empty()) {
      for (std::size_t a = 0; a < pos.size(); ++a) {
        auto draw = sample_negatives(pool, pos[a], cfg.negatives, rng);
        out.resampled |= draw.with_replacement;
        anchors.push_back({pos[a], a, std::move(draw.indices)});
      }
    }
    for (const auto& a : anchors) {
      needed[a.index] = 1;
      for (auto j : a.negatives) needed[j] = 1;
    }
    out.transfer_active = !anchors.empty();
  }
  if (!out.active()) return out;

  std::vector<std::size_t> rows;
  std::vector<std::size_t> row_of(r.size(), 0);
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (needed[i]) {
      row_of[i] = rows.size();
      rows.push_back(i);
    }
  }
  const auto fwd = forward_batch(model, request_inputs(model.config, r, rows));
  const Matrix& reps = fwd.representations();
  std::vector<double> d_logits(rows.size(), 0.0);
  Matrix d_rep;

  double ce_value = 0.0;
  if (out.ce_active) {
    const double scale = 1.0 / static_cast<double>(ce_rows.size());
    for (auto i : ce_rows) {
      const auto l = cross_entropy_logit(fwd.logit(row_of[i]), labels.labels[i]);
      ce_value += l.value * scale;
      d_logits[row_of[i]] += ce_weight * l.grad * scale;
    }
  }

  double transfer_value = 0.0;
  if (out.transfer_active) {
    const double anchor_scale = anchors.empty() ? 0.0 : 1.0 / static_cast<double>(anchors.size());
    switch (cfg.objective) {
      case Objective::ce_plus_cit: {
        d_rep = Matrix(reps.rows(), reps.cols());
        Matrix neg(cfg.negatives, reps.cols());
        for (const auto& a : anchors) {
          neg = Matrix(a.negatives.size(), reps.cols());
          for (std::size_t j = 0; j < a.negatives.size(); ++j) {
            std::copy_n(reps.row(row_of[a.negatives[j]]).begin(), reps.cols(), neg.row(j).begin());
          }
          CitBatch b;
          b.anchor_rep = reps.row(row_of[a.index]);
          b.teacher_rep = teacher->positive_reps.row(a.teacher_row);
          b.negative_reps = &neg;
          b.tau = cfg.tau;
          b.variant = cfg.cit_variant;
          const auto l = cit_loss(b);
          transfer_value += l.value * anchor_scale;
          const double w = transfer_weight * anchor_scale;
          auto dr = d_rep.row(row_of[a.index]);
          for (std::size_t t = 0; t < dr.size(); ++t) dr[t] += w * l.d_anchor[t];
          for (std::size_t j = 0; j < a.negatives.size(); ++j) {
            auto dn = d_rep.row(row_of[a.negatives[j]]);
            for (std::size_t t = 0; t < dn.size(); ++t) dn[t] += w * l.d_negatives(j, t);
          }
        }
        break;
      }
      case Objective::ce_plus_kd: {
        const auto& members = kd_members;
        std::vector<double> t(members.size()), s(members.size());
        for (std::size_t m = 0; m < members.size(); ++m) {
          t[m] = teacher->logits[members[m]];
          s[m] = fwd.logit(row_of[members[m]]);
        }
        const auto l = kd_loss(t, s, cfg.kd_temperature);
        transfer_value = l.value;
        for (std::size_t m = 0; m < members.size(); ++m) {
          d_logits[row_of[members[m]]] += transfer_weight * l.d_student[m];
        }
        break;
      }
      case Objective::pairwise: {
        std::size_t n_pairs = 0;
        for (const auto& a : anchors) n_pairs += a.negatives.size();
        const double scale = 1.0 / static_cast<double>(n_pairs);
        for (const auto& a : anchors) {
          for (auto j : a.negatives) {
            const auto l = pairwise_loss(fwd.logit(row_of[a.index]), fwd.logit(row_of[j]));
            transfer_value += l.value * scale;
            d_logits[row_of[a.index]] += transfer_weight * scale * l.d_pos;
            d_logits[row_of[j]] += transfer_weight * scale * l.d_neg;
          }
        }
        break;
      }
      case Objective::ce_only: break;
    }
  }
  if (!out.active()) return out;

  out.ce_loss = ce_value;
  out.transfer_loss = transfer_value;
  out.total_loss = (out.ce_active ? ce_weight * ce_value : 0.0) +
                   (out.transfer_active ? transfer_weight * transfer_value : 0.0);
  out.grads = backward_batch(model, fwd, d_logits, d_rep);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation helper used for model selection
// ---------------------------------------------------------------------------

/// G-AUC of `scorer` on displayed candidates against click labels.
inline GaucResult click_gauc(const Corpus& split, const Scorer& scorer, std::size_t workers = 1) {
  std::vector<GroupScores> groups(split.size());
  parallel_for(split.size(), workers, [&](std::size_t i) {
    const auto& r = split.requests[i];
    const auto s = scorer(r);
    for (std::size_t k = 0; k < r.size(); ++k) {
      if (!r.candidates[k].displayed) continue;
      groups[i].scores.push_back(s[k]);
      groups[i].labels.push_back(r.candidates[k].clicked ? 1 : 0);
    }
  });
  return gauc(groups);
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double ce_loss = 0.0;
  double transfer_loss = 0.0;
  double valid_gauc = 0.0;
  std::size_t updates = 0;
  std::size_t skipped_requests = 0;  // requests with no active loss term
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochRecord> log;
  double initial_loss = 0.0;  // mean loss of the first batch, before any update
};

/// Optional sink for per-epoch log lines.
using EpochSink = std::function<void(const EpochRecord&)>;

namespace detail {

inline std::uint64_t batch_stream(std::uint64_t epoch, std::uint64_t request_id) {
  return Rng::mix(epoch * 0x100000001B3ULL ^ Rng::mix(request_id));
}

inline std::uint64_t model_fingerprint(const ModelParams& m) {
  Checkpoint c;
  c.model = m;
  return fnv1a(serialize(c));
}

}  // namespace detail

/// Shared loop: shuffled request batches, Adam on every parameter, validation
/// G-AUC after each epoch, best-epoch selection with patience.
inline TrainResult train_loop(ModelParams model, const Corpus& train, const Corpus& valid,
                              const std::vector<TeacherView>* views, const ModelParams* frozen_teacher,
                              const TrainConfig& cfg, const EpochSink& sink) {
  if (auto v = violations(cfg); !v.empty()) throw ConfigError("train config: " + v.front());
  if (train.empty()) throw InputError("training split is empty");
  if (valid.empty()) throw InputError("validation split is empty");
  if (model.frozen()) throw ContractError("cannot train frozen parameters");

  const std::uint64_t teacher_print = frozen_teacher ? detail::model_fingerprint(*frozen_teacher) : 0;
  std::vector<AdamState> opt;
  for (const auto& p : model.params) opt.push_back(AdamState::for_param(p.value, cfg.lr));

  TrainResult res;
  res.checkpoint.config_echo = describe(cfg);
  ModelParams best = model;
  double best_gauc = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t since_best = 0;
  bool first_batch = true;

  std::vector<std::size_t> order(train.size());
  std::vector<RequestGradient> slots;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = Rng(cfg.seed).derive(0xE90C0000ULL + epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.uniform_index(i)]);

    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t contributing = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_requests) {
      const std::size_t n = std::min(cfg.batch_requests, order.size() - start);
      slots.assign(n, {});
      parallel_for(n, cfg.workers, [&](std::size_t b) {
        const std::size_t idx = order[start + b];
        const auto& r = train.requests[idx];
        Rng rng = Rng(cfg.seed).derive(detail::batch_stream(epoch, r.request_id));
        slots[b] = request_gradient(model, r, views ? &(*views)[idx] : nullptr, cfg, rng);
      });
      // Fixed-order reduction.
      Gradients sum;
      std::size_t active = 0;
      double batch_loss = 0.0;
      for (auto& s : slots) {
        if (!s.active()) {
          ++rec.skipped_requests;
          continue;
        }
        if (sum.empty()) {
          sum = std::move(s.grads);
        } else {
          for (std::size_t p = 0; p < sum.size(); ++p)
            for (std::size_t t = 0; t < sum[p].size(); ++t) sum[p][t] += s.grads[p][t];
        }
        ++active;
        batch_loss += s.total_loss;
        rec.loss += s.total_loss;
        rec.ce_loss += s.ce_loss;
        rec.transfer_loss += s.transfer_loss;
      }
      if (active == 0) continue;  // nothing to learn from: no update at all
      if (first_batch) {
        res.initial_loss = batch_loss / static_cast<double>(active);
        first_batch = false;
      }
      const double inv = 1.0 / static_cast<double>(active);
      for (std::size_t p = 0; p < sum.size(); ++p) {
        for (auto& g : sum[p].values()) g *= inv;
        adam_step(model.params[p].value, sum[p], opt[p], model.params[p].name);
      }
      contributing += active;
      ++rec.updates;
    }
    if (contributing > 0) {
      const double inv = 1.0 / static_cast<double>(contributing);
      rec.loss *= inv;
      rec.ce_loss *= inv;
      rec.transfer_loss *= inv;
    }
    if (frozen_teacher && detail::model_fingerprint(*frozen_teacher) != teacher_print) {
      throw ContractError("teacher parameters changed during student training");
    }
    rec.valid_gauc = click_gauc(valid, model_scorer(model), cfg.workers).value;
    res.checkpoint.validation_gauc.push_back(rec.valid_gauc);
    res.log.push_back(rec);
    if (sink) sink(rec);
    if (rec.valid_gauc > best_gauc) {
      best_gauc = rec.valid_gauc;
      best = model;
      best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      break;
    }
  }
  res.checkpoint.model = std::move(best);
  res.checkpoint.epoch = best_epoch;
  return res;
}

inline std::size_t clicked_request_count(const Corpus& c) {
  return static_cast<std::size_t>(
      std::count_if(c.requests.begin(), c.requests.end(), [](const Request& r) { return r.click_count() > 0; }));
}

/// Teacher: pointwise cross-entropy on click labels of displayed items.
inline TrainResult train_teacher(const Corpus& train, const Corpus& valid, const ModelConfig& teacher_config,
                                 const TrainConfig& cfg, const EpochSink& sink = {}) {
  if (clicked_request_count(train) == 0) throw InputError("train_teacher: no request in the corpus has a click");
  TrainConfig tc = cfg;
  tc.objective = Objective::ce_only;
  tc.scheme = LabelScheme::click;
  ModelConfig mc = teacher_config;
  mc.frozen = false;
  Rng init = Rng(cfg.seed).derive(0x7EAC4E5ULL);
  auto res = train_loop(build_model(mc, init), train, valid, nullptr, nullptr, tc, sink);
  res.checkpoint.model.config.frozen = true;
  return res;
}

/// Student under the configured objective. `teacher` may be null only for
/// ce_only/pairwise with the click scheme.
inline TrainResult train_student(const Corpus& train, const Corpus& valid, const Checkpoint* teacher,
                                 const ModelConfig& student_config, const TrainConfig& cfg,
                                 const EpochSink& sink = {}, const std::vector<TeacherView>* cached_views = nullptr) {
  const bool teacher_needed = needs_teacher(cfg.objective) || cfg.scheme == LabelScheme::teacher_top_u;
  if (teacher_needed && teacher == nullptr) {
    throw InputError("train_student: objective " + to_string(cfg.objective) + " requires a trained teacher");
  }
  if (teacher) {
    if (!teacher->model.frozen()) throw ContractError("train_student: teacher checkpoint is not frozen");
    if (teacher->model.config.representation_dim != student_config.representation_dim) {
      throw ShapeError("train_student: student representation_dim " +
                       std::to_string(student_config.representation_dim) + " != teacher representation_dim " +
                       std::to_string(teacher->model.config.representation_dim));
    }
  }
  std::vector<TeacherView> views;
  const std::vector<TeacherView>* v = nullptr;
  if (teacher_needed) {
    if (cached_views) {
      v = cached_views;
    } else {
      views = teacher_views(teacher->model, train, cfg.u, cfg.workers);
      v = &views;
    }
  }
  ModelConfig mc = student_config;
  mc.frozen = false;
  Rng init = Rng(cfg.seed).derive(0x57DE47ULL);
  return train_loop(build_model(mc, init), train, valid, v, teacher ? &teacher->model : nullptr, cfg, sink);
}

// ---------------------------------------------------------------------------
// Two-tower baseline
// ---------------------------------------------------------------------------

struct TowerTrainResult {
  TowerPair towers;
  std::vector<double> validation_gauc;
};

/// Vector-product model trained with cross-entropy on click labels.
inline TowerTrainResult train_vpdm(const Corpus& train, const Corpus& valid, const ModelConfig& query_tower,
                                   const ModelConfig& item_tower, const TrainConfig& cfg) {
  if (query_tower.representation_dim != item_tower.representation_dim) {
    throw ShapeError("train_vpdm: tower output widths differ");
  }
  Rng init = Rng(cfg.seed).derive(0x7D9DULL);
  TowerPair towers{build_model(query_tower, init), build_model(item_tower, init)};
  TowerPair best = towers;
  std::vector<AdamState> oq, oi;
  for (const auto& p : towers.query_tower.params) oq.push_back(AdamState::for_param(p.value, cfg.lr));
  for (const auto& p : towers.item_tower.params) oi.push_back(AdamState::for_param(p.value, cfg.lr));

  TowerTrainResult res;
  double best_gauc = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = Rng(cfg.seed).derive(0xE90C0000ULL + epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.uniform_index(i)]);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_requests) {
      const std::size_t n = std::min(cfg.batch_requests, order.size() - start);
      std::vector<std::pair<Gradients, Gradients>> slots(n);
      parallel_for(n, cfg.workers, [&](std::size_t b) {
        const auto& r = train.requests[order[start + b]];
        std::vector<std::size_t> rows;
        for (std::size_t k = 0; k < r.size(); ++k)
          if (r.candidates[k].displayed) rows.push_back(k);
        if (rows.empty()) return;
        const auto q = encode_tower(towers.query_tower, r.query);
        const std::size_t width = towers.item_tower.config.input_dim();
        Matrix items(rows.size(), width);
        for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(r.item(rows[i]).begin(), width, items.row(i).begin());
        const auto x = forward_batch(towers.item_tower, std::move(items));
        const auto qr = q.representations().row(0);
        const Matrix& xr = x.representations();
        Matrix dq(1, qr.size()), dx(rows.size(), qr.size());
        const double scale = 1.0 / static_cast<double>(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
          const double g = cross_entropy_logit(dot(qr, xr.row(i)), r.candidates[rows[i]].clicked ? 1 : 0).grad * scale;
          for (std::size_t t = 0; t < qr.size(); ++t) {
            dq[t] += g * xr(i, t);
            dx(i, t) = g * qr[t];
          }
        }
        slots[b].first = backward_batch(towers.query_tower, q, std::vector<double>(1, 0.0), dq);
        slots[b].second = backward_batch(towers.item_tower, x, std::vector<double>(rows.size(), 0.0), dx);
      });
      auto reduce_and_step = [&](ModelParams& m, std::vector<AdamState>& opt, bool query) {
        Gradients sum = m.zero_gradients();
        std::size_t active = 0;
        for (auto& s : slots) {
          auto& g = query ? s.first : s.second;
          if (g.empty()) continue;
          ++active;
          for (std::size_t p = 0; p < sum.size(); ++p)
            for (std::size_t t = 0; t < sum[p].size(); ++t) sum[p][t] += g[p][t];
        }
        if (active == 0) return;
        for (std::size_t p = 0; p < sum.size(); ++p) {
          for (auto& g : sum[p].values()) g /= static_cast<double>(active);
          adam_step(m.params[p].value, sum[p], opt[p], m.params[p].name);
        }
      };
      reduce_and_step(towers.query_tower, oq, true);
      reduce_and_step(towers.item_tower, oi, false);
    }
    const double g = click_gauc(valid, tower_scorer(towers), cfg.workers).value;
    res.validation_gauc.push_back(g);
    if (g > best_gauc) {
      best_gauc = g;
      best = towers;
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      break;
    }
  }
  res.towers = std::move(best);
  return res;
}

}  // namespace cit
