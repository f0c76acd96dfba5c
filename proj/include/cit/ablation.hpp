#pragma once

/// \file ablation.hpp
/// Objective comparison on identical data and seeds: one student per
/// objective, all evaluated against the same frozen teacher.

#include <string>
#include <utility>
#include <vector>

#include "cit/evaluation.hpp"
#include "cit/trainer.hpp"

namespace cit {

struct AblationRow {
  Objective objective = Objective::ce_only;
  EvalReport report;
  std::vector<EpochRecord> log;
  Checkpoint checkpoint;
};

inline const std::vector<Objective>& ablation_objectives() {
  static const std::vector<Objective> all{Objective::ce_only, Objective::ce_plus_kd, Objective::pairwise,
                                          Objective::ce_plus_cit};
  return all;
}

/// Trains one student per objective in `objectives` (all four by default) with
/// every other setting taken from `base`, and evaluates each on the test split.
inline std::vector<AblationRow> run_ablation(const Splits& splits, const Checkpoint& teacher,
                                             const ModelConfig& student_config, const TrainConfig& base,
                                             const EvalOptions& eval,
                                             const std::vector<Objective>& objectives = ablation_objectives()) {
  const auto views = teacher_views(teacher.model, splits.train, base.u, base.workers);
  const auto teacher_scores = model_scorer(teacher.model);
  std::vector<AblationRow> rows;
  for (auto objective : objectives) {
    TrainConfig cfg = base;
    cfg.objective = objective;
    auto trained = train_student(splits.train, splits.valid, &teacher, student_config, cfg, {}, &views);
    AblationRow row;
    row.objective = objective;
    row.report = evaluate_model(splits.test, model_scorer(trained.checkpoint.model), teacher_scores, eval);
    row.log = std::move(trained.log);
    row.checkpoint = std::move(trained.checkpoint);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::vector<std::pair<std::string, MetricsReport>> table;
  for (const auto& r : rows) table.emplace_back(to_string(r.objective), r.report.metrics);
  return format_table(table);
}

}  // namespace cit
