#pragma once

/// \file cli.hpp
/// Command-line front end. Subcommands share one flag set: --config, --seed,
/// --workers, --out, path overrides and one override per TrainConfig field.
/// Exit codes: 0 success, 1 invalid config or runtime failure, 2 usage error.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "cit/ablation.hpp"
#include "cit/cascade.hpp"
#include "cit/config.hpp"
#include "cit/data.hpp"
#include "cit/evaluation.hpp"
#include "cit/models.hpp"
#include "cit/trainer.hpp"

namespace cit::cli {

using json = nlohmann::ordered_json;

struct Override {
  std::string section;
  std::string key;
  std::string value;
};

struct Invocation {
  std::string config_path;
  std::vector<Override> overrides;
};

/// Thrown when the assembled configuration breaks invariants; carries all of them.
struct InvalidConfig : std::runtime_error {
  std::vector<std::string> problems;
  explicit InvalidConfig(std::vector<std::string> p) : std::runtime_error("invalid configuration"), problems(std::move(p)) {}
};

inline void add_shared_flags(CLI::App& sub, Invocation& inv) {
  sub.add_option("--config", inv.config_path, "Config file (key = value lines with [sections])");
  auto route = [&sub, &inv](const std::string& flag, std::vector<std::pair<std::string, std::string>> targets,
                            const std::string& help) {
    sub.add_option_function<std::string>(
        flag,
        [&inv, targets](const std::string& v) {
          for (const auto& [section, key] : targets) inv.overrides.push_back({section, key, v});
        },
        help);
  };
  route("--seed", {{"data", "seed"}, {"train", "seed"}}, "Seed for data generation and training");
  route("--workers", {{"train", "workers"}}, "Worker threads (results do not depend on it)");
  route("--out", {{"paths", "out"}}, "Output directory");
  route("--data", {{"paths", "data"}}, "Dataset file (default <out>/dataset.txt)");
  route("--teacher", {{"paths", "teacher"}}, "Teacher checkpoint (default <out>/teacher.ckpt)");
  route("--student", {{"paths", "student"}}, "Student checkpoint (default <out>/student.ckpt)");
  route("--n-requests", {{"data", "n_requests"}}, "Requests to generate");
  route("--scheme", {{"train", "scheme"}}, "click | teacher_top_u");
  route("--objective", {{"train", "objective"}}, "ce_only | ce_plus_cit | ce_plus_kd | pairwise");
  route("--lambda", {{"train", "lambda"}}, "Weight of the CE term, in [0, 1]");
  route("--tau", {{"train", "tau"}}, "Contrastive temperature");
  route("--negatives", {{"train", "negatives"}}, "Negatives per anchor (K)");
  route("--u", {{"train", "u"}, {"cascade", "u"}}, "Pre-ranking output size");
  route("--k", {{"cascade", "k"}}, "Final list size");
  route("--epochs", {{"train", "epochs"}}, "Maximum epochs");
  route("--batch-requests", {{"train", "batch_requests"}}, "Requests per update");
  route("--lr", {{"train", "lr"}}, "Adam learning rate");
  route("--patience", {{"train", "early_stop_patience"}}, "Early-stopping patience in epochs");
  route("--cit-variant", {{"train", "cit_variant"}}, "standard | literal");
  route("--kd-temperature", {{"train", "kd_temperature"}}, "KD softmax temperature");
  route("--max-anchors", {{"train", "max_anchors"}}, "Cap on anchors per request (0 = all)");
}

/// Config file (or defaults), then flag overrides, then validation.
inline RunConfig resolve_config(const Invocation& inv) {
  std::vector<std::string> problems;
  RunConfig c = inv.config_path.empty() ? RunConfig{} : load_config(inv.config_path, problems);
  for (const auto& o : inv.overrides) {
    if (auto err = set_config_value(c, o.section, o.key, o.value); !err.empty()) problems.push_back(err);
  }
  for (auto& v : violations(c)) problems.push_back(std::move(v));
  if (!problems.empty()) throw InvalidConfig(std::move(problems));
  return c;
}

// ---------------------------------------------------------------------------
// Report helpers
// ---------------------------------------------------------------------------

inline json report_header(const RunConfig& c, const std::string& command) {
  json j;
  j["command"] = command;
  j["seed"] = c.train.seed;
  j["data_seed"] = c.data.seed;
  j["config_hash"] = config_hash(c);
  return j;
}

inline json metrics_json(const EvalReport& r) {
  json m;
  m["gauc"] = r.metrics.gauc;
  m["ndcg_at_k"] = r.metrics.ndcg_at_k;
  m["recall_at_u"] = r.metrics.recall_at_u;
  m["end_ndcg_at_k"] = r.cascade.mean_end_ndcg_at_k;
  m["consistency_recall"] = r.cascade.mean_consistency_recall;
  return m;
}

inline json epoch_json(const EpochRecord& e) {
  json j;
  j["epoch"] = e.epoch;
  j["loss"] = e.loss;
  j["ce_loss"] = e.ce_loss;
  j["transfer_loss"] = e.transfer_loss;
  j["valid_gauc"] = e.valid_gauc;
  j["updates"] = e.updates;
  j["skipped_requests"] = e.skipped_requests;
  return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("failed writing " + path.string());
}

inline void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

/// Training log: one JSON object per line, written as each epoch finishes.
class TrainingLog {
 public:
  TrainingLog(const std::filesystem::path& path, std::string phase) : phase_(std::move(phase)) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw DataError("cannot write " + path.string());
  }
  EpochSink sink() {
    return [this](const EpochRecord& e) {
      json train;
      train["phase"] = phase_;
      train["split"] = "train";
      const json fields = epoch_json(e);
      for (const auto& [k, v] : fields.items())
        if (k != "valid_gauc") train[k] = v;
      json valid;
      valid["phase"] = phase_;
      valid["split"] = "valid";
      valid["epoch"] = e.epoch;
      valid["gauc"] = e.valid_gauc;
      out_ << train.dump() << '\n' << valid.dump() << '\n';
      out_.flush();
    };
  }

 private:
  std::string phase_;
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Pipeline steps
// ---------------------------------------------------------------------------

inline Corpus load_matching_dataset(const RunConfig& c) {
  auto corpus = load_dataset(c.paths.data_path());
  if (corpus.query_dim != c.data.query_dim || corpus.item_dim != c.data.item_dim) {
    throw DataError("dataset dims (" + std::to_string(corpus.query_dim) + ", " + std::to_string(corpus.item_dim) +
                    ") do not match config (" + std::to_string(c.data.query_dim) + ", " +
                    std::to_string(c.data.item_dim) + ")");
  }
  return corpus;
}

inline Splits load_splits(const RunConfig& c) {
  return partition_dataset(load_matching_dataset(c), c.split.train, c.split.valid, c.split.test, c.data.n_days);
}

inline EvalOptions eval_options(const RunConfig& c) {
  EvalOptions o;
  o.cascade = c.cascade;
  o.workers = c.train.workers;
  return o;
}

inline int cmd_gen_data(const RunConfig& c, std::ostream& out) {
  const auto corpus = generate_corpus(c.data, c.train.workers);
  write_dataset(c.paths.data_path(), corpus);
  std::size_t clicks = 0, zero = 0;
  for (const auto& r : corpus.requests) {
    clicks += r.click_count();
    zero += r.click_count() == 0 ? 1 : 0;
  }
  auto j = report_header(c, "gen-data");
  j["n_requests"] = corpus.size();
  j["clicks_per_request"] = corpus.empty() ? 0.0 : static_cast<double>(clicks) / static_cast<double>(corpus.size());
  j["zero_click_fraction"] = corpus.empty() ? 0.0 : static_cast<double>(zero) / static_cast<double>(corpus.size());
  write_json(std::filesystem::path(c.paths.out) / "gen_report.json", j);
  out << "wrote " << corpus.size() << " requests to " << c.paths.data_path() << '\n';
  return 0;
}

inline int cmd_train_teacher(const RunConfig& c, std::ostream& out) {
  const auto splits = load_splits(c);
  TrainingLog log(std::filesystem::path(c.paths.out) / "teacher_log.jsonl", "teacher");
  auto res = train_teacher(splits.train, splits.valid, c.teacher_model(), c.train, log.sink());
  save_checkpoint(c.paths.teacher_path(), res.checkpoint);
  auto j = report_header(c, "train-teacher");
  j["best_epoch"] = res.checkpoint.epoch;
  j["validation_gauc"] = res.checkpoint.validation_gauc;
  write_json(std::filesystem::path(c.paths.out) / "teacher_report.json", j);
  out << "teacher: best epoch " << res.checkpoint.epoch << ", validation G-AUC "
      << res.checkpoint.validation_gauc.at(res.checkpoint.epoch - 1) << ", saved to " << c.paths.teacher_path()
      << '\n';
  return 0;
}

inline std::optional<Checkpoint> teacher_if_needed(const RunConfig& c, bool always) {
  const bool needed =
      always || needs_teacher(c.train.objective) || c.train.scheme == LabelScheme::teacher_top_u;
  if (!needed) return std::nullopt;
  return load_checkpoint(c.paths.teacher_path());
}

inline int cmd_train_student(const RunConfig& c, std::ostream& out) {
  const auto teacher = teacher_if_needed(c, false);
  const auto splits = load_splits(c);
  TrainingLog log(std::filesystem::path(c.paths.out) / "student_log.jsonl", "student");
  auto res = train_student(splits.train, splits.valid, teacher ? &*teacher : nullptr, c.student_model(), c.train,
                           log.sink());
  save_checkpoint(c.paths.student_path(), res.checkpoint);
  auto j = report_header(c, "train-student");
  j["objective"] = to_string(c.train.objective);
  j["scheme"] = to_string(c.train.scheme);
  j["best_epoch"] = res.checkpoint.epoch;
  j["validation_gauc"] = res.checkpoint.validation_gauc;
  write_json(std::filesystem::path(c.paths.out) / "student_report.json", j);
  out << "student (" << to_string(c.train.objective) << "): best epoch " << res.checkpoint.epoch
      << ", validation G-AUC " << res.checkpoint.validation_gauc.at(res.checkpoint.epoch - 1) << ", saved to "
      << c.paths.student_path() << '\n';
  return 0;
}

inline int cmd_eval(const RunConfig& c, std::ostream& out) {
  const auto student = load_checkpoint(c.paths.student_path());
  const auto teacher = load_checkpoint(c.paths.teacher_path());
  const auto splits = load_splits(c);
  const auto rep =
      evaluate_model(splits.test, model_scorer(student.model), model_scorer(teacher.model), eval_options(c));
  auto j = report_header(c, "eval");
  j["split"] = "test";
  j["k"] = c.cascade.k;
  j["u"] = c.cascade.u;
  j["n_requests_evaluated"] = rep.metrics.n_requests_evaluated;
  j["n_requests_skipped"] = rep.metrics.n_requests_skipped;
  j["metrics"] = metrics_json(rep);
  write_json(std::filesystem::path(c.paths.out) / "eval_report.json", j);
  out << format_table({{"student", rep.metrics}});
  out << "end NDCG@" << c.cascade.k << " " << rep.cascade.mean_end_ndcg_at_k << ", consistency recall "
      << rep.cascade.mean_consistency_recall << '\n';
  return 0;
}

inline int cmd_cascade_eval(const RunConfig& c, std::ostream& out) {
  const auto student = load_checkpoint(c.paths.student_path());
  const auto teacher = load_checkpoint(c.paths.teacher_path());
  const auto splits = load_splits(c);
  const auto rep = evaluate_cascade(splits.test, student.model, teacher.model, c.cascade, c.train.workers);
  auto j = report_header(c, "cascade-eval");
  j["v"] = c.cascade.v;
  j["u"] = c.cascade.u;
  j["k"] = c.cascade.k;
  j["n_requests"] = rep.n_requests;
  j["mean_end_ndcg_at_k"] = rep.mean_end_ndcg_at_k;
  j["mean_consistency_recall"] = rep.mean_consistency_recall;
  json rows = json::array();
  for (const auto& r : rep.per_request) {
    rows.push_back({{"request_id", r.request_id},
                    {"end_ndcg_at_k", r.end_ndcg_at_k},
                    {"consistency_recall", r.consistency_recall}});
  }
  j["per_request"] = std::move(rows);
  write_json(std::filesystem::path(c.paths.out) / "cascade_report.json", j);
  out << "cascade v=" << c.cascade.v << " u=" << c.cascade.u << " k=" << c.cascade.k << ": end NDCG@" << c.cascade.k
      << " " << rep.mean_end_ndcg_at_k << ", consistency recall " << rep.mean_consistency_recall << " over "
      << rep.n_requests << " requests\n";
  return 0;
}

inline int cmd_ablate(const RunConfig& c, std::ostream& out) {
  const auto teacher = load_checkpoint(c.paths.teacher_path());
  const auto splits = load_splits(c);
  const auto rows = run_ablation(splits, teacher, c.student_model(), c.train, eval_options(c));
  auto j = report_header(c, "ablate");
  j["scheme"] = to_string(c.train.scheme);
  json arr = json::array();
  for (const auto& r : rows) {
    json row;
    row["objective"] = to_string(r.objective);
    row["metrics"] = metrics_json(r.report);
    json log = json::array();
    for (const auto& e : r.log) log.push_back(epoch_json(e));
    row["log"] = std::move(log);
    arr.push_back(std::move(row));
  }
  j["rows"] = std::move(arr);
  write_json(std::filesystem::path(c.paths.out) / "ablation_report.json", j);
  out << format_ablation(rows);
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run_cli(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Contrastive transfer from a ranking model to a pre-ranking model", "cit"};
  app.require_subcommand(1, 1);
  Invocation inv;
  using Command = int (*)(const RunConfig&, std::ostream&);
  const std::vector<std::tuple<std::string, std::string, Command>> commands{
      {"gen-data", "Generate a synthetic click-log dataset", cmd_gen_data},
      {"train-teacher", "Train the ranking model (teacher) on click labels", cmd_train_teacher},
      {"train-student", "Train the pre-ranking model (student) against the frozen teacher", cmd_train_student},
      {"eval", "Offline metrics of a student on the test split", cmd_eval},
      {"cascade-eval", "Two-stage cascade: student top-u, teacher top-k", cmd_cascade_eval},
      {"ablate", "Train and compare ce_only, ce_plus_kd, pairwise and ce_plus_cit", cmd_ablate},
  };
  std::vector<std::pair<CLI::App*, Command>> subs;
  for (const auto& [name, help, fn] : commands) {
    auto* sub = app.add_subcommand(name, help);
    add_shared_flags(*sub, inv);
    subs.emplace_back(sub, fn);
  }

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    auto* used = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << used->help();
    return 2;
  }

  try {
    const RunConfig cfg = resolve_config(inv);
    for (const auto& [sub, fn] : subs) {
      if (sub->parsed()) return fn(cfg, out);
    }
    err << app.help();
    return 2;
  } catch (const InvalidConfig& e) {
    err << "error: invalid configuration (" << e.problems.size() << " problem"
        << (e.problems.size() == 1 ? "" : "s") << ")\n";
    for (const auto& p : e.problems) err << "  - " << p << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

inline int run_cli(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(std::move(args), out, err);
}

}  // namespace cit::cli
