#pragma once

// Command line front end: pretrain | distill | eval | dimbound.
// A flat `key=value` file given with --config supplies defaults for the
// long options of the chosen subcommand; explicit flags override it.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mulde/checkpoint.hpp"
#include "mulde/dimbound.hpp"
#include "mulde/distill.hpp"
#include "mulde/error.hpp"
#include "mulde/eval.hpp"
#include "mulde/keyvalue.hpp"
#include "mulde/kgdata.hpp"
#include "mulde/models.hpp"

namespace mulde::cli {

inline constexpr const char* kVersion = "1.0.0";

struct RunConfig {
  std::string data;
  std::string kind = "RotH";
  std::size_t dim = 64;
  std::size_t k = 300;
  double alpha = 0.1;
  double lambda = 0.0;
  double lr = 0.001;
  std::size_t negatives = 50;
  std::size_t epochs = 100;
  std::size_t batch_size = 512;
  std::uint64_t seed = 42;
  std::string filter_scope = "full";
  std::string ties = "pessimistic";
  std::string out;
  std::size_t threads = default_threads();
  std::size_t eval_every = 1;
  double gamma0 = 1.0;
  double gamma_growth = 1.1;
  std::string candidates = "topk";
  bool no_contrast_attention = false;
  bool no_relation_scaling = false;
  bool no_biases = false;
  bool global_curvature = false;
  bool direct_ball = false;
  bool skip_self_test = false;
  bool off_grid = false;
  std::vector<std::string> teachers;
  std::vector<std::string> checkpoints;
  std::string split = "test";
  std::string ranks;
  // dimbound
  double num_entities = 0.0;
  double num_relations = 0.0;
  std::size_t nodes = 200000;
  std::vector<std::size_t> d_values{8, 16, 32, 64, 128};
  double epsilon = dimbound::kReferenceEpsilon;
};

namespace detail {

template <class T>
void check_grid(const std::string& name, T value, std::initializer_list<T> grid, bool off_grid) {
  if (off_grid) return;
  for (T g : grid) {
    if (value == g) return;
  }
  std::ostringstream msg;
  msg << name << "=" << value << " is outside the search grid {";
  bool first = true;
  for (T g : grid) {
    msg << (first ? "" : ", ") << g;
    first = false;
  }
  msg << "}; pass --off-grid to override";
  throw ConfigError(msg.str());
}

inline DistillConfig to_distill_config(const RunConfig& rc) {
  DistillConfig c;
  c.k = rc.k;
  c.alpha = rc.alpha;
  c.negatives = rc.negatives;
  c.lambda = rc.lambda;
  c.lr = rc.lr;
  c.epochs = rc.epochs;
  c.batch_size = rc.batch_size;
  c.seed = rc.seed;
  c.gamma0 = rc.gamma0;
  c.gamma_growth = rc.gamma_growth;
  if (rc.candidates == "topk") {
    c.candidates = CandidateMode::kTopK;
  } else if (rc.candidates == "random") {
    c.candidates = CandidateMode::kRandom;
  } else {
    throw ConfigError("candidates must be topk or random");
  }
  c.contrast_attention = !rc.no_contrast_attention;
  c.relation_scaling = !rc.no_relation_scaling;
  c.threads = rc.threads;
  c.eval_every = rc.eval_every;
  c.ties = parse_tie_mode(rc.ties);
  c.valid_scope = parse_filter_scope(rc.filter_scope);
  c.model_options.biases = !rc.no_biases;
  c.model_options.global_curvature = rc.global_curvature;
  c.model_options.direct_ball = rc.direct_ball;
  c.self_test = !rc.skip_self_test;
  return c;
}

inline std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

inline std::string fmt_double(double x) {
  std::ostringstream o;
  o << std::setprecision(17) << x;
  return o.str();
}

// Everything needed to rerun the command bit-for-bit with the same binary.
inline KeyValues snapshot(const std::string& command, const RunConfig& rc) {
  KeyValues kv;
  kv["command"] = command;
  kv["binary-version"] = kVersion;
  kv["data"] = rc.data;
  kv["kind"] = rc.kind;
  kv["dim"] = std::to_string(rc.dim);
  kv["lr"] = fmt_double(rc.lr);
  kv["negatives"] = std::to_string(rc.negatives);
  kv["lambda"] = fmt_double(rc.lambda);
  kv["epochs"] = std::to_string(rc.epochs);
  kv["batch-size"] = std::to_string(rc.batch_size);
  kv["seed"] = std::to_string(rc.seed);
  kv["filter-scope"] = rc.filter_scope;
  kv["ties"] = rc.ties;
  kv["threads"] = std::to_string(rc.threads);
  kv["eval-every"] = std::to_string(rc.eval_every);
  kv["no-biases"] = rc.no_biases ? "true" : "false";
  kv["global-curvature"] = rc.global_curvature ? "true" : "false";
  kv["direct-ball"] = rc.direct_ball ? "true" : "false";
  kv["off-grid"] = rc.off_grid ? "true" : "false";
  if (command == "distill") {
    kv["K"] = std::to_string(rc.k);
    kv["alpha"] = fmt_double(rc.alpha);
    kv["gamma0"] = fmt_double(rc.gamma0);
    kv["gamma-growth"] = fmt_double(rc.gamma_growth);
    kv["candidates"] = rc.candidates;
    kv["no-contrast-attention"] = rc.no_contrast_attention ? "true" : "false";
    kv["no-relation-scaling"] = rc.no_relation_scaling ? "true" : "false";
    kv["teacher"] = join(rc.teachers);
  }
  return kv;
}

inline void add_training_options(CLI::App* sub, RunConfig& rc) {
  sub->add_option("--data", rc.data, "Directory with train.txt, valid.txt, test.txt")->required();
  sub->add_option("--kind", rc.kind, "Model kind: TransH DistH RotH RefH TransE_ DistE_ RotE_ RefE_");
  sub->add_option("--dim", rc.dim, "Embedding dimension");
  sub->add_option("--lr", rc.lr, "Adam learning rate");
  sub->add_option("--negatives", rc.negatives, "Negative samples per query");
  sub->add_option("--lambda", rc.lambda, "L2 coefficient");
  sub->add_option("--epochs", rc.epochs, "Training epochs");
  sub->add_option("--batch-size", rc.batch_size, "Queries per optimizer step");
  sub->add_option("--seed", rc.seed, "Seed for every random stream");
  sub->add_option("--filter-scope", rc.filter_scope, "Validation filter: full | train-only");
  sub->add_option("--ties", rc.ties, "Tie handling: pessimistic | optimistic | mean");
  sub->add_option("--out", rc.out, "Output directory")->required();
  sub->add_option("--threads", rc.threads, "Worker threads");
  sub->add_option("--eval-every", rc.eval_every, "Validate every N epochs (0 = never)");
  sub->add_flag("--no-biases", rc.no_biases, "Disable entity biases");
  sub->add_flag("--global-curvature", rc.global_curvature, "Share one curvature across relations");
  sub->add_flag("--direct-ball", rc.direct_ball, "Store entity points directly in the ball");
  sub->add_flag("--skip-self-test", rc.skip_self_test, "Skip the startup gradient check");
  sub->add_flag("--off-grid", rc.off_grid, "Allow hyperparameters outside the search grids");
}

// Expands --config FILE into `--key=value` tokens placed before the user's
// own arguments, so later (explicit) values win.
inline std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::string config_path;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (config_path.empty()) return args;
  const KeyValues kv = read_key_values(config_path);
  // rest[0] is the program name, rest[1] the subcommand.
  out.push_back(rest.empty() ? std::string("mulde") : rest[0]);
  if (rest.size() > 1) out.push_back(rest[1]);
  for (const auto& [k, v] : kv) {
    // Descriptive keys written into run-config snapshots.
    if (k == "command" || k == "binary-version") continue;
    out.push_back("--" + k + "=" + v);
  }
  for (std::size_t i = 2; i < rest.size(); ++i) out.push_back(rest[i]);
  return out;
}

inline void write_log_line(std::ofstream& log, const EpochRecord& rec) {
  log << rec.to_json().dump() << '\n';
  log.flush();
}

inline Dataset load_augmented(const std::string& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("dataset directory not found: " + dir);
  return add_reciprocals(load_dataset(dir));
}

inline int cmd_pretrain(const RunConfig& rc, std::ostream& out) {
  const ModelKind kind = ModelKind::parse(rc.kind);
  check_grid<std::size_t>("dim", rc.dim, {64, 128, 256, 512}, rc.off_grid);
  check_grid("lr", rc.lr, {0.0005, 0.001, 0.005}, rc.off_grid);
  check_grid<std::size_t>("negatives", rc.negatives, {8, 50, 255}, rc.off_grid);
  const DistillConfig cfg = to_distill_config(rc);
  const Dataset data = load_augmented(rc.data);

  std::filesystem::create_directories(rc.out);
  write_key_values(std::filesystem::path(rc.out) / "run-config", snapshot("pretrain", rc));
  dump_vocab(data.vocab, std::filesystem::path(rc.out) / "vocab");
  std::ofstream log(std::filesystem::path(rc.out) / "metrics.jsonl");
  auto res = pretrain_teacher(kind, rc.dim, data, cfg, [&log](const EpochRecord& r) { write_log_line(log, r); });
  save_checkpoint(std::filesystem::path(rc.out) / "checkpoint", res.best);
  nlohmann::json summary{{"kind", kind.name()},
                         {"dim", rc.dim},
                         {"best_epoch", res.best_epoch},
                         {"best_valid_MRR", res.best_valid_mrr >= 0 ? nlohmann::json(res.best_valid_mrr) : nullptr},
                         {"checkpoint", (std::filesystem::path(rc.out) / "checkpoint").string()}};
  out << summary.dump() << '\n';
  return 0;
}

inline TeacherEnsemble load_ensemble(const std::vector<std::string>& paths) {
  TeacherEnsemble ens;
  for (const auto& p : paths) ens.teachers.push_back(load_checkpoint(p).model);
  return ens;
}

inline int cmd_distill(const RunConfig& rc, std::ostream& out) {
  if (rc.teachers.empty()) throw ConfigError("distill needs at least one --teacher checkpoint");
  const ModelKind kind = ModelKind::parse(rc.kind);
  check_grid<std::size_t>("dim", rc.dim, {8, 16, 32, 64}, rc.off_grid);
  check_grid<std::size_t>("K", rc.k, {100, 300, 500}, rc.off_grid);
  check_grid("alpha", rc.alpha, {0.01, 0.1, 0.5}, rc.off_grid);
  check_grid("lr", rc.lr, {0.0005, 0.001, 0.005}, rc.off_grid);
  check_grid<std::size_t>("negatives", rc.negatives, {8, 50, 255}, rc.off_grid);
  const DistillConfig cfg = to_distill_config(rc);
  const Dataset data = load_augmented(rc.data);
  const TeacherEnsemble ens = load_ensemble(rc.teachers);
  ens.check_compatible(data.vocab);

  std::filesystem::create_directories(rc.out);
  write_key_values(std::filesystem::path(rc.out) / "run-config", snapshot("distill", rc));
  std::ofstream log(std::filesystem::path(rc.out) / "metrics.jsonl");
  auto res = train_mulde(cfg, kind, rc.dim, ens, data, [&log](const EpochRecord& r) { write_log_line(log, r); });
  save_checkpoint(std::filesystem::path(rc.out) / "checkpoint", res.best, &res.senior.w_rel);
  nlohmann::json summary{{"kind", kind.name()},
                         {"dim", rc.dim},
                         {"teachers", ens.size()},
                         {"best_epoch", res.best_epoch},
                         {"best_valid_MRR", res.best_valid_mrr >= 0 ? nlohmann::json(res.best_valid_mrr) : nullptr},
                         {"checkpoint", (std::filesystem::path(rc.out) / "checkpoint").string()}};
  out << summary.dump() << '\n';
  return 0;
}

inline int cmd_eval(const RunConfig& rc, std::ostream& out) {
  if (rc.checkpoints.empty()) throw ConfigError("eval needs at least one --checkpoint");
  const Dataset data = load_augmented(rc.data);
  const TeacherEnsemble ens = load_ensemble(rc.checkpoints);
  ens.check_compatible(data.vocab);
  const std::vector<Triple>* split = nullptr;
  if (rc.split == "test") {
    split = &data.test;
  } else if (rc.split == "valid") {
    split = &data.valid;
  } else if (rc.split == "train") {
    split = &data.train;
  } else {
    throw ConfigError("split must be train, valid or test");
  }
  const FilterIndex filter = build_filter(data, parse_filter_scope(rc.filter_scope));
  const Scorer scorer = ens.size() == 1 ? model_scorer(ens.teachers[0]) : ensemble_scorer(ens);
  const Metrics m = evaluate(scorer, *split, filter, data.vocab.num_entities(),
                             {.ties = parse_tie_mode(rc.ties), .threads = rc.threads});
  auto j = m.to_json();
  j["split"] = rc.split;
  j["filter_scope"] = rc.filter_scope;
  j["ties"] = rc.ties;
  j["models"] = ens.size();
  out << j.dump() << '\n';
  if (!rc.ranks.empty()) {
    std::ofstream dump(rc.ranks);
    write_rank_dump(dump, *split, m, data.vocab);
    if (!dump) throw DataError("failed writing rank dump " + rc.ranks);
  }
  if (!rc.out.empty()) {
    std::ofstream f(rc.out);
    f << j.dump(2) << '\n';
    if (!f) throw DataError("failed writing " + rc.out);
  }
  return 0;
}

inline int cmd_dimbound(const RunConfig& rc, std::ostream& out) {
  double n_e = rc.num_entities;
  double n_r = rc.num_relations;
  if (!rc.data.empty()) {
    if (!std::filesystem::is_directory(rc.data)) throw ConfigError("dataset directory not found: " + rc.data);
    const Dataset d = load_dataset(rc.data);
    n_e = static_cast<double>(d.vocab.num_entities());
    n_r = static_cast<double>(d.vocab.num_base_relations());
  }
  if (!(n_e >= 1.0) || !(n_r >= 1.0)) throw ConfigError("dimbound needs --Ne and --Nr >= 1, or --data");
  dimbound::BoundParams reference;
  reference.epsilon = rc.epsilon;
  const double log_n = dimbound::log_pair_count(n_e, n_r);
  const double reference_bound = dimbound::min_dimension(n_e, n_r, reference);

  out << "N_e\tN_r\tlog_N\tbound_reference_alpha\tsign\teps_hat\tR2\talpha_fitted\tbound_fitted_alpha\n";
  for (auto sign : {dimbound::Sign::kPositive, dimbound::Sign::kNegative}) {
    const auto fit = dimbound::fit_epsilon(rc.d_values, n_e, n_r, rc.nodes, sign);
    dimbound::BoundParams fitted;
    fitted.epsilon = fit.epsilon();
    out << std::setprecision(10) << n_e << '\t' << n_r << '\t' << std::setprecision(6) << log_n << '\t'
        << reference_bound << '\t' << dimbound::to_string(sign) << '\t' << std::setprecision(6) << fit.epsilon()
        << '\t' << std::setprecision(10) << fit.line.r2 << '\t' << std::setprecision(6) << fit.alpha() << '\t'
        << dimbound::min_dimension(n_e, n_r, fitted) << '\n';
  }
  return 0;
}

}  // namespace detail

// Entry point shared by the executable and the tests. Returns the exit code.
inline int run(const std::vector<std::string>& raw_args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  RunConfig rc;
  CLI::App app{"Knowledge-graph embedding training with multi-teacher distillation", "mulde"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  auto* pretrain = app.add_subcommand("pretrain", "Train a teacher (or baseline) model with hard labels");
  detail::add_training_options(pretrain, rc);

  auto* distill = app.add_subcommand("distill", "Distill teacher checkpoints into a low-dimensional student");
  detail::add_training_options(distill, rc);
  distill->add_option("--teacher", rc.teachers, "Teacher checkpoint directory (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
      ->delimiter(',');
  distill->add_option("--K", rc.k, "Candidates per query");
  distill->add_option("--alpha", rc.alpha, "Soft/hard label balance");
  distill->add_option("--gamma0", rc.gamma0, "Initial contrast-attention temperature");
  distill->add_option("--gamma-growth", rc.gamma_growth, "Per-epoch temperature growth factor");
  distill->add_option("--candidates", rc.candidates, "Candidate selection: topk | random");
  distill->add_flag("--no-contrast-attention", rc.no_contrast_attention, "Fuse teachers with equal weights");
  distill->add_flag("--no-relation-scaling", rc.no_relation_scaling, "Disable the relation-specific scaling");

  auto* eval = app.add_subcommand("eval", "Filtered link-prediction metrics for one model or an additive ensemble");
  eval->add_option("--data", rc.data, "Dataset directory")->required();
  eval->add_option("--checkpoint", rc.checkpoints, "Checkpoint directory (repeat for an ensemble)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
      ->delimiter(',');
  eval->add_option("--split", rc.split, "train | valid | test");
  eval->add_option("--filter-scope", rc.filter_scope, "full | train-only");
  eval->add_option("--ties", rc.ties, "pessimistic | optimistic | mean");
  eval->add_option("--ranks", rc.ranks, "Write per-query ranks as TSV");
  eval->add_option("--out", rc.out, "Also write the metrics JSON to this file");
  eval->add_option("--threads", rc.threads, "Worker threads");

  auto* dimb = app.add_subcommand("dimbound", "Minimum embedding dimension estimate");
  dimb->add_option("--Ne", rc.num_entities, "Number of entities");
  dimb->add_option("--Nr", rc.num_relations, "Number of relations");
  dimb->add_option("--data", rc.data, "Read N_e and N_r from a dataset directory");
  dimb->add_option("--nodes", rc.nodes, "Quadrature nodes");
  dimb->add_option("--d-values", rc.d_values, "Dimensions used for the slope fit")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
      ->delimiter(',');
  dimb->add_option("--epsilon", rc.epsilon, "Slope constant for the reference bound");

  try {
    auto args = detail::expand_config(raw_args);
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e, out, err);
      return code == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
    }
    if (pretrain->parsed()) return detail::cmd_pretrain(rc, out);
    if (distill->parsed()) return detail::cmd_distill(rc, out);
    if (eval->parsed()) return detail::cmd_eval(rc, out);
    if (dimb->parsed()) return detail::cmd_dimbound(rc, out);
    return static_cast<int>(ExitCode::kUsage);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kData);
  }
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace mulde::cli
