#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "mulde/cli.hpp"
#include "support/toy_kg.hpp"

namespace {

using namespace mulde;
namespace fs = std::filesystem;

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "mulde");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) {
    if (!l.empty()) out.push_back(l);
  }
  return out;
}

// Toy dataset on disk shared by the tests in this file.
const fs::path& data_dir() {
  static const fs::path dir = [] {
    auto d = testkit::scratch_dir("cli_data");
    testkit::write_dataset(testkit::compositional_kg(5, 4, 1), d);
    return d;
  }();
  return dir;
}

std::vector<std::string> pretrain_args(const fs::path& out, const std::string& kind, const std::string& seed = "1") {
  return {"pretrain", "--data",   data_dir().string(), "--out",    out.string(), "--kind",      kind,
          "--dim",    "8",        "--epochs",          "3",        "--seed",     seed,          "--negatives",
          "5",        "--batch-size", "16",            "--lr",     "0.01",       "--off-grid", "--threads", "1"};
}

const std::vector<fs::path>& teacher_dirs() {
  static const std::vector<fs::path> dirs = [] {
    std::vector<fs::path> out;
    std::size_t seed = 11;
    for (const char* k : {"TransH", "DistH", "RotH", "RefH"}) {
      auto dir = testkit::scratch_dir(std::string("cli_teacher_") + k);
      const auto r = cli(pretrain_args(dir, k, std::to_string(seed++)));
      EXPECT_EQ(r.code, 0) << r.err;
      out.push_back(dir / "checkpoint");
    }
    return out;
  }();
  return dirs;
}

TEST(Cli, HelpExitsZero) {
  EXPECT_EQ(cli({"--help"}).code, 0);
  EXPECT_EQ(cli({"pretrain", "--help"}).code, 0);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({"dimbound", "--bogus", "1"}).code, 2);
  EXPECT_EQ(cli({"pretrain", "--data", data_dir().string()}).code, 2);
}

TEST(Cli, MissingDatasetNamesThePath) {
  const auto r = cli({"pretrain", "--data", "/no/such/dataset", "--out", "/tmp/mulde_cli_unused", "--off-grid"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("/no/such/dataset"), std::string::npos) << r.err;
}

TEST(Cli, MissingSplitFileNamesThePath) {
  const auto dir = testkit::scratch_dir("cli_partial");
  fs::copy_file(data_dir() / "train.txt", dir / "train.txt");
  const auto r = cli({"pretrain", "--data", dir.string(), "--out", (dir / "o").string(), "--off-grid"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("valid.txt"), std::string::npos) << r.err;
}

TEST(Cli, MalformedDataExitsThree) {
  const auto dir = testkit::scratch_dir("cli_malformed");
  std::ofstream(dir / "train.txt") << "a\tb\n";
  std::ofstream(dir / "valid.txt") << "";
  std::ofstream(dir / "test.txt") << "";
  const auto r = cli({"pretrain", "--data", dir.string(), "--out", (dir / "o").string(), "--off-grid"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("train.txt:1"), std::string::npos) << r.err;
}

TEST(Cli, GridIsEnforcedUnlessOverridden) {
  const auto out = testkit::scratch_dir("cli_grid");
  auto args = pretrain_args(out, "RotH");
  args.erase(std::find(args.begin(), args.end(), "--off-grid"));
  const auto r = cli(args);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--off-grid"), std::string::npos) << r.err;
}

TEST(Cli, PretrainWritesAllOutputs) {
  const auto out = testkit::scratch_dir("cli_pretrain");
  const auto r = cli(pretrain_args(out, "RotH"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(out / "checkpoint" / "manifest"));
  EXPECT_TRUE(fs::exists(out / "run-config"));
  EXPECT_TRUE(fs::exists(out / "vocab" / "entities.tsv"));
  EXPECT_TRUE(fs::exists(out / "vocab" / "relations.tsv"));
  const auto log = lines(slurp(out / "metrics.jsonl"));
  ASSERT_EQ(log.size(), 3u);
  const auto j = nlohmann::json::parse(log.back());
  for (const char* key : {"epoch", "loss_J", "loss_S", "valid_MRR", "valid_hits1", "valid_hits10", "gamma"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  const auto summary = nlohmann::json::parse(r.out);
  EXPECT_EQ(summary["kind"], "RotH");
}

TEST(Cli, PretrainIsDeterministic) {
  const auto a = testkit::scratch_dir("cli_det_a"), b = testkit::scratch_dir("cli_det_b");
  ASSERT_EQ(cli(pretrain_args(a, "RefH")).code, 0);
  ASSERT_EQ(cli(pretrain_args(b, "RefH")).code, 0);
  EXPECT_EQ(slurp(a / "metrics.jsonl"), slurp(b / "metrics.jsonl"));
  EXPECT_EQ(slurp(a / "checkpoint" / "entity.bin"), slurp(b / "checkpoint" / "entity.bin"));
}

TEST(Cli, RunConfigSnapshotReproducesTheRun) {
  const auto a = testkit::scratch_dir("cli_snap_a"), b = testkit::scratch_dir("cli_snap_b");
  ASSERT_EQ(cli(pretrain_args(a, "DistH")).code, 0);
  const auto r = cli({"pretrain", "--config", (a / "run-config").string(), "--out", b.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(a / "metrics.jsonl"), slurp(b / "metrics.jsonl"));
  EXPECT_EQ(slurp(a / "checkpoint" / "entity.bin"), slurp(b / "checkpoint" / "entity.bin"));
  EXPECT_EQ(slurp(a / "run-config"), slurp(b / "run-config"));
}

TEST(Cli, CommandLineOverridesConfigFile) {
  const auto out = testkit::scratch_dir("cli_override");
  std::ofstream(out / "cfg") << "# toy run\nkind=TransE_\ndim=8\nepochs=5\nnegatives=5\noff-grid=true\n";
  const auto r = cli({"pretrain", "--config", (out / "cfg").string(), "--data", data_dir().string(), "--out",
                      (out / "o").string(), "--epochs", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(slurp(out / "o" / "metrics.jsonl")).size(), 2u);
  EXPECT_NE(slurp(out / "o" / "run-config").find("kind=TransE_"), std::string::npos);
}

TEST(Cli, MissingConfigFileExitsTwo) {
  const auto r = cli({"pretrain", "--config", "/no/such/cfg"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("/no/such/cfg"), std::string::npos);
}

std::vector<std::string> distill_args(const fs::path& out, std::size_t n_teachers) {
  std::vector<std::string> a{"distill", "--data", data_dir().string(), "--out", out.string(), "--kind", "RotH",
                             "--dim", "4", "--epochs", "2", "--K", "6", "--negatives", "5", "--batch-size", "16",
                             "--lr", "0.01", "--off-grid"};
  for (std::size_t i = 0; i < n_teachers; ++i) {
    a.push_back("--teacher");
    a.push_back(teacher_dirs()[i].string());
  }
  return a;
}

TEST(Cli, DistillWithFourTeachers) {
  const auto out = testkit::scratch_dir("cli_distill4");
  const auto r = cli(distill_args(out, 4));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ck = load_checkpoint(out / "checkpoint");
  EXPECT_EQ(ck.model.dim, 4u);
  ASSERT_TRUE(ck.w_rel.has_value());
  EXPECT_EQ(ck.w_rel->cols, 4u);
  EXPECT_EQ(lines(slurp(out / "metrics.jsonl")).size(), 2u);
  EXPECT_NE(slurp(out / "run-config").find("teacher="), std::string::npos);
}

TEST(Cli, DistillWithOneTeacher) {
  const auto out = testkit::scratch_dir("cli_distill1");
  const auto r = cli(distill_args(out, 1));
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST(Cli, DistillWithoutTeachersIsAConfigError) {
  const auto out = testkit::scratch_dir("cli_distill0");
  const auto r = cli(distill_args(out, 0));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("teacher"), std::string::npos);
}

TEST(Cli, DistillRefusesForeignTeacher) {
  const auto other = testkit::scratch_dir("cli_other_data");
  testkit::write_dataset(testkit::compositional_kg(6, 4, 1), other);
  const auto out = testkit::scratch_dir("cli_foreign");
  auto args = distill_args(out, 1);
  args[2] = other.string();
  const auto r = cli(args);
  EXPECT_EQ(r.code, 3);
  const auto data = load_dataset(other);
  const auto teacher = load_checkpoint(teacher_dirs()[0]).model;
  EXPECT_NE(r.err.find(std::to_string(data.vocab.hash())), std::string::npos) << r.err;
  EXPECT_NE(r.err.find(std::to_string(teacher.vocab_hash)), std::string::npos) << r.err;
}

TEST(Cli, DistillNonFiniteTeacherExitsFour) {
  const auto bad = testkit::scratch_dir("cli_nan_teacher");
  auto m = load_checkpoint(teacher_dirs()[0]).model;
  m.bias_tail.values.assign(m.bias_tail.size(), std::nan(""));
  save_checkpoint(bad, m);
  const auto out = testkit::scratch_dir("cli_nan_out");
  auto args = distill_args(out, 0);
  args.push_back("--teacher");
  args.push_back(bad.string());
  const auto r = cli(args);
  EXPECT_EQ(r.code, 4) << r.err;
}

TEST(Cli, EvalPrintsMetricsJson) {
  const auto r = cli({"eval", "--data", data_dir().string(), "--checkpoint", teacher_dirs()[2].string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  for (const char* key : {"mrr", "hits@1", "hits@3", "hits@10", "n_queries"}) EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["models"], 1);
}

TEST(Cli, EvalEnsembleMatchesLibraryPath) {
  const auto dir = testkit::scratch_dir("cli_eval_ens");
  std::vector<std::string> args{"eval", "--data", data_dir().string(), "--split", "valid", "--ranks",
                                (dir / "ranks.tsv").string(), "--out", (dir / "metrics.json").string()};
  for (const auto& t : teacher_dirs()) {
    args.push_back("--checkpoint");
    args.push_back(t.string());
  }
  const auto r = cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);

  const Dataset d = add_reciprocals(load_dataset(data_dir()));
  TeacherEnsemble ens;
  for (const auto& t : teacher_dirs()) ens.teachers.push_back(load_checkpoint(t).model);
  const auto want = evaluate(ensemble_scorer(ens), d.valid, build_filter(d, FilterScope::kFull),
                             d.vocab.num_entities());
  EXPECT_DOUBLE_EQ(j["mrr"].get<double>(), want.mrr);
  EXPECT_DOUBLE_EQ(j["hits@10"].get<double>(), want.hits10);
  EXPECT_EQ(j["models"], 4);
  EXPECT_EQ(lines(slurp(dir / "ranks.tsv")).size(), d.valid.size());
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "metrics.json"))["n_queries"], d.valid.size());
}

TEST(Cli, EvalRejectsUnknownVersion) {
  const auto dir = testkit::scratch_dir("cli_bad_version");
  fs::copy(teacher_dirs()[0], dir, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  auto kv = read_key_values(dir / "manifest");
  kv["format-version"] = "7";
  write_key_values(dir / "manifest", kv);
  const auto r = cli({"eval", "--data", data_dir().string(), "--checkpoint", dir.string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("format-version 7"), std::string::npos) << r.err;
}

TEST(Cli, EvalRejectsCorruptCheckpoint) {
  const auto dir = testkit::scratch_dir("cli_corrupt");
  fs::copy(teacher_dirs()[1], dir, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  fs::resize_file(dir / "entity.bin", 8);
  EXPECT_EQ(cli({"eval", "--data", data_dir().string(), "--checkpoint", dir.string()}).code, 3);
}

double bound_column(const std::string& table, std::size_t row, std::size_t col) {
  const auto ls = lines(table);
  std::istringstream in(ls.at(row + 1));
  std::string field;
  for (std::size_t i = 0; i <= col; ++i) std::getline(in, field, '\t');
  return std::stod(field);
}

TEST(Cli, DimboundTrivialCounts) {
  const auto r = cli({"dimbound", "--Ne", "1", "--Nr", "1", "--nodes", "20000"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(bound_column(r.out, 0, 3), 0.0);
  EXPECT_EQ(lines(r.out).size(), 3u);
}

TEST(Cli, DimboundKnownDatasets) {
  const auto wn = cli({"dimbound", "--Ne", "40943", "--Nr", "11", "--nodes", "20000"});
  ASSERT_EQ(wn.code, 0) << wn.err;
  EXPECT_NEAR(bound_column(wn.out, 0, 3), 50.2, 0.05);
  EXPECT_NEAR(bound_column(wn.out, 0, 5), -0.4703, 5e-4);
  EXPECT_NEAR(bound_column(wn.out, 1, 5), -0.4703, 5e-4);
  const auto db = cli({"dimbound", "--Ne", "4e8", "--Nr", "6000", "--nodes", "20000"});
  ASSERT_EQ(db.code, 0) << db.err;
  EXPECT_LT(bound_column(db.out, 0, 3), 128.0);
  EXPECT_LT(bound_column(db.out, 0, 8), 128.0);
}

TEST(Cli, DimboundReadsCountsFromData) {
  const auto r = cli({"dimbound", "--data", data_dir().string(), "--nodes", "20000", "--d-values", "8,16,32"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(bound_column(r.out, 0, 0), 20.0);
  EXPECT_EQ(bound_column(r.out, 0, 1), 4.0);
}

TEST(Cli, DimboundNeedsCounts) { EXPECT_EQ(cli({"dimbound"}).code, 2); }

}  // namespace
