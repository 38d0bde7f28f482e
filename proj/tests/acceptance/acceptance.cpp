// Acceptance suite: one PASS/FAIL/SKIP line per criterion, exit status 1 if
// any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mulde/mulde.hpp"
#include "support/oracles.hpp"
#include "support/toy_kg.hpp"

namespace {

using namespace mulde;
using Clock = std::chrono::steady_clock;

int failures = 0;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void report(int id, const char* name, bool ok, const std::string& detail) {
  std::printf("%s  %d. %s: %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

void skip(int id, const char* name, const std::string& why) {
  std::printf("SKIP  %d. %s: %s\n", id, name, why.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Property suite: the property tests of the unit binaries, run by filter.

struct PropertyGroup {
  const char* binary;
  const char* filter;
};

void property_suite() {
  const std::vector<PropertyGroup> groups{
      {MULDE_MANIFOLD_TEST, "Mobius.*:Distance.*:Expmap.*:Projection.*:Seeds/VjpTest.*"},
      {MULDE_MODELS_TEST,
       "Score.ReflectionIsAnInvolution:Score.RotationAndReflectionPreserveNorms:"
       "Score.RotationPreservesDistancesOnTheBall:AllKinds/ScoreGradTest.*"},
      {MULDE_DISTILL_TEST,
       "Divergence.*:SoftLoss.NonNegative:SoftLoss.ZeroForEqualInputs:Attention.WeightsArePositiveAndNormalized:"
       "Attention.EqualDivergencesGiveUniformFusion:RelationScale.PreservesWithinRowOrder:AllKinds/LossGradTest.*:"
       "LossGrad.*:HardLoss.NonNegative"},
      {MULDE_EVAL_TEST, "Evaluate.InvariantUnderMonotoneTransform:Evaluate.MatchesBruteForceRanks"},
      {MULDE_OPTIM_TEST, "L2.GradientPassesGradCheck:GradCheck.*"},
  };
  const auto t0 = Clock::now();
  const auto report_path = std::filesystem::temp_directory_path() / "mulde_acceptance_properties.json";
  std::size_t passed = 0, tests = 0;
  std::string failed;
  for (const auto& g : groups) {
    std::filesystem::remove(report_path);
    const std::string cmd = std::string("\"") + g.binary + "\" --gtest_brief=1 --gtest_filter='" + g.filter +
                            "' --gtest_output=json:" + report_path.string() + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    std::size_t ran = 0;
    if (std::ifstream in(report_path); in) ran = nlohmann::json::parse(in).value("tests", std::size_t{0});
    tests += ran;
    if (status == 0 && ran > 0) {
      ++passed;
    } else {
      failed += std::string(" ") + std::filesystem::path(g.binary).filename().string();
    }
  }
  const double secs = seconds_since(t0);
  report(1, "property suite", passed == groups.size() && secs < 300.0,
         fmt("%zu/%zu groups green, %zu tests, %.1fs (limit 300s)%s%s", passed, groups.size(), tests, secs,
             failed.empty() ? "" : "; failing:", failed.c_str()));
}

// ---------------------------------------------------------------------------
// 2. Oracle equivalence on a 20-entity / 3-relation graph.

ModelState scrambled(const char* kind, const Vocab& v, std::uint64_t seed) {
  auto m = init_model(ModelKind::parse(kind), 4, v, seed);
  Rng rng(seed);
  for (auto& nt : m.tables()) {
    for (double& x : nt.table->values) x = 0.4 * (2.0 * rng.uniform() - 1.0);
  }
  for (double& x : m.curvature.values) x = poincare::inverse_softplus(1.0);
  return m;
}

void oracle_equivalence() {
  const auto t0 = Clock::now();
  std::size_t checks = 0, mismatches = 0;
  double max_first_principles = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Dataset d = add_reciprocals(testkit::random_kg(20, 3, 60, seed));
    const std::size_t n = d.vocab.num_entities();
    TeacherEnsemble ens;
    std::uint64_t s = 100 * seed;
    for (const char* k : {"TransH", "DistH", "RotH", "RefH"}) ens.teachers.push_back(scrambled(k, d.vocab, ++s));
    const ModelState& junior = ens.teachers[2];

    std::vector<Triple> known = d.train;
    known.insert(known.end(), d.valid.begin(), d.valid.end());
    known.insert(known.end(), d.test.begin(), d.test.end());
    const FilterIndex filter = build_filter(d, FilterScope::kFull);

    std::vector<EntityId> all(n);
    for (EntityId e = 0; e < n; ++e) all[e] = e;

    const auto metrics = evaluate(model_scorer(junior), d.test, filter, n);
    for (std::size_t i = 0; i < d.test.size(); ++i) {
      const Triple& q = d.test[i];
      std::vector<double> s1(n);
      for (EntityId e = 0; e < n; ++e) s1[e] = score(junior, q.head, q.rel, std::vector<EntityId>{e}).scores[0];
      for (std::size_t k : {1, 5, 20}) {
        ++checks;
        if (topk_candidates(junior, q.head, q.rel, k).ids != oracle::topk(s1, k)) ++mismatches;
      }
      const auto want = static_cast<double>(oracle::filtered_rank(s1, q, known));
      ++checks;
      if (rank_filtered(s1, q.tail, filter.tails(q.head, q.rel)) != want) ++mismatches;
      ++checks;
      if (metrics.ranks[i] != want) ++mismatches;
    }

    const auto ens_metrics = evaluate(ensemble_scorer(ens), d.test, filter, n);
    for (std::size_t i = 0; i < d.test.size(); ++i) {
      const Triple& q = d.test[i];
      const auto fused = ensemble_score(ens, q.head, q.rel, all);
      std::vector<double> brute(n, 0.0);
      for (const auto& t : ens.teachers) {
        for (EntityId e = 0; e < n; ++e) {
          const double one = score(t, q.head, q.rel, std::vector<EntityId>{e}).scores[0];
          brute[e] += one;
          max_first_principles = std::max(max_first_principles, std::abs(one - oracle::triple_score(t, q.head, q.rel, e)));
        }
      }
      ++checks;
      if (fused != brute) ++mismatches;
      ++checks;
      if (ens_metrics.ranks[i] != static_cast<double>(oracle::filtered_rank(brute, q, known))) ++mismatches;
    }
  }
  const double secs = seconds_since(t0);
  report(2, "oracle equivalence", mismatches == 0 && max_first_principles < 1e-9 && secs < 300.0,
         fmt("%zu exact comparisons, %zu mismatches; per-triple scores vs first-principles oracle max |diff| %.1e; "
             "%.1fs (limit 300s)",
             checks, mismatches, max_first_principles, secs));
}

// ---------------------------------------------------------------------------
// 3. Distillation direction on a 200-entity compositional graph.

struct DirectionRun {
  double ensemble = 0.0, mulde = 0.0, hard = 0.0, random = 0.0;
};

DirectionRun direction_run(std::uint64_t seed) {
  // 20 x 10 grid of entities; 300 random false triples are mixed into train.
  const Dataset d = add_reciprocals(testkit::compositional_kg(20, 10, seed, 0.2, 300));
  DistillConfig tcfg;
  tcfg.negatives = 20;
  tcfg.epochs = 100;
  tcfg.batch_size = 64;
  tcfg.lr = 0.01;
  tcfg.eval_every = 0;
  tcfg.threads = 1;
  tcfg.seed = 100 * seed;
  TeacherEnsemble ens;
  for (const char* k : {"TransH", "DistH", "RotH", "RefH"}) {
    tcfg.seed += 1;
    ens.teachers.push_back(pretrain_teacher(ModelKind::parse(k), 32, d, tcfg).last);
  }
  DirectionRun r;
  r.ensemble = evaluate(ensemble_scorer(ens), d.valid, build_filter(d, FilterScope::kFull), d.vocab.num_entities()).mrr;

  DistillConfig scfg = tcfg;
  scfg.epochs = 30;
  scfg.eval_every = 5;
  scfg.k = 30;
  scfg.alpha = 0.5;
  scfg.seed = 7 * seed;
  const auto kind = ModelKind::parse("RotH");
  r.mulde = train_mulde(scfg, kind, 8, ens, d).best_valid_mrr;
  r.hard = pretrain_teacher(kind, 8, d, scfg).best_valid_mrr;
  scfg.candidates = CandidateMode::kRandom;
  r.random = train_mulde(scfg, kind, 8, ens, d).best_valid_mrr;
  return r;
}

void distillation_direction() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto r = direction_run(seed);
    ok = ok && r.mulde > r.hard && r.mulde > r.random;
    detail += fmt("seed %llu: distilled %.4f, hard-only %.4f, random-candidate %.4f (teachers %.4f); ",
                  static_cast<unsigned long long>(seed), r.mulde, r.hard, r.random, r.ensemble);
  }
  const double secs = seconds_since(t0);
  report(3, "distillation direction", ok && secs < 1800.0, detail + fmt("%.1fs (limit 1800s)", secs));
}

// ---------------------------------------------------------------------------
// 4. Dimension bound.

void dimension_bound() {
  const auto t0 = Clock::now();
  // N_e^2 N_r = e^30.
  const double ne = std::exp(15.0), nr = 1.0;
  const double bound = dimbound::min_dimension(ne, nr);
  const std::vector<std::size_t> dims{8, 16, 32, 64, 128};
  const auto pos = dimbound::fit_epsilon(dims, ne, nr, 200000, dimbound::Sign::kPositive);
  const auto neg = dimbound::fit_epsilon(dims, ne, nr, 200000, dimbound::Sign::kNegative);
  auto within = [](double eps) { return std::abs(eps - dimbound::kReferenceEpsilon) <= 0.15 * std::abs(dimbound::kReferenceEpsilon); };
  const double secs = seconds_since(t0);
  const bool ok = bound > 63.0 && bound < 65.0 && pos.line.r2 > 0.999 && neg.line.r2 > 0.999 && secs < 120.0;
  report(4, "dimension bound", ok,
         fmt("bound(e^30) = %.4f in (63, 65); exp(+D): eps_hat %.6f, R2 %.10f, %s; exp(-D): eps_hat %.6f, "
             "R2 %.10f, %s; bound with fitted alpha %.4f; %.1fs (limit 120s)",
             bound, pos.epsilon(), pos.line.r2, within(pos.epsilon()) ? "within 15% of -0.471" : "outside 15% of -0.471",
             neg.epsilon(), neg.line.r2, within(neg.epsilon()) ? "within 15% of -0.471" : "outside 15% of -0.471",
             30.0 * pos.alpha(), secs));
}

// ---------------------------------------------------------------------------
// 5 and 6. WN18RR runs; need the dataset directory in MULDE_WN18RR_DIR.

DistillConfig wn18rr_config(std::uint64_t seed) {
  DistillConfig c;
  c.k = 300;
  c.alpha = 0.1;
  c.negatives = 50;
  c.lr = 0.001;
  c.epochs = 100;
  c.batch_size = 512;
  c.seed = seed;
  c.threads = default_threads();
  return c;
}

TeacherEnsemble wn18rr_teachers(const Dataset& d) {
  TeacherEnsemble ens;
  std::uint64_t seed = 42;
  for (const char* k : {"TransH", "DistH", "RotH", "RefH"}) {
    ens.teachers.push_back(pretrain_teacher(ModelKind::parse(k), 64, d, wn18rr_config(++seed)).best);
  }
  return ens;
}

void wn18rr_reproduction(const Dataset& d, const TeacherEnsemble& ens) {
  const auto t0 = Clock::now();
  const FilterIndex filter = build_filter(d, FilterScope::kFull);
  const std::size_t n = d.vocab.num_entities();
  const auto teachers = evaluate(ensemble_scorer(ens), d.test, filter, n);
  const auto kind = ModelKind::parse("RotH");
  const auto student = train_mulde(wn18rr_config(7), kind, 32, ens, d).best;
  const auto baseline = pretrain_teacher(kind, 32, d, wn18rr_config(7)).best;
  const auto sm = evaluate(model_scorer(student), d.test, filter, n);
  const auto bm = evaluate(model_scorer(baseline), d.test, filter, n);
  auto near = [](double x, double want) { return std::abs(x - want) <= 0.02; };
  const bool ok = near(teachers.hits10, 0.581) && near(sm.mrr, 0.481) && near(sm.hits10, 0.574) &&
                  near(sm.hits1, 0.433) && sm.mrr > bm.mrr;
  report(5, "WN18RR reproduction", ok,
         fmt("teacher ensemble Hits@10 %.4f (0.581 +/- 0.02); student MRR %.4f (0.481), Hits@10 %.4f (0.574), "
             "Hits@1 %.4f (0.433); hard-label 32d MRR %.4f; %.0fs",
             teachers.hits10, sm.mrr, sm.hits10, sm.hits1, bm.mrr, seconds_since(t0)));
}

void convergence_speed(const Dataset& d, const TeacherEnsemble& ens) {
  const auto t0 = Clock::now();
  auto cfg = wn18rr_config(7);
  cfg.epochs = 10;
  cfg.eval_every = 10;
  const auto kind = ModelKind::parse("RotH");
  const auto with = train_mulde(cfg, kind, 32, ens, d).log.back().valid.hits1;
  cfg.contrast_attention = false;
  const auto without = train_mulde(cfg, kind, 32, ens, d).log.back().valid.hits1;
  report(6, "convergence speed", with >= without,
         fmt("epoch-10 valid Hits@1 with contrast attention %.4f, without %.4f; %.0fs", with, without,
             seconds_since(t0)));
}

}  // namespace

int main() {
  try {
    property_suite();
    oracle_equivalence();
    distillation_direction();
    dimension_bound();
    const char* wn = std::getenv("MULDE_WN18RR_DIR");
    if (wn == nullptr || *wn == '\0') {
      skip(5, "WN18RR reproduction", "optional; set MULDE_WN18RR_DIR to a WN18RR directory to run");
      skip(6, "convergence speed", "optional; set MULDE_WN18RR_DIR to a WN18RR directory to run");
    } else {
      const Dataset d = add_reciprocals(load_dataset(wn));
      const auto ens = wn18rr_teachers(d);
      wn18rr_reproduction(d, ens);
      convergence_speed(d, ens);
    }
  } catch (const std::exception& e) {
    std::printf("FAIL  acceptance run aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%s: %d failing criteria\n", failures == 0 ? "ACCEPTED" : "REJECTED", failures);
  return failures == 0 ? 0 : 1;
}
