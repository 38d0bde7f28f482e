#pragma once

// Multi-teacher distillation of a low-dimensional scoring model.
//
// Per training query (head, rel, target):
//   1. the Junior scores every entity and keeps its top K candidates C_top;
//   2. each frozen teacher scores exactly C_top (S_T, m x K);
//   3. the Senior scales teacher rows by sigmoid(W_Rel[rel, i]) and fuses them
//      with contrast attention into soft labels L_top;
//   4. Junior loss = alpha * KL(softmax(L_top) || softmax(S_top)) + (1 - alpha) * BCE
//      over the target and sampled negatives; Senior loss = cross entropy of
//      the summed scaled rows against the target position in C_top;
//   5. one Adam step over Junior parameters and W_Rel on the summed loss plus L2.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "mulde/error.hpp"
#include "mulde/eval.hpp"
#include "mulde/kgdata.hpp"
#include "mulde/manifold.hpp"
#include "mulde/models.hpp"
#include "mulde/optim.hpp"
#include "mulde/parallel.hpp"
#include "mulde/table.hpp"

namespace mulde {

// Frozen pre-trained models sharing one vocabulary.
struct TeacherEnsemble {
  std::vector<ModelState> teachers;

  std::size_t size() const noexcept { return teachers.size(); }
  bool empty() const noexcept { return teachers.empty(); }

  void check_compatible(const Vocab& vocab) const {
    for (const auto& t : teachers) {
      if (t.vocab_hash != vocab.hash() || t.num_entities != vocab.num_entities() ||
          t.num_relations != vocab.num_relations()) {
        throw VocabError("teacher " + t.kind.name() + " was trained on a different vocabulary (hash " +
                         std::to_string(t.vocab_hash) + ", " + std::to_string(t.num_entities) + "x" +
                         std::to_string(t.num_relations) + ") than the dataset (hash " +
                         std::to_string(vocab.hash()) + ", " + std::to_string(vocab.num_entities()) + "x" +
                         std::to_string(vocab.num_relations()) + ")");
      }
    }
  }
};

enum class CandidateMode { kTopK, kRandom };

struct DistillConfig {
  std::size_t k = 300;
  double alpha = 0.1;
  std::size_t negatives = 50;
  double lambda = 0.0;
  double lr = 0.001;
  std::size_t epochs = 100;
  std::size_t batch_size = 512;
  std::uint64_t seed = 42;
  double gamma0 = 1.0;
  double gamma_growth = 1.1;
  CandidateMode candidates = CandidateMode::kTopK;
  bool contrast_attention = true;
  bool relation_scaling = true;
  std::size_t threads = 1;
  // Validation every `eval_every` epochs; 0 disables validation.
  std::size_t eval_every = 1;
  TieMode ties = TieMode::kPessimistic;
  FilterScope valid_scope = FilterScope::kFull;
  ModelOptions model_options;
  // Run the analytic-vs-numeric gradient check before training.
  bool self_test = false;

  void validate(std::size_t num_entities, bool distilling) const {
    if (distilling && (k == 0 || k > num_entities)) {
      throw ConfigError("K must be in [1, N_e=" + std::to_string(num_entities) + "], got " + std::to_string(k));
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    if (negatives >= num_entities) throw ConfigError("negatives must be smaller than N_e");
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (!(gamma0 > 0.0)) throw ConfigError("gamma0 must be positive");
    if (!(gamma_growth > 1.0)) throw ConfigError("gamma growth must exceed 1");
    if (threads == 0) throw ConfigError("threads must be positive");
  }
};

inline double gamma_schedule(std::size_t epoch, double gamma0, double growth) {
  if (!(gamma0 > 0.0) || !(growth > 1.0)) throw ConfigError("gamma schedule needs gamma0 > 0 and growth > 1");
  return gamma0 * std::pow(growth, static_cast<double>(epoch));
}

struct SeniorState {
  Table w_rel;  // N_r x m, unconstrained; scale = sigmoid(w)
  double gamma0 = 1.0;
  double gamma_growth = 1.1;
  std::size_t epoch = 0;

  SeniorState() = default;
  SeniorState(std::size_t num_relations, std::size_t num_teachers, double g0 = 1.0, double growth = 1.1)
      : w_rel(num_relations, num_teachers), gamma0(g0), gamma_growth(growth) {}

  double gamma() const { return gamma_schedule(epoch, gamma0, gamma_growth); }
};

namespace detail {

inline double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  const double mx = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double v : x) s += std::exp(v - mx);
  return mx + std::log(s);
}

inline std::vector<double> log_softmax(std::span<const double> x) {
  const double lse = log_sum_exp(x);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
  return out;
}

inline std::vector<double> softmax(std::span<const double> x) {
  auto out = log_softmax(x);
  for (double& v : out) v = std::exp(v);
  return out;
}

// KL(softmax(p_logits) || softmax(q_logits)).
inline double kl_logits(std::span<const double> p_logits, std::span<const double> q_logits) {
  const auto lp = log_softmax(p_logits);
  const auto lq = log_softmax(q_logits);
  double kl = 0.0;
  for (std::size_t k = 0; k < lp.size(); ++k) {
    const double p = std::exp(lp[k]);
    if (p > 0.0) kl += p * (lp[k] - lq[k]);
  }
  return std::max(kl, 0.0);
}

}  // namespace detail

// Indices of the k largest scores, ordered by score descending then id ascending.
inline std::vector<EntityId> topk_from_scores(std::span<const double> scores, std::size_t k) {
  std::vector<EntityId> idx(scores.size());
  std::iota(idx.begin(), idx.end(), EntityId{0});
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&scores](EntityId a, EntityId b) {
                      return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
                    });
  idx.resize(k);
  return idx;
}

struct CandidateSet {
  std::vector<EntityId> ids;
  std::vector<double> scores;
};

inline CandidateSet topk_candidates(const ModelState& junior, EntityId head, RelationId rel, std::size_t k) {
  if (k > junior.num_entities) throw ConfigError("K exceeds the number of entities");
  std::vector<double> all(junior.num_entities);
  score_all(junior, head, rel, all);
  CandidateSet c;
  c.ids = topk_from_scores(all, k);
  c.scores.reserve(k);
  for (EntityId e : c.ids) c.scores.push_back(all[e]);
  return c;
}

// m x K matrix; row i holds teacher i's scores on exactly `candidates`.
inline Table teacher_scores(const TeacherEnsemble& ensemble, EntityId head, RelationId rel,
                            std::span<const EntityId> candidates) {
  Table s(ensemble.size(), candidates.size());
  for (std::size_t i = 0; i < ensemble.size(); ++i) score_into(ensemble.teachers[i], head, rel, candidates, s.row(i));
  return s;
}

// Row i multiplied by sigmoid(W_Rel[rel, i]).
inline Table relation_scale(const Table& teacher_rows, const SeniorState& senior, RelationId rel) {
  if (rel >= senior.w_rel.rows) throw ConfigError("relation id out of range for W_Rel");
  Table out = teacher_rows;
  for (std::size_t i = 0; i < out.rows; ++i) {
    const double f = poincare::sigmoid(senior.w_rel.at(rel, i));
    for (double& v : out.row(i)) v *= f;
  }
  return out;
}

struct Attention {
  std::vector<double> divergence;  // p_i
  std::vector<double> weights;     // softmax(-p / gamma), sums to 1
  std::vector<double> labels;      // L_top
};

// softmax(-p / gamma): teachers closer to the Junior get more weight.
inline std::vector<double> attention_weights(std::span<const double> divergence, double gamma) {
  if (!(gamma > 0.0)) throw ConfigError("contrast attention needs gamma > 0");
  std::vector<double> logits(divergence.size());
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = -divergence[i] / gamma;
  return detail::softmax(logits);
}

// p_i = (1/K) KL(softmax(S_Ti) || softmax(S_top)) on unscaled rows;
// L_top = m * sum_i softmax(-p / gamma)_i * S'_Ti.
inline Attention contrast_attention(const Table& scaled, const Table& raw, std::span<const double> junior_top,
                                    double gamma) {
  if (!(gamma > 0.0)) throw ConfigError("contrast attention needs gamma > 0");
  const std::size_t m = raw.rows;
  const std::size_t k = raw.cols;
  Attention a;
  a.divergence.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    a.divergence[i] = detail::kl_logits(raw.row(i), junior_top) / static_cast<double>(k);
  }
  a.weights = attention_weights(a.divergence, gamma);
  a.labels.assign(k, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double w = a.weights[i] * static_cast<double>(m);
    const auto row = scaled.row(i);
    for (std::size_t j = 0; j < k; ++j) a.labels[j] += w * row[j];
  }
  return a;
}

// Equal weights: L_top = sum_i S'_Ti.
inline std::vector<double> uniform_fusion(const Table& scaled) {
  std::vector<double> labels(scaled.cols, 0.0);
  for (std::size_t i = 0; i < scaled.rows; ++i) {
    const auto row = scaled.row(i);
    for (std::size_t j = 0; j < scaled.cols; ++j) labels[j] += row[j];
  }
  return labels;
}

// KL(softmax(L_top) || softmax(S_top)) for one query; L_top is a constant.
// Adds d/dS_top * weight into `grad_top` when given.
inline double soft_label_loss(std::span<const double> labels, std::span<const double> junior_top,
                              std::span<double> grad_top = {}, double weight = 1.0) {
  if (labels.size() != junior_top.size()) throw ConfigError("soft_label_loss: length mismatch");
  if (!grad_top.empty()) {
    const auto p = detail::softmax(labels);
    const auto q = detail::softmax(junior_top);
    for (std::size_t k = 0; k < q.size(); ++k) grad_top[k] += weight * (q[k] - p[k]);
  }
  return detail::kl_logits(labels, junior_top);
}

// n distinct ids drawn uniformly from [0, N_e) \ {target} (Floyd's algorithm).
inline std::vector<EntityId> negative_sample(EntityId target, std::size_t n, std::size_t num_entities, Rng& rng) {
  if (num_entities == 0 || n >= num_entities) {
    throw ConfigError("cannot draw " + std::to_string(n) + " negatives from " + std::to_string(num_entities) +
                      " entities");
  }
  const std::size_t pool = num_entities - 1;
  std::vector<EntityId> out;
  out.reserve(n);
  std::unordered_set<std::size_t> chosen;
  for (std::size_t j = pool - n; j < pool; ++j) {
    std::size_t t = rng.below(j + 1);
    if (chosen.count(t)) t = j;
    chosen.insert(t);
    out.push_back(static_cast<EntityId>(t >= target ? t + 1 : t));
  }
  return out;
}

// K distinct uniformly drawn entities (the "no top-K" ablation).
inline std::vector<EntityId> random_candidates(std::size_t k, std::size_t num_entities, Rng& rng) {
  std::vector<EntityId> out;
  out.reserve(k);
  std::unordered_set<std::size_t> chosen;
  for (std::size_t j = num_entities - k; j < num_entities; ++j) {
    std::size_t t = rng.below(j + 1);
    if (chosen.count(t)) t = j;
    chosen.insert(t);
    out.push_back(static_cast<EntityId>(t));
  }
  return out;
}

// Mean binary cross-entropy with per-score logistic sigmoid.
inline double hard_label_loss(std::span<const double> scores, std::span<const double> labels,
                              std::span<double> grad = {}, double weight = 1.0) {
  if (scores.size() != labels.size() || scores.empty()) throw ConfigError("hard_label_loss: bad lengths");
  const double n = static_cast<double>(scores.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    // -[y log s(x) + (1-y) log(1 - s(x))] = softplus(x) - y x
    loss += poincare::softplus(scores[i]) - labels[i] * scores[i];
    if (!grad.empty()) grad[i] += weight * (poincare::sigmoid(scores[i]) - labels[i]) / n;
  }
  return loss / n;
}

inline double junior_loss(double soft, double hard, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  return alpha * soft + (1.0 - alpha) * hard;
}

// Cross entropy of softmax(sum_i S'_Ti) against the target's position in
// C_top; zero when the target is not a candidate. Adds d/dz * weight into
// `grad_summed` (z = summed rows) when given.
inline double senior_loss(const Table& scaled, std::span<const EntityId> candidates, EntityId target,
                          std::span<double> grad_summed = {}, double weight = 1.0) {
  if (scaled.cols != candidates.size()) throw ConfigError("senior_loss: candidate count mismatch");
  const auto pos = std::find(candidates.begin(), candidates.end(), target);
  if (pos == candidates.end()) return 0.0;
  const auto j = static_cast<std::size_t>(pos - candidates.begin());
  const auto z = uniform_fusion(scaled);
  const auto logp = detail::log_softmax(z);
  if (!grad_summed.empty()) {
    for (std::size_t k = 0; k < z.size(); ++k) grad_summed[k] += weight * (std::exp(logp[k]) - (k == j ? 1.0 : 0.0));
  }
  return -logp[j];
}

// Elementwise sum of the teachers' scores.
inline std::vector<double> ensemble_score(const TeacherEnsemble& ensemble, EntityId head, RelationId rel,
                                          std::span<const EntityId> candidates) {
  std::vector<double> total(candidates.size(), 0.0), row(candidates.size());
  for (const auto& t : ensemble.teachers) {
    score_into(t, head, rel, candidates, row);
    for (std::size_t k = 0; k < row.size(); ++k) total[k] += row[k];
  }
  return total;
}

inline Scorer ensemble_scorer(const TeacherEnsemble& ensemble) {
  return [&ensemble](EntityId h, RelationId r, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    std::vector<double> row(out.size());
    for (const auto& t : ensemble.teachers) {
      score_all(t, h, r, row);
      for (std::size_t e = 0; e < out.size(); ++e) out[e] += row[e];
    }
  };
}

// Everything about one training query that is held constant while the loss
// is differentiated: candidates, frozen teacher rows, detached soft labels
// and the sampled negatives.
struct QueryPlan {
  Triple query;
  std::vector<EntityId> candidates;
  Table teacher_rows;
  std::vector<double> soft_labels;
  std::vector<EntityId> negatives;
};

struct PlanOptions {
  std::size_t k = 0;
  std::size_t negatives = 0;
  CandidateMode mode = CandidateMode::kTopK;
  bool contrast_attention = true;
  bool relation_scaling = true;
  double gamma = 1.0;
};

// `rng_seed` drives both the negative sample and (in random mode) the candidates.
inline QueryPlan plan_query(const ModelState& junior, const TeacherEnsemble& ensemble, const SeniorState& senior,
                            const Triple& q, const PlanOptions& opt, std::uint64_t rng_seed) {
  QueryPlan plan;
  plan.query = q;
  Rng neg_rng(derive_seed(rng_seed, 1));
  plan.negatives = negative_sample(q.tail, opt.negatives, junior.num_entities, neg_rng);
  if (ensemble.empty()) return plan;

  std::vector<double> junior_top;
  if (opt.mode == CandidateMode::kTopK) {
    auto c = topk_candidates(junior, q.head, q.rel, opt.k);
    plan.candidates = std::move(c.ids);
    junior_top = std::move(c.scores);
  } else {
    Rng cand_rng(derive_seed(rng_seed, 2));
    plan.candidates = random_candidates(opt.k, junior.num_entities, cand_rng);
    junior_top.resize(plan.candidates.size());
    score_into(junior, q.head, q.rel, plan.candidates, junior_top);
  }
  plan.teacher_rows = teacher_scores(ensemble, q.head, q.rel, plan.candidates);
  const Table scaled = opt.relation_scaling ? relation_scale(plan.teacher_rows, senior, q.rel) : plan.teacher_rows;
  plan.soft_labels = opt.contrast_attention
                         ? contrast_attention(scaled, plan.teacher_rows, junior_top, opt.gamma).labels
                         : uniform_fusion(scaled);
  return plan;
}

struct LossWeights {
  double alpha = 0.0;
  double lambda = 0.0;
  bool relation_scaling = true;
};

struct LossBreakdown {
  double junior = 0.0;  // mean alpha*soft + (1-alpha)*hard
  double soft = 0.0;
  double hard = 0.0;
  double senior = 0.0;
  double l2 = 0.0;
  double total() const noexcept { return junior + senior + l2; }
};

// Mean over `plans` of the Junior and Senior losses plus lambda * ||Theta||^2
// (Junior embedding tables). When the gradient buffers are given the
// gradients of total() are accumulated into them. Plans without candidates
// contribute the hard-label part only.
inline LossBreakdown batch_loss(const ModelState& junior, const SeniorState& senior, std::span<const QueryPlan> plans,
                                const LossWeights& w, ModelState* junior_grad, Table* w_rel_grad,
                                bool include_l2 = true) {
  LossBreakdown out;
  if (plans.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(plans.size());
  std::vector<EntityId> cands;
  std::vector<double> scores, dscore;
  for (const auto& plan : plans) {
    const Triple& q = plan.query;
    const std::size_t n_hard = 1 + plan.negatives.size();
    cands.clear();
    cands.push_back(q.tail);
    cands.insert(cands.end(), plan.negatives.begin(), plan.negatives.end());
    cands.insert(cands.end(), plan.candidates.begin(), plan.candidates.end());
    scores.assign(cands.size(), 0.0);
    dscore.assign(cands.size(), 0.0);
    score_into(junior, q.head, q.rel, cands, scores);

    std::vector<double> hard_labels(n_hard, 0.0);
    hard_labels[0] = 1.0;
    const std::span<const double> hard_scores(scores.data(), n_hard);
    const std::span<double> hard_grad =
        junior_grad ? std::span<double>(dscore.data(), n_hard) : std::span<double>{};
    const bool distilling = !plan.candidates.empty();
    const double hard_weight = distilling ? (1.0 - w.alpha) : 1.0;
    const double hard = hard_label_loss(hard_scores, hard_labels, hard_grad, hard_weight * inv_n);
    out.hard += hard * inv_n;

    double soft = 0.0;
    if (distilling) {
      const std::span<const double> top(scores.data() + n_hard, plan.candidates.size());
      const std::span<double> top_grad =
          junior_grad ? std::span<double>(dscore.data() + n_hard, plan.candidates.size()) : std::span<double>{};
      soft = soft_label_loss(plan.soft_labels, top, top_grad, w.alpha * inv_n);
      out.soft += soft * inv_n;
      out.junior += junior_loss(soft, hard, w.alpha) * inv_n;

      if (w.relation_scaling) {
        const Table scaled = relation_scale(plan.teacher_rows, senior, q.rel);
        std::vector<double> gz(plan.candidates.size(), 0.0);
        out.senior += senior_loss(scaled, plan.candidates, q.tail, gz, inv_n) * inv_n;
        if (w_rel_grad) {
          for (std::size_t i = 0; i < plan.teacher_rows.rows; ++i) {
            const double sig = poincare::sigmoid(senior.w_rel.at(q.rel, i));
            const auto row = plan.teacher_rows.row(i);
            double acc = 0.0;
            for (std::size_t k = 0; k < gz.size(); ++k) acc += gz[k] * row[k];
            w_rel_grad->at(q.rel, i) += sig * (1.0 - sig) * acc;
          }
        }
      } else {
        out.senior += senior_loss(plan.teacher_rows, plan.candidates, q.tail) * inv_n;
      }
    } else {
      out.junior += hard * inv_n;
    }
    if (junior_grad) score_backward(junior, q.head, q.rel, cands, dscore, *junior_grad);
  }
  if (include_l2 && w.lambda > 0.0) {
    const auto params = junior.regularized_tables();
    std::vector<NamedTable> grads;
    if (junior_grad) grads = junior_grad->regularized_tables();
    for (std::size_t i = 0; i < params.size(); ++i) {
      out.l2 += l2_penalty(params[i].table->values, w.lambda,
                           junior_grad ? std::span<double>(grads[i].table->values) : std::span<double>{});
    }
  }
  return out;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double loss_junior = 0.0;
  double loss_senior = 0.0;
  double gamma = 0.0;
  bool has_valid = false;
  Metrics valid;

  nlohmann::json to_json() const {
    nlohmann::json j{{"epoch", epoch}, {"loss_J", loss_junior}, {"loss_S", loss_senior}, {"gamma", gamma}};
    if (has_valid) {
      j["valid_MRR"] = valid.mrr;
      j["valid_hits1"] = valid.hits1;
      j["valid_hits10"] = valid.hits10;
    } else {
      j["valid_MRR"] = nullptr;
      j["valid_hits1"] = nullptr;
      j["valid_hits10"] = nullptr;
    }
    return j;
  }
};

struct TrainResult {
  ModelState best;  // best validation MRR (last epoch when validation is off)
  ModelState last;
  SeniorState senior;
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  double best_valid_mrr = -1.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Runs the analytic gradient of batch_loss against central differences on a
// small random instance with non-trivial parameters; returns the worst
// relative error over every parameter table of `kind` and W_Rel.
inline GradCheckResult gradient_self_test(ModelKind kind, std::size_t dim, std::size_t num_teachers,
                                          std::uint64_t seed, ModelOptions options = {}) {
  constexpr std::size_t kEntities = 7;
  std::vector<std::string> ents, rels{"r0", "r1"};
  for (std::size_t i = 0; i < kEntities; ++i) ents.push_back("e" + std::to_string(i));
  const Vocab vocab = Vocab::from_names(ents, rels).with_reciprocals();

  auto randomize = [](ModelState& m, std::uint64_t s) {
    Rng rng(s);
    for (auto& nt : m.tables()) {
      const double scale = nt.name == "entity" || nt.name == "relation" ? 0.4 : 0.8;
      for (double& v : nt.table->values) v = scale * (2.0 * rng.uniform() - 1.0);
    }
    for (double& v : m.curvature.values) v = poincare::inverse_softplus(0.5 + rng.uniform());
  };
  ModelState junior = init_model(kind, dim, vocab, seed, options);
  randomize(junior, derive_seed(seed, 10));
  TeacherEnsemble ens;
  const ModelKind teacher_kinds[] = {{Family::kTrans, Geometry::kHyperbolic},
                                     {Family::kDist, Geometry::kHyperbolic},
                                     {Family::kRot, Geometry::kHyperbolic},
                                     {Family::kRef, Geometry::kHyperbolic}};
  for (std::size_t i = 0; i < num_teachers; ++i) {
    ens.teachers.push_back(init_model(teacher_kinds[i % 4], 4, vocab, derive_seed(seed, 20 + i)));
    randomize(ens.teachers.back(), derive_seed(seed, 30 + i));
  }
  SeniorState senior(vocab.num_relations(), num_teachers);
  Rng wr(derive_seed(seed, 40));
  for (double& v : senior.w_rel.values) v = 2.0 * wr.uniform() - 1.0;

  PlanOptions popt{.k = 4, .negatives = 3, .mode = CandidateMode::kTopK, .gamma = 1.5};
  std::vector<QueryPlan> plans;
  const Triple queries[] = {{0, 0, 1}, {2, 1, 3}, {4, 2, 0}, {5, 3, 6}};
  for (std::size_t i = 0; i < std::size(queries); ++i) {
    plans.push_back(plan_query(junior, ens, senior, queries[i], popt, derive_seed(seed, 50 + i)));
  }
  // Make sure at least one slate holds its target so the Senior path is exercised.
  if (num_teachers > 0 && std::find(plans[0].candidates.begin(), plans[0].candidates.end(), plans[0].query.tail) ==
                              plans[0].candidates.end()) {
    plans[0].candidates.back() = plans[0].query.tail;
    plans[0].teacher_rows = teacher_scores(ens, plans[0].query.head, plans[0].query.rel, plans[0].candidates);
    plans[0].soft_labels = uniform_fusion(plans[0].teacher_rows);
  }
  const LossWeights w{.alpha = 0.3, .lambda = 0.01, .relation_scaling = true};

  ModelState jg = junior.zeros_like();
  Table wg(senior.w_rel.rows, senior.w_rel.cols);
  batch_loss(junior, senior, plans, w, &jg, &wg);

  auto params = junior.tables();
  params.push_back({"w_rel", &senior.w_rel});
  std::vector<const Table*> grads;
  for (auto& nt : jg.tables()) grads.push_back(nt.table);
  grads.push_back(&wg);
  return grad_check([&] { return batch_loss(junior, senior, plans, w, nullptr, nullptr).total(); }, params, grads);
}

namespace detail {

inline TrainResult run_training(const DistillConfig& cfg, ModelState junior, const TeacherEnsemble& ensemble,
                                const Dataset& data, const EpochCallback& on_epoch) {
  const bool distilling = !ensemble.empty();
  cfg.validate(data.vocab.num_entities(), distilling);
  if (!data.vocab.augmented()) throw ConfigError("training needs a dataset augmented with reciprocal relations");
  if (data.train.empty()) throw ConfigError("training split is empty");
  ensemble.check_compatible(data.vocab);
  if (junior.vocab_hash != data.vocab.hash() || junior.num_entities != data.vocab.num_entities() ||
      junior.num_relations != data.vocab.num_relations()) {
    throw VocabError("junior model vocabulary does not match the dataset");
  }
  if (cfg.self_test) {
    const auto r = gradient_self_test(junior.kind, std::max<std::size_t>(2, junior.dim % 2 ? 3 : 4),
                                      std::max<std::size_t>(ensemble.size(), 1), cfg.seed, junior.options);
    if (r.max_rel_error > 1e-4) {
      throw NumericalError("gradient self-test failed: relative error " + std::to_string(r.max_rel_error) +
                           " in table '" + r.worst_table + "'");
    }
  }

  TrainResult res;
  res.senior = SeniorState(data.vocab.num_relations(), ensemble.size(), cfg.gamma0, cfg.gamma_growth);
  SeniorState& senior = res.senior;
  AdamState adam;
  adam.config.lr = cfg.lr;
  const LossWeights weights{.alpha = cfg.alpha, .lambda = cfg.lambda, .relation_scaling = cfg.relation_scaling};
  const FilterIndex valid_filter = build_filter(data, cfg.valid_scope);

  const std::size_t shards = cfg.threads;
  std::vector<ModelState> jgrads(shards, junior.zeros_like());
  std::vector<Table> wgrads(shards, Table(senior.w_rel.rows, senior.w_rel.cols));

  std::vector<std::size_t> order(data.train.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    senior.epoch = epoch;
    const double gamma = senior.gamma();
    const PlanOptions popt{.k = cfg.k,
                           .negatives = cfg.negatives,
                           .mode = cfg.candidates,
                           .contrast_attention = cfg.contrast_attention,
                           .relation_scaling = cfg.relation_scaling,
                           .gamma = gamma};
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(cfg.seed, 0x5348, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double sum_j = 0.0, sum_s = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::size_t n = end - begin;
      std::vector<QueryPlan> plans(n);
      std::vector<LossBreakdown> parts(shards);
      parallel_chunks(n, shards, cfg.threads, [&](std::size_t b, std::size_t e, std::size_t shard) {
        for (std::size_t i = b; i < e; ++i) {
          const std::size_t qi = order[begin + i];
          plans[i] = plan_query(junior, ensemble, senior, data.train[qi], popt, derive_seed(cfg.seed, epoch, qi, 7));
        }
        for (auto& nt : jgrads[shard].tables()) nt.table->zero();
        wgrads[shard].zero();
        auto part = batch_loss(junior, senior, std::span<const QueryPlan>(plans).subspan(b, e - b), weights,
                               &jgrads[shard], &wgrads[shard], false);
        // batch_loss averages over its own slice; rescale to the whole batch.
        const double frac = static_cast<double>(e - b) / static_cast<double>(n);
        for (auto& nt : jgrads[shard].tables()) {
          for (double& v : nt.table->values) v *= frac;
        }
        for (double& v : wgrads[shard].values) v *= frac;
        part.junior *= frac;
        part.senior *= frac;
        parts[shard] = part;
      });
      for (std::size_t s = 1; s < shards; ++s) {
        auto dst = jgrads[0].tables();
        auto src = jgrads[s].tables();
        for (std::size_t t = 0; t < dst.size(); ++t) {
          for (std::size_t j = 0; j < dst[t].table->size(); ++j) dst[t].table->values[j] += src[t].table->values[j];
        }
        for (std::size_t j = 0; j < wgrads[0].size(); ++j) wgrads[0].values[j] += wgrads[s].values[j];
      }
      // L2 term once per batch, on the reduced gradient.
      if (weights.lambda > 0.0) {
        auto params = junior.regularized_tables();
        auto grads = jgrads[0].regularized_tables();
        for (std::size_t i = 0; i < params.size(); ++i) {
          l2_penalty(params[i].table->values, weights.lambda, grads[i].table->values);
        }
      }
      double batch_j = 0.0, batch_s = 0.0;
      for (const auto& p : parts) {
        batch_j += p.junior;
        batch_s += p.senior;
      }
      if (!std::isfinite(batch_j) || !std::isfinite(batch_s)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch));
      }
      sum_j += batch_j * static_cast<double>(n);
      sum_s += batch_s * static_cast<double>(n);

      auto params = junior.tables();
      std::vector<const Table*> grads;
      for (auto& nt : jgrads[0].tables()) grads.push_back(nt.table);
      if (distilling && cfg.relation_scaling) {
        params.push_back({"w_rel", &senior.w_rel});
        grads.push_back(&wgrads[0]);
      }
      adam_step(params, grads, adam);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss_junior = sum_j / static_cast<double>(order.size());
    rec.loss_senior = sum_s / static_cast<double>(order.size());
    rec.gamma = gamma;
    const bool validate_now = cfg.eval_every > 0 && !data.valid.empty() &&
                              ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs);
    if (validate_now) {
      rec.has_valid = true;
      rec.valid = evaluate(model_scorer(junior), data.valid, valid_filter, junior.num_entities,
                           {.ties = cfg.ties, .threads = cfg.threads});
      if (rec.valid.mrr > res.best_valid_mrr) {
        res.best_valid_mrr = rec.valid.mrr;
        res.best_epoch = epoch;
        res.best = junior;
      }
    }
    res.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  res.last = junior;
  if (res.best_valid_mrr < 0.0) {
    res.best = junior;
    res.best_epoch = cfg.epochs == 0 ? 0 : cfg.epochs - 1;
  }
  return res;
}

}  // namespace detail

// Distills `ensemble` into a fresh Junior of `kind` and `dim`.
inline TrainResult train_mulde(const DistillConfig& cfg, ModelKind kind, std::size_t dim,
                               const TeacherEnsemble& ensemble, const Dataset& data,
                               const EpochCallback& on_epoch = {}) {
  if (ensemble.empty()) throw ConfigError("distillation needs at least one teacher");
  ModelState junior = init_model(kind, dim, data.vocab, cfg.seed, cfg.model_options);
  return detail::run_training(cfg, std::move(junior), ensemble, data, on_epoch);
}

// Hard-label (negative sampling) training with L2 only; also the baseline
// for a Junior trained without teachers.
inline TrainResult pretrain_teacher(ModelKind kind, std::size_t dim, const Dataset& data, const DistillConfig& cfg,
                                    const EpochCallback& on_epoch = {}) {
  ModelState model = init_model(kind, dim, data.vocab, cfg.seed, cfg.model_options);
  return detail::run_training(cfg, std::move(model), TeacherEnsemble{}, data, on_epoch);
}

}  // namespace mulde
