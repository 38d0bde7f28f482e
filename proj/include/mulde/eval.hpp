#pragma once

#include <cstddef>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mulde/error.hpp"
#include "mulde/kgdata.hpp"
#include "mulde/models.hpp"
#include "mulde/parallel.hpp"

namespace mulde {

enum class TieMode { kPessimistic, kOptimistic, kMean };

inline TieMode parse_tie_mode(std::string_view s) {
  if (s == "pessimistic") return TieMode::kPessimistic;
  if (s == "optimistic") return TieMode::kOptimistic;
  if (s == "mean") return TieMode::kMean;
  throw ConfigError("unknown tie mode '" + std::string(s) + "'");
}

// Filtered rank of `target`: 1 + number of non-filtered entities scoring above
// it, with ties counted according to `ties`. `known_tails` are the other true
// answers of the query; the target itself is always kept.
inline double rank_filtered(std::span<const double> scores, EntityId target,
                            std::span<const EntityId> known_tails, TieMode ties = TieMode::kPessimistic) {
  const double ts = scores[target];
  std::size_t greater = 0, equal = 0;
  for (std::size_t e = 0; e < scores.size(); ++e) {
    if (e == target) continue;
    if (scores[e] > ts) {
      ++greater;
    } else if (scores[e] == ts) {
      ++equal;
    }
  }
  for (EntityId e : known_tails) {
    if (e == target) continue;
    if (scores[e] > ts) {
      --greater;
    } else if (scores[e] == ts) {
      --equal;
    }
  }
  switch (ties) {
    case TieMode::kOptimistic:
      return 1.0 + static_cast<double>(greater);
    case TieMode::kMean:
      return 1.0 + static_cast<double>(greater) + 0.5 * static_cast<double>(equal);
    case TieMode::kPessimistic:
      break;
  }
  return 1.0 + static_cast<double>(greater + equal);
}

struct Metrics {
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;
  std::size_t n_queries = 0;
  std::vector<double> ranks;

  static Metrics from_ranks(std::vector<double> ranks) {
    if (ranks.empty()) throw ConfigError("cannot compute metrics over an empty split");
    Metrics m;
    for (double r : ranks) {
      m.mrr += 1.0 / r;
      m.hits1 += r <= 1.0 ? 1.0 : 0.0;
      m.hits3 += r <= 3.0 ? 1.0 : 0.0;
      m.hits10 += r <= 10.0 ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(ranks.size());
    m.mrr /= n;
    m.hits1 /= n;
    m.hits3 /= n;
    m.hits10 /= n;
    m.n_queries = ranks.size();
    m.ranks = std::move(ranks);
    return m;
  }

  nlohmann::json to_json() const {
    return {{"mrr", mrr},
            {"hits@1", hits1},
            {"hits@3", hits3},
            {"hits@10", hits10},
            {"n_queries", n_queries}};
  }
};

// Fills `out` (size N_e) with tail scores for the query.
using Scorer = std::function<void(EntityId head, RelationId rel, std::span<double> out)>;

inline Scorer model_scorer(const ModelState& m) {
  return [&m](EntityId h, RelationId r, std::span<double> out) { score_all(m, h, r, out); };
}

struct EvalOptions {
  TieMode ties = TieMode::kPessimistic;
  std::size_t threads = 1;
};

// Tail prediction over `split`; head prediction is covered by the reciprocal
// triples of an augmented split.
inline Metrics evaluate(const Scorer& scorer, std::span<const Triple> split, const FilterIndex& filter,
                        std::size_t num_entities, EvalOptions opt = {}) {
  if (split.empty()) throw ConfigError("evaluation split is empty");
  std::vector<double> ranks(split.size());
  parallel_chunks(split.size(), opt.threads, opt.threads, [&](std::size_t b, std::size_t e, std::size_t) {
    std::vector<double> scores(num_entities);
    for (std::size_t i = b; i < e; ++i) {
      const Triple& t = split[i];
      scorer(t.head, t.rel, scores);
      ranks[i] = rank_filtered(scores, t.tail, filter.tails(t.head, t.rel), opt.ties);
    }
  });
  return Metrics::from_ranks(std::move(ranks));
}

// TSV `head rel tail rank`, one line per query.
inline void write_rank_dump(std::ostream& out, std::span<const Triple> split, const Metrics& m,
                            const Vocab& vocab) {
  for (std::size_t i = 0; i < split.size() && i < m.ranks.size(); ++i) {
    const auto& t = split[i];
    out << vocab.entity_name(t.head) << '\t' << vocab.relation_name(t.rel) << '\t'
        << vocab.entity_name(t.tail) << '\t' << m.ranks[i] << '\n';
  }
}

}  // namespace mulde
