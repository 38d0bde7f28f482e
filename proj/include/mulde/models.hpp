#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mulde/error.hpp"
#include "mulde/kgdata.hpp"
#include "mulde/manifold.hpp"
#include "mulde/table.hpp"

namespace mulde {

enum class Family { kTrans, kDist, kRot, kRef };
enum class Geometry { kHyperbolic, kEuclidean };

struct ModelKind {
  Family family = Family::kRot;
  Geometry geometry = Geometry::kHyperbolic;

  bool hyperbolic() const noexcept { return geometry == Geometry::kHyperbolic; }
  bool uses_angles() const noexcept { return family == Family::kRot || family == Family::kRef; }

  // TransH, DistH, RotH, RefH and the Euclidean twins TransE_, DistE_, RotE_, RefE_.
  std::string name() const {
    static constexpr const char* kStems[] = {"Trans", "Dist", "Rot", "Ref"};
    return std::string(kStems[static_cast<int>(family)]) + (hyperbolic() ? "H" : "E_");
  }

  static ModelKind parse(std::string_view s) {
    static constexpr std::string_view kStems[] = {"Trans", "Dist", "Rot", "Ref"};
    for (int f = 0; f < 4; ++f) {
      const std::string stem(kStems[f]);
      if (s == stem + "H") return {static_cast<Family>(f), Geometry::kHyperbolic};
      if (s == stem + "E_") return {static_cast<Family>(f), Geometry::kEuclidean};
    }
    throw ConfigError("unknown model kind '" + std::string(s) +
                      "' (expected TransH|DistH|RotH|RefH|TransE_|DistE_|RotE_|RefE_)");
  }

  friend bool operator==(const ModelKind&, const ModelKind&) = default;
};

struct ModelOptions {
  bool biases = true;
  // One curvature shared by all relations instead of one per relation.
  bool global_curvature = false;
  // Store entity parameters directly as ball points instead of mapping through expmap0.
  bool direct_ball = false;

  friend bool operator==(const ModelOptions&, const ModelOptions&) = default;
};

// Trainable state of one scoring model. Tables not used by the kind are empty:
// `relation` for Trans/Dist, `angles` (d/2 per relation) for Rot/Ref,
// `curvature` (softplus-parameterized) for hyperbolic kinds.
struct ModelState {
  ModelKind kind;
  std::size_t dim = 0;
  std::size_t num_entities = 0;
  std::size_t num_relations = 0;
  std::uint64_t seed = 0;
  std::uint64_t vocab_hash = 0;
  ModelOptions options;

  Table entity;
  Table relation;
  Table angles;
  Table curvature;
  Table bias_head;
  Table bias_tail;

  std::vector<NamedTable> tables() {
    return {{"entity", &entity},       {"relation", &relation},   {"angles", &angles},
            {"curvature", &curvature}, {"bias_head", &bias_head}, {"bias_tail", &bias_tail}};
  }
  std::vector<ConstNamedTable> tables() const {
    return {{"entity", &entity},       {"relation", &relation},   {"angles", &angles},
            {"curvature", &curvature}, {"bias_head", &bias_head}, {"bias_tail", &bias_tail}};
  }
  // Embedding tables subject to the L2 penalty (biases and curvature are not).
  std::vector<NamedTable> regularized_tables() {
    return {{"entity", &entity}, {"relation", &relation}, {"angles", &angles}};
  }
  std::vector<ConstNamedTable> regularized_tables() const {
    return {{"entity", &entity}, {"relation", &relation}, {"angles", &angles}};
  }

  // Same shapes, all zeros; used as a gradient buffer.
  ModelState zeros_like() const {
    ModelState g = *this;
    for (auto& nt : g.tables()) nt.table->zero();
    return g;
  }

  std::size_t curvature_row(RelationId r) const noexcept { return options.global_curvature ? 0 : r; }
  double curvature_value(RelationId r) const noexcept {
    return poincare::softplus(curvature.at(curvature_row(r), 0));
  }

  friend bool operator==(const ModelState&, const ModelState&) = default;
};

struct ScoreBatch {
  EntityId head = 0;
  RelationId rel = 0;
  std::vector<EntityId> candidates;
  std::vector<double> scores;
};

namespace detail {

inline double uniform01(std::uint64_t& state) noexcept {
  state = mix_seed(state);
  return static_cast<double>(state >> 11) * 0x1.0p-53;
}

inline void fill_uniform(Table& t, double lo, double hi, std::uint64_t seed) {
  std::uint64_t s = seed;
  for (double& v : t.values) v = lo + (hi - lo) * uniform01(s);
}

}  // namespace detail

inline ModelState init_model(ModelKind kind, std::size_t dim, const Vocab& vocab, std::uint64_t seed,
                             ModelOptions options = {}) {
  if (dim < 2) throw ConfigError("embedding dimension must be at least 2");
  if (kind.uses_angles() && dim % 2 != 0) {
    throw ConfigError(kind.name() + " needs an even dimension for 2x2 rotation blocks, got " +
                      std::to_string(dim));
  }
  ModelState m;
  m.kind = kind;
  m.dim = dim;
  m.num_entities = vocab.num_entities();
  m.num_relations = vocab.num_relations();
  m.seed = seed;
  m.vocab_hash = vocab.hash();
  m.options = options;

  constexpr double kInit = 1e-3;
  m.entity = Table(m.num_entities, dim);
  detail::fill_uniform(m.entity, -kInit, kInit, derive_seed(seed, 1));
  if (kind.uses_angles()) {
    m.angles = Table(m.num_relations, dim / 2);
    detail::fill_uniform(m.angles, -kInit, kInit, derive_seed(seed, 2));
  } else {
    m.relation = Table(m.num_relations, dim);
    detail::fill_uniform(m.relation, -kInit, kInit, derive_seed(seed, 3));
  }
  if (kind.hyperbolic()) {
    m.curvature = Table(options.global_curvature ? 1 : m.num_relations, 1,
                        poincare::inverse_softplus(1.0));
  }
  if (options.biases) {
    m.bias_head = Table(m.num_entities, 1);
    m.bias_tail = Table(m.num_entities, 1);
  }
  return m;
}

namespace detail {

// Block-diagonal 2x2 rotation [[cos, -sin], [sin, cos]] or
// reflection [[cos, sin], [sin, -cos]] per angle.
inline void apply_blocks(bool reflect, std::span<const double> theta, std::span<const double> x,
                         std::span<double> out) noexcept {
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double co = std::cos(theta[k]);
    const double si = std::sin(theta[k]);
    const double x0 = x[2 * k], x1 = x[2 * k + 1];
    if (reflect) {
      out[2 * k] = co * x0 + si * x1;
      out[2 * k + 1] = si * x0 - co * x1;
    } else {
      out[2 * k] = co * x0 - si * x1;
      out[2 * k + 1] = si * x0 + co * x1;
    }
  }
}

inline void apply_blocks_vjp(bool reflect, std::span<const double> theta, std::span<const double> x,
                             std::span<const double> g, std::span<double> gx,
                             std::span<double> gtheta) noexcept {
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double co = std::cos(theta[k]);
    const double si = std::sin(theta[k]);
    const double x0 = x[2 * k], x1 = x[2 * k + 1];
    const double g0 = g[2 * k], g1 = g[2 * k + 1];
    double q0, q1;
    if (reflect) {
      q0 = co * x0 + si * x1;
      q1 = si * x0 - co * x1;
      gx[2 * k] += co * g0 + si * g1;
      gx[2 * k + 1] += si * g0 - co * g1;
    } else {
      q0 = co * x0 - si * x1;
      q1 = si * x0 + co * x1;
      gx[2 * k] += co * g0 + si * g1;
      gx[2 * k + 1] += -si * g0 + co * g1;
    }
    gtheta[k] += -g0 * q1 + g1 * q0;
  }
}

inline poincare::RadialScale entity_scale(const ModelState& m, std::span<const double> v, double c) {
  const double norm = std::sqrt(poincare::sq_norm(v));
  return m.options.direct_ball ? poincare::projection_scale(norm, c) : poincare::expmap0_scale(norm, c);
}

// Forward pass of the head transformation, keeping what the backward pass needs.
struct HeadForward {
  double c = 0.0;
  poincare::RadialScale head_scale;
  poincare::RadialScale rel_scale;
  std::vector<double> head_point;  // x_h
  std::vector<double> rel_point;   // TransH: expmap0(r)
  std::vector<double> pre_proj;    // TransH / DistH: value before the final projection
  std::vector<double> query;       // transformed head q
};

inline HeadForward head_forward(const ModelState& m, EntityId h, RelationId r) {
  HeadForward f;
  const std::size_t d = m.dim;
  const auto e_h = m.entity.row(h);
  f.head_point.assign(d, 0.0);
  f.query.assign(d, 0.0);
  if (m.kind.hyperbolic()) {
    f.c = m.curvature_value(r);
    f.head_scale = entity_scale(m, e_h, f.c);
  }
  for (std::size_t i = 0; i < d; ++i) f.head_point[i] = f.head_scale.lambda * e_h[i];

  switch (m.kind.family) {
    case Family::kTrans: {
      const auto rv = m.relation.row(r);
      if (m.kind.hyperbolic()) {
        f.rel_scale = poincare::expmap0_scale(std::sqrt(poincare::sq_norm(rv)), f.c);
        f.rel_point.assign(d, 0.0);
        for (std::size_t i = 0; i < d; ++i) f.rel_point[i] = f.rel_scale.lambda * rv[i];
        f.pre_proj.assign(d, 0.0);
        poincare::mobius_add_raw(f.head_point, f.rel_point, f.c, f.pre_proj);
        poincare::project_to_ball(f.pre_proj, f.c, f.query);
      } else {
        for (std::size_t i = 0; i < d; ++i) f.query[i] = f.head_point[i] + rv[i];
      }
      break;
    }
    case Family::kDist: {
      const auto rv = m.relation.row(r);
      if (m.kind.hyperbolic()) {
        f.pre_proj.assign(d, 0.0);
        for (std::size_t i = 0; i < d; ++i) f.pre_proj[i] = f.head_point[i] * rv[i];
        poincare::project_to_ball(f.pre_proj, f.c, f.query);
      } else {
        for (std::size_t i = 0; i < d; ++i) f.query[i] = f.head_point[i] * rv[i];
      }
      break;
    }
    case Family::kRot:
    case Family::kRef:
      apply_blocks(m.kind.family == Family::kRef, m.angles.row(r), f.head_point, f.query);
      break;
  }
  return f;
}

inline double bias_sum(const ModelState& m, EntityId h, EntityId t) noexcept {
  return m.options.biases ? m.bias_head.at(h, 0) + m.bias_tail.at(t, 0) : 0.0;
}

}  // namespace detail

// Transformed head point q for the query (head, rel).
inline std::vector<double> transform_head(const ModelState& m, EntityId head, RelationId rel) {
  return detail::head_forward(m, head, rel).query;
}

// Embedding of an entity as a point of the model's space for relation `rel`
// (the curvature is relation-specific).
inline std::vector<double> entity_point(const ModelState& m, EntityId e, RelationId rel) {
  const auto v = m.entity.row(e);
  std::vector<double> out(v.begin(), v.end());
  if (m.kind.hyperbolic()) {
    const auto rs = detail::entity_scale(m, v, m.curvature_value(rel));
    for (double& x : out) x *= rs.lambda;
  }
  return out;
}

// Scores for the query against `candidates`: -D(q, e_t)^2 + b_h + b_t.
inline void score_into(const ModelState& m, EntityId head, RelationId rel,
                       std::span<const EntityId> candidates, std::span<double> out) {
  const auto f = detail::head_forward(m, head, rel);
  const std::size_t d = m.dim;
  std::vector<double> y(d);
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const EntityId t = candidates[k];
    const auto e_t = m.entity.row(t);
    double dist2;
    if (m.kind.hyperbolic()) {
      const auto rs = detail::entity_scale(m, e_t, f.c);
      for (std::size_t i = 0; i < d; ++i) y[i] = rs.lambda * e_t[i];
      const double dist = poincare::hyp_distance(f.query, y, f.c);
      dist2 = dist * dist;
    } else {
      dist2 = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double diff = f.query[i] - e_t[i];
        dist2 += diff * diff;
      }
    }
    out[k] = -dist2 + detail::bias_sum(m, head, t);
  }
}

inline ScoreBatch score(const ModelState& m, EntityId head, RelationId rel,
                        std::span<const EntityId> candidates) {
  ScoreBatch b{head, rel, {candidates.begin(), candidates.end()}, std::vector<double>(candidates.size())};
  score_into(m, head, rel, candidates, b.scores);
  return b;
}

// Scores of every entity as the tail, indexed by entity id.
inline void score_all(const ModelState& m, EntityId head, RelationId rel, std::span<double> out) {
  thread_local std::vector<EntityId> all;
  if (all.size() != m.num_entities) {
    all.resize(m.num_entities);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<EntityId>(i);
  }
  score_into(m, head, rel, all, out);
}

// Accumulates d(sum_k dscore[k] * score_k)/d(params) into `grad`, a buffer
// shaped like `m` (see ModelState::zeros_like).
inline void score_backward(const ModelState& m, EntityId head, RelationId rel,
                           std::span<const EntityId> candidates, std::span<const double> dscore,
                           ModelState& grad) {
  const auto f = detail::head_forward(m, head, rel);
  const std::size_t d = m.dim;
  const bool hyper = m.kind.hyperbolic();
  std::vector<double> gq(d, 0.0), y(d), gy(d);
  double gc = 0.0;

  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const double ds = dscore[k];
    if (ds == 0.0) continue;
    const EntityId t = candidates[k];
    const auto e_t = m.entity.row(t);
    if (m.options.biases) {
      grad.bias_head.at(head, 0) += ds;
      grad.bias_tail.at(t, 0) += ds;
    }
    if (hyper) {
      const auto rs = detail::entity_scale(m, e_t, f.c);
      for (std::size_t i = 0; i < d; ++i) y[i] = rs.lambda * e_t[i];
      const double dist = poincare::hyp_distance(f.query, y, f.c);
      std::fill(gy.begin(), gy.end(), 0.0);
      poincare::hyp_distance_vjp(f.query, y, f.c, -2.0 * dist * ds, gq, gy, gc);
      poincare::radial_vjp(e_t, rs, gy, grad.entity.row(t), gc);
    } else {
      auto ge_t = grad.entity.row(t);
      for (std::size_t i = 0; i < d; ++i) {
        const double diff = f.query[i] - e_t[i];
        gq[i] += -2.0 * ds * diff;
        ge_t[i] += 2.0 * ds * diff;
      }
    }
  }

  std::vector<double> gx(d, 0.0);
  switch (m.kind.family) {
    case Family::kTrans: {
      auto gr = grad.relation.row(rel);
      if (hyper) {
        std::vector<double> gm(d, 0.0), grp(d, 0.0);
        poincare::project_vjp(f.pre_proj, f.c, gq, gm, gc);
        poincare::mobius_add_raw_vjp(f.head_point, f.rel_point, f.c, gm, gx, grp, gc);
        poincare::radial_vjp(m.relation.row(rel), f.rel_scale, grp, gr, gc);
      } else {
        for (std::size_t i = 0; i < d; ++i) {
          gx[i] += gq[i];
          gr[i] += gq[i];
        }
      }
      break;
    }
    case Family::kDist: {
      const auto rv = m.relation.row(rel);
      auto gr = grad.relation.row(rel);
      std::vector<double> gp(d, 0.0);
      if (hyper) {
        poincare::project_vjp(f.pre_proj, f.c, gq, gp, gc);
      } else {
        gp = gq;
      }
      for (std::size_t i = 0; i < d; ++i) {
        gx[i] += gp[i] * rv[i];
        gr[i] += gp[i] * f.head_point[i];
      }
      break;
    }
    case Family::kRot:
    case Family::kRef:
      detail::apply_blocks_vjp(m.kind.family == Family::kRef, m.angles.row(rel), f.head_point, gq, gx,
                               grad.angles.row(rel));
      break;
  }

  auto ge_h = grad.entity.row(head);
  if (hyper) {
    poincare::radial_vjp(m.entity.row(head), f.head_scale, gx, ge_h, gc);
    const std::size_t row = m.curvature_row(rel);
    grad.curvature.at(row, 0) += gc * poincare::sigmoid(m.curvature.at(row, 0));
  } else {
    for (std::size_t i = 0; i < d; ++i) ge_h[i] += gx[i];
  }
}

}  // namespace mulde
