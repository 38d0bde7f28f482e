#pragma once

// Minimum embedding dimension from the model-entropy argument.
//
// Embeddings of norm sqrt(d) with angle eta = cos(theta) distributed as
//   p_d(eta) = Gamma(d/2) / (Gamma((d-1)/2) sqrt(pi)) (1 - eta^2)^((d-3)/2)
// give squared distances D = 2d(1 - eta). With A = E[e^{sD}] and
// B = E[e^{sD} D] (s = +1 as written, s = -1 for the distance-decaying
// variant) the entropy is
//   H_M = log N + log A - s B / A,     N = N_e^2 N_r,
// and h_d = H_M - log N is close to linear in d with slope epsilon.
// The bound is d > -(1/epsilon) log(N_e^2 N_r).

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mulde/error.hpp"

namespace mulde::dimbound {

inline constexpr double kReferenceEpsilon = -0.471;

struct BoundParams {
  double epsilon = kReferenceEpsilon;
  std::size_t nodes = 200000;

  // Accommodate constant, -1 / epsilon (about 2.123 for the default epsilon).
  double alpha() const {
    if (!(epsilon < 0.0)) throw ConfigError("slope constant epsilon must be negative");
    return -1.0 / epsilon;
  }
};

enum class Sign { kPositive = 1, kNegative = -1 };

inline const char* to_string(Sign s) { return s == Sign::kPositive ? "exp(+D)" : "exp(-D)"; }

// Composite Gauss-Legendre rule on [-1, 1]: equal panels, `order` points each.
class CompositeGaussLegendre {
 public:
  CompositeGaussLegendre(std::size_t total_nodes, std::size_t order = 20) {
    if (order < 2) throw ConfigError("Gauss-Legendre order must be at least 2");
    const std::size_t panels = std::max<std::size_t>(1, (total_nodes + order - 1) / order);
    const auto [x, w] = reference_rule(order);
    nodes_.reserve(panels * order);
    log_weights_.reserve(panels * order);
    const double h = 2.0 / static_cast<double>(panels);
    for (std::size_t p = 0; p < panels; ++p) {
      const double mid = -1.0 + h * (static_cast<double>(p) + 0.5);
      for (std::size_t i = 0; i < order; ++i) {
        nodes_.push_back(mid + 0.5 * h * x[i]);
        log_weights_.push_back(std::log(0.5 * h * w[i]));
      }
    }
  }

  std::span<const double> nodes() const noexcept { return nodes_; }
  std::span<const double> log_weights() const noexcept { return log_weights_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  template <class F>
  double integrate(F&& f) const {
    double s = 0.0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) s += std::exp(log_weights_[i]) * f(nodes_[i]);
    return s;
  }

  // Newton iteration on P_n from Tricomi's initial guesses.
  static std::pair<std::vector<double>, std::vector<double>> reference_rule(std::size_t n) {
    std::vector<double> x(n), w(n);
    const double nd = static_cast<double>(n);
    for (std::size_t k = 1; k <= n; ++k) {
      double r = std::cos(std::numbers::pi * (4.0 * k - 1.0) / (4.0 * nd + 2.0)) *
                 (1.0 - 1.0 / (8.0 * nd * nd) + 1.0 / (8.0 * nd * nd * nd));
      double dp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = r;
        for (std::size_t j = 2; j <= n; ++j) {
          const double p2 = ((2.0 * j - 1.0) * r * p1 - (j - 1.0) * p0) / static_cast<double>(j);
          p0 = p1;
          p1 = p2;
        }
        dp = nd * (r * p1 - p0) / (r * r - 1.0);
        const double step = p1 / dp;
        r -= step;
        if (std::abs(step) < 1e-16) break;
      }
      x[k - 1] = r;
      w[k - 1] = 2.0 / ((1.0 - r * r) * dp * dp);
    }
    return {x, w};
  }

 private:
  std::vector<double> nodes_;
  std::vector<double> log_weights_;
};

inline double log_angle_density(double eta, std::size_t d) {
  if (d < 3) throw ConfigError("angle density needs d >= 3");
  if (std::abs(eta) > 1.0) throw ConfigError("eta must lie in [-1, 1]");
  const double dd = static_cast<double>(d);
  const double log_norm =
      std::lgamma(dd / 2.0) - std::lgamma((dd - 1.0) / 2.0) - 0.5 * std::log(std::numbers::pi);
  if (d == 3) return log_norm;
  const double one_minus = 1.0 - eta * eta;
  if (one_minus <= 0.0) return -std::numeric_limits<double>::infinity();
  return log_norm + 0.5 * (dd - 3.0) * std::log1p(-eta * eta);
}

inline double angle_density(double eta, std::size_t d) { return std::exp(log_angle_density(eta, d)); }

struct EntropyEstimate {
  std::size_t d = 0;
  double log_n = 0.0;  // log(N_e^2 N_r)
  double h_m = 0.0;
  double h_d = 0.0;    // h_m - log_n
  double residual = 0.0;  // |change| under node doubling
};

inline double log_pair_count(double num_entities, double num_relations) {
  if (!(num_entities >= 1.0) || !(num_relations >= 1.0)) throw ConfigError("N_e and N_r must be at least 1");
  return 2.0 * std::log(num_entities) + std::log(num_relations);
}

namespace detail {

inline double entropy_offset(std::size_t d, const CompositeGaussLegendre& rule, Sign sign) {
  const double s = static_cast<double>(static_cast<int>(sign));
  const double dd = static_cast<double>(d);
  const auto x = rule.nodes();
  const auto lw = rule.log_weights();
  std::vector<double> la(x.size()), lb(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dist = 2.0 * dd * (1.0 - x[i]);
    const double base = lw[i] + log_angle_density(x[i], d) + s * dist;
    la[i] = base;
    lb[i] = base + std::log(dist);
  }
  auto lse = [](const std::vector<double>& v) {
    const double mx = *std::max_element(v.begin(), v.end());
    double acc = 0.0;
    for (double t : v) acc += std::exp(t - mx);
    return mx + std::log(acc);
  };
  const double log_a = lse(la);
  const double b_over_a = std::exp(lse(lb) - log_a);
  return log_a - s * b_over_a;
}

}  // namespace detail

// H_M for dimension d, checked against a rule with twice the nodes.
inline EntropyEstimate model_entropy(std::size_t d, double num_entities, double num_relations,
                                     std::size_t nodes = 200000, Sign sign = Sign::kPositive,
                                     double tolerance = 1e-6) {
  if (d < 3) throw ConfigError("model entropy needs d >= 3");
  if (nodes < 10000) throw ConfigError("quadrature needs at least 1e4 nodes");
  const CompositeGaussLegendre coarse(nodes);
  const CompositeGaussLegendre fine(2 * nodes);
  const double h_coarse = detail::entropy_offset(d, coarse, sign);
  const double h_fine = detail::entropy_offset(d, fine, sign);
  EntropyEstimate e;
  e.d = d;
  e.log_n = log_pair_count(num_entities, num_relations);
  e.h_d = h_fine;
  e.h_m = e.log_n + h_fine;
  e.residual = std::abs(h_fine - h_coarse);
  if (!(e.residual <= tolerance)) {
    throw NumericalError("entropy quadrature did not converge at d=" + std::to_string(d) +
                         " (residual " + std::to_string(e.residual) + ")");
  }
  return e;
}

// alpha * ln(N_e^2 N_r).
inline double min_dimension(double num_entities, double num_relations, const BoundParams& params = {}) {
  return params.alpha() * log_pair_count(num_entities, num_relations);
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

inline LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ConfigError("line fit needs matching inputs of size >= 2");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw ConfigError("line fit needs distinct x values");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (f.intercept + f.slope * x[i]);
    ss_res += r * r;
  }
  f.r2 = syy == 0.0 ? 1.0 : 1.0 - ss_res / syy;
  return f;
}

struct EpsilonFit {
  LinearFit line;
  std::vector<EntropyEstimate> points;

  double epsilon() const noexcept { return line.slope; }
  double alpha() const noexcept { return -1.0 / line.slope; }
};

// Least-squares slope of h_d against d.
inline EpsilonFit fit_epsilon(std::span<const std::size_t> d_values, double num_entities, double num_relations,
                              std::size_t nodes = 200000, Sign sign = Sign::kPositive) {
  std::vector<std::size_t> distinct(d_values.begin(), d_values.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 3) throw ConfigError("epsilon fit needs at least 3 distinct dimensions");
  if (distinct.front() < 3) throw ConfigError("epsilon fit needs every dimension >= 3");
  EpsilonFit fit;
  std::vector<double> xs, ys;
  for (std::size_t d : d_values) {
    fit.points.push_back(model_entropy(d, num_entities, num_relations, nodes, sign));
    xs.push_back(static_cast<double>(d));
    ys.push_back(fit.points.back().h_d);
  }
  fit.line = fit_line(xs, ys);
  return fit;
}

}  // namespace mulde::dimbound
