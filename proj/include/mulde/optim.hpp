#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mulde/error.hpp"
#include "mulde/table.hpp"

namespace mulde {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Table> first;   // m
  std::vector<Table> second;  // v
};

// Bias-corrected Adam update of `params` in place. `grads[i]` must have the
// shape of `*params[i].table`. Non-finite gradients abort before any
// parameter is touched.
inline void adam_step(std::span<const NamedTable> params, std::span<const Table* const> grads,
                      AdamState& state) {
  if (params.size() != grads.size()) throw ConfigError("adam_step: params/grads count mismatch");
  if (state.first.empty()) {
    for (const auto& p : params) {
      state.first.emplace_back(p.table->rows, p.table->cols);
      state.second.emplace_back(p.table->rows, p.table->cols);
    }
  }
  if (state.first.size() != params.size()) throw ConfigError("adam_step: optimizer state does not match params");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Table& g = *grads[i];
    const Table& p = *params[i].table;
    if (g.rows != p.rows || g.cols != p.cols || state.first[i].size() != p.size()) {
      throw ConfigError("adam_step: shape mismatch for table '" + params[i].name + "'");
    }
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (!std::isfinite(g.values[j])) {
        std::ostringstream msg;
        msg << "non-finite gradient " << g.values[j] << " in table '" << params[i].name << "' at row "
            << j / std::max<std::size_t>(g.cols, 1) << ", col " << j % std::max<std::size_t>(g.cols, 1)
            << " (step " << state.step + 1 << ")";
        throw NumericalError(msg.str());
      }
    }
  }

  ++state.step;
  const auto& cfg = state.config;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].table->values;
    const auto& g = grads[i]->values;
    auto& m = state.first[i].values;
    auto& v = state.second[i].values;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

// lambda * sum(theta^2); adds 2 * lambda * theta to `grad` when given.
inline double l2_penalty(std::span<const double> params, double lambda, std::span<double> grad = {}) {
  if (lambda < 0.0) throw ConfigError("L2 coefficient must be non-negative");
  if (lambda == 0.0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    sum += params[i] * params[i];
    if (!grad.empty()) grad[i] += 2.0 * lambda * params[i];
  }
  return lambda * sum;
}

struct GradCheckOptions {
  double step = 1e-6;
  // Coordinates sampled per table; tables at most this size are checked exhaustively.
  std::size_t coords_per_table = 48;
  // Denominator floor for the relative error so near-zero gradients compare absolutely.
  double floor = 1e-5;
  std::uint64_t seed = 17;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_table;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

// Compares analytic gradients against central differences of `loss` over
// sampled coordinates. `loss` must read the (temporarily perturbed) params.
inline GradCheckResult grad_check(const std::function<double()>& loss, std::span<const NamedTable> params,
                                  std::span<const Table* const> analytic, GradCheckOptions opt = {}) {
  if (params.size() != analytic.size()) throw ConfigError("grad_check: params/grads count mismatch");
  GradCheckResult res;
  std::uint64_t rng = opt.seed;
  for (std::size_t ti = 0; ti < params.size(); ++ti) {
    auto& values = params[ti].table->values;
    const auto& grad = analytic[ti]->values;
    if (values.empty()) continue;
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > opt.coords_per_table) {
      for (std::size_t k = 0; k < opt.coords_per_table; ++k) {
        rng = mix_seed(rng);
        std::swap(coords[k], coords[k + rng % (coords.size() - k)]);
      }
      coords.resize(opt.coords_per_table);
    }
    for (std::size_t j : coords) {
      const double saved = values[j];
      values[j] = saved + opt.step;
      const double up = loss();
      values[j] = saved - opt.step;
      const double down = loss();
      values[j] = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = grad[j];
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.floor});
      const double err = std::abs(a - numeric) / denom;
      ++res.checked;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_table = params[ti].name;
        res.worst_index = j;
        res.analytic = a;
        res.numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace mulde
