#pragma once

// Poincare ball of curvature -c (c > 0): Mobius addition, geodesic distance,
// origin exponential map and interior projection, each with a
// vector-Jacobian product. The *_vjp functions ACCUMULATE into their
// gradient outputs.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mulde/error.hpp"

namespace mulde::poincare {

inline constexpr double kBallEps = 1e-5;
inline constexpr double kArtanhClamp = 1.0 - 1e-10;
inline constexpr double kMinDenominator = 1e-15;

inline double softplus(double x) noexcept { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double inverse_softplus(double y) noexcept { return y > 30.0 ? y : std::log(std::expm1(y)); }
inline double sigmoid(double x) noexcept {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Curvature magnitude stored as an unconstrained parameter; c = softplus(raw) > 0.
struct Curvature {
  double raw = 0.0;

  static Curvature from_value(double c) { return Curvature{inverse_softplus(c)}; }
  double value() const noexcept { return softplus(raw); }
  // dc/draw
  double slope() const noexcept { return sigmoid(raw); }
};

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}
inline double sq_norm(std::span<const double> a) noexcept { return dot(a, a); }

// Scalar factor lambda(|v|, c) such that a map sends v to lambda * v, plus
// its partial derivatives.
struct RadialScale {
  double lambda = 1.0;
  double d_norm = 0.0;
  double d_c = 0.0;
};

inline RadialScale projection_scale(double norm, double c) noexcept {
  const double s = std::sqrt(c);
  if (s * norm < 1.0 - kBallEps) return {};
  const double lambda = (1.0 - kBallEps) / (s * norm);
  return {lambda, -lambda / norm, -lambda / (2.0 * c)};
}

// expmap0 followed by projection: tanh(s|v|) / (s|v|), clipped to the margin.
inline RadialScale expmap0_scale(double norm, double c) noexcept {
  if (norm == 0.0) return {};
  const double s = std::sqrt(c);
  const double u = s * norm;
  const double t = std::tanh(u);
  if (t >= 1.0 - kBallEps) {
    const double lambda = (1.0 - kBallEps) / u;
    return {lambda, -lambda / norm, -lambda / (2.0 * c)};
  }
  double f, df;
  if (u < 1e-3) {
    const double u2 = u * u;
    f = 1.0 - u2 / 3.0 + 2.0 * u2 * u2 / 15.0;
    df = -2.0 * u / 3.0 + 8.0 * u2 * u / 15.0;
  } else {
    f = t / u;
    df = (1.0 - t * t) / u - t / (u * u);
  }
  return {f, df * s, df * norm / (2.0 * s)};
}

// VJP of out = lambda(|v|, c) * v.
inline void radial_vjp(std::span<const double> v, const RadialScale& rs, std::span<const double> g,
                       std::span<double> gv, double& gc) noexcept {
  const double gdotv = dot(g, v);
  const double norm = std::sqrt(sq_norm(v));
  const double coef = norm > 0.0 ? gdotv * rs.d_norm / norm : 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) gv[i] += rs.lambda * g[i] + coef * v[i];
  gc += gdotv * rs.d_c;
}

inline void check_finite(std::span<const double> x, const char* what) {
  for (double v : x) {
    if (!std::isfinite(v)) throw NumericalError(std::string(what) + ": non-finite input");
  }
}

// Rescales x onto norm (1 - eps)/sqrt(c) when it reaches the boundary margin.
inline void project_to_ball(std::span<const double> x, double c, std::span<double> out) {
  check_finite(x, "project_to_ball");
  const auto rs = projection_scale(std::sqrt(sq_norm(x)), c);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = rs.lambda * x[i];
}

inline void project_vjp(std::span<const double> x, double c, std::span<const double> g,
                        std::span<double> gx, double& gc) noexcept {
  radial_vjp(x, projection_scale(std::sqrt(sq_norm(x)), c), g, gx, gc);
}

// tanh(sqrt(c)|v|) v / (sqrt(c)|v|), projected into the ball.
inline void expmap0(std::span<const double> v, double c, std::span<double> out) {
  check_finite(v, "expmap0");
  const auto rs = expmap0_scale(std::sqrt(sq_norm(v)), c);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = rs.lambda * v[i];
}

inline void expmap0_vjp(std::span<const double> v, double c, std::span<const double> g,
                        std::span<double> gv, double& gc) noexcept {
  radial_vjp(v, expmap0_scale(std::sqrt(sq_norm(v)), c), g, gv, gc);
}

struct MobiusTerms {
  double xy, x2, y2, a, b, den;
};

inline MobiusTerms mobius_terms(std::span<const double> x, std::span<const double> y, double c) {
  MobiusTerms t{};
  t.xy = dot(x, y);
  t.x2 = sq_norm(x);
  t.y2 = sq_norm(y);
  t.a = 1.0 + 2.0 * c * t.xy + c * t.y2;
  t.b = 1.0 - c * t.x2;
  t.den = 1.0 + 2.0 * c * t.xy + c * c * t.x2 * t.y2;
  if (!(t.den >= kMinDenominator)) throw NumericalError("mobius_add: degenerate denominator");
  return t;
}

// x (+) y without the final projection.
inline void mobius_add_raw(std::span<const double> x, std::span<const double> y, double c,
                           std::span<double> out) {
  const auto t = mobius_terms(x, y, c);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (t.a * x[i] + t.b * y[i]) / t.den;
}

inline void mobius_add(std::span<const double> x, std::span<const double> y, double c,
                       std::span<double> out) {
  mobius_add_raw(x, y, c, out);
  project_to_ball(out, c, out);
}

inline void mobius_add_raw_vjp(std::span<const double> x, std::span<const double> y, double c,
                               std::span<const double> g, std::span<double> gx, std::span<double> gy,
                               double& gc) {
  const auto t = mobius_terms(x, y, c);
  const double gx_dot = dot(g, x);
  const double gy_dot = dot(g, y);
  const double g_a = gx_dot / t.den;
  const double g_b = gy_dot / t.den;
  const double g_den = -(t.a * gx_dot + t.b * gy_dot) / (t.den * t.den);
  const double g_xy = 2.0 * c * (g_a + g_den);
  const double g_x2 = -c * g_b + c * c * t.y2 * g_den;
  const double g_y2 = c * g_a + c * c * t.x2 * g_den;
  gc += g_a * (2.0 * t.xy + t.y2) - g_b * t.x2 + g_den * (2.0 * t.xy + 2.0 * c * t.x2 * t.y2);
  for (std::size_t i = 0; i < x.size(); ++i) {
    gx[i] += t.a / t.den * g[i] + g_xy * y[i] + 2.0 * g_x2 * x[i];
    gy[i] += t.b / t.den * g[i] + g_xy * x[i] + 2.0 * g_y2 * y[i];
  }
}

// (2/sqrt(c)) artanh(sqrt(c) |(-x) (+) y|), argument clamped below 1.
inline double hyp_distance(std::span<const double> x, std::span<const double> y, double c) {
  const double xy = -dot(x, y);
  const double x2 = sq_norm(x);
  const double y2 = sq_norm(y);
  const double a = 1.0 + 2.0 * c * xy + c * y2;
  const double b = 1.0 - c * x2;
  const double den = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
  double num2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = -a * x[i] + b * y[i];
    num2 += w * w;
  }
  const double s = std::sqrt(c);
  const double arg = std::clamp(s * std::sqrt(num2) / den, 0.0, kArtanhClamp);
  return 2.0 / s * std::atanh(arg);
}

inline void hyp_distance_vjp(std::span<const double> x, std::span<const double> y, double c,
                             double g_dist, std::span<double> gx, std::span<double> gy, double& gc) {
  const std::size_t d = x.size();
  thread_local std::vector<double> neg_x, w, gu;
  neg_x.assign(d, 0.0);
  w.assign(d, 0.0);
  gu.assign(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) neg_x[i] = -x[i];
  mobius_add_raw(neg_x, y, c, w);
  const double z = std::sqrt(sq_norm(w));
  const double s = std::sqrt(c);
  const double raw = s * z;
  const bool clamped = raw > kArtanhClamp;
  const double arg = clamped ? kArtanhClamp : raw;
  const double at = std::atanh(arg);
  double g_s = g_dist * (-2.0 * at / (s * s));
  double g_z = 0.0;
  if (!clamped) {
    const double inv = 1.0 / (1.0 - arg * arg);
    g_s += g_dist * 2.0 / s * z * inv;
    g_z = g_dist * 2.0 * inv;
  }
  gc += g_s / (2.0 * s);
  if (g_z == 0.0 || z == 0.0) return;
  for (std::size_t i = 0; i < d; ++i) w[i] *= g_z / z;
  mobius_add_raw_vjp(neg_x, y, c, w, gu, gy, gc);
  for (std::size_t i = 0; i < d; ++i) gx[i] -= gu[i];
}

}  // namespace mulde::poincare
