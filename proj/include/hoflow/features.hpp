#pragma once

#include <cmath>
#include <functional>

#include "hoflow/bspline.hpp"
#include "hoflow/bspline_fit.hpp"
#include "hoflow/core.hpp"
#include "hoflow/gaussian_path.hpp"

namespace hoflow {

// Integrand description of f_N for the kernel quadrature.
inline Source expansion_source(const BSplineExpansion& E) {
  Source s;
  s.d = E.dim();
  AxisLayout ax;
  ax.lo = -E.half_width();
  ax.hi = E.half_width();
  ax.breaks = E.knots();
  s.axes.assign(E.dim(), ax);
  s.f = [&E](const double* y) { return E.eval(y); };
  return s;
}

struct Features {
  double f1_tilde = 0;  // int G f_N
  Vec f2;               // int (x - beta y)/alpha G f_N
  Vec f3;               // int y G f_N
};

inline Features gauss_convolved_features(const Source& src, const ScheduleState& st, const Vec& x,
                                         const QuadratureSpec& q = {}) {
  const KernelMoments m = kernel_moments(src, st, x.data(), q, 1);
  const double sc = std::exp(m.log_scale);
  Features f;
  f.f1_tilde = sc * m.s0;
  f.f2.resize(x.size());
  f.f3.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    f.f2[i] = sc * m.sz[i];
    f.f3[i] = sc * m.sy[i];
  }
  return f;
}

inline Features gauss_convolved_features(const BSplineExpansion& E, const ScheduleState& st, const Vec& x,
                                         const QuadratureSpec& q = {}) {
  return gauss_convolved_features(expansion_source(E), st, x, q);
}

enum class IndicatorMode { PerCoordinate, Norm };
// Full: the coefficients of the posterior-averaged acceleration,
// (alpha'' - alpha'^2/alpha, beta'' - alpha' beta'/alpha). Literal: (alpha'', beta'').
enum class CoefficientMode { Full, Literal };

struct F4Options {
  double clamp = 1e-3;  // N^{-(2s+omega)/d}
  double C5 = 3.0;
  double N = 64;
  IndicatorMode indicator = IndicatorMode::PerCoordinate;
  CoefficientMode coefficients = CoefficientMode::Full;
};

inline std::pair<double, double> f4_coefficients(const ScheduleState& st, CoefficientMode mode) {
  if (mode == CoefficientMode::Literal) return {st.alpha2, st.beta2};
  return acceleration_coefficients(st);
}

// f4 = (c_a f2 + c_b f3)/f1 1[|f2/f1| <= C5 sqrt(log N)] 1[|f3/f1| <= C5], f1 = max(f~, clamp).
inline Vec assemble_f4(const Features& F, const ScheduleState& st, const F4Options& o) {
  if (!(o.clamp > 0)) throw ArgumentError("assemble_f4: clamp must be positive");
  const double f1 = std::max(F.f1_tilde, o.clamp);
  const auto [ca, cb] = f4_coefficients(st, o.coefficients);
  const double lim2 = o.C5 * std::sqrt(std::log(o.N)), lim3 = o.C5;
  const std::size_t d = F.f2.size();
  Vec out(d, 0.0);
  if (o.indicator == IndicatorMode::Norm) {
    double n2 = 0, n3 = 0;
    for (std::size_t i = 0; i < d; ++i) {
      n2 += sq(F.f2[i] / f1);
      n3 += sq(F.f3[i] / f1);
    }
    if (std::sqrt(n2) > lim2 || std::sqrt(n3) > lim3) return out;
    for (std::size_t i = 0; i < d; ++i) out[i] = (ca * F.f2[i] + cb * F.f3[i]) / f1;
    return out;
  }
  for (std::size_t i = 0; i < d; ++i) {
    const double r2 = F.f2[i] / f1, r3 = F.f3[i] / f1;
    if (std::abs(r2) <= lim2 && std::abs(r3) <= lim3) out[i] = (ca * F.f2[i] + cb * F.f3[i]) / f1;
  }
  return out;
}

enum class FieldTarget { Velocity, Acceleration };

using FieldTargetFn = std::function<Vec(const ScheduleState&, const Vec&, const MarginalFields&)>;

// int |u(x) - target_t(x)|^2 p_t(x) dx by composite quadrature in x (d <= 2).
inline double integrated_field_error(const GaussianPath& P, double t, const std::function<Vec(const Vec&)>& u,
                                     const FieldTargetFn& target) {
  const int d = P.dim();
  if (d > 2) throw ArgumentError("integrated_field_error: d <= 2");
  const ScheduleState st = P.state(t);
  const double R = path_extent(P, st);
  const Rule1D r = feature_rule(-R, R, path_features(P, st), st.alpha, d == 1 ? 12 : 6);
  const std::size_t n = r.size();
  const std::size_t total = d == 1 ? n : n * n;
  double s = 0;
  Vec x(d);
  for (std::size_t c = 0; c < total; ++c) {
    x[0] = r.x[c % n];
    double w = r.w[c % n];
    if (d == 2) {
      x[1] = r.x[c / n];
      w *= r.w[c / n];
    }
    const KernelMoments km = P.moments(st, x, 0);
    if (!(km.s0 > 0) || km.log_value0() < std::log(1e-300)) continue;
    const MarginalFields f = GaussianPath::fields_from_moments(st, x, km, false);
    const Vec tv = target(st, x, f);
    const Vec uv = u(x);
    double e2 = 0;
    for (int i = 0; i < d; ++i) e2 += sq(uv[i] - tv[i]);
    s += w * e2 * f.density;
  }
  return s;
}

inline double integrated_field_error(const GaussianPath& P, double t, const std::function<Vec(const Vec&)>& u,
                                     FieldTarget target) {
  return integrated_field_error(P, t, u, [target](const ScheduleState&, const Vec&, const MarginalFields& f) {
    return target == FieldTarget::Velocity ? f.velocity : f.acceleration;
  });
}

struct F4StudyPoint {
  double t = 0;
  double ise = 0;
  double normalized = 0;  // ise / (alpha''^2 log N + beta''^2)
};

// ISE of f4 built from the fitted expansion against the exact posterior-averaged acceleration.
inline F4StudyPoint f4_ise(const GaussianPath& P, const BSplineExpansion& E, double t, const F4Options& o) {
  const ScheduleState st = P.state(t);
  const Source src = expansion_source(E);
  const QuadratureSpec q = P.quad();
  auto u = [&](const Vec& x) { return assemble_f4(gauss_convolved_features(src, st, x, q), st, o); };
  F4StudyPoint r;
  r.t = t;
  r.ise = integrated_field_error(P, t, u, FieldTarget::Acceleration);
  const double norm = sq(st.alpha2) * std::log(o.N) + sq(st.beta2);
  r.normalized = norm > 0 ? r.ise / norm : r.ise;
  return r;
}

// Large-t regime. Past t_star the path is re-read as a Gaussian path whose data
// law is p_{t*} (the smoothed data) and whose schedule is rebase_schedule(s, t_star).
// The marginals agree with the original path; the posterior-averaged acceleration
// belongs to the rebased coupling and is what f4 built from p_{t*} approximates.

// E[a~_t(x|y) | x] with y = x_{t*}. Given x0, (y, x_t) is jointly Gaussian, so
// E[y | x] = beta* m + beta~ alpha*^2 / alpha_t^2 (x - beta_t m) with m = E[x0 | x].
inline Vec rebased_acceleration(const ScheduleState& st, const ScheduleState& st_rebased, double alpha_star,
                                double beta_star, const Vec& x, const Vec& posterior_mean) {
  const auto [A, B] = acceleration_coefficients(st_rebased);
  const double g = st_rebased.beta * alpha_star * alpha_star / (st.alpha * st.alpha);
  Vec a(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double m = posterior_mean[i];
    const double ey = beta_star * m + g * (x[i] - st.beta * m);
    a[i] = A * (x[i] - st_rebased.beta * ey) / st_rebased.alpha + B * ey;
  }
  return a;
}

// Half-width of the box carrying p_{t*}: beta* + 10 alpha* (data on I^d).
inline double smoothed_half_width(const GaussianPath& P, double t_star) {
  const ScheduleState s = P.state(t_star);
  return s.beta + 10 * s.alpha;
}

// Least-squares fit of p_{t*} with at most N terms on [-H, H]^d. The fit runs on
// the unit cube for u -> H^d p_{t*}(H u) and is rescaled back.
inline FitResult fit_smoothed_density(const GaussianPath& P, double t_star, double N, double smoothness = 2.0) {
  const int d = P.dim();
  const ScheduleState s = P.state(t_star);
  const double H = smoothed_half_width(P, t_star);
  const double jac = std::pow(H, d);
  auto g = [&](const double* u) {
    Vec x(u, u + d);
    for (double& v : x) v *= H;
    return jac * P.density_at(s, x);
  };
  BesovParams bp;
  bp.s = smoothness;
  bp.p_prime = 2;
  FitOptions fo;
  fo.adaptive = false;
  FitResult fr = fit_expansion(g, d, N, bp, fo);
  BSplineExpansion E(d, fr.E.ell(), N, 1.0, H);
  Vec c;
  for (const BSplineTerm& t : fr.E.terms()) {
    E.add_term(t);
    c.push_back(t.A / jac);
  }
  E.set_coefficients(c);
  fr.E = std::move(E);
  fr.l2_error /= std::sqrt(jac);
  return fr;
}

// ISE of f4 built from a fit of p_{t*} with the rebased schedule, against the
// rebased posterior-averaged acceleration, at t >= 2 t_star.
inline F4StudyPoint f4_ise_rebased(const GaussianPath& P, double t_star, const BSplineExpansion& E, double t,
                                   const F4Options& o) {
  const Schedule R = rebase_schedule(P.schedule(), t_star);
  const ScheduleState sr = R.eval(t);
  const ScheduleState s0 = P.state(t_star);
  const Source src = expansion_source(E);
  const QuadratureSpec q = P.quad();
  auto u = [&](const Vec& x) { return assemble_f4(gauss_convolved_features(src, sr, x, q), sr, o); };
  F4StudyPoint r;
  r.t = t;
  r.ise = integrated_field_error(P, t, u, [&](const ScheduleState& st, const Vec& x, const MarginalFields& f) {
    return rebased_acceleration(st, sr, s0.alpha, s0.beta, x, f.posterior_mean);
  });
  const double norm = sq(sr.alpha2) * std::log(o.N) + sq(sr.beta2);
  r.normalized = norm > 0 ? r.ise / norm : r.ise;
  return r;
}

}  // namespace hoflow
