#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <utility>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "hoflow/core.hpp"

namespace hoflow {

struct Rule1D {
  Vec x;
  Vec w;
  std::size_t size() const { return x.size(); }
  void append(const Rule1D& o) {
    x.insert(x.end(), o.x.begin(), o.x.end());
    w.insert(w.end(), o.w.begin(), o.w.end());
  }
};

namespace detail {

inline Rule1D compute_gauss_legendre(int n) {
  Rule1D r;
  r.x.resize(n);
  r.w.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double dp = 0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1, p1 = 0;
      for (int k = 1; k <= n; ++k) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * k - 1) * z * p1 - (k - 1.0) * p2) / k;
      }
      dp = n * (z * p0 - p1) / (z * z - 1);
      const double dz = p0 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    double p0 = 1, p1 = 0;
    for (int k = 1; k <= n; ++k) {
      const double p2 = p1;
      p1 = p0;
      p0 = ((2.0 * k - 1) * z * p1 - (k - 1.0) * p2) / k;
    }
    dp = n * (z * p0 - p1) / (z * z - 1);
    r.x[i] = -z;
    r.x[n - 1 - i] = z;
    r.w[i] = r.w[n - 1 - i] = 2.0 / ((1 - z * z) * dp * dp);
  }
  if (n % 2 == 1) r.x[n / 2] = 0.0;
  return r;
}

}  // namespace detail

// Gauss-Legendre rule on [-1, 1], cached per node count.
inline const Rule1D& gauss_legendre(int n) {
  static std::mutex mu;
  static std::map<int, std::unique_ptr<Rule1D>> cache;
  if (n < 1) throw ArgumentError("gauss_legendre: n must be >= 1");
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<Rule1D>(detail::compute_gauss_legendre(n));
  return *slot;
}

// Gauss-Legendre on [a, b], appended to `out`.
inline void append_panel(Rule1D& out, double a, double b, int n) {
  if (!(b > a)) return;
  const Rule1D& g = gauss_legendre(n);
  const double h = 0.5 * (b - a), c = 0.5 * (a + b);
  for (std::size_t i = 0; i < g.size(); ++i) {
    out.x.push_back(c + h * g.x[i]);
    out.w.push_back(h * g.w[i]);
  }
}

struct GradingSpec {
  double ratio = 0.25;  // geometric shrink factor toward a graded point
  int levels = 16;
  int nodes = 10;
};

// Composite rule on [a, b]. Panels split at `breaks`; panels touching a point
// of `graded` are subdivided geometrically toward it (integrable singularities).
inline Rule1D composite_rule(double a, double b, Vec breaks, const Vec& graded, int nodes_total,
                             int min_nodes_per_panel = 8, const GradingSpec& gs = {}) {
  Rule1D out;
  if (!(b > a)) return out;
  breaks.push_back(a);
  breaks.push_back(b);
  for (double g : graded) breaks.push_back(g);
  std::sort(breaks.begin(), breaks.end());
  Vec pts;
  for (double v : breaks) {
    if (v < a || v > b) continue;
    if (!pts.empty() && v - pts.back() <= 1e-14 * std::max(1.0, std::abs(v))) continue;
    pts.push_back(v);
  }
  if (pts.size() < 2) return out;
  const int panels = static_cast<int>(pts.size()) - 1;
  const int per = std::max(min_nodes_per_panel, (nodes_total + panels - 1) / panels);
  auto is_graded = [&](double v) {
    for (double g : graded)
      if (std::abs(g - v) <= 1e-14 * std::max(1.0, std::abs(v))) return true;
    return false;
  };
  for (int p = 0; p < panels; ++p) {
    const double lo = pts[p], hi = pts[p + 1];
    const bool gl = is_graded(lo), gh = is_graded(hi);
    if (!gl && !gh) {
      append_panel(out, lo, hi, per);
      continue;
    }
    // Split in half when both ends are graded, then grade each half.
    const double mid = 0.5 * (lo + hi);
    auto graded_side = [&](double s, double e) {
      // s is the singular end; geometric pieces s + (e-s) r^k.
      // Wide outer pieces keep their share of the panel's node budget.
      double outer = e;
      for (int k = 1; k <= gs.levels; ++k) {
        const double inner = s + (e - s) * std::pow(gs.ratio, k);
        const int n = std::max(gs.nodes, static_cast<int>(std::ceil(per * std::abs(outer - inner) / (hi - lo))));
        if (s < e)
          append_panel(out, inner, outer, n);
        else
          append_panel(out, outer, inner, n);
        outer = inner;
      }
      if (s < e)
        append_panel(out, s, outer, gs.nodes);
      else
        append_panel(out, outer, s, gs.nodes);
    };
    if (gl && gh) {
      graded_side(lo, mid);
      graded_side(hi, mid);
    } else if (gl) {
      graded_side(lo, hi);
    } else {
      graded_side(hi, lo);
    }
  }
  return out;
}

// Adaptive Gauss-Kronrod on [a, b] (b may be +inf). Returns the estimate;
// `error` receives the absolute error estimate.
template <class F>
double integrate_adaptive(F f, double a, double b, double rel_tol = 1e-14,
                          double* error = nullptr) {
  double err = 0;
  const double v =
      boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 30, rel_tol, &err);
  if (error) *error = err;
  return v;
}

}  // namespace hoflow
