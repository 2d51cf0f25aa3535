#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "hoflow/bspline.hpp"
#include "hoflow/core.hpp"
#include "hoflow/density.hpp"
#include "hoflow/quadrature.hpp"

namespace hoflow {

enum class FitStructure { Single, TwoPart };

struct FitOptions {
  int ell = 3;
  FitStructure structure = FitStructure::Single;
  bool adaptive = true;     // adaptive levels above K when the smoothness ladder calls for them
  double ridge = 1e-10;
  int nodes_per_panel = 20;  // per axis, d = 1; higher dimensions use 6
  Vec singular;              // per-axis points where f is rough (graded quadrature)
  double kappa = 0.5, delta = 0.1;  // strip width N^-(1 - kappa delta) and contraction N^-(1/kappa - delta)/d
  double s_check = 0;        // boundary-strip smoothness for two-part reports (0: use s)
};

struct FitResult {
  BSplineExpansion E;
  double l2_error = 0;
  int K = 0;                // top uniform level
  int K_star = 0;           // top adaptive level (= K without adaptive terms)
  std::vector<int> n_k;     // adaptive terms per level K+1..K*
  double nu = kInf;         // adaptive decay exponent (s - omega)/(2 omega)
  double coefficient_bound = 0;  // N^{(1/nu + 1/d) max(d/p' - s, 0)}
};

// Half-width of the interior cube I^d_N; the boundary strip is its complement in I^d.
inline double strip_inner(double N, const FitOptions& o) { return 1.0 - std::pow(N, -(1.0 - o.kappa * o.delta)); }

// Tensor composite Gauss-Legendre rule on I^d with panels at the knots of E,
// the strip edge and the two-part contraction edge; graded toward `singular`.
struct TensorRule {
  int d = 1;
  std::vector<Vec> pts;
  Vec w;
};

inline TensorRule fit_rule(const BSplineExpansion& E, const FitOptions& o) {
  const int d = E.dim();
  Vec br = E.knots();
  const double inner = strip_inner(E.budget(), o);
  br.push_back(-inner);
  br.push_back(inner);
  Vec g;
  for (double s : o.singular)
    if (s > -1 && s < 1) g.push_back(s);
  const int npp = d == 1 ? o.nodes_per_panel : 6;
  const GradingSpec gs = d == 1 ? GradingSpec{0.5, 30, 20} : GradingSpec{0.25, 8, 6};
  const Rule1D r = composite_rule(-1, 1, br, g, 0, npp, gs);
  TensorRule t;
  t.d = d;
  std::size_t total = 1;
  for (int i = 0; i < d; ++i) total *= r.size();
  t.pts.reserve(total);
  t.w.reserve(total);
  for (std::size_t c = 0; c < total; ++c) {
    std::size_t rem = c;
    Vec x(d);
    double w = 1;
    for (int i = 0; i < d; ++i) {
      x[i] = r.x[rem % r.size()];
      w *= r.w[rem % r.size()];
      rem /= r.size();
    }
    t.pts.push_back(std::move(x));
    t.w.push_back(w);
  }
  return t;
}

namespace detail {

inline void add_uniform_level(BSplineExpansion& E, int k, SupportFlag flag) {
  const int d = E.dim();
  const auto [lo, hi] = level_shift_range(k, E.ell());
  const long long n = level_size(k, E.ell(), d);
  for (long long c = 0; c < n; ++c) {
    long long rem = c;
    BSplineTerm t;
    t.k.assign(d, k);
    t.j.resize(d);
    for (int i = 0; i < d; ++i) {
      t.j[i] = lo + static_cast<int>(rem % (hi - lo + 1));
      rem /= (hi - lo + 1);
    }
    t.flag = flag;
    E.add_term(std::move(t));
  }
}

// Sparse design matrix B (points x terms) using each term's local support.
inline Eigen::SparseMatrix<double> design_matrix(const BSplineExpansion& E, const TensorRule& R) {
  std::vector<Eigen::Triplet<double>> trip;
  const int d = E.dim(), ell = E.ell();
  const double inner_c = E.contraction();
  for (std::size_t m = 0; m < E.size(); ++m) {
    const BSplineTerm& t = E.terms()[m];
    // Support of the term in x: [ (j)/2^k, (j+ell+1)/2^k ] per axis.
    for (std::size_t p = 0; p < R.pts.size(); ++p) {
      const Vec& x = R.pts[p];
      double v = 1, ninf = 0;
      for (int i = 0; i < d && v != 0; ++i) {
        const double u = std::ldexp(x[i], t.k[i]) - t.j[i];
        v = (u < 0 || u > ell + 1) ? 0.0 : v * cardinal_bspline(ell, u);
        ninf = std::max(ninf, std::abs(x[i]));
      }
      if (v == 0) continue;
      if (t.flag == SupportFlag::Contracted && ninf > inner_c) continue;
      trip.emplace_back(static_cast<int>(p), static_cast<int>(m), v);
    }
  }
  Eigen::SparseMatrix<double> B(static_cast<int>(R.pts.size()), static_cast<int>(E.size()));
  B.setFromTriplets(trip.begin(), trip.end());
  return B;
}

inline Vec solve_coefficients(const Eigen::SparseMatrix<double>& B, const Vec& w, const Vec& fv, double ridge) {
  const Eigen::Map<const Eigen::VectorXd> W(w.data(), w.size()), F(fv.data(), fv.size());
  Eigen::SparseMatrix<double> BW = W.asDiagonal() * B;
  Eigen::MatrixXd G = Eigen::MatrixXd(B.transpose() * BW);
  G.diagonal().array() += ridge;
  const Eigen::VectorXd rhs = BW.transpose() * F;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
  Eigen::VectorXd A = ldlt.solve(rhs);
  // Iterated Tikhonov: two refinement steps remove the ridge bias on well-determined directions.
  G.diagonal().array() -= ridge;
  for (int it = 0; it < 2; ++it) A += ldlt.solve(rhs - G * A);
  return Vec(A.data(), A.data() + A.size());
}

// Level-k candidate shifts: the whole level, or the children of the previous level's picks.
inline std::vector<std::vector<int>> adaptive_candidates(int d, int ell, int k, bool whole_level,
                                                         const std::vector<std::vector<int>>& parents) {
  const auto [lo, hi] = level_shift_range(k, ell);
  std::set<std::vector<int>> out;
  if (whole_level) {
    const long long n = level_size(k, ell, d);
    for (long long c = 0; c < n; ++c) {
      long long rem = c;
      std::vector<int> j(d);
      for (int i = d - 1; i >= 0; --i) {
        j[i] = lo + static_cast<int>(rem % (hi - lo + 1));
        rem /= (hi - lo + 1);
      }
      out.insert(j);
    }
  } else {
    for (const auto& p : parents) {
      // Children overlap the parent support [2 j_p, 2 j_p + 2 ell + 2] / 2^k.
      std::vector<int> first(d), span(d);
      long long cnt = 1;
      for (int i = 0; i < d; ++i) {
        first[i] = std::max(lo, 2 * p[i] - ell);
        span[i] = std::min(hi, 2 * p[i] + 2 * ell + 1) - first[i] + 1;
        cnt *= std::max(span[i], 0);
      }
      for (long long c = 0; c < cnt; ++c) {
        long long rem = c;
        std::vector<int> j(d);
        for (int i = 0; i < d; ++i) {
          j[i] = first[i] + static_cast<int>(rem % span[i]);
          rem /= span[i];
        }
        out.insert(j);
      }
    }
  }
  return {out.begin(), out.end()};
}

// |<f - E, M_{k,j}>| / |M_{k,j}| on I^d, with a local rule on the term's support.
inline double residual_projection(const std::function<double(const double*)>& f, const BSplineExpansion& E, int k,
                                  const std::vector<int>& j, int ell) {
  const int d = E.dim();
  const Rule1D& g = gauss_legendre(d == 1 ? 8 : 5);
  std::vector<Rule1D> ax(d);
  for (int i = 0; i < d; ++i)
    for (int m = 0; m <= ell; ++m) {
      const double a = std::max(-1.0, std::ldexp(static_cast<double>(j[i] + m), -k));
      const double b = std::min(1.0, std::ldexp(static_cast<double>(j[i] + m + 1), -k));
      if (b > a) append_panel(ax[i], a, b, static_cast<int>(g.size()));
    }
  std::size_t total = 1;
  for (int i = 0; i < d; ++i) total *= ax[i].size();
  if (total == 0) return 0.0;
  double ip = 0, nn = 0;
  Vec x(d);
  for (std::size_t c = 0; c < total; ++c) {
    std::size_t rem = c;
    double w = 1, m = 1;
    for (int i = 0; i < d; ++i) {
      const std::size_t a = rem % ax[i].size();
      rem /= ax[i].size();
      x[i] = ax[i].x[a];
      w *= ax[i].w[a];
      m *= cardinal_bspline(ell, std::ldexp(x[i], k) - j[i]);
    }
    ip += w * m * (f(x.data()) - E.eval(x.data()));
    nn += w * m * m;
  }
  return nn > 0 ? std::abs(ip) / std::sqrt(nn) : 0.0;
}

}  // namespace detail

// Squared-L2 distance between E and f on `region` of I^d using the fit rule.
enum class L2Region { Full, BoundaryStrip };

inline double l2_error(const BSplineExpansion& E, const std::function<double(const double*)>& f, L2Region region,
                       const FitOptions& o = {}) {
  const TensorRule R = fit_rule(E, o);
  const double inner = strip_inner(E.budget(), o);
  double s = 0;
  for (std::size_t p = 0; p < R.pts.size(); ++p) {
    if (region == L2Region::BoundaryStrip && norm_inf(R.pts[p]) < inner) continue;
    s += R.w[p] * sq(E.eval(R.pts[p].data()) - f(R.pts[p].data()));
  }
  return std::sqrt(s);
}

// Least-squares B-spline expansion with at most N terms: uniform levels 0..K,
// then (when p' < 2) adaptive levels K+1..K* with n_k ~ 2^{Kd - nu (k-K) d}
// terms each, chosen greedily by residual projection.
inline FitResult fit_expansion(const std::function<double(const double*)>& f, int d, double N, const BesovParams& bp,
                               const FitOptions& o = {}) {
  bp.validate();
  if (N < std::pow(2.0, d)) throw ConfigError("fit_expansion: budget N < 2^d");
  const bool two = o.structure == FitStructure::TwoPart;
  const double budget = two ? N / 2 : N;
  if (static_cast<double>(level_size(0, o.ell, d)) > budget)
    throw ConfigError("fit_expansion: budget too small for the level-0 cover");
  const double contraction = two ? 1.0 - std::pow(N, -(1.0 / o.kappa - o.delta) / d) : 1.0;
  FitResult res;
  res.E = BSplineExpansion(d, o.ell, N, contraction);
  double used = 0;
  int K = -1;
  while (K < 20 && used + level_size(K + 1, o.ell, d) <= budget) {
    ++K;
    used += level_size(K, o.ell, d);
    detail::add_uniform_level(res.E, K, two ? SupportFlag::Contracted : SupportFlag::Full);
  }
  if (two) {
    double used2 = 0;
    for (int k = 0; k <= 20 && used2 + level_size(k, o.ell, d) <= N - used; ++k) {
      used2 += level_size(k, o.ell, d);
      detail::add_uniform_level(res.E, k, SupportFlag::Full);
    }
    used += used2;
  }
  res.K = res.K_star = K;

  // Approximation-theory omega = d (1/p' - 1/2)_+: zero (no adaptivity) when p' >= 2.
  const double om = d * std::max(1.0 / bp.p_prime - 0.5, 0.0);
  res.nu = om > 0 ? (bp.s - om) / (2 * om) : kInf;
  res.coefficient_bound = std::pow(N, (1 / res.nu + 1.0 / d) * std::max(d / bp.p_prime - bp.s, 0.0));

  auto refit = [&](BSplineExpansion& E) {
    const TensorRule R = fit_rule(E, o);
    Vec fv(R.pts.size());
    for (std::size_t p = 0; p < R.pts.size(); ++p) fv[p] = f(R.pts[p].data());
    const auto B = detail::design_matrix(E, R);
    E.set_coefficients(detail::solve_coefficients(B, R.w, fv, o.ridge));
  };
  refit(res.E);

  if (o.adaptive && std::isfinite(res.nu) && res.nu > 0 && !two) {
    double remaining = N - used;
    std::vector<std::vector<int>> parents;  // shifts selected at the previous adaptive level
    for (int k = K + 1; k <= K + 16 && remaining >= 1; ++k) {
      const double want = std::floor(std::pow(2.0, K * d - res.nu * (k - K) * d));
      const int nk = static_cast<int>(std::min(want, remaining));
      if (nk < 1) break;
      const std::vector<std::vector<int>> cands = detail::adaptive_candidates(d, o.ell, k, k == K + 1, parents);
      Vec score(cands.size());
      for (std::size_t c = 0; c < cands.size(); ++c)
        score[c] = detail::residual_projection(f, res.E, k, cands[c], o.ell);
      std::vector<int> order(cands.size());
      std::iota(order.begin(), order.end(), 0);
      // Candidates are in lexicographic j order, so the stable sort breaks ties lexicographically.
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return score[a] > score[b]; });
      parents.clear();
      const int take = std::min<int>(nk, static_cast<int>(cands.size()));
      for (int c = 0; c < take; ++c) {
        res.E.add_term({std::vector<int>(d, k), cands[order[c]], 0.0, SupportFlag::Full});
        parents.push_back(cands[order[c]]);
      }
      std::sort(parents.begin(), parents.end());
      res.n_k.push_back(take);
      res.K_star = k;
      remaining -= take;
      used += take;
      refit(res.E);
    }
  }
  res.l2_error = l2_error(res.E, f, L2Region::Full, o);
  return res;
}

inline FitResult fit_expansion(const Density& D, double N, FitStructure structure = FitStructure::Single,
                               FitOptions o = {}) {
  o.structure = structure;
  const Source src = D.source();
  for (double s : src.axes[0].singular) o.singular.push_back(s);
  return fit_expansion([&D](const double* y) { return D.eval(y); }, D.dim(), N, D.besov(), o);
}

}  // namespace hoflow
