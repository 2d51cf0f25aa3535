#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hoflow/features.hpp"
#include "hoflow/relunet.hpp"
#include "hoflow/rng.hpp"

namespace hoflow {

// Checks the assembled u8 network against assemble_f4 when u5, u6, u7 are exact
// lookups of (f1_tilde, f2, f3). The network input is the augmented vector
// [f1_tilde, f2, f3]; the features themselves come from quadrature.
struct AccelAudit {
  double N = 0;
  int points = 0;
  int indicator_violations = 0;  // grid points where assemble_f4 zeroes a coordinate
  double max_error = 0;          // over points with the indicator satisfied
  double budget = 0;             // 5 eps_gadget
  NetworkStats stats;
  AccelNetInfo info;
  bool pass() const { return max_error <= budget && indicator_violations == 0; }
};

struct AccelAuditOptions {
  double eps_gadget = 1e-3;
  double C5 = 3.0;
  double K0 = 1.0;
  double smoothness = 1.0;  // s
  double omega = 0.5;       // clamp exponent N^{-(2s + omega)/d}
  int grid = 1000;          // per axis in d = 1; sqrt(grid) per axis in d = 2
  double half_width_sigmas = 4.0;
};

inline AccelAudit audit_accel_net(const BSplineExpansion& E, const ScheduleState& st, double N,
                                  const AccelAuditOptions& o = {}, const QuadratureSpec& q = {}) {
  const int d = E.dim();
  if (d > 2) throw ArgumentError("audit_accel_net: d <= 2");
  AccelAudit r;
  r.N = N;
  F4Options fo;
  fo.clamp = std::pow(N, -(2 * o.smoothness + o.omega) / d);
  fo.C5 = o.C5;
  fo.N = N;
  // Grid over the bulk of p_t.
  const int per = d == 1 ? o.grid : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(o.grid))));
  const double R = st.beta * E.half_width() + o.half_width_sigmas * st.alpha;
  std::vector<Vec> xs;
  std::vector<Features> feats;
  const Source src = expansion_source(E);
  Vec x(d);
  for (int i = 0; i < per; ++i)
    for (int j = 0; j < (d == 1 ? 1 : per); ++j) {
      x[0] = -R + 2 * R * i / (per - 1);
      if (d == 2) x[1] = -R + 2 * R * j / (per - 1);
      xs.push_back(x);
      feats.push_back(gauss_convolved_features(src, st, x, q));
    }
  r.points = static_cast<int>(xs.size());
  double U6 = 0, U7 = 0;
  for (const auto& F : feats)
    for (int i = 0; i < d; ++i) {
      U6 = std::max(U6, std::abs(F.f2[i]));
      U7 = std::max(U7, std::abs(F.f3[i]));
    }
  const auto [A, B] = f4_coefficients(st, fo.coefficients);
  AccelNetConfig c;
  c.clamp = fo.clamp;
  c.C5 = o.C5;
  c.N = N;
  c.K0 = o.K0;
  c.eps_gadget = o.eps_gadget;
  c.u6_range = 1.01 * U6 + 1e-12;
  c.u7_range = 1.01 * U7 + 1e-12;
  c.a2_range = std::abs(A);
  c.b2_range = std::abs(B);
  const int in = 1 + 2 * d;
  std::vector<int> i6, i7;
  for (int i = 0; i < d; ++i) {
    i6.push_back(1 + i);
    i7.push_back(1 + d + i);
  }
  const ReluNetwork u8 = assemble_accel_net(ReluNetwork::select(in, {0}), ReluNetwork::select(in, i6),
                                            ReluNetwork::select(in, i7), ReluNetwork::constant(in, {A}),
                                            ReluNetwork::constant(in, {B}), c, &r.info);
  r.stats = network_stats(u8);
  r.budget = r.info.error_budget;
  Vec z(in);
  for (std::size_t p = 0; p < xs.size(); ++p) {
    const Features& F = feats[p];
    const Vec ref = assemble_f4(F, st, fo);
    const double f1 = std::max(F.f1_tilde, fo.clamp);
    bool ok = true;
    for (int i = 0; i < d; ++i)
      ok = ok && std::abs(F.f2[i] / f1) <= fo.C5 * std::sqrt(std::log(N)) && std::abs(F.f3[i] / f1) <= fo.C5;
    if (!ok) {
      ++r.indicator_violations;
      continue;
    }
    z[0] = F.f1_tilde;
    for (int i = 0; i < d; ++i) {
      z[1 + i] = F.f2[i];
      z[1 + d + i] = F.f3[i];
    }
    const Vec out = u8.eval(z);
    for (int i = 0; i < d; ++i) r.max_error = std::max(r.max_error, std::abs(out[i] - ref[i]));
  }
  return r;
}

}  // namespace hoflow

namespace hoflow {

// Error and complexity audit of the clip / recip / mult gadgets.
struct GadgetRow {
  std::string gadget;
  std::string params;
  double max_error = 0;
  double tolerance = 0;
  NetworkStats stats;
  std::map<std::string, double> constants;  // fitted constants of the complexity forms
  bool structure_ok = true;                  // stated L / W / S shape
  bool exact_zero = true;                    // mult only
  bool symmetric = true;                     // mult only
  bool pass() const { return max_error <= tolerance && structure_ok && exact_zero && symmetric; }
};

struct GadgetAudit {
  std::vector<GadgetRow> rows;
  bool growth_ok = true;  // fitted constants do not grow along the eps ladder
  bool pass() const {
    for (const auto& r : rows)
      if (!r.pass()) return false;
    return growth_ok;
  }
};

inline GadgetAudit audit_gadgets(const std::vector<double>& recip_eps = {0.1, 0.05, 0.02}, double mult_eps = 0.01,
                                 std::uint64_t seed = 7) {
  GadgetAudit a;
  {
    GadgetRow r;
    r.gadget = "clip";
    r.params = "d=3";
    const Vec lo{-1.0, 0.25, -3.0}, hi{2.0, 0.5, -1.0};
    const ReluNetwork c = build_clip(lo, hi);
    for (double v = -5; v <= 5; v += 0.0625)
      for (int i = 0; i < 3; ++i) {
        Vec x{v, -v, 0.5 * v};
        const Vec y = c.eval(x);
        r.max_error = std::max(r.max_error, std::abs(y[i] - std::min(hi[i], std::max(x[i], lo[i]))));
      }
    r.tolerance = 1e-15;  // rounding of a + ReLU(x - a) - ReLU(x - b) only
    r.stats = network_stats(c);
    r.structure_ok = r.stats.L == 2 && r.stats.W == std::vector<int>{3, 6, 3} && r.stats.S <= 21;
    a.rows.push_back(r);
  }
  std::vector<std::map<std::string, double>> ladder;
  for (double eps : recip_eps) {
    GadgetRow r;
    r.gadget = "recip";
    r.params = "eps=" + std::to_string(eps);
    const ReluNetwork n = build_recip(eps);
    for (int i = 0; i <= 20000; ++i) {
      const double x = eps * std::pow(1 / (eps * eps), i / 20000.0);
      r.max_error = std::max(r.max_error, std::abs(n.eval({x})[0] - 1 / x));
    }
    r.tolerance = eps;
    r.stats = network_stats(n);
    const double lg = std::log(1 / eps);
    r.constants = {{"L/log^2", r.stats.L / (lg * lg)},
                   {"W/log^3", r.stats.max_width() / std::pow(lg, 3)},
                   {"S/log^4", r.stats.S / std::pow(lg, 4)},
                   {"B*eps^2", r.stats.B * eps * eps}};
    ladder.push_back(r.constants);
    a.rows.push_back(r);
  }
  // Smallest eps may not need a constant more than twice the largest eps's.
  if (ladder.size() >= 2)
    for (const auto& [k, v] : ladder.back())
      if (v > 2 * ladder.front().at(k)) a.growth_ok = false;
  Rng rng(seed, "gadget-audit");
  for (int d : {2, 3})
    for (double C : {1.0, 2.0}) {
      GadgetRow r;
      r.gadget = "mult";
      r.params = "d=" + std::to_string(d) + " C=" + std::to_string(static_cast<int>(C));
      const ReluNetwork n = build_mult(d, C, mult_eps);
      r.tolerance = mult_eps;
      const int per = d == 2 ? 33 : 17;
      const double h = 2 * C / (per - 1);  // dyadic for C in {1, 2}
      std::vector<int> idx(d, 0);
      const int total = d == 2 ? per * per : per * per * per;
      for (int e = 0; e < total; ++e) {
        int rem = e;
        Vec x(d);
        for (int i = 0; i < d; ++i) {
          x[i] = -C + h * (rem % per);
          rem /= per;
        }
        const double v = n.eval(x)[0];
        double prod = 1;
        for (double xi : x) prod *= xi;
        r.max_error = std::max(r.max_error, std::abs(v - prod));
        if (prod == 0 && v != 0) r.exact_zero = false;
        Vec y = x;
        std::reverse(y.begin(), y.end());
        if (n.eval(y)[0] != v) r.symmetric = false;
        if (d == 3) {
          std::swap(y[0], y[1]);
          if (n.eval(y)[0] != v) r.symmetric = false;
        }
      }
      // Random points, including exact zeros at random positions.
      for (int e = 0; e < 2000; ++e) {
        Vec x(d);
        for (auto& xi : x) xi = rng.uniform(-C, C);
        double prod = 1;
        for (double xi : x) prod *= xi;
        r.max_error = std::max(r.max_error, std::abs(n.eval(x)[0] - prod));
        x[e % d] = 0.0;
        if (n.eval(x)[0] != 0.0) r.exact_zero = false;
      }
      r.stats = network_stats(n);
      const double lg = d * std::log(C / mult_eps);
      r.constants = {{"L/(d log(C/eps))", r.stats.L / lg},
                     {"W/(48d)", r.stats.max_width() / (48.0 * d)},
                     {"S/(d log(C/eps))", r.stats.S / lg},
                     {"B/C^d", r.stats.B / std::pow(C, d)}};
      r.structure_ok = r.stats.max_width() <= 48 * d;
      a.rows.push_back(r);
    }
  return a;
}

}  // namespace hoflow
