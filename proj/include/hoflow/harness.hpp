#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <algorithm>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "hoflow/accel_audit.hpp"
#include "hoflow/bspline_fit.hpp"
#include "hoflow/config.hpp"
#include "hoflow/features.hpp"
#include "hoflow/gaussian_path.hpp"
#include "hoflow/report.hpp"
#include "hoflow/trainer.hpp"

namespace hoflow {

// ---------------------------------------------------------------------------
// Work pool. Cells write into their own slot; results come back in index order
// so reports are identical for any number of jobs.

inline int default_jobs() {
  if (const char* env = std::getenv("HOFLOW_JOBS")) {
    const int j = std::atoi(env);
    if (j >= 1) return j;
  }
  return 1;
}

template <class F>
auto parallel_map(std::size_t n, int jobs, F f) -> std::vector<decltype(f(std::size_t{0}))> {
  using R = decltype(f(std::size_t{0}));
  std::vector<R> out(n);
  std::vector<std::exception_ptr> errs(n);
  auto run = [&](std::size_t i) {
    try {
      out[i] = f(i);
    } catch (...) {
      errs[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min<std::size_t>(std::max(jobs, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) run(i);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---------------------------------------------------------------------------
// Verify suites.

inline const std::vector<std::string>& verify_suites() {
  static const std::vector<std::string> s = {"schedule-assumptions", "path-bounds", "gamma",  "tails",
                                             "pde-residuals",        "gadgets",     "det-derivative"};
  return s;
}

inline Verdict verdict_of(bool ok) { return ok ? Verdict::Pass : Verdict::Fail; }

inline CheckRow make_row(std::string check, double t, Vec x, double lhs, double rhs, bool ok) {
  CheckRow r;
  r.check = std::move(check);
  r.t = t;
  r.x = std::move(x);
  r.lhs = lhs;
  r.rhs = rhs;
  r.ratio = rhs != 0 ? lhs / rhs : (lhs == 0 ? 0.0 : kInf);
  r.verdict = verdict_of(ok);
  return r;
}

// Summary verdict over rows: FAIL if any row fails, NOT-APPLICABLE if all are.
inline void summarize(CheckResult& c) {
  bool any_fail = false, all_na = !c.rows.empty();
  double worst = 0;
  for (const auto& r : c.rows) {
    any_fail = any_fail || r.verdict == Verdict::Fail;
    all_na = all_na && r.verdict == Verdict::NotApplicable;
    if (r.verdict != Verdict::NotApplicable && std::isfinite(r.ratio) && r.ratio > worst) {
      worst = r.ratio;
      c.witness_t = r.t;
    }
  }
  c.worst_ratio = worst;
  c.verdict = any_fail ? Verdict::Fail : (all_na ? Verdict::NotApplicable : Verdict::Pass);
}

inline CheckResult from_bound_report(const std::string& suite, const BoundReport& b) {
  CheckResult c;
  c.suite = suite;
  c.name = b.bound_name;
  c.verdict = b.verdict;
  c.fitted_constant = b.fitted_constant;
  c.worst_ratio = b.worst_ratio;
  c.witness_t = b.witness_t;
  c.note = b.note;
  for (const auto& r : b.rows) {
    CheckRow row;
    row.check = b.bound_name;
    row.t = r.t;
    row.x = r.x;
    row.lhs = r.lhs;
    row.rhs = r.rhs;
    row.ratio = r.ratio;
    row.verdict = b.verdict == Verdict::NotApplicable ? Verdict::NotApplicable : verdict_of(r.pass);
    c.rows.push_back(row);
  }
  return c;
}

// Runs one check; any error becomes a FAIL entry instead of aborting the suite.
inline CheckResult guarded(const std::string& suite, const std::string& name, const std::function<CheckResult()>& f) {
  try {
    CheckResult c = f();
    c.suite = suite;
    if (c.name.empty()) c.name = name;
    return c;
  } catch (const std::exception& e) {
    CheckResult c;
    c.suite = suite;
    c.name = name;
    c.verdict = Verdict::Fail;
    c.note = std::string("error: ") + e.what();
    c.rows.push_back(make_row(name, kNaN, {}, kNaN, kNaN, false));
    return c;
  }
}

// Partition times oriented so that the data end is the small-t end.
inline Vec oriented_partition(const Schedule& s, const TimeGrid& g) {
  Vec ts = g.partition();
  if (s.noise_time() == 0.0) {
    for (double& t : ts) t = 1.0 - t;
    std::sort(ts.begin(), ts.end());
  }
  Vec out;
  for (double t : ts)
    if (s.alpha(t) > 0) out.push_back(t);
  return out;
}

inline double psi_equality_tolerance() { return 1e-9; }

struct VerifyCell {
  std::string suite, name;
  std::function<CheckResult()> run;
};

inline std::vector<VerifyCell> verify_cells(const ExperimentConfig& cfg, const std::string& suite) {
  std::vector<VerifyCell> cells;
  auto add = [&](const std::string& name, std::function<CheckResult()> f) { cells.push_back({suite, name, std::move(f)}); };
  const int pts = cfg.integer("verify.points");

  if (suite == "schedule-assumptions") {
    add("assumptions", [&cfg] {
      const Schedule s = cfg.schedule();
      AssumptionOptions o;
      o.gamma = cfg.number("constants.gamma");
      o.D0_max = cfg.number("constants.D0");
      const AssumptionReport a = check_assumptions(s, cfg.grid(), o);
      CheckResult c;
      c.name = "assumptions";
      for (const auto& e : a.entries) {
        CheckRow r = make_row("assumption:" + e.name, e.witness_t, {}, e.value, e.bound, e.pass);
        if (e.bound == 0) r.ratio = kNaN;
        c.rows.push_back(r);
      }
      summarize(c);
      c.fitted_constant = a.D0;
      for (const auto& e : a.entries)
        if (!e.pass && !e.message.empty()) c.note += (c.note.empty() ? "" : "; ") + e.name + ": " + e.message;
      return c;
    });
    add("rebased-alpha-floor", [&cfg] {
      const Schedule s = cfg.schedule();
      CheckResult c;
      c.name = "rebased-alpha-floor";
      if (s.kind() != ScheduleKind::PowerLaw) {
        c.rows.push_back(make_row("rebased-alpha-floor", kNaN, {}, kNaN, kNaN, true));
        c.rows.back().verdict = Verdict::NotApplicable;
        c.note = "rebasing is exercised for power-law schedules";
        summarize(c);
        return c;
      }
      const double ts = cfg.number("rate.t_star");
      const Schedule R = rebase_schedule(s, ts);
      const double D0 = cfg.number("constants.D0");
      const double floor = 1.0 / (2 * D0), rho = 1.0 / (std::sqrt(2.0) * D0);
      // The floor holds where beta~ <= 1/(sqrt(2) D0).
      for (double t : linspace(std::min(2 * ts, 1.0), 1.0, 33)) {
        if (R.beta(t) > rho) continue;
        const double a2 = sq(R.alpha(t));
        c.rows.push_back(make_row("rebased-alpha-floor", t, {}, floor, a2, a2 >= floor));
      }
      summarize(c);
      return c;
    });
  } else if (suite == "path-bounds") {
    add("pt-sandwich", [&cfg, pts] {
      const GaussianPath P(cfg.schedule(), cfg.density());
      return from_bound_report("path-bounds", verify_pt_sandwich(P, oriented_partition(P.schedule(), cfg.grid()), pts));
    });
    add("at-bound", [&cfg, pts] {
      const GaussianPath P(cfg.schedule(), cfg.density());
      return from_bound_report("path-bounds",
                               verify_at_bound(P, oriented_partition(P.schedule(), cfg.grid()), pts, cfg.number("verify.eps"),
                                               cfg.number("constants.C5")));
    });
    add("posterior-mean-lipschitz", [&cfg, pts] {
      const GaussianPath P(cfg.schedule(), cfg.density());
      return from_bound_report("path-bounds", posterior_mean_lipschitz(P, oriented_partition(P.schedule(), cfg.grid()), pts));
    });
  } else if (suite == "gamma") {
    add("psi-bound", [] {
      CheckResult c;
      c.name = "psi-bound";
      for (int ell = 1; ell <= 6; ++ell)
        for (double z = 1.0; z <= 6.0 + 1e-12; z += 0.5) {
          const PsiCheck p = psi_bound_check(ell, z);
          c.rows.push_back(make_row("psi-bound", kNaN, {static_cast<double>(ell), z}, p.psi, p.bound, p.pass));
        }
      summarize(c);
      return c;
    });
    add("psi-equality-l1", [] {
      CheckResult c;
      c.name = "psi-equality-l1";
      for (double z = 1.0; z <= 6.0 + 1e-12; z += 0.5) {
        const PsiCheck p = psi_bound_check(1, z);
        const double gap = std::abs(p.psi - p.bound);
        c.rows.push_back(make_row("psi-equality-l1", kNaN, {1.0, z}, gap, psi_equality_tolerance(), gap <= psi_equality_tolerance()));
      }
      summarize(c);
      return c;
    });
  } else if (suite == "tails") {
    add("tail-integral", [&cfg] {
      const GaussianPath P(cfg.schedule(), cfg.density());
      const double C5 = cfg.number("constants.C5"), eps = cfg.number("verify.eps");
      CheckResult c;
      c.name = "tail-integral";
      const Vec ts = oriented_partition(P.schedule(), cfg.grid());
      double Ct = 0;
      for (double t : ts) {
        const TailIntegral ti = tail_integral_at(P, t, C5, eps);
        CheckRow r = make_row("tail-integral", t, {}, ti.value, ti.bound, ti.verdict != Verdict::Fail);
        if (ti.verdict == Verdict::NotApplicable) r.verdict = Verdict::NotApplicable;
        c.rows.push_back(r);
        Ct = std::max(Ct, ti.C_tilde);
      }
      summarize(c);
      c.fitted_constant = Ct;
      return c;
    });
    add("tail-decay", [&cfg] {
      const GaussianPath P(cfg.schedule(), cfg.density());
      const double eps = cfg.number("verify.eps");
      CheckResult c;
      c.name = "tail-decay";
      const bool flip = P.schedule().noise_time() == 0.0;
      for (double t0 : {0.01, 0.2}) {
        const double t = flip ? 1 - t0 : t0;
        const double l2 = tail_integral_at(P, t, 2.0, eps).value, l4 = tail_integral_at(P, t, 4.0, eps).value;
        CheckRow r = make_row("tail-decay", t, {}, l2 > 0 ? l4 / l2 : kNaN, std::pow(eps, 5.4), l4 <= std::pow(eps, 5.4) * l2);
        if (l2 == 0) r.verdict = Verdict::NotApplicable;
        c.rows.push_back(r);
      }
      summarize(c);
      return c;
    });
  } else if (suite == "pde-residuals") {
    for (int order : {1, 2})
      add("continuity-order-" + std::to_string(order), [&cfg, order] {
        // Gaussian reference data under the configured schedule.
        const GaussianPath P(cfg.schedule(), Density::gaussian_reference(1, cfg.number("density.sigma")));
        const double t = 0.3;
        const Vec xs = linspace(-1.5, 1.5, 7);
        const Vec hs{4e-3, 2e-3, 1e-3};
        Vec res;
        for (double h : hs) {
          double worst = 0;
          for (double x : xs) worst = std::max(worst, continuity_residual(P, t, {x}, h, order));
          res.push_back(worst);
        }
        double dmax = 0;
        const double h = 1e-3;
        for (double x : xs) {
          auto p = [&](double tt) { return P.density_at(P.state(tt), {x}); };
          const double dt = order == 1 ? (p(t + h) - p(t - h)) / (2 * h) : (p(t + h) - 2 * p(t) + p(t - h)) / (h * h);
          dmax = std::max(dmax, std::abs(dt));
        }
        CheckResult c;
        const std::string name = "continuity-order-" + std::to_string(order);
        c.name = name;
        bool tiny = true;
        for (double r : res) tiny = tiny && r <= 1e-13 * std::max(dmax, 1.0);
        if (tiny) {
          // Residuals at round-off level: there is no rate to measure.
          c.rows.push_back(make_row(name + "-rate", t, {}, kNaN, 2.0, true));
          c.rows.back().verdict = Verdict::NotApplicable;
        } else {
          const LineFit f = fit_loglog(hs, res);
          c.rows.push_back(make_row(name + "-rate", t, {}, f.slope, 2.0, std::abs(f.slope - 2.0) <= 0.2));
        }
        c.rows.push_back(make_row(name + "-residual", t, {}, res.back(), 1e-4 * dmax, res.back() <= 1e-4 * dmax));
        summarize(c);
        return c;
      });
  } else if (suite == "gadgets") {
    add("gadget-audit", [] {
      const GadgetAudit a = audit_gadgets();
      CheckResult c;
      c.name = "gadget-audit";
      for (const auto& g : a.rows) c.rows.push_back(make_row("gadget:" + g.gadget + "(" + g.params + ")", kNaN, {}, g.max_error, g.tolerance, g.pass()));
      c.rows.push_back(make_row("gadget:recip-constant-growth", kNaN, {}, a.growth_ok ? 0.0 : 1.0, 1.0, a.growth_ok));
      summarize(c);
      return c;
    });
  } else if (suite == "det-derivative") {
    add("det-derivative", [&cfg] {
      CheckResult c;
      c.name = "det-derivative";
      const double tol = 1e-5, h = 1e-5;
      auto row = [&](const std::string& n, double t, double err) { c.rows.push_back(make_row(n, t, {}, err, tol, err <= tol)); };
      row("det-derivative:scaled-identity", 1.0,
          det_derivative_check([](double t) { return Eigen::MatrixXd(t * Eigen::MatrixXd::Identity(2, 2)); }, 1.0, h));
      Rng rng(static_cast<std::uint64_t>(cfg.integer("seed")), "verify.det");
      Eigen::MatrixXd M(3, 3), B(3, 3);
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          M(i, j) = rng.normal();
          B(i, j) = rng.normal();
        }
      const Eigen::MatrixXd A = M * M.transpose() + 3 * Eigen::MatrixXd::Identity(3, 3);
      row("det-derivative:spd-path", 0.1, det_derivative_check([&](double t) { return Eigen::MatrixXd(A + t * B); }, 0.1, h));
      // Jacobian of (x0, x1) -> (alpha x0, beta x1) along the configured schedule.
      const Schedule s = cfg.schedule();
      for (double t : linspace(0.1, 0.9, 9)) {
        auto X = [&s](double tt) {
          Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2, 2);
          J(0, 0) = s.alpha(tt);
          J(1, 1) = s.beta(tt);
          return J;
        };
        if (!(std::abs(X(t).determinant()) > 1e-10)) continue;
        row("det-derivative:schedule-jacobian", t, det_derivative_check(X, t, h));
      }
      summarize(c);
      return c;
    });
  } else {
    throw ConfigError("verify: unknown suite '" + suite + "'");
  }
  return cells;
}

inline std::vector<std::string> selected_suites(const ExperimentConfig& cfg) {
  std::vector<std::string> out;
  for (const auto& s : cfg.names("verify.suites")) {
    if (s == "all") return verify_suites();
    if (std::find(verify_suites().begin(), verify_suites().end(), s) == verify_suites().end())
      throw ConfigError("verify: unknown suite '" + s + "'");
    out.push_back(s);
  }
  return out;
}

inline ExperimentReport run_verify(const ExperimentConfig& cfg, int jobs = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentReport rep("verify", &cfg);
  rep.jobs = jobs;
  std::vector<VerifyCell> cells;
  for (const auto& s : selected_suites(cfg))
    for (auto& c : verify_cells(cfg, s)) cells.push_back(std::move(c));
  rep.checks = parallel_map(cells.size(), jobs, [&](std::size_t i) { return guarded(cells[i].suite, cells[i].name, cells[i].run); });
  for (const auto& c : rep.checks) {
    if (c.name == "pt-sandwich") rep.constants["C1"] = c.fitted_constant;
    if (c.name == "at-bound") rep.constants["C3"] = c.fitted_constant;
    if (c.name == "tail-integral") rep.constants["C_tilde"] = c.fitted_constant;
    if (c.name == "assumptions") rep.constants["D0"] = c.fitted_constant;
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

// ---------------------------------------------------------------------------
// Rate study.

struct RateCell {
  std::string regime;
  double N = 0;
  std::vector<RateRow> rows;
  double mean_normalized = kNaN;
  std::string error;
};

inline double regime_boundary(const ExperimentConfig& cfg, const TimeGrid& g) {
  const std::string b = cfg.text("regime.boundary");
  return b == "auto" ? 3 * g.T_star() : parse_number("regime.boundary", b);
}

// Small t: f4 from the fit of p0 on [T_*, min(3 T_*, boundary)], rate N^{-2s/d}.
// Large t: f4 from the fit of p_{t*} with the rebased schedule on [2 t*, 1], rate N^{-eta}.
inline RateCell rate_cell(const ExperimentConfig& cfg, const std::string& regime, double N) {
  RateCell cell;
  cell.regime = regime;
  cell.N = N;
  try {
    const Density D = cfg.density();
    const Schedule s = cfg.schedule();
    if (s.noise_time() != 1.0) throw ConfigError("rate: the study expects data at t = 0 (power-law schedule)");
    if (!D.bounded_support()) throw ConfigError("rate: the study expects data on the unit cube");
    const GaussianPath P(s, D);
    const int d = D.dim();
    TimeGrid g = cfg.grid();
    g.N = N;
    F4Options o;
    o.clamp = std::pow(N, -(2 * cfg.number("constants.s") + cfg.number("constants.omega")) / d);
    o.C5 = cfg.number("constants.C5");
    o.N = N;
    const int nt = cfg.integer("rate.times");
    double acc = 0;
    if (regime == "small") {
      const double lo = g.T_star(), hi = std::min(3 * g.T_star(), regime_boundary(cfg, g));
      if (!(hi > lo)) throw ConfigError("rate: regime.boundary lies below T_*");
      const FitResult fr = fit_expansion(D, N);
      const double rate = 2 * cfg.number("constants.s") / d;
      for (double t : logspace(lo, hi, nt)) {
        const F4StudyPoint p = f4_ise(P, fr.E, t, o);
        const ScheduleState st = P.state(t);
        const double scale = (sq(st.alpha2) * std::log(N) + sq(st.beta2)) * std::pow(N, -rate);
        cell.rows.push_back({regime, t, N, p.ise, scale, p.ise / scale});
        acc += p.normalized;
      }
    } else if (regime == "large") {
      const double ts = cfg.number("rate.t_star");
      if (ts < g.T_star() || ts > 0.5) throw ConfigError("rate: rate.t_star must lie in [T_*, 1/2]");
      const FitResult fr = fit_smoothed_density(P, ts, N, cfg.number("rate.fit_smoothness"));
      const Schedule R = rebase_schedule(s, ts);
      const double eta = cfg.number("constants.eta");
      for (double t : logspace(2 * ts, 1.0, nt)) {
        const F4StudyPoint p = f4_ise_rebased(P, ts, fr.E, t, o);
        const ScheduleState st = R.eval(t);
        const double scale = (sq(st.alpha2) * std::log(N) + sq(st.beta2)) * std::pow(N, -eta);
        cell.rows.push_back({regime, t, N, p.ise, scale, p.ise / scale});
        acc += p.normalized;
      }
    } else {
      throw ConfigError("rate: unknown regime '" + regime + "' (small | large)");
    }
    cell.mean_normalized = acc / nt;
  } catch (const std::exception& e) {
    cell.error = e.what();
    cell.rows.clear();
  }
  return cell;
}

inline RateFit fit_rate(const std::string& regime, const Vec& Ns, const Vec& values, double target, double saturation,
                        double eta) {
  RateFit f;
  f.regime = regime;
  f.N = Ns;
  f.mean_normalized = values;
  f.target_slope = target;
  if (Ns.size() < 2) return f;
  f.fit = fit_loglog(Ns, values);
  if (Ns.size() > 2) {
    const boost::math::students_t dist(static_cast<double>(Ns.size() - 2));
    const double q = boost::math::quantile(boost::math::complement(dist, 0.025));
    f.ci_low = f.fit.slope - q * f.fit.slope_stderr;
    f.ci_high = f.fit.slope + q * f.fit.slope_stderr;
  }
  f.monotone = true;
  for (std::size_t i = 1; i < values.size(); ++i) f.monotone = f.monotone && values[i] < values[i - 1];
  f.saturated = std::abs(f.fit.slope) < saturation;
  f.endpoint_ratio = values.back() / values.front();
  f.endpoint_bound = std::pow(Ns.front() / Ns.back(), eta / 2);
  return f;
}

inline ExperimentReport run_rate_study(const ExperimentConfig& cfg, int jobs = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentReport rep("rate", &cfg);
  rep.jobs = jobs;
  const Vec ladder = cfg.numbers("rate.ladder");
  if (ladder.size() < 4) throw ConfigError("rate: rate.ladder needs at least 4 entries");
  const auto regimes = cfg.names("rate.regimes");
  std::vector<std::pair<std::string, double>> keys;
  for (const auto& r : regimes)
    for (double N : ladder) keys.push_back({r, N});
  const auto cells = parallel_map(keys.size(), jobs, [&](std::size_t i) { return rate_cell(cfg, keys[i].first, keys[i].second); });

  const int d = cfg.integer("density.d");
  const double eta = cfg.number("constants.eta");
  for (const auto& regime : regimes) {
    Vec Ns, vals;
    CheckResult c;
    c.suite = "rate";
    c.name = "rate-" + regime;
    double cmax = 0;
    for (const auto& cell : cells) {
      if (cell.regime != regime) continue;
      if (!cell.error.empty()) {
        CheckRow r = make_row("rate-" + regime + "-cell", kNaN, {}, kNaN, kNaN, false);
        c.note += (c.note.empty() ? "" : "; ") + ("N=" + fmt(cell.N) + ": " + cell.error);
        c.rows.push_back(r);
        continue;
      }
      for (const auto& r : cell.rows) {
        rep.rate_rows.push_back(r);
        cmax = std::max(cmax, r.ratio);
      }
      Ns.push_back(cell.N);
      vals.push_back(cell.mean_normalized);
    }
    const double target = regime == "small" ? -2 * cfg.number("constants.s") / d : -eta;
    const RateFit f = fit_rate(regime, Ns, vals, target, cfg.number("rate.saturation"), eta);
    rep.rate_fits.push_back(f);
    rep.constants[regime == "small" ? "C6" : "C7"] = cmax;
    if (Ns.size() >= 2) {
      if (f.saturated) {
        CheckRow r = make_row("rate-" + regime + "-slope", kNaN, {}, f.fit.slope, target, true);
        r.verdict = Verdict::NotApplicable;
        c.rows.push_back(r);
        c.note += (c.note.empty() ? "" : "; ") + std::string("saturated: error is flat across the ladder");
      } else if (regime == "small") {
        const bool ok = std::abs(f.fit.slope - target) <= 0.3 * std::abs(target);
        c.rows.push_back(make_row("rate-small-slope", kNaN, {}, f.fit.slope, target, ok));
        c.rows.push_back(make_row("rate-small-monotone", kNaN, {}, f.monotone ? 1.0 : 0.0, 1.0, f.monotone));
      } else {
        c.rows.push_back(make_row("rate-large-endpoints", kNaN, {}, f.endpoint_ratio, f.endpoint_bound,
                                  f.endpoint_ratio <= f.endpoint_bound));
      }
    }
    summarize(c);
    c.fitted_constant = cmax;
    rep.checks.push_back(c);
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

// ---------------------------------------------------------------------------
// Train / sample pipeline.

struct PipelineResult {
  ExperimentReport report;
  std::optional<TrainedFlowModel> model;
};

inline Eigen::MatrixXd as_matrix(const std::vector<Vec>& pts) {
  const int d = static_cast<int>(pts.front().size());
  Eigen::MatrixXd X(d, static_cast<int>(pts.size()));
  for (std::size_t c = 0; c < pts.size(); ++c)
    for (int i = 0; i < d; ++i) X(i, static_cast<int>(c)) = pts[c][i];
  return X;
}

// Trains velocity then (order 2) acceleration with the velocity frozen, samples
// both orders on the step ladder and tabulates W1/W2 against held-out data.
inline PipelineResult run_pipeline(const ExperimentConfig& cfg, int jobs = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  PipelineResult out{ExperimentReport("train", &cfg), std::nullopt};
  ExperimentReport& rep = out.report;
  rep.jobs = jobs;
  const std::uint64_t seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  Rng root(seed, "pipeline");
  const Density D = cfg.density();
  const Schedule s = cfg.schedule();
  const TrainConfig tc = cfg.train();
  const int order = cfg.integer("train.order");
  const int n_eval = cfg.integer("train.eval_samples");
  const std::vector<Vec> data = D.sample(cfg.integer("train.data"), root.split("data").next_u64());
  const std::vector<Vec> held = D.sample(n_eval, root.split("held-out").next_u64());
  const std::vector<Vec> held2 = D.sample(n_eval, root.split("baseline").next_u64());
  rep.distances.push_back({"baseline", 0, 0, wasserstein_distance(held, held2, 1), wasserstein_distance(held, held2, 2)});

  try {
    out.model = train_flow(tc, data, s, order, root.split("train").next_u64());
  } catch (const TrainingError& e) {
    rep.errors.push_back(std::string("training: ") + e.what());
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }
  const TrainedFlowModel& m = *out.model;

  Vec steps_list = cfg.numbers("train.sample_steps");
  struct Job {
    std::string source;
    int order, steps;
  };
  std::vector<Job> jobs_list;
  for (double st : steps_list)
    for (int o = 1; o <= order; ++o) jobs_list.push_back({"model", o, static_cast<int>(st)});
  const bool exact = cfg.flag("train.exact_baseline") && D.dim() <= 2;
  std::optional<GaussianPath> P;
  if (exact) {
    P.emplace(s, D);
    for (double st : steps_list) jobs_list.push_back({"exact", 1, static_cast<int>(st)});
  }
  const std::uint64_t sample_seed = root.split("sample").next_u64();
  const auto rows = parallel_map(jobs_list.size(), jobs, [&](std::size_t i) {
    const Job& j = jobs_list[i];
    Eigen::MatrixXd X;
    if (j.source == "model") {
      X = sample_ode(m, n_eval, j.steps, j.order, sample_seed);
    } else {
      X = sample_ode(exact_problem(*P, tc.T0, j.order == 2), n_eval, j.steps, j.order, sample_seed);
    }
    const auto pts = columns(X);
    return DistanceRow{j.source, j.order, j.steps, wasserstein_distance(pts, held, 1), wasserstein_distance(pts, held, 2)};
  });
  rep.distances.insert(rep.distances.end(), rows.begin(), rows.end());

  // Per-interval losses over the dyadic partition, restricted to the training interval.
  const auto iv = flow_interval(s, tc.T0);
  Vec knots;
  for (double t : oriented_partition(s, cfg.grid()))
    if (t > iv.first && t < iv.second) knots.push_back(t);
  knots.insert(knots.begin(), iv.first);
  knots.push_back(iv.second);
  if (knots.size() >= 2)
    for (int o = 1; o <= order; ++o)
      for (const auto& il : interval_losses(m, data, s, o, knots, cfg.integer("train.interval_samples"),
                                            root.split("intervals").next_u64()))
        rep.intervals.push_back({o, il.t_lo, il.t_hi, il.loss});

  for (std::size_t k = 0; k < m.stages.size(); ++k) {
    const auto& st = m.stages[k];
    const std::string name = k == 0 ? "velocity" : "acceleration";
    CheckResult c;
    c.suite = "train";
    c.name = "loss-decrease:" + name;
    const bool ok = std::isfinite(st.final_loss) && st.final_loss <= st.initial_loss;
    CheckRow r = make_row(c.name, kNaN, {}, st.final_loss, st.initial_loss, ok);
    if (k == 1 && m.accel_zero) r.verdict = Verdict::NotApplicable;
    c.rows.push_back(r);
    summarize(c);
    rep.checks.push_back(c);
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// ---------------------------------------------------------------------------
// Network audit: gadget certification and the f4 network against assemble_f4.

inline ExperimentReport run_audit_net(const ExperimentConfig& cfg, int jobs = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentReport rep("audit-net", &cfg);
  rep.jobs = jobs;
  rep.checks.push_back(guarded("gadgets", "gadget-audit", verify_cells(cfg, "gadgets").front().run));
  const Vec ladder = cfg.numbers("audit.ladder");
  const auto audits = parallel_map(ladder.size(), jobs, [&](std::size_t i) {
    const Density D = cfg.density();
    const ScheduleState st = cfg.schedule().eval(cfg.number("audit.t"));
    const FitResult f = fit_expansion(D, ladder[i]);
    AccelAuditOptions o;
    o.eps_gadget = cfg.number("constants.eps_gadget");
    o.C5 = cfg.number("constants.C5");
    o.K0 = cfg.number("constants.K0");
    o.smoothness = cfg.number("constants.s");
    o.omega = cfg.number("constants.omega");
    return audit_accel_net(f.E, st, ladder[i], o);
  });
  CheckResult c;
  c.suite = "audit-net";
  c.name = "accel-net";
  Vec l4, L;
  double cfit = 0;
  for (const auto& a : audits) {
    c.rows.push_back(make_row("accel-net:error(N=" + fmt(a.N) + ")", cfg.number("audit.t"), {}, a.max_error, a.budget, a.pass()));
    const double lg = std::pow(std::log(a.N), 4);
    cfit = std::max(cfit, a.stats.L / lg);
    l4.push_back(lg);
    L.push_back(a.stats.L);
  }
  for (std::size_t i = 0; i < audits.size(); ++i)
    c.rows.push_back(make_row("accel-net:depth(N=" + fmt(audits[i].N) + ")", kNaN, {}, L[i], cfit * l4[i], L[i] <= cfit * l4[i] * (1 + 1e-12)));
  summarize(c);
  c.fitted_constant = cfit;
  rep.constants["depth_c"] = cfit;
  if (L.size() >= 2) {
    const LineFit lf = fit_line(l4, L);
    rep.constants["depth_slope_vs_log4N"] = lf.slope;
    rep.constants["depth_intercept"] = lf.intercept;
  }
  rep.checks.push_back(c);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace hoflow
