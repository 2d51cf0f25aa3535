// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#include "hoflow/harness.hpp"

using namespace hoflow;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const char* title, double budget_s, const std::function<Outcome()>& f) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = f();
  } catch (const std::exception& e) {
    o = {false, std::string("error: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = s <= budget_s;
  const bool ok = o.pass && in_time;
  failures += !ok;
  std::printf("criterion %2d: %s  %s | %s | %.2fs of %.0fs%s\n", id, ok ? "PASS" : "FAIL", title, o.detail.c_str(), s,
              budget_s, in_time ? "" : " (over time budget)");
  std::fflush(stdout);
}

std::string num(const char* f, double v) {
  char b[64];
  std::snprintf(b, sizeof b, f, v);
  return b;
}

}  // namespace

int main() {
  criterion(1, "gamma bound psi_l(z) <= l!! z^(l-1) e^(-z^2/2)", 1, [] {
    double worst = 0, eq = 0, est = 0;
    bool ok = true;
    for (int ell = 1; ell <= 6; ++ell)
      for (double z = 1.0; z <= 6.0 + 1e-12; z += 0.5) {
        const PsiCheck p = psi_bound_check(ell, z);
        ok = ok && p.pass;
        worst = std::max(worst, p.psi / p.bound);
        est = std::max(est, p.error_estimate);
        if (ell == 1) eq = std::max(eq, std::abs(p.psi - p.bound));
      }
    ok = ok && eq <= 1e-9 && est <= 1e-10;
    return Outcome{ok, "max psi/bound " + num("%.6f", worst) + ", l=1 gap " + num("%.1e", eq) + ", quad err " + num("%.1e", est)};
  });

  criterion(2, "conditional acceleration = d/dt conditional velocity", 5, [] {
    Rng rng(2024, "acceptance.c2");
    const double h = 1e-4;
    double worst = 0;
    for (int k = 0; k < 1000; ++k) {
      const int kind = static_cast<int>(rng.below(3));
      const Schedule s = kind == 0   ? Schedule::linear()
                         : kind == 1 ? Schedule::power_law(rng.uniform(0.5, 1.5), rng.uniform(0.5, 2.0))
                                     : Schedule::power_law(rng.uniform(0.5, 1.5), rng.uniform(0.5, 2.0), rng.uniform(0.5, 1.0),
                                                           rng.uniform(0.5, 2.0));
      const double t = rng.uniform(0.1, 0.9);
      const int d = 1 + static_cast<int>(rng.below(3));
      Vec x(d), y(d);
      for (int i = 0; i < d; ++i) {
        x[i] = rng.uniform(-2, 2);
        y[i] = rng.uniform(-1, 1);
      }
      const Vec a = conditional_acceleration(s.eval(t), x, y);
      const Vec vp = conditional_velocity(s.eval(t + h), x, y), vm = conditional_velocity(s.eval(t - h), x, y);
      for (int i = 0; i < d; ++i) {
        const double fd = (vp[i] - vm[i]) / (2 * h);
        worst = std::max(worst, std::abs(fd - a[i]) / std::max(std::abs(a[i]), 1.0));
      }
    }
    return Outcome{worst <= 1e-5, "1000 probes, max rel err " + num("%.2e", worst)};
  });

  criterion(3, "continuity residuals converge at order 2", 30, [] {
    ExperimentConfig c;
    c.set("verify.suites", "pde-residuals");
    const ExperimentReport r = run_verify(c);
    std::string detail;
    for (const auto& ch : r.checks)
      for (const auto& row : ch.rows)
        detail += row.check + (row.check.find("rate") != std::string::npos ? " " + num("%.3f", row.lhs) : " ratio " + num("%.2e", row.ratio)) + "; ";
    return Outcome{r.pass(), detail};
  });

  criterion(4, "p_t sandwich with finite C1 <= 1e3 (uniform, power schedule)", 60, [] {
    std::string detail;
    bool ok = true;
    for (int d : {1, 2}) {
      const GaussianPath P(Schedule::power_law(1, 0.5), Density::uniform(d));
      TimeGrid g;
      g.d = d;
      const BoundReport b = verify_pt_sandwich(P, g.partition(), d == 1 ? 25 : 12);
      ok = ok && b.pass() && b.fitted_constant <= 1e3;
      detail += "d=" + std::to_string(d) + " C1 " + num("%.3f", b.fitted_constant) + "; ";
    }
    return Outcome{ok, detail};
  });

  criterion(5, "a_t bound constant and tail integral decay", 60, [] {
    const GaussianPath P(Schedule::power_law(1, 0.5), Density::uniform(1));
    const Vec times = TimeGrid{}.partition();
    const BoundReport b = verify_at_bound(P, times, 15);
    bool ok = b.pass() && std::isfinite(b.fitted_constant);
    double Ct = 0, decay = 0;
    for (double t : times) {
      const TailIntegral ti = tail_integral_at(P, t, 3.0, 0.1);
      ok = ok && ti.verdict == Verdict::Pass && ti.value <= ti.bound;
      Ct = std::max(Ct, ti.C_tilde);
    }
    for (double t : {0.01, 0.2}) {
      const double l2 = tail_integral_at(P, t, 2.0, 0.1).value, l4 = tail_integral_at(P, t, 4.0, 0.1).value;
      decay = std::max(decay, l4 / l2);
    }
    ok = ok && decay <= std::pow(0.1, 5.4);
    return Outcome{ok, "C3 " + num("%.3f", b.fitted_constant) + ", C~ " + num("%.3e", Ct) + ", decay " + num("%.2e", decay) +
                           " <= " + num("%.2e", std::pow(0.1, 5.4))};
  });

  criterion(6, "gadget certification (clip, recip, mult)", 10, [] {
    const GadgetAudit a = audit_gadgets();
    std::string detail;
    for (const auto& r : a.rows) {
      detail += r.gadget + "(" + r.params + ") err " + num("%.1e", r.max_error) + " L " + std::to_string(r.stats.L);
      for (const auto& [k, v] : r.constants) detail += " " + k + " " + num("%.3g", v);
      detail += "; ";
    }
    return Outcome{a.pass(), detail};
  });

  criterion(7, "B-spline L2 rate N^(-s/d), s = 2, d = 1", 120, [] {
    const Density D = Density::bump_product(1, {0.5, 0.0, 0.5, 1.5});
    Vec Ns, errs;
    for (double N = 16; N <= 512; N *= 2) {
      Ns.push_back(N);
      errs.push_back(fit_expansion(D, N).l2_error);
    }
    const LineFit f = fit_loglog(Ns, errs);
    const bool ok = std::abs(f.slope + 2) <= 0.25 * 2 && f.r2 >= 0.95;
    return Outcome{ok, "slope " + num("%.3f", f.slope) + " (target -2 +/- 25%), R2 " + num("%.3f", f.r2)};
  });

  criterion(8, "small-t f4 rate N^(-2s/d), s = 1, kappa = 1/2", 300, [] {
    ExperimentConfig c;
    c.set("rate.regimes", "small");
    const ExperimentReport r = run_rate_study(c);
    const RateFit& f = r.rate_fits.at(0);
    const bool ok = r.pass() && !f.saturated && f.monotone && std::abs(f.fit.slope + 2) <= 0.3 * 2;
    return Outcome{ok, "slope " + num("%.3f", f.fit.slope) + " CI [" + num("%.3f", f.ci_low) + ", " + num("%.3f", f.ci_high) +
                           "], R2 " + num("%.3f", f.fit.r2) + (f.monotone ? ", monotone" : ", not monotone")};
  });

  criterion(9, "large-t rate with rebased schedule, eta = 2", 300, [] {
    ExperimentConfig c;
    c.set("rate.regimes", "large");
    const ExperimentReport r = run_rate_study(c);
    const RateFit& f = r.rate_fits.at(0);
    const bool ok = r.pass() && f.endpoint_ratio <= f.endpoint_bound;
    return Outcome{ok, "ISE(Nmax)/ISE(Nmin) " + num("%.3e", f.endpoint_ratio) + " <= " + num("%.3e", f.endpoint_bound) +
                           ", slope " + num("%.3f", f.fit.slope)};
  });

  criterion(10, "zeta-pipeline network vs assemble_f4, depth vs log^4 N", 60, [] {
    const ExperimentReport r = run_audit_net(ExperimentConfig());
    std::string detail;
    for (const auto& ch : r.checks)
      if (ch.name == "accel-net")
        for (const auto& row : ch.rows) detail += row.check + " " + num("%.3g", row.lhs) + "/" + num("%.3g", row.rhs) + "; ";
    detail += "c = " + num("%.4f", r.constants.at("depth_c")) + ", slope vs log^4 N " +
              num("%.4f", r.constants.at("depth_slope_vs_log4N"));
    return Outcome{r.pass(), detail};
  });

  criterion(11, "exact-field sampler vs target self-distance; a = 0 short-circuit", 120, [] {
    const double sigma = 0.5, T0 = 1e-3;
    const Density G = Density::gaussian_reference(1, sigma);
    const GaussianPath P(Schedule::linear(), G);
    const OdeProblem p = exact_problem(P, T0, false);
    const Eigen::MatrixXd X1 = sample_ode(p, 4096, 128, 1, 31);
    const auto target = G.sample(4096, 41), other = G.sample(4096, 42);
    const double w = wasserstein_distance(columns(X1), target), base = wasserstein_distance(other, target);
    OdeProblem q = p;
    q.acceleration = [](const Eigen::MatrixXd& X, double) { return Eigen::MatrixXd::Zero(X.rows(), X.cols()); };
    const bool bitwise = (sample_ode(p, 4096, 128, 2, 31).array() == X1.array()).all() &&
                         (sample_ode(q, 4096, 128, 2, 31).array() == X1.array()).all();  // empty and all-zero a
    return Outcome{w <= 1.5 * base && bitwise, "W1 " + num("%.4f", w) + " vs baseline " + num("%.4f", base) +
                                                   (bitwise ? ", order 2 bitwise equal" : ", order 2 differs")};
  });

  criterion(12, "training-loss gradients vs finite differences", 10, [] {
    const Density D = Density::bump_product(1, {0.5, 0.0, 0.5, 0.5});
    const auto data = D.sample(512, 5);
    double worst = 0;
    bool ok = true;
    for (int order : {1, 2}) {
      const GradCheck g = training_gradient_check(data, Schedule::power_law(1, 0.5), order, 32, 77);
      ok = ok && g.pass(1e-4);
      worst = std::max(worst, g.max_rel_error);
    }
    return Outcome{ok, "32 probes per order, max rel err " + num("%.2e", worst)};
  });

  std::printf("acceptance: %d of 12 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
