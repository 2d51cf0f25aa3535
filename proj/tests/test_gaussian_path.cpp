#include <gtest/gtest.h>

#include "hoflow/gaussian_path.hpp"
#include "hoflow/rng.hpp"

using namespace hoflow;

namespace {

ScheduleState power_quarter() { return Schedule::power_law(1.0, 0.5).eval(0.25); }

double uniform_closed_form(const ScheduleState& st, double x) {
  // Upper-tail form avoids cancellation for x > beta.
  auto tail = [](double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); };
  const double u = std::abs(x);
  return (tail((u - st.beta) / st.alpha) - tail((u + st.beta) / st.alpha)) / (2 * st.beta);
}

// E[y | x] for uniform p0 on [-1, 1] by a 10^6-node trapezoid rule.
double trapezoid_posterior_mean(const ScheduleState& st, double x) {
  const int n = 1000000;
  double s0 = 0, s1 = 0;
  for (int i = 0; i < n; ++i) {
    const double y = -1 + 2.0 * i / (n - 1);
    const double w = (i == 0 || i == n - 1 ? 0.5 : 1.0) * std::exp(-0.5 * sq((x - st.beta * y) / st.alpha));
    s0 += w;
    s1 += w * y;
  }
  return s1 / s0;
}

double gaussian_marginal(const ScheduleState& st, double sigma, double x) {
  const double v = sq(st.alpha) + sq(st.beta * sigma);
  return std::exp(-0.5 * x * x / v) / std::sqrt(2 * kPi * v);
}

}  // namespace

TEST(ConditionalFields, Examples) {
  const ScheduleState lin = Schedule::linear().eval(0.5);
  EXPECT_DOUBLE_EQ(conditional_velocity(lin, {0.5}, {1.0})[0], 1.0);
  EXPECT_DOUBLE_EQ(conditional_velocity(lin, {0.0}, {0.0})[0], 0.0);
  EXPECT_NEAR(conditional_velocity(power_quarter(), {1.0}, {0.5})[0], 0.75, 1e-15);

  EXPECT_DOUBLE_EQ(conditional_acceleration(Schedule::linear().eval(0.0), {0.0}, {1.0})[0], 1.0);
  const ScheduleState p = power_quarter();
  EXPECT_NEAR(conditional_acceleration(p, {p.beta}, {1.0})[0], 2.0, 1e-14);
  EXPECT_NEAR(conditional_acceleration(Schedule::linear().eval(0.25), {1.0}, {0.0})[0], -1.0 / 0.5625, 1e-14);
}

TEST(ConditionalFields, AccelerationIsTimeDerivativeOfVelocity) {
  Rng rng(11, "cond-fd");
  const std::vector<Schedule> scheds = {Schedule::linear(), Schedule::power_law(1.0, 0.5),
                                        Schedule::power_law(0.8, 0.75, 0.9, 1.5)};
  const double h = 1e-4;
  for (int k = 0; k < 300; ++k) {
    const Schedule& s = scheds[k % scheds.size()];
    const double t = rng.uniform(0.05, 0.95);
    const Vec x{rng.uniform(-2, 2), rng.uniform(-2, 2)}, y{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const Vec a = conditional_acceleration(s.eval(t), x, y);
    const Vec vp = conditional_velocity(s.eval(t + h), x, y), vm = conditional_velocity(s.eval(t - h), x, y);
    for (int i = 0; i < 2; ++i) {
      const double fd = (vp[i] - vm[i]) / (2 * h);
      EXPECT_LE(std::abs(fd - a[i]), 1e-5 * std::max(1.0, std::abs(a[i]))) << s.describe() << " t=" << t;
    }
  }
}

TEST(ConditionalFields, SingularAtZeroAlpha) {
  ScheduleState st = Schedule::linear().eval(1.0);
  EXPECT_THROW(conditional_velocity(st, {0.0}, {0.0}), SingularityError);
  EXPECT_THROW(conditional_acceleration(st, {0.0}, {0.0}), SingularityError);
}

TEST(ConditionalFields, LogDensityIsNormal) {
  const ScheduleState st = power_quarter();
  const Vec x{0.3, -0.2}, y{0.5, 0.1};
  double r2 = sq(0.3 - st.beta * 0.5) + sq(-0.2 - st.beta * 0.1);
  const double expect = std::log(std::exp(-0.5 * r2 / sq(st.alpha)) / (2 * kPi * sq(st.alpha)));
  EXPECT_NEAR(conditional_log_density(st, x, y), expect, 1e-12);
}

TEST(MarginalDensity, UniformClosedForm) {
  const GaussianPath P(Schedule::linear(), Density::uniform(1));
  const ScheduleState st = Schedule::linear().eval(0.5);
  EXPECT_NEAR(P.density_at(st, {0.0}), normal_cdf(1) - normal_cdf(-1), 1e-12);
  for (double t : {1e-4, 0.01, 0.3, 0.9})
    for (double x : {-1.3, -0.999, 0.0, 0.2, 1.0, 1.05}) {
      const ScheduleState s = Schedule::linear().eval(t);
      const double exact = uniform_closed_form(s, x);
      EXPECT_NEAR(P.density_at(s, {x}), exact, 1e-10 * std::max(exact, 1e-3)) << t << " " << x;
    }
}

TEST(MarginalDensity, GaussianReferenceClosedForm) {
  const double sigma = 0.4;
  const GaussianPath P(Schedule::power_law(1.0, 0.5), Density::gaussian_reference(1, sigma));
  for (double t : {0.01, 0.2, 0.7})
    for (double x : {-1.0, 0.0, 0.35, 2.0}) {
      const ScheduleState st = P.state(t);
      const double exact = gaussian_marginal(st, sigma, x);
      EXPECT_NEAR(P.density_at(st, {x}), exact, 1e-6 * exact);
    }
}

TEST(MarginalDensity, IntegratesToOne) {
  for (const Density& D : {Density::uniform(1), Density::bump_product(1, {0.5, 0.1, 0.5, 0.5}),
                           Density::mixture(1, {{0.5, {-0.4}, 0.2}, {0.5, {0.5}, 0.3}})}) {
    const GaussianPath P(Schedule::power_law(1.0, 0.5), D);
    for (double t : {1e-6, 1e-3, 0.1, 0.5, 0.99}) {
      const ScheduleState st = P.state(t);
      const double R = path_extent(P, st);
      const Rule1D r = feature_rule(-R, R, path_features(P, st), st.alpha);
      double mass = 0;
      for (std::size_t k = 0; k < r.size(); ++k) mass += r.w[k] * P.density_at(st, {r.x[k]});
      EXPECT_NEAR(mass, 1.0, 1e-4) << D.describe() << " t=" << t;
    }
  }
}

TEST(MarginalDensity, TwoDimensionalUniformFactorizes) {
  const GaussianPath P(Schedule::power_law(1.0, 0.5), Density::uniform(2));
  const ScheduleState st = P.state(0.04);
  const Vec x{0.7, -1.1};
  EXPECT_NEAR(P.density_at(st, x), uniform_closed_form(st, 0.7) * uniform_closed_form(st, -1.1), 1e-10);
}

TEST(MarginalDensity, FarTailBand) {
  const GaussianPath P(Schedule::power_law(1.0, 0.5), Density::uniform(1));
  const ScheduleState st = P.state(0.01);
  const double p = P.density_at(st, {st.beta + 10 * st.alpha});
  EXPECT_GT(p, 0);
  EXPECT_LE(p, std::exp(-50));
  EXPECT_NEAR(p, uniform_closed_form(st, st.beta + 10 * st.alpha), 1e-6 * p);
}

TEST(MarginalDensity, DoublingCheckPasses) {
  QuadratureSpec q;
  q.check_doubling = true;
  const GaussianPath P(Schedule::power_law(1.0, 0.5), Density::bump_product(1, {0.5, 0.0, 0.5, 0.5}), q);
  EXPECT_NO_THROW(P.density_at(P.state(1e-3), {0.5}));
}

TEST(MarginalDensity, DoublingCheckRaisesOnCoarseRule) {
  QuadratureSpec q;
  q.nodes_1d = 2;
  q.min_panel_nodes = 1;
  q.check_doubling = true;
  q.doubling_tol = 1e-12;
  const GaussianPath P(Schedule::power_law(1.0, 0.5), Density::mixture(1, {{1.0, {0.1}, 0.3}}), q);
  EXPECT_THROW(P.density_at(P.state(0.5), {0.3}), PrecisionError);
}

TEST(MarginalFields, ZeroAtSymmetricPoint) {
  const GaussianPath P(Schedule::power_law(1.0, 0.5), Density::uniform(1));
  for (double t : {0.01, 0.3, 0.8}) {
    const auto f = P.fields_at(P.state(t), {0.0});
    EXPECT_NEAR(f.velocity[0], 0.0, 1e-14);
    EXPECT_NEAR(f.acceleration[0], 0.0, 1e-13);
    EXPECT_NEAR(f.velocity_dt[0], 0.0, 1e-12);
  }
}

TEST(MarginalFields, MatchesTrapezoidOracle) {
  const GaussianPath P(Schedule::linear(), Density::uniform(1));
  const ScheduleState st = Schedule::linear().eval(0.5);
  const double ey = trapezoid_posterior_mean(st, 0.25);
  const double v = st.alpha1 * (0.25 - st.beta * ey) / st.alpha + st.beta1 * ey;
  const double got = marginal_velocity(P, 0.5, {0.25})[0];
  EXPECT_NEAR(got, v, 1e-6 * std::abs(v));
}

TEST(MarginalFields, NarrowBumpReducesToConditional) {
  const double y0 = 0.3;
  const GaussianPath P(Schedule::power_law(1.0, 0.5), Density::bump_product(1, {1e-9, y0, 1e-3, 1.0}));
  for (double t : {0.1, 0.4}) {
    const ScheduleState st = P.state(t);
    const Vec x{st.beta * y0 + 0.5 * st.alpha};
    const auto f = P.fields_at(st, x, false);
    const double v = conditional_velocity(st, x, {y0})[0], a = conditional_acceleration(st, x, {y0})[0];
    EXPECT_NEAR(f.velocity[0], v, 1e-3 * std::abs(v));
    EXPECT_NEAR(f.acceleration[0], a, 1e-3 * std::abs(a));
  }
}

TEST(MarginalFields, VelocityDtMatchesFiniteDifference) {
  const GaussianPath P(Schedule::power_law(1.0, 0.5), Density::mixture(1, {{0.6, {-0.4}, 0.25}, {0.4, {0.5}, 0.2}}));
  const double h = 1e-5;
  for (double t : {0.05, 0.3, 0.7})
    for (double x : {-0.8, 0.1, 0.6}) {
      const double fd = (marginal_velocity(P, t + h, {x})[0] - marginal_velocity(P, t - h, {x})[0]) / (2 * h);
      const double got = marginal_velocity_dt(P, t, {x})[0];
      EXPECT_NEAR(got, fd, 1e-5 * std::max(1.0, std::abs(fd))) << t << " " << x;
    }
}

TEST(MarginalFields, FarTailRaises) {
  const GaussianPath P(Schedule::power_law(1.0, 0.5), Density::uniform(1));
  const ScheduleState st = P.state(0.01);
  EXPECT_THROW(P.fields_at(st, {st.beta + 60 * st.alpha}), FarTailError);
  EXPECT_NO_THROW(P.fields_at(st, {st.beta + 10 * st.alpha}));
}

TEST(Continuity, ResidualsConvergeQuadratically) {
  const GaussianPath P(Schedule::power_law(1.0, 0.5), Density::gaussian_reference(1, 0.5));
  const double t = 0.3;
  const Vec xs = linspace(-1.5, 1.5, 7);
  for (int order : {1, 2}) {
    Vec hs{4e-3, 2e-3, 1e-3}, res;
    for (double h : hs) {
      double worst = 0;
      for (double x : xs) worst = std::max(worst, continuity_residual(P, t, {x}, h, order));
      res.push_back(worst);
    }
    const LineFit fit = fit_loglog(hs, res);
    EXPECT_NEAR(fit.slope, 2.0, 0.2) << "order " << order;
  }
}

TEST(Continuity, SymmetricPointOfUniformPath) {
  const GaussianPath P(Schedule::power_law(1.0, 0.5), Density::uniform(1));
  // Odd terms cancel at x = 0; what remains is the O(h^2) difference error.
  EXPECT_LE(continuity_residual(P, 0.3, {0.0}, 1e-3, 2), 1e-4);
  EXPECT_LE(continuity_residual(P, 0.3, {0.0}, 1e-3, 1), 1e-5);
}

TEST(Pushforward, Examples) {
  const Density U = Density::uniform(1);
  Eigen::MatrixXd I = Eigen::MatrixXd::Identity(1, 1);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(1);
  EXPECT_DOUBLE_EQ(pushforward_density(I, z, U, {0.3}), 0.5);
  EXPECT_DOUBLE_EQ(pushforward_density(2 * I, z, U, {1.9}), 0.25);
  EXPECT_DOUBLE_EQ(pushforward_density(2 * I, z, U, {2.1}), 0.0);
  EXPECT_THROW(pushforward_density(0 * I, z, U, {0.0}), SingularityError);

  // beta y + c of a Gaussian is Gaussian with scale beta sigma.
  const Density G = Density::gaussian_reference(1, 0.5);
  Eigen::VectorXd c(1);
  c << 0.2;
  const double beta = 0.7, s = beta * 0.5;
  for (double x : {-0.5, 0.2, 0.9})
    EXPECT_NEAR(pushforward_density(beta * I, c, G, {x}),
                std::exp(-0.5 * sq((x - 0.2) / s)) / (std::sqrt(2 * kPi) * s), 1e-14);
}

TEST(DetDerivative, Examples) {
  EXPECT_LE(det_derivative_check([](double t) { return Eigen::MatrixXd(t * Eigen::MatrixXd::Identity(2, 2)); }, 1.0,
                                 1e-5),
            1e-9);
  EXPECT_LE(det_derivative_check(
                [](double t) {
                  Eigen::MatrixXd X = Eigen::MatrixXd::Identity(2, 2);
                  X(1, 1) = 1 + t;
                  return X;
                },
                0.0, 1e-5),
            1e-9);
  Rng rng(5, "spd");
  Eigen::MatrixXd M(3, 3), B(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      M(i, j) = rng.normal();
      B(i, j) = rng.normal();
    }
  const Eigen::MatrixXd A = M * M.transpose() + 3 * Eigen::MatrixXd::Identity(3, 3);
  EXPECT_LE(det_derivative_check([&](double t) { return Eigen::MatrixXd(A + t * B); }, 0.1, 1e-5), 1e-5);
  EXPECT_THROW(det_derivative_check([](double) { return Eigen::MatrixXd(Eigen::MatrixXd::Zero(2, 2)); }, 0, 1e-5),
               SingularityError);
}

TEST(PsiBound, Examples) {
  const PsiCheck a = psi_bound_check(1, 1.0);
  EXPECT_NEAR(a.psi, std::exp(-0.5), 1e-12);
  EXPECT_NEAR(a.psi, a.bound, 1e-9);
  const PsiCheck b = psi_bound_check(2, 1.0);
  EXPECT_NEAR(b.psi, 1.0042, 1e-4);
  EXPECT_NEAR(b.bound, 2 * std::exp(-0.5), 1e-14);
  const PsiCheck c = psi_bound_check(3, 2.0);
  EXPECT_NEAR(c.psi, 6 * std::exp(-2.0), 1e-12);
  EXPECT_NEAR(c.bound, 12 * std::exp(-2.0), 1e-14);
  EXPECT_THROW(psi_bound_check(21, 2.0), ArgumentError);
  EXPECT_THROW(psi_bound_check(2, 0.5), ArgumentError);
}

TEST(PsiBound, EqualityAtOneStrictAbove) {
  for (double z = 1; z <= 6; z += 0.5) {
    const PsiCheck one = psi_bound_check(1, z);
    EXPECT_NEAR(one.psi, one.bound, 1e-9);
    for (int ell = 2; ell <= 6; ++ell) {
      const PsiCheck c = psi_bound_check(ell, z);
      EXPECT_LT(c.psi, c.bound) << ell << " " << z;
      EXPECT_LE(c.error_estimate, 1e-10);
    }
  }
}

TEST(PtSandwich, UniformOneDimension) {
  const GaussianPath P(Schedule::power_law(1.0, 0.5), Density::uniform(1));
  const Vec times = TimeGrid{}.partition();
  const BoundReport r = verify_pt_sandwich(P, times);
  EXPECT_TRUE(r.pass()) << r.fitted_constant;
  EXPECT_GE(r.fitted_constant, 2.0);  // p_t = 1/2 deep inside the cube for small t

  QuadratureSpec q;
  q.nodes_1d *= 2;
  q.min_panel_nodes *= 2;
  const BoundReport r2 = verify_pt_sandwich(GaussianPath(Schedule::power_law(1.0, 0.5), Density::uniform(1), q), times);
  EXPECT_NEAR(r2.fitted_constant / r.fitted_constant, 1.0, 0.05);
}

TEST(PtSandwich, BoundaryPointReducesToConstantBand) {
  const GaussianPath P(Schedule::power_law(1.0, 0.5), Density::uniform(1));
  const ScheduleState st = P.state(0.2);
  const double p = P.density_at(st, {st.beta});
  const BoundReport r = verify_pt_sandwich(P, {0.2});
  EXPECT_GE(r.fitted_constant, std::max(p, 1 / p));
}

TEST(AtBound, LinearIsNotApplicable) {
  const GaussianPath P(Schedule::linear(), Density::uniform(1));
  const BoundReport r = verify_at_bound(P, {0.1, 0.5});
  EXPECT_EQ(r.verdict, Verdict::NotApplicable);
}

TEST(AtBound, PowerScheduleFitsFiniteConstant) {
  const GaussianPath P(Schedule::power_law(1.0, 0.5), Density::uniform(1));
  const BoundReport r = verify_at_bound(P, TimeGrid{}.partition(), 15);
  EXPECT_TRUE(std::isfinite(r.fitted_constant));
  EXPECT_GT(r.fitted_constant, 0);
  EXPECT_EQ(r.extra.at("alpha2_negative"), 1.0);
  EXPECT_TRUE(std::isfinite(r.extra.at("C4")));

  // x = 0 at t = 0.25 by direct quadrature.
  const ScheduleState st = P.state(0.25);
  const double a = norm2(marginal_acceleration(P, 0.25, {0.0}));
  EXPECT_LE(a, r.fitted_constant * (std::abs(st.alpha2) + std::abs(st.beta2)) + 1e-12);
}

TEST(TailIntegral, PowerSchedulePasses) {
  const GaussianPath P(Schedule::power_law(1.0, 0.5), Density::uniform(1));
  const TailIntegral ti = tail_integral_at(P, 0.05, 3.0, 0.1);
  EXPECT_EQ(ti.verdict, Verdict::Pass) << ti.C_tilde;
  EXPECT_LE(ti.value, ti.bound);
  const TailIntegral wide = tail_integral_at(P, 0.05, 3.0, 0.1, 1e3, 10.0);
  EXPECT_NEAR(wide.value, ti.value, 1e-8 * ti.value);
}

TEST(TailIntegral, DecaysWithC5) {
  const GaussianPath P(Schedule::power_law(1.0, 0.5), Density::uniform(1));
  const double eps = 0.1;
  for (double t : {0.01, 0.2}) {
    const double l2 = tail_integral_at(P, t, 2.0, eps).value, l4 = tail_integral_at(P, t, 4.0, eps).value;
    EXPECT_LE(l4 / l2, std::pow(eps, 5.4)) << t;
  }
}

TEST(TailIntegral, LinearIsNotApplicable) {
  const GaussianPath P(Schedule::linear(), Density::uniform(1));
  EXPECT_EQ(tail_integral_at(P, 0.3, 3.0, 0.1).verdict, Verdict::NotApplicable);
  EXPECT_THROW(tail_integral_at(P, 0.3, 3.0, 0.5), ArgumentError);
}

TEST(TailIntegral, TwoDimensional) {
  const GaussianPath P(Schedule::power_law(1.0, 0.5), Density::uniform(2));
  const TailIntegral ti = tail_integral_at(P, 0.1, 3.0, 0.1);
  EXPECT_GT(ti.value, 0);
  EXPECT_EQ(ti.verdict, Verdict::Pass) << ti.C_tilde;
}

TEST(WindowTruncation, Examples) {
  const GaussianPath P(Schedule::power_law(1.0, 0.5), Density::uniform(1));
  EXPECT_EQ(window_truncation_error(P, 0.01, {0.3}, [](const Vec&) { return 0.0; }, 3.0, 256).difference, 0.0);
  // Window wider than the support: both integrals see the same nodes.
  EXPECT_EQ(window_truncation_error(P, 0.9, {0.0}, [](const Vec&) { return 1.0; }, 30.0, 256).difference, 0.0);
  const Density U = Density::uniform(1);
  for (double t : {1e-3, 0.05})
    for (double x : {0.0, 0.5, 0.99}) {
      const WindowCheck w = window_truncation_error(P, t, {x}, [&](const Vec& y) { return U.eval(y); }, 3.0, 256);
      EXPECT_TRUE(w.pass) << t << " " << x << " " << w.difference << " " << w.epsilon;
      EXPECT_LE(w.difference, std::pow(256.0, -4.05) * 0.5 / std::pow(P.state(t).beta, 1));
    }
}

TEST(SmallDensity, Examples) {
  const GaussianPath P(Schedule::power_law(1.0, 0.5), Density::uniform(1));
  const double N = 64, s = 1, omega = 0.5, t = 0.05;
  auto zero = [](const Vec& x) { return Vec(x.size(), 0.0); };
  EXPECT_EQ(small_density_region_mass(P, t, 0.0, zero, N, s, omega).value, 0.0);
  auto exact = [&](const Vec& x) { return marginal_acceleration(P, t, x); };
  EXPECT_EQ(small_density_region_mass(P, t, 1.0, exact, N, s, omega).value, 0.0);
  const double thr = std::pow(N, -(2 * s + omega));
  const SmallDensityMass m = small_density_region_mass(P, t, thr, zero, N, s, omega);
  EXPECT_GT(m.value, 0);
  EXPECT_TRUE(std::isfinite(m.C_fit));
}

TEST(PosteriorMeanLipschitz, ReportedFinite) {
  const GaussianPath P(Schedule::power_law(1.0, 0.5), Density::uniform(1));
  const BoundReport r = posterior_mean_lipschitz(P, {0.01, 0.1, 0.5});
  EXPECT_TRUE(std::isfinite(r.fitted_constant));
  EXPECT_GT(r.fitted_constant, 0);
}
