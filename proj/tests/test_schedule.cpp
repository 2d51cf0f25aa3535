#include <gtest/gtest.h>

#include "hoflow/schedule.hpp"

using namespace hoflow;

namespace {

void expect_state(const ScheduleState& s, double a, double b, double a1, double b1, double a2, double b2) {
  EXPECT_NEAR(s.alpha, a, 1e-14);
  EXPECT_NEAR(s.beta, b, 1e-14);
  EXPECT_NEAR(s.alpha1, a1, 1e-14);
  EXPECT_NEAR(s.beta1, b1, 1e-14);
  EXPECT_NEAR(s.alpha2, a2, 1e-14);
  EXPECT_NEAR(s.beta2, b2, 1e-14);
}

void expect_fd_consistent(const Schedule& s, double t, double h = 1e-5) {
  const ScheduleState c = s.eval(t), p = s.eval(t + h), m = s.eval(t - h);
  auto rel = [](double exact, double fd) { return std::abs(exact - fd) / std::max(1.0, std::abs(exact)); };
  EXPECT_LE(rel(c.alpha1, (p.alpha - m.alpha) / (2 * h)), 1e-6) << "t=" << t;
  EXPECT_LE(rel(c.beta1, (p.beta - m.beta) / (2 * h)), 1e-6) << "t=" << t;
  EXPECT_LE(rel(c.alpha2, (p.alpha1 - m.alpha1) / (2 * h)), 1e-6) << "t=" << t;
  EXPECT_LE(rel(c.beta2, (p.beta1 - m.beta1) / (2 * h)), 1e-6) << "t=" << t;
}

}  // namespace

TEST(Schedule, LinearMidpoint) { expect_state(Schedule::linear().eval(0.5), 0.5, 0.5, -1, 1, 0, 0); }

TEST(Schedule, PowerLawQuarter) {
  expect_state(Schedule::power_law(1, 0.5).eval(0.25), 0.5, 0.75, 1, -1, -2, 0);
}

TEST(Schedule, PowerLawAtOne) {
  const auto s = Schedule::power_law(1, 0.5).eval(1.0);
  EXPECT_DOUBLE_EQ(s.alpha, 1.0);
  EXPECT_DOUBLE_EQ(s.alpha1, 0.5);
  EXPECT_DOUBLE_EQ(s.alpha2, -0.25);
}

TEST(Schedule, PowerLawAtZeroNamesDerivative) {
  try {
    Schedule::power_law(1, 0.5).eval(0.0);
    FAIL() << "expected DomainError";
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("alpha1"), std::string::npos) << e.what();
  }
}

TEST(Schedule, RejectsNegativeTime) { EXPECT_THROW(Schedule::linear().eval(-0.1), DomainError); }

TEST(Schedule, DerivativesMatchFiniteDifferences) {
  const Schedule kinds[] = {Schedule::linear(), Schedule::power_law(1, 0.5), Schedule::power_law(2, 0.75, 0.5, 1.5),
                            Schedule::power_law(1, 1.0, 1.0, 2.0)};
  for (const auto& s : kinds)
    for (double t : {0.01, 0.05, 0.1, 0.3, 0.5, 0.77, 0.99}) expect_fd_consistent(s, t);
}

TEST(Schedule, RebasedDerivativesMatchFiniteDifferences) {
  const Schedule r = rebase_schedule(Schedule::power_law(1, 0.5), 0.1);
  for (double t = 0.2; t < 0.999; t += 0.05) expect_fd_consistent(r, t);
}

TEST(Schedule, PowerLawSmallTimeExponent) {
  const double kappa = 0.5;
  const Schedule s = Schedule::power_law(1.3, kappa);
  TimeGrid g;
  g.N = 64;
  const double t0 = g.T0();
  const double slope = (std::log(s.alpha(t0 * 1e3)) - std::log(s.alpha(t0))) / std::log(1e3);
  EXPECT_NEAR(slope, kappa, 1e-3);
}

TEST(Schedule, CustomValidatesCallbacks) {
  CustomCoefficients good{[](double t) { return std::cos(t); }, [](double t) { return -std::sin(t); },
                          [](double t) { return -std::cos(t); }, [](double t) { return std::sin(t); },
                          [](double t) { return std::cos(t); }, [](double t) { return -std::sin(t); }};
  const Schedule s = Schedule::custom(good);
  EXPECT_NEAR(s.eval(0.3).alpha1, -std::sin(0.3), 1e-15);
  CustomCoefficients bad = good;
  bad.alpha2 = [](double t) { return std::cos(t); };
  EXPECT_THROW(Schedule::custom(bad), ArgumentError);
}

TEST(TimeGrid, DerivedTimes) {
  TimeGrid g;
  g.N = 256;
  g.R0 = 4;
  g.delta = 0.1;
  g.kappa = 0.5;
  EXPECT_DOUBLE_EQ(g.T0(), std::pow(256.0, -4.0));
  EXPECT_DOUBLE_EQ(g.T_star(), std::pow(256.0, -1.9));
  EXPECT_NO_THROW(g.validate());
  const Vec p = g.partition();
  EXPECT_DOUBLE_EQ(p.front(), g.T0());
  EXPECT_DOUBLE_EQ(p.back(), 1.0);
  for (std::size_t i = 1; i < p.size(); ++i) {
    EXPECT_LT(p[i - 1], p[i]);
    if (i + 1 < p.size()) {
      EXPECT_DOUBLE_EQ(p[i], 2 * p[i - 1]);
    }
  }
}

TEST(TimeGrid, AdmissibleLadder) {
  for (double N : {16.0, 64.0, 256.0, 4096.0})
    for (int d = 1; d <= 3; ++d) {
      TimeGrid g;
      g.N = N;
      g.d = d;
      EXPECT_LT(g.T0(), g.T_star());
      EXPECT_LT(g.T_star(), 1.0);
    }
}

TEST(Assumptions, LinearHasZeroSecondIntegral) {
  TimeGrid g;
  g.N = 64;
  const auto r = check_assumptions(Schedule::linear(), g);
  EXPECT_EQ(r.integral2, 0.0);
  // alpha^2 + beta^2 = (1-t)^2 + t^2 is smallest at t = 1/2 (value 1/2, so D0 = 2).
  EXPECT_NEAR(r.D0, 2.0, 1e-3);
  EXPECT_NEAR(r.D0_witness_t, 0.5, 0.01);
  EXPECT_TRUE(r.pass());
}

TEST(Assumptions, SecondDerivativeIntegralAgainstLogTrapezoid) {
  TimeGrid g;
  g.N = 256;
  g.R0 = 4;
  const Schedule s = Schedule::power_law(1, 0.5);
  AssumptionOptions opt;
  opt.gamma = 1.0;
  const auto r = check_assumptions(s, g, opt);
  // Oracle: 10^6-point trapezoid in u = log t of (a''^2 + b''^2) t.
  const double lo = std::log(g.T0()), hi = std::log(std::pow(g.N, -1.0));
  const int n = 1000000;
  const double h = (hi - lo) / (n - 1);
  double acc = 0;
  for (int i = 0; i < n; ++i) {
    const double t = std::exp(lo + i * h);
    const auto st = s.eval(t);
    const double f = (st.alpha2 * st.alpha2 + st.beta2 * st.beta2) * t;
    acc += (i == 0 || i == n - 1) ? 0.5 * f : f;
  }
  acc *= h;
  EXPECT_LE(std::abs(r.integral2 - acc) / acc, 1e-6);
  // The first-order integral is (1/4) log(N^-1 / T0) plus the beta' part.
  const double i1 = 0.25 * (hi - lo) + (std::exp(hi) - std::exp(lo));
  EXPECT_NEAR(r.integral1, i1, 1e-9 * i1);
  bool first_ok = false, second_ok = true;
  for (const auto& e : r.entries) {
    if (e.name == "first-derivative-integral") first_ok = e.pass;
    if (e.name == "second-derivative-integral") second_ok = e.pass;
  }
  EXPECT_TRUE(first_ok);
  // alpha''^2 ~ t^-3 makes the second-order integral polynomial in N.
  EXPECT_FALSE(second_ok);
}

TEST(Assumptions, InvalidBetaFails) {
  CustomCoefficients c{[](double t) { return 1.0 - 0.5 * t; }, [](double) { return -0.5; }, [](double) { return 0.0; },
                       [](double) { return 2.0; },           [](double) { return 0.0; },  [](double) { return 0.0; }};
  TimeGrid g;
  g.N = 64;
  const auto r = check_assumptions(Schedule::custom(c), g);
  EXPECT_FALSE(r.pass());
  bool d0_failed = false;
  for (const auto& e : r.entries)
    if (e.name == "D0" && !e.pass) {
      d0_failed = true;
      EXPECT_GT(e.value, e.bound);
    }
  EXPECT_TRUE(d0_failed);
}

TEST(Rebase, CollapsesAtAnchor) {
  for (const Schedule& s : {Schedule::power_law(1, 0.5), Schedule::power_law(1, 1.0), Schedule::power_law(0.7, 0.8, 0.9, 1.2)}) {
    const Schedule r = rebase_schedule(s, 0.2);
    EXPECT_NEAR(r.alpha(0.2), 0.0, 1e-7);
    EXPECT_DOUBLE_EQ(r.beta(0.2), 1.0);
    EXPECT_THROW(r.eval(0.2), DomainError);
  }
}

TEST(Rebase, KappaOneEndpoint) {
  // alpha = t, beta = 1 - t rebased at 0.5: beta~(1) = 0, alpha~(1) = 1.
  const Schedule r = rebase_schedule(Schedule::power_law(1, 1.0), 0.5);
  EXPECT_NEAR(r.beta(1.0), 0.0, 1e-15);
  EXPECT_NEAR(r.alpha(1.0), 1.0, 1e-15);
}

TEST(Rebase, LinearPastAnchorHasNegativeRadicand) {
  EXPECT_THROW(rebase_schedule(Schedule::linear(), 0.5), DomainError);
}

TEST(Rebase, PowerHalfByHand) {
  // t* = 1/4: a*^2 = 1/4, b* = 3/4. At t = 3/4: a^2 = 3/4, b = 1/4.
  const Schedule r = rebase_schedule(Schedule::power_law(1, 0.5), 0.25);
  const double t = 0.75;
  const double bt = (1 - t) / 0.75;                  // 1/3
  const double q = t - bt * bt * 0.25;               // 3/4 - 1/36
  const double bt1 = -1 / 0.75;                      // -4/3
  const double q1 = 1.0 - 2 * bt * bt1 * 0.25;       // d/dt t = 1
  const double q2 = -2 * bt1 * bt1 * 0.25;           // beta'' = 0
  const auto st = r.eval(t);
  EXPECT_NEAR(st.beta, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(st.alpha, std::sqrt(q), 1e-15);
  EXPECT_NEAR(st.alpha, std::sqrt(0.75 - 1.0 / 36.0), 1e-15);
  EXPECT_NEAR(st.alpha1, 0.5 * q1 / std::sqrt(q), 1e-14);
  EXPECT_NEAR(st.alpha2, 0.5 * q2 / std::sqrt(q) - 0.25 * q1 * q1 / std::pow(q, 1.5), 1e-14);
  EXPECT_NEAR(st.beta1, bt1, 1e-15);
  EXPECT_EQ(st.beta2, 0.0);
}

TEST(Rebase, AlphaLowerBoundPastTwiceAnchor) {
  const Schedule base = Schedule::power_law(1, 0.5);
  TimeGrid g;
  g.N = 64;
  const double D0 = check_assumptions(base, g).D0;
  // The lower bound is derived on the region beta~ <= rho = 1/(sqrt(2) D0).
  const double rho = 1.0 / (std::sqrt(2.0) * D0);
  const Schedule r = rebase_schedule(base, 0.1);
  int checked = 0;
  for (double t = 0.2; t <= 1.0; t += 0.01) {
    if (r.beta(t) > rho) continue;
    ++checked;
    EXPECT_GE(sq(r.alpha(t)), 1.0 / (2 * D0)) << t;
  }
  EXPECT_GT(checked, 10);
}

TEST(Schedule, NoiseEnd) {
  EXPECT_EQ(Schedule::linear().noise_time(), 0.0);
  EXPECT_EQ(Schedule::power_law(1, 0.5).noise_time(), 1.0);
}
