#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "hoflow/accel_audit.hpp"
#include "hoflow/bspline_fit.hpp"
#include "hoflow/relunet.hpp"
#include "hoflow/rng.hpp"

using namespace hoflow;

namespace {

ReluNetwork random_net(const std::vector<int>& dims, Rng& rng) {
  std::vector<NetLayer> L;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Eigen::MatrixXd W(dims[l + 1], dims[l]);
    Eigen::VectorXd b(dims[l + 1]);
    for (int i = 0; i < W.size(); ++i) W.data()[i] = rng.normal();
    for (int i = 0; i < b.size(); ++i) b[i] = 0.1 * rng.normal();
    L.push_back(NetLayer(W, b));
  }
  return ReluNetwork(L);
}

}  // namespace

TEST(NetworkStats, IdentityAndClip) {
  const NetworkStats id = network_stats(ReluNetwork::identity(4));
  EXPECT_EQ(id.L, 1);
  EXPECT_EQ(id.W, (std::vector<int>{4, 4}));
  EXPECT_EQ(id.S, 4);
  EXPECT_EQ(id.B, 1.0);
  const NetworkStats c = network_stats(build_clip({-1.0, 0.0, 2.0}, {1.0, 5.0, 3.0}));
  EXPECT_EQ(c.L, 2);
  EXPECT_EQ(c.W, (std::vector<int>{3, 6, 3}));
  EXPECT_LE(c.S, 21);
  EXPECT_EQ(c.B, 5.0);
}

TEST(Clip, ExactAndRejectsInvertedBounds) {
  const ReluNetwork c = build_clip({-0.5, 1.0}, {0.25, 1.0});
  for (double v = -3; v <= 3; v += 0.01) {
    const Vec y = c.eval({v, v});
    EXPECT_NEAR(y[0], std::min(0.25, std::max(v, -0.5)), 4e-16 * (1 + std::abs(v)));
    EXPECT_EQ(y[1], 1.0);
  }
  EXPECT_THROW(build_clip({1.0}, {0.0}), ArgumentError);
}

TEST(Serialization, RoundTripIsBitExact) {
  Rng rng(3, "relunet-test");
  const ReluNetwork n = compose(random_net({3, 5, 4}, rng), random_net({4, 2}, rng));
  std::stringstream ss;
  n.write(ss);
  const ReluNetwork m = ReluNetwork::read(ss);
  EXPECT_EQ(network_stats(m).S, network_stats(n).S);
  for (int i = 0; i < 50; ++i) {
    const Vec x{rng.normal(), rng.normal(), rng.normal()};
    EXPECT_EQ(n.eval(x), m.eval(x));
  }
  std::stringstream bad("relunet 1\n2 2\nlayer 1\n5 0 1.0\nbias 0 0\n");
  EXPECT_THROW(ReluNetwork::read(bad), ConfigError);
  std::stringstream trunc("relunet 2\n2 2\n");
  EXPECT_THROW(ReluNetwork::read(trunc), ConfigError);
}

TEST(Composition, MatchesStagedEvaluation) {
  Rng rng(11, "relunet-test");
  const ReluNetwork a = random_net({2, 6, 3}, rng), b = random_net({3, 4, 4, 2}, rng), c = random_net({2, 3, 1}, rng);
  const ReluNetwork ab_c = compose(compose(a, b), c), a_bc = compose(a, compose(b, c));
  EXPECT_EQ(ab_c.depth(), a.depth() + b.depth() + c.depth());
  for (int i = 0; i < 200; ++i) {
    const Vec x{2 * rng.normal(), 2 * rng.normal()};
    const double staged = c.eval(b.eval(a.eval(x)))[0];
    EXPECT_NEAR(ab_c.eval(x)[0], staged, 1e-12 * (1 + std::abs(staged)));
    EXPECT_NEAR(a_bc.eval(x)[0], staged, 1e-12 * (1 + std::abs(staged)));
  }
  EXPECT_THROW(compose(a, c), ArgumentError);
}

TEST(Composition, PaddingFanoutAndStackAreExact) {
  Rng rng(5, "relunet-test");
  const ReluNetwork a = random_net({2, 3, 2}, rng), b = random_net({2, 4, 4, 4, 1}, rng);
  const ReluNetwork p = pad_depth(a, 6);
  EXPECT_EQ(p.depth(), 6);
  const ReluNetwork f = fanout({a, b});
  const ReluNetwork s = stack({a, b});
  for (int i = 0; i < 100; ++i) {
    const Vec x{rng.normal(), rng.normal()}, y{rng.normal(), rng.normal()};
    EXPECT_EQ(p.eval(x), a.eval(x));
    const Vec fx = f.eval(x);
    EXPECT_EQ(fx[0], a.eval(x)[0]);
    EXPECT_EQ(fx[1], a.eval(x)[1]);
    EXPECT_EQ(fx[2], b.eval(x)[0]);
    const Vec sx = s.eval({x[0], x[1], y[0], y[1]});
    EXPECT_EQ(sx[2], b.eval(y)[0]);
  }
  EXPECT_THROW(fanout({a, random_net({3, 1}, rng)}), ArgumentError);
}

TEST(Recip, ErrorEnvelopeAtEveryPoint) {
  for (double eps : {0.1, 0.05, 0.02, 0.01}) {
    const ReluNetwork r = build_recip(eps);
    for (int i = 0; i <= 5000; ++i) {
      const double x = eps * std::pow(1 / (eps * eps), i / 5000.0);
      ASSERT_LE(std::abs(r.eval({x})[0] - 1 / x), eps) << "eps=" << eps << " x=" << x;
      // Perturbed input: |recip(x') - 1/x| <= eps + |x - x'| / eps^2.
      const double xp = x * (1 + 1e-3);
      ASSERT_LE(std::abs(r.eval({xp})[0] - 1 / x), eps + std::abs(xp - x) / (eps * eps));
    }
    // Clipped outside the range.
    EXPECT_NEAR(r.eval({0.0})[0], 1 / eps, eps);
    EXPECT_NEAR(r.eval({1e6})[0], eps, eps);
  }
  EXPECT_THROW(build_recip(0.0), ArgumentError);
  EXPECT_THROW(build_recip(0.5), ArgumentError);
}

TEST(Mult, ExampleZeroAbsorptionAndWidth) {
  const ReluNetwork m2 = build_mult(2, 1.0, 0.01);
  EXPECT_NEAR(m2.eval({0.5, 0.5})[0], 0.25, 0.01);
  const ReluNetwork m3 = build_mult(3, 1.0, 0.01);
  Rng rng(17, "relunet-test");
  for (int i = 0; i < 500; ++i) {
    const double x = rng.uniform(-3, 3), y = rng.uniform(-3, 3);
    EXPECT_EQ(m3.eval({x, 0.0, y})[0], 0.0);
    EXPECT_EQ(m2.eval({0.0, y})[0], 0.0);
    // Output magnitude bounded by C^d even off the box.
    EXPECT_LE(std::abs(m3.eval({x, y, 2 * x})[0]), 1.0);
  }
  EXPECT_LE(network_stats(m2).max_width(), 96);
  EXPECT_LE(network_stats(m3).max_width(), 144);
  EXPECT_THROW(build_mult(1, 1.0, 0.01), ArgumentError);
  EXPECT_THROW(build_mult(2, 0.5, 0.01), ArgumentError);
  EXPECT_THROW(build_mult(2, 1.0, 0.2), ArgumentError);
}

TEST(Mult, DepthGrowsLogarithmically) {
  // L = levels + 4 with levels = ceil(log4(C^2 / (4 eps))).
  for (double eps : {0.05, 0.01, 1e-3, 1e-4, 1e-6}) {
    const NetworkStats s = network_stats(build_mult(2, 1.0, eps));
    EXPECT_EQ(s.L, mult_pair_levels(1.0, 1.0, eps) + 4);
    EXPECT_LE(s.L, 4 + 1 + std::log(1 / eps) / std::log(4.0));
    EXPECT_EQ(s.max_width(), 6);
  }
}

TEST(GadgetAudit, AllRowsPass) {
  const GadgetAudit a = audit_gadgets();
  for (const auto& r : a.rows) {
    EXPECT_TRUE(r.pass()) << r.gadget << " " << r.params << " err=" << r.max_error;
  }
  EXPECT_TRUE(a.growth_ok);
}

TEST(BsplineNet, HatIsExact) {
  const ReluNetwork n = compile_bspline_net({0}, {0}, 1, 0.01);
  for (double x = -3; x <= 5; x += 0.001) ASSERT_LE(std::abs(n.eval({x})[0] - cardinal_bspline(1, x)), 1e-12);
}

TEST(BsplineNet, WithinEpsAndZeroOffSupport) {
  for (int ell = 2; ell <= 4; ++ell) {
    const double eps = 0.01;
    const ReluNetwork n = compile_bspline_net({0}, {0}, ell, eps);
    for (double x = 0; x <= ell + 1; x += 0.0037) ASSERT_LE(std::abs(n.eval({x})[0] - cardinal_bspline(ell, x)), eps);
    for (double x : {-1.0, -2.5, -40.0, ell + 2.0, ell + 3.5, 100.0}) EXPECT_EQ(n.eval({x})[0], 0.0) << x;
  }
  const ReluNetwork n0 = compile_bspline_net({0}, {0}, 0, 0.01);
  EXPECT_EQ(n0.eval({0.5})[0], 1.0);
  EXPECT_EQ(n0.eval({1.5})[0], 0.0);
  EXPECT_EQ(n0.eval({-0.5})[0], 0.0);
  EXPECT_THROW(compile_bspline_net({0}, {0}, 5, 0.01), ArgumentError);
}

TEST(BsplineNet, ScaledTensorTerm) {
  const std::vector<int> k{2, 1}, j{-3, 0};
  const ReluNetwork n = compile_bspline_net(k, j, 2, 0.01);
  for (double x = -1.5; x <= 0.5; x += 0.043)
    for (double y = -0.5; y <= 2.0; y += 0.057)
      ASSERT_LE(std::abs(n.eval({x, y})[0] - tensor_bspline(k, j, 2, {x, y})), 0.01);
  EXPECT_EQ(n.eval({5.0, 0.5})[0], 0.0);
}

TEST(AccelNet, ZeroInputsGiveExactZero) {
  AccelNetConfig c;
  c.clamp = 1e-3;
  c.N = 64;
  c.a2_range = 2.0;
  c.b2_range = 3.0;
  const ReluNetwork z = ReluNetwork::constant(2, {0.0});
  const ReluNetwork u5 = ReluNetwork::select(2, {0});
  const ReluNetwork u8 = assemble_accel_net(u5, z, z, ReluNetwork::constant(2, {2.0}), ReluNetwork::constant(2, {-3.0}), c);
  Rng rng(2, "relunet-test");
  for (int i = 0; i < 200; ++i) EXPECT_EQ(u8.eval({rng.uniform(-1, 2), rng.normal()})[0], 0.0);
}

TEST(AccelNet, ZeroAlphaTermLeavesOnlySecondBranch) {
  AccelNetConfig c;
  c.clamp = 1e-2;
  c.N = 16;
  c.a2_range = 0.0;
  c.b2_range = 2.0;
  c.u6_range = 1.0;
  c.u7_range = 1.0;
  // Input [f1, f2, f3].
  const ReluNetwork u8 = assemble_accel_net(ReluNetwork::select(3, {0}), ReluNetwork::select(3, {1}),
                                            ReluNetwork::select(3, {2}), ReluNetwork::constant(3, {0.0}),
                                            ReluNetwork::constant(3, {2.0}), c);
  Rng rng(4, "relunet-test");
  for (int i = 0; i < 200; ++i) {
    const double f1 = rng.uniform(0.2, 1.0), f2 = rng.uniform(-1, 1), f3 = rng.uniform(-0.2, 0.2);
    // zeta8 = 2 clip(f3 / f1, +-C5).
    EXPECT_NEAR(u8.eval({f1, f2, f3})[0], 2 * std::clamp(f3 / f1, -3.0, 3.0), 5 * c.eps_gadget);
  }
}

TEST(AccelNet, DepthIsSumOfStagesAndRejectsBadInput) {
  AccelNetConfig c;
  c.clamp = 1e-3;
  c.N = 64;
  AccelNetInfo info;
  const ReluNetwork sel = ReluNetwork::select(3, {0});
  const ReluNetwork u8 = assemble_accel_net(sel, ReluNetwork::select(3, {1}), ReluNetwork::select(3, {2}),
                                            ReluNetwork::constant(3, {1.0}), ReluNetwork::constant(3, {1.0}), c, &info);
  // Hand count: inputs 1, recip 5, mult levels + 4, clip 2, mult levels + 4, sum 1.
  const double z2 = 1 / c.clamp + info.tau_recip;
  const int m2 = std::max(mult_pair_levels(z2, c.u6_range, info.eps_mult3), mult_pair_levels(z2, c.u7_range, info.eps_mult5));
  const double lim4 = c.C5 * std::sqrt(std::log(c.N));
  const int m4 = std::max(mult_pair_levels(lim4, c.a2_range, info.eps_mult7), mult_pair_levels(c.C5, c.b2_range, info.eps_mult8));
  EXPECT_EQ(u8.depth(), 1 + 5 + (m2 + 4) + 2 + (m4 + 4) + 1);
  int sum = 0;
  for (int L : info.stage_depths) sum += L;
  EXPECT_EQ(u8.depth(), sum + info.coupling_layers);
  EXPECT_EQ(info.coupling_layers, 0);
  c.clamp = 0;
  EXPECT_THROW(assemble_accel_net(sel, sel, sel, sel, sel, c), ArgumentError);
  c.clamp = 1e-3;
  EXPECT_THROW(assemble_accel_net(sel, ReluNetwork::select(3, {1, 2}), sel, sel, sel, c), ArgumentError);
}

TEST(AccelNet, OracleInputsMatchF4WithinBudget) {
  const Density D = Density::bump_product(1, {0.5, 0.0, 0.5, 1.5});
  const ScheduleState st = Schedule::power_law(1, 0.5).eval(0.3);
  int prev_depth = 0;
  for (int N : {16, 64, 256}) {
    const FitResult f = fit_expansion(D, N);
    const AccelAudit a = audit_accel_net(f.E, st, N);
    EXPECT_EQ(a.points, 1000);
    EXPECT_EQ(a.indicator_violations, 0);
    EXPECT_LE(a.max_error, a.budget) << "N=" << N;
    EXPECT_GE(a.stats.L, prev_depth);
    EXPECT_LE(a.stats.L, std::pow(std::log(N), 4));
    prev_depth = a.stats.L;
  }
}
