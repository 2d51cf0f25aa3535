#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <sstream>
#include <string>

#include "hoflow/core.hpp"
#include "hoflow/quadrature.hpp"

namespace hoflow {

struct ScheduleState {
  double alpha = 0, beta = 0;
  double alpha1 = 0, beta1 = 0;
  double alpha2 = 0, beta2 = 0;
};

enum class ScheduleKind { Linear, PowerLaw, Custom, Rebased };

inline const char* to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::Linear: return "linear";
    case ScheduleKind::PowerLaw: return "power-law";
    case ScheduleKind::Custom: return "custom-coefficients";
    case ScheduleKind::Rebased: return "rebased";
  }
  return "?";
}

// Callbacks for a user-supplied schedule. Derivatives are validated against
// central differences when the schedule is built.
struct CustomCoefficients {
  std::function<double(double)> alpha, alpha1, alpha2;
  std::function<double(double)> beta, beta1, beta2;
};

// Interpolation schedule x_t = alpha_t x0 + beta_t x1 with closed-form
// derivatives. Immutable; copies share the (immutable) base of rebased kinds.
class Schedule {
 public:
  // alpha = 1 - t, beta = t.
  static Schedule linear() {
    Schedule s;
    s.kind_ = ScheduleKind::Linear;
    return s;
  }

  // alpha = b0 t^kappa, beta = 1 - b0_tilde t^kappa_tilde.
  static Schedule power_law(double b0, double kappa, double b0_tilde = 1.0, double kappa_tilde = 1.0) {
    if (!(b0 > 0) || !(kappa >= 0.5) || !(b0_tilde > 0) || !(kappa_tilde > 0))
      throw ArgumentError("power_law: need b0 > 0, kappa >= 1/2, b0_tilde > 0, kappa_tilde > 0");
    Schedule s;
    s.kind_ = ScheduleKind::PowerLaw;
    s.b0_ = b0;
    s.kappa_ = kappa;
    s.b0_tilde_ = b0_tilde;
    s.kappa_tilde_ = kappa_tilde;
    return s;
  }

  static Schedule custom(CustomCoefficients c, double fd_tol = 1e-6, double h = 1e-5) {
    if (!c.alpha || !c.alpha1 || !c.alpha2 || !c.beta || !c.beta1 || !c.beta2)
      throw ArgumentError("custom schedule: all six callbacks are required");
    Schedule s;
    s.kind_ = ScheduleKind::Custom;
    s.custom_ = std::make_shared<CustomCoefficients>(std::move(c));
    s.validate_derivatives(fd_tol, h);
    return s;
  }

  ScheduleKind kind() const { return kind_; }
  double b0() const { return b0_; }
  double kappa() const { return kappa_; }
  double b0_tilde() const { return b0_tilde_; }
  double kappa_tilde() const { return kappa_tilde_; }
  double t_star() const { return t_star_; }
  const Schedule* base() const { return base_.get(); }

  // Exponent of alpha near t = 0 (1 for linear, whose alpha does not vanish).
  double small_t_exponent() const {
    if (kind_ == ScheduleKind::PowerLaw) return kappa_;
    if (kind_ == ScheduleKind::Rebased) return base_->small_t_exponent();
    return 1.0;
  }

  double alpha(double t) const { return values(t).first; }
  double beta(double t) const { return values(t).second; }

  // (alpha, beta) without derivatives; well defined where derivatives are not
  // (t = 0 for power laws, t = t_star for rebased schedules).
  std::pair<double, double> values(double t) const {
    switch (kind_) {
      case ScheduleKind::Linear: return {1.0 - t, t};
      case ScheduleKind::PowerLaw:
        return {b0_ * std::pow(t, kappa_), 1.0 - b0_tilde_ * std::pow(t, kappa_tilde_)};
      case ScheduleKind::Custom: return {custom_->alpha(t), custom_->beta(t)};
      case ScheduleKind::Rebased: {
        const auto [a, b] = base_->values(t);
        const double bt = b / beta_star_;
        const double q = a * a - bt * bt * alpha_star_ * alpha_star_;
        if (q < 0) {
          if (q > -1e-14) return {0.0, bt};
          throw DomainError(witness("rebased schedule: negative radicand", t));
        }
        return {std::sqrt(q), bt};
      }
    }
    return {0, 0};
  }

  ScheduleState eval(double t) const {
    if (!(t >= 0) || !std::isfinite(t)) throw DomainError(witness("eval_schedule: t must be finite and >= 0", t));
    ScheduleState s = raw_eval(t);
    const std::pair<const char*, double> named[] = {{"alpha", s.alpha},   {"beta", s.beta},
                                                    {"alpha1", s.alpha1}, {"beta1", s.beta1},
                                                    {"alpha2", s.alpha2}, {"beta2", s.beta2}};
    for (const auto& [name, v] : named)
      if (!std::isfinite(v)) throw DomainError(witness(std::string("eval_schedule: non-finite ") + name, t));
    return s;
  }

  // The endpoint where the interpolant is pure noise (smaller beta).
  double noise_time() const { return beta(1.0) <= beta(0.0) ? 1.0 : 0.0; }
  double data_time() const { return 1.0 - noise_time(); }

  std::string describe() const {
    std::ostringstream os;
    os << to_string(kind_);
    if (kind_ == ScheduleKind::PowerLaw)
      os << "(b0=" << b0_ << ",kappa=" << kappa_ << ",b0_tilde=" << b0_tilde_ << ",kappa_tilde=" << kappa_tilde_ << ")";
    if (kind_ == ScheduleKind::Rebased) os << "(" << base_->describe() << ",t_star=" << t_star_ << ")";
    return os.str();
  }

  friend Schedule rebase_schedule(const Schedule& s, double t_star);

 private:
  static std::string witness(const std::string& msg, double t) {
    std::ostringstream os;
    os.precision(17);
    os << msg << " at t=" << t;
    return os.str();
  }

  ScheduleState raw_eval(double t) const {
    ScheduleState s;
    switch (kind_) {
      case ScheduleKind::Linear:
        s = {1.0 - t, t, -1.0, 1.0, 0.0, 0.0};
        break;
      case ScheduleKind::PowerLaw: {
        const double k = kappa_, kt = kappa_tilde_;
        s.alpha = b0_ * std::pow(t, k);
        s.alpha1 = k == 1.0 ? b0_ : b0_ * k * std::pow(t, k - 1);
        s.alpha2 = k == 1.0 ? 0.0 : (k == 2.0 ? 2.0 * b0_ : b0_ * k * (k - 1) * std::pow(t, k - 2));
        s.beta = 1.0 - b0_tilde_ * std::pow(t, kt);
        s.beta1 = kt == 1.0 ? -b0_tilde_ : -b0_tilde_ * kt * std::pow(t, kt - 1);
        s.beta2 = kt == 1.0 ? 0.0 : (kt == 2.0 ? -2.0 * b0_tilde_ : -b0_tilde_ * kt * (kt - 1) * std::pow(t, kt - 2));
        break;
      }
      case ScheduleKind::Custom:
        s = {custom_->alpha(t),  custom_->beta(t),  custom_->alpha1(t),
             custom_->beta1(t),  custom_->alpha2(t), custom_->beta2(t)};
        break;
      case ScheduleKind::Rebased: {
        // beta~ = beta/beta*, alpha~ = sqrt(q), q = alpha^2 - beta~^2 alpha*^2.
        const ScheduleState b = base_->raw_eval(t);
        const double as2 = alpha_star_ * alpha_star_;
        const double bt = b.beta / beta_star_, bt1 = b.beta1 / beta_star_, bt2 = b.beta2 / beta_star_;
        const double q = b.alpha * b.alpha - bt * bt * as2;
        const double q1 = 2.0 * b.alpha * b.alpha1 - 2.0 * bt * bt1 * as2;
        const double q2 = 2.0 * (b.alpha1 * b.alpha1 + b.alpha * b.alpha2) - 2.0 * (bt1 * bt1 + bt * bt2) * as2;
        if (q < -1e-14) throw DomainError(witness("rebased schedule: negative radicand", t));
        const double a = std::sqrt(std::max(q, 0.0));
        s.alpha = a;
        s.beta = bt;
        s.alpha1 = q1 / (2.0 * a);
        s.alpha2 = (2.0 * q2 * q - q1 * q1) / (4.0 * q * a);
        s.beta1 = bt1;
        s.beta2 = bt2;
        break;
      }
    }
    return s;
  }

  void validate_derivatives(double tol, double h) const {
    for (int i = 1; i < 64; ++i) {
      const double t = 0.05 + 0.9 * i / 64.0;
      const ScheduleState s = raw_eval(t);
      const ScheduleState p = raw_eval(t + h), m = raw_eval(t - h);
      auto check = [&](double exact, double fd, const char* name) {
        if (!(std::abs(exact - fd) <= tol * std::max(1.0, std::abs(exact))))
          throw ArgumentError(witness(std::string("custom schedule: derivative ") + name +
                                          " disagrees with finite differences",
                                      t));
      };
      check(s.alpha1, (p.alpha - m.alpha) / (2 * h), "alpha1");
      check(s.beta1, (p.beta - m.beta) / (2 * h), "beta1");
      check(s.alpha2, (p.alpha1 - m.alpha1) / (2 * h), "alpha2");
      check(s.beta2, (p.beta1 - m.beta1) / (2 * h), "beta2");
    }
  }

  ScheduleKind kind_ = ScheduleKind::Linear;
  double b0_ = 1, kappa_ = 1, b0_tilde_ = 1, kappa_tilde_ = 1;
  std::shared_ptr<const CustomCoefficients> custom_;
  std::shared_ptr<const Schedule> base_;
  double t_star_ = 0, alpha_star_ = 0, beta_star_ = 1;
};

inline ScheduleState eval_schedule(const Schedule& s, double t) { return s.eval(t); }

// Re-based schedule anchored at t_star: beta~ = beta_t / beta_{t*},
// alpha~ = sqrt(alpha_t^2 - beta~^2 alpha_{t*}^2). Validated on [2 t_star, 1].
inline Schedule rebase_schedule(const Schedule& s, double t_star) {
  if (!(t_star > 0) || !(t_star <= 1)) throw ArgumentError("rebase_schedule: t_star must lie in (0, 1]");
  const auto [as, bs] = s.values(t_star);
  if (!(bs > 0)) throw DomainError("rebase_schedule: beta vanishes at t_star");
  Schedule r;
  r.kind_ = ScheduleKind::Rebased;
  r.base_ = std::make_shared<const Schedule>(s);
  r.t_star_ = t_star;
  r.alpha_star_ = as;
  r.beta_star_ = bs;
  const double lo = std::min(2.0 * t_star, 1.0);
  for (int i = 0; i <= 256; ++i) {
    const double t = lo + (1.0 - lo) * i / 256.0;
    const auto [a, b] = s.values(t);
    const double q = a * a - sq(b / bs) * as * as;
    if (!(q > 0)) throw DomainError(Schedule::witness("rebase_schedule: negative radicand", t));
  }
  return r;
}

// Time variables: T0 = N^-R0, T* = N^-(1/kappa - delta)/d, dyadic partition.
struct TimeGrid {
  double R0 = 4.0;
  double delta = 0.1;
  double N = 256;
  int d = 1;
  double kappa = 0.5;

  double T0() const { return std::pow(N, -R0); }
  double T_star() const { return std::pow(N, -(1.0 / kappa - delta) / d); }

  // t_0 = T0, t_j = 2 t_{j-1}, last knot clamped to 1.
  Vec partition() const {
    Vec out{T0()};
    while (out.back() < 1.0) out.push_back(std::min(1.0, 2.0 * out.back()));
    return out;
  }

  Vec log_grid(int n = 512) const { return logspace(T0(), 1.0, n); }

  void validate() const {
    if (!(R0 > 0) || !(delta > 0 && delta < 0.1 + 1e-15) || !(N >= 2) || d < 1 || d > 3)
      throw ConfigError("TimeGrid: need R0 > 0, delta in (0, 0.1], N >= 2, d in 1..3");
    if (!(T0() < T_star() && T_star() < 1.0)) throw ConfigError("TimeGrid: need T0 < T_star < 1");
  }
};

struct AssumptionEntry {
  std::string name;
  bool pass = true;
  double value = 0;
  double bound = 0;
  double witness_t = 0;
  std::string message;
};

struct AssumptionReport {
  double D0 = 0;            // max(max(a^2+b^2), 1/min(a^2+b^2)) on the grid
  double D0_witness_t = 0;  // where a^2+b^2 is extremal
  double K0 = 0;            // smallest real K0 with |a'|+|b'| and |a''|+|b''| <= N^K0
  double integral1 = 0;     // int (a'^2 + b'^2) dt over [T0, N^-gamma]
  double integral2 = 0;     // int (a''^2 + b''^2) dt over [T0, N^-gamma]
  double D1 = 0, b1 = 0;    // fitted int ~ D1 log^b1 N (second order)
  double D1_first = 0, b1_first = 0;
  std::vector<AssumptionEntry> entries;
  bool pass() const {
    for (const auto& e : entries)
      if (!e.pass) return false;
    return true;
  }
};

// int_{lo}^{hi} f(t) dt computed in u = log t (adaptive Gauss-Kronrod).
template <class F>
double integrate_log_time(F f, double lo, double hi) {
  return integrate_adaptive([&](double u) { const double t = std::exp(u); return f(t) * t; },
                            std::log(lo), std::log(hi), 1e-13);
}

struct AssumptionOptions {
  int grid_points = 512;
  double D0_max = 2.0;
  double gamma = 1.0;
  double max_b1 = 6.0;  // largest polylog degree accepted for the integral fits
};

inline AssumptionReport check_assumptions(const Schedule& s, const TimeGrid& g, const AssumptionOptions& opt = {}) {
  if (opt.grid_points < 100) throw ArgumentError("check_assumptions: grid needs >= 100 points");
  AssumptionReport r;
  // Grid resolves the data end: [T0, 1] when data sits at t = 0, mirrored to
  // [0, 1 - T0] when it sits at t = 1 (linear convention).
  Vec ts = g.log_grid(opt.grid_points);
  if (s.noise_time() == 0.0)
    for (double& t : ts) t = 1.0 - t;
  AssumptionEntry pos{"alpha-positive", true, kInf, 0, 0, ""};
  AssumptionEntry brange{"beta-in-unit-interval", true, 0, 1, 0, ""};
  double mn = kInf, mx = 0, tmn = 0, tmx = 0, k0 = 0, tk0 = 0;
  for (double t : ts) {
    ScheduleState st;
    try {
      st = s.eval(t);
    } catch (const DomainError& e) {
      r.entries.push_back({"finite-derivatives", false, 0, 0, t, e.what()});
      continue;
    }
    if (!(st.alpha > 0) && pos.pass) {
      pos.pass = false;
      pos.witness_t = t;
      pos.value = st.alpha;
    }
    if (!(st.beta >= 0 && st.beta <= 1) && brange.pass) {
      brange.pass = false;
      brange.witness_t = t;
      brange.value = st.beta;
    }
    const double n2 = st.alpha * st.alpha + st.beta * st.beta;
    if (n2 < mn) { mn = n2; tmn = t; }
    if (n2 > mx) { mx = n2; tmx = t; }
    const double cap = std::max(std::abs(st.alpha1) + std::abs(st.beta1), std::abs(st.alpha2) + std::abs(st.beta2));
    if (cap > 0) {
      const double k = std::log(cap) / std::log(g.N);
      if (k > k0) { k0 = k; tk0 = t; }
    }
  }
  r.entries.push_back(pos);
  r.entries.push_back(brange);
  r.D0 = std::max(mx, 1.0 / mn);
  r.D0_witness_t = mx >= 1.0 / mn ? tmx : tmn;
  {
    AssumptionEntry e{"D0", r.D0 <= opt.D0_max, r.D0, opt.D0_max, r.D0_witness_t, ""};
    if (!e.pass) e.message = "alpha^2 + beta^2 outside [1/D0, D0] bound";
    r.entries.push_back(e);
  }
  r.K0 = k0;
  r.entries.push_back({"K0", std::isfinite(k0), k0, std::ceil(k0), tk0, "smallest K0 with derivative caps"});

  // Integral assumptions are stated for kappa = 1/2 only; computed for any schedule.
  const double hi = std::pow(g.N, -opt.gamma);
  auto integrals = [&](double N) {
    TimeGrid gg = g;
    gg.N = N;
    const double lo = gg.T0(), up = std::pow(N, -opt.gamma);
    if (!(up > lo)) return std::pair<double, double>{0.0, 0.0};
    const double i1 = integrate_log_time([&](double t) { const auto st = s.eval(t); return sq(st.alpha1) + sq(st.beta1); }, lo, up);
    const double i2 = integrate_log_time([&](double t) { const auto st = s.eval(t); return sq(st.alpha2) + sq(st.beta2); }, lo, up);
    return std::pair<double, double>{i1, i2};
  };
  if (hi > g.T0()) {
    try {
      const auto [i1, i2] = integrals(g.N);
      r.integral1 = i1;
      r.integral2 = i2;
      // Fit value ~ D1 log^b1 N over N/16 .. 16N; polylog growth means the
      // log-log-log slope stays bounded and the N-exponent is ~0.
      Vec lnN, lv1, lv2, l1, l2;
      for (double f : {1.0 / 16, 1.0 / 4, 1.0, 4.0, 16.0}) {
        const double NN = std::max(2.0, g.N * f);
        const auto [a1, a2] = integrals(NN);
        lnN.push_back(std::log(std::log(NN)));
        l1.push_back(std::log(std::max(a1, 1e-300)));
        l2.push_back(std::log(std::max(a2, 1e-300)));
        lv1.push_back(a1);
        lv2.push_back(a2);
      }
      // Polylogarithmic growth gives a bounded slope in (log log N, log value);
      // polynomial growth N^a gives a slope ~ a log N. A cap of max_b1 separates them.
      auto fit = [&](const Vec& ly, const Vec& raw, double& D1, double& b1) {
        bool zero = true;
        for (double v : raw) zero = zero && v == 0.0;
        if (zero) { D1 = 0; b1 = 0; return true; }
        const LineFit f = fit_line(lnN, ly);
        b1 = std::max(f.slope, 0.0);
        D1 = 0;
        for (std::size_t i = 0; i < raw.size(); ++i) D1 = std::max(D1, raw[i] / std::exp(b1 * lnN[i]));
        return b1 <= opt.max_b1;
      };
      const bool ok1 = fit(l1, lv1, r.D1_first, r.b1_first);
      const bool ok2 = fit(l2, lv2, r.D1, r.b1);
      AssumptionEntry a1{"first-derivative-integral", ok1, r.integral1, r.D1_first * std::pow(std::log(g.N), r.b1_first), hi, ""};
      AssumptionEntry a2{"second-derivative-integral", ok2, r.integral2, r.D1 * std::pow(std::log(g.N), r.b1), hi, ""};
      if (!a1.pass) a1.message = "integral grows faster than log^b N";
      if (!a2.pass) a2.message = "integral grows faster than log^b N";
      r.entries.push_back(a1);
      r.entries.push_back(a2);
    } catch (const DomainError& e) {
      r.entries.push_back({"derivative-integrals", false, 0, 0, 0, e.what()});
    }
  }
  return r;
}

}  // namespace hoflow
