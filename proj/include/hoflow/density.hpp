#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "hoflow/bspline.hpp"
#include "hoflow/core.hpp"
#include "hoflow/quadrature.hpp"
#include "hoflow/rng.hpp"
#include "hoflow/source.hpp"

namespace hoflow {

struct BesovParams {
  double s = 1.0;
  double p_prime = kInf;
  double q_prime = kInf;
  double s_check = 0.0;  // boundary smoothness; 0 means undeclared

  void validate() const {
    if (!(s > 0) || !(p_prime > 0) || !(q_prime > 0)) throw ConfigError("BesovParams: s, p', q' must be positive");
    if (s_check > 0 && !(s_check > std::max(6.0 * s, 1.0)))
      throw ConfigError("BesovParams: boundary smoothness must exceed max(6s, 1)");
  }
};

enum class DensityKind { Uniform, Mixture, BSpline, BumpProduct, Gaussian };

inline const char* to_string(DensityKind k) {
  switch (k) {
    case DensityKind::Uniform: return "uniform-cube";
    case DensityKind::Mixture: return "truncated-gaussian-mixture";
    case DensityKind::BSpline: return "bspline-built";
    case DensityKind::BumpProduct: return "bump-product";
    case DensityKind::Gaussian: return "gaussian";
  }
  return "?";
}

struct MixtureComponent {
  double weight = 1;
  Vec mean;
  double sigma = 0.3;
};

// Per-axis factor c + (1 - ((u - m)/r)^2)_+^gamma on [-1, 1].
struct BumpParams {
  double floor = 0.5;
  double center = 0.0;
  double radius = 0.5;
  double gamma = 0.5;
};

// Target density on I^d = [-1,1]^d (or the untruncated Gaussian reference on R^d).
class Density {
 public:
  static Density uniform(int d) {
    Density D(DensityKind::Uniform, d);
    D.finish();
    return D;
  }

  static Density mixture(int d, std::vector<MixtureComponent> comps) {
    if (comps.empty()) throw ConfigError("mixture: need at least one component");
    Density D(DensityKind::Mixture, d);
    double wsum = 0;
    for (auto& c : comps) {
      if (static_cast<int>(c.mean.size()) != d) throw ConfigError("mixture: component mean has wrong dimension");
      if (!(c.weight > 0) || !(c.sigma > 0)) throw ConfigError("mixture: weights and sigmas must be positive");
      wsum += c.weight;
    }
    D.mass_.clear();
    double Z = 0;
    for (auto& c : comps) {
      c.weight /= wsum;
      double m = 1;
      for (int i = 0; i < d; ++i) m *= normal_cdf((1 - c.mean[i]) / c.sigma) - normal_cdf((-1 - c.mean[i]) / c.sigma);
      D.mass_.push_back(m);
      Z += c.weight * m;
    }
    D.comps_ = std::move(comps);
    D.norm_ = Z;
    D.finish();
    return D;
  }

  static Density bump_product(int d, BumpParams b) {
    if (!(b.floor > 0) || !(b.radius > 0) || !(b.gamma >= 0)) throw ConfigError("bump-product: need floor > 0, radius > 0, gamma >= 0");
    Density D(DensityKind::BumpProduct, d);
    D.bump_ = b;
    if (b.center - b.radius >= -1 && b.center + b.radius <= 1) {
      // int_{-1}^{1} (1 - v^2)^gamma dv = sqrt(pi) Gamma(gamma+1) / Gamma(gamma+3/2)
      const double beta = std::sqrt(kPi) * std::exp(std::lgamma(b.gamma + 1) - std::lgamma(b.gamma + 1.5));
      D.norm_ = 2 * b.floor + b.radius * beta;
    } else {
      D.norm_ = 0;
      Vec sing;
      for (double v : {b.center - b.radius, b.center + b.radius})
        if (v > -1 && v < 1) sing.push_back(v);
      const Rule1D r = composite_rule(-1, 1, {}, sing, 200);
      for (std::size_t i = 0; i < r.size(); ++i) D.norm_ += r.w[i] * D.bump_raw(r.x[i]);
    }
    D.besov_.s = b.gamma + 0.5;
    D.besov_.p_prime = 2.0;
    D.besov_.q_prime = kInf;
    D.finish();
    return D;
  }

  // The expansion must integrate to 1 (within 1e-6) and be nonnegative.
  static Density from_expansion(BSplineExpansion E) {
    Density D(DensityKind::BSpline, E.dim());
    D.expansion_ = std::make_shared<const BSplineExpansion>(std::move(E));
    D.finish();
    return D;
  }

  static Density gaussian_reference(int d, double sigma) {
    if (!(sigma > 0)) throw ConfigError("gaussian: sigma must be positive");
    Density D(DensityKind::Gaussian, d);
    D.sigma_ = sigma;
    D.finish();
    return D;
  }

  DensityKind kind() const { return kind_; }
  int dim() const { return d_; }
  const BesovParams& besov() const { return besov_; }
  void set_besov(const BesovParams& b) {
    b.validate();
    besov_ = b;
  }
  double C0() const { return C0_; }
  double mass() const { return mass_check_; }
  double sigma() const { return sigma_; }
  const BumpParams& bump() const { return bump_; }
  const std::vector<MixtureComponent>& components() const { return comps_; }
  // Probability of each mixture component after truncation to I^d.
  Vec component_probabilities() const {
    Vec p;
    for (std::size_t c = 0; c < comps_.size(); ++c) p.push_back(comps_[c].weight * mass_[c] / norm_);
    return p;
  }
  const BSplineExpansion* expansion() const { return expansion_.get(); }
  bool bounded_support() const { return kind_ != DensityKind::Gaussian; }

  double eval(const double* x) const {
    if (kind_ == DensityKind::Gaussian) {
      double r2 = 0;
      for (int i = 0; i < d_; ++i) r2 += x[i] * x[i];
      return std::exp(-0.5 * r2 / (sigma_ * sigma_)) / std::pow(std::sqrt(2 * kPi) * sigma_, d_);
    }
    for (int i = 0; i < d_; ++i)
      if (!(std::abs(x[i]) <= 1.0)) return 0.0;
    switch (kind_) {
      case DensityKind::Uniform: return std::ldexp(1.0, -d_);
      case DensityKind::Mixture: {
        double s = 0;
        for (const auto& c : comps_) {
          double r2 = 0;
          for (int i = 0; i < d_; ++i) r2 += sq(x[i] - c.mean[i]);
          s += c.weight * std::exp(-0.5 * r2 / (c.sigma * c.sigma)) / std::pow(std::sqrt(2 * kPi) * c.sigma, d_);
        }
        return s / norm_;
      }
      case DensityKind::BumpProduct: {
        double p = 1;
        for (int i = 0; i < d_; ++i) p *= bump_raw(x[i]) / norm_;
        return p;
      }
      case DensityKind::BSpline: return expansion_->eval(x);
      default: return 0.0;
    }
  }
  double eval(const Vec& x) const {
    if (static_cast<int>(x.size()) != d_) throw ArgumentError("eval_density: dimension mismatch");
    return eval(x.data());
  }

  // n points (row-major, n x d). Deterministic in seed.
  std::vector<Vec> sample(std::size_t n, std::uint64_t seed, std::vector<int>* labels = nullptr) const {
    if (n < 1) throw ArgumentError("sample_density: n must be >= 1");
    Rng rng(seed, "density.sample");
    std::vector<Vec> out;
    out.reserve(n);
    if (labels) labels->assign(n, 0);
    Vec x(d_);
    switch (kind_) {
      case DensityKind::Uniform:
        for (std::size_t k = 0; k < n; ++k) {
          for (auto& v : x) v = rng.uniform(-1, 1);
          out.push_back(x);
        }
        break;
      case DensityKind::Gaussian:
        for (std::size_t k = 0; k < n; ++k) {
          for (auto& v : x) v = sigma_ * rng.normal();
          out.push_back(x);
        }
        break;
      case DensityKind::Mixture: {
        const Vec probs = component_probabilities();
        for (std::size_t c = 0; c < comps_.size(); ++c)
          if (mass_[c] < 1e-3) throw ConfigError("sample_density: rejection acceptance below 1e-3 for a mixture component");
        for (std::size_t k = 0; k < n; ++k) {
          double u = rng.uniform(), acc = 0;
          std::size_t c = 0;
          for (; c + 1 < probs.size(); ++c) {
            acc += probs[c];
            if (u < acc) break;
          }
          const auto& comp = comps_[c];
          for (;;) {
            bool inside = true;
            for (int i = 0; i < d_; ++i) {
              x[i] = comp.mean[i] + comp.sigma * rng.normal();
              inside = inside && std::abs(x[i]) <= 1.0;
            }
            if (inside) break;
          }
          if (labels) (*labels)[k] = static_cast<int>(c);
          out.push_back(x);
        }
        break;
      }
      case DensityKind::BumpProduct:
      case DensityKind::BSpline: {
        const double acceptance = 1.0 / (std::ldexp(1.0, d_) * envelope_);
        if (acceptance < 1e-3) throw ConfigError("sample_density: rejection acceptance below 1e-3");
        for (std::size_t k = 0; k < n; ++k) {
          for (;;) {
            for (auto& v : x) v = rng.uniform(-1, 1);
            const double p = eval(x.data());
            if (p > envelope_) throw ConfigError("sample_density: envelope violated; density exceeds grid maximum");
            if (rng.uniform() * envelope_ < p) break;
          }
          out.push_back(x);
        }
        break;
      }
    }
    return out;
  }

  // Integrand description for Gaussian-kernel quadrature.
  Source source() const {
    Source s;
    s.d = d_;
    AxisLayout ax;
    if (kind_ == DensityKind::Gaussian) {
      ax.lo = -kInf;
      ax.hi = kInf;
    }
    if (kind_ == DensityKind::BumpProduct)
      for (double v : {bump_.center - bump_.radius, bump_.center + bump_.radius})
        if (v > -1 && v < 1) ax.singular.push_back(v);
    if (kind_ == DensityKind::BSpline) ax.breaks = expansion_->knots();
    s.axes.assign(d_, ax);
    switch (kind_) {
      case DensityKind::Uniform:
        s.factors.assign(d_, [](double) { return 0.5; });
        break;
      case DensityKind::Gaussian: {
        const double sg = sigma_;
        s.factors.assign(d_, [sg](double y) { return std::exp(-0.5 * y * y / (sg * sg)) / (std::sqrt(2 * kPi) * sg); });
        break;
      }
      case DensityKind::BumpProduct: {
        const BumpParams b = bump_;
        const double Z = norm_;
        s.factors.assign(d_, [b, Z](double y) { return std::abs(y) <= 1.0 ? bump_factor(b, y) / Z : 0.0; });
        break;
      }
      default: {
        const Density self = *this;
        s.f = [self](const double* y) { return self.eval(y); };
      }
    }
    return s;
  }

  std::string describe() const {
    std::ostringstream os;
    os << to_string(kind_) << "(d=" << d_;
    if (kind_ == DensityKind::BumpProduct)
      os << ",floor=" << bump_.floor << ",center=" << bump_.center << ",radius=" << bump_.radius << ",gamma=" << bump_.gamma;
    if (kind_ == DensityKind::Gaussian) os << ",sigma=" << sigma_;
    if (kind_ == DensityKind::Mixture) os << ",components=" << comps_.size();
    os << ")";
    return os.str();
  }

  static double bump_factor(const BumpParams& b, double u) {
    const double v = (u - b.center) / b.radius;
    const double w = 1.0 - v * v;
    return b.floor + (w > 0 ? (b.gamma == 0 ? 1.0 : std::pow(w, b.gamma)) : 0.0);
  }

 private:
  Density(DensityKind k, int d) : kind_(k), d_(d) {
    if (d < 1 || d > 3) throw ConfigError("density: d must be 1..3");
  }

  double bump_raw(double u) const { return bump_factor(bump_, u); }

  // Mass check, C0 and rejection envelope.
  void finish() {
    if (kind_ == DensityKind::Gaussian) {
      mass_check_ = 1.0;
      C0_ = kInf;
      return;
    }
    // Composite Gauss-Legendre on the cube; separable sources integrate axis by axis.
    const Source src = source();
    double mass = 0;
    Vec y(d_);
    if (src.separable()) {
      const Rule1D r = composite_rule(-1, 1, src.axes[0].breaks, src.axes[0].singular, 400);
      mass = src.scale;
      for (int i = 0; i < d_; ++i) {
        double m1 = 0;
        for (std::size_t a = 0; a < r.size(); ++a) m1 += r.w[a] * src.factors[i](r.x[a]);
        mass *= m1;
      }
    } else {
      const int n1 = d_ == 1 ? 400 : (d_ == 2 ? 120 : 40);
      const Rule1D r = composite_rule(-1, 1, src.axes[0].breaks, src.axes[0].singular, n1, d_ == 1 ? 8 : 4,
                                      d_ == 1 ? GradingSpec{} : GradingSpec{0.25, 8, 4});
      const std::size_t m = r.size();
      std::size_t total = 1;
      for (int i = 0; i < d_; ++i) total *= m;
      for (std::size_t c = 0; c < total; ++c) {
        std::size_t rem = c;
        double w = 1;
        for (int i = 0; i < d_; ++i) {
          const std::size_t a = rem % m;
          rem /= m;
          y[i] = r.x[a];
          w *= r.w[a];
        }
        mass += w * eval(y.data());
      }
    }
    mass_check_ = mass;
    if (std::abs(mass - 1.0) > 1e-6) {
      std::ostringstream os;
      os.precision(10);
      os << "density does not integrate to 1 (mass " << mass << ")";
      throw ConfigError(os.str());
    }
    // Grid extrema for C0 and the rejection envelope.
    const int g = d_ == 1 ? 4001 : (d_ == 2 ? 201 : 41);
    double mx = 0, mn = kInf;
    std::size_t gt = 1;
    for (int i = 0; i < d_; ++i) gt *= g;
    for (std::size_t c = 0; c < gt; ++c) {
      std::size_t rem = c;
      for (int i = 0; i < d_; ++i) {
        y[i] = -1.0 + 2.0 * static_cast<double>(rem % g) / (g - 1);
        rem /= g;
      }
      const double p = eval(y.data());
      if (p < -1e-12) throw ConfigError("density is negative on I^d");
      mx = std::max(mx, p);
      mn = std::min(mn, p);
    }
    if (kind_ == DensityKind::BumpProduct) {
      mx = std::pow((bump_.floor + 1.0) / norm_, d_);
      mn = std::pow(bump_.floor / norm_, d_);
    }
    C0_ = mn > 0 ? std::max(mx, 1.0 / mn) : kInf;
    envelope_ = kind_ == DensityKind::BumpProduct ? mx : 1.05 * mx;
  }

  DensityKind kind_;
  int d_;
  BesovParams besov_;
  std::vector<MixtureComponent> comps_;
  Vec mass_;
  double norm_ = 1.0;
  BumpParams bump_;
  std::shared_ptr<const BSplineExpansion> expansion_;
  double sigma_ = 1.0;
  double C0_ = 1.0;
  double mass_check_ = 1.0;
  double envelope_ = 1.0;
};

inline double eval_density(const Density& D, const Vec& x) { return D.eval(x); }

inline std::vector<Vec> sample_density(const Density& D, std::size_t n, std::uint64_t seed) { return D.sample(n, seed); }

inline void write_points_csv(const std::vector<Vec>& pts, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path);
  os.precision(17);
  if (!pts.empty()) {
    for (std::size_t i = 0; i < pts[0].size(); ++i) os << (i ? "," : "") << "x" << i;
    os << '\n';
  }
  for (const auto& p : pts) {
    for (std::size_t i = 0; i < p.size(); ++i) os << (i ? "," : "") << p[i];
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Smoothness tooling on grid-sampled functions.

// Function sampled on a uniform tensor grid over [lo, hi]^d, multilinear between nodes.
struct GridFunction {
  int d = 1;
  int n = 0;
  double lo = -1, hi = 1;
  Vec values;  // axis 0 fastest

  template <class F>
  static GridFunction sample(int d, int n, double lo, double hi, F f) {
    GridFunction g;
    g.d = d;
    g.n = n;
    g.lo = lo;
    g.hi = hi;
    std::size_t total = 1;
    for (int i = 0; i < d; ++i) total *= n;
    g.values.resize(total);
    Vec x(d);
    for (std::size_t c = 0; c < total; ++c) {
      std::size_t rem = c;
      for (int i = 0; i < d; ++i) {
        x[i] = g.node(static_cast<int>(rem % n));
        rem /= n;
      }
      g.values[c] = f(x);
    }
    return g;
  }

  double spacing() const { return (hi - lo) / (n - 1); }
  double node(int i) const { return i == n - 1 ? hi : lo + spacing() * i; }

  bool inside(const double* x) const {
    for (int i = 0; i < d; ++i)
      if (x[i] < lo - 1e-12 || x[i] > hi + 1e-12) return false;
    return true;
  }

  double at(const double* x) const {
    const double h = spacing();
    int base[3];
    double frac[3];
    for (int i = 0; i < d; ++i) {
      double u = (std::clamp(x[i], lo, hi) - lo) / h;
      int b = static_cast<int>(std::floor(u));
      if (b >= n - 1) b = n - 2;
      if (b < 0) b = 0;
      double fr = u - b;
      // Snap to nodes so that on-grid shifts are exact.
      if (std::abs(fr) < 1e-9) fr = 0;
      if (std::abs(fr - 1) < 1e-9) fr = 1;
      base[i] = b;
      frac[i] = fr;
    }
    double s = 0;
    for (int c = 0; c < (1 << d); ++c) {
      double w = 1;
      std::size_t off = 0, stride = 1;
      for (int i = 0; i < d; ++i) {
        const int bit = (c >> i) & 1;
        w *= bit ? frac[i] : 1 - frac[i];
        off += (base[i] + bit) * stride;
        stride *= n;
      }
      if (w != 0) s += w * values[off];
    }
    return s;
  }
};

inline std::vector<Vec> modulus_directions(int d) {
  std::vector<Vec> dirs;
  if (d == 1) return {{1.0}, {-1.0}};
  if (d == 2) {
    for (int i = 0; i < 64; ++i) dirs.push_back({std::cos(2 * kPi * i / 64), std::sin(2 * kPi * i / 64)});
    return dirs;
  }
  // Fibonacci sphere.
  const double ga = kPi * (3 - std::sqrt(5.0));
  for (int i = 0; i < 64; ++i) {
    const double z = 1 - 2 * (i + 0.5) / 64;
    const double r = std::sqrt(1 - z * z);
    dirs.push_back({r * std::cos(ga * i), r * std::sin(ga * i), z});
  }
  return dirs;
}

// sup_{|h| <= t} || Delta_h^r f ||_{L^p}, with Delta_h^r f(x) = 0 unless
// x and x + r h both lie in the domain. Shifts: 64 magnitudes x 64 directions
// (both signs in 1-D).
inline double modulus_of_smoothness(const GridFunction& f, int r, double p, double t) {
  if (r < 1) throw ArgumentError("modulus_of_smoothness: r must be >= 1");
  if (!(p > 0)) throw ArgumentError("modulus_of_smoothness: p must be positive");
  if (f.spacing() > t / 8 * (1 + 1e-12)) throw ArgumentError("modulus_of_smoothness: grid resolution must be <= t/8");
  const int d = f.d;
  const auto dirs = modulus_directions(d);
  Vec binom(r + 1);
  for (int j = 0; j <= r; ++j) binom[j] = std::tgamma(r + 1.0) / (std::tgamma(j + 1.0) * std::tgamma(r - j + 1.0));
  const double cell = std::pow(f.spacing(), d);
  std::size_t total = f.values.size();
  double best = 0;
  Vec x(d), y(d);
  for (int mi = 1; mi <= 64; ++mi) {
    const double mag = t * mi / 64.0;
    for (const auto& dir : dirs) {
      double acc = 0;
      for (std::size_t c = 0; c < total; ++c) {
        std::size_t rem = c;
        for (int i = 0; i < d; ++i) {
          x[i] = f.node(static_cast<int>(rem % f.n));
          rem /= f.n;
        }
        for (int i = 0; i < d; ++i) y[i] = x[i] + r * mag * dir[i];
        if (!f.inside(y.data())) continue;
        double diff = 0;
        for (int j = 0; j <= r; ++j) {
          for (int i = 0; i < d; ++i) y[i] = x[i] + j * mag * dir[i];
          const double sign = ((r - j) % 2 == 0) ? 1.0 : -1.0;
          diff += sign * binom[j] * (j == 0 ? f.values[c] : f.at(y.data()));
        }
        if (std::isinf(p))
          acc = std::max(acc, std::abs(diff));
        else
          acc += std::pow(std::abs(diff), p) * cell;
      }
      const double norm = std::isinf(p) ? acc : std::pow(acc, 1.0 / p);
      best = std::max(best, norm);
    }
  }
  return best;
}

struct BesovEstimate {
  double value = 0;
  bool divergent = false;       // NOT-IN-SPACE
  double small_t_slope = 0;     // slope of log(t^-s w) vs log t over the smallest decade
  Vec t, weighted;              // t^-s w_{r,p}(f, t)
};

inline BesovEstimate besov_seminorm_estimate(const GridFunction& f, double s, double p, double q, const Vec& t_grid,
                                             int r = -1) {
  if (t_grid.size() < 4) throw ArgumentError("besov_seminorm_estimate: t_grid too short");
  const double tmin = *std::min_element(t_grid.begin(), t_grid.end());
  const double tmax = *std::max_element(t_grid.begin(), t_grid.end());
  if (tmax / tmin < 1e3 * (1 - 1e-9)) throw ArgumentError("besov_seminorm_estimate: t_grid must span >= 3 decades");
  if (r < 0) r = static_cast<int>(std::floor(s)) + 1;
  BesovEstimate est;
  Vec ts = t_grid;
  std::sort(ts.begin(), ts.end());
  for (double t : ts) {
    est.t.push_back(t);
    est.weighted.push_back(std::pow(t, -s) * modulus_of_smoothness(f, r, p, t));
  }
  if (std::isinf(q)) {
    est.value = *std::max_element(est.weighted.begin(), est.weighted.end());
  } else {
    double acc = 0;
    for (std::size_t i = 1; i < ts.size(); ++i)
      acc += 0.5 * (std::pow(est.weighted[i], q) + std::pow(est.weighted[i - 1], q)) * std::log(ts[i] / ts[i - 1]);
    est.value = std::pow(acc, 1.0 / q);
  }
  Vec lx, ly;
  for (std::size_t i = 0; i < ts.size(); ++i)
    if (ts[i] <= 10 * tmin * (1 + 1e-9) && est.weighted[i] > 0) {
      lx.push_back(std::log(ts[i]));
      ly.push_back(std::log(est.weighted[i]));
    }
  if (lx.size() >= 2) {
    est.small_t_slope = fit_line(lx, ly).slope;
    est.divergent = est.small_t_slope < -0.25;
  }
  return est;
}

}  // namespace hoflow
