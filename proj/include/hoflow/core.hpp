#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace hoflow {

using Vec = std::vector<double>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kPi = 3.14159265358979323846;

// Error taxonomy. Every failure mode named by an operation maps to one of these.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : Error { using Error::Error; };
struct ArgumentError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct PrecisionError : Error { using Error::Error; };
struct SingularityError : Error { using Error::Error; };
struct FarTailError : Error { using Error::Error; };
struct TrainingError : Error { using Error::Error; };
struct IntegrationError : Error { using Error::Error; };

inline double sq(double x) { return x * x; }

inline double norm_inf(const Vec& x) {
  double m = 0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

inline double norm2(const Vec& x) {
  double s = 0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// n!! with 0!! = (-1)!! = 1.
inline double double_factorial(int n) {
  double r = 1;
  for (int k = n; k > 1; k -= 2) r *= k;
  return r;
}

inline Vec logspace(double lo, double hi, int n) {
  Vec out(n);
  if (n == 1) {
    out[0] = lo;
    return out;
  }
  const double a = std::log(lo), b = std::log(hi);
  for (int i = 0; i < n; ++i) out[i] = std::exp(a + (b - a) * i / (n - 1));
  out.front() = lo;
  out.back() = hi;
  return out;
}

inline Vec linspace(double lo, double hi, int n) {
  Vec out(n);
  if (n == 1) {
    out[0] = lo;
    return out;
  }
  for (int i = 0; i < n; ++i) out[i] = lo + (hi - lo) * i / (n - 1);
  out.back() = hi;
  return out;
}

struct LineFit {
  double slope = 0;
  double intercept = 0;
  double r2 = 0;
  double slope_stderr = 0;
};

// Ordinary least squares y = a + b x.
inline LineFit fit_line(const Vec& x, const Vec& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw ArgumentError("fit_line: need at least two matching points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += sq(x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += sq(y[i] - my);
  }
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double sse = 0;
  for (std::size_t i = 0; i < n; ++i) sse += sq(y[i] - f.intercept - f.slope * x[i]);
  f.r2 = syy > 0 ? 1.0 - sse / syy : 1.0;
  f.slope_stderr = n > 2 ? std::sqrt(sse / (n - 2) / sxx) : 0.0;
  return f;
}

// Log-log fit of y against x.
inline LineFit fit_loglog(const Vec& x, const Vec& y) {
  Vec lx(x.size()), ly(y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  return fit_line(lx, ly);
}

}  // namespace hoflow
