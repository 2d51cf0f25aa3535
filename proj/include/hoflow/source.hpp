#pragma once

#include <functional>
#include <vector>

#include "hoflow/core.hpp"

namespace hoflow {

// Per-axis layout of an integrand: support interval, panel breakpoints, and
// points where it is not smooth enough for plain Gauss-Legendre panels.
struct AxisLayout {
  double lo = -1, hi = 1;  // may be infinite
  Vec breaks;
  Vec singular;
};

// A function on R^d to be integrated against Gaussian kernels. Separable
// sources (scale * prod_i factor_i(y_i)) are evaluated axis by axis.
struct Source {
  int d = 1;
  std::vector<AxisLayout> axes;
  std::function<double(const double*)> f;
  std::vector<std::function<double(double)>> factors;
  double scale = 1.0;

  bool separable() const { return !factors.empty(); }
  double operator()(const double* y) const {
    if (separable()) {
      double p = scale;
      for (int i = 0; i < d; ++i) p *= factors[i](y[i]);
      return p;
    }
    return f(y);
  }
};

}  // namespace hoflow
