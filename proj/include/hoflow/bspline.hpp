#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <set>
#include <vector>

#include "hoflow/core.hpp"

namespace hoflow {

// Cardinal B-spline of degree ell: the indicator of [0,1) convolved with itself
// ell times. Support [0, ell+1]; partition of unity over integer shifts.
inline double cardinal_bspline(int ell, double x) {
  if (ell < 0) throw ArgumentError("cardinal_bspline: ell must be >= 0");
  if (ell > 30) throw ArgumentError("cardinal_bspline: ell too large");
  if (!(x >= 0.0) || !(x < ell + 1.0)) return 0.0;
  // B_m(x) = (x B_{m-1}(x) + (m+1-x) B_{m-1}(x-1)) / m. val[o] holds
  // B_m(x - (seg - o)) for o = 0..m; only these shifts can be nonzero.
  const int seg = static_cast<int>(std::floor(x));
  const double f = x - seg;
  double val[32];
  val[0] = 1.0;
  for (int m = 1; m <= ell; ++m) {
    val[m] = 0.0;
    for (int o = m; o >= 0; --o) {
      const double u = f + o;
      const double cur = o < m ? val[o] : 0.0;
      const double prev = o > 0 ? val[o - 1] : 0.0;
      val[o] = (u * cur + (m + 1 - u) * prev) / m;
    }
  }
  return seg <= ell ? val[seg] : 0.0;
}

// M_{k,j}(x) = prod_i N(2^{k_i} x_i - j_i) with N the degree-ell cardinal spline.
inline double tensor_bspline(const std::vector<int>& k, const std::vector<int>& j, int ell, const Vec& x) {
  if (k.size() != j.size() || k.size() != x.size()) throw ArgumentError("tensor_bspline: dimension mismatch");
  double p = 1.0;
  for (std::size_t i = 0; i < x.size() && p != 0.0; ++i) p *= cardinal_bspline(ell, std::ldexp(x[i], k[i]) - j[i]);
  return p;
}

// Admissible shifts at level k in one dimension: -2^k - ell <= j <= 2^k - 1
// (j = 2^k is admissible but its support meets [-1,1] only at x = 1).
inline std::pair<int, int> level_shift_range(int k, int ell) { return {-(1 << k) - ell, (1 << k) - 1}; }

inline long long level_size(int k, int ell, int d) {
  const auto [lo, hi] = level_shift_range(k, ell);
  long long n = 1;
  for (int i = 0; i < d; ++i) n *= (hi - lo + 1);
  return n;
}

enum class SupportFlag { Full, Contracted };

struct BSplineTerm {
  std::vector<int> k;
  std::vector<int> j;
  double A = 0;
  SupportFlag flag = SupportFlag::Full;
};

// f(x) = sum_i A_i M_{k_i,j_i}(x / R) 1[|x/R|_inf <= c_i], with c_i = 1 for
// full-cube terms and c_i = contraction for contracted-cube terms.
class BSplineExpansion {
 public:
  BSplineExpansion() = default;
  BSplineExpansion(int d, int ell, double N, double contraction = 1.0, double half_width = 1.0)
      : d_(d), ell_(ell), N_(N), contraction_(contraction), half_width_(half_width) {
    if (d < 1 || d > 3) throw ArgumentError("BSplineExpansion: d must be 1..3");
    if (ell < 0) throw ArgumentError("BSplineExpansion: ell must be >= 0");
  }

  int dim() const { return d_; }
  int ell() const { return ell_; }
  double budget() const { return N_; }
  double contraction() const { return contraction_; }
  double half_width() const { return half_width_; }
  const std::vector<BSplineTerm>& terms() const { return terms_; }
  std::size_t size() const { return terms_.size(); }

  void add_term(BSplineTerm t) {
    if (static_cast<int>(t.k.size()) != d_ || static_cast<int>(t.j.size()) != d_)
      throw ArgumentError("BSplineExpansion: term dimension mismatch");
    for (int i = 0; i < d_; ++i) {
      if (t.k[i] < 0 || t.k[i] > 24) throw ArgumentError("BSplineExpansion: level out of range");
      if (t.j[i] < -(1 << t.k[i]) - ell_ || t.j[i] > (1 << t.k[i]))
        throw ArgumentError("BSplineExpansion: inadmissible shift index");
    }
    terms_.push_back(std::move(t));
    indexed_ = false;
  }
  void set_coefficients(const Vec& A) {
    if (A.size() != terms_.size()) throw ArgumentError("set_coefficients: size mismatch");
    for (std::size_t i = 0; i < A.size(); ++i) terms_[i].A = A[i];
    indexed_ = false;
  }

  // Largest level on any axis (sets the knot spacing).
  int max_level() const {
    int m = 0;
    for (const auto& t : terms_)
      for (int k : t.k) m = std::max(m, k);
    return m;
  }

  // Knot positions (union over axes) in x units: every knot of every term
  // inside the cube, plus the cube and contraction edges.
  Vec knots() const {
    std::set<std::pair<int, long long>> seen;  // (level, index) of i / 2^level in reduced form
    Vec out{-half_width_, half_width_};
    for (const auto& t : terms_)
      for (int a = 0; a < d_; ++a) {
        const int k = t.k[a];
        for (int m = 0; m <= ell_ + 1; ++m) {
          long long i = t.j[a] + m;
          int kk = k;
          while (kk > 0 && i % 2 == 0) {
            i /= 2;
            --kk;
          }
          if (std::abs(std::ldexp(static_cast<double>(i), -kk)) >= 1.0) continue;
          if (seen.insert({kk, i}).second) out.push_back(half_width_ * std::ldexp(static_cast<double>(i), -kk));
        }
      }
    if (contraction_ < 1.0) {
      out.push_back(-contraction_ * half_width_);
      out.push_back(contraction_ * half_width_);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  double eval(const double* x) const {
    ensure_index();
    double u[3];
    double ninf = 0;
    for (int i = 0; i < d_; ++i) {
      u[i] = x[i] / half_width_;
      ninf = std::max(ninf, std::abs(u[i]));
    }
    if (!(ninf <= 1.0)) return 0.0;
    const bool inner = ninf <= contraction_;
    double total = 0.0;
    for (const auto& blk : blocks_) {
      if (blk.flag == SupportFlag::Contracted && !inner) continue;
      // Per-axis local shifts and spline values.
      int jlo[3];
      double vals[3][32];
      for (int a = 0; a < d_; ++a) {
        const double v = std::ldexp(u[a], blk.k[a]);
        const int fl = static_cast<int>(std::floor(v));
        jlo[a] = fl - ell_;
        for (int m = 0; m <= ell_; ++m) vals[a][m] = cardinal_bspline(ell_, v - (jlo[a] + m));
      }
      const int span = ell_ + 1;
      int cnt = 1;
      for (int a = 0; a < d_; ++a) cnt *= span;
      for (int c = 0; c < cnt; ++c) {
        int rem = c;
        long long off = 0;
        double w = 1.0;
        bool ok = true;
        for (int a = 0; a < d_; ++a) {
          const int m = rem % span;
          rem /= span;
          const int j = jlo[a] + m;
          if (j < blk.jmin[a] || j > blk.jmax[a]) { ok = false; break; }
          off += static_cast<long long>(j - blk.jmin[a]) * blk.stride[a];
          w *= vals[a][m];
        }
        if (!ok || w == 0.0) continue;
        const double A = blk.coef[off];
        if (A != 0.0) total += A * w;
      }
    }
    return total;
  }
  double eval(const Vec& x) const {
    if (static_cast<int>(x.size()) != d_) throw ArgumentError("eval_expansion: dimension mismatch");
    return eval(x.data());
  }

  // Per-term basis value at x (indicator included), for least-squares design matrices.
  double basis(std::size_t term, const double* x) const {
    const auto& t = terms_[term];
    double ninf = 0;
    double p = 1.0;
    for (int i = 0; i < d_; ++i) {
      const double u = x[i] / half_width_;
      ninf = std::max(ninf, std::abs(u));
      p *= cardinal_bspline(ell_, std::ldexp(u, t.k[i]) - t.j[i]);
    }
    const double c = t.flag == SupportFlag::Contracted ? contraction_ : 1.0;
    return ninf <= c ? p : 0.0;
  }

  void write(std::ostream& os) const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", N_);
    os << d_ << ' ' << ell_ << ' ' << buf << ' ';
    std::snprintf(buf, sizeof buf, "%.17g", contraction_);
    os << buf << ' ';
    std::snprintf(buf, sizeof buf, "%.17g", half_width_);
    os << buf << '\n';
    for (const auto& t : terms_) {
      for (int v : t.k) os << v << ' ';
      for (int v : t.j) os << v << ' ';
      std::snprintf(buf, sizeof buf, "%.17g", t.A);
      os << buf << ' ' << (t.flag == SupportFlag::Full ? "full" : "contracted") << '\n';
    }
  }

  static BSplineExpansion read(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ArgumentError("expansion file: missing header");
    std::istringstream hs(line);
    int d = 0, ell = 0;
    double N = 0, c = 1, R = 1;
    if (!(hs >> d >> ell >> N >> c)) throw ArgumentError("expansion file: malformed header");
    if (!(hs >> R)) R = 1.0;
    BSplineExpansion e(d, ell, N, c, R);
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      BSplineTerm t;
      t.k.resize(d);
      t.j.resize(d);
      for (auto& v : t.k) ls >> v;
      for (auto& v : t.j) ls >> v;
      std::string flag;
      if (!(ls >> t.A >> flag)) throw ArgumentError("expansion file: malformed term line: " + line);
      if (flag == "full")
        t.flag = SupportFlag::Full;
      else if (flag == "contracted")
        t.flag = SupportFlag::Contracted;
      else
        throw ArgumentError("expansion file: unknown support flag " + flag);
      e.add_term(std::move(t));
    }
    return e;
  }

 private:
  struct Block {
    std::vector<int> k;
    SupportFlag flag;
    int jmin[3], jmax[3];
    long long stride[3];
    Vec coef;
  };

  void ensure_index() const {
    if (indexed_) return;
    blocks_.clear();
    std::map<std::pair<std::vector<int>, int>, std::size_t> where;
    for (const auto& t : terms_) {
      const auto key = std::make_pair(t.k, static_cast<int>(t.flag));
      if (where.count(key)) continue;
      Block b;
      b.k = t.k;
      b.flag = t.flag;
      long long stride = 1;
      for (int a = 0; a < d_; ++a) {
        b.jmin[a] = -(1 << t.k[a]) - ell_;
        b.jmax[a] = (1 << t.k[a]);
        b.stride[a] = stride;
        stride *= (b.jmax[a] - b.jmin[a] + 1);
      }
      b.coef.assign(stride, 0.0);
      where[key] = blocks_.size();
      blocks_.push_back(std::move(b));
    }
    for (const auto& t : terms_) {
      Block& b = blocks_[where[std::make_pair(t.k, static_cast<int>(t.flag))]];
      long long off = 0;
      for (int a = 0; a < d_; ++a) off += static_cast<long long>(t.j[a] - b.jmin[a]) * b.stride[a];
      b.coef[off] += t.A;
    }
    indexed_ = true;
  }

  int d_ = 1, ell_ = 0;
  double N_ = 0, contraction_ = 1.0, half_width_ = 1.0;
  std::vector<BSplineTerm> terms_;
  mutable bool indexed_ = false;
  mutable std::vector<Block> blocks_;
};

inline double eval_expansion(const BSplineExpansion& E, const Vec& x) { return E.eval(x); }

inline void save_expansion(const BSplineExpansion& E, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path);
  E.write(os);
}

inline BSplineExpansion load_expansion(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read " + path);
  return BSplineExpansion::read(is);
}

}  // namespace hoflow
