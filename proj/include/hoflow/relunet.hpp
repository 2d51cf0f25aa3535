#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "hoflow/bspline.hpp"
#include "hoflow/core.hpp"

namespace hoflow {

using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// Affine map followed by ReLU on every layer but the last. Only nonzero
// weights are stored.
struct NetLayer {
  SpMat W;
  Eigen::VectorXd b;
  NetLayer() = default;
  NetLayer(SpMat w, Eigen::VectorXd bias) : W(std::move(w)), b(std::move(bias)) {}
  NetLayer(const Eigen::MatrixXd& w, Eigen::VectorXd bias) : W(w.sparseView(0.0, 0.0)), b(std::move(bias)) {}
};

// Dense staging form used while hand-building small gadgets.
struct DenseLayer {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
  operator NetLayer() const { return NetLayer(W, b); }
};

using Triplets = std::vector<Eigen::Triplet<double>>;

inline SpMat sparse_from(int rows, int cols, const Triplets& t) {
  SpMat m(rows, cols);
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

// Appends the entries of `m`, scaled by `sign` and offset by (r0, c0).
inline void append_block(Triplets& t, const SpMat& m, int r0, int c0, double sign = 1.0) {
  for (int i = 0; i < m.outerSize(); ++i)
    for (SpMat::InnerIterator it(m, i); it; ++it) t.emplace_back(r0 + it.row(), c0 + it.col(), sign * it.value());
}

class ReluNetwork {
 public:
  ReluNetwork() = default;
  explicit ReluNetwork(std::vector<NetLayer> layers) : layers_(std::move(layers)) { validate(); }

  static ReluNetwork linear(const Eigen::MatrixXd& W, Eigen::VectorXd b) {
    return ReluNetwork({NetLayer(W, std::move(b))});
  }
  static ReluNetwork identity(int d) {
    return linear(Eigen::MatrixXd::Identity(d, d), Eigen::VectorXd::Zero(d));
  }
  // Ignores its input and returns `values`.
  static ReluNetwork constant(int in_dim, const Vec& values) {
    const int m = static_cast<int>(values.size());
    return linear(Eigen::MatrixXd::Zero(m, in_dim), Eigen::Map<const Eigen::VectorXd>(values.data(), m));
  }
  // Picks input coordinates `idx` (duplicates allowed).
  static ReluNetwork select(int in_dim, const std::vector<int>& idx) {
    const int m = static_cast<int>(idx.size());
    SpMat W(m, in_dim);
    for (int r = 0; r < m; ++r) {
      if (idx[r] < 0 || idx[r] >= in_dim) throw ArgumentError("select: index out of range");
      W.insert(r, idx[r]) = 1.0;
    }
    return ReluNetwork({NetLayer(W, Eigen::VectorXd::Zero(m))});
  }

  const std::vector<NetLayer>& layers() const { return layers_; }
  int depth() const { return static_cast<int>(layers_.size()); }
  int in_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().W.cols()); }
  int out_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().W.rows()); }

  // Fixed summation order (columns ascending, bias last); zero weights are skipped.
  Vec eval(const Vec& x) const {
    if (static_cast<int>(x.size()) != in_dim()) throw ArgumentError("eval_network: input dimension mismatch");
    Vec cur = x, next;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      next.assign(L.W.rows(), 0.0);
      for (int i = 0; i < L.W.rows(); ++i) {
        double acc = 0.0;
        for (SpMat::InnerIterator it(L.W, i); it; ++it) acc += it.value() * cur[it.col()];
        acc += L.b[i];
        next[i] = (l + 1 < layers_.size()) ? std::max(acc, 0.0) : acc;
      }
      cur.swap(next);
    }
    return cur;
  }

  void write(std::ostream& os) const {
    char buf[64];
    os << "relunet " << depth() << '\n';
    os << in_dim();
    for (const auto& L : layers_) os << ' ' << L.W.rows();
    os << '\n';
    for (const auto& L : layers_) {
      long long nnz = 0;
      for (int i = 0; i < L.W.outerSize(); ++i)
        for (SpMat::InnerIterator it(L.W, i); it; ++it) nnz += it.value() != 0.0;
      os << "layer " << nnz << '\n';
      for (int i = 0; i < L.W.outerSize(); ++i)
        for (SpMat::InnerIterator it(L.W, i); it; ++it)
          if (it.value() != 0.0) {
            std::snprintf(buf, sizeof buf, "%.17g", it.value());
            os << it.row() << ' ' << it.col() << ' ' << buf << '\n';
          }
      os << "bias";
      for (int i = 0; i < L.b.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", L.b[i]);
        os << ' ' << buf;
      }
      os << '\n';
    }
  }

  static ReluNetwork read(std::istream& is) {
    std::string tag;
    int L = 0;
    if (!(is >> tag >> L) || tag != "relunet" || L < 1) throw ConfigError("read_network: bad header");
    std::vector<int> dims(L + 1);
    for (auto& d : dims)
      if (!(is >> d) || d < 1) throw ConfigError("read_network: bad dimension line");
    std::vector<NetLayer> layers(L);
    for (int l = 0; l < L; ++l) {
      long long nnz = 0;
      if (!(is >> tag >> nnz) || tag != "layer") throw ConfigError("read_network: expected layer");
      layers[l].b = Eigen::VectorXd::Zero(dims[l + 1]);
      Triplets t;
      for (long long e = 0; e < nnz; ++e) {
        int i, j;
        double v;
        if (!(is >> i >> j >> v) || i < 0 || j < 0 || i >= dims[l + 1] || j >= dims[l])
          throw ConfigError("read_network: bad weight entry");
        t.emplace_back(i, j, v);
      }
      layers[l].W = sparse_from(dims[l + 1], dims[l], t);
      if (!(is >> tag) || tag != "bias") throw ConfigError("read_network: expected bias");
      for (int i = 0; i < dims[l + 1]; ++i)
        if (!(is >> layers[l].b[i])) throw ConfigError("read_network: short bias line");
    }
    return ReluNetwork(std::move(layers));
  }

 private:
  void validate() const {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (layers_[l].W.rows() != layers_[l].b.size()) throw ArgumentError("ReluNetwork: bias size mismatch");
      if (l > 0 && layers_[l].W.cols() != layers_[l - 1].W.rows())
        throw ArgumentError("ReluNetwork: consecutive layer dimensions do not compose");
    }
  }

  std::vector<NetLayer> layers_;
};

inline Vec eval_network(const ReluNetwork& net, const Vec& x) { return net.eval(x); }

inline void save_network(const ReluNetwork& net, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("save_network: cannot open " + path);
  net.write(os);
}

inline ReluNetwork load_network(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("load_network: cannot open " + path);
  return ReluNetwork::read(is);
}

struct NetworkStats {
  int L = 0;
  std::vector<int> W;  // input dim, hidden widths, output dim
  long long S = 0;     // nonzero weights and biases
  double B = 0;        // largest absolute parameter
  int max_width() const { return W.empty() ? 0 : *std::max_element(W.begin(), W.end()); }
};

inline NetworkStats network_stats(const ReluNetwork& net) {
  NetworkStats s;
  s.L = net.depth();
  s.W.push_back(net.in_dim());
  for (const auto& L : net.layers()) {
    s.W.push_back(static_cast<int>(L.W.rows()));
    for (int i = 0; i < L.W.rows(); ++i) {
      for (SpMat::InnerIterator it(L.W, i); it; ++it)
        if (it.value() != 0.0) {
          ++s.S;
          s.B = std::max(s.B, std::abs(it.value()));
        }
      if (L.b[i] != 0.0) {
        ++s.S;
        s.B = std::max(s.B, std::abs(L.b[i]));
      }
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Composition. Values cross a ReLU boundary through the exact split
// y = ReLU(y) - ReLU(-y), so composed evaluation reproduces staged evaluation
// bit for bit, exact zeros included.

namespace detail {

// (W, b) -> ([W; -W], [b; -b]).
inline NetLayer split_layer(const NetLayer& a) {
  const int m = static_cast<int>(a.W.rows());
  Triplets t;
  append_block(t, a.W, 0, 0);
  append_block(t, a.W, m, 0, -1.0);
  Eigen::VectorXd b(2 * m);
  b << a.b, -a.b;
  return NetLayer(sparse_from(2 * m, static_cast<int>(a.W.cols()), t), b);
}

inline bool is_selection(const ReluNetwork& n) {
  if (n.depth() != 1) return false;
  const auto& L = n.layers()[0];
  for (int i = 0; i < L.b.size(); ++i)
    if (L.b[i] != 0.0) return false;
  // Distinct columns keep the fused products free of additions.
  std::vector<int> col_used(L.W.cols(), 0);
  for (int i = 0; i < L.W.rows(); ++i) {
    int ones = 0;
    for (SpMat::InnerIterator it(L.W, i); it; ++it) {
      if (it.value() != 1.0) return false;
      if (++col_used[it.col()] > 1) return false;
      ++ones;
    }
    if (ones > 1) return false;
  }
  return true;
}

}  // namespace detail

// second o first.
inline ReluNetwork compose(const ReluNetwork& first, const ReluNetwork& second) {
  if (first.out_dim() != second.in_dim()) throw ArgumentError("compose: dimension mismatch");
  std::vector<NetLayer> out(first.layers().begin(), first.layers().end() - 1);
  const NetLayer& a = first.layers().back();
  const NetLayer& b = second.layers().front();
  if (detail::is_selection(first)) {
    // Column picking: no arithmetic changes.
    out.push_back(NetLayer(SpMat(b.W * a.W), b.b));
  } else {
    out.push_back(detail::split_layer(a));
    const int m = static_cast<int>(a.W.rows());
    Triplets t;
    append_block(t, b.W, 0, 0);
    append_block(t, b.W, 0, m, -1.0);
    out.push_back(NetLayer(sparse_from(static_cast<int>(b.W.rows()), 2 * m, t), b.b));
  }
  out.insert(out.end(), second.layers().begin() + 1, second.layers().end());
  return ReluNetwork(std::move(out));
}

// Adds exact identity layers at the output until depth L.
inline ReluNetwork pad_depth(const ReluNetwork& net, int L) {
  if (net.depth() >= L) return net;
  const int m = net.out_dim();
  std::vector<NetLayer> out(net.layers().begin(), net.layers().end() - 1);
  out.push_back(detail::split_layer(net.layers().back()));
  // Carry (ReLU(y), ReLU(-y)); one of them is zero, so p - q is exact.
  while (static_cast<int>(out.size()) + 1 < L) {
    Triplets t;
    for (int i = 0; i < m; ++i) {
      t.emplace_back(i, i, 1.0);
      t.emplace_back(i, m + i, -1.0);
      t.emplace_back(m + i, i, -1.0);
      t.emplace_back(m + i, m + i, 1.0);
    }
    out.push_back(NetLayer(sparse_from(2 * m, 2 * m, t), Eigen::VectorXd::Zero(2 * m)));
  }
  Triplets t;
  for (int i = 0; i < m; ++i) {
    t.emplace_back(i, i, 1.0);
    t.emplace_back(i, m + i, -1.0);
  }
  out.push_back(NetLayer(sparse_from(m, 2 * m, t), Eigen::VectorXd::Zero(m)));
  return ReluNetwork(std::move(out));
}

namespace detail {

inline ReluNetwork block_parallel(const std::vector<ReluNetwork>& nets, bool shared_input) {
  if (nets.empty()) throw ArgumentError("parallel: no networks");
  int L = 0;
  for (const auto& n : nets) L = std::max(L, n.depth());
  std::vector<ReluNetwork> p;
  for (const auto& n : nets) p.push_back(pad_depth(n, L));
  std::vector<NetLayer> out(L);
  for (int l = 0; l < L; ++l) {
    int rows = 0, cols = 0;
    for (const auto& n : p) {
      rows += static_cast<int>(n.layers()[l].W.rows());
      cols += static_cast<int>(n.layers()[l].W.cols());
    }
    if (l == 0 && shared_input) {
      cols = p[0].in_dim();
      for (const auto& n : p)
        if (n.in_dim() != cols) throw ArgumentError("fanout: input dimensions differ");
    }
    Triplets t;
    Eigen::VectorXd b = Eigen::VectorXd::Zero(rows);
    int r = 0, c = 0;
    for (const auto& n : p) {
      const auto& Ln = n.layers()[l];
      append_block(t, Ln.W, r, (l == 0 && shared_input) ? 0 : c);
      b.segment(r, Ln.b.size()) = Ln.b;
      r += static_cast<int>(Ln.W.rows());
      c += static_cast<int>(Ln.W.cols());
    }
    out[l] = NetLayer(sparse_from(rows, cols, t), b);
  }
  return ReluNetwork(std::move(out));
}

}  // namespace detail

// All nets read the same input; outputs are concatenated.
inline ReluNetwork fanout(const std::vector<ReluNetwork>& nets) { return detail::block_parallel(nets, true); }
// Inputs and outputs are concatenated (block diagonal).
inline ReluNetwork stack(const std::vector<ReluNetwork>& nets) { return detail::block_parallel(nets, false); }

// ---------------------------------------------------------------------------
// Gadgets.

// min(b, max(x, a)) per coordinate: a + ReLU(x - a) - ReLU(x - b).
inline ReluNetwork build_clip(const Vec& a, const Vec& b) {
  const int d = static_cast<int>(a.size());
  if (b.size() != a.size() || d < 1) throw ArgumentError("build_clip: bound dimensions differ");
  for (int i = 0; i < d; ++i)
    if (!(a[i] <= b[i])) throw ArgumentError("build_clip: need a_i <= b_i");
  DenseLayer h{Eigen::MatrixXd::Zero(2 * d, d), Eigen::VectorXd::Zero(2 * d)};
  DenseLayer o{Eigen::MatrixXd::Zero(d, 2 * d), Eigen::VectorXd::Zero(d)};
  for (int i = 0; i < d; ++i) {
    h.W(2 * i, i) = 1;
    h.b[2 * i] = -a[i];
    h.W(2 * i + 1, i) = 1;
    h.b[2 * i + 1] = -b[i];
    o.W(i, 2 * i) = 1;
    o.W(i, 2 * i + 1) = -1;
    o.b[i] = a[i];
  }
  return ReluNetwork({h, o});
}

inline ReluNetwork build_clip(int d, double a, double b) { return build_clip(Vec(d, a), Vec(d, b)); }

struct RecipInfo {
  double lo = 0, hi = 0, tol = 0;
  int knots = 0;
};

// Piecewise-linear interpolant of 1/x on [lo, hi] behind a clip to [lo, hi].
// Knot spacing 2 k^{1.5} sqrt(0.9 tol) keeps the interpolation error below 0.9 tol.
// Evaluated segment by segment, 1/x = 1/hi + sum_i |s_i| min(h_i, ReLU(k_{i+1} - x)),
// so every term is nonnegative and steep slopes near lo never cancel.
inline ReluNetwork build_recip_range(double lo, double hi, double tol, RecipInfo* info = nullptr) {
  if (!(lo > 0 && hi > lo && tol > 0)) throw ArgumentError("build_recip: need 0 < lo < hi and tol > 0");
  Vec k{lo};
  const double st = 2 * std::sqrt(0.9 * tol);
  while (k.back() < hi) k.push_back(std::min(hi, k.back() + st * std::pow(k.back(), 1.5)));
  const int n = static_cast<int>(k.size()) - 1;  // segments
  // r_i = ReLU(k_i - x), i = 0..n
  Eigen::VectorXd b1(n + 1);
  for (int i = 0; i <= n; ++i) b1[i] = k[i];
  NetLayer h1(Eigen::MatrixXd::Constant(n + 1, 1, -1.0), b1);
  // g_i = ReLU(r_{i+1} - r_i) = min(h_i, ReLU(k_{i+1} - x))
  Triplets t;
  for (int i = 0; i < n; ++i) {
    t.emplace_back(i, i + 1, 1.0);
    t.emplace_back(i, i, -1.0);
  }
  NetLayer h2(sparse_from(n, n + 1, t), Eigen::VectorXd::Zero(n));
  Triplets to;
  for (int i = 0; i < n; ++i) to.emplace_back(0, i, (1.0 / k[i] - 1.0 / k[i + 1]) / (k[i + 1] - k[i]));
  NetLayer o(sparse_from(1, n, to), Eigen::VectorXd::Constant(1, 1.0 / hi));
  if (info) *info = {lo, hi, tol, static_cast<int>(k.size())};
  return compose(build_clip(1, lo, hi), ReluNetwork({h1, h2, o}));
}

inline ReluNetwork build_recip(double eps, RecipInfo* info = nullptr) {
  if (!(eps > 0 && eps <= 0.1)) throw ArgumentError("build_recip: eps must lie in (0, 0.1]");
  return build_recip_range(eps, 1 / eps, eps, info);
}

// Product x y on [-C1, C1] x [-C2, C2] with |error| <= eps, output clipped to
// [-C1 C2, C1 C2]. Uses x y = C1 C2 (v+^2 - v-^2), v+- = |x/C1 +- y/C2|/2, with
// the square on [0, 1] given by the depth-m sawtooth expansion
// f_m(v) = v - sum_{s<=m} g_s(v)/4^s, 0 <= f_m - v^2 <= 4^{-m-1}.
inline int mult_pair_levels(double C1, double C2, double eps) {
  return std::max(1, static_cast<int>(std::ceil(std::log(C1 * C2 / (4 * eps)) / std::log(4.0))));
}

// Depth is mult_pair_levels + 4, width 6.
inline ReluNetwork build_mult_pair(double C1, double C2, double eps) {
  if (!(C1 > 0 && C2 > 0 && eps > 0)) throw ArgumentError("build_mult: need C > 0 and eps > 0");
  const double P = C1 * C2;
  const int m = mult_pair_levels(C1, C2, eps);
  std::vector<NetLayer> L;
  // |x/C1 + y/C2|/2 and |x/C1 - y/C2|/2 via ReLU pairs.
  DenseLayer l1{Eigen::MatrixXd::Zero(4, 2), Eigen::VectorXd::Zero(4)};
  const double a = 0.5 / C1, b = 0.5 / C2;
  l1.W << a, b, -a, -b, a, -b, -a, b;
  L.push_back(l1);
  // Chain layout per hidden layer: (a+, b+, c+, a-, b-, c-).
  DenseLayer l2{Eigen::MatrixXd::Zero(6, 4), Eigen::VectorXd::Zero(6)};
  for (int c = 0; c < 2; ++c) {
    for (int r : {0, 1, 2}) {
      l2.W(3 * c + r, 2 * c) = 1;
      l2.W(3 * c + r, 2 * c + 1) = 1;
    }
    l2.b[3 * c + 1] = -0.5;
  }
  L.push_back(l2);
  for (int s = 1; s < m; ++s) {
    const double q = std::ldexp(1.0, -2 * s);
    DenseLayer ls{Eigen::MatrixXd::Zero(6, 6), Eigen::VectorXd::Zero(6)};
    for (int c = 0; c < 2; ++c) {
      const int o = 3 * c;
      // z = 2a - 4b
      ls.W(o + 0, o + 0) = 2;
      ls.W(o + 0, o + 1) = -4;
      ls.W(o + 1, o + 0) = 2;
      ls.W(o + 1, o + 1) = -4;
      ls.b[o + 1] = -0.5;
      ls.W(o + 2, o + 0) = -2 * q;
      ls.W(o + 2, o + 1) = 4 * q;
      ls.W(o + 2, o + 2) = 1;
    }
    L.push_back(ls);
  }
  const double qm = std::ldexp(1.0, -2 * m);
  DenseLayer lh{Eigen::MatrixXd::Zero(2, 6), Eigen::VectorXd::Zero(2)};
  for (int c = 0; c < 2; ++c) {
    lh.W(c, 3 * c + 0) = -2 * qm;
    lh.W(c, 3 * c + 1) = 4 * qm;
    lh.W(c, 3 * c + 2) = 1;
  }
  L.push_back(lh);
  // P (h+ - h-) then clip to [-P, P]: the difference of identical chains is exactly 0.
  DenseLayer lc{Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Zero(2)};
  lc.W << P, -P, P, -P;
  lc.b << P, -P;
  L.push_back(lc);
  DenseLayer lo{Eigen::MatrixXd::Zero(1, 2), Eigen::VectorXd::Constant(1, -P)};
  lo.W << 1, -1;
  L.push_back(lo);
  return ReluNetwork(std::move(L));
}

// prod x_i on [-C, C]^d (d = 2, 3) within eps; exactly 0 when any x_i = 0;
// output clipped to [-C^d, C^d]. d = 3 averages the three pairings
// (x1 x2) x3, (x1 x3) x2, (x2 x3) x1 so the construction is permutation symmetric.
inline ReluNetwork build_mult(int d, double C, double eps) {
  if (d < 2 || d > 3) throw ArgumentError("build_mult: d must be 2 or 3");
  if (!(C >= 1)) throw ArgumentError("build_mult: C must be >= 1");
  if (!(eps > 0 && eps < 0.1)) throw ArgumentError("build_mult: eps must lie in (0, 0.1)");
  if (d == 2) return build_mult_pair(C, C, eps);
  const ReluNetwork p1 = build_mult_pair(C, C, eps / (2 * C));
  const ReluNetwork p2 = build_mult_pair(C * C, C, eps / 2);
  const ReluNetwork id = ReluNetwork::identity(1);
  const ReluNetwork stage1 = fanout({compose(ReluNetwork::select(3, {0, 1}), p1), ReluNetwork::select(3, {2}),
                                     compose(ReluNetwork::select(3, {0, 2}), p1), ReluNetwork::select(3, {1}),
                                     compose(ReluNetwork::select(3, {1, 2}), p1), ReluNetwork::select(3, {0})});
  const ReluNetwork stage2 = stack({p2, p2, p2});
  // Sum once (exact split into positive and negative parts), then scale by 1/3 and clip.
  const double B = C * C * C;
  DenseLayer s{Eigen::MatrixXd::Zero(2, 3), Eigen::VectorXd::Zero(2)};
  s.W << 1, 1, 1, -1, -1, -1;
  DenseLayer c{Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Zero(2)};
  c.W << 1.0 / 3, -1.0 / 3, 1.0 / 3, -1.0 / 3;
  c.b << B, -B;
  DenseLayer o{Eigen::MatrixXd::Zero(1, 2), Eigen::VectorXd::Constant(1, -B)};
  o.W << 1, -1;
  return compose(compose(stage1, stage2), ReluNetwork({s, c, o}));
}

// ---------------------------------------------------------------------------
// B-spline compilation.

inline double binomial(int n, int k) {
  double r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

namespace detail {

// 1-D network for N_{ell+1}(2^k x - j) on scalar input.
inline ReluNetwork bspline_axis_net(int k, int j, int ell, double eps) {
  const double sc = std::ldexp(1.0, k);
  // u = clip(2^k x - j, -1, ell + 2)
  const ReluNetwork affine = ReluNetwork::linear(Eigen::MatrixXd::Constant(1, 1, sc), Eigen::VectorXd::Constant(1, -j));
  const ReluNetwork u = compose(affine, build_clip(1, -1.0, ell + 2.0));
  if (ell == 0) {
    // Saturating ramps r1 = ReLU(1 - ReLU(-u)/delta), r2 = ReLU(1 - ReLU(1 - delta - u)/delta):
    // exactly 1 on [0, 1 - 2 delta], exactly 0 off (-delta, 1); the 2 delta strips are not certified.
    const double delta = 1e-3 * eps;
    DenseLayer h{Eigen::MatrixXd::Constant(2, 1, -1.0), Eigen::VectorXd(2)};
    h.b << 0.0, 1.0 - delta;
    DenseLayer h2{Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Ones(2)};
    h2.W << -1.0 / delta, 0, 0, -1.0 / delta;
    DenseLayer o{Eigen::MatrixXd::Zero(1, 2), Eigen::VectorXd::Zero(1)};
    o.W << 1, -1;
    return compose(u, ReluNetwork({h, h2, o}));
  }
  if (ell == 1) {
    // hat(u) = ReLU(1 - ReLU(u - 1) - ReLU(1 - u)): exactly 0 off (0, 2).
    DenseLayer h{Eigen::MatrixXd::Zero(2, 1), Eigen::VectorXd::Zero(2)};
    h.W << 1, -1;
    h.b << -1, 1;
    DenseLayer h2{Eigen::MatrixXd::Zero(1, 2), Eigen::VectorXd::Constant(1, 1.0)};
    h2.W << -1, -1;
    DenseLayer o{Eigen::MatrixXd::Constant(1, 1, 1.0), Eigen::VectorXd::Zero(1)};
    return compose(u, ReluNetwork({h, h2, o}));
  }
  // Truncated powers: N(u) = (1/ell!) sum_m (-1)^m C(ell+1, m) ReLU(u - m)^ell, gated by
  // g(u) = clip(u + 1, 0, 1) - clip(u - ell - 1, 0, 1) through an exact-zero product.
  const double Cr = ell + 2.0;
  double fact = 1;
  for (int i = 2; i <= ell; ++i) fact *= i;
  double coef_sum = 0;
  for (int m = 0; m <= ell + 1; ++m) coef_sum += binomial(ell + 1, m);
  const double eps_pow = 0.25 * eps * fact / (coef_sum * std::pow(Cr + 1, ell));
  // r_m = ReLU(u - m), m = 0..ell+1.
  DenseLayer rl{Eigen::MatrixXd::Ones(ell + 2, 1), Eigen::VectorXd(ell + 2)};
  for (int m = 0; m <= ell + 1; ++m) rl.b[m] = -m;
  DenseLayer ro{Eigen::MatrixXd::Identity(ell + 2, ell + 2), Eigen::VectorXd::Zero(ell + 2)};
  const ReluNetwork rnet({rl, ro});
  // Power chain r^ell = mult(r^{ell-1}, r) for each m, in parallel.
  std::vector<ReluNetwork> powers;
  for (int m = 0; m <= ell + 1; ++m) {
    ReluNetwork cur = ReluNetwork::select(ell + 2, {m});
    double range = Cr;
    for (int e = 2; e <= ell; ++e) {
      const ReluNetwork pair = build_mult_pair(range, Cr, eps_pow);
      cur = compose(fanout({cur, pad_depth(ReluNetwork::select(ell + 2, {m}), cur.depth())}), pair);
      range *= Cr;
    }
    powers.push_back(cur);
  }
  Eigen::MatrixXd comb = Eigen::MatrixXd::Zero(1, ell + 2);
  for (int m = 0; m <= ell + 1; ++m) comb(0, m) = ((m % 2) ? -1.0 : 1.0) * binomial(ell + 1, m) / fact;
  const ReluNetwork tp = compose(compose(rnet, fanout(powers)), ReluNetwork::linear(comb, Eigen::VectorXd::Zero(1)));
  // Gate on the clipped u.
  DenseLayer gh{Eigen::MatrixXd::Ones(4, 1), Eigen::VectorXd(4)};
  gh.b << 1.0, 0.0, -(ell + 1.0), -(ell + 2.0);
  DenseLayer go{Eigen::MatrixXd::Zero(1, 4), Eigen::VectorXd::Zero(1)};
  go.W << 1, -1, -1, 1;
  const ReluNetwork gate({gh, go});
  const double tp_max = 1.0 + eps;
  const ReluNetwork both = fanout({gate, tp});
  const ReluNetwork prod = build_mult_pair(1.0, tp_max, 0.25 * eps);
  return compose(u, compose(both, prod));
}

}  // namespace detail

// Network for the tensor spline M_{k,j}(x) = prod_i N_{ell+1}(2^{k_i} x_i - j_i) within eps.
inline ReluNetwork compile_bspline_net(const std::vector<int>& k, const std::vector<int>& j, int ell, double eps) {
  if (ell < 0 || ell > 4) throw ArgumentError("compile_bspline_net: ell must lie in 0..4");
  if (!(eps > 0 && eps < 0.1)) throw ArgumentError("compile_bspline_net: eps must lie in (0, 0.1)");
  const int d = static_cast<int>(k.size());
  if (d < 1 || d > 3 || static_cast<int>(j.size()) != d) throw ArgumentError("compile_bspline_net: bad multi-index");
  if (d == 1) return detail::bspline_axis_net(k[0], j[0], ell, eps);
  std::vector<ReluNetwork> axes;
  for (int i = 0; i < d; ++i)
    axes.push_back(compose(ReluNetwork::select(d, {i}), detail::bspline_axis_net(k[i], j[i], ell, eps / (2 * d))));
  const ReluNetwork all = fanout(axes);
  return compose(all, build_mult(d, 1.0 + eps, eps / 2));
}

// ---------------------------------------------------------------------------
// Acceleration network u8.

struct AccelNetConfig {
  double clamp = 1e-3;     // N^{-(2s+omega)/d}
  double C5 = 3.0;
  double N = 64;
  double K0 = 1.0;         // upper clip N^{K0+1}
  double eps_gadget = 1e-3;
  double u6_range = 1.0;   // bound on |u6| entries
  double u7_range = 1.0;   // bound on |u7| entries
  double a2_range = 1.0;   // bound on |a''_hat|
  double b2_range = 1.0;   // bound on |b''_hat|
};

struct AccelNetInfo {
  double tau_recip = 0;
  double eps_mult3 = 0, eps_mult5 = 0, eps_mult7 = 0, eps_mult8 = 0;
  double error_budget = 0;  // 5 eps_gadget
  std::vector<int> stage_depths;
  int coupling_layers = 0;
};

// u8 = mult(clip(mult(recip(clip(u5)), u6), +-C5 sqrt(log N)), a'') + mult(clip(mult(recip(...), u7), +-C5), b'').
inline ReluNetwork assemble_accel_net(const ReluNetwork& u5, const ReluNetwork& u6, const ReluNetwork& u7,
                                      const ReluNetwork& a2, const ReluNetwork& b2, const AccelNetConfig& c,
                                      AccelNetInfo* info = nullptr) {
  if (!(c.clamp > 0)) throw ArgumentError("assemble_accel_net: clamp must be positive");
  if (!(c.C5 > 0 && c.N > 1 && c.eps_gadget > 0)) throw ArgumentError("assemble_accel_net: constants must be positive");
  const int n = u5.in_dim();
  for (const ReluNetwork* net : {&u6, &u7, &a2, &b2})
    if (net->in_dim() != n) throw ArgumentError("assemble_accel_net: component input dimensions differ");
  if (u5.out_dim() != 1 || a2.out_dim() != 1 || b2.out_dim() != 1)
    throw ArgumentError("assemble_accel_net: u5, a'', b'' must be scalar");
  const int d = u6.out_dim();
  if (u7.out_dim() != d) throw ArgumentError("assemble_accel_net: u6 and u7 output dimensions differ");

  const double hi = std::pow(c.N, c.K0 + 1);
  const double lim4 = c.C5 * std::sqrt(std::log(c.N)), lim6 = c.C5;
  const double A = std::max(c.a2_range, 1e-300), Bm = std::max(c.b2_range, 1e-300);
  AccelNetInfo inf;
  inf.tau_recip = c.eps_gadget / (c.a2_range * c.u6_range + c.b2_range * c.u7_range + 1e-300);
  inf.eps_mult3 = c.eps_gadget / A;
  inf.eps_mult5 = c.eps_gadget / Bm;
  inf.eps_mult7 = c.eps_gadget;
  inf.eps_mult8 = c.eps_gadget;
  inf.error_budget = 5 * c.eps_gadget;
  const double zeta2_max = 1.0 / c.clamp + inf.tau_recip;

  // Stage 0: [u5, u6, u7, a'', b''] on the shared input.
  const ReluNetwork s0 = fanout({u5, u6, u7, a2, b2});
  const int w0 = 1 + 2 * d + 2;
  // Stage 1: zeta2 = recip(clip(u5)) and carries.
  std::vector<ReluNetwork> p1{compose(ReluNetwork::select(w0, {0}), build_recip_range(c.clamp, hi, inf.tau_recip))};
  for (int i = 1; i < w0; ++i) p1.push_back(ReluNetwork::select(w0, {i}));
  const ReluNetwork s1 = fanout(p1);
  // Stage 2: zeta3_i = mult(zeta2, u6_i), zeta5_i = mult(zeta2, u7_i).
  const ReluNetwork m3 = build_mult_pair(zeta2_max, c.u6_range, inf.eps_mult3);
  const ReluNetwork m5 = build_mult_pair(zeta2_max, c.u7_range, inf.eps_mult5);
  std::vector<ReluNetwork> p2;
  for (int i = 0; i < d; ++i) p2.push_back(compose(ReluNetwork::select(w0, {0, 1 + i}), m3));
  for (int i = 0; i < d; ++i) p2.push_back(compose(ReluNetwork::select(w0, {0, 1 + d + i}), m5));
  p2.push_back(ReluNetwork::select(w0, {1 + 2 * d, 2 + 2 * d}));
  const ReluNetwork s2 = fanout(p2);
  // Stage 3: clips.
  Vec lo(2 * d + 2), up(2 * d + 2);
  for (int i = 0; i < d; ++i) {
    lo[i] = -lim4;
    up[i] = lim4;
    lo[d + i] = -lim6;
    up[d + i] = lim6;
  }
  lo[2 * d] = -c.a2_range;
  up[2 * d] = c.a2_range;
  lo[2 * d + 1] = -c.b2_range;
  up[2 * d + 1] = c.b2_range;
  const ReluNetwork s3 = build_clip(lo, up);
  // Stage 4: zeta7_i = mult(zeta4_i, a''), zeta8_i = mult(zeta6_i, b'').
  const ReluNetwork m7 = build_mult_pair(lim4, std::max(c.a2_range, 1e-12), inf.eps_mult7);
  const ReluNetwork m8 = build_mult_pair(lim6, std::max(c.b2_range, 1e-12), inf.eps_mult8);
  const int w3 = 2 * d + 2;
  std::vector<ReluNetwork> p4;
  for (int i = 0; i < d; ++i) p4.push_back(compose(ReluNetwork::select(w3, {i, 2 * d}), m7));
  for (int i = 0; i < d; ++i) p4.push_back(compose(ReluNetwork::select(w3, {d + i, 2 * d + 1}), m8));
  const ReluNetwork s4 = fanout(p4);
  // Stage 5: u8 = zeta7 + zeta8.
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(d, 2 * d);
  for (int i = 0; i < d; ++i) {
    S(i, i) = 1;
    S(i, d + i) = 1;
  }
  const ReluNetwork s5 = ReluNetwork::linear(S, Eigen::VectorXd::Zero(d));

  const ReluNetwork out = compose(compose(compose(compose(compose(s0, s1), s2), s3), s4), s5);
  inf.stage_depths = {s0.depth(), s1.depth(), s2.depth(), s3.depth(), s4.depth(), s5.depth()};
  int sum = 0;
  for (int L : inf.stage_depths) sum += L;
  inf.coupling_layers = out.depth() - sum;
  if (info) *info = inf;
  return out;
}

}  // namespace hoflow
