#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hoflow/core.hpp"
#include "hoflow/features.hpp"
#include "hoflow/gaussian_path.hpp"
#include "hoflow/relunet.hpp"
#include "hoflow/rng.hpp"
#include "hoflow/schedule.hpp"

namespace hoflow {

// Fully connected ReLU network trained by backprop. Batches are column-major:
// one sample per column.
class MlpModel {
 public:
  MlpModel() = default;

  // He-normal weights, zero biases; optionally a zero output layer.
  static MlpModel init(const std::vector<int>& dims, Rng& rng, bool zero_output = false) {
    if (dims.size() < 2) throw ArgumentError("MlpModel: need at least input and output dims");
    for (int v : dims)
      if (v < 1) throw ArgumentError("MlpModel: layer dims must be positive");
    MlpModel m;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      Eigen::MatrixXd W(dims[l + 1], dims[l]);
      const double sd = std::sqrt(2.0 / dims[l]);
      for (int i = 0; i < W.size(); ++i) W.data()[i] = sd * rng.normal();
      if (zero_output && l + 2 == dims.size()) W.setZero();
      m.W_.push_back(W);
      m.b_.push_back(Eigen::VectorXd::Zero(dims[l + 1]));
    }
    return m;
  }

  int in_dim() const { return W_.empty() ? 0 : static_cast<int>(W_.front().cols()); }
  int out_dim() const { return W_.empty() ? 0 : static_cast<int>(W_.back().rows()); }
  int layers() const { return static_cast<int>(W_.size()); }
  std::vector<int> dims() const {
    std::vector<int> d{in_dim()};
    for (const auto& W : W_) d.push_back(static_cast<int>(W.rows()));
    return d;
  }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& X) const {
    if (X.rows() != in_dim()) throw ArgumentError("MlpModel: input dimension mismatch");
    Eigen::MatrixXd H = X;
    for (std::size_t l = 0; l < W_.size(); ++l) {
      Eigen::MatrixXd Z = W_[l] * H;
      Z.colwise() += b_[l];
      H = (l + 1 < W_.size()) ? Eigen::MatrixXd(Z.cwiseMax(0.0)) : Z;
    }
    return H;
  }

  Vec eval(const Vec& x) const {
    const Eigen::MatrixXd out = forward(Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<int>(x.size())));
    return Vec(out.data(), out.data() + out.size());
  }

  // Mean over columns of |f(x) - y|^2, with gradients.
  double loss_and_grad(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, std::vector<Eigen::MatrixXd>* gW,
                       std::vector<Eigen::VectorXd>* gb) const {
    const std::size_t L = W_.size();
    std::vector<Eigen::MatrixXd> H(L + 1);
    H[0] = X;
    for (std::size_t l = 0; l < L; ++l) {
      Eigen::MatrixXd Z = W_[l] * H[l];
      Z.colwise() += b_[l];
      H[l + 1] = (l + 1 < L) ? Eigen::MatrixXd(Z.cwiseMax(0.0)) : Z;
    }
    const double n = static_cast<double>(X.cols());
    const Eigen::MatrixXd R = H[L] - Y;
    const double loss = R.squaredNorm() / n;
    if (!gW) return loss;
    gW->assign(L, {});
    gb->assign(L, {});
    Eigen::MatrixXd D = (2.0 / n) * R;
    for (std::size_t l = L; l-- > 0;) {
      (*gW)[l] = D * H[l].transpose();
      (*gb)[l] = D.rowwise().sum();
      if (l > 0) {
        Eigen::MatrixXd back = W_[l].transpose() * D;
        D = back.cwiseProduct((H[l].array() > 0.0).cast<double>().matrix());
      }
    }
    return loss;
  }

  Eigen::VectorXd params() const {
    Eigen::VectorXd p(num_params());
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < W_.size(); ++l) {
      p.segment(k, W_[l].size()) = Eigen::Map<const Eigen::VectorXd>(W_[l].data(), W_[l].size());
      k += W_[l].size();
      p.segment(k, b_[l].size()) = b_[l];
      k += b_[l].size();
    }
    return p;
  }

  void set_params(const Eigen::VectorXd& p) {
    if (p.size() != num_params()) throw ArgumentError("MlpModel: parameter vector size mismatch");
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < W_.size(); ++l) {
      Eigen::Map<Eigen::VectorXd>(W_[l].data(), W_[l].size()) = p.segment(k, W_[l].size());
      k += W_[l].size();
      b_[l] = p.segment(k, b_[l].size());
      k += b_[l].size();
    }
  }

  // Flattened gradient in params() order.
  static Eigen::VectorXd flatten(const std::vector<Eigen::MatrixXd>& gW, const std::vector<Eigen::VectorXd>& gb) {
    Eigen::Index n = 0;
    for (std::size_t l = 0; l < gW.size(); ++l) n += gW[l].size() + gb[l].size();
    Eigen::VectorXd g(n);
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < gW.size(); ++l) {
      g.segment(k, gW[l].size()) = Eigen::Map<const Eigen::VectorXd>(gW[l].data(), gW[l].size());
      k += gW[l].size();
      g.segment(k, gb[l].size()) = gb[l];
      k += gb[l].size();
    }
    return g;
  }

  Eigen::Index num_params() const {
    Eigen::Index n = 0;
    for (std::size_t l = 0; l < W_.size(); ++l) n += W_[l].size() + b_[l].size();
    return n;
  }

  bool finite() const { return params().allFinite(); }

  ReluNetwork to_network() const {
    std::vector<NetLayer> L;
    for (std::size_t l = 0; l < W_.size(); ++l) L.push_back(NetLayer(W_[l], b_[l]));
    return ReluNetwork(std::move(L));
  }

  static MlpModel from_network(const ReluNetwork& net) {
    MlpModel m;
    for (const auto& L : net.layers()) {
      m.W_.push_back(Eigen::MatrixXd(L.W));
      m.b_.push_back(L.b);
    }
    return m;
  }

 private:
  std::vector<Eigen::MatrixXd> W_;
  std::vector<Eigen::VectorXd> b_;
};

struct TrainConfig {
  std::vector<int> hidden{64, 64};
  int steps = 2000;
  int batch = 256;
  double lr = 1e-3;
  double momentum = 0.9;
  double grad_clip = 10.0;  // global gradient norm cap; <= 0 disables
  double T0 = 1e-2;         // training times lie in the interval of width 1 - T0 ending at the noise end
  int log_every = 100;
  int eval_batch = 2048;
};

struct TrainLogEntry {
  int stage = 1;  // 1 velocity, 2 acceleration
  int step = 0;
  double loss = 0;
  double lr = 0;
};

// Time interval used for training and sampling: [T0, 1] when data sits at t = 0,
// [0, 1 - T0] when it sits at t = 1.
inline std::pair<double, double> flow_interval(const Schedule& s, double T0) {
  if (!(T0 > 0 && T0 < 1)) throw ConfigError("flow_interval: T0 must lie in (0, 1)");
  return s.data_time() == 0.0 ? std::pair{T0, 1.0} : std::pair{0.0, 1.0 - T0};
}

// Second derivatives vanish identically (the acceleration target is exactly 0).
inline bool acceleration_vanishes(const Schedule& s) { return s.kind() == ScheduleKind::Linear; }

struct FlowBatch {
  Eigen::MatrixXd X;  // [x_t; t] or [x_t; v(x_t, t); t]
  Eigen::MatrixXd Y;  // conditional velocity or acceleration target
  Vec t;
};

// x_t = alpha x0 + beta x1, x0 ~ N_d, x1 ~ data, t ~ U[lo, hi].
inline FlowBatch make_flow_batch(const std::vector<Vec>& data, const Schedule& s, int n, int order,
                                 std::pair<double, double> interval, Rng& rng, const MlpModel* velocity = nullptr) {
  if (data.empty()) throw ArgumentError("train_flow: data is empty");
  if (order != 1 && order != 2) throw ArgumentError("train_flow: order must be 1 or 2");
  if (order == 2 && !velocity) throw ArgumentError("train_flow: order 2 needs the frozen velocity net");
  const int d = static_cast<int>(data.front().size());
  FlowBatch b;
  Eigen::MatrixXd xt(d, n);
  b.Y.resize(d, n);
  b.t.resize(n);
  for (int c = 0; c < n; ++c) {
    const double t = rng.uniform(interval.first, interval.second);
    const Vec& x1 = data[rng.below(data.size())];
    const ScheduleState st = s.eval(t);
    const double ca = order == 1 ? st.alpha1 : st.alpha2, cb = order == 1 ? st.beta1 : st.beta2;
    for (int i = 0; i < d; ++i) {
      const double x0 = rng.normal();
      xt(i, c) = st.alpha * x0 + st.beta * x1[i];
      b.Y(i, c) = ca * x0 + cb * x1[i];
    }
    b.t[c] = t;
  }
  const Eigen::Map<const Eigen::RowVectorXd> trow(b.t.data(), n);
  if (order == 1) {
    b.X.resize(d + 1, n);
    b.X << xt, trow;
  } else {
    Eigen::MatrixXd vin(d + 1, n);
    vin << xt, trow;
    const Eigen::MatrixXd v = velocity->forward(vin);
    b.X.resize(2 * d + 1, n);
    b.X << xt, v, trow;
  }
  return b;
}

struct StageSummary {
  double initial_loss = 0;  // on a fixed evaluation batch
  double final_loss = 0;
};

struct TrainedFlowModel {
  int d = 1;
  int order = 1;
  MlpModel velocity;            // input (x, t)
  std::optional<MlpModel> accel;  // input (x, v(x, t), t)
  bool accel_zero = false;      // schedule has vanishing second derivatives
  double t_noise = 1, t_stop = 0;
  double alpha_noise = 1;
  std::string schedule;
  std::vector<TrainLogEntry> log;
  std::vector<StageSummary> stages;

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw ConfigError("save_model: cannot open " + path);
    char buf[128];
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g", t_noise, t_stop, alpha_noise);
    os << "hoflow-flow-model 1\n"
       << "d " << d << "\norder " << order << "\naccel_zero " << accel_zero << "\ntimes " << buf << "\n"
       << "schedule " << schedule << "\n"
       << "velocity\n";
    velocity.to_network().write(os);
    if (accel) {
      os << "acceleration\n";
      accel->to_network().write(os);
    }
  }

  static TrainedFlowModel load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("load_model: cannot open " + path);
    TrainedFlowModel m;
    std::string tag;
    int version = 0;
    if (!(is >> tag >> version) || tag != "hoflow-flow-model" || version != 1)
      throw ConfigError("load_model: bad header in " + path);
    auto expect = [&](const char* name) {
      if (!(is >> tag) || tag != name) throw ConfigError(std::string("load_model: expected ") + name);
    };
    expect("d");
    is >> m.d;
    expect("order");
    is >> m.order;
    expect("accel_zero");
    is >> m.accel_zero;
    expect("times");
    is >> m.t_noise >> m.t_stop >> m.alpha_noise;
    expect("schedule");
    std::getline(is >> std::ws, m.schedule);
    expect("velocity");
    m.velocity = MlpModel::from_network(ReluNetwork::read(is));
    if (is >> tag) {
      if (tag != "acceleration") throw ConfigError("load_model: unexpected section " + tag);
      m.accel = MlpModel::from_network(ReluNetwork::read(is));
    }
    if (m.velocity.in_dim() != m.d + 1 || m.velocity.out_dim() != m.d) throw ConfigError("load_model: velocity dims");
    if (m.accel && (m.accel->in_dim() != 2 * m.d + 1 || m.accel->out_dim() != m.d))
      throw ConfigError("load_model: acceleration dims");
    return m;
  }
};

namespace detail {

inline StageSummary train_stage(MlpModel& net, int stage, const TrainConfig& cfg, const std::vector<Vec>& data,
                                const Schedule& s, std::pair<double, double> iv, Rng rng,
                                const MlpModel* velocity, std::vector<TrainLogEntry>& log) {
  const int order = stage;
  Rng eval_rng = rng.split("eval");
  const FlowBatch eval = make_flow_batch(data, s, cfg.eval_batch, order, iv, eval_rng, velocity);
  StageSummary sum;
  sum.initial_loss = net.loss_and_grad(eval.X, eval.Y, nullptr, nullptr);
  Eigen::VectorXd p = net.params(), vel = Eigen::VectorXd::Zero(p.size());
  std::vector<Eigen::MatrixXd> gW;
  std::vector<Eigen::VectorXd> gb;
  Rng batch_rng = rng.split("batches");
  for (int k = 0; k < cfg.steps; ++k) {
    const FlowBatch b = make_flow_batch(data, s, cfg.batch, order, iv, batch_rng, velocity);
    const double loss = net.loss_and_grad(b.X, b.Y, &gW, &gb);
    if (!std::isfinite(loss))
      throw TrainingError("train_flow: loss is not finite at step " + std::to_string(k) + " (stage " +
                          std::to_string(stage) + ")");
    Eigen::VectorXd g = MlpModel::flatten(gW, gb);
    const double gn = g.norm();
    if (cfg.grad_clip > 0 && gn > cfg.grad_clip) g *= cfg.grad_clip / gn;
    const double lr = cfg.lr * 0.5 * (1 + std::cos(kPi * k / cfg.steps));
    vel = cfg.momentum * vel - lr * g;
    p += vel;
    net.set_params(p);
    if (cfg.log_every > 0 && (k % cfg.log_every == 0 || k + 1 == cfg.steps)) log.push_back({stage, k, loss, lr});
  }
  if (!net.finite()) throw TrainingError("train_flow: non-finite weights after stage " + std::to_string(stage));
  sum.final_loss = net.loss_and_grad(eval.X, eval.Y, nullptr, nullptr);
  if (!std::isfinite(sum.final_loss))
    throw TrainingError("train_flow: loss is not finite at step " + std::to_string(cfg.steps) + " (stage " +
                        std::to_string(stage) + ")");
  return sum;
}

}  // namespace detail

// Order 1 regresses alpha' x0 + beta' x1 on (x_t, t). Order 2 additionally
// regresses alpha'' x0 + beta'' x1 on (x_t, v(x_t, t), t) with v frozen.
inline TrainedFlowModel train_flow(const TrainConfig& cfg, const std::vector<Vec>& data, const Schedule& s, int order,
                                   std::uint64_t seed) {
  if (data.empty()) throw ArgumentError("train_flow: data is empty");
  if (order != 1 && order != 2) throw ArgumentError("train_flow: order must be 1 or 2");
  if (cfg.steps < 1 || cfg.batch < 1 || !(cfg.lr > 0) || cfg.hidden.empty())
    throw ConfigError("train_flow: need steps, batch, lr and hidden widths");
  const int d = static_cast<int>(data.front().size());
  for (const auto& x : data)
    if (static_cast<int>(x.size()) != d) throw ArgumentError("train_flow: data points differ in dimension");
  const auto iv = flow_interval(s, cfg.T0);
  Rng root(seed, "train_flow");
  TrainedFlowModel m;
  m.d = d;
  m.order = order;
  m.schedule = s.describe();
  m.t_noise = s.noise_time();
  m.t_stop = m.t_noise == 1.0 ? iv.first : iv.second;
  m.alpha_noise = s.alpha(m.t_noise);
  m.accel_zero = order == 2 && acceleration_vanishes(s);

  std::vector<int> dims{d + 1};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(d);
  Rng init1 = root.split("init.velocity");
  m.velocity = MlpModel::init(dims, init1, true);
  m.stages.push_back(detail::train_stage(m.velocity, 1, cfg, data, s, iv, root.split("stage1"), nullptr, m.log));
  if (order == 2) {
    dims.front() = 2 * d + 1;
    Rng init2 = root.split("init.accel");
    m.accel = MlpModel::init(dims, init2, true);
    m.stages.push_back(detail::train_stage(*m.accel, 2, cfg, data, s, iv, root.split("stage2"), &m.velocity, m.log));
  }
  return m;
}

// Analytic vs central-difference directional derivatives of the training loss
// along `probes` random unit directions. Returns the worst relative error.
struct GradCheck {
  int probes = 0;
  double max_rel_error = 0;
  bool pass(double tol = 1e-4) const { return max_rel_error <= tol; }
};

inline GradCheck gradient_check(const MlpModel& net, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, int probes,
                                std::uint64_t seed, double h = 1e-6) {
  std::vector<Eigen::MatrixXd> gW;
  std::vector<Eigen::VectorXd> gb;
  net.loss_and_grad(X, Y, &gW, &gb);
  const Eigen::VectorXd g = MlpModel::flatten(gW, gb);
  const Eigen::VectorXd p0 = net.params();
  Rng rng(seed, "gradient_check");
  MlpModel work = net;
  GradCheck r;
  r.probes = probes;
  for (int k = 0; k < probes; ++k) {
    Eigen::VectorXd u(p0.size());
    for (int i = 0; i < u.size(); ++i) u[i] = rng.normal();
    u.normalize();
    work.set_params(p0 + h * u);
    const double lp = work.loss_and_grad(X, Y, nullptr, nullptr);
    work.set_params(p0 - h * u);
    const double lm = work.loss_and_grad(X, Y, nullptr, nullptr);
    const double fd = (lp - lm) / (2 * h), an = g.dot(u);
    const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
    r.max_rel_error = std::max(r.max_rel_error, rel);
  }
  return r;
}

// Gradient check on a fresh training batch for the given loss order.
inline GradCheck training_gradient_check(const std::vector<Vec>& data, const Schedule& s, int order, int probes,
                                         std::uint64_t seed, const std::vector<int>& hidden = {16, 16}) {
  const int d = static_cast<int>(data.front().size());
  Rng rng(seed, "training_gradient_check");
  std::vector<int> dims{d + 1};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(d);
  Rng ri = rng.split("init");
  const MlpModel v = MlpModel::init(dims, ri);
  const auto iv = flow_interval(s, 0.05);
  Rng rb = rng.split("batch");
  if (order == 1) {
    const FlowBatch b = make_flow_batch(data, s, 64, 1, iv, rb, nullptr);
    return gradient_check(v, b.X, b.Y, probes, seed);
  }
  dims.front() = 2 * d + 1;
  const MlpModel a = MlpModel::init(dims, ri);
  const FlowBatch b = make_flow_batch(data, s, 64, 2, iv, rb, &v);
  return gradient_check(a, b.X, b.Y, probes, seed);
}

// Mean training loss on each interval [knots_j, knots_{j+1}].
struct IntervalLoss {
  double t_lo = 0, t_hi = 0, loss = 0;
};

inline std::vector<IntervalLoss> interval_losses(const TrainedFlowModel& m, const std::vector<Vec>& data,
                                                 const Schedule& s, int order, const Vec& knots, int per_interval,
                                                 std::uint64_t seed) {
  if (order == 2 && !m.accel) throw ArgumentError("interval_losses: model has no acceleration head");
  std::vector<IntervalLoss> out;
  Rng rng(seed, "interval_losses");
  for (std::size_t j = 0; j + 1 < knots.size(); ++j) {
    Rng r = rng.split(j);
    const FlowBatch b = make_flow_batch(data, s, per_interval, order, {knots[j], knots[j + 1]}, r, &m.velocity);
    const MlpModel& net = order == 1 ? m.velocity : *m.accel;
    out.push_back({knots[j], knots[j + 1], net.loss_and_grad(b.X, b.Y, nullptr, nullptr)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sampling.

// Batched fields: X is d x n; the callee fills d x n.
using BatchField = std::function<Eigen::MatrixXd(const Eigen::MatrixXd& X, double t)>;

struct OdeProblem {
  int d = 1;
  double t_noise = 1, t_stop = 0;
  double alpha_noise = 1;
  BatchField velocity;
  BatchField acceleration;  // empty means a = 0 (short-circuit)
};

// Integrates from t_noise (x = alpha_noise z, z ~ N_d) to t_stop with uniform
// steps. Order 2 adds (h^2/2) a; columns where a is exactly 0 are left untouched.
inline Eigen::MatrixXd sample_ode(const OdeProblem& p, int n, int steps, int order, std::uint64_t seed) {
  if (steps < 1) throw ArgumentError("sample_ode: steps must be >= 1");
  if (n < 1) throw ArgumentError("sample_ode: n must be >= 1");
  if (order != 1 && order != 2) throw ArgumentError("sample_ode: order must be 1 or 2");
  if (!p.velocity) throw ArgumentError("sample_ode: velocity field required");
  Rng rng(seed, "sample_ode");
  Eigen::MatrixXd X(p.d, n);
  for (int c = 0; c < n; ++c)
    for (int i = 0; i < p.d; ++i) X(i, c) = p.alpha_noise * rng.normal();
  const double h = (p.t_stop - p.t_noise) / steps;
  for (int k = 0; k < steps; ++k) {
    const double t = p.t_noise + k * h;
    const Eigen::MatrixXd V = p.velocity(X, t);
    if (order == 2 && p.acceleration) {
      const Eigen::MatrixXd A = p.acceleration(X, t);
      X += h * V;
      for (int c = 0; c < n; ++c)
        for (int i = 0; i < p.d; ++i)
          if (A(i, c) != 0.0) X(i, c) += 0.5 * h * h * A(i, c);
    } else {
      X += h * V;
    }
    if (!X.allFinite()) throw IntegrationError("sample_ode: non-finite state at step " + std::to_string(k));
  }
  return X;
}

inline OdeProblem model_problem(const TrainedFlowModel& m) {
  OdeProblem p;
  p.d = m.d;
  p.t_noise = m.t_noise;
  p.t_stop = m.t_stop;
  p.alpha_noise = m.alpha_noise;
  const MlpModel* v = &m.velocity;
  p.velocity = [v](const Eigen::MatrixXd& X, double t) {
    Eigen::MatrixXd in(X.rows() + 1, X.cols());
    in << X, Eigen::RowVectorXd::Constant(X.cols(), t);
    return v->forward(in);
  };
  if (m.accel && !m.accel_zero) {
    const MlpModel* a = &*m.accel;
    p.acceleration = [v, a](const Eigen::MatrixXd& X, double t) {
      Eigen::MatrixXd in(X.rows() + 1, X.cols());
      in << X, Eigen::RowVectorXd::Constant(X.cols(), t);
      const Eigen::MatrixXd V = v->forward(in);
      Eigen::MatrixXd ain(2 * X.rows() + 1, X.cols());
      ain << X, V, Eigen::RowVectorXd::Constant(X.cols(), t);
      return a->forward(ain);
    };
  }
  return p;
}

inline Eigen::MatrixXd sample_ode(const TrainedFlowModel& m, int n, int steps, int order, std::uint64_t seed) {
  if (order == 2 && m.order < 2) throw ArgumentError("sample_ode: model has no acceleration head");
  return sample_ode(model_problem(m), n, steps, order, seed);
}

// Exact marginal fields of a Gaussian path, evaluated pointwise.
inline OdeProblem exact_problem(const GaussianPath& P, double T0, bool with_acceleration) {
  OdeProblem p;
  const Schedule& s = P.schedule();
  const auto iv = flow_interval(s, T0);
  p.d = P.dim();
  p.t_noise = s.noise_time();
  p.t_stop = p.t_noise == 1.0 ? iv.first : iv.second;
  p.alpha_noise = s.alpha(p.t_noise);
  const GaussianPath* path = &P;
  auto field = [path](bool accel) {
    return [path, accel](const Eigen::MatrixXd& X, double t) {
      const ScheduleState st = path->state(t);
      Eigen::MatrixXd out(X.rows(), X.cols());
      Vec x(X.rows());
      for (int c = 0; c < X.cols(); ++c) {
        for (int i = 0; i < X.rows(); ++i) x[i] = X(i, c);
        const MarginalFields f = path->fields_at(st, x, false);
        const Vec& v = accel ? f.acceleration : f.velocity;
        for (int i = 0; i < X.rows(); ++i) out(i, c) = v[i];
      }
      return out;
    };
  };
  p.velocity = field(false);
  if (with_acceleration && !acceleration_vanishes(s)) p.acceleration = field(true);
  return p;
}

inline std::vector<Vec> columns(const Eigen::MatrixXd& X) {
  std::vector<Vec> out(X.cols(), Vec(X.rows()));
  for (int c = 0; c < X.cols(); ++c)
    for (int i = 0; i < X.rows(); ++i) out[c][i] = X(i, c);
  return out;
}

// ---------------------------------------------------------------------------
// Error of a model field against the exact marginal field, weighted by p_t.

enum class FieldKind { Velocity, Acceleration };

inline double integrated_squared_error(const std::function<Vec(const Vec&)>& u, const GaussianPath& P, double t,
                                       FieldKind target) {
  return integrated_field_error(P, t, u, target == FieldKind::Velocity ? FieldTarget::Velocity : FieldTarget::Acceleration);
}

// Model field at time t as a function of x.
inline std::function<Vec(const Vec&)> model_field(const TrainedFlowModel& m, double t, FieldKind kind) {
  if (kind == FieldKind::Acceleration && !m.accel) throw ArgumentError("model_field: no acceleration head");
  return [&m, t, kind](const Vec& x) {
    Vec in(x);
    in.push_back(t);
    const Vec v = m.velocity.eval(in);
    if (kind == FieldKind::Velocity) return v;
    Vec ain(x);
    ain.insert(ain.end(), v.begin(), v.end());
    ain.push_back(t);
    return m.accel->eval(ain);
  };
}

// ---------------------------------------------------------------------------
// Wasserstein distances.

namespace detail {

// Minimum-cost perfect matching (Hungarian, O(n^3)); returns the total cost.
inline double assignment_cost(const Eigen::MatrixXd& C) {
  const int n = static_cast<int>(C.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(n + 1, 0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = C(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0;
  for (int j = 1; j <= n; ++j) total += C(p[j] - 1, j - 1);
  return total;
}

// Entropic transport cost <P, C> with uniform marginals (log-domain Sinkhorn).
inline double sinkhorn_cost(const Eigen::MatrixXd& C, double reg, int iters = 500, double tol = 1e-7) {
  const int n = static_cast<int>(C.rows()), m = static_cast<int>(C.cols());
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n), g = Eigen::VectorXd::Zero(m);
  const double la = -std::log(static_cast<double>(n)), lb = -std::log(static_cast<double>(m));
  auto lse_rows = [&](Eigen::VectorXd& out) {
    for (int i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < m; ++j) mx = std::max(mx, (g[j] - C(i, j)) / reg);
      double s = 0;
      for (int j = 0; j < m; ++j) s += std::exp((g[j] - C(i, j)) / reg - mx);
      out[i] = reg * (la - mx - std::log(s));
    }
  };
  auto lse_cols = [&](Eigen::VectorXd& out) {
    for (int j = 0; j < m; ++j) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < n; ++i) mx = std::max(mx, (f[i] - C(i, j)) / reg);
      double s = 0;
      for (int i = 0; i < n; ++i) s += std::exp((f[i] - C(i, j)) / reg - mx);
      out[j] = reg * (lb - mx - std::log(s));
    }
  };
  for (int it = 0; it < iters; ++it) {
    const Eigen::VectorXd f_old = f;
    lse_rows(f);
    lse_cols(g);
    if ((f - f_old).cwiseAbs().maxCoeff() < tol * reg) break;
  }
  double cost = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) cost += std::exp((f[i] + g[j] - C(i, j)) / reg) * C(i, j);
  return cost;
}

}  // namespace detail

// W_p between empirical measures. d = 1: sorted coupling. d >= 2: exact
// assignment for n <= 512, entropic (Sinkhorn) estimate above.
inline double wasserstein_distance(const std::vector<Vec>& A, const std::vector<Vec>& B, int p = 1) {
  if (p != 1 && p != 2) throw ArgumentError("wasserstein_distance: p must be 1 or 2");
  if (A.empty() || B.empty()) throw ArgumentError("wasserstein_distance: empty sample");
  const int d = static_cast<int>(A.front().size());
  const std::size_t n = A.size();
  auto cost = [p](const Vec& a, const Vec& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += sq(a[i] - b[i]);
    return p == 2 ? s : std::sqrt(s);
  };
  if (d == 1 || n <= 512) {
    if (B.size() != n) throw ArgumentError("wasserstein_distance: exact mode needs equal sample sizes");
  }
  if (d == 1) {
    Vec a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = A[i][0];
      b[i] = B[i][0];
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += p == 2 ? sq(a[i] - b[i]) : std::abs(a[i] - b[i]);
    s /= static_cast<double>(n);
    return p == 2 ? std::sqrt(s) : s;
  }
  Eigen::MatrixXd C(A.size(), B.size());
  for (std::size_t i = 0; i < A.size(); ++i)
    for (std::size_t j = 0; j < B.size(); ++j) C(i, j) = cost(A[i], B[j]);
  double s;
  if (n <= 512) {
    s = detail::assignment_cost(C) / static_cast<double>(n);
  } else {
    const double reg = 0.01 * C.mean();
    s = detail::sinkhorn_cost(C, reg);
  }
  return p == 2 ? std::sqrt(s) : s;
}

}  // namespace hoflow
