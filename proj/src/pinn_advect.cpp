#include "pflow/pinn_advect.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "pflow/jets.hpp"

namespace pflow::pinn {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd hstack_time(const MatrixXd& X, const VectorXd& tstar) {
  MatrixXd Xt(X.rows(), X.cols() + 1);
  Xt.leftCols(X.cols()) = X;
  Xt.col(X.cols()) = tstar;
  return Xt;
}

struct PrevData {
  VectorXd P;
  MatrixXd gradP;
};

PrevData eval_prev(const ls::FieldProbe& prev, const MatrixXd& X, int order) {
  ls::FieldJet jet;
  prev.eval(X, order, jet);
  PrevData out;
  out.P = jet.value;
  if (order >= 1) out.gradP = jet.grad;
  return out;
}

template <typename S>
nn::ResidualBatch<S> cast_batch(const MatrixXd& X, const MatrixXd& V, const VectorXd& a,
                                const VectorXd& b, const VectorXd& c, double weight) {
  nn::ResidualBatch<S> bt;
  bt.X = X.cast<S>();
  if (V.size() != 0) bt.V = V.cast<S>();
  bt.a = a.cast<S>();
  bt.b = b.cast<S>();
  bt.c = c.cast<S>();
  bt.weight = weight;
  return bt;
}

struct TrainOutcome {
  nn::NetworkParams params;
  std::vector<std::vector<double>> term_history;
};

TrainOutcome run_training(const nn::NetworkParams& init, Precision prec,
                          const std::vector<MatrixXd>& Xs, const std::vector<MatrixXd>& Vs,
                          const std::vector<VectorXd>& as, const std::vector<VectorXd>& bs,
                          const std::vector<VectorXd>& cs, const std::vector<double>& weights,
                          int iters, double lr) {
  nn::AdamConfig cfg;
  cfg.lr = lr;
  TrainOutcome out;
  if (prec == Precision::kF32) {
    std::vector<nn::ResidualBatch<float>> batches;
    for (std::size_t k = 0; k < Xs.size(); ++k)
      batches.push_back(cast_batch<float>(Xs[k], Vs[k], as[k], bs[k], cs[k], weights[k]));
    nn::ResidualTrainer<float> tr(init, std::move(batches));
    tr.run(iters, cfg);
    out.params = tr.params();
    out.term_history = tr.term_history();
  } else {
    std::vector<nn::ResidualBatch<double>> batches;
    for (std::size_t k = 0; k < Xs.size(); ++k)
      batches.push_back(cast_batch<double>(Xs[k], Vs[k], as[k], bs[k], cs[k], weights[k]));
    nn::ResidualTrainer<double> tr(init, std::move(batches));
    tr.run(iters, cfg);
    out.params = tr.params();
    out.term_history = tr.term_history();
  }
  return out;
}

nn::NetworkParams initial_net(int input_dim, const AdvectOptions& opts) {
  if (opts.warm_start != nullptr) {
    if (opts.warm_start->input_dim() != input_dim)
      throw std::invalid_argument("advect: warm-start network has wrong input dimension");
    return *opts.warm_start;
  }
  std::vector<int> dims;
  dims.push_back(input_dim);
  for (int h : opts.hidden) dims.push_back(h);
  dims.push_back(1);
  return nn::init_xavier(dims, opts.seed);
}

}  // namespace

MatrixXd VelocityInterpolant::at_time(const MatrixXd& X, double tstar) const {
  MatrixXd U0 = u_begin(X);
  MatrixXd U1 = u_end(X);
  return U0 * (1.0 - tstar) + U1 * tstar;
}

MatrixXd VelocityInterpolant::at_times(const MatrixXd& X, const VectorXd& tstar) const {
  MatrixXd U0 = u_begin(X);
  MatrixXd U1 = u_end(X);
  return U0.array().colwise() * (1.0 - tstar.array()) + U1.array().colwise() * tstar.array();
}

VelocityInterpolant VelocityInterpolant::steady(Evaluator u) { return {u, u}; }

CollocationSet sample_collocation(const MatrixXd& points, double eps, std::uint64_t seed) {
  if (points.rows() == 0) throw std::invalid_argument("sample_collocation: no points");
  CollocationSet c;
  c.points = points;
  c.eps = eps;
  c.tstar.resize(points.rows());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (Eigen::Index i = 0; i < c.tstar.size(); ++i) c.tstar[i] = uni(rng);
  return c;
}

VectorXd MultiLevelField::value(const MatrixXd& X, const VectorXd& tstar) const {
  const nn::Mlp<double> n1 = nn::Mlp<double>::from(net1);
  if (scheme == Scheme::kFd) return n1.value(X);
  const MatrixXd Xt = hstack_time(X, tstar);
  VectorXd N = n1.value(Xt);
  if (scheme == Scheme::kWeak) return N;

  // strong lift
  PrevData pd = eval_prev(*prev, X, net2 ? 1 : 0);
  VectorXd F = N.array() * tstar.array() + pd.P.array() * (1.0 - tstar.array());
  if (net2) {
    // G = t* grad N1 + (1 - t*) grad P
    VectorXd n1v;
    MatrixXd n1g;
    n1.value_and_grad(Xt, n1v, n1g);
    const int d = spatial_dim;
    MatrixXd Y(X.rows(), 2 * d + 1);
    Y.leftCols(d) = X;
    Y.col(d) = tstar;
    for (int m = 0; m < d; ++m)
      Y.col(d + 1 + m) = n1g.col(m).array() * tstar.array() +
                         pd.gradP.col(m).array() * (1.0 - tstar.array());
    const nn::Mlp<double> n2 = nn::Mlp<double>::from(*net2);
    F.array() += beta * n2.value(Y).array() * tstar.array();
  }
  return F;
}

ls::ProbePtr MultiLevelField::handoff() const {
  switch (scheme) {
    case Scheme::kFd:
      return std::make_shared<ls::MlpProbe>(net1, spatial_dim, /*has_time=*/false);
    case Scheme::kWeak:
      return std::make_shared<ls::MlpProbe>(net1, spatial_dim, /*has_time=*/true, 1.0);
    case Scheme::kStrong:
      if (net2)
        return std::make_shared<ls::MultiLevelProbe>(net1, *net2, beta, spatial_dim,
                                                     /*has_time=*/true, 1.0);
      return std::make_shared<ls::MlpProbe>(net1, spatial_dim, /*has_time=*/true, 1.0);
  }
  throw std::logic_error("MultiLevelField::handoff: bad scheme");
}

MultiLevelField advect_strong(ls::ProbePtr prev, const VelocityInterpolant& u, double dt,
                              const CollocationSet& colloc, const AdvectOptions& opts) {
  const int d = static_cast<int>(colloc.points.cols());
  const Eigen::Index M = colloc.points.rows();
  if (dt <= 0) throw std::invalid_argument("advect_strong: dt must be positive");

  const PrevData pd = eval_prev(*prev, colloc.points, 1);
  const MatrixXd ubar = u.at_times(colloc.points, colloc.tstar);

  MatrixXd X = hstack_time(colloc.points, colloc.tstar);
  MatrixXd V(M, d + 1);
  for (int j = 0; j < d; ++j) V.col(j) = dt * colloc.tstar.array() * ubar.col(j).array();
  V.col(d) = colloc.tstar;

  VectorXd a = VectorXd::Ones(M), b = VectorXd::Ones(M);
  VectorXd c = -pd.P;
  for (int j = 0; j < d; ++j)
    c.array() += dt * (1.0 - colloc.tstar.array()) * ubar.col(j).array() * pd.gradP.col(j).array();

  auto out = run_training(initial_net(d + 1, opts), opts.precision, {X}, {V}, {a}, {b}, {c}, {1.0},
                          opts.iters, opts.lr);

  MultiLevelField f;
  f.scheme = Scheme::kStrong;
  f.spatial_dim = d;
  f.dt = dt;
  f.net1 = std::move(out.params);
  f.prev = std::move(prev);
  f.report1.residual_loss = std::move(out.term_history[0]);
  return f;
}

MultiLevelField advect_weak(ls::ProbePtr prev, const VelocityInterpolant& u, double dt,
                            const CollocationSet& colloc, const AdvectOptions& opts) {
  const int d = static_cast<int>(colloc.points.cols());
  const Eigen::Index M = colloc.points.rows();
  if (dt <= 0) throw std::invalid_argument("advect_weak: dt must be positive");

  const PrevData pd = eval_prev(*prev, colloc.points, 0);
  const MatrixXd ubar = u.at_times(colloc.points, colloc.tstar);

  // residual term at (x, t*)
  MatrixXd X1 = hstack_time(colloc.points, colloc.tstar);
  MatrixXd V1(M, d + 1);
  for (int j = 0; j < d; ++j) V1.col(j) = dt * ubar.col(j);
  V1.col(d).setOnes();
  VectorXd a1 = VectorXd::Ones(M), b1 = VectorXd::Zero(M), c1 = VectorXd::Zero(M);

  // weakly imposed initial condition at t* = 0
  MatrixXd X2 = hstack_time(colloc.points, VectorXd::Zero(M));
  VectorXd a2 = VectorXd::Zero(M), b2 = VectorXd::Ones(M);
  VectorXd c2 = -pd.P;

  auto out = run_training(initial_net(d + 1, opts), opts.precision, {X1, X2}, {V1, MatrixXd()},
                          {a1, a2}, {b1, b2}, {c1, c2}, {1.0, 1.0}, opts.iters, opts.lr);

  MultiLevelField f;
  f.scheme = Scheme::kWeak;
  f.spatial_dim = d;
  f.dt = dt;
  f.net1 = std::move(out.params);
  f.prev = std::move(prev);
  f.report1.residual_loss = std::move(out.term_history[0]);
  f.report1.ic_loss = std::move(out.term_history[1]);
  return f;
}

MultiLevelField advect_fd(ls::ProbePtr prev, const VelocityInterpolant& u, double dt,
                          const CollocationSet& colloc, const AdvectOptions& opts) {
  const int d = static_cast<int>(colloc.points.cols());
  const Eigen::Index M = colloc.points.rows();
  if (dt <= 0) throw std::invalid_argument("advect_fd: dt must be positive");

  const PrevData pd = eval_prev(*prev, colloc.points, 0);
  const MatrixXd un = u.u_end(colloc.points);  // implicit scheme: ubar = u_n

  VectorXd a = VectorXd::Ones(M);
  VectorXd b = VectorXd::Constant(M, 1.0 / dt);
  VectorXd c = -pd.P / dt;

  auto out = run_training(initial_net(d, opts), opts.precision, {colloc.points}, {un}, {a}, {b},
                          {c}, {1.0}, opts.iters, opts.lr);

  MultiLevelField f;
  f.scheme = Scheme::kFd;
  f.spatial_dim = d;
  f.dt = dt;
  f.net1 = std::move(out.params);
  f.prev = std::move(prev);
  f.report1.residual_loss = std::move(out.term_history[0]);
  return f;
}

VectorXd residual(const MultiLevelField& f, const VelocityInterpolant& u, const MatrixXd& X,
                  const VectorXd& tstar) {
  const int d = f.spatial_dim;
  const nn::Mlp<double> n1 = nn::Mlp<double>::from(f.net1);

  if (f.scheme == Scheme::kFd) {
    VectorXd N;
    MatrixXd G;
    n1.value_and_grad(X, N, G);
    const PrevData pd = eval_prev(*f.prev, X, 0);
    const MatrixXd un = u.u_end(X);
    VectorXd R = (N - pd.P) / f.dt;
    for (int j = 0; j < d; ++j) R.array() += un.col(j).array() * G.col(j).array();
    return R;
  }

  const MatrixXd Xt = hstack_time(X, tstar);
  VectorXd N;
  MatrixXd G;  // w.r.t. (x, t*)
  n1.value_and_grad(Xt, N, G);
  const MatrixXd ubar = u.at_times(X, tstar);

  if (f.scheme == Scheme::kWeak) {
    VectorXd R = G.col(d);
    for (int j = 0; j < d; ++j) R.array() += f.dt * ubar.col(j).array() * G.col(j).array();
    return R;
  }

  // strong: F = N t* + P (1 - t*)
  const PrevData pd = eval_prev(*f.prev, X, 1);
  VectorXd R = N + (tstar.array() * G.col(d).array()).matrix() - pd.P;
  for (int j = 0; j < d; ++j)
    R.array() += f.dt * ubar.col(j).array() *
                 (tstar.array() * G.col(j).array() +
                  (1.0 - tstar.array()) * pd.gradP.col(j).array());
  return R;
}

void mark_near_interface(CollocationSet& colloc, const MultiLevelField& f1) {
  const VectorXd F = f1.value(colloc.points, colloc.tstar);
  colloc.near_indices.clear();
  for (Eigen::Index i = 0; i < F.size(); ++i)
    if (std::abs(F[i]) < colloc.eps) colloc.near_indices.push_back(i);
}

double estimate_beta(const MultiLevelField& f1, const VelocityInterpolant& u,
                     const CollocationSet& colloc) {
  const VectorXd R = residual(f1, u, colloc.points, colloc.tstar);
  double beta = 0;
  if (colloc.near_indices.empty()) {
    beta = R.cwiseAbs().maxCoeff();
  } else {
    for (Eigen::Index i : colloc.near_indices) beta = std::max(beta, std::abs(R[i]));
  }
  return std::max(beta, kBetaFloor);
}

void refine_multilevel(MultiLevelField& f1, const VelocityInterpolant& u,
                       const CollocationSet& colloc, double beta, const AdvectOptions& opts) {
  if (f1.scheme != Scheme::kStrong)
    throw std::invalid_argument(
        "refine_multilevel: requires the strong scheme (exact initial condition for F2)");
  if (f1.net2) throw std::invalid_argument("refine_multilevel: already refined");
  f1.beta = beta;
  if (beta <= kBetaFloor) {
    // nothing to correct: F1 already satisfies the transport residual
    f1.refinement_noop = true;
    return;
  }

  const int d = f1.spatial_dim;
  std::vector<Eigen::Index> rows = colloc.near_indices;
  if (rows.empty()) {
    rows.resize(colloc.points.rows());
    for (Eigen::Index i = 0; i < colloc.points.rows(); ++i) rows[i] = i;
  }
  const Eigen::Index M = static_cast<Eigen::Index>(rows.size());

  MatrixXd X(M, d);
  VectorXd ts(M);
  for (Eigen::Index i = 0; i < M; ++i) {
    X.row(i) = colloc.points.row(rows[i]);
    ts[i] = colloc.tstar[rows[i]];
  }
  const MatrixXd ubar = u.at_times(X, ts);
  const VectorXd R1 = residual(f1, u, X, ts);

  // jets of N1 over (x, t*): gradient and Hessian for the chain-rule tangent
  const nn::Mlp<double> n1 = nn::Mlp<double>::from(f1.net1);
  const nn::JetSpec spec = nn::JetSpec::make(d + 1, 2);
  std::vector<int> active(d + 1);
  for (int i = 0; i <= d; ++i) active[i] = i;
  const MatrixXd Xt = hstack_time(X, ts);
  const nn::MlpJet jn = nn::jet_eval(n1, Xt, active, spec);

  ls::FieldJet pj;
  f1.prev->eval(X, 2, pj);

  // F2 inputs: y = [x, t*, G], G = grad_x F1(x, t*)
  MatrixXd Y(M, 2 * d + 1);
  Y.leftCols(d) = X;
  Y.col(d) = ts;
  for (int m = 0; m < d; ++m)
    Y.col(d + 1 + m) = jn.planes[spec.index1(m)].array() * ts.array() +
                       pj.grad.col(m).array() * (1.0 - ts.array());

  // tangent of y along the transport direction (dt t* ubar, t*), with the
  // gradient features riding along via the chain rule:
  //   w_G[m] = t* (dG_m/dt* + sum_i dG_m/dx_i * dt ubar_i)
  MatrixXd V(M, 2 * d + 1);
  for (int j = 0; j < d; ++j) V.col(j) = f1.dt * ts.array() * ubar.col(j).array();
  V.col(d) = ts;
  for (int m = 0; m < d; ++m) {
    // dG_m/dt* = dN/dx_m + t* d2N/dx_m dt* - dP/dx_m
    VectorXd Gt = jn.planes[spec.index1(m)].array() +
                  ts.array() * jn.planes[spec.index2(m, d)].array() - pj.grad.col(m).array();
    VectorXd wg = ts.array() * Gt.array();
    for (int i = 0; i < d; ++i) {
      // dG_m/dx_i = t* d2N/dx_m dx_i + (1 - t*) d2P/dx_m dx_i
      VectorXd Gx = ts.array() * jn.planes[spec.index2(m, i)].array() +
                    (1.0 - ts.array()) * pj.hess.col(ls::sym_index(d, m, i)).array();
      wg.array() += ts.array() * Gx.array() * (f1.dt * ubar.col(i).array());
    }
    V.col(d + 1 + m) = wg;
  }

  VectorXd a = VectorXd::Constant(M, beta), b = VectorXd::Constant(M, beta);
  auto out = run_training(initial_net(2 * d + 1, opts), opts.precision, {Y}, {V}, {a}, {b}, {R1},
                          {1.0}, opts.iters, opts.lr);
  f1.net2 = std::move(out.params);
  f1.report2.residual_loss = std::move(out.term_history[0]);
}

}  // namespace pflow::pinn
