#include "pflow/reinit.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>

#include "pflow/batched.hpp"

namespace pflow::reinit {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kOnInterfaceTol = 1e-12;
constexpr double kDegenerateDist = 1e-12;

struct Objective {
  // value and gradient w.r.t. x
  virtual ~Objective() = default;
  virtual double eval(const VectorXd& x, VectorXd& grad) const = 0;
};

struct PenaltyObjective : Objective {
  const ls::FieldProbe& F;
  VectorXd x0;
  double lambda;

  PenaltyObjective(const ls::FieldProbe& F_, VectorXd x0_, double l)
      : F(F_), x0(std::move(x0_)), lambda(l) {}

  double eval(const VectorXd& x, VectorXd& grad) const override {
    ls::FieldJet jet = F.jet_at(x, 1);
    const double f = jet.value[0];
    const VectorXd g = jet.grad.row(0);
    const VectorXd r = x - x0;
    grad = 2.0 * r + 2.0 * lambda * f * g;
    return r.squaredNorm() + lambda * f * f;
  }
};

struct AlignObjective : Objective {
  const ls::FieldProbe& F;
  VectorXd x0;

  AlignObjective(const ls::FieldProbe& F_, VectorXd x0_) : F(F_), x0(std::move(x0_)) {}

  double eval(const VectorXd& x, VectorXd& grad) const override {
    ls::FieldJet jet = F.jet_at(x, 2);
    const int d = F.dim();
    const double f = jet.value[0];
    const VectorXd g = jet.grad.row(0);
    Eigen::MatrixXd H(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) H(i, j) = jet.hess_at(0, i, j);

    VectorXd r = x - x0;
    double rn = r.norm();
    if (rn < kDegenerateDist) {  // perturb off the query point and retry
      r.setConstant(1e-7);
      rn = r.norm();
    }
    const double gn = std::max(g.norm(), 1e-300);
    const VectorXd n = g / gn;
    const VectorXd e = r / rn;
    const double align = n.dot(e);

    const VectorXd dalign = (H * (e - n * align)) / gn + (n - e * align) / rn;
    grad = 2.0 * f * g - 2.0 * (1.0 - align) * dalign;
    return f * f + (1.0 - align) * (1.0 - align);
  }
};

void adam_minimize(const Objective& obj, VectorXd& x, const FootOptions& opts, bool& converged,
                   int& iters_used) {
  nn::AdamState<double> state;
  state.resize(x.size());
  VectorXd grad(x.size()), best_x = x;
  double best_val = std::numeric_limits<double>::infinity();
  converged = false;
  iters_used = opts.budget;
  const int stage = std::max(1, opts.budget / std::max(1, opts.decades));
  for (int it = 0; it < opts.budget; ++it) {
    const double val = obj.eval(x, grad);
    if (val < best_val) {
      best_val = val;
      best_x = x;
    }
    if (grad.norm() < 1e-9) {  // stationary point
      converged = true;
      iters_used = it;
      break;
    }
    nn::AdamConfig cfg;
    cfg.lr = opts.lr * std::pow(0.1, it / stage);
    nn::adam_update<double>(x, grad, state, cfg);
  }
  if (!converged) x = best_x;  // keep the best iterate, flag the point
}

FootPointResult run_feet(const ls::FieldProbe& F, const MatrixXd& queries, const FootOptions& opts,
                         const std::function<std::unique_ptr<Objective>(const VectorXd&)>& make) {
  const Eigen::Index n = queries.rows();
  FootPointResult out;
  out.feet.resize(n, queries.cols());
  out.phi.resize(n);
  out.f_at_foot.resize(n);
  out.converged.assign(n, false);
  out.iters_used.assign(n, 0);

  for (Eigen::Index i = 0; i < n; ++i) {
    const VectorXd x0 = queries.row(i);
    const double f0 = F.value_at(x0);
    if (std::abs(f0) < kOnInterfaceTol) {  // already on the interface
      out.feet.row(i) = x0;
      out.phi[i] = 0.0;
      out.f_at_foot[i] = std::abs(f0);
      out.converged[i] = true;
      continue;
    }
    VectorXd x = (opts.warm_feet != nullptr && opts.warm_feet->rows() == n)
                     ? VectorXd(opts.warm_feet->row(i))
                     : x0;
    auto obj = make(x0);
    bool conv = false;
    int used = 0;
    adam_minimize(*obj, x, opts, conv, used);
    out.feet.row(i) = x;
    out.phi[i] = (f0 > 0 ? 1.0 : -1.0) * (x - x0).norm();
    out.f_at_foot[i] = std::abs(F.value_at(x));
    out.converged[i] = conv;
    out.iters_used[i] = used;
  }
  return out;
}

}  // namespace

FootPointResult reinit_penalty(const ls::FieldProbe& F, const MatrixXd& queries, double lambda,
                               const FootOptions& opts) {
  if (lambda <= 0) throw std::invalid_argument("reinit_penalty: lambda must be positive");
  return run_feet(F, queries, opts, [&](const VectorXd& x0) {
    return std::make_unique<PenaltyObjective>(F, x0, lambda);
  });
}

FootPointResult reinit_unconstrained(const ls::FieldProbe& F, const MatrixXd& queries,
                                     const FootOptions& opts) {
  return run_feet(F, queries, opts,
                  [&](const VectorXd& x0) { return std::make_unique<AlignObjective>(F, x0); });
}

PinnRResult reinit_pinnr(ls::ProbePtr F, const MatrixXd& colloc, const PinnRConfig& cfg) {
  const int d = F->dim();
  ls::FieldJet jet;
  F->eval(colloc, 1, jet);
  if (!jet.value.allFinite())
    throw std::runtime_error("reinit_pinnr: field values not finite at collocation points");

  nn::NetworkParams init;
  if (cfg.warm_net != nullptr) {
    init = *cfg.warm_net;
  } else {
    std::vector<int> dims{d};
    for (int h : cfg.hidden) dims.push_back(h);
    dims.push_back(1);
    init = nn::init_xavier(dims, cfg.seed);
  }

  nn::AdamConfig adam;
  adam.lr = cfg.lr;
  PinnRResult out;
  if (cfg.use_f32) {
    nn::EikonalTrainer<float> tr(init, colloc.cast<float>(), jet.value.cast<float>(),
                                 jet.grad.cast<float>());
    tr.run(cfg.budget, adam);
    out.znet = tr.params();
    out.loss_history = tr.history();
  } else {
    nn::EikonalTrainer<double> tr(init, colloc, jet.value, jet.grad);
    tr.run(cfg.budget, adam);
    out.znet = tr.params();
    out.loss_history = tr.history();
  }
  out.phi = std::make_shared<ls::PinnRProbe>(out.znet, F);
  return out;
}

double eikonal_residual_mean(const ls::FieldProbe& phi, const MatrixXd& pts,
                             const VectorXd& exclude_center, double exclude_radius) {
  ls::FieldJet jet;
  phi.eval(pts, 1, jet);
  double acc = 0;
  Eigen::Index count = 0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    if (exclude_radius > 0 &&
        (pts.row(i).transpose() - exclude_center).norm() <= exclude_radius)
      continue;
    acc += std::abs(jet.grad.row(i).norm() - 1.0);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("eikonal_residual_mean: all points excluded");
  return acc / static_cast<double>(count);
}

}  // namespace pflow::reinit
