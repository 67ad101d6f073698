#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "pflow/fields.hpp"
#include "pflow/nn.hpp"

namespace pflow::reinit {

/// Foot-point searches: Adam on the smooth objective, with a staged learning
/// rate decay inside the budget so the feet localize to optimizer tolerance.
struct FootOptions {
  int budget = 200;
  double lr = 1e-2;
  int decades = 3;  // lr decays by 10x this many times across the budget
  const Eigen::MatrixXd* warm_feet = nullptr;
};

struct FootPointResult {
  Eigen::MatrixXd feet;        // one row per query
  Eigen::VectorXd phi;         // sign(F(x0)) * |x* - x0|
  Eigen::VectorXd f_at_foot;   // constraint violation |F(x*)|
  std::vector<bool> converged;
  std::vector<int> iters_used;
};

/// min_x ||x - x0||^2 + lambda F(x)^2 per query point.
FootPointResult reinit_penalty(const ls::FieldProbe& F, const Eigen::MatrixXd& queries,
                               double lambda, const FootOptions& opts);

/// min_x F(x)^2 + (1 - n(x) . e(x, x0))^2: drives x onto the interface while
/// aligning x - x0 with the field normal.
FootPointResult reinit_unconstrained(const ls::FieldProbe& F, const Eigen::MatrixXd& queries,
                                     const FootOptions& opts);

struct PinnRConfig {
  int budget = 3000;
  double lr = 1e-3;
  std::vector<int> hidden = {50, 50, 50, 50, 50};
  std::uint64_t seed = 0;
  bool use_f32 = false;
  const nn::NetworkParams* warm_net = nullptr;
};

struct PinnRResult {
  nn::NetworkParams znet;
  ls::ProbePtr phi;  // exp(z(x)) * F(x): zero contour preserved exactly
  std::vector<double> loss_history;
};

/// Eikonal PINN: trains the strictly positive multiplier so ||grad phi|| = 1
/// at the collocation points.
PinnRResult reinit_pinnr(ls::ProbePtr F, const Eigen::MatrixXd& colloc, const PinnRConfig& cfg);

/// mean | ||grad phi|| - 1 | over pts, skipping points within
/// `exclude_radius` of `exclude_center` (the distance-function singularity).
double eikonal_residual_mean(const ls::FieldProbe& phi, const Eigen::MatrixXd& pts,
                             const Eigen::VectorXd& exclude_center, double exclude_radius);

}  // namespace pflow::reinit
