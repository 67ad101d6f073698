#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "pflow/batched.hpp"
#include "pflow/fields.hpp"

namespace pflow::pinn {

/// One advection interval [t_begin, t_end], trained in normalized time
/// t* = (t - t_begin) / dt in [0, 1].
struct TimeInterval {
  double t_begin = 0, t_end = 0;

  double dt() const { return t_end - t_begin; }
  double normalize(double t) const { return (t - t_begin) / dt(); }
};

/// Advection velocity over one interval, linear in t* between the endpoint
/// fields: ubar(x, t*) = u_begin(x) (1 - t*) + u_end(x) t*.
struct VelocityInterpolant {
  using Evaluator = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

  Evaluator u_begin, u_end;

  Eigen::MatrixXd at_time(const Eigen::MatrixXd& X, double tstar) const;
  /// Per-row t*.
  Eigen::MatrixXd at_times(const Eigen::MatrixXd& X, const Eigen::VectorXd& tstar) const;

  static VelocityInterpolant steady(Evaluator u);
};

/// Spatial collocation points with one random t* draw per point, plus the
/// near-interface subset |F1(x, t*)| < eps.
struct CollocationSet {
  Eigen::MatrixXd points;
  Eigen::VectorXd tstar;
  double eps = 0.05;
  std::vector<Eigen::Index> near_indices;
};

CollocationSet sample_collocation(const Eigen::MatrixXd& points, double eps, std::uint64_t seed);

enum class Scheme { kWeak, kStrong, kFd };
enum class Precision { kF32, kF64 };

struct AdvectOptions {
  int iters = 4000;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  Precision precision = Precision::kF64;
  std::vector<int> hidden = {50, 50, 50, 50, 50};
  const nn::NetworkParams* warm_start = nullptr;  // reuse a previous interval's net
};

struct TrainingReport {
  std::vector<double> residual_loss;
  std::vector<double> ic_loss;  // weak scheme only
};

/// The level-set approximation over one interval: F_n = F_{n,1} + beta F_{n,2}
/// with the scheme-specific lift. `prev` is F_{n-1}(., 1).
struct MultiLevelField {
  Scheme scheme = Scheme::kStrong;
  int spatial_dim = 0;
  double dt = 0;
  nn::NetworkParams net1;
  std::optional<nn::NetworkParams> net2;
  double beta = 0;
  bool refinement_noop = false;
  ls::ProbePtr prev;
  TrainingReport report1, report2;

  /// F_n at (x_i, tstar_i).
  Eigen::VectorXd value(const Eigen::MatrixXd& X, const Eigen::VectorXd& tstar) const;

  /// F_n(., 1) as a probe with exact derivatives; only the current interval's
  /// networks are referenced (the lift telescopes away at t* = 1).
  ls::ProbePtr handoff() const;
};

MultiLevelField advect_weak(ls::ProbePtr prev, const VelocityInterpolant& u, double dt,
                            const CollocationSet& colloc, const AdvectOptions& opts);
MultiLevelField advect_strong(ls::ProbePtr prev, const VelocityInterpolant& u, double dt,
                              const CollocationSet& colloc, const AdvectOptions& opts);
MultiLevelField advect_fd(ls::ProbePtr prev, const VelocityInterpolant& u, double dt,
                          const CollocationSet& colloc, const AdvectOptions& opts);

/// Transport residual R(F) = d_{t*} F + dt ubar . grad F at (X_i, tstar_i),
/// evaluated on the single-network part of `f`.
Eigen::VectorXd residual(const MultiLevelField& f, const VelocityInterpolant& u,
                         const Eigen::MatrixXd& X, const Eigen::VectorXd& tstar);

/// Fills colloc.near_indices from |F1(x, t*)| < eps.
void mark_near_interface(CollocationSet& colloc, const MultiLevelField& f1);

constexpr double kBetaFloor = 1e-12;

/// beta = max |R(F1)| over the near-interface subset (all points when the
/// subset is empty), floored at kBetaFloor.
double estimate_beta(const MultiLevelField& f1, const VelocityInterpolant& u,
                     const CollocationSet& colloc);

/// Trains the second network on the residual problem near the interface and
/// attaches it to f1. Requires the strong scheme (exact initial condition for
/// F_{n,2}). When beta is at the floor the refinement is skipped and flagged.
void refine_multilevel(MultiLevelField& f1, const VelocityInterpolant& u,
                       const CollocationSet& colloc, double beta, const AdvectOptions& opts);

}  // namespace pflow::pinn
