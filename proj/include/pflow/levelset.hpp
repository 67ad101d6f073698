#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "pflow/fields.hpp"

namespace pflow::ls {

/// Phases named by level-set sign: `in` occupies F < 0, `out` F > 0. Scenario
/// configs bind physical fluids to sides explicitly.
struct FluidPair {
  double rho_in, mu_in;
  double rho_out, mu_out;
  double gamma;  // surface tension coefficient

  FluidPair(double rho_in_, double mu_in_, double rho_out_, double mu_out_, double gamma_)
      : rho_in(rho_in_), mu_in(mu_in_), rho_out(rho_out_), mu_out(mu_out_), gamma(gamma_) {
    if (rho_in <= 0 || rho_out <= 0 || mu_in <= 0 || mu_out <= 0)
      throw std::invalid_argument("FluidPair: densities and viscosities must be positive");
    if (gamma < 0) throw std::invalid_argument("FluidPair: gamma must be nonnegative");
  }
};

/// Smoothed-Heaviside sharpness. alpha_from_h places the 0.05..0.95
/// transition across about three elements.
struct PhaseMap {
  double alpha;

  explicit PhaseMap(double a) : alpha(a) {
    if (alpha <= 0) throw std::invalid_argument("PhaseMap: alpha must be positive");
  }
  /// Transition of H from 0.05 to 0.95 across `elems` elements of size h.
  static PhaseMap from_mesh_size(double h, double elems = 2.0) {
    return PhaseMap(2.0 * std::log(19.0) / (elems * h));
  }
};

/// Nondimensional groups with their defining characteristic scales.
struct DimensionlessGroup {
  double Re, We, Fr;
  double L_hat = 1, u_hat = 1, rho_hat = 1, mu_hat = 1;

  static DimensionlessGroup from_characteristics(double L, double u, double rho, double mu,
                                                 double gamma_dim, double g);
};

double heaviside(double F, const PhaseMap& pm);
double interface_delta(double F, const PhaseMap& pm);  // dH/dF

struct MixedProperties {
  double rho, mu;
};
MixedProperties mix_properties(double F, const FluidPair& fluids, const PhaseMap& pm);

struct Geometry {
  Eigen::VectorXd normal;
  double curvature = 0;
  double delta = 0;
  bool degenerate = false;  // |grad F| <= g_min: force contribution must be dropped
};

constexpr double kGradFloor = 1e-8;

Geometry geometry(const FieldProbe& probe, const Eigen::VectorXd& x, const PhaseMap& pm,
                  double g_min = kGradFloor);

/// Geometry quantities from an already-evaluated jet row (assembly fast path).
Geometry geometry_from_jet(const FieldJet& jet, Eigen::Index row, const PhaseMap& pm,
                           double g_min = kGradFloor);

/// Mean |F| over exact-interface marker points.
double interface_error(const FieldProbe& probe, const Eigen::MatrixXd& markers);

/// Quadrature point set for domain integrals.
struct QuadratureGrid {
  Eigen::MatrixXd points;
  Eigen::VectorXd weights;
};

/// Measure of the F < 0 phase: integral of 1 - H(F).
double phase_mass(const FieldProbe& probe, const QuadratureGrid& quad, const PhaseMap& pm);

}  // namespace pflow::ls
