#include "pflow/levelset.hpp"

#include <cmath>

namespace pflow::ls {

DimensionlessGroup DimensionlessGroup::from_characteristics(double L, double u, double rho,
                                                            double mu, double gamma_dim, double g) {
  if (L <= 0 || u <= 0 || rho <= 0 || mu <= 0)
    throw std::invalid_argument("DimensionlessGroup: characteristic scales must be positive");
  DimensionlessGroup gr;
  gr.L_hat = L;
  gr.u_hat = u;
  gr.rho_hat = rho;
  gr.mu_hat = mu;
  gr.Re = rho * u * L / mu;
  gr.We = gamma_dim > 0 ? rho * u * u * L / gamma_dim : std::numeric_limits<double>::infinity();
  gr.Fr = g > 0 ? u / std::sqrt(g * L) : std::numeric_limits<double>::infinity();
  return gr;
}

double heaviside(double F, const PhaseMap& pm) { return 1.0 / (1.0 + std::exp(-pm.alpha * F)); }

double interface_delta(double F, const PhaseMap& pm) {
  const double s = heaviside(F, pm);
  return pm.alpha * s * (1.0 - s);
}

MixedProperties mix_properties(double F, const FluidPair& fluids, const PhaseMap& pm) {
  const double H = heaviside(F, pm);
  return {fluids.rho_out * H + fluids.rho_in * (1.0 - H),
          fluids.mu_out * H + fluids.mu_in * (1.0 - H)};
}

Geometry geometry_from_jet(const FieldJet& jet, Eigen::Index row, const PhaseMap& pm, double g_min) {
  const int d = jet.dim;
  Geometry g;
  g.normal = jet.grad.row(row);
  const double gn = g.normal.norm();
  g.delta = interface_delta(jet.value[row], pm);
  if (gn <= g_min) {
    g.degenerate = true;
    g.normal.setZero();
    return g;
  }
  g.normal /= gn;
  // div(grad F / |grad F|) expanded in first and second derivatives
  double trace = 0, quad = 0;
  const Eigen::VectorXd gr = jet.grad.row(row);
  for (int i = 0; i < d; ++i) {
    trace += jet.hess_at(row, i, i);
    for (int j = 0; j < d; ++j) quad += gr[i] * jet.hess_at(row, i, j) * gr[j];
  }
  g.curvature = trace / gn - quad / (gn * gn * gn);
  return g;
}

Geometry geometry(const FieldProbe& probe, const Eigen::VectorXd& x, const PhaseMap& pm,
                  double g_min) {
  FieldJet jet;
  probe.eval(x.transpose(), 2, jet);
  return geometry_from_jet(jet, 0, pm, g_min);
}

double interface_error(const FieldProbe& probe, const Eigen::MatrixXd& markers) {
  if (markers.rows() == 0) throw std::invalid_argument("interface_error: no markers");
  FieldJet jet;
  probe.eval(markers, 0, jet);
  return jet.value.cwiseAbs().mean();
}

double phase_mass(const FieldProbe& probe, const QuadratureGrid& quad, const PhaseMap& pm) {
  FieldJet jet;
  probe.eval(quad.points, 0, jet);
  double mass = 0;
  for (Eigen::Index i = 0; i < quad.weights.size(); ++i)
    mass += quad.weights[i] * (1.0 - heaviside(jet.value[i], pm));
  return mass;
}

}  // namespace pflow::ls
