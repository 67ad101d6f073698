#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "pflow/levelset.hpp"

using namespace pflow;
using ls::FieldJet;
using ls::PhaseMap;

namespace {

// FD check of a probe's own grad/hess consistency.
void check_probe_derivatives(const ls::FieldProbe& probe, const Eigen::VectorXd& x, double tol) {
  const int d = probe.dim();
  FieldJet j = probe.jet_at(x, 2);
  const double h = 1e-5;
  for (int i = 0; i < d; ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fd = (probe.value_at(xp) - probe.value_at(xm)) / (2 * h);
    CHECK(std::abs(j.grad(0, i) - fd) < tol * (1 + std::abs(fd)));
    for (int k = 0; k < d; ++k) {
      const double fdh = (probe.grad_at(xp)[k] - probe.grad_at(xm)[k]) / (2 * h);
      CHECK(std::abs(j.hess_at(0, std::min(i, k), std::max(i, k)) - fdh) < tol * (1 + std::abs(fdh)));
    }
  }
}

}  // namespace

TEST_CASE("heaviside: midpoint, saturation, sigma(2)") {
  PhaseMap pm(2.0);
  CHECK(ls::heaviside(0.0, pm) == 0.5);
  // frozen scalar sigmoid oracle: sigma(2) computed independently
  CHECK(ls::heaviside(1.0, pm) == doctest::Approx(0.8807970779778823).epsilon(1e-14));
  PhaseMap steep(50.0);
  CHECK(ls::heaviside(1.0, steep) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(ls::heaviside(-1.0, steep) == doctest::Approx(0.0).scale(1).epsilon(1e-15));
  CHECK_THROWS(PhaseMap(0.0));
}

TEST_CASE("mix_properties: midpoint, saturation, monotonicity") {
  // rising-bubble case 2 fluids: outer (1000, 10), inner (1, 0.1)
  ls::FluidPair fluids(1.0, 0.1, 1000.0, 10.0, 1.96);
  PhaseMap pm(10.0);

  auto mid = ls::mix_properties(0.0, fluids, pm);
  CHECK(mid.rho == doctest::Approx(500.5).epsilon(1e-14));
  CHECK(mid.mu == doctest::Approx(5.05).epsilon(1e-14));

  auto deep = ls::mix_properties(-10.0, fluids, pm);
  CHECK(deep.rho == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(deep.mu == doctest::Approx(0.1).epsilon(1e-10));

  double prev = 0;
  for (double F = -1.0; F <= 1.0; F += 0.05) {
    const double r = ls::mix_properties(F, fluids, pm).rho;
    CHECK(r >= prev);
    prev = r;
  }
  CHECK_THROWS(ls::FluidPair(0.0, 1, 1, 1, 1));
  CHECK_THROWS(ls::FluidPair(1, 1, 1, 1, -2.0));
}

TEST_CASE("dimensionless groups: rising bubble characteristic values") {
  auto g1 = ls::DimensionlessGroup::from_characteristics(1.0, 1.0, 1000.0, 10.0, 24.5, 0.98);
  CHECK(g1.Re == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(g1.We == doctest::Approx(1000.0 / 24.5).epsilon(1e-12));
  CHECK(g1.Fr == doctest::Approx(1.0 / std::sqrt(0.98)).epsilon(1e-12));

  auto g2 = ls::DimensionlessGroup::from_characteristics(1.0, 1.0, 1000.0, 10.0, 1.96, 0.98);
  CHECK(g2.We == doctest::Approx(1000.0 / 1.96).epsilon(1e-12));

  // identity check on the defining relations
  CHECK(g1.Re * g1.mu_hat / (g1.rho_hat * g1.u_hat * g1.L_hat) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("geometry: circle, plane, sphere") {
  PhaseMap pm(20.0);

  auto circle = ls::make_sphere_probe(Eigen::Vector2d(0.0, 0.0), 0.25);
  auto g = ls::geometry(*circle, Eigen::Vector2d(0.25, 0.0), pm);
  CHECK(!g.degenerate);
  CHECK(g.curvature == doctest::Approx(4.0).epsilon(1e-6));
  CHECK(g.normal[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(g.normal.norm() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(g.delta == doctest::Approx(pm.alpha * 0.25).epsilon(1e-12));  // sigma(0)=1/2

  auto plane = ls::make_plane_probe(Eigen::Vector2d(0.0, 1.0), 0.3);
  auto gp = ls::geometry(*plane, Eigen::Vector2d(0.1, 0.9), pm);
  CHECK(gp.curvature == doctest::Approx(0.0).scale(1).epsilon(1e-14));

  // kappa = (d-1)/r away from the interface too
  auto sphere = ls::make_sphere_probe(Eigen::Vector3d(0, 0, 0.5), 0.25);
  Eigen::Vector3d x(0.3, 0.1, 0.6);
  const double r = (x - Eigen::Vector3d(0, 0, 0.5)).norm();
  auto gs = ls::geometry(*sphere, x, pm);
  CHECK(gs.curvature == doctest::Approx(2.0 / r).epsilon(1e-6));

  // pressure jump magnitude for the Laplace test fluids: gamma*kappa = 1.96*5
  auto lap = ls::make_sphere_probe(Eigen::Vector2d(0.5, 0.5), 0.2);
  auto gl = ls::geometry(*lap, Eigen::Vector2d(0.7, 0.5), pm);
  CHECK(1.96 * gl.curvature == doctest::Approx(9.8).epsilon(1e-6));

  // degenerate gradient at the sphere center is flagged
  auto gc = ls::geometry(*circle, Eigen::Vector2d(0.0, 0.0), pm);
  CHECK(gc.degenerate);
}

TEST_CASE("interface delta integrates to H(b)-H(a) along the normal") {
  PhaseMap pm(35.0);
  // across a planar interface: integral of delta(F)*|grad F| ds, F = s
  const double a = -0.2, b = 0.15;
  const int n = 20000;
  double integral = 0;
  for (int i = 0; i < n; ++i) {
    const double s = a + (b - a) * (i + 0.5) / n;
    integral += ls::interface_delta(s, pm) * (b - a) / n;
  }
  CHECK(integral == doctest::Approx(ls::heaviside(b, pm) - ls::heaviside(a, pm)).epsilon(1e-6));
}

TEST_CASE("interface_error: zero set, constant bias") {
  auto circle = ls::make_sphere_probe(Eigen::Vector2d(0.5, 0.5), 0.25);
  const int n = 64;
  Eigen::MatrixXd markers(n, 2);
  for (int i = 0; i < n; ++i) {
    const double th = 2 * M_PI * i / n;
    markers.row(i) << 0.5 + 0.25 * std::cos(th), 0.5 + 0.25 * std::sin(th);
  }
  CHECK(ls::interface_error(*circle, markers) == doctest::Approx(0.0).scale(1).epsilon(1e-14));

  auto biased = std::make_shared<ls::AnalyticProbe>(
      2, [&](const Eigen::VectorXd& x) { return (x - Eigen::Vector2d(0.5, 0.5)).norm() - 0.25 + 1e-3; });
  CHECK(ls::interface_error(*biased, markers) == doctest::Approx(1e-3).epsilon(1e-10));
}

TEST_CASE("phase_mass: circle area on the unit square") {
  auto circle = ls::make_sphere_probe(Eigen::Vector2d(0.5, 0.5), 0.25);
  // midpoint-rule grid; alpha large so 1-H is nearly an indicator
  const int n = 400;
  ls::QuadratureGrid quad;
  quad.points.resize(n * n, 2);
  quad.weights = Eigen::VectorXd::Constant(n * n, 1.0 / (n * n));
  int k = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      quad.points.row(k++) << (i + 0.5) / n, (j + 0.5) / n;
  PhaseMap sharp(4000.0);
  const double mass = ls::phase_mass(*circle, quad, sharp);
  CHECK(mass == doctest::Approx(M_PI * 0.0625).epsilon(6e-4));
  CHECK(ls::phase_mass(*circle, quad, sharp) == mass);  // determinism
}

TEST_CASE("MlpProbe derivatives are self-consistent (FD check)") {
  auto p = nn::init_xavier({3, 10, 10, 1}, 7);  // (x, y, t*) with frozen t*
  ls::MlpProbe probe(p, 2, /*has_time=*/true, 1.0);
  check_probe_derivatives(probe, Eigen::Vector2d(0.3, -0.2), 1e-6);
}

TEST_CASE("MultiLevelProbe derivatives are self-consistent (FD check)") {
  auto a = nn::init_xavier({3, 10, 10, 1}, 19);   // (x, y, t*)
  auto b = nn::init_xavier({5, 10, 10, 1}, 23);   // (x, y, t*, G1, G2)
  ls::MultiLevelProbe probe(a, b, 0.37, 2, /*has_time=*/true, 1.0);
  check_probe_derivatives(probe, Eigen::Vector2d(0.1, 0.4), 1e-5);

  // 3D variant (the pure-advection manufactured test)
  auto a3 = nn::init_xavier({4, 8, 1}, 29);
  auto b3 = nn::init_xavier({7, 8, 1}, 31);
  ls::MultiLevelProbe probe3(a3, b3, 0.8, 3, true, 1.0);
  check_probe_derivatives(probe3, Eigen::Vector3d(0.1, -0.3, 0.5), 1e-5);
}

TEST_CASE("PinnRProbe: zero set preserved exactly, derivatives consistent") {
  auto z = nn::init_xavier({2, 8, 1}, 37);
  auto inner = ls::make_sphere_probe(Eigen::Vector2d(0.5, 0.5), 0.25);
  ls::PinnRProbe probe(z, inner);

  for (int i = 0; i < 16; ++i) {
    const double th = 2 * M_PI * i / 16;
    Eigen::Vector2d x(0.5 + 0.25 * std::cos(th), 0.5 + 0.25 * std::sin(th));
    CHECK(std::abs(probe.value_at(x)) <= 1e-14);
    CHECK(std::signbit(probe.value_at(x * 0.5 + Eigen::Vector2d(0.25, 0.25))) ==
          std::signbit(inner->value_at(x * 0.5 + Eigen::Vector2d(0.25, 0.25))));
  }
  check_probe_derivatives(probe, Eigen::Vector2d(0.7, 0.6), 1e-5);
}
