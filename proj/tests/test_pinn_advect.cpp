#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "pflow/pinn_advect.hpp"

using namespace pflow;
using namespace pflow::pinn;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_points(int n, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(lo, hi);
  MatrixXd pts(n, 2);
  for (int i = 0; i < n; ++i) {
    pts(i, 0) = uni(rng);
    pts(i, 1) = uni(rng);
  }
  return pts;
}

VelocityInterpolant zero_velocity() {
  return VelocityInterpolant::steady(
      [](const MatrixXd& X) { return MatrixXd::Zero(X.rows(), X.cols()).eval(); });
}

VelocityInterpolant uniform_velocity(double cx, double cy) {
  return VelocityInterpolant::steady([cx, cy](const MatrixXd& X) {
    MatrixXd U(X.rows(), 2);
    U.col(0).setConstant(cx);
    U.col(1).setConstant(cy);
    return U;
  });
}

// a strong-scheme field whose network outputs identically zero, so
// F1(x, t*) = P(x) (1 - t*) in closed form
MultiLevelField zero_net_strong(ls::ProbePtr prev, double dt) {
  MultiLevelField f;
  f.scheme = Scheme::kStrong;
  f.spatial_dim = 2;
  f.dt = dt;
  f.net1.dims = {3, 4, 1};
  f.net1.weights = {Eigen::MatrixXd::Zero(4, 3), Eigen::MatrixXd::Zero(1, 4)};
  f.net1.biases = {Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(1)};
  f.prev = std::move(prev);
  return f;
}

}  // namespace

TEST_CASE("velocity interpolant matches endpoints and is linear in t*") {
  auto u0 = [](const MatrixXd& X) { return MatrixXd(X.array() * 2.0); };
  auto u1 = [](const MatrixXd& X) { return MatrixXd(X.array() - 1.0); };
  VelocityInterpolant u{u0, u1};
  MatrixXd X = random_points(10, -1, 1, 5);
  CHECK((u.at_time(X, 0.0) - u0(X)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((u.at_time(X, 1.0) - u1(X)).cwiseAbs().maxCoeff() == 0.0);
  MatrixXd mid = 0.5 * (u0(X) + u1(X));
  CHECK((u.at_time(X, 0.5) - mid).cwiseAbs().maxCoeff() < 1e-15);

  VectorXd ts = VectorXd::LinSpaced(10, 0, 1);
  MatrixXd Ut = u.at_times(X, ts);
  for (int i = 0; i < 10; ++i)
    CHECK((Ut.row(i) - u.at_time(X.row(i), ts[i]).row(0)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("sample_collocation: determinism, range, count") {
  MatrixXd pts = random_points(500, 0, 1, 7);
  auto c1 = sample_collocation(pts, 0.05, 42);
  auto c2 = sample_collocation(pts, 0.05, 42);
  auto c3 = sample_collocation(pts, 0.05, 43);
  CHECK(c1.points.rows() == 500);
  CHECK((c1.tstar - c2.tstar).cwiseAbs().maxCoeff() == 0.0);
  CHECK((c1.tstar - c3.tstar).cwiseAbs().maxCoeff() > 0.0);
  CHECK(c1.tstar.minCoeff() >= 0.0);
  CHECK(c1.tstar.maxCoeff() <= 1.0);
}

TEST_CASE("near-interface mask: annulus geometry and eps=inf") {
  MatrixXd pts = random_points(2000, -0.5, 0.5, 9);
  auto prev = ls::make_sphere_probe(Eigen::Vector2d(0, 0), 0.25);
  auto f = zero_net_strong(prev, 0.1);

  CollocationSet colloc;
  colloc.points = pts;
  colloc.tstar = VectorXd::Zero(2000);  // F1(x, 0) = P(x)
  colloc.eps = 0.05;
  mark_near_interface(colloc, f);
  for (Eigen::Index i = 0; i < 2000; ++i) {
    const double r = pts.row(i).norm();
    const bool near = std::find(colloc.near_indices.begin(), colloc.near_indices.end(), i) !=
                      colloc.near_indices.end();
    CHECK(near == (std::abs(r - 0.25) < 0.05));
  }

  colloc.eps = std::numeric_limits<double>::infinity();
  mark_near_interface(colloc, f);
  CHECK(colloc.near_indices.size() == 2000);
}

TEST_CASE("estimate_beta: max-abs of the residual, and the floor") {
  // zero network, zero velocity: R = -P, so beta = max |P| over the set
  MatrixXd pts(3, 2);
  pts << 0.1, 0.0, -0.3, 0.0, 0.2, 0.0;
  auto prev = ls::make_plane_probe(Eigen::Vector2d(1, 0), 0.0);  // P = x
  auto f = zero_net_strong(prev, 0.1);
  CollocationSet colloc;
  colloc.points = pts;
  colloc.tstar = VectorXd::Constant(3, 0.5);
  colloc.near_indices = {0, 1, 2};
  CHECK(estimate_beta(f, zero_velocity(), colloc) == doctest::Approx(0.3).epsilon(1e-12));

  // empty near set falls back to the full set
  colloc.near_indices.clear();
  CHECK(estimate_beta(f, zero_velocity(), colloc) == doctest::Approx(0.3).epsilon(1e-12));

  // exactly representable stationary solution: R = 0, beta is floored and
  // refinement is a flagged no-op
  auto cprev = std::make_shared<ls::AnalyticProbe>(
      2, [](const Eigen::VectorXd&) { return 0.37; },
      [](const Eigen::VectorXd&) { return Eigen::VectorXd::Zero(2).eval(); },
      [](const Eigen::VectorXd&) { return Eigen::MatrixXd::Zero(2, 2).eval(); });
  MultiLevelField fc = zero_net_strong(cprev, 0.1);
  fc.net1.biases[1][0] = 0.37;  // N = P = const
  const double beta = estimate_beta(fc, zero_velocity(), colloc);
  CHECK(beta == kBetaFloor);
  AdvectOptions opts;
  opts.iters = 10;
  refine_multilevel(fc, zero_velocity(), colloc, beta, opts);
  CHECK(fc.refinement_noop);
  CHECK(!fc.net2.has_value());
}

TEST_CASE("strong scheme satisfies the initial condition exactly, untrained") {
  MatrixXd pts = random_points(1000, -0.5, 0.5, 21);
  auto prev = ls::make_sphere_probe(Eigen::Vector2d(0.1, -0.05), 0.3);
  auto colloc = sample_collocation(pts, 0.05, 2);
  AdvectOptions opts;
  opts.iters = 0;  // any parameters must satisfy F(x,0) = P(x)
  auto f = advect_strong(prev, zero_velocity(), 0.1, colloc, opts);
  VectorXd F0 = f.value(pts, VectorXd::Zero(1000));
  ls::FieldJet pj;
  prev->eval(pts, 0, pj);
  CHECK((F0 - pj.value).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("weak scheme, zero velocity: stationary transport is recovered") {
  MatrixXd pts = random_points(2000, -0.5, 0.5, 23);
  auto prev = ls::make_sphere_probe(Eigen::Vector2d(0, 0), 0.25);
  auto colloc = sample_collocation(pts, 0.05, 11);
  AdvectOptions opts;
  opts.iters = 800;
  opts.lr = 1e-3;
  opts.seed = 1;
  auto f = advect_weak(prev, zero_velocity(), 0.1, colloc, opts);
  VectorXd F1 = f.value(pts, VectorXd::Ones(2000));
  ls::FieldJet pj;
  prev->eval(pts, 0, pj);
  CHECK((F1 - pj.value).cwiseAbs().mean() < 2e-2);
  // both loss terms are reported separately and end small
  REQUIRE(f.report1.residual_loss.size() == 800);
  REQUIRE(f.report1.ic_loss.size() == 800);
  CHECK(f.report1.residual_loss.back() < 1e-3);
  CHECK(f.report1.ic_loss.back() < 1e-3);
}

TEST_CASE("strong scheme, rigid advection of a plane is exact (characteristics)") {
  MatrixXd pts = random_points(600, -0.5, 0.5, 25);
  auto prev = ls::make_plane_probe(Eigen::Vector2d(1, 0), 0.0);  // F = x
  auto colloc = sample_collocation(pts, 0.05, 12);
  AdvectOptions opts;
  opts.iters = 4000;
  opts.lr = 3e-3;
  opts.seed = 2;
  auto f = advect_strong(prev, uniform_velocity(0.7, 0.0), 0.1, colloc, opts);
  VectorXd F1 = f.value(pts, VectorXd::Ones(600));
  VectorXd exact = pts.col(0).array() - 0.7 * 0.1;  // x - c dt
  CHECK((F1 - exact).cwiseAbs().maxCoeff() < 1e-2);
  CHECK(f.report1.residual_loss.back() < 1e-6);  // representable solution
}

TEST_CASE("fd scheme: stationary and rigid-advection closed forms") {
  MatrixXd pts = random_points(600, -0.5, 0.5, 27);
  auto colloc = sample_collocation(pts, 0.05, 13);
  AdvectOptions opts;
  opts.iters = 2000;
  opts.lr = 3e-3;
  opts.seed = 3;

  auto prev = ls::make_sphere_probe(Eigen::Vector2d(0, 0), 0.25);
  auto f0 = advect_fd(prev, zero_velocity(), 0.1, colloc, opts);
  ls::FieldJet pj;
  prev->eval(pts, 0, pj);
  CHECK((f0.value(pts, VectorXd::Ones(600)) - pj.value).cwiseAbs().mean() < 2e-2);

  auto plane = ls::make_plane_probe(Eigen::Vector2d(1, 0), 0.0);
  opts.iters = 4000;
  auto f1 = advect_fd(plane, uniform_velocity(0.7, 0.0), 0.1, colloc, opts);
  VectorXd exact = pts.col(0).array() - 0.07;  // solves the implicit equation exactly
  CHECK((f1.value(pts, VectorXd::Ones(600)) - exact).cwiseAbs().maxCoeff() < 3e-2);
}

TEST_CASE("residual: zero for constant fields, matches FD oracle on a random net") {
  MatrixXd pts = random_points(50, -0.4, 0.4, 31);
  VectorXd ts = VectorXd::LinSpaced(50, 0.05, 0.95);

  auto cprev = std::make_shared<ls::AnalyticProbe>(
      2, [](const Eigen::VectorXd&) { return 0.37; },
      [](const Eigen::VectorXd&) { return Eigen::VectorXd::Zero(2).eval(); },
      [](const Eigen::VectorXd&) { return Eigen::MatrixXd::Zero(2, 2).eval(); });
  MultiLevelField fc = zero_net_strong(cprev, 0.1);
  fc.net1.biases[1][0] = 0.37;
  CHECK(residual(fc, uniform_velocity(0.3, -0.2), pts, ts).cwiseAbs().maxCoeff() < 1e-14);

  // random strong-scheme field: compare against finite differences of value()
  MultiLevelField f;
  f.scheme = Scheme::kStrong;
  f.spatial_dim = 2;
  f.dt = 0.1;
  f.net1 = nn::init_xavier({3, 10, 10, 1}, 77);
  f.prev = ls::make_sphere_probe(Eigen::Vector2d(0, 0), 0.25);
  auto u = uniform_velocity(0.4, 0.1);
  VectorXd R = residual(f, u, pts, ts);
  const double h = 1e-6;
  for (int i = 0; i < 50; i += 7) {
    const MatrixXd Xi = pts.row(i);
    VectorXd tp = VectorXd::Constant(1, ts[i] + h), tm = VectorXd::Constant(1, ts[i] - h);
    double r_fd = (f.value(Xi, tp)[0] - f.value(Xi, tm)[0]) / (2 * h);
    for (int j = 0; j < 2; ++j) {
      MatrixXd Xp = Xi, Xm = Xi;
      Xp(0, j) += h;
      Xm(0, j) -= h;
      VectorXd t0 = VectorXd::Constant(1, ts[i]);
      const double dF = (f.value(Xp, t0)[0] - f.value(Xm, t0)[0]) / (2 * h);
      r_fd += 0.1 * (j == 0 ? 0.4 : 0.1) * dF;
    }
    CHECK(R[i] == doctest::Approx(r_fd).epsilon(1e-6));
  }
}

TEST_CASE("multilevel refinement reduces the residual; composition is consistent") {
  MatrixXd pts = random_points(2000, -0.5, 0.5, 33);
  auto prev = ls::make_sphere_probe(Eigen::Vector2d(0, 0), 0.25);
  auto u = VelocityInterpolant::steady([](const MatrixXd& X) {
    MatrixXd U(X.rows(), 2);
    U.col(0) = -X.col(1);
    U.col(1) = X.col(0);
    return U;
  });
  auto colloc = sample_collocation(pts, 0.05, 14);
  AdvectOptions opts;
  opts.iters = 600;
  opts.lr = 1e-3;
  opts.seed = 4;
  auto f = advect_strong(prev, u, 0.1, colloc, opts);
  mark_near_interface(colloc, f);
  CHECK(!colloc.near_indices.empty());
  const double beta = estimate_beta(f, u, colloc);
  CHECK(beta > kBetaFloor);

  AdvectOptions o2 = opts;
  o2.seed = 5;
  refine_multilevel(f, u, colloc, beta, o2);
  REQUIRE(f.net2.has_value());
  CHECK(f.beta == beta);
  CHECK(f.report2.residual_loss.back() < f.report1.residual_loss.back());

  // step-7 composition: the handed-off probe equals F1 + beta F2 at t* = 1
  MatrixXd spots = random_points(100, -0.45, 0.45, 35);
  VectorXd direct = f.value(spots, VectorXd::Ones(100));
  ls::FieldJet hj;
  f.handoff()->eval(spots, 0, hj);
  CHECK((direct - hj.value).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("telescoping: the hand-off references only the latest networks") {
  MatrixXd pts = random_points(800, -0.5, 0.5, 41);
  auto prev = ls::make_sphere_probe(Eigen::Vector2d(0, 0), 0.25);
  auto u = uniform_velocity(0.2, 0.0);
  AdvectOptions opts;
  opts.iters = 120;
  opts.lr = 1e-3;

  auto c1 = sample_collocation(pts, 0.05, 1);
  opts.seed = 6;
  auto f1 = advect_strong(prev, u, 0.1, c1, opts);
  auto c2 = sample_collocation(pts, 0.05, 2);
  opts.seed = 7;
  auto f2 = advect_strong(f1.handoff(), u, 0.1, c2, opts);

  // F_2(x, t*) = N_2(x, t*) t* + N_1(x, 1) (1 - t*): evaluate both nets by hand
  nn::Mlp<double> n1 = nn::Mlp<double>::from(f1.net1);
  nn::Mlp<double> n2 = nn::Mlp<double>::from(f2.net1);
  MatrixXd spots = random_points(64, -0.4, 0.4, 43);
  VectorXd ts = VectorXd::LinSpaced(64, 0, 1);
  MatrixXd X1(64, 3), Xt(64, 3);
  X1.leftCols(2) = spots;
  X1.col(2).setOnes();
  Xt.leftCols(2) = spots;
  Xt.col(2) = ts;
  VectorXd expected =
      n2.value(Xt).array() * ts.array() + n1.value(X1).array() * (1.0 - ts.array());
  CHECK((f2.value(spots, ts) - expected).cwiseAbs().maxCoeff() < 1e-12);
}
