#include "pflow/driver.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>

#include "pflow/levelset.hpp"
#include "pflow/pinn_advect.hpp"
#include "pflow/reinit.hpp"

namespace pflow::driver {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double to_double(const std::string& v, const std::string& key) {
  try {
    return std::stod(v);
  } catch (...) {
    throw std::invalid_argument("config: bad numeric value for " + key + ": " + v);
  }
}

long to_long(const std::string& v, const std::string& key) {
  try {
    return std::stol(v);
  } catch (...) {
    throw std::invalid_argument("config: bad integer value for " + key + ": " + v);
  }
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config: bad boolean value for " + key + ": " + v);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed * 1000003ull + salt + 0x9e3779b97f4a7c15ull;
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  return x;
}

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

}  // namespace

void apply_override(ScenarioConfig& c, const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "scenario") c.scenario = v;
  else if (key == "h") c.h = to_double(v, key);
  else if (key == "nx") c.nx = static_cast<int>(to_long(v, key));
  else if (key == "ny") c.ny = static_cast<int>(to_long(v, key));
  else if (key == "dt") c.dt = to_double(v, key);
  else if (key == "t_end") c.t_end = to_double(v, key);
  else if (key == "iters1") c.iters1 = static_cast<int>(to_long(v, key));
  else if (key == "iters2") c.iters2 = static_cast<int>(to_long(v, key));
  else if (key == "lr") c.lr = to_double(v, key);
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_long(v, key));
  else if (key == "scheme") c.scheme = v;
  else if (key == "precision") c.precision = v;
  else if (key == "n_colloc") c.n_colloc = static_cast<int>(to_long(v, key));
  else if (key == "n_markers") c.n_markers = static_cast<int>(to_long(v, key));
  else if (key == "near_eps") c.near_eps = to_double(v, key);
  else if (key == "warm_start") c.warm_start = to_bool(v, key);
  else if (key == "reinit") c.reinit = v;
  else if (key == "cadence") c.cadence = static_cast<int>(to_long(v, key));
  else if (key == "reinit_iters") c.reinit_iters = static_cast<int>(to_long(v, key));
  else if (key == "lambda_penalty") c.lambda_penalty = to_double(v, key);
  else if (key == "foot_budget") c.foot_budget = static_cast<int>(to_long(v, key));
  else if (key == "force_space") c.force_space = v;
  else if (key == "alpha_elems") c.alpha_elems = to_double(v, key);
  else if (key == "rho_in") c.rho_in = to_double(v, key);
  else if (key == "mu_in") c.mu_in = to_double(v, key);
  else if (key == "rho_out") c.rho_out = to_double(v, key);
  else if (key == "mu_out") c.mu_out = to_double(v, key);
  else if (key == "gamma") c.gamma = to_double(v, key);
  else if (key == "Re") c.Re = to_double(v, key);
  else if (key == "We") c.We = to_double(v, key);
  else if (key == "Fr") c.Fr = to_double(v, key);
  else if (key == "picard_max") c.picard_max = static_cast<int>(to_long(v, key));
  else if (key == "picard_tol") c.picard_tol = to_double(v, key);
  else if (key == "out_dir") c.out_dir = v;
  else if (key == "vtk_every") c.vtk_every = static_cast<int>(to_long(v, key));
  else throw std::invalid_argument("config: unknown key: " + key);
}

ScenarioConfig parse_config(std::istream& is) {
  ScenarioConfig c;
  std::string line;
  while (std::getline(is, line)) {
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#' || s[0] == '[') continue;  // sections are cosmetic
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected key = value, got: " + s);
    apply_override(c, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  return c;
}

ScenarioConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  return parse_config(is);
}

void echo_config(const ScenarioConfig& c, std::ostream& os) {
  os << "# pflow scenario configuration (reproducibility echo)\n";
  os << "# [units]\n";
  os << "# all quantities are nondimensional: lengths by L_hat, velocities by u_hat,\n";
  os << "# time by L_hat/u_hat, density/viscosity by the characteristic fluid,\n";
  os << "# pressure by rho_hat*u_hat^2. Re, We, Fr carry the physical scales.\n";
  os << std::setprecision(17);
  os << "scenario = " << c.scenario << "\n";
  os << "h = " << c.h << "\n";
  os << "nx = " << c.nx << "\n";
  os << "ny = " << c.ny << "\n";
  os << "dt = " << c.dt << "\n";
  os << "t_end = " << c.t_end << "\n";
  os << "iters1 = " << c.iters1 << "\n";
  os << "iters2 = " << c.iters2 << "\n";
  os << "lr = " << c.lr << "\n";
  os << "seed = " << c.seed << "\n";
  os << "scheme = " << c.scheme << "\n";
  os << "precision = " << c.precision << "\n";
  os << "n_colloc = " << c.n_colloc << "\n";
  os << "n_markers = " << c.n_markers << "\n";
  os << "near_eps = " << c.near_eps << "\n";
  os << "warm_start = " << (c.warm_start ? "true" : "false") << "\n";
  os << "reinit = " << c.reinit << "\n";
  os << "cadence = " << c.cadence << "\n";
  os << "reinit_iters = " << c.reinit_iters << "\n";
  os << "lambda_penalty = " << c.lambda_penalty << "\n";
  os << "foot_budget = " << c.foot_budget << "\n";
  os << "force_space = " << c.force_space << "\n";
  os << "alpha_elems = " << c.alpha_elems << "\n";
  os << "rho_in = " << c.rho_in << "\n";
  os << "mu_in = " << c.mu_in << "\n";
  os << "rho_out = " << c.rho_out << "\n";
  os << "mu_out = " << c.mu_out << "\n";
  os << "gamma = " << c.gamma << "\n";
  os << "Re = " << c.Re << "\n";
  os << "We = " << c.We << "\n";
  os << "Fr = " << c.Fr << "\n";
  os << "picard_max = " << c.picard_max << "\n";
  os << "picard_tol = " << c.picard_tol << "\n";
  os << "out_dir = " << c.out_dir << "\n";
  os << "vtk_every = " << c.vtk_every << "\n";
}

void MetricsLog::append(const std::vector<double>& row) {
  if (row.size() != columns.size())
    throw std::invalid_argument("MetricsLog: row width does not match the column schema");
  rows.push_back(row);
}

void write_csv(const MetricsLog& log, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_csv: cannot open " + path);
  for (std::size_t i = 0; i < log.columns.size(); ++i)
    os << log.columns[i] << (i + 1 < log.columns.size() ? "," : "\n");
  os << std::setprecision(17);
  for (const auto& row : log.rows)
    for (std::size_t i = 0; i < row.size(); ++i)
      os << row[i] << (i + 1 < row.size() ? "," : "\n");
  if (!os) throw std::runtime_error("write_csv: write failed for " + path);
}

MatrixXd MarkerCloud::at_time(double t) const {
  MatrixXd out(initial.rows(), 3);
  out.col(0) = initial.col(0) * std::exp(-0.5 * t);
  out.col(1) = initial.col(1) * std::exp(-0.5 * t);
  out.col(2) = initial.col(2) * std::exp(t);
  return out;
}

MarkerCloud MarkerCloud::fibonacci_sphere(const Eigen::Vector3d& center, double radius, int n) {
  MarkerCloud m;
  m.initial.resize(n, 3);
  const double ga = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double th = ga * i;
    m.initial.row(i) = center.transpose() +
                       radius * Eigen::RowVector3d(r * std::cos(th), r * std::sin(th), z);
  }
  return m;
}

namespace {

pinn::AdvectOptions advect_options(const ScenarioConfig& cfg, int iters, std::uint64_t seed) {
  pinn::AdvectOptions o;
  o.iters = iters;
  o.lr = cfg.lr;
  o.seed = seed;
  if (cfg.precision == "f32") o.precision = pinn::Precision::kF32;
  else if (cfg.precision == "f64") o.precision = pinn::Precision::kF64;
  else throw std::invalid_argument("config: precision must be f32 or f64");
  return o;
}

MatrixXd cylinder_points(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  MatrixXd pts(n, 3);
  for (int i = 0; i < n; ++i) {
    const double r = std::sqrt(uni(rng));
    const double th = 2.0 * M_PI * uni(rng);
    pts(i, 0) = r * std::cos(th);
    pts(i, 1) = r * std::sin(th);
    pts(i, 2) = uni(rng);
  }
  return pts;
}

void ensure_out_dir(const ScenarioConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream echo(cfg.out_dir + "/config.echo.txt");
  echo_config(cfg, echo);
}

void write_interval_checkpoint(const std::string& path, const pinn::MultiLevelField& f) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  os << "pflow-interval 1\n";
  os << "scheme "
     << (f.scheme == pinn::Scheme::kStrong ? "strong"
                                           : (f.scheme == pinn::Scheme::kWeak ? "weak" : "fd"))
     << "\n";
  os << std::setprecision(17) << "beta " << f.beta << "\n";
  os << "nets " << (f.net2 ? 2 : 1) << "\n";
  nn::save_params(f.net1, os);
  if (f.net2) nn::save_params(*f.net2, os);
}

}  // namespace

RunResult run_advection_only(const ScenarioConfig& cfg) {
  if (cfg.scenario != "cylinder-stretch")
    throw std::invalid_argument("run_advection_only: scenario must be cylinder-stretch");
  ensure_out_dir(cfg);
  std::ofstream timing(cfg.out_dir + "/timing.log");

  const int n_steps = cfg.steps();
  const Eigen::Vector3d center(0.0, 0.0, 0.5);
  auto markers = MarkerCloud::fibonacci_sphere(center, 0.25, cfg.n_markers);

  auto velocity = pinn::VelocityInterpolant::steady([](const MatrixXd& X) {
    MatrixXd U(X.rows(), 3);
    U.col(0) = -0.5 * X.col(0);
    U.col(1) = -0.5 * X.col(1);
    U.col(2) = X.col(2);
    return U;
  });

  const MatrixXd points = cylinder_points(cfg.n_colloc, mix_seed(cfg.seed, 1));
  ls::ProbePtr prev = ls::make_sphere_probe(center, 0.25);

  RunResult res;
  res.log.columns = {"step", "time", "E", "beta", "loss_residual", "loss_ic", "loss_refine"};

  nn::NetworkParams warm1, warm2;
  bool have_warm1 = false, have_warm2 = false;

  for (int n = 1; n <= n_steps; ++n) {
    const double t0 = now_seconds();
    const double t = n * cfg.dt;
    auto colloc = pinn::sample_collocation(points, cfg.near_eps, mix_seed(cfg.seed, 100 + n));

    pinn::AdvectOptions o1 = advect_options(cfg, cfg.iters1, mix_seed(cfg.seed, 200 + n));
    if (cfg.warm_start && have_warm1) o1.warm_start = &warm1;

    pinn::MultiLevelField f;
    try {
      if (cfg.scheme == "strong") f = pinn::advect_strong(prev, velocity, cfg.dt, colloc, o1);
      else if (cfg.scheme == "weak") f = pinn::advect_weak(prev, velocity, cfg.dt, colloc, o1);
      else if (cfg.scheme == "fd") f = pinn::advect_fd(prev, velocity, cfg.dt, colloc, o1);
      else throw std::invalid_argument("config: scheme must be weak, strong or fd");

      if (cfg.iters2 > 0) {
        pinn::mark_near_interface(colloc, f);
        const double beta = pinn::estimate_beta(f, velocity, colloc);
        pinn::AdvectOptions o2 = advect_options(cfg, cfg.iters2, mix_seed(cfg.seed, 300 + n));
        if (cfg.warm_start && have_warm2) o2.warm_start = &warm2;
        pinn::refine_multilevel(f, velocity, colloc, beta, o2);
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("[advect step " + std::to_string(n) + "] " + e.what());
    }

    ls::ProbePtr handoff = f.handoff();
    const double E = ls::interface_error(*handoff, markers.at_time(t));
    res.log.append({static_cast<double>(n), t, E, f.beta,
                    f.report1.residual_loss.empty() ? 0.0 : f.report1.residual_loss.back(),
                    f.report1.ic_loss.empty() ? 0.0 : f.report1.ic_loss.back(),
                    f.report2.residual_loss.empty() ? 0.0 : f.report2.residual_loss.back()});
    timing << "step " << n << " seconds " << now_seconds() - t0 << "\n" << std::flush;

    write_interval_checkpoint(cfg.out_dir + "/interval_" + std::to_string(n) + ".ckpt", f);
    write_csv(res.log, cfg.out_dir + "/metrics.csv");  // progress is monitorable
    if (cfg.warm_start) {
      warm1 = f.net1;
      have_warm1 = true;
      if (f.net2) {
        warm2 = *f.net2;
        have_warm2 = true;
      }
    }
    prev = handoff;
  }

  res.summary["E_final"] = res.log.rows.back()[2];
  return res;
}

namespace {

// Manufactured reinitialization field F = (x+1)^2 sgn(r - R) |r - R|^(3/2),
// r measured from (0.5, 0.5). The exact reinitialized solution is r - R.
ls::ProbePtr make_reinit_test_probe() {
  const Eigen::Vector2d c(0.5, 0.5);
  const double R = 0.25;
  auto val = [c, R](const VectorXd& x) {
    const double r = (x - c).norm();
    const double rho = r - R;
    const double a = (x[0] + 1.0) * (x[0] + 1.0);
    return a * (rho >= 0 ? 1.0 : -1.0) * std::pow(std::abs(rho), 1.5);
  };
  auto grad = [c, R](const VectorXd& x) {
    const double r = std::max((x - c).norm(), 1e-300);
    const double rho = r - R;
    const double sgn = rho >= 0 ? 1.0 : -1.0;
    const double a = (x[0] + 1.0) * (x[0] + 1.0);
    const VectorXd dr = (x - c) / r;
    VectorXd da(2);
    da << 2.0 * (x[0] + 1.0), 0.0;
    const double s = sgn * std::pow(std::abs(rho), 1.5);
    const double sp = 1.5 * std::sqrt(std::abs(rho));
    return VectorXd(s * da + a * sp * dr);
  };
  auto hess = [c, R](const VectorXd& x) {
    const double r = std::max((x - c).norm(), 1e-300);
    const double rho = r - R;
    const double sgn = rho >= 0 ? 1.0 : -1.0;
    const double a = (x[0] + 1.0) * (x[0] + 1.0);
    const VectorXd dr = (x - c) / r;
    VectorXd da(2);
    da << 2.0 * (x[0] + 1.0), 0.0;
    Eigen::Matrix2d Ha = Eigen::Matrix2d::Zero();
    Ha(0, 0) = 2.0;
    const double s = sgn * std::pow(std::abs(rho), 1.5);
    const double sp = 1.5 * std::sqrt(std::abs(rho));
    const double spp = 0.75 * sgn / std::sqrt(std::max(std::abs(rho), 1e-300));
    const Eigen::Matrix2d Hr = (Eigen::Matrix2d::Identity() - dr * dr.transpose()) / r;
    Eigen::Matrix2d H = s * Ha + sp * (da * dr.transpose() + dr * da.transpose()) +
                        a * (spp * dr * dr.transpose() + sp * Hr);
    return Eigen::MatrixXd(H);
  };
  return std::make_shared<ls::AnalyticProbe>(2, val, grad, hess);
}

// 2D curvature from centered finite differences of a black-box phi.
double curvature_fd(const std::function<double(const Eigen::Vector2d&)>& phi,
                    const Eigen::Vector2d& x, double h) {
  auto p = [&](double dx, double dy) { return phi(x + Eigen::Vector2d(dx, dy)); };
  const double f0 = p(0, 0);
  const double fx = (p(h, 0) - p(-h, 0)) / (2 * h);
  const double fy = (p(0, h) - p(0, -h)) / (2 * h);
  const double fxx = (p(h, 0) - 2 * f0 + p(-h, 0)) / (h * h);
  const double fyy = (p(0, h) - 2 * f0 + p(0, -h)) / (h * h);
  const double fxy = (p(h, h) - p(h, -h) - p(-h, h) + p(-h, -h)) / (4 * h * h);
  const double g2 = fx * fx + fy * fy;
  return (fxx * fy * fy - 2 * fx * fy * fxy + fyy * fx * fx) / std::pow(g2, 1.5);
}

Eigen::MatrixXd square_lattice(double spacing) {
  const int n = static_cast<int>(std::lround(1.0 / spacing)) + 1;
  Eigen::MatrixXd pts(n * n, 2);
  int k = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) pts.row(k++) << i * spacing, j * spacing;
  return pts;
}

Eigen::MatrixXd circle_points(const Eigen::Vector2d& c, double radius, int n) {
  Eigen::MatrixXd pts(n, 2);
  for (int i = 0; i < n; ++i) {
    const double th = 2.0 * M_PI * i / n;
    pts.row(i) = c.transpose() + radius * Eigen::RowVector2d(std::cos(th), std::sin(th));
  }
  return pts;
}

}  // namespace

RunResult run_reinit_test(const ScenarioConfig& cfg) {
  if (cfg.scenario != "reinit-test")
    throw std::invalid_argument("run_reinit_test: scenario must be reinit-test");
  ensure_out_dir(cfg);
  const Eigen::Vector2d center(0.5, 0.5);
  const double R = 0.25;
  ls::ProbePtr F = make_reinit_test_probe();

  const Eigen::MatrixXd queries = circle_points(center, 0.5, cfg.n_markers);
  const VectorXd exact_phi = VectorXd::Constant(queries.rows(), 0.25);

  reinit::FootOptions fopts;
  fopts.budget = cfg.foot_budget;

  RunResult res;
  res.log.columns = {"method", "contour_err_max", "curvature_err_max", "eikonal_mean",
                     "zero_displacement"};

  // penalty
  auto pen = reinit::reinit_penalty(*F, queries, cfg.lambda_penalty, fopts);
  const double pen_err = (pen.phi - exact_phi).cwiseAbs().maxCoeff();
  res.log.append({0.0, pen_err, std::nan(""), std::nan(""), std::nan("")});

  // unconstrained, with a curvature scan by finite differences of phi
  auto unc = reinit::reinit_unconstrained(*F, queries, fopts);
  const double unc_err = (unc.phi - exact_phi).cwiseAbs().maxCoeff();
  const Eigen::MatrixXd curv_pts = circle_points(center, R, 72);
  Eigen::MatrixXd warm;
  auto phi_unc = [&](const Eigen::Vector2d& x) {
    Eigen::MatrixXd q(1, 2);
    q.row(0) = x;
    reinit::FootOptions o = fopts;
    auto r = reinit::reinit_unconstrained(*F, q, o);
    return r.phi[0];
  };
  double unc_curv = 0;
  for (Eigen::Index i = 0; i < curv_pts.rows(); ++i) {
    const double k = curvature_fd(phi_unc, curv_pts.row(i), 1e-4);
    unc_curv = std::max(unc_curv, std::abs(k - 1.0 / R));
  }
  res.log.append({1.0, unc_err, unc_curv, std::nan(""), std::nan("")});

  // PINN-R on the node lattice (vertex + midpoint spacing)
  reinit::PinnRConfig rcfg;
  rcfg.budget = cfg.reinit_iters;
  rcfg.lr = cfg.lr;
  rcfg.seed = mix_seed(cfg.seed, 77);
  rcfg.use_f32 = cfg.precision == "f32";
  const Eigen::MatrixXd lattice = square_lattice(cfg.h / 2.0);
  auto rr = reinit::reinit_pinnr(F, lattice, rcfg);

  ls::FieldJet qj;
  rr.phi->eval(queries, 0, qj);
  const double pr_err = (qj.value - exact_phi).cwiseAbs().maxCoeff();

  ls::FieldJet zj;
  rr.phi->eval(circle_points(center, R, 500), 0, zj);
  const double zero_disp = zj.value.cwiseAbs().maxCoeff();

  const double eik = reinit::eikonal_residual_mean(*rr.phi, lattice, center, ls::kGradFloor);

  ls::PhaseMap pm(200.0);
  double pr_curv = 0;
  for (Eigen::Index i = 0; i < curv_pts.rows(); ++i) {
    auto g = ls::geometry(*rr.phi, curv_pts.row(i), pm);
    pr_curv = std::max(pr_curv, std::abs(g.curvature - 1.0 / R));
  }
  res.log.append({2.0, pr_err, pr_curv, eik, zero_disp});

  res.summary["penalty_contour_err"] = pen_err;
  res.summary["unconstrained_contour_err"] = unc_err;
  res.summary["pinnr_contour_err"] = pr_err;
  res.summary["pinnr_zero_displacement"] = zero_disp;
  res.summary["pinnr_eikonal_mean"] = eik;
  res.summary["unconstrained_curvature_err"] = unc_curv;
  res.summary["pinnr_curvature_err"] = pr_curv;
  res.summary["penalty_foot_violation"] =
      pen.f_at_foot.size() ? pen.f_at_foot.maxCoeff() : std::nan("");
  res.summary["unconstrained_foot_violation"] =
      unc.f_at_foot.size() ? unc.f_at_foot.maxCoeff() : std::nan("");

  write_csv(res.log, cfg.out_dir + "/metrics.csv");
  return res;
}

RunResult run_scenario(const ScenarioConfig& cfg) {
  if (cfg.scenario == "cylinder-stretch") return run_advection_only(cfg);
  if (cfg.scenario == "reinit-test") return run_reinit_test(cfg);
  if (cfg.scenario == "laplace" || cfg.scenario == "rising-bubble-1" ||
      cfg.scenario == "rising-bubble-2")
    return run_coupled(cfg);
  throw std::invalid_argument("unknown scenario: " + cfg.scenario);
}

}  // namespace pflow::driver

namespace pflow::driver {

// run_coupled lives in driver_coupled.cpp (FEM-dependent scenarios).

}  // namespace pflow::driver
