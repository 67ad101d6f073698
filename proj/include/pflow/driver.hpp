#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace pflow::driver {

/// Flat key-value scenario configuration. Values are nondimensional; the
/// config echo written next to results carries the units note.
struct ScenarioConfig {
  std::string scenario = "cylinder-stretch";

  // mesh / domain
  double h = 1.0 / 32;
  int nx = 0, ny = 0;  // override h when both > 0

  // time stepping
  double dt = 0.1;
  double t_end = 1.0;

  // training budgets
  int iters1 = 4000;
  int iters2 = 0;  // > 0 enables the multi-level refinement
  double lr = 1e-4;
  std::uint64_t seed = 0;
  std::string scheme = "strong";  // weak | strong | fd
  std::string precision = "f64";  // f32 | f64
  int n_colloc = 70000;           // collocation count for mesh-free scenarios
  int n_markers = 2000;
  double near_eps = 0.05;
  bool warm_start = false;  // reuse the previous interval's networks

  // reinitialization
  std::string reinit = "none";  // none | penalty | unconstrained | pinn-r
  int cadence = 1;
  int reinit_iters = 300;
  double lambda_penalty = 100.0;
  int foot_budget = 2000;

  // flow
  std::string force_space = "p0";  // p0 | p1
  double alpha_elems = 2.0;        // smoothed-Heaviside transition width, in elements
  double rho_in = 1, mu_in = 1, rho_out = 1, mu_out = 1, gamma = 0;
  double Re = 1;
  double We = 0;  // 0 = no capillary force
  double Fr = 0;  // 0 = no gravity
  int picard_max = 25;
  double picard_tol = 1e-8;

  // output
  std::string out_dir = "out";
  int vtk_every = 0;  // snapshot every N steps; 0 disables

  int steps() const { return static_cast<int>(std::llround(t_end / dt)); }
};

ScenarioConfig load_config(const std::string& path);
ScenarioConfig parse_config(std::istream& is);
/// Applies one "key=value" override; throws on unknown keys.
void apply_override(ScenarioConfig& cfg, const std::string& key, const std::string& value);
/// Reproducibility echo: every key, plus the units section.
void echo_config(const ScenarioConfig& cfg, std::ostream& os);

/// Append-only per-step records with a fixed, documented column order.
struct MetricsLog {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void append(const std::vector<double>& row);
};

void write_csv(const MetricsLog& log, const std::string& path);

struct RunResult {
  MetricsLog log;
  std::map<std::string, double> summary;
};

/// Manufactured 3D advection test: stretching flow in a cylinder (no FEM).
RunResult run_advection_only(const ScenarioConfig& cfg);
/// Reinitialization comparison on the manufactured 2D field.
RunResult run_reinit_test(const ScenarioConfig& cfg);
/// Coupled FEM/PINN loop: laplace and rising-bubble scenarios.
RunResult run_coupled(const ScenarioConfig& cfg);

/// Dispatch on cfg.scenario.
RunResult run_scenario(const ScenarioConfig& cfg);

/// Lagrangian tracers on the initial interface of the cylinder test, with
/// the exact trajectory map of the manufactured velocity field.
struct MarkerCloud {
  Eigen::MatrixXd initial;  // n x 3, on the F0 = 0 sphere

  Eigen::MatrixXd at_time(double t) const;
  static MarkerCloud fibonacci_sphere(const Eigen::Vector3d& center, double radius, int n);
};

}  // namespace pflow::driver
