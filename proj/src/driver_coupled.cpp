#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "pflow/driver.hpp"
#include "pflow/fem2d.hpp"
#include "pflow/levelset.hpp"
#include "pflow/pinn_advect.hpp"
#include "pflow/reinit.hpp"

namespace pflow::driver {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed * 1000003ull + salt + 0x9e3779b97f4a7c15ull;
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  return x;
}

struct CoupledSetup {
  fem::TriMesh mesh;
  ls::FluidPair fluids;
  ls::PhaseMap alpha;
  fem::BCSet bcs;
  fem::FlowParams params;
  ls::ProbePtr f0;
  double we_inv = 0;
  bool p1_force = false;
};

CoupledSetup make_setup(const ScenarioConfig& cfg) {
  const bool bubble = cfg.scenario.rfind("rising-bubble", 0) == 0;
  int nx = cfg.nx, ny = cfg.ny;
  const double width = 1.0, height = bubble ? 2.0 : 1.0;
  if (nx <= 0 || ny <= 0) {
    nx = std::max(1, static_cast<int>(std::lround(width / cfg.h)));
    ny = std::max(1, static_cast<int>(std::lround(height / cfg.h)));
  }
  CoupledSetup s{fem::build_mesh_rect(width, height, nx, ny),
                 ls::FluidPair(cfg.rho_in, cfg.mu_in, cfg.rho_out, cfg.mu_out, cfg.gamma),
                 ls::PhaseMap::from_mesh_size(height / ny, cfg.alpha_elems),
                 bubble ? fem::BCSet::bubble_box() : fem::BCSet::no_slip_box(),
                 fem::FlowParams{},
                 nullptr};
  s.params.Re = cfg.Re;
  s.params.fr_inv2 = cfg.Fr > 0 ? 1.0 / (cfg.Fr * cfg.Fr) : 0.0;
  s.params.picard_max = cfg.picard_max;
  s.params.picard_tol = cfg.picard_tol;
  s.we_inv = cfg.We > 0 ? 1.0 / cfg.We : 0.0;
  s.p1_force = cfg.force_space == "p1";
  if (cfg.force_space != "p0" && cfg.force_space != "p1")
    throw std::invalid_argument("config: force_space must be p0 or p1");
  const double r0 = bubble ? 0.25 : 0.2;
  s.f0 = ls::make_sphere_probe(Eigen::Vector2d(0.5, 0.5), r0);
  return s;
}

pinn::AdvectOptions coupled_advect_options(const ScenarioConfig& cfg, int iters,
                                           std::uint64_t seed) {
  pinn::AdvectOptions o;
  o.iters = iters;
  o.lr = cfg.lr;
  o.seed = seed;
  o.precision = cfg.precision == "f32" ? pinn::Precision::kF32 : pinn::Precision::kF64;
  return o;
}

/// Laplace pretraining of the initial level set (data fit), single- or
/// multi-level depending on iters2.
ls::ProbePtr pretrain_initial_field(const ScenarioConfig& cfg, const CoupledSetup& setup,
                                    const MatrixXd& nodes) {
  ls::FieldJet fj;
  setup.f0->eval(nodes, 0, fj);

  const Eigen::Index M = nodes.rows();
  nn::AdamConfig adam;
  adam.lr = cfg.lr;

  const std::vector<int> dims1{2, 50, 50, 50, 50, 50, 1};
  nn::NetworkParams net1;
  {
    nn::ResidualBatch<double> bt;
    bt.X = nodes;
    bt.a = VectorXd::Zero(M);
    bt.b = VectorXd::Ones(M);
    bt.c = -fj.value;
    nn::ResidualTrainer<double> tr(nn::init_xavier(dims1, mix_seed(cfg.seed, 41)), {bt});
    tr.run(cfg.iters1, adam);
    net1 = tr.params();
  }
  if (cfg.iters2 <= 0) return std::make_shared<ls::MlpProbe>(net1, 2, /*has_time=*/false);

  // second network on the data residual near the interface, with grad F1
  // input features
  const nn::Mlp<double> m1 = nn::Mlp<double>::from(net1);
  VectorXd f1;
  MatrixXd g1;
  m1.value_and_grad(nodes, f1, g1);
  std::vector<Eigen::Index> near;
  for (Eigen::Index i = 0; i < M; ++i)
    if (std::abs(f1[i]) < cfg.near_eps) near.push_back(i);
  if (near.empty())
    for (Eigen::Index i = 0; i < M; ++i) near.push_back(i);

  const VectorXd resid = f1 - fj.value;
  double beta = pinn::kBetaFloor;
  for (Eigen::Index i : near) beta = std::max(beta, std::abs(resid[i]));

  MatrixXd Y(static_cast<Eigen::Index>(near.size()), 4);
  VectorXd c2(static_cast<Eigen::Index>(near.size()));
  for (std::size_t k = 0; k < near.size(); ++k) {
    const Eigen::Index i = near[k];
    Y.row(static_cast<Eigen::Index>(k)) << nodes(i, 0), nodes(i, 1), g1(i, 0), g1(i, 1);
    c2[static_cast<Eigen::Index>(k)] = resid[i];
  }
  nn::ResidualBatch<double> bt2;
  bt2.X = Y;
  bt2.a = VectorXd::Zero(Y.rows());
  bt2.b = VectorXd::Constant(Y.rows(), beta);
  bt2.c = c2;
  const std::vector<int> dims2{4, 50, 50, 50, 50, 50, 1};
  nn::ResidualTrainer<double> tr2(nn::init_xavier(dims2, mix_seed(cfg.seed, 43)), {bt2});
  tr2.run(cfg.iters2, adam);
  return std::make_shared<ls::MultiLevelProbe>(net1, tr2.params(), beta, 2, /*has_time=*/false);
}

RunResult run_laplace(const ScenarioConfig& cfg, const CoupledSetup& setup) {
  RunResult res;
  res.log.columns = {"step",          "time",          "spurious_norm",
                     "pressure_jump", "pressure_jump_exact", "degenerate_capillary_points",
                     "picard_iters"};

  ls::ProbePtr probe = setup.f0;
  if (cfg.iters1 > 0) probe = pretrain_initial_field(cfg, setup, setup.mesh.p2_coords());

  const auto phase = fem::sample_phase(setup.mesh, *probe, setup.fluids, setup.alpha);
  const auto cap =
      fem::sample_capillary(setup.mesh, *probe, setup.alpha, setup.we_inv, setup.p1_force);
  fem::FlowParams params = setup.params;
  params.dt = 0;  // static interface: steady balance
  fem::StepReport rep;
  fem::FlowState s = fem::step_navier_stokes(setup.mesh, fem::FlowState::zero(setup.mesh), phase,
                                             cap, params, setup.bcs, &rep);

  const double norm = fem::spurious_norm(setup.mesh, s);
  double p_in = 0, p_out = 0;
  int c_in = 0, c_out = 0;
  for (int v = 0; v < setup.mesh.n_vertices(); ++v) {
    const double r = (setup.mesh.vertices.row(v) - Eigen::RowVector2d(0.5, 0.5)).norm();
    if (r < 0.1) {
      p_in += s.p[v];
      ++c_in;
    } else if (r > 0.35) {
      p_out += s.p[v];
      ++c_out;
    }
  }
  const double jump = p_in / c_in - p_out / c_out;
  const double exact = setup.we_inv / 0.2;  // gamma kappa, nondimensional

  res.log.append({0.0, 0.0, norm, jump, exact, static_cast<double>(cap.degenerate_points),
                  static_cast<double>(rep.picard_iters)});
  res.summary["spurious_norm"] = norm;
  res.summary["pressure_jump"] = jump;
  res.summary["pressure_jump_rel_err"] = std::abs(jump - exact) / std::abs(exact);
  res.summary["degenerate_capillary_points"] = cap.degenerate_points;

  if (cfg.vtk_every > 0) {
    const MatrixXd coords = setup.mesh.p2_coords();
    ls::FieldJet fj;
    probe->eval(coords, 0, fj);
    MatrixXd U(coords.rows(), 2);
    for (int n = 0; n < setup.mesh.n_p2_nodes(); ++n) U.row(n) << s.u[2 * n], s.u[2 * n + 1];
    VectorXd pn = VectorXd::Zero(coords.rows());
    pn.head(setup.mesh.n_vertices()) = s.p;
    fem::write_vtk(cfg.out_dir + "/laplace.vtk", setup.mesh, {{"F", fj.value}, {"p", pn}},
                   {{"u", U}});
  }
  write_csv(res.log, cfg.out_dir + "/metrics.csv");
  return res;
}

double rise_velocity(const ls::FieldProbe& probe, const fem::TriMesh& mesh,
                     const fem::FlowState& state, const ls::QuadratureGrid& quad,
                     const ls::PhaseMap& alpha) {
  ls::FieldJet fj;
  probe.eval(quad.points, 0, fj);
  const MatrixXd U = fem::evaluate_velocity(mesh, state, quad.points);
  double num = 0, den = 0;
  for (Eigen::Index i = 0; i < quad.weights.size(); ++i) {
    const double w = quad.weights[i] * (1.0 - ls::heaviside(fj.value[i], alpha));
    num += w * U(i, 1);
    den += w;
  }
  if (den < 1e-10) throw std::runtime_error("rise_velocity: the bubble phase has vanished");
  return num / den;
}

void write_snapshot(const ScenarioConfig& cfg, const CoupledSetup& setup, int step,
                    const ls::FieldProbe& probe, const fem::FlowState& s) {
  const MatrixXd coords = setup.mesh.p2_coords();
  ls::FieldJet fj;
  probe.eval(coords, 2, fj);
  VectorXd kappa(coords.rows());
  for (Eigen::Index i = 0; i < coords.rows(); ++i)
    kappa[i] = ls::geometry_from_jet(fj, i, setup.alpha).curvature;
  MatrixXd U(coords.rows(), 2);
  for (int n = 0; n < setup.mesh.n_p2_nodes(); ++n) U.row(n) << s.u[2 * n], s.u[2 * n + 1];
  VectorXd pn = VectorXd::Zero(coords.rows());
  pn.head(setup.mesh.n_vertices()) = s.p;
  fem::write_vtk(cfg.out_dir + "/step_" + std::to_string(step) + ".vtk", setup.mesh,
                 {{"F", fj.value}, {"p", pn}, {"kappa", kappa}}, {{"u", U}});
}

RunResult run_bubble(const ScenarioConfig& cfg, const CoupledSetup& setup) {
  std::ofstream timing(cfg.out_dir + "/timing.log");
  const int n_steps = cfg.steps();
  const MatrixXd nodes = setup.mesh.p2_coords();
  const ls::QuadratureGrid quad = fem::quadrature_grid(setup.mesh);

  RunResult res;
  res.log.columns = {"step",  "time",  "mass",        "mass_loss_rel", "rise_velocity", "beta",
                     "loss1", "loss2", "reinit_loss", "picard_iters",  "linear_residual"};

  ls::ProbePtr prev = setup.f0;
  fem::FlowState state = fem::FlowState::zero(setup.mesh);
  const double mass0 = ls::phase_mass(*prev, quad, setup.alpha);

  nn::NetworkParams warm1, warm2, warm_r;
  bool have_warm1 = false, have_warm2 = false, have_warm_r = false;

  const bool do_reinit = cfg.reinit != "none";
  if (do_reinit && cfg.reinit != "pinn-r")
    throw std::invalid_argument(
        "run_coupled: the coupled solver reinitializes with pinn-r (the optimization-based "
        "methods are exercised by the reinit-test scenario)");

  for (int n = 1; n <= n_steps; ++n) {
    const double wall0 = now_seconds();
    const double t = n * cfg.dt;
    std::string phase_label = "capillary";
    try {
      // 1. capillary force and phase fields from F_{n-1}(., 1)
      const auto phase = fem::sample_phase(setup.mesh, *prev, setup.fluids, setup.alpha);
      const auto cap =
          fem::sample_capillary(setup.mesh, *prev, setup.alpha, setup.we_inv, setup.p1_force);

      // 2. velocity u_n by FEM
      phase_label = "fem";
      fem::FlowParams params = setup.params;
      params.dt = cfg.dt;
      fem::StepReport rep;
      fem::FlowState next =
          fem::step_navier_stokes(setup.mesh, state, phase, cap, params, setup.bcs, &rep);

      // 3. interpolated advection velocity over the interval
      phase_label = "advect";
      const VectorXd u_prev_dofs = state.u, u_next_dofs = next.u;
      const fem::TriMesh& mesh = setup.mesh;
      pinn::VelocityInterpolant ubar{[&mesh, u_prev_dofs](const MatrixXd& X) {
                                       fem::FlowState tmp;
                                       tmp.u = u_prev_dofs;
                                       return fem::evaluate_velocity(mesh, tmp, X);
                                     },
                                     [&mesh, u_next_dofs](const MatrixXd& X) {
                                       fem::FlowState tmp;
                                       tmp.u = u_next_dofs;
                                       return fem::evaluate_velocity(mesh, tmp, X);
                                     }};

      // 4. first level-set network
      auto colloc = pinn::sample_collocation(nodes, cfg.near_eps, mix_seed(cfg.seed, 500 + n));
      pinn::AdvectOptions o1 = coupled_advect_options(cfg, cfg.iters1, mix_seed(cfg.seed, 600 + n));
      if (cfg.warm_start && have_warm1) o1.warm_start = &warm1;
      pinn::MultiLevelField f = pinn::advect_strong(prev, ubar, cfg.dt, colloc, o1);

      // 5./6. residual scale and the refinement network
      double beta = 0;
      if (cfg.iters2 > 0) {
        pinn::mark_near_interface(colloc, f);
        beta = pinn::estimate_beta(f, ubar, colloc);
        pinn::AdvectOptions o2 =
            coupled_advect_options(cfg, cfg.iters2, mix_seed(cfg.seed, 700 + n));
        if (cfg.warm_start && have_warm2) o2.warm_start = &warm2;
        pinn::refine_multilevel(f, ubar, colloc, beta, o2);
      }

      // 7. compose the hand-off field; reinitialize on cadence
      ls::ProbePtr handoff = f.handoff();
      double reinit_loss = std::nan("");
      if (do_reinit && (n % cfg.cadence == 0)) {
        phase_label = "reinit";
        reinit::PinnRConfig rcfg;
        rcfg.budget = cfg.reinit_iters;
        rcfg.lr = 1e-3;
        rcfg.seed = mix_seed(cfg.seed, 800 + n);
        rcfg.use_f32 = cfg.precision == "f32";
        if (cfg.warm_start && have_warm_r) rcfg.warm_net = &warm_r;
        auto rr = reinit::reinit_pinnr(handoff, nodes, rcfg);
        handoff = rr.phi;
        reinit_loss = rr.loss_history.empty() ? std::nan("") : rr.loss_history.back();
        warm_r = rr.znet;
        have_warm_r = true;
      }

      phase_label = "metrics";
      const double mass = ls::phase_mass(*handoff, quad, setup.alpha);
      const double vrise = rise_velocity(*handoff, setup.mesh, next, quad, setup.alpha);
      res.log.append({static_cast<double>(n), t, mass, std::abs(mass - mass0) / mass0, vrise, beta,
                      f.report1.residual_loss.empty() ? 0.0 : f.report1.residual_loss.back(),
                      f.report2.residual_loss.empty() ? 0.0 : f.report2.residual_loss.back(),
                      reinit_loss, static_cast<double>(rep.picard_iters), rep.linear_residual});

      if (cfg.vtk_every > 0 && (n % cfg.vtk_every == 0 || n == n_steps)) {
        phase_label = "vtk";
        write_snapshot(cfg, setup, n, *handoff, next);
      }

      if (cfg.warm_start) {
        warm1 = f.net1;
        have_warm1 = true;
        if (f.net2) {
          warm2 = *f.net2;
          have_warm2 = true;
        }
      }
      if (n == n_steps) {
        std::ofstream ck(cfg.out_dir + "/final_interval.ckpt");
        ck << "pflow-interval 1\nscheme strong\nbeta " << f.beta << "\nnets " << (f.net2 ? 2 : 1)
           << "\n";
        nn::save_params(f.net1, ck);
        if (f.net2) nn::save_params(*f.net2, ck);
      }
      prev = handoff;
      state = next;
    } catch (const std::exception& e) {
      throw std::runtime_error("[" + cfg.scenario + " step " + std::to_string(n) + " " +
                               phase_label + "] " + e.what());
    }
    timing << "step " << n << " seconds " << now_seconds() - wall0 << "\n" << std::flush;
    write_csv(res.log, cfg.out_dir + "/metrics.csv");
  }

  const auto& last = res.log.rows.back();
  res.summary["mass_loss_rel"] = last[3];
  res.summary["rise_velocity_final"] = last[4];
  double vmax = 0;
  for (const auto& row : res.log.rows) vmax = std::max(vmax, row[4]);
  res.summary["rise_velocity_max"] = vmax;
  return res;
}

}  // namespace

RunResult run_coupled(const ScenarioConfig& cfg) {
  if (cfg.scenario != "laplace" && cfg.scenario.rfind("rising-bubble", 0) != 0)
    throw std::invalid_argument("run_coupled: scenario must be laplace or rising-bubble-*");
  std::filesystem::create_directories(cfg.out_dir);
  {
    std::ofstream echo(cfg.out_dir + "/config.echo.txt");
    echo_config(cfg, echo);
  }
  const CoupledSetup setup = make_setup(cfg);
  if (cfg.scenario == "laplace") return run_laplace(cfg, setup);
  return run_bubble(cfg, setup);
}

}  // namespace pflow::driver
