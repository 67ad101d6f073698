#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pflow/levelset.hpp"

namespace pflow::fem {

/// Conforming triangulation of a rectangle with P2 midpoint nodes. Velocity
/// dofs are interleaved per P2 node (2*node + component), pressure dofs sit
/// on the vertices.
struct TriMesh {
  Eigen::MatrixXd vertices;  // V x 2
  Eigen::MatrixXi tris;      // T x 3, counter-clockwise
  Eigen::MatrixXi edges;     // E x 2 (sorted vertex pairs)
  Eigen::MatrixXi tri_edges; // T x 3: edge id for (v0,v1), (v1,v2), (v2,v0)
  std::vector<int> edge_tag; // per edge: -1 interior, else boundary tag

  // structured-grid metadata for O(1) point location
  double width = 0, height = 0;
  int nx = 0, ny = 0;

  enum Tag { kLeft = 0, kRight = 1, kBottom = 2, kTop = 3 };

  int n_vertices() const { return static_cast<int>(vertices.rows()); }
  int n_tris() const { return static_cast<int>(tris.rows()); }
  int n_edges() const { return static_cast<int>(edges.rows()); }
  int n_p2_nodes() const { return n_vertices() + n_edges(); }
  int n_u_dofs() const { return 2 * n_p2_nodes(); }

  /// Coordinates of all P2 nodes (vertices then edge midpoints).
  Eigen::MatrixXd p2_coords() const;
  double area() const;
};

/// 2 nx ny right triangles over [0,width] x [0,height], boundary edges
/// tagged left/right/bottom/top.
TriMesh build_mesh_rect(double width, double height, int nx, int ny);

void save_mesh(const TriMesh& mesh, const std::string& path);
TriMesh load_mesh(const std::string& path);

struct BC {
  enum Kind { kNoSlip, kSlipX, kSlipY, kVelocity, kTraction };
  Kind kind = kNoSlip;
  Eigen::Vector2d value{0.0, 0.0};
};

/// Per-boundary-tag conditions. kSlipX constrains u_x only (free-slip wall
/// with x normal); kTraction leaves the boundary natural.
struct BCSet {
  std::map<int, BC> by_tag;

  static BCSet no_slip_box();
  static BCSet bubble_box();  // no-slip bottom/top, free-slip vertical walls
};

struct FlowState {
  Eigen::VectorXd u;  // 2 * n_p2_nodes, interleaved
  Eigen::VectorXd p;  // n_vertices
  double time = 0;

  static FlowState zero(const TriMesh& mesh);
};

/// Capillary force sampled from the level-set probe once per step, then
/// interpolated in the chosen space while assembling.
struct CapillaryForce {
  bool p1 = false;
  Eigen::MatrixXd element_force;  // T x 2 when P0
  Eigen::MatrixXd vertex_force;   // V x 2 when P1
  int degenerate_points = 0;      // quadrature/nodal points with |grad F| <= g_min
};

CapillaryForce sample_capillary(const TriMesh& mesh, const ls::FieldProbe& probe,
                                const ls::PhaseMap& pm, double we_inv, bool p1_space);

/// rho(F), mu(F) at every quadrature point of every element.
struct PhaseFields {
  Eigen::MatrixXd rho;  // T x nq
  Eigen::MatrixXd mu;   // T x nq
};

PhaseFields sample_phase(const TriMesh& mesh, const ls::FieldProbe& probe,
                         const ls::FluidPair& fluids, const ls::PhaseMap& pm);
PhaseFields uniform_phase(const TriMesh& mesh, double rho, double mu);

struct FlowParams {
  double Re = 1.0;
  double fr_inv2 = 0.0;  // 1/Fr^2; 0 disables gravity
  double dt = 0.0;       // 0 => steady (no time term)
  bool convection = true;
  int picard_max = 25;
  double picard_tol = 1e-8;
  // extra volumetric force (manufactured-solution forcing)
  std::function<Eigen::Vector2d(double, double)> body_force;
};

struct SaddleSystem {
  Eigen::SparseMatrix<double> K;
  Eigen::VectorXd rhs;
  int n_u = 0, n_p = 0;
  bool mean_pressure_gauge = false;
  std::vector<bool> dirichlet;  // over u dofs
};

/// One Picard-linearized implicit-Euler (or steady) Taylor-Hood system:
///   (rho/dt)(u,v) + rho((a.grad)u, v) + (mu/Re)(grad u, grad v)
///   - (p, div v) - (q, div u) = (rho/dt)(u_prev, v) + (f_cap, v)
///   - (fr_inv2 rho e_y, v)
/// `advect` is the Picard iterate a.
SaddleSystem assemble(const TriMesh& mesh, const FlowState& state_prev,
                      const Eigen::VectorXd& advect, const PhaseFields& phase,
                      const CapillaryForce& cap, const FlowParams& params, const BCSet& bcs);

struct SolveReport {
  double residual = 0;  // relative linear-system residual
};

FlowState solve_saddle(const TriMesh& mesh, const SaddleSystem& sys, SolveReport* report = nullptr);

struct StepReport {
  int picard_iters = 0;
  bool converged = false;
  double last_increment = 0;
  double linear_residual = 0;
};

/// Picard fixed-point on the convective field until the relative increment
/// drops below params.picard_tol.
FlowState step_navier_stokes(const TriMesh& mesh, const FlowState& state_prev,
                             const PhaseFields& phase, const CapillaryForce& cap,
                             const FlowParams& params, const BCSet& bcs,
                             StepReport* report = nullptr);

/// P2 interpolation at arbitrary points (points outside are clamped to the
/// box; the clamp count is reported through `clamped` when given).
Eigen::MatrixXd evaluate_velocity(const TriMesh& mesh, const FlowState& state,
                                  const Eigen::MatrixXd& points, int* clamped = nullptr);

/// sqrt(integral of |u|^2): the spurious-current norm on Laplace scenarios.
double spurious_norm(const TriMesh& mesh, const FlowState& state);

double velocity_l2_error(const TriMesh& mesh, const FlowState& state,
                         const std::function<Eigen::Vector2d(double, double)>& exact);
double pressure_l2_error(const TriMesh& mesh, const FlowState& state,
                         const std::function<double(double, double)>& exact,
                         bool match_means = true);

/// |(q_h, div u_h)| for every pressure test function (constraint residual).
double max_divergence_residual(const TriMesh& mesh, const FlowState& state);

/// Quadrature grid over the mesh for domain integrals of probe fields.
ls::QuadratureGrid quadrature_grid(const TriMesh& mesh);

/// Legacy ASCII VTK export with quadratic triangles. Scalars are defined on
/// P2 nodes; vectors are 2-component velocity-like fields.
void write_vtk(const std::string& path, const TriMesh& mesh,
               const std::map<std::string, Eigen::VectorXd>& scalars,
               const std::map<std::string, Eigen::MatrixXd>& vectors);

}  // namespace pflow::fem
