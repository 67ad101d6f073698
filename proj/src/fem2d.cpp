#include "pflow/fem2d.hpp"

#include <Eigen/SparseLU>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <stdexcept>

namespace pflow::fem {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// 6-point degree-4 rule; barycentric coordinates, weights sum to 1.
struct QuadRule {
  static constexpr int nq = 6;
  double bary[6][3];
  double w[6];

  QuadRule() {
    const double a1 = 0.445948490915965, w1 = 0.223381589678011;
    const double a2 = 0.091576213509771, w2 = 0.109951743655322;
    int k = 0;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) bary[k][j] = a1;
      bary[k][i] = 1.0 - 2.0 * a1;
      w[k++] = w1;
    }
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) bary[k][j] = a2;
      bary[k][i] = 1.0 - 2.0 * a2;
      w[k++] = w2;
    }
  }
};

const QuadRule& quad_rule() {
  static const QuadRule rule;
  return rule;
}

// P2 shapes and reference gradients at barycentric l with
// grad l0 = (-1,-1), grad l1 = (1,0), grad l2 = (0,1).
void p2_shapes(const double l[3], double N[6], double dN[6][2]) {
  static const double dl[3][2] = {{-1, -1}, {1, 0}, {0, 1}};
  for (int i = 0; i < 3; ++i) {
    N[i] = l[i] * (2 * l[i] - 1);
    dN[i][0] = (4 * l[i] - 1) * dl[i][0];
    dN[i][1] = (4 * l[i] - 1) * dl[i][1];
  }
  const int ea[3] = {0, 1, 2}, eb[3] = {1, 2, 0};
  for (int e = 0; e < 3; ++e) {
    const int i = ea[e], j = eb[e];
    N[3 + e] = 4 * l[i] * l[j];
    dN[3 + e][0] = 4 * (l[i] * dl[j][0] + l[j] * dl[i][0]);
    dN[3 + e][1] = 4 * (l[i] * dl[j][1] + l[j] * dl[i][1]);
  }
}

struct ElementGeom {
  int nodes[6];    // P2 node ids
  int verts[3];    // vertex ids (pressure dofs)
  double area;
  Eigen::Matrix2d inv_jt;  // maps reference grads to physical
};

ElementGeom element_geom(const TriMesh& mesh, int t) {
  ElementGeom g;
  for (int k = 0; k < 3; ++k) {
    g.verts[k] = mesh.tris(t, k);
    g.nodes[k] = mesh.tris(t, k);
    g.nodes[3 + k] = mesh.n_vertices() + mesh.tri_edges(t, k);
  }
  const Eigen::Vector2d v0 = mesh.vertices.row(g.verts[0]);
  const Eigen::Vector2d v1 = mesh.vertices.row(g.verts[1]);
  const Eigen::Vector2d v2 = mesh.vertices.row(g.verts[2]);
  Eigen::Matrix2d J;
  J.col(0) = v1 - v0;
  J.col(1) = v2 - v0;
  const double det = J.determinant();
  if (det <= 0) throw std::runtime_error("element_geom: non-positive orientation");
  g.area = 0.5 * det;
  g.inv_jt = J.inverse().transpose();
  return g;
}

Eigen::Vector2d qpoint_coords(const TriMesh& mesh, const ElementGeom& g, const double l[3]) {
  return l[0] * mesh.vertices.row(g.verts[0]).transpose() +
         l[1] * mesh.vertices.row(g.verts[1]).transpose() +
         l[2] * mesh.vertices.row(g.verts[2]).transpose();
}

}  // namespace

MatrixXd TriMesh::p2_coords() const {
  MatrixXd c(n_p2_nodes(), 2);
  c.topRows(n_vertices()) = vertices;
  for (int e = 0; e < n_edges(); ++e)
    c.row(n_vertices() + e) = 0.5 * (vertices.row(edges(e, 0)) + vertices.row(edges(e, 1)));
  return c;
}

double TriMesh::area() const {
  double a = 0;
  for (int t = 0; t < n_tris(); ++t) a += element_geom(*this, t).area;
  return a;
}

TriMesh build_mesh_rect(double width, double height, int nx, int ny) {
  if (nx < 1 || ny < 1) throw std::invalid_argument("build_mesh_rect: nx, ny must be >= 1");
  TriMesh m;
  m.width = width;
  m.height = height;
  m.nx = nx;
  m.ny = ny;
  const int vx = nx + 1, vy = ny + 1;
  m.vertices.resize(vx * vy, 2);
  auto vid = [&](int i, int j) { return j * vx + i; };
  for (int j = 0; j < vy; ++j)
    for (int i = 0; i < vx; ++i)
      m.vertices.row(vid(i, j)) << width * i / nx, height * j / ny;

  m.tris.resize(2 * nx * ny, 3);
  int t = 0;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int a = vid(i, j), b = vid(i + 1, j), c = vid(i + 1, j + 1), d = vid(i, j + 1);
      m.tris.row(t++) << a, b, c;
      m.tris.row(t++) << a, c, d;
    }

  // edge table
  std::map<std::pair<int, int>, int> edge_id;
  auto get_edge = [&](int a, int b) {
    const auto key = std::minmax(a, b);
    auto it = edge_id.find(key);
    if (it != edge_id.end()) return it->second;
    const int id = static_cast<int>(edge_id.size());
    edge_id.emplace(key, id);
    return id;
  };
  m.tri_edges.resize(m.n_tris(), 3);
  for (int k = 0; k < m.n_tris(); ++k) {
    m.tri_edges(k, 0) = get_edge(m.tris(k, 0), m.tris(k, 1));
    m.tri_edges(k, 1) = get_edge(m.tris(k, 1), m.tris(k, 2));
    m.tri_edges(k, 2) = get_edge(m.tris(k, 2), m.tris(k, 0));
  }
  m.edges.resize(edge_id.size(), 2);
  for (const auto& [key, id] : edge_id) {
    m.edges(id, 0) = key.first;
    m.edges(id, 1) = key.second;
  }

  m.edge_tag.assign(m.n_edges(), -1);
  const double eps = 1e-12 * std::max(width, height);
  for (int e = 0; e < m.n_edges(); ++e) {
    const Eigen::Vector2d a = m.vertices.row(m.edges(e, 0));
    const Eigen::Vector2d b = m.vertices.row(m.edges(e, 1));
    if (a.x() < eps && b.x() < eps) m.edge_tag[e] = TriMesh::kLeft;
    else if (a.x() > width - eps && b.x() > width - eps) m.edge_tag[e] = TriMesh::kRight;
    else if (a.y() < eps && b.y() < eps) m.edge_tag[e] = TriMesh::kBottom;
    else if (a.y() > height - eps && b.y() > height - eps) m.edge_tag[e] = TriMesh::kTop;
  }
  return m;
}

void save_mesh(const TriMesh& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_mesh: cannot open " + path);
  os << "pflow-mesh 1\n";
  os << std::setprecision(17);
  os << "rect " << m.width << " " << m.height << " " << m.nx << " " << m.ny << "\n";
  os << "vertices " << m.n_vertices() << "\n";
  for (int i = 0; i < m.n_vertices(); ++i)
    os << m.vertices(i, 0) << " " << m.vertices(i, 1) << "\n";
  os << "triangles " << m.n_tris() << "\n";
  for (int t = 0; t < m.n_tris(); ++t)
    os << m.tris(t, 0) << " " << m.tris(t, 1) << " " << m.tris(t, 2) << " " << m.tri_edges(t, 0)
       << " " << m.tri_edges(t, 1) << " " << m.tri_edges(t, 2) << "\n";
  os << "edges " << m.n_edges() << "\n";
  for (int e = 0; e < m.n_edges(); ++e)
    os << m.edges(e, 0) << " " << m.edges(e, 1) << " " << m.edge_tag[e] << "\n";
}

TriMesh load_mesh(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_mesh: cannot open " + path);
  std::string magic, tok;
  int version = 0;
  is >> magic >> version;
  if (magic != "pflow-mesh" || version != 1)
    throw std::runtime_error("load_mesh: unrecognized mesh header");
  TriMesh m;
  int n = 0;
  is >> tok >> m.width >> m.height >> m.nx >> m.ny;
  if (tok != "rect") throw std::runtime_error("load_mesh: missing rect line");
  is >> tok >> n;
  if (tok != "vertices") throw std::runtime_error("load_mesh: missing vertices");
  m.vertices.resize(n, 2);
  for (int i = 0; i < n; ++i) is >> m.vertices(i, 0) >> m.vertices(i, 1);
  is >> tok >> n;
  if (tok != "triangles") throw std::runtime_error("load_mesh: missing triangles");
  m.tris.resize(n, 3);
  m.tri_edges.resize(n, 3);
  for (int t = 0; t < n; ++t)
    is >> m.tris(t, 0) >> m.tris(t, 1) >> m.tris(t, 2) >> m.tri_edges(t, 0) >> m.tri_edges(t, 1) >>
        m.tri_edges(t, 2);
  is >> tok >> n;
  if (tok != "edges") throw std::runtime_error("load_mesh: missing edges");
  m.edges.resize(n, 2);
  m.edge_tag.assign(n, -1);
  for (int e = 0; e < n; ++e) is >> m.edges(e, 0) >> m.edges(e, 1) >> m.edge_tag[e];
  if (!is) throw std::runtime_error("load_mesh: truncated file " + path);
  return m;
}

BCSet BCSet::no_slip_box() {
  BCSet b;
  for (int tag : {TriMesh::kLeft, TriMesh::kRight, TriMesh::kBottom, TriMesh::kTop})
    b.by_tag[tag] = BC{BC::kNoSlip, {0, 0}};
  return b;
}

BCSet BCSet::bubble_box() {
  BCSet b;
  b.by_tag[TriMesh::kBottom] = BC{BC::kNoSlip, {0, 0}};
  b.by_tag[TriMesh::kTop] = BC{BC::kNoSlip, {0, 0}};
  b.by_tag[TriMesh::kLeft] = BC{BC::kSlipX, {0, 0}};
  b.by_tag[TriMesh::kRight] = BC{BC::kSlipX, {0, 0}};
  return b;
}

FlowState FlowState::zero(const TriMesh& mesh) {
  FlowState s;
  s.u = VectorXd::Zero(mesh.n_u_dofs());
  s.p = VectorXd::Zero(mesh.n_vertices());
  return s;
}

CapillaryForce sample_capillary(const TriMesh& mesh, const ls::FieldProbe& probe,
                                const ls::PhaseMap& pm, double we_inv, bool p1_space) {
  CapillaryForce f;
  f.p1 = p1_space;
  if (we_inv == 0.0) {
    if (p1_space) f.vertex_force = MatrixXd::Zero(mesh.n_vertices(), 2);
    else f.element_force = MatrixXd::Zero(mesh.n_tris(), 2);
    return f;
  }
  MatrixXd pts;
  if (p1_space) {
    pts = mesh.vertices;
  } else {
    pts.resize(mesh.n_tris(), 2);
    for (int t = 0; t < mesh.n_tris(); ++t)
      pts.row(t) = (mesh.vertices.row(mesh.tris(t, 0)) + mesh.vertices.row(mesh.tris(t, 1)) +
                    mesh.vertices.row(mesh.tris(t, 2))) /
                   3.0;
  }
  ls::FieldJet jet;
  probe.eval(pts, 2, jet);
  MatrixXd force(pts.rows(), 2);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const auto g = ls::geometry_from_jet(jet, i, pm);
    if (g.degenerate) {
      force.row(i).setZero();
      ++f.degenerate_points;
      continue;
    }
    // magnitude (1/We) kappa delta |grad F|, directed toward the curvature
    // center so the pressure is higher on the concave side (Laplace law)
    force.row(i) = -we_inv * g.curvature * g.delta * jet.grad.row(i);
  }
  if (p1_space) f.vertex_force = std::move(force);
  else f.element_force = std::move(force);
  return f;
}

PhaseFields sample_phase(const TriMesh& mesh, const ls::FieldProbe& probe,
                         const ls::FluidPair& fluids, const ls::PhaseMap& pm) {
  const auto& rule = quad_rule();
  PhaseFields out;
  out.rho.resize(mesh.n_tris(), rule.nq);
  out.mu.resize(mesh.n_tris(), rule.nq);
  MatrixXd pts(mesh.n_tris() * rule.nq, 2);
  for (int t = 0; t < mesh.n_tris(); ++t) {
    const auto g = element_geom(mesh, t);
    for (int q = 0; q < rule.nq; ++q)
      pts.row(t * rule.nq + q) = qpoint_coords(mesh, g, rule.bary[q]);
  }
  ls::FieldJet jet;
  probe.eval(pts, 0, jet);
  for (int t = 0; t < mesh.n_tris(); ++t)
    for (int q = 0; q < rule.nq; ++q) {
      const auto mp = ls::mix_properties(jet.value[t * rule.nq + q], fluids, pm);
      out.rho(t, q) = mp.rho;
      out.mu(t, q) = mp.mu;
    }
  return out;
}

PhaseFields uniform_phase(const TriMesh& mesh, double rho, double mu) {
  PhaseFields out;
  out.rho = MatrixXd::Constant(mesh.n_tris(), quad_rule().nq, rho);
  out.mu = MatrixXd::Constant(mesh.n_tris(), quad_rule().nq, mu);
  return out;
}

namespace {

struct DirichletMap {
  std::vector<bool> fixed;
  std::vector<double> value;
  bool any_traction = false;
};

DirichletMap dirichlet_map(const TriMesh& mesh, const BCSet& bcs) {
  DirichletMap dm;
  dm.fixed.assign(mesh.n_u_dofs(), false);
  dm.value.assign(mesh.n_u_dofs(), 0.0);

  auto apply = [&](int node, const BC& bc) {
    switch (bc.kind) {
      case BC::kTraction:
        break;
      case BC::kSlipX:
        dm.fixed[2 * node] = true;
        dm.value[2 * node] = 0.0;
        break;
      case BC::kSlipY:
        dm.fixed[2 * node + 1] = true;
        dm.value[2 * node + 1] = 0.0;
        break;
      case BC::kNoSlip:
      case BC::kVelocity:
        for (int c = 0; c < 2; ++c) {
          dm.fixed[2 * node + c] = true;
          dm.value[2 * node + c] = bc.kind == BC::kNoSlip ? 0.0 : bc.value[c];
        }
        break;
    }
  };

  // slip first so full constraints win at corners
  for (int pass = 0; pass < 2; ++pass) {
    for (int e = 0; e < mesh.n_edges(); ++e) {
      const int tag = mesh.edge_tag[e];
      if (tag < 0) continue;
      const auto it = bcs.by_tag.find(tag);
      if (it == bcs.by_tag.end()) continue;
      const BC& bc = it->second;
      if (bc.kind == BC::kTraction) {
        dm.any_traction = true;
        continue;
      }
      const bool slip = bc.kind == BC::kSlipX || bc.kind == BC::kSlipY;
      if ((pass == 0) != slip) continue;
      apply(mesh.edges(e, 0), bc);
      apply(mesh.edges(e, 1), bc);
      apply(mesh.n_vertices() + e, bc);
    }
  }
  return dm;
}

}  // namespace

SaddleSystem assemble(const TriMesh& mesh, const FlowState& state_prev, const VectorXd& advect,
                      const PhaseFields& phase, const CapillaryForce& cap,
                      const FlowParams& params, const BCSet& bcs) {
  const auto& rule = quad_rule();
  const int n_u = mesh.n_u_dofs();
  const int n_p = mesh.n_vertices();
  const DirichletMap dm = dirichlet_map(mesh, bcs);
  const bool gauge = !dm.any_traction;
  const int n_total = n_u + n_p + (gauge ? 1 : 0);
  const bool unsteady = params.dt > 0;

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(mesh.n_tris()) * 230);
  VectorXd rhs = VectorXd::Zero(n_total);

  double N[6], dNr[6][2];
  for (int t = 0; t < mesh.n_tris(); ++t) {
    const auto g = element_geom(mesh, t);
    Eigen::Matrix<double, 12, 12> A = Eigen::Matrix<double, 12, 12>::Zero();
    Eigen::Matrix<double, 3, 12> B = Eigen::Matrix<double, 3, 12>::Zero();
    Eigen::Matrix<double, 12, 1> f = Eigen::Matrix<double, 12, 1>::Zero();

    for (int q = 0; q < rule.nq; ++q) {
      p2_shapes(rule.bary[q], N, dNr);
      Eigen::Matrix<double, 6, 2> dN;
      for (int i = 0; i < 6; ++i)
        dN.row(i) = (g.inv_jt * Eigen::Vector2d(dNr[i][0], dNr[i][1])).transpose();
      const double wq = rule.w[q] * g.area;
      const double rho = phase.rho(t, q), mu = phase.mu(t, q);
      const Eigen::Vector2d xq = qpoint_coords(mesh, g, rule.bary[q]);

      Eigen::Vector2d a = Eigen::Vector2d::Zero(), up = Eigen::Vector2d::Zero();
      for (int i = 0; i < 6; ++i) {
        const int n0 = g.nodes[i];
        if (params.convection)
          a += N[i] * Eigen::Vector2d(advect[2 * n0], advect[2 * n0 + 1]);
        if (unsteady) up += N[i] * Eigen::Vector2d(state_prev.u[2 * n0], state_prev.u[2 * n0 + 1]);
      }

      Eigen::Vector2d fcap;
      if (cap.p1) {
        fcap = rule.bary[q][0] * cap.vertex_force.row(g.verts[0]).transpose() +
               rule.bary[q][1] * cap.vertex_force.row(g.verts[1]).transpose() +
               rule.bary[q][2] * cap.vertex_force.row(g.verts[2]).transpose();
      } else {
        fcap = cap.element_force.row(t).transpose();
      }

      Eigen::Vector2d body = fcap;
      body.y() -= params.fr_inv2 * rho;  // gravity acts along -y
      if (unsteady) body += (rho / params.dt) * up;
      if (params.body_force) body += params.body_force(xq.x(), xq.y());

      for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 6; ++j) {
          double diag = (mu / params.Re) * dN.row(i).dot(dN.row(j));
          if (unsteady) diag += (rho / params.dt) * N[i] * N[j];
          if (params.convection) diag += rho * N[i] * a.dot(dN.row(j));
          A(2 * i, 2 * j) += wq * diag;
          A(2 * i + 1, 2 * j + 1) += wq * diag;
        }
        f[2 * i] += wq * body.x() * N[i];
        f[2 * i + 1] += wq * body.y() * N[i];
      }
      for (int k = 0; k < 3; ++k)
        for (int j = 0; j < 6; ++j) {
          B(k, 2 * j) -= wq * rule.bary[q][k] * dN(j, 0);
          B(k, 2 * j + 1) -= wq * rule.bary[q][k] * dN(j, 1);
        }
    }

    // scatter with Dirichlet row replacement
    for (int i = 0; i < 12; ++i) {
      const int gi = 2 * g.nodes[i / 2] + (i % 2);
      if (dm.fixed[gi]) continue;
      for (int j = 0; j < 12; ++j) {
        const int gj = 2 * g.nodes[j / 2] + (j % 2);
        if (A(i, j) != 0.0) trip.emplace_back(gi, gj, A(i, j));
      }
      for (int k = 0; k < 3; ++k)
        if (B(k, i) != 0.0) trip.emplace_back(gi, n_u + g.verts[k], B(k, i));  // -(p, div v)
      rhs[gi] += f[i];
    }
    for (int k = 0; k < 3; ++k)
      for (int j = 0; j < 12; ++j) {
        const int gj = 2 * g.nodes[j / 2] + (j % 2);
        if (B(k, j) != 0.0) trip.emplace_back(n_u + g.verts[k], gj, B(k, j));  // -(q, div u)
      }
    if (gauge) {
      // mean-pressure constraint column/row: integral of each P1 basis
      for (int k = 0; k < 3; ++k) {
        const double e = g.area / 3.0;  // integral of a P1 hat over one triangle
        trip.emplace_back(n_u + g.verts[k], n_u + n_p, e);
        trip.emplace_back(n_u + n_p, n_u + g.verts[k], e);
      }
    }
  }

  for (int i = 0; i < n_u; ++i)
    if (dm.fixed[i]) {
      trip.emplace_back(i, i, 1.0);
      rhs[i] = dm.value[i];
    }
  // tiny pressure regularization: keeps degenerate configurations (all
  // velocity dofs constrained) factorizable without moving the solution
  double diag_max = 1.0;
  for (const auto& t3 : trip)
    if (t3.row() == t3.col() && t3.row() < n_u) diag_max = std::max(diag_max, std::abs(t3.value()));
  for (int i = 0; i < n_p; ++i) trip.emplace_back(n_u + i, n_u + i, -1e-12 * diag_max);

  SaddleSystem sys;
  sys.K.resize(n_total, n_total);
  sys.K.setFromTriplets(trip.begin(), trip.end());
  sys.rhs = std::move(rhs);
  sys.n_u = n_u;
  sys.n_p = n_p;
  sys.mean_pressure_gauge = gauge;
  sys.dirichlet = dm.fixed;
  return sys;
}

FlowState solve_saddle(const TriMesh& mesh, const SaddleSystem& sys, SolveReport* report) {
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.analyzePattern(sys.K);
  lu.factorize(sys.K);
  if (lu.info() != Eigen::Success)
    throw std::runtime_error(
        "solve_saddle: singular factorization (zero pivot; is the pressure gauge missing?)");
  VectorXd x = lu.solve(sys.rhs);
  x += lu.solve(sys.rhs - sys.K * x);  // one refinement pass
  const double denom = std::max(sys.rhs.norm(), 1e-300);
  const double rel = (sys.K * x - sys.rhs).norm() / denom;
  if (report) report->residual = rel;
  if (!x.allFinite()) throw std::runtime_error("solve_saddle: non-finite solution");

  FlowState s;
  s.u = x.head(sys.n_u);
  s.p = x.segment(sys.n_u, sys.n_p);
  return s;
}

FlowState step_navier_stokes(const TriMesh& mesh, const FlowState& state_prev,
                             const PhaseFields& phase, const CapillaryForce& cap,
                             const FlowParams& params, const BCSet& bcs, StepReport* report) {
  StepReport rep;
  VectorXd a = state_prev.u;
  FlowState s;
  if (!params.convection) {  // linear problem: one solve is the solution
    SolveReport sr;
    s = solve_saddle(mesh, assemble(mesh, state_prev, a, phase, cap, params, bcs), &sr);
    rep.picard_iters = 1;
    rep.converged = true;
    rep.linear_residual = sr.residual;
    s.time = state_prev.time + (params.dt > 0 ? params.dt : 0.0);
    if (report) *report = rep;
    return s;
  }
  double prev_inc = std::numeric_limits<double>::infinity();
  int growth_streak = 0;
  for (int k = 1; k <= params.picard_max; ++k) {
    SolveReport sr;
    const SaddleSystem sys = assemble(mesh, state_prev, a, phase, cap, params, bcs);
    s = solve_saddle(mesh, sys, &sr);
    rep.linear_residual = sr.residual;
    rep.picard_iters = k;
    const double inc = (s.u - a).norm() / std::max(s.u.norm(), 1e-300);
    rep.last_increment = inc;
    a = s.u;
    if (inc < params.picard_tol) {
      rep.converged = true;
      break;
    }
    if (inc > 3.0 * prev_inc) {
      if (++growth_streak >= 3)
        throw std::runtime_error("step_navier_stokes: Picard diverging (increment " +
                                 std::to_string(inc) + " after " + std::to_string(k) +
                                 " iterations)");
    } else {
      growth_streak = 0;
    }
    prev_inc = inc;
  }
  s.time = state_prev.time + (params.dt > 0 ? params.dt : 0.0);
  if (report) *report = rep;
  return s;
}

MatrixXd evaluate_velocity(const TriMesh& mesh, const FlowState& state, const MatrixXd& points,
                           int* clamped) {
  if (mesh.nx <= 0 || mesh.ny <= 0)
    throw std::invalid_argument("evaluate_velocity: mesh lacks structured metadata");
  const double hx = mesh.width / mesh.nx, hy = mesh.height / mesh.ny;
  int clamp_count = 0;
  MatrixXd U(points.rows(), 2);
  for (Eigen::Index r = 0; r < points.rows(); ++r) {
    double x = points(r, 0), y = points(r, 1);
    const double xc = std::clamp(x, 0.0, mesh.width), yc = std::clamp(y, 0.0, mesh.height);
    if (xc != x || yc != y) ++clamp_count;
    x = xc;
    y = yc;
    int i = std::min(static_cast<int>(x / hx), mesh.nx - 1);
    int j = std::min(static_cast<int>(y / hy), mesh.ny - 1);
    const double s = x / hx - i, t = y / hy - j;
    const int cell = 2 * (j * mesh.nx + i);
    const int tri = (s >= t) ? cell : cell + 1;
    double l[3];
    if (s >= t) {  // (a, b, c): lambda over v0 = a
      l[1] = s - t;
      l[2] = t;
      l[0] = 1 - l[1] - l[2];
    } else {  // (a, c, d)
      l[1] = s;
      l[2] = t - s;
      l[0] = 1 - l[1] - l[2];
    }
    double N[6], dN[6][2];
    p2_shapes(l, N, dN);
    Eigen::Vector2d u = Eigen::Vector2d::Zero();
    for (int k = 0; k < 3; ++k) {
      const int vn = mesh.tris(tri, k);
      const int mn = mesh.n_vertices() + mesh.tri_edges(tri, k);
      u += N[k] * Eigen::Vector2d(state.u[2 * vn], state.u[2 * vn + 1]);
      u += N[3 + k] * Eigen::Vector2d(state.u[2 * mn], state.u[2 * mn + 1]);
    }
    U.row(r) = u;
  }
  if (clamped) *clamped = clamp_count;
  return U;
}

namespace {

template <typename F>
double integrate(const TriMesh& mesh, const F& fn) {
  const auto& rule = quad_rule();
  double acc = 0;
  double N[6], dN[6][2];
  for (int t = 0; t < mesh.n_tris(); ++t) {
    const auto g = element_geom(mesh, t);
    for (int q = 0; q < rule.nq; ++q) {
      p2_shapes(rule.bary[q], N, dN);
      const Eigen::Vector2d x = qpoint_coords(mesh, g, rule.bary[q]);
      acc += rule.w[q] * g.area * fn(t, g, q, N, x);
    }
  }
  return acc;
}

}  // namespace

double spurious_norm(const TriMesh& mesh, const FlowState& state) {
  const double v = integrate(
      mesh, [&](int, const ElementGeom& g, int, const double N[6], const Eigen::Vector2d&) {
        Eigen::Vector2d u = Eigen::Vector2d::Zero();
        for (int i = 0; i < 6; ++i)
          u += N[i] * Eigen::Vector2d(state.u[2 * g.nodes[i]], state.u[2 * g.nodes[i] + 1]);
        return u.squaredNorm();
      });
  return std::sqrt(v);
}

double velocity_l2_error(const TriMesh& mesh, const FlowState& state,
                         const std::function<Eigen::Vector2d(double, double)>& exact) {
  const double v = integrate(
      mesh, [&](int, const ElementGeom& g, int, const double N[6], const Eigen::Vector2d& x) {
        Eigen::Vector2d u = Eigen::Vector2d::Zero();
        for (int i = 0; i < 6; ++i)
          u += N[i] * Eigen::Vector2d(state.u[2 * g.nodes[i]], state.u[2 * g.nodes[i] + 1]);
        return (u - exact(x.x(), x.y())).squaredNorm();
      });
  return std::sqrt(v);
}

double pressure_l2_error(const TriMesh& mesh, const FlowState& state,
                         const std::function<double(double, double)>& exact, bool match_means) {
  double shift = 0;
  if (match_means) {
    const double area = mesh.area();
    const double mean_h = integrate(mesh, [&](int, const ElementGeom& g, int q,
                                              const double[6], const Eigen::Vector2d&) {
      const auto& rule = quad_rule();
      double p = 0;
      for (int k = 0; k < 3; ++k) p += rule.bary[q][k] * state.p[g.verts[k]];
      return p;
    });
    const double mean_e =
        integrate(mesh, [&](int, const ElementGeom&, int, const double[6],
                            const Eigen::Vector2d& x) { return exact(x.x(), x.y()); });
    shift = (mean_h - mean_e) / area;
  }
  const double v = integrate(
      mesh, [&](int, const ElementGeom& g, int q, const double[6], const Eigen::Vector2d& x) {
        const auto& rule = quad_rule();
        double p = 0;
        for (int k = 0; k < 3; ++k) p += rule.bary[q][k] * state.p[g.verts[k]];
        const double diff = p - shift - exact(x.x(), x.y());
        return diff * diff;
      });
  return std::sqrt(v);
}

double max_divergence_residual(const TriMesh& mesh, const FlowState& state) {
  const auto& rule = quad_rule();
  VectorXd r = VectorXd::Zero(mesh.n_vertices());
  double N[6], dNr[6][2];
  for (int t = 0; t < mesh.n_tris(); ++t) {
    const auto g = element_geom(mesh, t);
    for (int q = 0; q < rule.nq; ++q) {
      p2_shapes(rule.bary[q], N, dNr);
      double div = 0;
      for (int i = 0; i < 6; ++i) {
        const Eigen::Vector2d dn = g.inv_jt * Eigen::Vector2d(dNr[i][0], dNr[i][1]);
        div += dn.x() * state.u[2 * g.nodes[i]] + dn.y() * state.u[2 * g.nodes[i] + 1];
      }
      for (int k = 0; k < 3; ++k) r[g.verts[k]] += rule.w[q] * g.area * rule.bary[q][k] * div;
    }
  }
  return r.cwiseAbs().maxCoeff();
}

ls::QuadratureGrid quadrature_grid(const TriMesh& mesh) {
  const auto& rule = quad_rule();
  ls::QuadratureGrid grid;
  grid.points.resize(mesh.n_tris() * rule.nq, 2);
  grid.weights.resize(mesh.n_tris() * rule.nq);
  for (int t = 0; t < mesh.n_tris(); ++t) {
    const auto g = element_geom(mesh, t);
    for (int q = 0; q < rule.nq; ++q) {
      grid.points.row(t * rule.nq + q) = qpoint_coords(mesh, g, rule.bary[q]);
      grid.weights[t * rule.nq + q] = rule.w[q] * g.area;
    }
  }
  return grid;
}

void write_vtk(const std::string& path, const TriMesh& mesh,
               const std::map<std::string, VectorXd>& scalars,
               const std::map<std::string, MatrixXd>& vectors) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_vtk: cannot open " + path);
  const int n = mesh.n_p2_nodes();
  const MatrixXd coords = mesh.p2_coords();
  os << "# vtk DataFile Version 3.0\npflow fields\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  os << std::setprecision(12);
  os << "POINTS " << n << " double\n";
  for (int i = 0; i < n; ++i) os << coords(i, 0) << " " << coords(i, 1) << " 0\n";
  os << "CELLS " << mesh.n_tris() << " " << 7 * mesh.n_tris() << "\n";
  for (int t = 0; t < mesh.n_tris(); ++t) {
    os << 6;
    for (int k = 0; k < 3; ++k) os << " " << mesh.tris(t, k);
    for (int k = 0; k < 3; ++k) os << " " << mesh.n_vertices() + mesh.tri_edges(t, k);
    os << "\n";
  }
  os << "CELL_TYPES " << mesh.n_tris() << "\n";
  for (int t = 0; t < mesh.n_tris(); ++t) os << "22\n";
  os << "POINT_DATA " << n << "\n";
  for (const auto& [name, values] : scalars) {
    if (values.size() != n) throw std::invalid_argument("write_vtk: scalar size mismatch: " + name);
    os << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
    for (int i = 0; i < n; ++i) os << values[i] << "\n";
  }
  for (const auto& [name, values] : vectors) {
    if (values.rows() != n || values.cols() != 2)
      throw std::invalid_argument("write_vtk: vector shape mismatch: " + name);
    os << "VECTORS " << name << " double\n";
    for (int i = 0; i < n; ++i) os << values(i, 0) << " " << values(i, 1) << " 0\n";
  }
  if (!os) throw std::runtime_error("write_vtk: write failed for " + path);
}

}  // namespace pflow::fem
