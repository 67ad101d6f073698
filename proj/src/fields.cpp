#include "pflow/fields.hpp"

#include <cmath>
#include <stdexcept>

namespace pflow::ls {

namespace {

constexpr Eigen::Index kChunk = 8192;

std::vector<int> iota(int n) {
  std::vector<int> v(n);
  for (int i = 0; i < n; ++i) v[i] = i;
  return v;
}

Eigen::MatrixXd with_frozen_col(const Eigen::MatrixXd& X, bool has_time, double t) {
  if (!has_time) return X;
  Eigen::MatrixXd Xt(X.rows(), X.cols() + 1);
  Xt.leftCols(X.cols()) = X;
  Xt.col(X.cols()).setConstant(t);
  return Xt;
}

}  // namespace

double FieldProbe::value_at(const Eigen::VectorXd& x) const {
  FieldJet j;
  eval(x.transpose(), 0, j);
  return j.value[0];
}

Eigen::VectorXd FieldProbe::grad_at(const Eigen::VectorXd& x) const {
  FieldJet j;
  eval(x.transpose(), 1, j);
  return j.grad.row(0);
}

FieldJet FieldProbe::jet_at(const Eigen::VectorXd& x, int order) const {
  FieldJet j;
  eval(x.transpose(), order, j);
  return j;
}

void AnalyticProbe::eval(const Eigen::MatrixXd& X, int order, FieldJet& out) const {
  if (order >= 1 && !grad_) throw std::logic_error("AnalyticProbe: gradient callback missing");
  if (order >= 2 && !hess_) throw std::logic_error("AnalyticProbe: hessian callback missing");
  const Eigen::Index n = X.rows();
  out.resize(dim_, order, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::VectorXd x = X.row(r);
    out.value[r] = value_(x);
    if (order >= 1) out.grad.row(r) = grad_(x);
    if (order >= 2) {
      const Eigen::MatrixXd H = hess_(x);
      for (int i = 0; i < dim_; ++i)
        for (int j = i; j < dim_; ++j) out.hess(r, sym_index(dim_, i, j)) = H(i, j);
    }
  }
}

ProbePtr make_sphere_probe(const Eigen::VectorXd& center, double radius) {
  const int d = static_cast<int>(center.size());
  const Eigen::VectorXd c = center;
  return std::make_shared<AnalyticProbe>(
      d, [c, radius](const Eigen::VectorXd& x) { return (x - c).norm() - radius; },
      [c](const Eigen::VectorXd& x) {
        const Eigen::VectorXd r = x - c;
        const double nr = r.norm();
        return nr > 0 ? Eigen::VectorXd(r / nr) : Eigen::VectorXd::Zero(r.size());
      },
      [c](const Eigen::VectorXd& x) {
        const Eigen::VectorXd r = x - c;
        const double nr = r.norm();
        const int d = static_cast<int>(r.size());
        if (nr == 0) return Eigen::MatrixXd::Zero(d, d).eval();
        return ((Eigen::MatrixXd::Identity(d, d) - (r / nr) * (r / nr).transpose()) / nr).eval();
      });
}

ProbePtr make_plane_probe(const Eigen::VectorXd& normal, double offset) {
  const Eigen::VectorXd n = normal.normalized();
  const int d = static_cast<int>(n.size());
  return std::make_shared<AnalyticProbe>(
      d, [n, offset](const Eigen::VectorXd& x) { return n.dot(x) - offset; },
      [n](const Eigen::VectorXd&) { return n; },
      [d](const Eigen::VectorXd&) { return Eigen::MatrixXd::Zero(d, d).eval(); });
}

MlpProbe::MlpProbe(const nn::NetworkParams& p, int spatial_dim, bool has_time, double frozen_time)
    : net_(nn::Mlp<double>::from(p)), dim_(spatial_dim), has_time_(has_time), frozen_time_(frozen_time) {
  const int expected = spatial_dim + (has_time ? 1 : 0);
  if (net_.input_dim() != expected) throw std::invalid_argument("MlpProbe: net input dim mismatch");
}

void MlpProbe::eval(const Eigen::MatrixXd& X, int order, FieldJet& out) const {
  const Eigen::Index n = X.rows();
  out.resize(dim_, order, n);
  const nn::JetSpec spec = nn::JetSpec::make(dim_, order);
  for (Eigen::Index r0 = 0; r0 < n; r0 += kChunk) {
    const Eigen::Index m = std::min(kChunk, n - r0);
    const Eigen::MatrixXd Xin = with_frozen_col(X.middleRows(r0, m), has_time_, frozen_time_);
    nn::MlpJet jet = nn::jet_eval(net_, Xin, iota(dim_), spec);
    out.value.segment(r0, m) = jet.planes[0];
    if (order >= 1)
      for (int i = 0; i < dim_; ++i) out.grad.col(i).segment(r0, m) = jet.planes[spec.index1(i)];
    if (order >= 2)
      for (int i = 0; i < dim_; ++i)
        for (int j = i; j < dim_; ++j)
          out.hess.col(sym_index(dim_, i, j)).segment(r0, m) = jet.planes[spec.index2(i, j)];
  }
}

MultiLevelProbe::MultiLevelProbe(const nn::NetworkParams& net1, const nn::NetworkParams& net2,
                                 double beta, int spatial_dim, bool has_time, double frozen_time)
    : a_(nn::Mlp<double>::from(net1)),
      b_(nn::Mlp<double>::from(net2)),
      beta_(beta),
      dim_(spatial_dim),
      has_time_(has_time),
      frozen_time_(frozen_time) {
  const int extra = has_time ? 1 : 0;
  if (a_.input_dim() != spatial_dim + extra)
    throw std::invalid_argument("MultiLevelProbe: net1 input dim mismatch");
  if (b_.input_dim() != 2 * spatial_dim + extra)
    throw std::invalid_argument("MultiLevelProbe: net2 input dim mismatch");
}

void MultiLevelProbe::eval(const Eigen::MatrixXd& X, int order, FieldJet& out) const {
  const int d = dim_;
  const Eigen::Index n = X.rows();
  out.resize(d, order, n);
  const nn::JetSpec spec_a = nn::JetSpec::make(d, std::min(order + 1, 3));
  const nn::JetSpec spec_b = nn::JetSpec::make(2 * d, order);

  for (Eigen::Index r0 = 0; r0 < n; r0 += kChunk) {
    const Eigen::Index m = std::min(kChunk, n - r0);
    const Eigen::MatrixXd Xa = with_frozen_col(X.middleRows(r0, m), has_time_, frozen_time_);
    nn::MlpJet ja = nn::jet_eval(a_, Xa, iota(d), spec_a);

    // inputs of B laid out as during training: [x, t*, grad A] with time
    // frozen, or [x, grad A] without it. Jet variables: x then the gradient
    // features; the frozen time column is skipped.
    const int goff = has_time_ ? d + 1 : d;  // first gradient-feature column
    Eigen::MatrixXd Xb(m, 2 * d + (has_time_ ? 1 : 0));
    Xb.leftCols(d) = X.middleRows(r0, m);
    if (has_time_) Xb.col(d).setConstant(frozen_time_);
    for (int i = 0; i < d; ++i) Xb.col(goff + i) = ja.planes[spec_a.index1(i)];
    std::vector<int> active_b(2 * d);
    for (int i = 0; i < d; ++i) {
      active_b[i] = i;
      active_b[d + i] = goff + i;
    }
    nn::MlpJet jb = nn::jet_eval(b_, Xb, active_b, spec_b);

    auto a1 = [&](int i) -> const Eigen::VectorXd& { return ja.planes[spec_a.index1(i)]; };
    auto a2 = [&](int i, int j) -> const Eigen::VectorXd& { return ja.planes[spec_a.index2(i, j)]; };
    auto a3 = [&](int i, int j, int k) -> const Eigen::VectorXd& {
      return ja.planes[spec_a.index3(i, j, k)];
    };
    auto b1 = [&](int i) -> const Eigen::VectorXd& { return jb.planes[spec_b.index1(i)]; };
    auto b2 = [&](int i, int j) -> const Eigen::VectorXd& { return jb.planes[spec_b.index2(i, j)]; };

    out.value.segment(r0, m) = ja.planes[0] + beta_ * jb.planes[0];

    if (order >= 1) {
      for (int i = 0; i < d; ++i) {
        Eigen::VectorXd gi = b1(i);
        for (int mm = 0; mm < d; ++mm) gi.array() += b1(d + mm).array() * a2(mm, i).array();
        out.grad.col(i).segment(r0, m) = a1(i) + beta_ * gi;
      }
    }
    if (order >= 2) {
      for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
          Eigen::VectorXd hij = b2(i, j);
          for (int mm = 0; mm < d; ++mm) {
            hij.array() += b2(i, d + mm).array() * a2(mm, j).array();
            hij.array() += b2(j, d + mm).array() * a2(mm, i).array();
            hij.array() += b1(d + mm).array() * a3(mm, i, j).array();
            for (int ll = 0; ll < d; ++ll)
              hij.array() += b2(d + mm, d + ll).array() * a2(mm, i).array() * a2(ll, j).array();
          }
          out.hess.col(sym_index(d, i, j)).segment(r0, m) = a2(i, j) + beta_ * hij;
        }
    }
  }
}

PinnRProbe::PinnRProbe(const nn::NetworkParams& znet, ProbePtr inner)
    : z_(nn::Mlp<double>::from(znet)), inner_(std::move(inner)), dim_(inner_->dim()) {
  if (z_.input_dim() != dim_) throw std::invalid_argument("PinnRProbe: z net input dim mismatch");
}

void PinnRProbe::eval(const Eigen::MatrixXd& X, int order, FieldJet& out) const {
  const int d = dim_;
  const Eigen::Index n = X.rows();
  out.resize(d, order, n);
  FieldJet fin;
  inner_->eval(X, order, fin);
  const nn::JetSpec spec = nn::JetSpec::make(d, order);
  for (Eigen::Index r0 = 0; r0 < n; r0 += kChunk) {
    const Eigen::Index m = std::min(kChunk, n - r0);
    nn::MlpJet jz = nn::jet_eval(z_, X.middleRows(r0, m), iota(d), spec);
    const Eigen::ArrayXd E = jz.planes[0].array().exp();
    out.value.segment(r0, m) = (E * fin.value.segment(r0, m).array()).matrix();
    if (order >= 1) {
      for (int i = 0; i < d; ++i) {
        const Eigen::ArrayXd zi = jz.planes[spec.index1(i)].array();
        out.grad.col(i).segment(r0, m) =
            (E * (zi * fin.value.segment(r0, m).array() + fin.grad.col(i).segment(r0, m).array()))
                .matrix();
      }
    }
    if (order >= 2) {
      for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
          const Eigen::ArrayXd zi = jz.planes[spec.index1(i)].array();
          const Eigen::ArrayXd zj = jz.planes[spec.index1(j)].array();
          const Eigen::ArrayXd zij = jz.planes[spec.index2(i, j)].array();
          const Eigen::ArrayXd F = fin.value.segment(r0, m).array();
          const Eigen::ArrayXd Fi = fin.grad.col(i).segment(r0, m).array();
          const Eigen::ArrayXd Fj = fin.grad.col(j).segment(r0, m).array();
          const Eigen::ArrayXd Fij = fin.hess.col(sym_index(d, i, j)).segment(r0, m).array();
          out.hess.col(sym_index(d, i, j)).segment(r0, m) =
              (E * ((zij + zi * zj) * F + zi * Fj + zj * Fi + Fij)).matrix();
        }
    }
  }
}

}  // namespace pflow::ls
