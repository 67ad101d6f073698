#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <vector>

#include "pflow/jets.hpp"
#include "pflow/nn.hpp"

namespace pflow::ls {

inline int sym_size(int d) { return d * (d + 1) / 2; }
inline int sym_index(int d, int i, int j) {
  if (i > j) std::swap(i, j);
  return i * d - i * (i - 1) / 2 + (j - i);
}

/// Field data at a batch of points. `hess` columns pack the upper triangle
/// (i<=j) in sym_index order.
struct FieldJet {
  int dim = 0;
  int order = 0;
  Eigen::VectorXd value;
  Eigen::MatrixXd grad;
  Eigen::MatrixXd hess;

  void resize(int d, int ord, Eigen::Index n) {
    dim = d;
    order = ord;
    value.resize(n);
    grad.resize(ord >= 1 ? n : 0, d);
    hess.resize(ord >= 2 ? n : 0, sym_size(d));
  }
  double hess_at(Eigen::Index n, int i, int j) const { return hess(n, sym_index(dim, i, j)); }
};

/// A scalar space field with derivatives: the contract every consumer of the
/// level-set marker sees, whether the field is analytic, one network, a
/// multi-level composition or a reinitialized product.
class FieldProbe {
 public:
  virtual ~FieldProbe() = default;
  virtual int dim() const = 0;
  /// order in {0,1,2}.
  virtual void eval(const Eigen::MatrixXd& X, int order, FieldJet& out) const = 0;

  double value_at(const Eigen::VectorXd& x) const;
  Eigen::VectorXd grad_at(const Eigen::VectorXd& x) const;
  FieldJet jet_at(const Eigen::VectorXd& x, int order) const;
};

using ProbePtr = std::shared_ptr<const FieldProbe>;

/// Closed-form field; grad/hess callbacks may be omitted when never queried.
class AnalyticProbe : public FieldProbe {
 public:
  using ValueFn = std::function<double(const Eigen::VectorXd&)>;
  using GradFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
  using HessFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

  AnalyticProbe(int dim, ValueFn value, GradFn grad = nullptr, HessFn hess = nullptr)
      : dim_(dim), value_(std::move(value)), grad_(std::move(grad)), hess_(std::move(hess)) {}

  int dim() const override { return dim_; }
  void eval(const Eigen::MatrixXd& X, int order, FieldJet& out) const override;

 private:
  int dim_;
  ValueFn value_;
  GradFn grad_;
  HessFn hess_;
};

/// Signed distance to a sphere/circle: |x - c| - R.
ProbePtr make_sphere_probe(const Eigen::VectorXd& center, double radius);
/// n . x - offset with |n| = 1.
ProbePtr make_plane_probe(const Eigen::VectorXd& normal, double offset);

/// One network evaluated at (x[, t* frozen]): spatial derivatives only.
class MlpProbe : public FieldProbe {
 public:
  /// frozen_time: appended as a constant last input when has_time is true.
  MlpProbe(const nn::NetworkParams& p, int spatial_dim, bool has_time, double frozen_time = 1.0);

  int dim() const override { return dim_; }
  void eval(const Eigen::MatrixXd& X, int order, FieldJet& out) const override;

 private:
  nn::Mlp<double> net_;
  int dim_;
  bool has_time_;
  double frozen_time_;
};

/// Composed hand-off field F(x) = A(x) + beta * B(x, grad A(x)) with both
/// networks optionally carrying a frozen t* input. Exact derivatives include
/// the chain through the gradient features, which takes A to third order.
class MultiLevelProbe : public FieldProbe {
 public:
  MultiLevelProbe(const nn::NetworkParams& net1, const nn::NetworkParams& net2, double beta,
                  int spatial_dim, bool has_time, double frozen_time = 1.0);

  int dim() const override { return dim_; }
  void eval(const Eigen::MatrixXd& X, int order, FieldJet& out) const override;

 private:
  nn::Mlp<double> a_, b_;
  double beta_;
  int dim_;
  bool has_time_;
  double frozen_time_;
};

/// Reinitialized field phi(x) = exp(z(x)) * F(x); the strictly positive
/// multiplier preserves the zero contour exactly.
class PinnRProbe : public FieldProbe {
 public:
  PinnRProbe(const nn::NetworkParams& znet, ProbePtr inner);

  int dim() const override { return dim_; }
  void eval(const Eigen::MatrixXd& X, int order, FieldJet& out) const override;

 private:
  nn::Mlp<double> z_;
  ProbePtr inner_;
  int dim_;
};

}  // namespace pflow::ls
