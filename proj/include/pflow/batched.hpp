#pragma once

#include <Eigen/Dense>
#include <array>
#include <optional>
#include <vector>

#include "pflow/nn.hpp"

namespace pflow::nn {

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using VecX = Eigen::Vector<S, Eigen::Dynamic>;
template <typename S>
using ArrX = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic>;

/// Dense mirror of NetworkParams for batched evaluation. Collocation points
/// are matrix rows, so every layer transition is one GEMM.
template <typename S>
struct Mlp {
  std::vector<int> dims;
  std::vector<MatX<S>> W;
  std::vector<VecX<S>> b;

  static Mlp from(const NetworkParams& p);
  NetworkParams to_params() const;

  int input_dim() const { return dims.front(); }
  int hidden_layers() const { return static_cast<int>(W.size()) - 1; }

  /// N(x) for each row of X.
  VecX<S> value(const MatX<S>& X) const;

  /// N(x) and the full input gradient dN/dx (one reverse sweep).
  void value_and_grad(const MatX<S>& X, VecX<S>& y, MatX<S>& g) const;
};

/// One term of a training loss over a batch of points:
///   r_i = a_i * (V_i . dN/dx)(X_i) + b_i * N(X_i) + c_i
/// contributing `weight * mean_i r_i^2` to the loss. V empty => no
/// directional-derivative part (a ignored).
template <typename S>
struct ResidualBatch {
  MatX<S> X;
  MatX<S> V;
  VecX<S> a, b, c;
  double weight = 1.0;
};

/// Full-batch Adam trainer for losses assembled from ResidualBatch terms.
/// Gradients w.r.t. the parameters are computed by backpropagating through
/// both the forward pass and the tangent (JVP) pass; exactly the same values
/// the tape path produces, at GEMM speed.
template <typename S>
class ResidualTrainer {
 public:
  ResidualTrainer(const NetworkParams& p, std::vector<ResidualBatch<S>> batches);

  /// One loss + parameter-gradient evaluation at the current parameters.
  double loss_and_grad(VecX<S>& grad, std::vector<double>* term_losses = nullptr);

  /// Runs `iters` Adam steps, appending the pre-update loss per iteration.
  void run(int iters, const AdamConfig& cfg);

  NetworkParams params() const;
  const std::vector<double>& history() const { return history_; }
  const std::vector<std::vector<double>>& term_history() const { return term_history_; }

 private:
  std::vector<int> dims_;
  VecX<S> flat_;
  AdamState<S> adam_;
  std::vector<ResidualBatch<S>> batches_;
  std::vector<double> history_;
  std::vector<std::vector<double>> term_history_;

  // reusable forward/tangent storage per batch (largest batch wins)
  struct Pass {
    std::vector<MatX<S>> H, T, Sg, TZ;  // per hidden layer (+input slot for H,T)
  };
  std::vector<Pass> pass_;
};

/// Trainer for the Eikonal reinitialization loss
///   phi(x) = exp(y(x)) * F(x),  loss = mean_i (||grad phi(x_i)|| - 1)^2
/// with per-point constants F and grad F. exp of the linear output keeps the
/// multiplier strictly positive.
template <typename S>
class EikonalTrainer {
 public:
  EikonalTrainer(const NetworkParams& p, MatX<S> X, VecX<S> F, MatX<S> gradF);

  double loss_and_grad(VecX<S>& grad);
  void run(int iters, const AdamConfig& cfg);

  NetworkParams params() const;
  const std::vector<double>& history() const { return history_; }

 private:
  std::vector<int> dims_;
  VecX<S> flat_;
  AdamState<S> adam_;
  MatX<S> X_;
  VecX<S> F_;
  MatX<S> gradF_;
  std::vector<double> history_;
};

extern template struct Mlp<double>;
extern template struct Mlp<float>;
extern template class ResidualTrainer<double>;
extern template class ResidualTrainer<float>;
extern template class EikonalTrainer<double>;
extern template class EikonalTrainer<float>;

}  // namespace pflow::nn
