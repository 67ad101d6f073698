#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "pflow/autodiff.hpp"

namespace pflow::nn {

/// Fully-connected feedforward network parameters. Hidden layers use tanh,
/// the output layer is linear so the range is unbounded.
struct NetworkParams {
  std::vector<int> dims;  // input, hidden widths..., output
  std::vector<Eigen::MatrixXd> weights;  // weights[l]: dims[l+1] x dims[l]
  std::vector<Eigen::VectorXd> biases;   // biases[l]: dims[l+1]

  int input_dim() const { return dims.front(); }
  int output_dim() const { return dims.back(); }
  int layer_count() const { return static_cast<int>(weights.size()); }
  std::size_t parameter_count() const;

  /// Row-major layer-by-layer flattening: W0, b0, W1, b1, ...
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& flat);
};

/// Uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases. Deterministic
/// per seed.
NetworkParams init_xavier(const std::vector<int>& dims, std::uint64_t seed);

void save_params(const NetworkParams& p, std::ostream& os);
NetworkParams load_params(std::istream& is);
void save_params_file(const NetworkParams& p, const std::string& path);
NetworkParams load_params_file(const std::string& path);

// ---- Adam ------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment state matching a flat parameter vector.
template <typename S>
struct AdamState {
  Eigen::Vector<S, Eigen::Dynamic> m, v;
  long step = 0;

  void resize(Eigen::Index n) {
    m = Eigen::Vector<S, Eigen::Dynamic>::Zero(n);
    v = Eigen::Vector<S, Eigen::Dynamic>::Zero(n);
    step = 0;
  }
};

/// One bias-corrected Adam update of `params` in place. Throws
/// std::runtime_error naming the step if the gradient is not finite.
template <typename S>
void adam_update(Eigen::Ref<Eigen::Vector<S, Eigen::Dynamic>> params,
                 const Eigen::Ref<const Eigen::Vector<S, Eigen::Dynamic>>& grad,
                 AdamState<S>& state, const AdamConfig& cfg);

// ---- tape-based evaluation (reference path) --------------------------------

/// Network parameters recorded on a tape as leaf vars, so losses can be
/// differentiated w.r.t. them.
struct TapeNet {
  const NetworkParams* shape = nullptr;
  std::vector<std::vector<ad::Var>> weights;  // [l][row*cols+col]
  std::vector<std::vector<ad::Var>> biases;
  std::vector<ad::Var> all;  // flattened in NetworkParams::flatten order
};

TapeNet make_tape_net(const NetworkParams& p, ad::Tape& tape);

/// Scalar network output recorded on the tape; differentiable w.r.t. x (and
/// w.r.t. the parameters when `net` came from make_tape_net).
ad::Var forward(const TapeNet& net, std::span<const ad::Var> x, ad::Tape& tape);

/// Same, with the parameters baked in as constants.
ad::Var forward(const NetworkParams& p, std::span<const ad::Var> x, ad::Tape& tape);

// ---- generic training loop (tape path) --------------------------------------

struct TrainResult {
  NetworkParams params;
  std::vector<double> loss_history;
};

using TapeLossFn = std::function<ad::Var(const TapeNet&, ad::Tape&)>;

/// Full-batch Adam on a tape-recorded loss. The tape is cleared and the loss
/// re-recorded every iteration. Throws with the iteration index on
/// non-finite loss or gradient.
TrainResult train(const TapeLossFn& loss_fn, NetworkParams params, int n_iters, double lr,
                  const AdamConfig& base = {});

}  // namespace pflow::nn
