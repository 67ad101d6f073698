#include "pflow/nn.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace pflow::nn {

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l)
    n += static_cast<std::size_t>(weights[l].size()) + static_cast<std::size_t>(biases[l].size());
  return n;
}

Eigen::VectorXd NetworkParams::flatten() const {
  Eigen::VectorXd flat(parameter_count());
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const auto& W = weights[l];
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c) flat[k++] = W(r, c);
    for (Eigen::Index r = 0; r < biases[l].size(); ++r) flat[k++] = biases[l][r];
  }
  return flat;
}

void NetworkParams::unflatten(const Eigen::VectorXd& flat) {
  if (static_cast<std::size_t>(flat.size()) != parameter_count())
    throw std::invalid_argument("unflatten: size mismatch");
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    auto& W = weights[l];
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = flat[k++];
    for (Eigen::Index r = 0; r < biases[l].size(); ++r) biases[l][r] = flat[k++];
  }
}

NetworkParams init_xavier(const std::vector<int>& dims, std::uint64_t seed) {
  if (dims.size() < 2) throw std::invalid_argument("init_xavier: need at least input and output dims");
  for (int d : dims)
    if (d <= 0) throw std::invalid_argument("init_xavier: zero-width layer");

  NetworkParams p;
  p.dims = dims;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int fan_in = dims[l], fan_out = dims[l + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> uni(-bound, bound);
    Eigen::MatrixXd W(fan_out, fan_in);
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = uni(rng);
    p.weights.push_back(std::move(W));
    p.biases.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return p;
}

void save_params(const NetworkParams& p, std::ostream& os) {
  os << "pflow-mlp 1\n";
  os << "dims " << p.dims.size();
  for (int d : p.dims) os << ' ' << d;
  os << "\nactivation tanh linear-output\nvalues\n";
  os.precision(17);
  const Eigen::VectorXd flat = p.flatten();
  for (Eigen::Index i = 0; i < flat.size(); ++i) os << flat[i] << '\n';
}

NetworkParams load_params(std::istream& is) {
  std::string magic;
  int version = 0;
  is >> magic >> version;
  if (magic != "pflow-mlp" || version != 1)
    throw std::runtime_error("load_params: unrecognized checkpoint header");
  std::string tok;
  std::size_t ndims = 0;
  is >> tok >> ndims;
  if (tok != "dims" || ndims < 2) throw std::runtime_error("load_params: bad dims line");
  std::vector<int> dims(ndims);
  for (auto& d : dims) is >> d;
  std::string act, out;
  is >> tok >> act >> out;
  if (tok != "activation") throw std::runtime_error("load_params: bad activation line");
  is >> tok;
  if (tok != "values") throw std::runtime_error("load_params: missing values block");

  NetworkParams p;
  p.dims = dims;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    p.weights.emplace_back(dims[l + 1], dims[l]);
    p.biases.emplace_back(Eigen::VectorXd::Zero(dims[l + 1]));
  }
  Eigen::VectorXd flat(p.parameter_count());
  for (Eigen::Index i = 0; i < flat.size(); ++i)
    if (!(is >> flat[i])) throw std::runtime_error("load_params: truncated values block");
  p.unflatten(flat);
  return p;
}

void save_params_file(const NetworkParams& p, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_params_file: cannot open " + path);
  save_params(p, os);
}

NetworkParams load_params_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_params_file: cannot open " + path);
  return load_params(is);
}

template <typename S>
void adam_update(Eigen::Ref<Eigen::Vector<S, Eigen::Dynamic>> params,
                 const Eigen::Ref<const Eigen::Vector<S, Eigen::Dynamic>>& grad,
                 AdamState<S>& state, const AdamConfig& cfg) {
  if (!grad.allFinite())
    throw std::runtime_error("adam_update: non-finite gradient at step " +
                             std::to_string(state.step + 1));
  if (state.m.size() != params.size()) state.resize(params.size());
  ++state.step;
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  state.m = b1 * state.m + (S(1) - b1) * grad;
  state.v = b2 * state.v + (S(1) - b2) * grad.cwiseProduct(grad);
  const S corr1 = S(1) - static_cast<S>(std::pow(cfg.beta1, state.step));
  const S corr2 = S(1) - static_cast<S>(std::pow(cfg.beta2, state.step));
  const S lr = static_cast<S>(cfg.lr), eps = static_cast<S>(cfg.eps);
  params -= (lr / corr1) * state.m.cwiseQuotient(
                               ((state.v / corr2).cwiseSqrt().array() + eps).matrix());
}

template void adam_update<double>(Eigen::Ref<Eigen::VectorXd>,
                                  const Eigen::Ref<const Eigen::VectorXd>&, AdamState<double>&,
                                  const AdamConfig&);
template void adam_update<float>(Eigen::Ref<Eigen::VectorXf>,
                                 const Eigen::Ref<const Eigen::VectorXf>&, AdamState<float>&,
                                 const AdamConfig&);

TapeNet make_tape_net(const NetworkParams& p, ad::Tape& tape) {
  TapeNet net;
  net.shape = &p;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const auto& W = p.weights[l];
    std::vector<ad::Var> wv;
    wv.reserve(static_cast<std::size_t>(W.size()));
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c) {
        wv.push_back(tape.leaf(W(r, c)));
        net.all.push_back(wv.back());
      }
    net.weights.push_back(std::move(wv));
    std::vector<ad::Var> bv;
    for (Eigen::Index r = 0; r < p.biases[l].size(); ++r) {
      bv.push_back(tape.leaf(p.biases[l][r]));
      net.all.push_back(bv.back());
    }
    net.biases.push_back(std::move(bv));
  }
  return net;
}

namespace {

ad::Var forward_impl(const std::vector<int>& dims,
                     const std::function<ad::Var(std::size_t, int, int)>& w,
                     const std::function<ad::Var(std::size_t, int)>& b,
                     std::span<const ad::Var> x, ad::Tape& tape) {
  if (static_cast<int>(x.size()) != dims.front())
    throw std::invalid_argument("forward: input dimension mismatch");
  std::vector<ad::Var> h(x.begin(), x.end());
  const std::size_t n_layers = dims.size() - 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const int rows = dims[l + 1], cols = dims[l];
    std::vector<ad::Var> z(rows);
    for (int r = 0; r < rows; ++r) {
      ad::Var acc = b(l, r);
      for (int c = 0; c < cols; ++c) acc = acc + w(l, r, c) * h[c];
      z[r] = (l + 1 < n_layers) ? ad::tanh(acc) : acc;  // linear output layer
    }
    h = std::move(z);
  }
  if (h.size() != 1) throw std::invalid_argument("forward: scalar output expected");
  return h[0];
}

}  // namespace

ad::Var forward(const TapeNet& net, std::span<const ad::Var> x, ad::Tape& tape) {
  const auto& p = *net.shape;
  return forward_impl(
      p.dims,
      [&](std::size_t l, int r, int c) { return net.weights[l][static_cast<std::size_t>(r) * p.dims[l] + c]; },
      [&](std::size_t l, int r) { return net.biases[l][r]; }, x, tape);
}

ad::Var forward(const NetworkParams& p, std::span<const ad::Var> x, ad::Tape& tape) {
  return forward_impl(
      p.dims, [&](std::size_t l, int r, int c) { return tape.constant(p.weights[l](r, c)); },
      [&](std::size_t l, int r) { return tape.constant(p.biases[l][r]); }, x, tape);
}

TrainResult train(const TapeLossFn& loss_fn, NetworkParams params, int n_iters, double lr,
                  const AdamConfig& base) {
  AdamConfig cfg = base;
  cfg.lr = lr;
  AdamState<double> state;
  Eigen::VectorXd flat = params.flatten();
  std::vector<double> history;
  history.reserve(static_cast<std::size_t>(n_iters));

  ad::Tape tape;
  for (int it = 0; it < n_iters; ++it) {
    tape.clear();
    params.unflatten(flat);
    TapeNet net = make_tape_net(params, tape);
    ad::Var loss = loss_fn(net, tape);
    const double L = loss.value();
    if (!std::isfinite(L))
      throw std::runtime_error("train: non-finite loss at iteration " + std::to_string(it));
    history.push_back(L);
    std::vector<double> g = tape.gradient(loss, net.all);
    Eigen::Map<const Eigen::VectorXd> gmap(g.data(), static_cast<Eigen::Index>(g.size()));
    Eigen::VectorXd grad = gmap;
    adam_update<double>(flat, grad, state, cfg);
  }
  params.unflatten(flat);
  return {std::move(params), std::move(history)};
}

}  // namespace pflow::nn
