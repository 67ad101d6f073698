#include "pflow/batched.hpp"

#include <cmath>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pflow::nn {

namespace {

template <typename S>
Eigen::Index flat_size(const std::vector<int>& dims) {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l)
    n += static_cast<Eigen::Index>(dims[l + 1]) * dims[l] + dims[l + 1];
  return n;
}

// Row-major weight blocks, matching NetworkParams::flatten order.
template <typename S>
using RowMajorMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename S>
void from_flat(const std::vector<int>& dims, const VecX<S>& flat, std::vector<MatX<S>>& W,
               std::vector<VecX<S>>& b) {
  W.resize(dims.size() - 1);
  b.resize(dims.size() - 1);
  Eigen::Index k = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const Eigen::Index rows = dims[l + 1], cols = dims[l];
    W[l] = RowMajorMap<S>(const_cast<S*>(flat.data()) + k, rows, cols);
    k += rows * cols;
    b[l] = flat.segment(k, rows);
    k += rows;
  }
}

template <typename S>
NetworkParams params_from_flat(const std::vector<int>& dims, const VecX<S>& flat) {
  NetworkParams p;
  p.dims = dims;
  std::vector<MatX<S>> W;
  std::vector<VecX<S>> b;
  from_flat<S>(dims, flat, W, b);
  for (std::size_t l = 0; l < W.size(); ++l) {
    p.weights.push_back(W[l].template cast<double>());
    p.biases.push_back(b[l].template cast<double>());
  }
  return p;
}

template <typename S>
struct FlatOffsets {
  std::vector<Eigen::Index> W, b;
  explicit FlatOffsets(const std::vector<int>& dims) : W(dims.size() - 1), b(dims.size() - 1) {
    Eigen::Index k = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      W[l] = k;
      k += static_cast<Eigen::Index>(dims[l + 1]) * dims[l];
      b[l] = k;
      k += dims[l + 1];
    }
  }
};

}  // namespace

template <typename S>
Mlp<S> Mlp<S>::from(const NetworkParams& p) {
  Mlp<S> m;
  m.dims = p.dims;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    m.W.push_back(p.weights[l].template cast<S>());
    m.b.push_back(p.biases[l].template cast<S>());
  }
  return m;
}

template <typename S>
NetworkParams Mlp<S>::to_params() const {
  NetworkParams p;
  p.dims = dims;
  for (std::size_t l = 0; l < W.size(); ++l) {
    p.weights.push_back(W[l].template cast<double>());
    p.biases.push_back(b[l].template cast<double>());
  }
  return p;
}

template <typename S>
VecX<S> Mlp<S>::value(const MatX<S>& X) const {
  if (X.cols() != input_dim()) throw std::invalid_argument("Mlp::value: input dim mismatch");
  const int L = hidden_layers();
  MatX<S> H = X, Z;
  for (int l = 0; l < L; ++l) {
    Z.noalias() = H * W[l].transpose();
    H = (Z.rowwise() + b[l].transpose()).array().tanh().matrix();
  }
  Z.noalias() = H * W[L].transpose();
  return Z.col(0).array() + b[L][0];
}

template <typename S>
void Mlp<S>::value_and_grad(const MatX<S>& X, VecX<S>& y, MatX<S>& g) const {
  if (X.cols() != input_dim()) throw std::invalid_argument("Mlp::value_and_grad: input dim mismatch");
  const int L = hidden_layers();
  std::vector<MatX<S>> H(L + 1), Sg(L + 1);
  MatX<S> Z;
  H[0] = X;
  for (int l = 1; l <= L; ++l) {
    Z.noalias() = H[l - 1] * W[l - 1].transpose();
    H[l] = (Z.rowwise() + b[l - 1].transpose()).array().tanh().matrix();
    Sg[l] = (1 - H[l].array().square()).matrix();
  }
  Z.noalias() = H[L] * W[L].transpose();
  y = Z.col(0).array() + b[L][0];
  MatX<S> A = Sg[L].array().rowwise() * W[L].row(0).array();  // adjoint of z_L
  MatX<S> A2;
  for (int l = L - 1; l >= 1; --l) {
    A2.noalias() = A * W[l];
    A = A2.array() * Sg[l].array();
  }
  g.noalias() = A * W[0];
}

// ---- ResidualTrainer --------------------------------------------------------
//
// The per-iteration work is blocked over rows so one block's forward and
// backward activations stay cache-resident, and blocks are distributed over
// OpenMP threads with per-thread gradient buffers. The static schedule and
// the fixed reduction order keep results bit-reproducible for a fixed
// OMP_NUM_THREADS.

namespace {

constexpr Eigen::Index kBlockRows = 256;

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace

template <typename S>
ResidualTrainer<S>::ResidualTrainer(const NetworkParams& p, std::vector<ResidualBatch<S>> batches)
    : dims_(p.dims), batches_(std::move(batches)) {
  flat_ = p.flatten().template cast<S>();
  adam_.resize(flat_.size());
  term_history_.resize(batches_.size());
  for (const auto& bt : batches_) {
    if (bt.X.cols() != dims_.front())
      throw std::invalid_argument("ResidualTrainer: batch input dim mismatch");
    if (bt.V.size() != 0 && (bt.V.rows() != bt.X.rows() || bt.V.cols() != bt.X.cols()))
      throw std::invalid_argument("ResidualTrainer: tangent shape mismatch");
    if (bt.a.size() != bt.X.rows() || bt.b.size() != bt.X.rows() || bt.c.size() != bt.X.rows())
      throw std::invalid_argument("ResidualTrainer: coefficient size mismatch");
  }
}

template <typename S>
double ResidualTrainer<S>::loss_and_grad(VecX<S>& grad, std::vector<double>* term_losses) {
  const int L = static_cast<int>(dims_.size()) - 2;  // hidden layers
  std::vector<MatX<S>> W;
  std::vector<VecX<S>> b;
  from_flat<S>(dims_, flat_, W, b);

  grad.setZero(flat_.size());
  if (term_losses) term_losses->assign(batches_.size(), 0.0);
  const FlatOffsets<S> off(dims_);

  const int nth = max_threads();
  if (static_cast<int>(pass_.size()) != nth) pass_.assign(nth, Pass{});
  std::vector<VecX<S>> tgrad(nth);
  std::vector<double> tloss(nth);

  double total = 0.0;
  for (std::size_t kb = 0; kb < batches_.size(); ++kb) {
    const auto& bt = batches_[kb];
    const bool jvp = bt.V.size() != 0;
    const Eigen::Index M = bt.X.rows();
    const Eigen::Index nblocks = (M + kBlockRows - 1) / kBlockRows;
    const S scale = static_cast<S>(2.0 * bt.weight / static_cast<double>(M));

    for (int t = 0; t < nth; ++t) {
      tgrad[t].setZero(flat_.size());
      tloss[t] = 0.0;
    }

#pragma omp parallel num_threads(nth)
    {
#ifdef _OPENMP
      const int tid = omp_get_thread_num();
#else
      const int tid = 0;
#endif
      Pass& ws = pass_[tid];
      if (ws.H.empty()) {
        ws.H.resize(L + 1);
        ws.T.resize(L + 1);
        ws.Sg.resize(L + 1);
        ws.TZ.resize(L + 1);
      }
      auto gWt = [&](int l) {
        return RowMajorMap<S>(tgrad[tid].data() + off.W[l], dims_[l + 1], dims_[l]);
      };
      auto gBt = [&](int l) { return Eigen::Map<VecX<S>>(tgrad[tid].data() + off.b[l], dims_[l + 1]); };

      MatX<S> Av, At, Dv, Dt;
      VecX<S> y, ydot, r, drb, dra;

#pragma omp for schedule(static)
      for (Eigen::Index blk = 0; blk < nblocks; ++blk) {
        const Eigen::Index r0 = blk * kBlockRows;
        const Eigen::Index bs = std::min<Eigen::Index>(kBlockRows, M - r0);

        ws.H[0] = bt.X.middleRows(r0, bs);
        if (jvp) ws.T[0] = bt.V.middleRows(r0, bs);
        for (int l = 1; l <= L; ++l) {
          ws.TZ[l].resize(bs, dims_[l]);
          ws.TZ[l].noalias() = ws.H[l - 1] * W[l - 1].transpose();
          ws.H[l] = (ws.TZ[l].rowwise() + b[l - 1].transpose()).array().tanh().matrix();
          ws.Sg[l] = (1 - ws.H[l].array().square()).matrix();
          if (jvp) {
            ws.TZ[l].noalias() = ws.T[l - 1] * W[l - 1].transpose();
            ws.T[l] = ws.TZ[l].array() * ws.Sg[l].array();
          }
        }
        y.noalias() = ws.H[L] * W[L].row(0).transpose();
        y.array() += b[L][0];
        r = bt.b.segment(r0, bs).array() * y.array() + bt.c.segment(r0, bs).array();
        if (jvp) {
          ydot.noalias() = ws.T[L] * W[L].row(0).transpose();
          r.array() += bt.a.segment(r0, bs).array() * ydot.array();
        }
        tloss[tid] += static_cast<double>(r.squaredNorm());

        drb = scale * r.array() * bt.b.segment(r0, bs).array();
        gWt(L).noalias() += drb.transpose() * ws.H[L];
        gBt(L)(0) += drb.sum();
        Av.noalias() = drb * W[L];
        if (jvp) {
          dra = scale * r.array() * bt.a.segment(r0, bs).array();
          gWt(L).noalias() += dra.transpose() * ws.T[L];
          At.noalias() = dra * W[L];
        }

        for (int l = L; l >= 1; --l) {
          if (jvp) {
            Dt = At.array() * ws.Sg[l].array();
            Av.array() += (At.array() * ws.TZ[l].array()) * (S(-2) * ws.H[l].array());
          }
          Dv = Av.array() * ws.Sg[l].array();
          gWt(l - 1).noalias() += Dv.transpose() * ws.H[l - 1];
          if (jvp) gWt(l - 1).noalias() += Dt.transpose() * ws.T[l - 1];
          gBt(l - 1) += Dv.colwise().sum().transpose();
          if (l > 1) {
            Av.noalias() = Dv * W[l - 1];
            if (jvp) At.noalias() = Dt * W[l - 1];
          }
        }
      }
    }

    double term = 0.0;
    for (int t = 0; t < nth; ++t) {
      grad += tgrad[t];
      term += tloss[t];
    }
    term *= bt.weight / static_cast<double>(M);
    total += term;
    if (term_losses) (*term_losses)[kb] = term;
  }
  return total;
}

template <typename S>
void ResidualTrainer<S>::run(int iters, const AdamConfig& cfg) {
  VecX<S> grad;
  std::vector<double> terms;
  for (int it = 0; it < iters; ++it) {
    const double L = loss_and_grad(grad, &terms);
    if (!std::isfinite(L))
      throw std::runtime_error("ResidualTrainer: non-finite loss at iteration " +
                               std::to_string(history_.size()));
    history_.push_back(L);
    for (std::size_t k = 0; k < terms.size(); ++k) term_history_[k].push_back(terms[k]);
    adam_update<S>(flat_, grad, adam_, cfg);
  }
}

template <typename S>
NetworkParams ResidualTrainer<S>::params() const {
  return params_from_flat<S>(dims_, flat_);
}

// ---- EikonalTrainer ---------------------------------------------------------
//
// phi = exp(y) F needs the full spatial gradient of y, so the stack carries
// the value chain plus one tangent chain per input dimension.

template <typename S>
EikonalTrainer<S>::EikonalTrainer(const NetworkParams& p, MatX<S> X, VecX<S> F, MatX<S> gradF)
    : dims_(p.dims), X_(std::move(X)), F_(std::move(F)), gradF_(std::move(gradF)) {
  if (X_.cols() != dims_.front()) throw std::invalid_argument("EikonalTrainer: input dim mismatch");
  if (gradF_.rows() != X_.rows() || gradF_.cols() != X_.cols() || F_.size() != X_.rows())
    throw std::invalid_argument("EikonalTrainer: field data shape mismatch");
  flat_ = p.flatten().template cast<S>();
  adam_.resize(flat_.size());
}

template <typename S>
double EikonalTrainer<S>::loss_and_grad(VecX<S>& grad) {
  const int L = static_cast<int>(dims_.size()) - 2;
  const int d = dims_.front();
  const Eigen::Index M = X_.rows();
  const Eigen::Index R = (1 + d) * M;  // value chain + d tangent chains
  std::vector<MatX<S>> W;
  std::vector<VecX<S>> b;
  from_flat<S>(dims_, flat_, W, b);

  grad.setZero(flat_.size());
  const FlatOffsets<S> off(dims_);
  auto gW = [&](int l) { return RowMajorMap<S>(grad.data() + off.W[l], dims_[l + 1], dims_[l]); };
  auto gB = [&](int l) { return Eigen::Map<VecX<S>>(grad.data() + off.b[l], dims_[l + 1]); };

  std::vector<MatX<S>> H(L + 1), Sg(L + 1), TZ(L + 1);
  H[0] = MatX<S>::Zero(R, d);
  H[0].topRows(M) = X_;
  for (int j = 0; j < d; ++j) H[0].col(j).segment((1 + j) * M, M).setOnes();

  MatX<S> ZZ;
  for (int l = 1; l <= L; ++l) {
    ZZ.noalias() = H[l - 1] * W[l - 1].transpose();
    H[l].resize(R, dims_[l]);
    H[l].topRows(M) = (ZZ.topRows(M).rowwise() + b[l - 1].transpose()).array().tanh().matrix();
    Sg[l] = (1 - H[l].topRows(M).array().square()).matrix();
    TZ[l] = ZZ.bottomRows(d * M);
    for (int j = 0; j < d; ++j)
      H[l].middleRows((1 + j) * M, M) = TZ[l].middleRows(j * M, M).array() * Sg[l].array();
  }
  VecX<S> yy(R);
  yy.noalias() = H[L] * W[L].row(0).transpose();
  VecX<S> N = (yy.head(M).array() + b[L][0]).exp();
  MatX<S> P(M, d);  // grad phi
  for (int j = 0; j < d; ++j)
    P.col(j) = N.array() * (yy.segment((1 + j) * M, M).array() * F_.array() + gradF_.col(j).array());
  VecX<S> q = P.rowwise().norm();
  VecX<S> r = q.array() - S(1);
  const double loss = static_cast<double>(r.squaredNorm()) / static_cast<double>(M);

  VecX<S> dr = r * static_cast<S>(2.0 / static_cast<double>(M));
  const S tiny = static_cast<S>(1e-30);
  VecX<S> qsafe = q.cwiseMax(tiny);
  MatX<S> Phat = P.array().colwise() * (dr.array() / qsafe.array());

  VecX<S> drstack(R);
  drstack.head(M) = (Phat.array() * P.array()).rowwise().sum();  // adjoint of y through exp
  for (int j = 0; j < d; ++j)
    drstack.segment((1 + j) * M, M) = Phat.col(j).array() * N.array() * F_.array();

  gW(L).noalias() += drstack.transpose() * H[L];
  gB(L)(0) += drstack.head(M).sum();

  MatX<S> Adj, Delta;
  Adj.noalias() = drstack * W[L];
  for (int l = L; l >= 1; --l) {
    Delta.resize(R, dims_[l]);
    for (int j = 0; j < d; ++j) {
      auto adj_t = Adj.middleRows((1 + j) * M, M);
      Delta.middleRows((1 + j) * M, M) = adj_t.array() * Sg[l].array();
      Adj.topRows(M).array() += (adj_t.array() * TZ[l].middleRows(j * M, M).array()) *
                                (S(-2) * H[l].topRows(M).array());
    }
    Delta.topRows(M) = Adj.topRows(M).array() * Sg[l].array();
    gW(l - 1).noalias() += Delta.transpose() * H[l - 1];
    gB(l - 1) += Delta.topRows(M).colwise().sum().transpose();
    if (l > 1) {
      Adj.resize(R, dims_[l - 1]);
      Adj.noalias() = Delta * W[l - 1];
    }
  }
  return loss;
}

template <typename S>
void EikonalTrainer<S>::run(int iters, const AdamConfig& cfg) {
  VecX<S> grad;
  for (int it = 0; it < iters; ++it) {
    const double L = loss_and_grad(grad);
    if (!std::isfinite(L))
      throw std::runtime_error("EikonalTrainer: non-finite loss at iteration " +
                               std::to_string(history_.size()));
    history_.push_back(L);
    adam_update<S>(flat_, grad, adam_, cfg);
  }
}

template <typename S>
NetworkParams EikonalTrainer<S>::params() const {
  return params_from_flat<S>(dims_, flat_);
}

template struct Mlp<double>;
template struct Mlp<float>;
template class ResidualTrainer<double>;
template class ResidualTrainer<float>;
template class EikonalTrainer<double>;
template class EikonalTrainer<float>;

}  // namespace pflow::nn
