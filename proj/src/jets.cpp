#include "pflow/jets.hpp"

#include <map>
#include <stdexcept>

namespace pflow::nn {

namespace {

std::array<int, 3> key3(int a, int b, int c) { return {a, b, c}; }

}  // namespace

JetSpec JetSpec::make(int dim, int order) {
  if (dim < 1 || order < 0 || order > 3) throw std::invalid_argument("JetSpec: order must be 0..3");
  JetSpec s;
  s.dim = dim;
  s.order = order;
  std::map<std::array<int, 3>, int> lookup;
  auto add = [&](std::array<int, 3> ix, int len) {
    Tuple t;
    t.ix = ix;
    t.len = len;
    lookup[ix] = static_cast<int>(s.tuples.size());
    s.tuples.push_back(t);
  };
  add(key3(-1, -1, -1), 0);
  if (order >= 1)
    for (int i = 0; i < dim; ++i) add(key3(i, -1, -1), 1);
  if (order >= 2)
    for (int i = 0; i < dim; ++i)
      for (int j = i; j < dim; ++j) add(key3(i, j, -1), 2);
  if (order >= 3)
    for (int i = 0; i < dim; ++i)
      for (int j = i; j < dim; ++j)
        for (int k = j; k < dim; ++k) add(key3(i, j, k), 3);

  auto at1 = [&](int i) { return lookup.at(key3(i, -1, -1)); };
  auto at2 = [&](int i, int j) {
    if (i > j) std::swap(i, j);
    return lookup.at(key3(i, j, -1));
  };
  for (auto& t : s.tuples) {
    if (t.len >= 1) t.p_i = at1(t.ix[0]);
    if (t.len >= 2) {
      t.p_j = at1(t.ix[1]);
      t.p_ij = at2(t.ix[0], t.ix[1]);
    }
    if (t.len == 3) {
      t.p_k = at1(t.ix[2]);
      t.p_ik = at2(t.ix[0], t.ix[2]);
      t.p_jk = at2(t.ix[1], t.ix[2]);
    }
  }
  return s;
}

int JetSpec::index1(int i) const { return 1 + i; }

int JetSpec::index2(int i, int j) const {
  if (i > j) std::swap(i, j);
  // offset of pair (i,j), i<=j, within the lexicographic pair block
  return 1 + dim + i * dim - i * (i - 1) / 2 + (j - i);
}

int JetSpec::index3(int i, int j, int k) const {
  int a = i, b = j, c = k;
  if (a > b) std::swap(a, b);
  if (b > c) std::swap(b, c);
  if (a > b) std::swap(a, b);
  int base = 1 + dim + dim * (dim + 1) / 2;
  int idx = 0;
  for (int x = 0; x < dim; ++x)
    for (int y = x; y < dim; ++y)
      for (int z = y; z < dim; ++z) {
        if (x == a && y == b && z == c) return base + idx;
        ++idx;
      }
  throw std::logic_error("JetSpec::index3: tuple out of range");
}

MlpJet jet_eval(const Mlp<double>& net, const Eigen::MatrixXd& X,
                const std::vector<int>& active_cols, const JetSpec& spec) {
  if (static_cast<int>(active_cols.size()) != spec.dim)
    throw std::invalid_argument("jet_eval: active_cols size must match spec.dim");
  if (X.cols() != net.input_dim()) throw std::invalid_argument("jet_eval: input dim mismatch");

  const Eigen::Index M = X.rows();
  const std::size_t P = spec.tuples.size();
  const int L = net.hidden_layers();

  // seed input planes
  std::vector<Eigen::MatrixXd> in(P), out(P);
  in[0] = X;
  for (std::size_t t = 1; t < P; ++t) in[t] = Eigen::MatrixXd::Zero(M, X.cols());
  if (spec.order >= 1)
    for (int i = 0; i < spec.dim; ++i) in[spec.index1(i)].col(active_cols[i]).setOnes();

  Eigen::ArrayXXd f0, f1, f2, f3;
  for (int l = 0; l <= L; ++l) {
    const auto& W = net.W[l];
    // affine
    for (std::size_t t = 0; t < P; ++t) out[t].noalias() = in[t] * W.transpose();
    out[0].rowwise() += net.b[l].transpose();
    if (l == L) break;  // linear output layer

    // tanh composition: derivatives of tanh at the affine value
    f0 = out[0].array().tanh();
    f1 = 1.0 - f0.square();
    if (spec.order >= 2) f2 = -2.0 * f0 * f1;
    if (spec.order >= 3) f3 = f1 * (6.0 * f0.square() - 2.0);

    for (std::size_t t = P; t-- > 0;) {
      const auto& tp = spec.tuples[t];
      switch (tp.len) {
        case 0:
          in[0] = f0.matrix();
          break;
        case 1:
          in[t] = (f1 * out[t].array()).matrix();
          break;
        case 2:
          in[t] = (f2 * out[tp.p_i].array() * out[tp.p_j].array() + f1 * out[t].array()).matrix();
          break;
        case 3:
          in[t] = (f3 * out[tp.p_i].array() * out[tp.p_j].array() * out[tp.p_k].array() +
                   f2 * (out[tp.p_i].array() * out[tp.p_jk].array() +
                         out[tp.p_j].array() * out[tp.p_ik].array() +
                         out[tp.p_k].array() * out[tp.p_ij].array()) +
                   f1 * out[t].array())
                      .matrix();
          break;
      }
    }
  }

  MlpJet jet;
  jet.spec = spec;
  jet.planes.resize(P);
  for (std::size_t t = 0; t < P; ++t) jet.planes[t] = out[t].col(0);
  return jet;
}

}  // namespace pflow::nn
