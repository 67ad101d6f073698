#pragma once

#include <Eigen/Dense>
#include <array>
#include <vector>

#include "pflow/batched.hpp"

namespace pflow::nn {

/// Plane layout for multivariate Taylor jets in `dim` variables up to
/// `order` (<= 3): one plane per sorted derivative multi-index, the value
/// plane first. Propagating jets through the network gives exact partial
/// derivatives of the output w.r.t. the seeded inputs.
struct JetSpec {
  struct Tuple {
    std::array<int, 3> ix{-1, -1, -1};
    int len = 0;
    // plane ids of the sub-derivatives used by the chain rule
    int p_i = -1, p_j = -1, p_k = -1;
    int p_ij = -1, p_ik = -1, p_jk = -1;
  };

  int dim = 0, order = 0;
  std::vector<Tuple> tuples;

  static JetSpec make(int dim, int order);
  int index1(int i) const;
  int index2(int i, int j) const;
  int index3(int i, int j, int k) const;
};

/// Output jets at a batch of points: planes[t][n] = D^t N(x_n).
struct MlpJet {
  JetSpec spec;
  std::vector<Eigen::VectorXd> planes;
};

/// Propagates jets through `net` at rows of X. Jet variable i is seeded on
/// input column active_cols[i]; all other columns are frozen constants.
MlpJet jet_eval(const Mlp<double>& net, const Eigen::MatrixXd& X,
                const std::vector<int>& active_cols, const JetSpec& spec);

}  // namespace pflow::nn
