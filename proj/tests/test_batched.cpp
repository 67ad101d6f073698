#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "pflow/batched.hpp"
#include "pflow/jets.hpp"

using namespace pflow;
using nn::Mlp;
using nn::NetworkParams;
using nn::ResidualBatch;
using nn::ResidualTrainer;

namespace {

// Tape route for the same residual loss the batched trainer computes:
//   r_i = a_i * (V_i . dN/dx) + b_i * N(x_i) + c_i,  loss = w * mean r^2.
double tape_loss_and_grad(const NetworkParams& p, const ResidualBatch<double>& bt,
                          Eigen::VectorXd& grad) {
  ad::Tape tape;
  nn::TapeNet net = nn::make_tape_net(p, tape);
  const Eigen::Index M = bt.X.rows();
  ad::Var loss = tape.constant(0.0);
  for (Eigen::Index i = 0; i < M; ++i) {
    std::vector<ad::Var> xv;
    for (Eigen::Index j = 0; j < bt.X.cols(); ++j) xv.push_back(tape.leaf(bt.X(i, j)));
    ad::Var y = nn::forward(net, xv, tape);
    ad::Var r = tape.constant(bt.c[i]) + bt.b[i] * y;
    if (bt.V.size() != 0) {
      auto g = tape.gradient_as_vars(y, xv);
      ad::Var jvp = tape.constant(0.0);
      for (Eigen::Index j = 0; j < bt.X.cols(); ++j) jvp = jvp + bt.V(i, j) * g[j];
      r = r + bt.a[i] * jvp;
    }
    loss = loss + r * r;
  }
  loss = loss * (bt.weight / static_cast<double>(M));
  auto g = tape.gradient(loss, net.all);
  grad = Eigen::Map<Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size()));
  return loss.value();
}

ResidualBatch<double> random_batch(int M, int d, std::uint64_t seed, bool jvp) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  ResidualBatch<double> bt;
  bt.X.resize(M, d);
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < d; ++j) bt.X(i, j) = uni(rng);
  if (jvp) {
    bt.V.resize(M, d);
    for (int i = 0; i < M; ++i)
      for (int j = 0; j < d; ++j) bt.V(i, j) = uni(rng);
  }
  bt.a.resize(M);
  bt.b.resize(M);
  bt.c.resize(M);
  for (int i = 0; i < M; ++i) {
    bt.a[i] = uni(rng);
    bt.b[i] = uni(rng);
    bt.c[i] = uni(rng);
  }
  bt.weight = 0.7;
  return bt;
}

}  // namespace

TEST_CASE("Mlp value matches tape forward") {
  auto p = nn::init_xavier({3, 12, 12, 1}, 3);
  auto m = Mlp<double>::from(p);
  Eigen::MatrixXd X(5, 3);
  X.setRandom();
  Eigen::VectorXd y = m.value(X);
  for (int i = 0; i < 5; ++i) {
    ad::Tape t;
    std::vector<ad::Var> xv;
    for (int j = 0; j < 3; ++j) xv.push_back(t.leaf(X(i, j)));
    CHECK(y[i] == doctest::Approx(nn::forward(p, xv, t).value()).epsilon(1e-13));
  }
}

TEST_CASE("Mlp value_and_grad matches tape gradient") {
  auto p = nn::init_xavier({4, 10, 10, 1}, 17);
  auto m = Mlp<double>::from(p);
  Eigen::MatrixXd X(7, 4);
  X.setRandom();
  Eigen::VectorXd y;
  Eigen::MatrixXd g;
  m.value_and_grad(X, y, g);
  for (int i = 0; i < 7; ++i) {
    ad::Tape t;
    std::vector<ad::Var> xv;
    for (int j = 0; j < 4; ++j) xv.push_back(t.leaf(X(i, j)));
    ad::Var out = nn::forward(p, xv, t);
    CHECK(y[i] == doctest::Approx(out.value()).epsilon(1e-13));
    auto gt = t.gradient(out, xv);
    for (int j = 0; j < 4; ++j) CHECK(g(i, j) == doctest::Approx(gt[j]).epsilon(1e-11));
  }
}

TEST_CASE("ResidualTrainer gradient matches the tape route (dual route)") {
  auto p = nn::init_xavier({2, 8, 1}, 29);
  for (bool jvp : {false, true}) {
    auto bt = random_batch(10, 2, jvp ? 5u : 6u, jvp);
    Eigen::VectorXd tape_grad;
    const double tape_loss = tape_loss_and_grad(p, bt, tape_grad);

    ResidualTrainer<double> tr(p, {bt});
    Eigen::VectorXd fast_grad;
    const double fast_loss = tr.loss_and_grad(fast_grad);

    CHECK(fast_loss == doctest::Approx(tape_loss).epsilon(1e-12));
    REQUIRE(fast_grad.size() == tape_grad.size());
    const double scale = tape_grad.cwiseAbs().maxCoeff();
    CHECK((fast_grad - tape_grad).cwiseAbs().maxCoeff() < 1e-11 * (1 + scale));
  }
}

TEST_CASE("PINN-style loss gradient matches finite differences (2-8-1, 10 points)") {
  auto p = nn::init_xavier({2, 8, 1}, 31);
  auto bt = random_batch(10, 2, 77, true);
  ResidualTrainer<double> tr(p, {bt});
  Eigen::VectorXd grad;
  tr.loss_and_grad(grad);

  Eigen::VectorXd flat = p.flatten();
  const double h = 1e-6;
  std::mt19937_64 pick(123);
  std::uniform_int_distribution<Eigen::Index> idx(0, flat.size() - 1);
  for (int rep = 0; rep < 25; ++rep) {
    const Eigen::Index k = idx(pick);
    NetworkParams pp = p, pm = p;
    Eigen::VectorXd fp = flat, fm = flat;
    fp[k] += h;
    fm[k] -= h;
    pp.unflatten(fp);
    pm.unflatten(fm);
    Eigen::VectorXd dummy;
    ResidualTrainer<double> tp(pp, {bt}), tm(pm, {bt});
    const double fd = (tp.loss_and_grad(dummy) - tm.loss_and_grad(dummy)) / (2 * h);
    CHECK(std::abs(grad[k] - fd) <= 1e-4 * (1.0 + std::abs(fd)));
  }
}

TEST_CASE("ResidualTrainer: deterministic bit-identical history; f32 instantiation runs") {
  auto p = nn::init_xavier({2, 8, 1}, 41);
  auto bt = random_batch(32, 2, 99, true);
  nn::AdamConfig cfg;
  cfg.lr = 1e-3;

  ResidualTrainer<double> t1(p, {bt}), t2(p, {bt});
  t1.run(50, cfg);
  t2.run(50, cfg);
  REQUIRE(t1.history().size() == 50);
  for (int i = 0; i < 50; ++i) CHECK(t1.history()[i] == t2.history()[i]);

  // f32 instantiation: same loss and gradient up to single precision, and
  // training still reduces the loss
  ResidualBatch<float> btf;
  btf.X = bt.X.cast<float>();
  btf.V = bt.V.cast<float>();
  btf.a = bt.a.cast<float>();
  btf.b = bt.b.cast<float>();
  btf.c = bt.c.cast<float>();
  btf.weight = bt.weight;
  ResidualTrainer<float> tf(p, {btf});
  Eigen::VectorXf gf;
  Eigen::VectorXd gd;
  const double lf = tf.loss_and_grad(gf);
  ResidualTrainer<double> td(p, {bt});
  const double ld = td.loss_and_grad(gd);
  CHECK(std::abs(lf - ld) < 1e-5 * (1 + std::abs(ld)));
  CHECK((gf.cast<double>() - gd).cwiseAbs().maxCoeff() < 1e-4 * (1 + gd.cwiseAbs().maxCoeff()));
  tf.run(50, cfg);
  CHECK(tf.history().back() < tf.history().front());
}

TEST_CASE("jets match nested tape derivatives (order 3, 2 vars)") {
  auto p = nn::init_xavier({2, 6, 6, 1}, 53);
  auto m = Mlp<double>::from(p);
  Eigen::MatrixXd X(3, 2);
  X << 0.2, -0.4, 0.0, 0.9, -0.7, 0.3;
  const nn::JetSpec spec = nn::JetSpec::make(2, 3);
  nn::MlpJet jet = nn::jet_eval(m, X, {0, 1}, spec);

  for (int r = 0; r < 3; ++r) {
    ad::Tape t;
    std::vector<ad::Var> xv{t.leaf(X(r, 0)), t.leaf(X(r, 1))};
    ad::Var y = nn::forward(p, xv, t);
    CHECK(jet.planes[0][r] == doctest::Approx(y.value()).epsilon(1e-12));

    auto g1 = t.gradient_as_vars(y, xv);
    for (int i = 0; i < 2; ++i)
      CHECK(jet.planes[spec.index1(i)][r] == doctest::Approx(g1[i].value()).epsilon(1e-10));

    for (int i = 0; i < 2; ++i) {
      auto g2 = t.gradient_as_vars(g1[i], xv);
      for (int j = i; j < 2; ++j)
        CHECK(jet.planes[spec.index2(i, j)][r] ==
              doctest::Approx(g2[j].value()).epsilon(1e-8).scale(1e-6));
      for (int j = 0; j < 2; ++j) {
        auto g3 = t.gradient(g2[j], xv);
        for (int k = j; k < 2; ++k) {
          if (k < i) continue;
          CHECK(jet.planes[spec.index3(i, j, k)][r] ==
                doctest::Approx(g3[k]).epsilon(1e-7).scale(1e-6));
        }
      }
    }
  }
}

TEST_CASE("jets with frozen input column (order 2, subset of inputs)") {
  auto p = nn::init_xavier({3, 8, 1}, 61);
  auto m = Mlp<double>::from(p);
  Eigen::MatrixXd X(2, 3);
  X << 0.1, -0.2, 1.0, 0.4, 0.5, 1.0;  // third column frozen at 1
  const nn::JetSpec spec = nn::JetSpec::make(2, 2);
  nn::MlpJet jet = nn::jet_eval(m, X, {0, 1}, spec);

  for (int r = 0; r < 2; ++r) {
    ad::Tape t;
    std::vector<ad::Var> xv{t.leaf(X(r, 0)), t.leaf(X(r, 1)), t.leaf(1.0)};
    ad::Var y = nn::forward(p, xv, t);
    std::vector<ad::Var> active{xv[0], xv[1]};
    auto g1 = t.gradient_as_vars(y, active);
    CHECK(jet.planes[0][r] == doctest::Approx(y.value()).epsilon(1e-12));
    for (int i = 0; i < 2; ++i)
      CHECK(jet.planes[spec.index1(i)][r] == doctest::Approx(g1[i].value()).epsilon(1e-10));
    auto g2 = t.gradient(g1[0], active);
    CHECK(jet.planes[spec.index2(0, 0)][r] == doctest::Approx(g2[0]).epsilon(1e-9).scale(1e-9));
    CHECK(jet.planes[spec.index2(0, 1)][r] == doctest::Approx(g2[1]).epsilon(1e-9).scale(1e-9));
  }
}

TEST_CASE("EikonalTrainer gradient matches finite differences") {
  auto p = nn::init_xavier({2, 6, 1}, 71);
  const int M = 12;
  Eigen::MatrixXd X(M, 2);
  X.setRandom();
  Eigen::VectorXd F(M);
  Eigen::MatrixXd gradF(M, 2);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (int i = 0; i < M; ++i) {
    F[i] = uni(rng);
    gradF(i, 0) = uni(rng);
    gradF(i, 1) = uni(rng);
  }

  nn::EikonalTrainer<double> tr(p, X, F, gradF);
  Eigen::VectorXd grad;
  tr.loss_and_grad(grad);

  Eigen::VectorXd flat = p.flatten();
  const double h = 1e-6;
  std::mt19937_64 pick(9);
  std::uniform_int_distribution<Eigen::Index> idx(0, flat.size() - 1);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::Index k = idx(pick);
    NetworkParams pp = p, pm = p;
    Eigen::VectorXd fp = flat, fm = flat;
    fp[k] += h;
    fm[k] -= h;
    pp.unflatten(fp);
    pm.unflatten(fm);
    Eigen::VectorXd dummy;
    nn::EikonalTrainer<double> tp(pp, X, F, gradF), tm(pm, X, F, gradF);
    const double fd = (tp.loss_and_grad(dummy) - tm.loss_and_grad(dummy)) / (2 * h);
    CHECK(std::abs(grad[k] - fd) <= 1e-4 * (1.0 + std::abs(fd)));
  }
}
