#include <catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>
#include <random>

#include "svgp/kernels.hpp"

using namespace svgp;

namespace {

Eigen::MatrixXd random_inputs(int n, int d, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::MatrixXd X(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) X(i, j) = nd(rng);
  }
  return X;
}

CompositeKernel single_factor(KernelKind kind, int d, double variance = 1.3,
                              double lengthscale = 0.9) {
  KernelFactor f;
  f.kind = kind;
  for (int i = 0; i < d; ++i) f.slice.active_dims.push_back(i);
  f.params.variance = variance;
  if (kind != KernelKind::White && kind != KernelKind::Polynomial) {
    f.params.lengthscales = Eigen::VectorXd::Constant(d, lengthscale);
  }
  if (kind == KernelKind::Polynomial) {
    f.params.poly_offset = 0.7;
    f.params.poly_degree = 3;
  }
  return CompositeKernel(KernelNode::make_leaf(f), d);
}

}  // namespace

TEST_CASE("squared exponential at zero distance gives sigma^2") {
  for (double sigma : {0.5, 1.0, 2.7}) {
    auto k = single_factor(KernelKind::SquaredExponential, 7, sigma);
    Eigen::VectorXd x = random_inputs(1, 7, 42).row(0);
    REQUIRE(k.eval(x, x) == Catch::Approx(sigma * sigma).epsilon(1e-14));
  }
}

TEST_CASE("Matern 1/2 closed form at unit parameters") {
  auto k = single_factor(KernelKind::Matern12, 7, 1.0, 1.0);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(7);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(7);
  y(0) = 2.0;  // ||x - y|| = 2
  REQUIRE(k.eval(x, y) == Catch::Approx(std::exp(-2.0)).epsilon(1e-12));
  REQUIRE(k.eval(x, y) == Catch::Approx(0.135335).epsilon(1e-5));
}

TEST_CASE("polynomial closed form") {
  auto k = single_factor(KernelKind::Polynomial, 3, 1.0);
  // use gamma = 1
  KernelFactor f;
  f.kind = KernelKind::Polynomial;
  f.slice.active_dims = {0, 1, 2};
  f.params.variance = 1.0;
  f.params.poly_offset = 1.0;
  f.params.poly_degree = 3;
  CompositeKernel kp(KernelNode::make_leaf(f), 3);
  Eigen::VectorXd x(3), y(3);
  x << 1.0, 0.0, 0.0;
  y << 1.0, 0.0, 0.0;  // x'y = 1
  REQUIRE(kp.eval(x, y) == Catch::Approx(8.0).epsilon(1e-14));
}

TEST_CASE("white kernel is sigma on exact match, zero otherwise") {
  auto k = single_factor(KernelKind::White, 7, 0.37);
  Eigen::VectorXd x = random_inputs(1, 7, 7).row(0);
  Eigen::VectorXd y = x;
  REQUIRE(k.eval(x, y) == 0.37);
  y(3) = std::nextafter(y(3), 2.0);  // any bitwise difference counts
  REQUIRE(k.eval(x, y) == 0.0);
}

TEST_CASE("non-finite input is rejected") {
  auto k = single_factor(KernelKind::SquaredExponential, 2);
  Eigen::VectorXd x(2), y(2);
  x << 1.0, std::numeric_limits<double>::quiet_NaN();
  y << 0.0, 0.0;
  REQUIRE_THROWS_AS(k.eval(x, y), DataError);
}

TEST_CASE("gram matches eval entrywise and is symmetric") {
  auto k = default_composite_kernel();
  Eigen::MatrixXd X = random_inputs(6, 7, 11);
  Eigen::MatrixXd Y = random_inputs(4, 7, 12);
  Eigen::MatrixXd G = k.gram(X, Y);
  REQUIRE(G.rows() == 6);
  REQUIRE(G.cols() == 4);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 4; ++j) {
      REQUIRE(G(i, j) ==
              Catch::Approx(k.eval(X.row(i).transpose(), Y.row(j).transpose()))
                  .margin(1e-14));
    }
  }
  Eigen::MatrixXd Gxx = k.gram(X, X);
  REQUIRE((Gxx - Gxx.transpose()).cwiseAbs().maxCoeff() < 1e-12);

  Eigen::MatrixXd one = k.gram(X.topRows(1), Y.topRows(1));
  REQUIRE(one.rows() == 1);
  REQUIRE(one(0, 0) ==
          Catch::Approx(k.eval(X.row(0).transpose(), Y.row(0).transpose())));
}

TEST_CASE("gram rejects dimension mismatch") {
  auto k = default_composite_kernel();
  Eigen::MatrixXd X = random_inputs(3, 6, 1);
  REQUIRE_THROWS_AS(k.gram(X, X), ShapeError);
}

TEST_CASE("composite gram equals hand-combined factor grams") {
  // product of the three factors, plus the white diagonal term
  auto def = default_composite_kernel();
  Eigen::MatrixXd X = random_inputs(5, 7, 99);
  Eigen::MatrixXd G = def.gram(X, X);

  KernelFactor spatial;
  spatial.kind = KernelKind::Matern52;
  spatial.slice.active_dims = {0, 1};
  spatial.params.lengthscales = Eigen::VectorXd::Ones(2);
  KernelFactor poly;
  poly.kind = KernelKind::Polynomial;
  poly.slice.active_dims = {2};
  poly.params.poly_degree = 3;
  KernelFactor m12;
  m12.kind = KernelKind::Matern12;
  m12.slice.active_dims = {2};
  m12.params.lengthscales = Eigen::VectorXd::Ones(1);
  KernelFactor cov;
  cov.kind = KernelKind::SquaredExponential;
  cov.slice.active_dims = {3, 4, 5, 6};
  cov.params.lengthscales = Eigen::VectorXd::Ones(4);

  auto gram_of = [&](const KernelFactor& f) {
    return CompositeKernel(KernelNode::make_leaf(f), 7).gram(X, X);
  };
  Eigen::MatrixXd expected = gram_of(spatial)
                                 .cwiseProduct(gram_of(poly))
                                 .cwiseProduct(gram_of(m12))
                                 .cwiseProduct(gram_of(cov));
  expected.diagonal().array() += 0.1;  // white sigma on identical rows
  REQUIRE((G - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("PSD after jitter for every factor kernel") {
  Eigen::MatrixXd X = random_inputs(20, 7, 5);
  for (KernelKind kind :
       {KernelKind::SquaredExponential, KernelKind::Matern12,
        KernelKind::Matern52, KernelKind::Polynomial, KernelKind::White}) {
    auto k = single_factor(kind, 7);
    Eigen::MatrixXd G = k.gram(X, X);
    G.diagonal().array() += 1e-8;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
    INFO("kernel " << kernel_kind_name(kind));
    REQUIRE(es.eigenvalues().minCoeff() >= -1e-10);
  }
}

TEST_CASE("slice locality: columns outside the slice are ignored") {
  auto k = single_factor(KernelKind::Matern52, 2);
  KernelFactor f;
  f.kind = KernelKind::Matern52;
  f.slice.active_dims = {0, 1};
  f.params.lengthscales = Eigen::VectorXd::Ones(2);
  CompositeKernel k7(KernelNode::make_leaf(f), 7);
  Eigen::MatrixXd X = random_inputs(5, 7, 21);
  Eigen::MatrixXd G1 = k7.gram(X, X);
  X.col(5).array() += 10.0;  // outside the slice
  Eigen::MatrixXd G2 = k7.gram(X, X);
  REQUIRE(G1 == G2);
}

TEST_CASE("default configuration exposes 13 kernel hyperparameters") {
  auto k = default_composite_kernel();
  REQUIRE(k.num_params() == 13);
}

TEST_CASE("squared exponential variance gradient at zero distance") {
  auto k = single_factor(KernelKind::SquaredExponential, 7, 2.0);
  Eigen::MatrixXd X = random_inputs(1, 7, 3);
  auto grads = k.grad_params(X, X);
  // k = sigma^2 at x = x', so dk/dsigma = 2 sigma
  REQUIRE(grads[0](0, 0) == Catch::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("white kernel has one gradient, zero off-diagonal") {
  auto k = single_factor(KernelKind::White, 7, 0.5);
  Eigen::MatrixXd X = random_inputs(4, 7, 13);
  auto grads = k.grad_params(X, X);
  REQUIRE(grads.size() == 1);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      REQUIRE(grads[0](i, j) == (i == j ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("grad_params matches central finite differences") {
  auto k = default_composite_kernel();
  Eigen::MatrixXd X = random_inputs(4, 7, 77);
  Eigen::MatrixXd Y = random_inputs(3, 7, 78);
  Eigen::VectorXd theta = k.get_params();
  auto grads = k.grad_params(X, Y);
  REQUIRE(static_cast<int>(grads.size()) == k.num_params());

  const double h = 1e-6;
  for (int p = 0; p < k.num_params(); ++p) {
    Eigen::VectorXd tp = theta, tm = theta;
    tp(p) += h;
    tm(p) -= h;
    CompositeKernel kp = k, km = k;
    kp.set_params(tp);
    km.set_params(tm);
    Eigen::MatrixXd fd = (kp.gram(X, Y) - km.gram(X, Y)) / (2.0 * h);
    double denom = std::max(fd.cwiseAbs().maxCoeff(), 1e-8);
    INFO("param " << k.param_descs()[static_cast<std::size_t>(p)].name);
    REQUIRE((grads[static_cast<std::size_t>(p)] - fd).cwiseAbs().maxCoeff() /
                denom <
            1e-4);
  }
}

TEST_CASE("ARD lengthscale gradients match finite differences") {
  KernelFactor f;
  f.kind = KernelKind::Matern52;
  f.slice.active_dims = {0, 1, 2};
  f.params.variance = 1.4;
  f.params.lengthscales = Eigen::VectorXd::LinSpaced(3, 0.5, 1.5);
  CompositeKernel k(KernelNode::make_leaf(f), 3);
  Eigen::MatrixXd X = random_inputs(5, 3, 31);
  Eigen::VectorXd theta = k.get_params();
  auto grads = k.grad_params(X, X);
  const double h = 1e-6;
  for (int p = 0; p < k.num_params(); ++p) {
    Eigen::VectorXd tp = theta, tm = theta;
    tp(p) += h;
    tm(p) -= h;
    CompositeKernel kp = k, km = k;
    kp.set_params(tp);
    km.set_params(tm);
    Eigen::MatrixXd fd = (kp.gram(X, X) - km.gram(X, X)) / (2.0 * h);
    REQUIRE((grads[static_cast<std::size_t>(p)] - fd).cwiseAbs().maxCoeff() <
            1e-6);
  }
}

TEST_CASE("slice validation") {
  KernelFactor f;
  f.kind = KernelKind::SquaredExponential;
  f.slice.active_dims = {0, 0};
  f.params.lengthscales = Eigen::VectorXd::Ones(2);
  REQUIRE_THROWS_AS(CompositeKernel(KernelNode::make_leaf(f), 7), ConfigError);
  f.slice.active_dims = {0, 9};
  REQUIRE_THROWS_AS(CompositeKernel(KernelNode::make_leaf(f), 7), ConfigError);
}
