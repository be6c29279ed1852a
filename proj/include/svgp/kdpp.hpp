#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "svgp/errors.hpp"
#include "svgp/sparse_gp.hpp"

namespace svgp {

struct KDPPConfig {
  int k = 1000;
  int mcmc_steps = 10000;
  int candidate_pool = 20000;  // uniform subsample cap before the chain runs
  double jitter = 1e-6;
  std::uint64_t seed = 0;
};

namespace kdpp_detail {

// Submatrix L[S, S].
inline Eigen::MatrixXd submatrix(const Eigen::Ref<const Eigen::MatrixXd>& L,
                                 const std::vector<int>& S) {
  const int k = static_cast<int>(S.size());
  Eigen::MatrixXd out(k, k);
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) {
      out(a, b) = L(S[static_cast<std::size_t>(a)], S[static_cast<std::size_t>(b)]);
    }
  }
  return out;
}

}  // namespace kdpp_detail

// det(L_{S \ S[pos] + {j}}) / det(L_S) from a Cholesky factor of L_S,
// via the two Schur complements against T = S \ S[pos]. Returns a
// non-positive value when the proposal is numerically invalid.
inline double kdpp_swap_ratio(const Eigen::Ref<const Eigen::MatrixXd>& L,
                              const std::vector<int>& S,
                              const Eigen::LLT<Eigen::MatrixXd>& cholS,
                              int pos, int j) {
  const int k = static_cast<int>(S.size());
  // q_i = 1 / (L_S^{-1})_{ii}
  Eigen::VectorXd ei = Eigen::VectorXd::Unit(k, pos);
  double Mii = cholS.matrixL().solve(ei).squaredNorm();
  double q_i = 1.0 / Mii;

  Eigen::VectorXd b(k);
  for (int a = 0; a < k; ++a) b(a) = L(S[static_cast<std::size_t>(a)], j);
  Eigen::VectorXd u = cholS.solve(b);
  double bMb = b.dot(u);
  // b_T' L_T^{-1} b_T from the full-set quantities
  double bt = bMb - q_i * u(pos) * u(pos);
  double q_j = L(j, j) - bt;
  if (!(q_i > 0.0)) return -1.0;
  return q_j / q_i;
}

// MCMC swap sampler over k-subsets: propose exchanging a member for a
// non-member, accept with min(1, det ratio). Proposals whose determinant
// ratio is non-positive or non-finite are rejected. The optional visitor
// sees the chain state after every step (for mixing diagnostics).
template <typename Rng>
inline std::vector<int> kdpp_sample(
    const Eigen::Ref<const Eigen::MatrixXd>& L, int k, int mcmc_steps, Rng& rng,
    double jitter = 1e-6,
    const std::function<void(const std::vector<int>&)>& visit = {}) {
  const int n = static_cast<int>(L.rows());
  if (L.rows() != L.cols()) throw ShapeError("kdpp_sample: L must be square");
  if (k < 1 || k > n) {
    throw ConfigError("kdpp_sample: k = " + std::to_string(k) +
                      " outside [1, " + std::to_string(n) + "]");
  }

  std::vector<int> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  if (k == n) return all;

  Eigen::MatrixXd Lj = L;
  Lj.diagonal().array() += jitter;

  // uniformly random initial k-subset
  std::vector<int> S;
  {
    std::vector<int> pool = all;
    for (int i = 0; i < k; ++i) {
      std::uniform_int_distribution<int> pick(i, n - 1);
      std::swap(pool[static_cast<std::size_t>(i)],
                pool[static_cast<std::size_t>(pick(rng))]);
    }
    S.assign(pool.begin(), pool.begin() + k);
  }
  std::vector<bool> in_S(static_cast<std::size_t>(n), false);
  for (int s : S) in_S[static_cast<std::size_t>(s)] = true;
  std::vector<int> comp;
  comp.reserve(static_cast<std::size_t>(n - k));
  for (int i = 0; i < n; ++i) {
    if (!in_S[static_cast<std::size_t>(i)]) comp.push_back(i);
  }

  Eigen::LLT<Eigen::MatrixXd> chol(kdpp_detail::submatrix(Lj, S));
  if (chol.info() != Eigen::Success) {
    throw NumericalError("kdpp_sample: initial subset kernel is not PSD");
  }

  std::uniform_int_distribution<int> pick_in(0, k - 1);
  std::uniform_int_distribution<int> pick_out(0, n - k - 1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  for (int step = 0; step < mcmc_steps; ++step) {
    int pos = pick_in(rng);
    int cpos = pick_out(rng);
    int j = comp[static_cast<std::size_t>(cpos)];
    double ratio = kdpp_swap_ratio(Lj, S, chol, pos, j);
    if (!(ratio > 0.0) || !std::isfinite(ratio)) continue;
    if (unif(rng) < std::min(1.0, ratio)) {
      std::swap(S[static_cast<std::size_t>(pos)],
                comp[static_cast<std::size_t>(cpos)]);
      Eigen::LLT<Eigen::MatrixXd> next(kdpp_detail::submatrix(Lj, S));
      if (next.info() != Eigen::Success) {
        // numerically unsafe move; roll back
        std::swap(S[static_cast<std::size_t>(pos)],
                  comp[static_cast<std::size_t>(cpos)]);
        continue;
      }
      chol = std::move(next);
    }
    if (visit) visit(S);
  }
  return S;
}

// Squared-exponential similarity matrix over standardized rows, with the
// lengthscale set by the median heuristic on a pair subsample.
template <typename Rng>
inline Eigen::MatrixXd kdpp_similarity(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                       Rng& rng, int n_pairs = 2000) {
  const Eigen::Index n = X.rows();
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  std::vector<double> d2;
  d2.reserve(static_cast<std::size_t>(n_pairs));
  for (int p = 0; p < n_pairs; ++p) {
    Eigen::Index a = pick(rng), b = pick(rng);
    if (a == b) continue;
    d2.push_back((X.row(a) - X.row(b)).squaredNorm());
  }
  double med = 1.0;
  if (!d2.empty()) {
    std::size_t mid = d2.size() / 2;
    std::nth_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(mid),
                     d2.end());
    med = std::max(d2[mid], 1e-12);
  }
  double inv_two_l2 = 1.0 / med;  // l^2 = med / 2
  Eigen::MatrixXd L(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      double v = std::exp(-(X.row(i) - X.row(j)).squaredNorm() * inv_two_l2);
      L(i, j) = v;
      L(j, i) = v;
    }
  }
  return L;
}

// k-DPP initialization of the inducing inputs: deduplicate rows, subsample a
// candidate pool, run the swap chain over an SE similarity matrix, return the
// selected rows.
inline Eigen::MatrixXd init_inducing(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                     const KDPPConfig& config) {
  std::mt19937_64 rng(config.seed);

  // exact-duplicate removal; duplicates make L singular
  std::vector<Eigen::Index> keep;
  {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(X.rows()));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      for (Eigen::Index c = 0; c < X.cols(); ++c) {
        if (X(a, c) != X(b, c)) return X(a, c) < X(b, c);
      }
      return a < b;
    });
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (i > 0 && X.row(order[i]) == X.row(order[i - 1])) continue;
      keep.push_back(order[i]);
    }
    std::sort(keep.begin(), keep.end());
  }
  if (static_cast<int>(keep.size()) < config.k) {
    throw ConfigError("init_inducing: only " + std::to_string(keep.size()) +
                      " distinct rows for k = " + std::to_string(config.k));
  }

  if (static_cast<int>(keep.size()) > config.candidate_pool) {
    std::shuffle(keep.begin(), keep.end(), rng);
    keep.resize(static_cast<std::size_t>(config.candidate_pool));
    std::sort(keep.begin(), keep.end());
  }

  Eigen::MatrixXd cand(static_cast<Eigen::Index>(keep.size()), X.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    cand.row(static_cast<Eigen::Index>(i)) = X.row(keep[i]);
  }

  Eigen::MatrixXd L = kdpp_similarity(cand, rng);
  std::vector<int> S =
      kdpp_sample(L, config.k, config.mcmc_steps, rng, config.jitter);

  Eigen::MatrixXd Z(config.k, X.cols());
  for (int i = 0; i < config.k; ++i) {
    Z.row(i) = cand.row(S[static_cast<std::size_t>(i)]);
  }
  return Z;
}

}  // namespace svgp
