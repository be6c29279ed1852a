#pragma once

#include <Eigen/Dense>
#include <cstdio>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "svgp/dataset.hpp"
#include "svgp/errors.hpp"
#include "svgp/kernels.hpp"
#include "svgp/sparse_gp.hpp"

namespace svgp {

struct SynthOptions {
  int n = 5000;
  std::uint64_t seed = 0;
  int n_covariates = 4;
  int active_covariates = 2;  // covariate dims the latent function uses
  double noise_sd = 1.0;
  double baseline = 30.0;     // added to the latent draw (NO2-like level)
  double latent_scale = 1.0;  // multiplies (baseline + f); regime contrast
  double spatial_lengthscale = 1.5;
  double temporal_lengthscale = 0.8;
  double covariate_lengthscale = 2.0;
  double amplitude = 3.0;
  int hours = 89 * 24;
  std::int64_t t0_epoch_seconds = parse_timestamp("2020-02-01T00:00:00");
};

struct SynthData {
  Eigen::MatrixXd X;          // raw design matrix, time in hours since t0
  Eigen::VectorXd f;          // latent values (before baseline/scale)
  Eigen::VectorXd y;          // observed responses
  std::int64_t t0_epoch_seconds = 0;
};

// Kernel with the product-composite shape restricted to the active
// dimensions, no white term (the observation noise plays that role).
inline CompositeKernel synth_kernel(const SynthOptions& opt) {
  KernelFactor spatial;
  spatial.kind = KernelKind::Matern52;
  spatial.slice.active_dims = {0, 1};
  spatial.params.variance = opt.amplitude;
  spatial.params.lengthscales =
      Eigen::VectorXd::Constant(2, opt.spatial_lengthscale);

  KernelFactor temporal;
  temporal.kind = KernelKind::Matern12;
  temporal.slice.active_dims = {2};
  temporal.params.lengthscales =
      Eigen::VectorXd::Constant(1, opt.temporal_lengthscale);

  KernelFactor covariate;
  covariate.kind = KernelKind::SquaredExponential;
  for (int c = 0; c < opt.active_covariates; ++c) {
    covariate.slice.active_dims.push_back(3 + c);
  }
  covariate.params.lengthscales =
      Eigen::VectorXd::Constant(opt.active_covariates,
                                opt.covariate_lengthscale);

  KernelNode root = KernelNode::make_product(
      {KernelNode::make_leaf(spatial), KernelNode::make_leaf(temporal),
       KernelNode::make_leaf(covariate)});
  return CompositeKernel(std::move(root), 3 + opt.n_covariates);
}

// Draw a dataset from a known GP: UK-shaped lon/lat box, hourly timestamps,
// Gaussian covariates, exact joint sample of the latent function.
inline SynthData generate_synthetic(const SynthOptions& opt) {
  if (opt.active_covariates > opt.n_covariates) {
    throw ConfigError("active_covariates exceeds n_covariates");
  }
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> ulon(-5.0, 1.0);
  std::uniform_real_distribution<double> ulat(50.0, 55.0);
  std::uniform_int_distribution<int> uhour(0, opt.hours - 1);
  std::normal_distribution<double> stdnorm(0.0, 1.0);

  const int d = 3 + opt.n_covariates;
  Eigen::MatrixXd X(opt.n, d);
  for (int i = 0; i < opt.n; ++i) {
    X(i, 0) = ulon(rng);
    X(i, 1) = ulat(rng);
    X(i, 2) = static_cast<double>(uhour(rng));
    for (int c = 0; c < opt.n_covariates; ++c) {
      X(i, 3 + c) = stdnorm(rng);
    }
  }

  // kernel on internally scaled coordinates so the stated lengthscales are
  // meaningful across the very different column ranges
  Eigen::MatrixXd Xk = X;
  Xk.col(0) = X.col(0) / 3.0;
  Xk.col(1) = (X.col(1).array() - 52.5) / 2.5;
  Xk.col(2) = X.col(2) / (24.0 * 7.0);  // weeks

  CompositeKernel kern = synth_kernel(opt);
  Eigen::MatrixXd K = kern.gram(Xk, Xk);
  StableCholesky chol = stable_cholesky(K, 1e-8);
  Eigen::VectorXd eps(opt.n);
  for (int i = 0; i < opt.n; ++i) eps(i) = stdnorm(rng);

  SynthData out;
  out.X = std::move(X);
  out.f = Eigen::MatrixXd(chol.llt.matrixL()) * eps;
  out.y.resize(opt.n);
  for (int i = 0; i < opt.n; ++i) {
    out.y(i) = opt.latent_scale * (opt.baseline + out.f(i)) +
               opt.noise_sd * stdnorm(rng);
  }
  out.t0_epoch_seconds = opt.t0_epoch_seconds;
  return out;
}

inline void write_synthetic_csv(const SynthData& data, const SynthOptions& opt,
                                const std::string& path,
                                const std::vector<std::string>& covariate_names) {
  if (static_cast<int>(covariate_names.size()) != opt.n_covariates) {
    throw ConfigError("covariate name count does not match n_covariates");
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "lon,lat,timestamp";
  for (const auto& c : covariate_names) out << "," << c;
  out << ",no2\n";
  char buf[64];
  for (int i = 0; i < data.X.rows(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.10g,%.10g", data.X(i, 0), data.X(i, 1));
    out << buf << ","
        << format_timestamp(data.t0_epoch_seconds +
                            static_cast<std::int64_t>(data.X(i, 2)) * 3600);
    for (int c = 0; c < opt.n_covariates; ++c) {
      std::snprintf(buf, sizeof(buf), ",%.10g", data.X(i, 3 + c));
      out << buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.10g\n", data.y(i));
    out << buf;
  }
}

}  // namespace svgp
