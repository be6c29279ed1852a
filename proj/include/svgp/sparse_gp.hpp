#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "svgp/errors.hpp"
#include "svgp/kernels.hpp"
#include "svgp/transforms.hpp"

namespace svgp {

// Cholesky with diagonal jitter, escalating x100 per retry (two retries).
struct StableCholesky {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter_used = 0.0;
};

inline StableCholesky stable_cholesky(const Eigen::Ref<const Eigen::MatrixXd>& K,
                                      double jitter = 1e-6,
                                      int max_retries = 2) {
  StableCholesky out;
  double j = jitter;
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    Eigen::MatrixXd Kj = K;
    Kj.diagonal().array() += j;
    out.llt.compute(Kj);
    if (out.llt.info() == Eigen::Success) {
      out.jitter_used = j;
      return out;
    }
    j *= 100.0;
  }
  throw NumericalError(
      "Cholesky failed after jitter escalation to " + std::to_string(j / 100.0) +
      " (matrix size " + std::to_string(K.rows()) +
      ", diagonal range [" + std::to_string(K.diagonal().minCoeff()) + ", " +
      std::to_string(K.diagonal().maxCoeff()) + "])");
}

// Layout of the hyperparameter head of a particle vector:
//   [kernel params | mean slope a (d) | mean intercept b | noise variance]
// followed by the m inducing values u. Kernel params and the noise variance
// are softplus-constrained; mean parameters are unconstrained.
class ParamLayout {
 public:
  ParamLayout() = default;

  ParamLayout(const CompositeKernel& kernel, int input_dim) {
    for (const KernelParamDesc& d : kernel.param_descs()) {
      ParamBinding pb;
      pb.name = d.name;
      pb.transform =
          d.positive ? TransformKind::SoftplusClip : TransformKind::Identity;
      if (d.is_lengthscale) {
        pb.prior = PriorSpec::gamma(1.0, 1.0);
      } else if (d.positive) {
        // variances and the polynomial offset
        pb.prior = PriorSpec::gamma(2.0, 2.0);
      } else {
        pb.prior = PriorSpec::gaussian(0.0, 1.0);
      }
      bindings_.push_back(std::move(pb));
    }
    n_kernel_ = static_cast<int>(bindings_.size());
    for (int i = 0; i < input_dim; ++i) {
      bindings_.push_back({"mean.a" + std::to_string(i),
                           TransformKind::Identity,
                           PriorSpec::gaussian(0.0, 1.0)});
    }
    bindings_.push_back(
        {"mean.b", TransformKind::Identity, PriorSpec::gaussian(0.0, 1.0)});
    bindings_.push_back({"noise.variance", TransformKind::SoftplusClip,
                         PriorSpec::gamma(2.0, 2.0)});
    input_dim_ = input_dim;
  }

  int size() const { return static_cast<int>(bindings_.size()); }
  int n_kernel() const { return n_kernel_; }
  int n_mean() const { return input_dim_ + 1; }
  int input_dim() const { return input_dim_; }
  int mean_offset() const { return n_kernel_; }
  int noise_offset() const { return size() - 1; }
  const std::vector<ParamBinding>& bindings() const { return bindings_; }
  std::vector<ParamBinding>& bindings() { return bindings_; }

 private:
  std::vector<ParamBinding> bindings_;
  int n_kernel_ = 0;
  int input_dim_ = 0;
};

struct PredictiveOut {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
  int clamped = 0;  // variances clipped up to zero
};

struct EnsemblePrediction {
  std::vector<PredictiveOut> per_particle;
  Eigen::VectorXd mean;      // ensemble (mixture) mean
  Eigen::VectorXd variance;  // mixture variance
  Eigen::MatrixXd samples;   // n* x (J * n_samples)
};

// Sparse GP with fixed inducing inputs Z and a deterministic-training-
// conditional likelihood. All hyperparameters and the inducing values u live
// in the particle vector; the model itself is immutable and safe to share
// across concurrent evaluations.
class SparseGPModel {
 public:
  SparseGPModel() = default;

  SparseGPModel(CompositeKernel kernel, Eigen::MatrixXd Z, double jitter = 1e-6)
      : kernel_(std::move(kernel)), Z_(std::move(Z)), jitter_(jitter) {
    if (Z_.rows() < 1) throw ConfigError("need at least one inducing input");
    if (Z_.cols() != kernel_.input_dim()) {
      throw ShapeError("inducing inputs have " + std::to_string(Z_.cols()) +
                       " columns, kernel expects " +
                       std::to_string(kernel_.input_dim()));
    }
    layout_ = ParamLayout(kernel_, kernel_.input_dim());
  }

  const CompositeKernel& kernel() const { return kernel_; }
  const Eigen::MatrixXd& inducing_inputs() const { return Z_; }
  const ParamLayout& layout() const { return layout_; }
  ParamLayout& layout() { return layout_; }
  double jitter() const { return jitter_; }
  int num_inducing() const { return static_cast<int>(Z_.rows()); }
  int num_hyper() const { return layout_.size(); }
  int particle_size() const { return num_hyper() + num_inducing(); }
  int input_dim() const { return kernel_.input_dim(); }

  // Constrained view of the hyperparameter head.
  struct Unpacked {
    Eigen::VectorXd kernel_params;  // constrained
    LinearMean mean;
    double noise_variance = 0.0;
    Eigen::VectorXd u;
  };

  Unpacked unpack(const Eigen::Ref<const Eigen::VectorXd>& particle) const {
    if (particle.size() != particle_size()) {
      throw ShapeError("particle has " + std::to_string(particle.size()) +
                       " entries, model expects " +
                       std::to_string(particle_size()));
    }
    Unpacked up;
    up.kernel_params.resize(layout_.n_kernel());
    const auto& bindings = layout_.bindings();
    for (int i = 0; i < layout_.n_kernel(); ++i) {
      up.kernel_params(i) = transform_forward(
          bindings[static_cast<std::size_t>(i)].transform, particle(i));
    }
    const int d = input_dim();
    up.mean.a = particle.segment(layout_.mean_offset(), d);
    up.mean.b = particle(layout_.mean_offset() + d);
    up.noise_variance =
        Softplus::forward(particle(layout_.noise_offset()));
    up.u = particle.tail(num_inducing());
    return up;
  }

  // Build a particle from constrained values (inverse of unpack).
  Eigen::VectorXd pack(const Eigen::Ref<const Eigen::VectorXd>& kernel_params,
                       const LinearMean& mean, double noise_variance,
                       const Eigen::Ref<const Eigen::VectorXd>& u) const {
    Eigen::VectorXd p(particle_size());
    const auto& bindings = layout_.bindings();
    for (int i = 0; i < layout_.n_kernel(); ++i) {
      p(i) = transform_inverse(bindings[static_cast<std::size_t>(i)].transform,
                               kernel_params(i));
    }
    const int d = input_dim();
    p.segment(layout_.mean_offset(), d) = mean.a;
    p(layout_.mean_offset() + d) = mean.b;
    p(layout_.noise_offset()) = Softplus::inverse(noise_variance);
    p.tail(num_inducing()) = u;
    return p;
  }

  // log p(y_batch, u, hyper) with the likelihood sum scaled by
  // n_total / |batch| so minibatch gradients are unbiased.
  double log_joint(const Eigen::Ref<const Eigen::VectorXd>& particle,
                   const Eigen::Ref<const Eigen::MatrixXd>& Xb,
                   const Eigen::Ref<const Eigen::VectorXd>& yb,
                   double n_total) const {
    Common c = prepare(particle, Xb);
    double scale = static_cast<double>(n_total) / static_cast<double>(Xb.rows());
    Eigen::VectorXd r = yb - c.cond_mean;
    double v = c.up.noise_variance;
    double lik = scale * (-0.5 * static_cast<double>(Xb.rows()) *
                              std::log(2.0 * M_PI * v) -
                          r.squaredNorm() / (2.0 * v));
    return lik + u_prior_term(c) +
           log_prior_total(particle.head(num_hyper()), layout_.bindings()).value;
  }

  // Exact gradient of log_joint w.r.t. the full unconstrained particle.
  // value_out, when given, receives log_joint at no extra gram/Cholesky cost.
  Eigen::VectorXd grad_log_joint(
      const Eigen::Ref<const Eigen::VectorXd>& particle,
      const Eigen::Ref<const Eigen::MatrixXd>& Xb,
      const Eigen::Ref<const Eigen::VectorXd>& yb, double n_total,
      double* value_out = nullptr) const {
    Common c = prepare(particle, Xb);
    const Eigen::Index nb = Xb.rows();
    const int m = num_inducing();
    const int d = input_dim();
    double scale = static_cast<double>(n_total) / static_cast<double>(nb);
    double v = c.up.noise_variance;

    Eigen::VectorXd r = yb - c.cond_mean;
    Eigen::VectorXd g = (scale / v) * r;  // d lik / d cond_mean
    Eigen::VectorXd Ag = c.A * g;         // A = Kzz^{-1} Kzb, m-vector

    Eigen::VectorXd grad = Eigen::VectorXd::Zero(particle_size());

    // u: likelihood pulls through the projection, the GP prior gives -beta.
    grad.tail(m) = Ag - c.beta;

    // mean slope / intercept: direct mean term minus the projected mu(Z)
    // term from the likelihood, plus the u-prior's dependence on mu(Z).
    grad.segment(layout_.mean_offset(), d) =
        Xb.transpose() * g - Z_.transpose() * Ag + Z_.transpose() * c.beta;
    grad(layout_.mean_offset() + d) = g.sum() - Ag.sum() + c.beta.sum();

    // noise variance (constrained), then softplus chain rule below.
    double dv = scale * (-0.5 * static_cast<double>(nb) / v +
                         r.squaredNorm() / (2.0 * v * v));
    grad(layout_.noise_offset()) = dv;

    // Kernel parameters: contract dL/dK_bz and dL/dK_zz with the per-
    // parameter gram derivatives.
    Eigen::MatrixXd Kzz_inv = c.chol.llt.solve(
        Eigen::MatrixXd::Identity(m, m));
    Eigen::MatrixXd dL_dKbz = g * c.beta.transpose();              // nb x m
    Eigen::MatrixXd dL_dKzz = -Ag * c.beta.transpose() +
                              0.5 * (c.beta * c.beta.transpose() - Kzz_inv);
    std::vector<Eigen::MatrixXd> dKbz = c.kern.grad_params(Xb, Z_);
    std::vector<Eigen::MatrixXd> dKzz = c.kern.grad_params(Z_, Z_);
    const auto& bindings = layout_.bindings();
    for (int p = 0; p < layout_.n_kernel(); ++p) {
      double gp = dL_dKbz.cwiseProduct(dKbz[static_cast<std::size_t>(p)]).sum() +
                  dL_dKzz.cwiseProduct(dKzz[static_cast<std::size_t>(p)]).sum();
      grad(p) = gp;
    }

    // chain rule to unconstrained space for softplus parameters
    for (int p = 0; p < num_hyper(); ++p) {
      if (bindings[static_cast<std::size_t>(p)].transform ==
          TransformKind::SoftplusClip) {
        grad(p) *= Softplus::forward_grad(particle(p));
      }
    }

    LogPriorResult prior = log_prior_total(particle.head(num_hyper()), bindings);
    grad.head(num_hyper()) += prior.grad;
    if (value_out) {
      double lik = scale * (-0.5 * static_cast<double>(nb) *
                                std::log(2.0 * M_PI * v) -
                            r.squaredNorm() / (2.0 * v));
      *value_out = lik + u_prior_term(c) + prior.value;
    }
    return grad;
  }

  // Predictive distribution for one particle. observation_scale adds the
  // noise variance to the latent variance.
  PredictiveOut predict(const Eigen::Ref<const Eigen::VectorXd>& particle,
                        const Eigen::Ref<const Eigen::MatrixXd>& Xstar,
                        bool observation_scale = true) const {
    Common c = prepare(particle, Xstar);
    PredictiveOut out;
    out.mean = c.cond_mean;
    Eigen::MatrixXd V = c.chol.llt.matrixL().solve(c.Ksz.transpose());  // m x n*
    Eigen::VectorXd q = V.colwise().squaredNorm();
    out.variance.resize(Xstar.rows());
    for (Eigen::Index i = 0; i < Xstar.rows(); ++i) {
      double kxx = c.kern.eval(Xstar.row(i).transpose(), Xstar.row(i).transpose());
      double var = kxx - q(i);
      if (var < 0.0) {
        var = 0.0;
        ++out.clamped;
      }
      out.variance(i) = var;
    }
    if (observation_scale) {
      out.variance.array() += c.up.noise_variance;
    }
    return out;
  }

  // Per-particle predictions plus diagonal Gaussian samples and mixture
  // moments across the ensemble.
  template <typename Rng>
  EnsemblePrediction predict_ensemble(
      const std::vector<Eigen::VectorXd>& particles,
      const Eigen::Ref<const Eigen::MatrixXd>& Xstar, int n_samples, Rng& rng,
      bool observation_scale = true) const {
    if (particles.empty()) throw ConfigError("predict_ensemble: no particles");
    const Eigen::Index ns = Xstar.rows();
    const int J = static_cast<int>(particles.size());
    EnsemblePrediction out;
    out.per_particle.reserve(particles.size());
    out.mean = Eigen::VectorXd::Zero(ns);
    Eigen::VectorXd second = Eigen::VectorXd::Zero(ns);
    out.samples.resize(ns, static_cast<Eigen::Index>(J) * n_samples);
    std::normal_distribution<double> stdnorm(0.0, 1.0);
    for (int j = 0; j < J; ++j) {
      PredictiveOut p = predict(particles[static_cast<std::size_t>(j)], Xstar,
                                observation_scale);
      out.mean += p.mean;
      second += p.variance + p.mean.cwiseProduct(p.mean);
      for (int s = 0; s < n_samples; ++s) {
        for (Eigen::Index i = 0; i < ns; ++i) {
          out.samples(i, static_cast<Eigen::Index>(j) * n_samples + s) =
              p.mean(i) + std::sqrt(p.variance(i)) * stdnorm(rng);
        }
      }
      out.per_particle.push_back(std::move(p));
    }
    out.mean /= static_cast<double>(J);
    out.variance =
        second / static_cast<double>(J) - out.mean.cwiseProduct(out.mean);
    out.variance = out.variance.cwiseMax(0.0);
    return out;
  }

  // Draw u from its GP prior N(mu(Z), Kzz) under the particle's
  // hyperparameters.
  template <typename Rng>
  Eigen::VectorXd sample_u_prior(
      const Eigen::Ref<const Eigen::VectorXd>& hyper_unconstrained,
      Rng& rng) const {
    Eigen::VectorXd full(particle_size());
    full.head(num_hyper()) = hyper_unconstrained;
    full.tail(num_inducing()).setZero();
    Unpacked up = unpack(full);
    CompositeKernel kern = kernel_;
    kern.set_params(up.kernel_params);
    Eigen::MatrixXd Kzz = kern.gram(Z_, Z_);
    StableCholesky chol = stable_cholesky(Kzz, jitter_);
    const int m = num_inducing();
    Eigen::VectorXd eps(m);
    std::normal_distribution<double> stdnorm(0.0, 1.0);
    for (int i = 0; i < m; ++i) eps(i) = stdnorm(rng);
    return up.mean.eval_rows(Z_) +
           Eigen::MatrixXd(chol.llt.matrixL()) * eps;
  }

 private:
  struct Common {
    Unpacked up;
    CompositeKernel kern;
    StableCholesky chol;     // of Kzz + jitter
    Eigen::MatrixXd Ksz;     // n x m cross gram
    Eigen::MatrixXd A;       // m x n, Kzz^{-1} Kz*
    Eigen::VectorXd beta;    // Kzz^{-1} (u - mu(Z))
    Eigen::VectorXd cond_mean;
  };

  Common prepare(const Eigen::Ref<const Eigen::VectorXd>& particle,
                 const Eigen::Ref<const Eigen::MatrixXd>& X) const {
    Common c;
    c.up = unpack(particle);
    c.kern = kernel_;
    c.kern.set_params(c.up.kernel_params);
    Eigen::MatrixXd Kzz = c.kern.gram(Z_, Z_);
    c.chol = stable_cholesky(Kzz, jitter_);
    c.Ksz = c.kern.gram(X, Z_);
    c.A = c.chol.llt.solve(c.Ksz.transpose());
    Eigen::VectorXd mu_z = c.up.mean.eval_rows(Z_);
    c.beta = c.chol.llt.solve(c.up.u - mu_z);
    c.cond_mean = c.up.mean.eval_rows(X) + c.Ksz * c.beta;
    return c;
  }

  double u_prior_term(const Common& c) const {
    const int m = num_inducing();
    Eigen::VectorXd mu_z = c.up.mean.eval_rows(Z_);
    Eigen::VectorXd w = c.up.u - mu_z;
    double logdet = 0.0;
    for (int i = 0; i < m; ++i) {
      logdet += std::log(c.chol.llt.matrixLLT()(i, i));
    }
    return -0.5 * w.dot(c.beta) - logdet -
           0.5 * static_cast<double>(m) * std::log(2.0 * M_PI);
  }

  CompositeKernel kernel_;
  Eigen::MatrixXd Z_;
  double jitter_ = 1e-6;
  ParamLayout layout_;
};

}  // namespace svgp
