#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "svgp/errors.hpp"

namespace svgp {

// Softplus with a lower clip, mapping R onto (clip, inf). Positive parameters
// are stored unconstrained and pushed through this map before use.
struct Softplus {
  static constexpr double kClip = 1e-6;

  static double forward(double x) {
    double sp = x > 30.0 ? x : std::log1p(std::exp(x));
    return std::max(sp, kClip);
  }

  // d forward / dx. The clip flattens the map below ~-13.8 but we keep the
  // smooth sigmoid derivative there so gradients stay finite.
  static double forward_grad(double x) {
    return 1.0 / (1.0 + std::exp(-x));
  }

  // log of forward_grad, i.e. log sigmoid(x), computed stably.
  static double log_forward_grad(double x) {
    return x > 30.0 ? -std::exp(-x) : -std::log1p(std::exp(-x));
  }

  static double inverse(double y) {
    if (y <= kClip) {
      throw Error("softplus inverse: value " + std::to_string(y) +
                      " is at or below the clip " + std::to_string(kClip),
                  4);
    }
    return y > 30.0 ? y : std::log(std::expm1(y));
  }
};

enum class TransformKind { SoftplusClip, Identity };

inline double transform_forward(TransformKind t, double x) {
  return t == TransformKind::SoftplusClip ? Softplus::forward(x) : x;
}

inline double transform_inverse(TransformKind t, double y) {
  return t == TransformKind::SoftplusClip ? Softplus::inverse(y) : y;
}

inline double transform_forward_grad(TransformKind t, double x) {
  return t == TransformKind::SoftplusClip ? Softplus::forward_grad(x) : 1.0;
}

// Prior over a single scalar parameter. Gamma uses the shape-scale
// parameterization; Gamma priors are only meaningful on positive parameters.
struct PriorSpec {
  enum class Kind { Gamma, Gaussian };

  Kind kind = Kind::Gaussian;
  double p1 = 0.0;  // shape (Gamma) or mean (Gaussian)
  double p2 = 1.0;  // scale (Gamma) or sd (Gaussian)

  static PriorSpec gamma(double shape, double scale) {
    if (shape <= 0.0 || scale <= 0.0) {
      throw ConfigError("Gamma prior requires shape > 0 and scale > 0");
    }
    return {Kind::Gamma, shape, scale};
  }

  static PriorSpec gaussian(double mean, double sd) {
    if (sd <= 0.0) throw ConfigError("Gaussian prior requires sd > 0");
    return {Kind::Gaussian, mean, sd};
  }

  double log_pdf(double x) const {
    if (kind == Kind::Gamma) {
      if (x <= 0.0) return -std::numeric_limits<double>::infinity();
      return (p1 - 1.0) * std::log(x) - x / p2 - p1 * std::log(p2) -
             std::lgamma(p1);
    }
    double z = (x - p1) / p2;
    return -0.5 * z * z - std::log(p2) - 0.5 * std::log(2.0 * M_PI);
  }

  double log_pdf_grad(double x) const {
    if (kind == Kind::Gamma) {
      if (x <= 0.0) return 0.0;
      return (p1 - 1.0) / x - 1.0 / p2;
    }
    return -(x - p1) / (p2 * p2);
  }

  template <typename Rng>
  double sample(Rng& rng) const {
    if (kind == Kind::Gamma) {
      std::gamma_distribution<double> d(p1, p2);
      return d(rng);
    }
    std::normal_distribution<double> d(p1, p2);
    return d(rng);
  }
};

// Linear mean a'x + b; the zero mean is a = 0, b = 0.
struct LinearMean {
  Eigen::VectorXd a;
  double b = 0.0;

  double eval(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return a.dot(x) + b;
  }

  Eigen::VectorXd eval_rows(const Eigen::Ref<const Eigen::MatrixXd>& X) const {
    if (X.cols() != a.size()) {
      throw ShapeError("LinearMean: X has " + std::to_string(X.cols()) +
                       " columns, expected " + std::to_string(a.size()));
    }
    return (X * a).array() + b;
  }
};

// One learned scalar parameter: its transform and its prior (on the
// constrained value).
struct ParamBinding {
  std::string name;
  TransformKind transform = TransformKind::Identity;
  PriorSpec prior;
};

// Sum of log prior densities over unconstrained values, including the
// softplus log-Jacobian so the result is a proper density on the
// unconstrained space. Also returns the gradient w.r.t. the unconstrained
// values.
struct LogPriorResult {
  double value = 0.0;
  Eigen::VectorXd grad;
};

inline LogPriorResult log_prior_total(
    const Eigen::Ref<const Eigen::VectorXd>& unconstrained,
    const std::vector<ParamBinding>& bindings) {
  if (static_cast<std::size_t>(unconstrained.size()) != bindings.size()) {
    throw ConfigError("log_prior_total: " + std::to_string(bindings.size()) +
                      " prior bindings for " +
                      std::to_string(unconstrained.size()) + " parameters");
  }
  LogPriorResult out;
  out.grad = Eigen::VectorXd::Zero(unconstrained.size());
  for (Eigen::Index i = 0; i < unconstrained.size(); ++i) {
    const ParamBinding& pb = bindings[static_cast<std::size_t>(i)];
    double x = unconstrained(i);
    double theta = transform_forward(pb.transform, x);
    out.value += pb.prior.log_pdf(theta);
    out.grad(i) += pb.prior.log_pdf_grad(theta) *
                   transform_forward_grad(pb.transform, x);
    if (pb.transform == TransformKind::SoftplusClip) {
      out.value += Softplus::log_forward_grad(x);
      out.grad(i) += 1.0 - Softplus::forward_grad(x);
    }
  }
  return out;
}

}  // namespace svgp
