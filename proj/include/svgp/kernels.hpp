#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "svgp/errors.hpp"
#include "svgp/transforms.hpp"

namespace svgp {

enum class KernelKind { SquaredExponential, Matern12, Matern52, Polynomial, White };

inline std::string kernel_kind_name(KernelKind k) {
  switch (k) {
    case KernelKind::SquaredExponential: return "squared_exponential";
    case KernelKind::Matern12: return "matern12";
    case KernelKind::Matern52: return "matern52";
    case KernelKind::Polynomial: return "polynomial";
    case KernelKind::White: return "white";
  }
  return "?";
}

// Constrained-space hyperparameters of a single kernel factor. The amplitude
// is stored as sigma and squared on evaluation where the kernel form squares
// it; the white kernel uses sigma directly. poly_degree is structural, not
// learned.
struct KernelParams {
  double variance = 1.0;
  Eigen::VectorXd lengthscales;  // one per active dim (ARD) or a single shared value
  double poly_offset = 1.0;      // gamma
  int poly_degree = 3;
};

// Ordered column indices a factor reads from the design matrix.
struct DimensionSlice {
  std::vector<int> active_dims;
};

struct KernelFactor {
  KernelKind kind = KernelKind::SquaredExponential;
  KernelParams params;
  DimensionSlice slice;
};

// Role of each scalar hyperparameter, in the factor's packing order.
struct KernelParamDesc {
  std::string name;
  bool positive = true;  // softplus-constrained
  bool is_lengthscale = false;
  bool is_variance = false;
};

namespace detail {

inline bool is_stationary(KernelKind k) {
  return k == KernelKind::SquaredExponential || k == KernelKind::Matern12 ||
         k == KernelKind::Matern52;
}

inline double lengthscale_at(const KernelParams& p, int d) {
  return p.lengthscales.size() == 1 ? p.lengthscales(0)
                                    : p.lengthscales(d);
}

}  // namespace detail

class CompositeKernel;

// Tree node: a leaf factor, or a product/sum over children.
struct KernelNode {
  enum class Op { Leaf, Product, Sum };

  Op op = Op::Leaf;
  KernelFactor leaf;
  std::vector<KernelNode> children;

  static KernelNode make_leaf(KernelFactor f) {
    KernelNode n;
    n.op = Op::Leaf;
    n.leaf = std::move(f);
    return n;
  }
  static KernelNode make_product(std::vector<KernelNode> cs) {
    KernelNode n;
    n.op = Op::Product;
    n.children = std::move(cs);
    return n;
  }
  static KernelNode make_sum(std::vector<KernelNode> cs) {
    KernelNode n;
    n.op = Op::Sum;
    n.children = std::move(cs);
    return n;
  }
};

// Immutable after construction; gram evaluation is const and safe to call
// concurrently.
class CompositeKernel {
 public:
  CompositeKernel() = default;

  CompositeKernel(KernelNode root, int input_dim)
      : root_(std::move(root)), input_dim_(input_dim) {
    validate_node(root_);
    collect_descs(root_, "k");
  }

  int input_dim() const { return input_dim_; }
  int num_params() const { return static_cast<int>(descs_.size()); }
  const std::vector<KernelParamDesc>& param_descs() const { return descs_; }
  const KernelNode& root() const { return root_; }

  Eigen::VectorXd get_params() const {
    Eigen::VectorXd out(num_params());
    Eigen::Index pos = 0;
    read_params(root_, out, pos);
    return out;
  }

  void set_params(const Eigen::Ref<const Eigen::VectorXd>& values) {
    if (values.size() != num_params()) {
      throw ShapeError("CompositeKernel::set_params: expected " +
                       std::to_string(num_params()) + " values, got " +
                       std::to_string(values.size()));
    }
    Eigen::Index pos = 0;
    write_params(root_, values, pos);
  }

  double eval(const Eigen::Ref<const Eigen::VectorXd>& x,
              const Eigen::Ref<const Eigen::VectorXd>& y) const {
    check_vec(x);
    check_vec(y);
    return eval_node(root_, x, y);
  }

  Eigen::MatrixXd gram(const Eigen::Ref<const Eigen::MatrixXd>& X,
                       const Eigen::Ref<const Eigen::MatrixXd>& Y) const {
    check_mat(X);
    check_mat(Y);
    return gram_node(root_, X, Y);
  }

  // d gram / d theta_p in constrained space, one matrix per parameter in
  // packing order. The softplus chain rule is applied by the caller.
  std::vector<Eigen::MatrixXd> grad_params(
      const Eigen::Ref<const Eigen::MatrixXd>& X,
      const Eigen::Ref<const Eigen::MatrixXd>& Y) const {
    check_mat(X);
    check_mat(Y);
    std::vector<Eigen::MatrixXd> grads;
    grads.reserve(static_cast<std::size_t>(num_params()));
    grad_node(root_, X, Y, grads);
    return grads;
  }

 private:
  void check_vec(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    if (x.size() != input_dim_) {
      throw ShapeError("kernel eval: input has " + std::to_string(x.size()) +
                       " entries, expected " + std::to_string(input_dim_));
    }
    if (!x.allFinite()) throw DataError("kernel eval: non-finite input");
  }

  void check_mat(const Eigen::Ref<const Eigen::MatrixXd>& X) const {
    if (X.cols() != input_dim_) {
      throw ShapeError("kernel gram: input has " + std::to_string(X.cols()) +
                       " columns, expected " + std::to_string(input_dim_));
    }
    if (!X.allFinite()) throw DataError("kernel gram: non-finite input");
  }

  void validate_node(const KernelNode& n) const {
    if (n.op == KernelNode::Op::Leaf) {
      const KernelFactor& f = n.leaf;
      if (f.slice.active_dims.empty()) {
        throw ConfigError("kernel factor has an empty dimension slice");
      }
      std::vector<int> sorted = f.slice.active_dims;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw ConfigError("kernel factor slice has duplicate dimensions");
      }
      for (int d : f.slice.active_dims) {
        if (d < 0 || d >= input_dim_) {
          throw ConfigError("kernel factor slice index " + std::to_string(d) +
                            " outside [0, " + std::to_string(input_dim_) + ")");
        }
      }
      if (detail::is_stationary(f.kind)) {
        Eigen::Index nl = f.params.lengthscales.size();
        Eigen::Index nd = static_cast<Eigen::Index>(f.slice.active_dims.size());
        if (nl != 1 && nl != nd) {
          throw ConfigError("kernel factor: " + std::to_string(nl) +
                            " lengthscales for " + std::to_string(nd) +
                            " active dimensions");
        }
      }
      if (f.kind == KernelKind::Polynomial && f.params.poly_degree < 1) {
        throw ConfigError("polynomial kernel degree must be >= 1");
      }
    } else {
      if (n.children.empty()) throw ConfigError("kernel node has no children");
      for (const KernelNode& c : n.children) validate_node(c);
    }
  }

  void collect_descs(const KernelNode& n, const std::string& prefix) {
    if (n.op == KernelNode::Op::Leaf) {
      const KernelFactor& f = n.leaf;
      std::string base = prefix + "." + kernel_kind_name(f.kind);
      descs_.push_back({base + ".variance", true, false, true});
      if (detail::is_stationary(f.kind)) {
        for (Eigen::Index i = 0; i < f.params.lengthscales.size(); ++i) {
          descs_.push_back(
              {base + ".lengthscale" + std::to_string(i), true, true, false});
        }
      } else if (f.kind == KernelKind::Polynomial) {
        // kept positive so the polynomial factor stays a valid kernel
        descs_.push_back({base + ".offset", true, false, false});
      }
    } else {
      for (std::size_t i = 0; i < n.children.size(); ++i) {
        collect_descs(n.children[i], prefix + "." + std::to_string(i));
      }
    }
  }

  static void read_params(const KernelNode& n, Eigen::VectorXd& out,
                          Eigen::Index& pos) {
    if (n.op == KernelNode::Op::Leaf) {
      const KernelFactor& f = n.leaf;
      out(pos++) = f.params.variance;
      if (detail::is_stationary(f.kind)) {
        for (Eigen::Index i = 0; i < f.params.lengthscales.size(); ++i) {
          out(pos++) = f.params.lengthscales(i);
        }
      } else if (f.kind == KernelKind::Polynomial) {
        out(pos++) = f.params.poly_offset;
      }
    } else {
      for (const KernelNode& c : n.children) read_params(c, out, pos);
    }
  }

  static void write_params(KernelNode& n,
                           const Eigen::Ref<const Eigen::VectorXd>& values,
                           Eigen::Index& pos) {
    if (n.op == KernelNode::Op::Leaf) {
      KernelFactor& f = n.leaf;
      f.params.variance = values(pos++);
      if (detail::is_stationary(f.kind)) {
        for (Eigen::Index i = 0; i < f.params.lengthscales.size(); ++i) {
          f.params.lengthscales(i) = values(pos++);
        }
      } else if (f.kind == KernelKind::Polynomial) {
        f.params.poly_offset = values(pos++);
      }
    } else {
      for (KernelNode& c : n.children) write_params(c, values, pos);
    }
  }

  // --- evaluation -----------------------------------------------------------

  static double eval_factor(const KernelFactor& f,
                            const Eigen::Ref<const Eigen::VectorXd>& x,
                            const Eigen::Ref<const Eigen::VectorXd>& y) {
    const KernelParams& p = f.params;
    switch (f.kind) {
      case KernelKind::White: {
        for (int d : f.slice.active_dims) {
          if (x(d) != y(d)) return 0.0;
        }
        return p.variance;
      }
      case KernelKind::Polynomial: {
        double s = 0.0;
        for (int d : f.slice.active_dims) s += x(d) * y(d);
        return std::pow(p.variance * p.variance * s + p.poly_offset,
                        p.poly_degree);
      }
      default: {
        double r2 = 0.0;
        int i = 0;
        for (int d : f.slice.active_dims) {
          double l = detail::lengthscale_at(p, i++);
          double z = (x(d) - y(d)) / l;
          r2 += z * z;
        }
        double s2 = p.variance * p.variance;
        if (f.kind == KernelKind::SquaredExponential) {
          return s2 * std::exp(-0.5 * r2);
        }
        double r = std::sqrt(r2);
        if (f.kind == KernelKind::Matern12) return s2 * std::exp(-r);
        // Matern 5/2
        double sr = std::sqrt(5.0) * r;
        return s2 * (1.0 + sr + 5.0 * r2 / 3.0) * std::exp(-sr);
      }
    }
  }

  static double eval_node(const KernelNode& n,
                          const Eigen::Ref<const Eigen::VectorXd>& x,
                          const Eigen::Ref<const Eigen::VectorXd>& y) {
    if (n.op == KernelNode::Op::Leaf) return eval_factor(n.leaf, x, y);
    double acc = n.op == KernelNode::Op::Product ? 1.0 : 0.0;
    for (const KernelNode& c : n.children) {
      double v = eval_node(c, x, y);
      if (n.op == KernelNode::Op::Product) {
        acc *= v;
      } else {
        acc += v;
      }
    }
    return acc;
  }

  // Entries are computed by direct column indexing: routing through
  // eval_factor would copy both rows per entry (stride-mismatched Refs).
  static Eigen::MatrixXd gram_factor(const KernelFactor& f,
                                     const Eigen::Ref<const Eigen::MatrixXd>& X,
                                     const Eigen::Ref<const Eigen::MatrixXd>& Y) {
    const KernelParams& p = f.params;
    const Eigen::Index n = X.rows(), m = Y.rows();
    const int nd = static_cast<int>(f.slice.active_dims.size());
    Eigen::MatrixXd out(n, m);

    switch (f.kind) {
      case KernelKind::White: {
        for (Eigen::Index j = 0; j < m; ++j) {
          for (Eigen::Index i = 0; i < n; ++i) {
            bool eq = true;
            for (int d : f.slice.active_dims) {
              if (X(i, d) != Y(j, d)) { eq = false; break; }
            }
            out(i, j) = eq ? p.variance : 0.0;
          }
        }
        return out;
      }
      case KernelKind::Polynomial: {
        for (Eigen::Index j = 0; j < m; ++j) {
          for (Eigen::Index i = 0; i < n; ++i) {
            double s = 0.0;
            for (int d : f.slice.active_dims) s += X(i, d) * Y(j, d);
            out(i, j) = std::pow(p.variance * p.variance * s + p.poly_offset,
                                 p.poly_degree);
          }
        }
        return out;
      }
      default: {
        const double s2 = p.variance * p.variance;
        for (Eigen::Index j = 0; j < m; ++j) {
          for (Eigen::Index i = 0; i < n; ++i) {
            double r2 = 0.0;
            for (int a = 0; a < nd; ++a) {
              int d = f.slice.active_dims[static_cast<std::size_t>(a)];
              double z = (X(i, d) - Y(j, d)) / detail::lengthscale_at(p, a);
              r2 += z * z;
            }
            if (f.kind == KernelKind::SquaredExponential) {
              out(i, j) = s2 * std::exp(-0.5 * r2);
            } else if (f.kind == KernelKind::Matern12) {
              out(i, j) = s2 * std::exp(-std::sqrt(r2));
            } else {
              double r = std::sqrt(r2);
              double sr = std::sqrt(5.0) * r;
              out(i, j) = s2 * (1.0 + sr + 5.0 * r2 / 3.0) * std::exp(-sr);
            }
          }
        }
        return out;
      }
    }
  }

  static Eigen::MatrixXd gram_node(const KernelNode& n,
                                   const Eigen::Ref<const Eigen::MatrixXd>& X,
                                   const Eigen::Ref<const Eigen::MatrixXd>& Y) {
    if (n.op == KernelNode::Op::Leaf) return gram_factor(n.leaf, X, Y);
    Eigen::MatrixXd acc = gram_node(n.children[0], X, Y);
    for (std::size_t c = 1; c < n.children.size(); ++c) {
      Eigen::MatrixXd k = gram_node(n.children[c], X, Y);
      if (n.op == KernelNode::Op::Product) {
        acc = acc.cwiseProduct(k);
      } else {
        acc += k;
      }
    }
    return acc;
  }

  // Per-factor gradient matrices, aligned with the factor's packing order.
  static std::vector<Eigen::MatrixXd> grad_factor(
      const KernelFactor& f, const Eigen::Ref<const Eigen::MatrixXd>& X,
      const Eigen::Ref<const Eigen::MatrixXd>& Y) {
    const KernelParams& p = f.params;
    const Eigen::Index n = X.rows(), m = Y.rows();
    std::vector<Eigen::MatrixXd> out;

    switch (f.kind) {
      case KernelKind::White: {
        Eigen::MatrixXd dv(n, m);
        for (Eigen::Index j = 0; j < m; ++j) {
          for (Eigen::Index i = 0; i < n; ++i) {
            bool eq = true;
            for (int d : f.slice.active_dims) {
              if (X(i, d) != Y(j, d)) { eq = false; break; }
            }
            dv(i, j) = eq ? 1.0 : 0.0;
          }
        }
        out.push_back(std::move(dv));
        return out;
      }
      case KernelKind::Polynomial: {
        Eigen::MatrixXd dv(n, m), dg(n, m);
        for (Eigen::Index j = 0; j < m; ++j) {
          for (Eigen::Index i = 0; i < n; ++i) {
            double s = 0.0;
            for (int d : f.slice.active_dims) s += X(i, d) * Y(j, d);
            double inner = p.variance * p.variance * s + p.poly_offset;
            double powm1 =
                p.poly_degree * std::pow(inner, p.poly_degree - 1);
            dv(i, j) = powm1 * 2.0 * p.variance * s;
            dg(i, j) = powm1;
          }
        }
        out.push_back(std::move(dv));
        out.push_back(std::move(dg));
        return out;
      }
      default: {
        const int nd = static_cast<int>(f.slice.active_dims.size());
        const int nl = static_cast<int>(p.lengthscales.size());
        Eigen::MatrixXd dv(n, m);
        std::vector<Eigen::MatrixXd> dl(static_cast<std::size_t>(nl),
                                        Eigen::MatrixXd::Zero(n, m));
        std::vector<double> zsq(static_cast<std::size_t>(nd));
        const double s2 = p.variance * p.variance;
        for (Eigen::Index j = 0; j < m; ++j) {
          for (Eigen::Index i = 0; i < n; ++i) {
            double r2 = 0.0;
            for (int a = 0; a < nd; ++a) {
              int d = f.slice.active_dims[static_cast<std::size_t>(a)];
              double l = detail::lengthscale_at(p, a);
              double z = (X(i, d) - Y(j, d)) / l;
              zsq[static_cast<std::size_t>(a)] = z * z;
              r2 += z * z;
            }
            double kval, dkdr_over_r;  // (dk/dr)/r, which is smooth at r = 0
            if (f.kind == KernelKind::SquaredExponential) {
              kval = s2 * std::exp(-0.5 * r2);
              dkdr_over_r = -kval;
            } else if (f.kind == KernelKind::Matern12) {
              double r = std::sqrt(r2);
              kval = s2 * std::exp(-r);
              // kink at r = 0: the lengthscale derivative limit is 0
              dkdr_over_r = r > 1e-14 ? -kval / r : 0.0;
            } else {
              double r = std::sqrt(r2);
              double sr = std::sqrt(5.0) * r;
              double e = std::exp(-sr);
              kval = s2 * (1.0 + sr + 5.0 * r2 / 3.0) * e;
              dkdr_over_r = -s2 * e * (5.0 / 3.0) * (1.0 + sr);
            }
            dv(i, j) = p.variance != 0.0 ? 2.0 * kval / p.variance : 0.0;
            // dk/dl_a = (dk/dr)/r * (-z_a^2 / l_a) * ... with dr/dl_a = -z_a^2/(l_a r)
            for (int a = 0; a < nd; ++a) {
              int li = nl == 1 ? 0 : a;
              double l = detail::lengthscale_at(p, a);
              dl[static_cast<std::size_t>(li)](i, j) +=
                  dkdr_over_r * (-zsq[static_cast<std::size_t>(a)] / l);
            }
          }
        }
        out.push_back(std::move(dv));
        for (auto& g : dl) out.push_back(std::move(g));
        return out;
      }
    }
  }

  static Eigen::MatrixXd grad_node(const KernelNode& n,
                                   const Eigen::Ref<const Eigen::MatrixXd>& X,
                                   const Eigen::Ref<const Eigen::MatrixXd>& Y,
                                   std::vector<Eigen::MatrixXd>& grads) {
    if (n.op == KernelNode::Op::Leaf) {
      for (auto& g : grad_factor(n.leaf, X, Y)) grads.push_back(std::move(g));
      return gram_factor(n.leaf, X, Y);
    }
    const std::size_t nc = n.children.size();
    std::vector<std::size_t> child_start(nc);
    std::vector<Eigen::MatrixXd> child_grams(nc);
    for (std::size_t c = 0; c < nc; ++c) {
      child_start[c] = grads.size();
      child_grams[c] = grad_node(n.children[c], X, Y, grads);
    }
    if (n.op == KernelNode::Op::Sum) {
      Eigen::MatrixXd acc = child_grams[0];
      for (std::size_t c = 1; c < nc; ++c) acc += child_grams[c];
      return acc;
    }
    // Product: scale each child's gradient block by the product of the other
    // children's grams, via prefix/suffix products (children may contain
    // exact zeros, so no division).
    std::vector<Eigen::MatrixXd> prefix(nc), suffix(nc);
    prefix[0] = Eigen::MatrixXd::Ones(X.rows(), Y.rows());
    for (std::size_t c = 1; c < nc; ++c) {
      prefix[c] = prefix[c - 1].cwiseProduct(child_grams[c - 1]);
    }
    suffix[nc - 1] = Eigen::MatrixXd::Ones(X.rows(), Y.rows());
    for (std::size_t c = nc - 1; c > 0; --c) {
      suffix[c - 1] = suffix[c].cwiseProduct(child_grams[c]);
    }
    for (std::size_t c = 0; c < nc; ++c) {
      Eigen::MatrixXd others = prefix[c].cwiseProduct(suffix[c]);
      std::size_t end = c + 1 < nc ? child_start[c + 1] : grads.size();
      for (std::size_t g = child_start[c]; g < end; ++g) {
        grads[g] = grads[g].cwiseProduct(others);
      }
    }
    Eigen::MatrixXd total = prefix[nc - 1].cwiseProduct(child_grams[nc - 1]);
    return total;
  }

  KernelNode root_;
  int input_dim_ = 0;
  std::vector<KernelParamDesc> descs_;
};

// The default composite: Matern 5/2 ARD over the spatial columns, a
// polynomial(3) x Matern 1/2 product over the temporal column, squared
// exponential ARD over the covariate columns, plus white noise over all
// columns. Column layout: [lon, lat, time, covariates...].
inline CompositeKernel default_composite_kernel(int n_covariates = 4) {
  const int dim = 3 + n_covariates;

  KernelFactor spatial;
  spatial.kind = KernelKind::Matern52;
  spatial.slice.active_dims = {0, 1};
  spatial.params.lengthscales = Eigen::VectorXd::Ones(2);

  KernelFactor poly;
  poly.kind = KernelKind::Polynomial;
  poly.slice.active_dims = {2};
  poly.params.poly_degree = 3;
  poly.params.poly_offset = 1.0;

  KernelFactor temporal;
  temporal.kind = KernelKind::Matern12;
  temporal.slice.active_dims = {2};
  temporal.params.lengthscales = Eigen::VectorXd::Ones(1);

  KernelFactor covariate;
  covariate.kind = KernelKind::SquaredExponential;
  for (int d = 3; d < dim; ++d) covariate.slice.active_dims.push_back(d);
  covariate.params.lengthscales = Eigen::VectorXd::Ones(n_covariates);

  KernelFactor white;
  white.kind = KernelKind::White;
  for (int d = 0; d < dim; ++d) white.slice.active_dims.push_back(d);
  white.params.variance = 0.1;

  KernelNode product = KernelNode::make_product(
      {KernelNode::make_leaf(spatial), KernelNode::make_leaf(poly),
       KernelNode::make_leaf(temporal), KernelNode::make_leaf(covariate)});
  KernelNode root = KernelNode::make_sum(
      {std::move(product), KernelNode::make_leaf(white)});
  return CompositeKernel(std::move(root), dim);
}

}  // namespace svgp
