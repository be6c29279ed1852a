#pragma once

#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "svgp/dataset.hpp"
#include "svgp/errors.hpp"
#include "svgp/kdpp.hpp"
#include "svgp/kernels.hpp"
#include "svgp/sparse_gp.hpp"
#include "svgp/svgd.hpp"

namespace svgp {

using json = nlohmann::json;

// --- kernel spec <-> JSON ---------------------------------------------------

inline json kernel_node_to_json(const KernelNode& n) {
  if (n.op != KernelNode::Op::Leaf) {
    json j;
    j["op"] = n.op == KernelNode::Op::Product ? "product" : "sum";
    j["children"] = json::array();
    for (const KernelNode& c : n.children) {
      j["children"].push_back(kernel_node_to_json(c));
    }
    return j;
  }
  const KernelFactor& f = n.leaf;
  json j;
  j["kind"] = kernel_kind_name(f.kind);
  j["dims"] = f.slice.active_dims;
  j["variance"] = f.params.variance;
  if (detail::is_stationary(f.kind)) {
    j["lengthscales"] = std::vector<double>(
        f.params.lengthscales.data(),
        f.params.lengthscales.data() + f.params.lengthscales.size());
  }
  if (f.kind == KernelKind::Polynomial) {
    j["gamma"] = f.params.poly_offset;
    j["degree"] = f.params.poly_degree;
  }
  return j;
}

inline KernelNode kernel_node_from_json(const json& j) {
  if (j.contains("op")) {
    std::string op = j.at("op").get<std::string>();
    std::vector<KernelNode> children;
    for (const json& c : j.at("children")) {
      children.push_back(kernel_node_from_json(c));
    }
    if (op == "product") return KernelNode::make_product(std::move(children));
    if (op == "sum") return KernelNode::make_sum(std::move(children));
    throw ConfigError("kernel op must be 'product' or 'sum', got '" + op + "'");
  }
  KernelFactor f;
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "squared_exponential") f.kind = KernelKind::SquaredExponential;
  else if (kind == "matern12") f.kind = KernelKind::Matern12;
  else if (kind == "matern52") f.kind = KernelKind::Matern52;
  else if (kind == "polynomial") f.kind = KernelKind::Polynomial;
  else if (kind == "white") f.kind = KernelKind::White;
  else throw ConfigError("unknown kernel kind '" + kind + "'");
  f.slice.active_dims = j.at("dims").get<std::vector<int>>();
  f.params.variance = j.value("variance", 1.0);
  if (detail::is_stationary(f.kind)) {
    if (j.contains("lengthscales")) {
      std::vector<double> ls = j.at("lengthscales").get<std::vector<double>>();
      f.params.lengthscales =
          Eigen::Map<Eigen::VectorXd>(ls.data(), static_cast<Eigen::Index>(ls.size()));
    } else if (j.contains("lengthscale")) {
      f.params.lengthscales = Eigen::VectorXd::Constant(
          1, j.at("lengthscale").get<double>());
    } else {
      f.params.lengthscales = Eigen::VectorXd::Ones(
          static_cast<Eigen::Index>(f.slice.active_dims.size()));
    }
  }
  if (f.kind == KernelKind::Polynomial) {
    f.params.poly_offset = j.value("gamma", 1.0);
    f.params.poly_degree = j.value("degree", 3);
  }
  return KernelNode::make_leaf(f);
}

// --- run configuration ------------------------------------------------------

struct PriorOverride {
  std::string target;  // parameter name in the layout
  PriorSpec prior;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string train_csv;
  std::vector<std::string> covariate_columns = default_covariate_columns();

  bool default_kernel = true;
  json kernel_spec;  // used when default_kernel is false

  double jitter = 1e-6;
  SVGDConfig svgd;
  KDPPConfig kdpp;
  std::vector<PriorOverride> prior_overrides;

  int input_dim() const {
    return 3 + static_cast<int>(covariate_columns.size());
  }

  CompositeKernel build_kernel() const {
    if (default_kernel) {
      return default_composite_kernel(
          static_cast<int>(covariate_columns.size()));
    }
    return CompositeKernel(kernel_node_from_json(kernel_spec), input_dim());
  }

  void apply_prior_overrides(ParamLayout& layout) const {
    for (const PriorOverride& ov : prior_overrides) {
      bool found = false;
      for (ParamBinding& pb : layout.bindings()) {
        if (pb.name == ov.target) {
          if (ov.prior.kind == PriorSpec::Kind::Gamma &&
              pb.transform != TransformKind::SoftplusClip) {
            throw ConfigError("Gamma prior on unconstrained parameter '" +
                              ov.target + "'");
          }
          pb.prior = ov.prior;
          found = true;
        }
      }
      if (!found) {
        throw ConfigError("prior override targets unknown parameter '" +
                          ov.target + "'");
      }
    }
  }
};

inline json prior_to_json(const PriorSpec& p) {
  json j;
  j["kind"] = p.kind == PriorSpec::Kind::Gamma ? "gamma" : "gaussian";
  j["p1"] = p.p1;
  j["p2"] = p.p2;
  return j;
}

inline PriorSpec prior_from_json(const json& j) {
  std::string kind = j.at("kind").get<std::string>();
  double p1 = j.at("p1").get<double>();
  double p2 = j.at("p2").get<double>();
  if (kind == "gamma") return PriorSpec::gamma(p1, p2);
  if (kind == "gaussian") return PriorSpec::gaussian(p1, p2);
  throw ConfigError("prior kind must be 'gamma' or 'gaussian'");
}

inline json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["data"]["train_csv"] = c.train_csv;
  j["data"]["covariate_columns"] = c.covariate_columns;
  if (c.default_kernel) {
    j["kernel"] = "default";
  } else {
    j["kernel"] = c.kernel_spec;
  }
  j["model"]["jitter"] = c.jitter;
  j["svgd"]["particles"] = c.svgd.n_particles;
  j["svgd"]["batch_size"] = c.svgd.batch_size;
  json sched = json::array();
  for (const auto& [lr, n] : c.svgd.schedule.stages) {
    sched.push_back(json::array({lr, n}));
  }
  j["svgd"]["schedule"] = sched;
  if (c.svgd.bandwidth_rule == BandwidthRule::Median) {
    j["svgd"]["bandwidth"] = "median";
  } else {
    j["svgd"]["bandwidth"] = c.svgd.fixed_bandwidth;
  }
  j["kdpp"]["k"] = c.kdpp.k;
  j["kdpp"]["mcmc_steps"] = c.kdpp.mcmc_steps;
  j["kdpp"]["candidate_pool"] = c.kdpp.candidate_pool;
  json pr = json::object();
  for (const PriorOverride& ov : c.prior_overrides) {
    pr[ov.target] = prior_to_json(ov.prior);
  }
  j["priors"] = pr;
  return j;
}

inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    c.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("data")) {
      const json& d = j.at("data");
      c.train_csv = d.value("train_csv", std::string{});
      if (d.contains("covariate_columns")) {
        c.covariate_columns =
            d.at("covariate_columns").get<std::vector<std::string>>();
      }
    }
    if (j.contains("kernel") && !j.at("kernel").is_string()) {
      c.default_kernel = false;
      c.kernel_spec = j.at("kernel");
      c.build_kernel();  // surface spec errors at load time
    }
    if (j.contains("model")) c.jitter = j.at("model").value("jitter", 1e-6);
    if (j.contains("svgd")) {
      const json& s = j.at("svgd");
      c.svgd.n_particles = s.value("particles", 10);
      c.svgd.batch_size = s.value("batch_size", 250);
      if (s.contains("schedule")) {
        c.svgd.schedule.stages.clear();
        for (const json& st : s.at("schedule")) {
          c.svgd.schedule.stages.emplace_back(st.at(0).get<double>(),
                                              st.at(1).get<int>());
        }
      }
      if (s.contains("bandwidth")) {
        if (s.at("bandwidth").is_string()) {
          if (s.at("bandwidth").get<std::string>() != "median") {
            throw ConfigError("svgd.bandwidth must be 'median' or a number");
          }
          c.svgd.bandwidth_rule = BandwidthRule::Median;
        } else {
          c.svgd.bandwidth_rule = BandwidthRule::Fixed;
          c.svgd.fixed_bandwidth = s.at("bandwidth").get<double>();
        }
      }
    }
    c.svgd.seed = c.seed;
    if (j.contains("kdpp")) {
      const json& k = j.at("kdpp");
      c.kdpp.k = k.value("k", 1000);
      c.kdpp.mcmc_steps = k.value("mcmc_steps", 10000);
      c.kdpp.candidate_pool = k.value("candidate_pool", 20000);
    }
    c.kdpp.seed = c.seed;
    c.kdpp.jitter = c.jitter;
    if (j.contains("priors")) {
      for (auto it = j.at("priors").begin(); it != j.at("priors").end(); ++it) {
        c.prior_overrides.push_back({it.key(), prior_from_json(it.value())});
      }
    }
    c.svgd.schedule.validate();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace svgp
