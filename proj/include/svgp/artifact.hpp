#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "svgp/config.hpp"
#include "svgp/dataset.hpp"
#include "svgp/errors.hpp"
#include "svgp/sparse_gp.hpp"
#include "svgp/svgd.hpp"

namespace svgp {

// Trained-ensemble container: JSON metadata followed by raw little-endian
// doubles (standardization stats, Z, particles), so reload is bit-exact.
struct Artifact {
  RunConfig config;
  Standardizer stats;
  std::int64_t t0_epoch_seconds = 0;
  int dropped_rows = 0;
  Eigen::MatrixXd Z;
  Ensemble ensemble;

  SparseGPModel build_model() const {
    SparseGPModel model(config.build_kernel(), Z, config.jitter);
    config.apply_prior_overrides(model.layout());
    return model;
  }
};

namespace artifact_detail {

constexpr char kMagic[8] = {'S', 'V', 'G', 'P', 'A', 'R', 'T', '1'};

inline void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

inline void write_doubles(std::ostream& out, const double* p, std::size_t n) {
  out.write(reinterpret_cast<const char*>(p),
            static_cast<std::streamsize>(n * sizeof(double)));
}

inline void read_doubles(std::istream& in, double* p, std::size_t n) {
  in.read(reinterpret_cast<char*>(p),
          static_cast<std::streamsize>(n * sizeof(double)));
}

}  // namespace artifact_detail

inline void save_artifact(const Artifact& art, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write artifact '" + path + "'");

  const int d = static_cast<int>(art.Z.cols());
  const int m = static_cast<int>(art.Z.rows());
  const int J = art.ensemble.size();
  const Eigen::Index plen = J > 0 ? art.ensemble.particles[0].size() : 0;

  json meta;
  meta["format_version"] = 1;
  meta["config"] = to_json(art.config);
  meta["input_dim"] = d;
  meta["n_inducing"] = m;
  meta["n_particles"] = J;
  meta["particle_size"] = plen;
  meta["t0_epoch_seconds"] = art.t0_epoch_seconds;
  meta["dropped_rows"] = art.dropped_rows;
  meta["iteration"] = art.ensemble.iteration;
  std::string mj = meta.dump();

  out.write(artifact_detail::kMagic, sizeof(artifact_detail::kMagic));
  artifact_detail::write_u64(out, mj.size());
  out.write(mj.data(), static_cast<std::streamsize>(mj.size()));

  artifact_detail::write_doubles(out, art.stats.mean.data(),
                                 static_cast<std::size_t>(d));
  artifact_detail::write_doubles(out, art.stats.sd.data(),
                                 static_cast<std::size_t>(d));
  artifact_detail::write_doubles(out, &art.stats.y_mean, 1);
  artifact_detail::write_doubles(out, &art.stats.y_sd, 1);
  // Z row-major for stability of the layout across Eigen defaults
  for (int i = 0; i < m; ++i) {
    Eigen::VectorXd row = art.Z.row(i);
    artifact_detail::write_doubles(out, row.data(), static_cast<std::size_t>(d));
  }
  for (const Eigen::VectorXd& p : art.ensemble.particles) {
    artifact_detail::write_doubles(out, p.data(),
                                   static_cast<std::size_t>(p.size()));
  }
  if (!out) throw DataError("short write while saving artifact '" + path + "'");
}

inline Artifact load_artifact(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open artifact '" + path + "'");

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, artifact_detail::kMagic, 8) != 0) {
    throw DataError("'" + path + "' is not an ensemble artifact (bad magic)");
  }
  std::uint64_t mlen = artifact_detail::read_u64(in);
  std::string mj(mlen, '\0');
  in.read(mj.data(), static_cast<std::streamsize>(mlen));
  json meta;
  try {
    meta = json::parse(mj);
  } catch (const json::exception& e) {
    throw DataError(std::string("artifact metadata is corrupt: ") + e.what());
  }
  int version = meta.value("format_version", -1);
  if (version != 1) {
    throw DataError("artifact format version " + std::to_string(version) +
                    " is not supported (expected 1); re-fit or migrate");
  }

  Artifact art;
  art.config = run_config_from_json(meta.at("config"));
  const int d = meta.at("input_dim").get<int>();
  const int m = meta.at("n_inducing").get<int>();
  const int J = meta.at("n_particles").get<int>();
  const Eigen::Index plen = meta.at("particle_size").get<Eigen::Index>();
  art.t0_epoch_seconds = meta.at("t0_epoch_seconds").get<std::int64_t>();
  art.dropped_rows = meta.value("dropped_rows", 0);
  art.ensemble.iteration = meta.value("iteration", 0);

  art.stats.mean.resize(d);
  art.stats.sd.resize(d);
  artifact_detail::read_doubles(in, art.stats.mean.data(),
                                static_cast<std::size_t>(d));
  artifact_detail::read_doubles(in, art.stats.sd.data(),
                                static_cast<std::size_t>(d));
  artifact_detail::read_doubles(in, &art.stats.y_mean, 1);
  artifact_detail::read_doubles(in, &art.stats.y_sd, 1);
  art.Z.resize(m, d);
  for (int i = 0; i < m; ++i) {
    Eigen::VectorXd row(d);
    artifact_detail::read_doubles(in, row.data(), static_cast<std::size_t>(d));
    art.Z.row(i) = row;
  }
  for (int j = 0; j < J; ++j) {
    Eigen::VectorXd p(plen);
    artifact_detail::read_doubles(in, p.data(),
                                  static_cast<std::size_t>(plen));
    art.ensemble.particles.push_back(std::move(p));
  }
  if (!in) throw DataError("artifact '" + path + "' is truncated");
  return art;
}

}  // namespace svgp
