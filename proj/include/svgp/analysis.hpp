#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "svgp/dataset.hpp"
#include "svgp/errors.hpp"
#include "svgp/sparse_gp.hpp"
#include "svgp/svgd.hpp"

namespace svgp {

// Compensated (Kahan) summation so reductions are deterministic and stable.
class KahanSum {
 public:
  void add(double v) {
    double y = v - c_;
    double t = s_ + y;
    c_ = (t - s_) - y;
    s_ = t;
  }
  double value() const { return s_; }

 private:
  double s_ = 0.0;
  double c_ = 0.0;
};

// Regular lon/lat grid crossed with a time axis (hours on the training
// dataset's clock). Covariates are either per-cell constants or a full
// per-cell-per-time table; the mask excludes cells from every analysis.
struct SpaceTimeGrid {
  Eigen::VectorXd lons;   // cell center longitudes
  Eigen::VectorXd lats;   // cell center latitudes
  Eigen::VectorXd times;  // hours since the training data start

  std::vector<bool> mask;          // per cell, true = included; empty = all
  Eigen::MatrixXd covariates;      // constants: 1 x c or n_cells x c;
                                   // full table: (n_cells * n_times) x c

  Eigen::Index n_cells() const { return lons.size() * lats.size(); }
  Eigen::Index n_times() const { return times.size(); }
  Eigen::Index n_points() const { return n_cells() * n_times(); }

  bool cell_included(Eigen::Index cell) const {
    return mask.empty() || mask[static_cast<std::size_t>(cell)];
  }

  // cell index = lat_index * n_lons + lon_index
  double lon_of(Eigen::Index cell) const { return lons(cell % lons.size()); }
  double lat_of(Eigen::Index cell) const { return lats(cell / lons.size()); }

  void validate(int n_covariates) const {
    if (lons.size() < 1 || lats.size() < 1 || times.size() < 1) {
      throw ConfigError("grid needs at least one lon, lat and time");
    }
    if (covariates.cols() != n_covariates) {
      throw DataError("grid covariates have " +
                      std::to_string(covariates.cols()) + " columns, expected " +
                      std::to_string(n_covariates));
    }
    bool ok = covariates.rows() == 1 || covariates.rows() == n_cells() ||
              covariates.rows() == n_points();
    if (!ok) {
      throw DataError("grid covariates must have 1, n_cells or "
                      "n_cells*n_times rows");
    }
    if (!mask.empty() && static_cast<Eigen::Index>(mask.size()) != n_cells()) {
      throw ConfigError("grid mask size does not match cell count");
    }
    if (!covariates.allFinite()) {
      throw DataError("grid covariates contain non-finite values");
    }
  }

  // Design-matrix row (original units) for a cell at a time index.
  Eigen::VectorXd point(Eigen::Index cell, Eigen::Index t) const {
    Eigen::VectorXd x(3 + covariates.cols());
    x(0) = lon_of(cell);
    x(1) = lat_of(cell);
    x(2) = times(t);
    Eigen::Index row = covariates.rows() == 1 ? 0
                       : covariates.rows() == n_cells()
                           ? cell
                           : cell * n_times() + t;
    x.tail(covariates.cols()) = covariates.row(row);
    return x;
  }
};

// Predictions over a grid, de-standardized to original units. Point index =
// cell * n_times + t.
struct GridPrediction {
  SpaceTimeGrid grid;
  Eigen::MatrixXd particle_means;  // n_points x J
  Eigen::MatrixXd particle_vars;   // n_points x J
  Eigen::VectorXd mean;            // ensemble mean
  Eigen::VectorXd sd;              // ensemble (mixture) sd
};

struct IntegratedMean {
  double value = 0.0;
  Eigen::Index n_cells = 0;
  Eigen::Index n_times = 0;
  Eigen::VectorXd per_particle;
};

// Ensemble prediction over every unmasked grid cell and time, mapped back to
// original units via the training standardization.
inline GridPrediction predict_grid(const SparseGPModel& model,
                                   const Ensemble& ensemble,
                                   const SpaceTimeGrid& grid,
                                   const Standardizer& stats,
                                   bool observation_scale = false) {
  const int n_cov = model.input_dim() - 3;
  grid.validate(n_cov);
  const Eigen::Index np = grid.n_points();
  const int J = ensemble.size();
  if (J < 1) throw ConfigError("predict_grid: empty ensemble");

  Eigen::MatrixXd Xraw(np, model.input_dim());
  for (Eigen::Index cell = 0; cell < grid.n_cells(); ++cell) {
    for (Eigen::Index t = 0; t < grid.n_times(); ++t) {
      Xraw.row(cell * grid.n_times() + t) = grid.point(cell, t);
    }
  }
  Eigen::MatrixXd Xs = stats.apply(Xraw);

  GridPrediction out;
  out.grid = grid;
  out.particle_means.resize(np, J);
  out.particle_vars.resize(np, J);
  for (int j = 0; j < J; ++j) {
    PredictiveOut p =
        model.predict(ensemble.particles[static_cast<std::size_t>(j)], Xs,
                      observation_scale);
    for (Eigen::Index i = 0; i < np; ++i) {
      out.particle_means(i, j) = stats.invert_y(p.mean(i));
      double sd = stats.invert_y_sd(std::sqrt(p.variance(i)));
      out.particle_vars(i, j) = sd * sd;
    }
  }
  out.mean = out.particle_means.rowwise().mean();
  Eigen::VectorXd second =
      (out.particle_vars + out.particle_means.cwiseProduct(out.particle_means))
          .rowwise()
          .mean();
  out.sd = (second - out.mean.cwiseProduct(out.mean)).cwiseMax(0.0).cwiseSqrt();
  return out;
}

struct TimeWindow {
  double t_begin = -std::numeric_limits<double>::infinity();
  double t_end = std::numeric_limits<double>::infinity();  // inclusive bounds

  bool contains(double t) const { return t >= t_begin && t <= t_end; }
};

// Uniform-weight quadrature of the predictive mean over unmasked cells and
// window times.
inline IntegratedMean integrated_mean(const GridPrediction& gp,
                                      const TimeWindow& window = {}) {
  const SpaceTimeGrid& grid = gp.grid;
  std::vector<Eigen::Index> t_idx;
  for (Eigen::Index t = 0; t < grid.n_times(); ++t) {
    if (window.contains(grid.times(t))) t_idx.push_back(t);
  }
  Eigen::Index nc = 0;
  for (Eigen::Index cell = 0; cell < grid.n_cells(); ++cell) {
    if (grid.cell_included(cell)) ++nc;
  }
  if (t_idx.empty()) throw Error("integrated_mean: empty time window", 3);
  if (nc == 0) throw Error("integrated_mean: all cells masked", 3);

  const int J = static_cast<int>(gp.particle_means.cols());
  IntegratedMean out;
  out.n_cells = nc;
  out.n_times = static_cast<Eigen::Index>(t_idx.size());
  out.per_particle.resize(J);
  double count = static_cast<double>(nc) * static_cast<double>(t_idx.size());

  KahanSum total;
  std::vector<KahanSum> per(static_cast<std::size_t>(J));
  for (Eigen::Index cell = 0; cell < grid.n_cells(); ++cell) {
    if (!grid.cell_included(cell)) continue;
    for (Eigen::Index t : t_idx) {
      Eigen::Index i = cell * grid.n_times() + t;
      total.add(gp.mean(i));
      for (int j = 0; j < J; ++j) {
        per[static_cast<std::size_t>(j)].add(gp.particle_means(i, j));
      }
    }
  }
  out.value = total.value() / count;
  for (int j = 0; j < J; ++j) {
    out.per_particle(j) = per[static_cast<std::size_t>(j)].value() / count;
  }
  return out;
}

// 100 * (after - before) / |before|; negative means a decrease.
inline double percent_change(const IntegratedMean& before,
                             const IntegratedMean& after) {
  if (before.value == 0.0) {
    throw Error("percent_change: zero baseline mean", 3);
  }
  return 100.0 * (after.value - before.value) / std::abs(before.value);
}

struct DifferenceCell {
  double lon = 0.0;
  double lat = 0.0;
  double diff = 0.0;  // time-integrated mean of (b - a)
};

// Per-cell time-integrated mean difference between two grid predictions with
// identical geometry.
inline std::vector<DifferenceCell> difference_surface(
    const GridPrediction& a, const GridPrediction& b,
    const TimeWindow& window = {}) {
  const SpaceTimeGrid& g = a.grid;
  bool same = g.lons.size() == b.grid.lons.size() &&
              g.lats.size() == b.grid.lats.size() &&
              g.times.size() == b.grid.times.size() &&
              g.lons == b.grid.lons && g.lats == b.grid.lats &&
              g.times == b.grid.times && g.mask == b.grid.mask;
  if (!same) throw ConfigError("difference_surface: grid geometry mismatch");

  std::vector<Eigen::Index> t_idx;
  for (Eigen::Index t = 0; t < g.n_times(); ++t) {
    if (window.contains(g.times(t))) t_idx.push_back(t);
  }
  if (t_idx.empty()) throw Error("difference_surface: empty time window", 3);

  std::vector<DifferenceCell> out;
  for (Eigen::Index cell = 0; cell < g.n_cells(); ++cell) {
    if (!g.cell_included(cell)) continue;
    KahanSum s;
    for (Eigen::Index t : t_idx) {
      Eigen::Index i = cell * g.n_times() + t;
      s.add(b.mean(i) - a.mean(i));
    }
    out.push_back({g.lon_of(cell), g.lat_of(cell),
                   s.value() / static_cast<double>(t_idx.size())});
  }
  return out;
}

struct SeriesPoint {
  double time = 0.0;  // hours since dataset start
  double mean = 0.0;
  double sd = 0.0;
};

// Inferred time series at a fixed location: ensemble mean and mixture sd per
// timestamp, in original units. covariates follows the SpaceTimeGrid rules
// (1 row broadcast or one row per time).
inline std::vector<SeriesPoint> location_series(
    const SparseGPModel& model, const Ensemble& ensemble, double lon,
    double lat, const Eigen::Ref<const Eigen::VectorXd>& times,
    const Eigen::Ref<const Eigen::MatrixXd>& covariates,
    const Standardizer& stats, bool observation_scale = false) {
  SpaceTimeGrid g;
  g.lons = Eigen::VectorXd::Constant(1, lon);
  g.lats = Eigen::VectorXd::Constant(1, lat);
  g.times = times;
  if (covariates.rows() != 1 && covariates.rows() != times.size()) {
    throw DataError("location_series: covariates must have 1 row or one per "
                    "timestamp");
  }
  g.covariates = covariates;
  GridPrediction p =
      predict_grid(model, ensemble, g, stats, observation_scale);
  std::vector<SeriesPoint> out;
  out.reserve(static_cast<std::size_t>(times.size()));
  for (Eigen::Index t = 0; t < times.size(); ++t) {
    out.push_back({times(t), p.mean(t), p.sd(t)});
  }
  return out;
}

}  // namespace svgp
