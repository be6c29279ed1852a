// Command-line front end: synth | fit | predict | compare | init-inducing.
// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical error.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "svgp/analysis.hpp"
#include "svgp/artifact.hpp"
#include "svgp/config.hpp"
#include "svgp/kdpp.hpp"
#include "svgp/simulate.hpp"
#include "svgp/svgd.hpp"

namespace fs = std::filesystem;
using namespace svgp;

namespace {

constexpr const char* kVersion = "1.0.0";

int g_verbosity = 1;  // 0 quiet, 1 normal, 2 verbose

void log_line(int level, const std::string& msg) {
  if (g_verbosity >= level) std::cerr << msg << "\n";
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Reproducibility manifest, one per CLI run.
void write_manifest(const std::string& out_dir, const std::string& command,
                    const json& config_snapshot, std::uint64_t seed,
                    const json& extra = json::object()) {
  json m;
  m["command"] = command;
  m["seed"] = seed;
  m["config"] = config_snapshot;
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(fnv1a(config_snapshot.dump())));
  m["config_hash"] = hash;
  m["versions"]["svgp"] = kVersion;
  m["versions"]["artifact_format"] = 1;
  m["versions"]["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." +
                           std::to_string(EIGEN_MAJOR_VERSION) + "." +
                           std::to_string(EIGEN_MINOR_VERSION);
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  std::ofstream out(out_dir + "/manifest.json");
  if (!out) throw DataError("cannot write manifest in '" + out_dir + "'");
  out << m.dump(2) << "\n";
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory '" + dir + "'");
}

// --- grid assembly from flags ------------------------------------------------

struct GridFlags {
  double lon_min = -5.0, lon_max = 1.0;
  double lat_min = 50.0, lat_max = 55.0;
  int lon_steps = 10, lat_steps = 10;
  double t_begin = 0.0, t_end = 0.0, t_step = 24.0;
  std::vector<double> covariates;  // constant, original units
  std::string mask_path;

  void add_options(CLI::App* cmd) {
    cmd->add_option("--lon-min", lon_min, "Grid west edge (default -5)");
    cmd->add_option("--lon-max", lon_max, "Grid east edge (default 1)");
    cmd->add_option("--lon-steps", lon_steps, "Grid cells east-west (default 10)");
    cmd->add_option("--lat-min", lat_min, "Grid south edge (default 50)");
    cmd->add_option("--lat-max", lat_max, "Grid north edge (default 55)");
    cmd->add_option("--lat-steps", lat_steps, "Grid cells north-south (default 10)");
    cmd->add_option("--t-begin", t_begin,
                    "Window start, hours since the training data start");
    cmd->add_option("--t-end", t_end, "Window end, hours (inclusive)");
    cmd->add_option("--t-step", t_step, "Hours between grid times (default 24)");
    cmd->add_option("--cov", covariates,
                    "Constant covariate values in original units "
                    "(default: training means)");
    cmd->add_option("--mask", mask_path,
                    "Cell mask file: one 0/1 per line, lat-major order");
  }

  SpaceTimeGrid build(const Standardizer& stats, int n_cov) const {
    if (lon_steps < 1 || lat_steps < 1 || !(t_step > 0.0)) {
      throw ConfigError("grid steps must be positive");
    }
    if (t_end < t_begin) throw ConfigError("--t-end before --t-begin");
    SpaceTimeGrid g;
    g.lons = Eigen::VectorXd::LinSpaced(lon_steps, lon_min, lon_max);
    g.lats = Eigen::VectorXd::LinSpaced(lat_steps, lat_min, lat_max);
    int nt = static_cast<int>(std::floor((t_end - t_begin) / t_step)) + 1;
    g.times = Eigen::VectorXd::LinSpaced(nt, t_begin,
                                         t_begin + (nt - 1) * t_step);
    Eigen::VectorXd cov(n_cov);
    if (covariates.empty()) {
      cov = stats.mean.tail(n_cov);  // training-mean covariates
    } else if (static_cast<int>(covariates.size()) == n_cov) {
      for (int c = 0; c < n_cov; ++c) cov(c) = covariates[static_cast<std::size_t>(c)];
    } else {
      throw ConfigError("--cov needs " + std::to_string(n_cov) + " values");
    }
    g.covariates = cov.transpose();
    if (!mask_path.empty()) {
      std::ifstream in(mask_path);
      if (!in) throw DataError("cannot open mask file '" + mask_path + "'");
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        g.mask.push_back(line[0] != '0');
      }
      if (static_cast<Eigen::Index>(g.mask.size()) != g.n_cells()) {
        throw ConfigError("mask has " + std::to_string(g.mask.size()) +
                          " cells, grid has " + std::to_string(g.n_cells()));
      }
    }
    return g;
  }
};

void write_grid_csv(const std::string& path, const GridPrediction& gp) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "lon,lat,time,mean,sd\n";
  char buf[160];
  for (Eigen::Index cell = 0; cell < gp.grid.n_cells(); ++cell) {
    if (!gp.grid.cell_included(cell)) continue;
    for (Eigen::Index t = 0; t < gp.grid.n_times(); ++t) {
      Eigen::Index i = cell * gp.grid.n_times() + t;
      std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%.10g,%.10g,%.10g\n",
                    gp.grid.lon_of(cell), gp.grid.lat_of(cell),
                    gp.grid.times(t), gp.mean(i), gp.sd(i));
      out << buf;
    }
  }
}

// --- subcommand bodies -------------------------------------------------------

int run_synth(const std::string& out_path, SynthOptions opt) {
  SynthData data = generate_synthetic(opt);
  std::vector<std::string> names = default_covariate_columns();
  while (static_cast<int>(names.size()) < opt.n_covariates) {
    names.push_back("cov" + std::to_string(names.size() + 1));
  }
  names.resize(static_cast<std::size_t>(opt.n_covariates));
  write_synthetic_csv(data, opt, out_path, names);
  log_line(1, "wrote " + std::to_string(opt.n) + " rows to " + out_path);
  return 0;
}

int run_fit(const std::string& config_path, const std::string& out_dir,
            std::int64_t seed_override) {
  RunConfig config = load_run_config(config_path);
  if (seed_override >= 0) {
    config.seed = static_cast<std::uint64_t>(seed_override);
    config.svgd.seed = config.seed;
    config.kdpp.seed = config.seed;
  }
  if (config.train_csv.empty()) {
    throw ConfigError("config is missing data.train_csv");
  }
  ensure_dir(out_dir);

  auto t_start = std::chrono::steady_clock::now();
  log_line(1, "ingesting " + config.train_csv);
  Dataset data = ingest_csv(config.train_csv, config.covariate_columns);
  log_line(1, "  " + std::to_string(data.size()) + " rows, " +
                  std::to_string(data.dropped_rows) + " dropped");

  log_line(1, "k-DPP inducing-point initialization (k = " +
                  std::to_string(config.kdpp.k) + ")");
  Eigen::MatrixXd Z = init_inducing(data.X, config.kdpp);

  SparseGPModel model(config.build_kernel(), Z, config.jitter);
  config.apply_prior_overrides(model.layout());
  log_line(1, "fitting: J = " + std::to_string(config.svgd.n_particles) +
                  ", " + std::to_string(config.svgd.schedule.total_iterations()) +
                  " iterations");
  FitResult result = fit(model, data, config.svgd);

  Artifact art;
  art.config = config;
  art.stats = data.stats;
  art.t0_epoch_seconds = data.t0_epoch_seconds;
  art.dropped_rows = data.dropped_rows;
  art.Z = Z;
  art.ensemble = result.ensemble;
  std::string artifact_path = out_dir + "/ensemble.bin";
  save_artifact(art, artifact_path);

  std::string trace_path = out_dir + "/trace.csv";
  {
    std::ofstream trace(trace_path);
    if (!trace) throw DataError("cannot write '" + trace_path + "'");
    trace << "iteration,stage,step_size,bandwidth,mean_log_joint\n";
    char buf[128];
    for (const TraceRow& r : result.trace) {
      std::snprintf(buf, sizeof(buf), "%d,%d,%.10g,%.10g,%.10g\n", r.iteration,
                    r.stage, r.step_size, r.bandwidth, r.mean_log_joint);
      trace << buf;
    }
  }

  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                              t_start)
                    .count();
  json extra;
  extra["n_rows"] = data.size();
  extra["dropped_rows"] = data.dropped_rows;
  extra["artifact"] = artifact_path;
  extra["trace"] = trace_path;
  extra["elapsed_seconds"] = secs;
  write_manifest(out_dir, "fit", to_json(config), config.seed, extra);
  log_line(1, "wrote " + artifact_path);
  return 0;
}

int run_predict(const std::string& artifact_path, const std::string& out_dir,
                const GridFlags& gf, bool observation_scale, bool series,
                double series_lon, double series_lat) {
  Artifact art = load_artifact(artifact_path);
  SparseGPModel model = art.build_model();
  const int n_cov = model.input_dim() - 3;
  ensure_dir(out_dir);

  json extra;
  extra["artifact"] = artifact_path;
  if (series) {
    SpaceTimeGrid g = gf.build(art.stats, n_cov);
    std::vector<SeriesPoint> pts = location_series(
        model, art.ensemble, series_lon, series_lat, g.times, g.covariates,
        art.stats, observation_scale);
    std::string path = out_dir + "/series.csv";
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << "time,mean,sd\n";
    char buf[96];
    for (const SeriesPoint& p : pts) {
      std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%.10g\n", p.time, p.mean,
                    p.sd);
      out << buf;
    }
    extra["series"] = path;
    log_line(1, "wrote " + path);
  } else {
    SpaceTimeGrid g = gf.build(art.stats, n_cov);
    GridPrediction gp =
        predict_grid(model, art.ensemble, g, art.stats, observation_scale);
    std::string path = out_dir + "/grid.csv";
    write_grid_csv(path, gp);
    extra["grid"] = path;
    log_line(1, "wrote " + path);
  }
  write_manifest(out_dir, "predict", to_json(art.config), art.config.seed,
                 extra);
  return 0;
}

int run_compare(const std::string& artifact_a, const std::string& artifact_b,
                const std::string& out_dir, const GridFlags& gf,
                double b_begin, double b_end, bool has_window_b) {
  Artifact arta = load_artifact(artifact_a);
  Artifact artb = load_artifact(artifact_b);
  SparseGPModel ma = arta.build_model();
  SparseGPModel mb = artb.build_model();
  if (ma.input_dim() != mb.input_dim()) {
    throw ConfigError("artifacts have different input dimensions");
  }
  ensure_dir(out_dir);
  const int n_cov = ma.input_dim() - 3;

  // one grid geometry for both fits; each artifact's own standardization
  GridFlags span = gf;
  if (has_window_b) {
    span.t_begin = std::min(gf.t_begin, b_begin);
    span.t_end = std::max(gf.t_end, b_end);
  }
  SpaceTimeGrid g = span.build(arta.stats, n_cov);
  GridPrediction pa = predict_grid(ma, arta.ensemble, g, arta.stats);
  GridPrediction pb = predict_grid(mb, artb.ensemble, g, artb.stats);

  TimeWindow wa{gf.t_begin, gf.t_end};
  TimeWindow wb = has_window_b ? TimeWindow{b_begin, b_end} : wa;
  IntegratedMean ia = integrated_mean(pa, wa);
  IntegratedMean ib = integrated_mean(pb, wb);
  double change = percent_change(ia, ib);

  std::vector<DifferenceCell> diff = difference_surface(pa, pb);
  std::string diff_path = out_dir + "/difference.csv";
  {
    std::ofstream out(diff_path);
    if (!out) throw DataError("cannot write '" + diff_path + "'");
    out << "lon,lat,diff\n";
    char buf[96];
    for (const DifferenceCell& c : diff) {
      std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%.10g\n", c.lon, c.lat,
                    c.diff);
      out << buf;
    }
  }

  json report;
  report["artifact_a"] = artifact_a;
  report["artifact_b"] = artifact_b;
  report["window_a"] = {{"t_begin", wa.t_begin}, {"t_end", wa.t_end}};
  report["window_b"] = {{"t_begin", wb.t_begin}, {"t_end", wb.t_end}};
  report["integrated_mean_a"] = ia.value;
  report["integrated_mean_b"] = ib.value;
  report["percent_change"] = change;
  report["n_cells"] = ia.n_cells;
  report["per_particle_a"] =
      std::vector<double>(ia.per_particle.data(),
                          ia.per_particle.data() + ia.per_particle.size());
  report["per_particle_b"] =
      std::vector<double>(ib.per_particle.data(),
                          ib.per_particle.data() + ib.per_particle.size());
  report["difference_csv"] = diff_path;
  std::string report_path = out_dir + "/compare.json";
  {
    std::ofstream out(report_path);
    if (!out) throw DataError("cannot write '" + report_path + "'");
    out << report.dump(2) << "\n";
  }

  json extra;
  extra["report"] = report_path;
  extra["percent_change"] = change;
  write_manifest(out_dir, "compare", to_json(arta.config), arta.config.seed,
                 extra);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "percent change: %+.2f%%", change);
  log_line(1, buf);
  return 0;
}

int run_init_inducing(const std::string& config_path,
                      const std::string& out_dir) {
  RunConfig config = load_run_config(config_path);
  if (config.train_csv.empty()) {
    throw ConfigError("config is missing data.train_csv");
  }
  ensure_dir(out_dir);
  Dataset data = ingest_csv(config.train_csv, config.covariate_columns);
  Eigen::MatrixXd Zs = init_inducing(data.X, config.kdpp);
  Eigen::MatrixXd Z = data.stats.invert(Zs);  // audit in original units

  std::string path = out_dir + "/inducing.csv";
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "lon,lat,time";
  for (const auto& c : config.covariate_columns) out << "," << c;
  out << "\n";
  char buf[48];
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    for (Eigen::Index c = 0; c < Z.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), c == 0 ? "%.10g" : ",%.10g", Z(i, c));
      out << buf;
    }
    out << "\n";
  }
  json extra;
  extra["inducing"] = path;
  extra["k"] = config.kdpp.k;
  write_manifest(out_dir, "init-inducing", to_json(config), config.seed, extra);
  log_line(1, "wrote " + path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Stein variational sparse GP regression for spatiotemporal NO2 data.\n"
      "Input CSV schema: header with lon, lat, timestamp (ISO-8601), the\n"
      "configured covariate columns, and no2. Rows with missing values are\n"
      "dropped. All columns are standardized with the population sd.\n"
      "Grid CSV output columns: lon, lat, time, mean, sd (original units;\n"
      "time is hours since the training data start)."};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  app.add_flag_callback("-v,--verbose", [] { g_verbosity = 2; },
                        "Verbose logging");
  app.add_flag_callback("-q,--quiet", [] { g_verbosity = 0; },
                        "Suppress progress output");

  // synth
  auto* synth = app.add_subcommand(
      "synth", "Generate a synthetic dataset drawn from a known GP");
  std::string synth_out = "synthetic.csv";
  SynthOptions sopt;
  std::int64_t synth_seed = 0;
  synth->add_option("-o,--out", synth_out, "Output CSV path");
  synth->add_option("--n", sopt.n, "Number of observations (default 5000)");
  synth->add_option("--seed", synth_seed, "RNG seed");
  synth->add_option("--covariates", sopt.n_covariates,
                    "Covariate column count (default 4)");
  synth->add_option("--active-covariates", sopt.active_covariates,
                    "Covariates the latent function uses (default 2)");
  synth->add_option("--noise-sd", sopt.noise_sd, "Observation noise sd");
  synth->add_option("--baseline", sopt.baseline, "Mean response level");
  synth->add_option("--latent-scale", sopt.latent_scale,
                    "Multiplier on the latent surface (regime contrast)");
  synth->add_option("--hours", sopt.hours, "Time span in hours");

  // fit
  auto* fitc = app.add_subcommand("fit", "Fit an ensemble from a config file");
  std::string fit_config, fit_out = "run";
  std::int64_t fit_seed = -1;
  fitc->add_option("-c,--config", fit_config, "JSON config path")->required();
  fitc->add_option("-o,--out-dir", fit_out, "Output directory (default run/)");
  fitc->add_option("--seed", fit_seed, "Override the config seed");

  // predict
  auto* pred = app.add_subcommand(
      "predict", "Predict a grid surface or a single-location time series");
  std::string pred_artifact, pred_out = "predict";
  GridFlags pred_grid;
  bool pred_obs = false, pred_series = false;
  double series_lon = 0.0, series_lat = 0.0;
  pred->add_option("-a,--artifact", pred_artifact, "Ensemble artifact path")
      ->required();
  pred->add_option("-o,--out-dir", pred_out, "Output directory");
  pred_grid.add_options(pred);
  pred->add_flag("--observation-scale", pred_obs,
                 "Include observation noise in predictive sd");
  pred->add_flag("--series", pred_series,
                 "Time series at --lon/--lat instead of a grid");
  pred->add_option("--lon", series_lon, "Series longitude");
  pred->add_option("--lat", series_lat, "Series latitude");

  // compare
  auto* cmp = app.add_subcommand(
      "compare", "Integrated-mean comparison of two fitted ensembles");
  std::string cmp_a, cmp_b, cmp_out = "compare";
  GridFlags cmp_grid;
  double cmp_b_begin = 0.0, cmp_b_end = 0.0;
  cmp->add_option("-a,--artifact-a", cmp_a, "Baseline ensemble")->required();
  cmp->add_option("-b,--artifact-b", cmp_b, "Comparison ensemble")->required();
  cmp->add_option("-o,--out-dir", cmp_out, "Output directory");
  cmp_grid.add_options(cmp);
  auto* optb1 = cmp->add_option("--t-begin-b", cmp_b_begin,
                                "Window start for artifact B (hours)");
  auto* optb2 = cmp->add_option("--t-end-b", cmp_b_end,
                                "Window end for artifact B (hours)");

  // init-inducing
  auto* init = app.add_subcommand(
      "init-inducing", "Audit the k-DPP inducing-point selection");
  std::string init_config, init_out = "inducing";
  init->add_option("-c,--config", init_config, "JSON config path")->required();
  init->add_option("-o,--out-dir", init_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // usage problems are config errors
  }

  try {
    if (*synth) {
      sopt.seed = static_cast<std::uint64_t>(synth_seed);
      return run_synth(synth_out, sopt);
    }
    if (*fitc) return run_fit(fit_config, fit_out, fit_seed);
    if (*pred) {
      return run_predict(pred_artifact, pred_out, pred_grid, pred_obs,
                         pred_series, series_lon, series_lat);
    }
    if (*cmp) {
      bool has_b = *optb1 || *optb2;
      if (*optb1 != *optb2 && has_b) {
        if (!*optb1) cmp_b_begin = cmp_grid.t_begin;
        if (!*optb2) cmp_b_end = cmp_grid.t_end;
      }
      return run_compare(cmp_a, cmp_b, cmp_out, cmp_grid, cmp_b_begin,
                         cmp_b_end, has_b);
    }
    if (*init) return run_init_inducing(init_config, init_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
