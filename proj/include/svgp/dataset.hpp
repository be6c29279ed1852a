#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "svgp/errors.hpp"

namespace svgp {

// Per-column affine standardization (population sd). Column order matches the
// design matrix; the response is held separately.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
  double y_mean = 0.0;
  double y_sd = 1.0;

  Eigen::MatrixXd apply(const Eigen::Ref<const Eigen::MatrixXd>& X) const {
    if (X.cols() != mean.size()) {
      throw ShapeError("Standardizer: column count mismatch");
    }
    return (X.rowwise() - mean.transpose()).array().rowwise() /
           sd.transpose().array();
  }

  Eigen::MatrixXd invert(const Eigen::Ref<const Eigen::MatrixXd>& Xs) const {
    return (Xs.array().rowwise() * sd.transpose().array()).matrix().rowwise() +
           mean.transpose();
  }

  double apply_y(double y) const { return (y - y_mean) / y_sd; }
  double invert_y(double ys) const { return ys * y_sd + y_mean; }
  double invert_y_sd(double sds) const { return sds * y_sd; }
};

struct Dataset {
  Eigen::MatrixXd X;  // n x d, standardized
  Eigen::VectorXd y;  // n, standardized
  Standardizer stats;
  int dropped_rows = 0;
  std::int64_t t0_epoch_seconds = 0;  // earliest timestamp in the source file
  std::vector<std::string> covariate_columns;

  Eigen::Index size() const { return X.rows(); }
  int dim() const { return static_cast<int>(X.cols()); }
};

// Standardize columns in place (population sd); throws on degenerate columns.
inline Standardizer fit_standardizer(Eigen::MatrixXd& X, Eigen::VectorXd& y,
                                     const std::vector<std::string>& names) {
  Standardizer s;
  const double n = static_cast<double>(X.rows());
  s.mean = X.colwise().mean();
  s.sd.resize(X.cols());
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    double var = (X.col(c).array() - s.mean(c)).square().sum() / n;
    s.sd(c) = std::sqrt(var);
    if (!(s.sd(c) > 0.0)) {
      std::string name = c < static_cast<Eigen::Index>(names.size())
                             ? names[static_cast<std::size_t>(c)]
                             : std::to_string(c);
      throw DataError("degenerate column '" + name + "': zero variance");
    }
  }
  s.y_mean = y.mean();
  s.y_sd = std::sqrt((y.array() - s.y_mean).square().sum() / n);
  if (!(s.y_sd > 0.0)) throw DataError("degenerate column 'no2': zero variance");
  X = s.apply(X);
  y = (y.array() - s.y_mean) / s.y_sd;
  return s;
}

namespace detail {

// Days since 1970-01-01 for a civil date (valid for the Gregorian calendar).
inline std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy =
      static_cast<unsigned>((153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1);
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    // trim whitespace and CR
    std::size_t b = field.find_first_not_of(" \t\r");
    std::size_t e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string()
                                         : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty() || s == "NA" || s == "nan" || s == "NaN") return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

}  // namespace detail

// ISO-8601 timestamp (YYYY-MM-DD[THH:MM[:SS]]) to epoch seconds.
inline std::int64_t parse_timestamp(const std::string& s) {
  int Y = 0, M = 0, D = 0, h = 0, mi = 0, se = 0;
  char sep = 'T';
  int n = std::sscanf(s.c_str(), "%d-%d-%d%c%d:%d:%d", &Y, &M, &D, &sep, &h,
                      &mi, &se);
  bool ok = (n == 3) || ((n == 6 || n == 7) && (sep == 'T' || sep == ' '));
  if (!ok || M < 1 || M > 12 || D < 1 || D > 31 || h > 23 || mi > 59 ||
      se > 60) {
    throw DataError("unparseable timestamp '" + s + "'");
  }
  return detail::days_from_civil(Y, M, D) * 86400 + h * 3600 + mi * 60 + se;
}

inline std::string format_timestamp(std::int64_t epoch_seconds) {
  std::int64_t days = epoch_seconds / 86400;
  std::int64_t rem = epoch_seconds - days * 86400;
  if (rem < 0) { rem += 86400; days -= 1; }
  // civil_from_days
  days += 719468;
  const std::int64_t era = (days >= 0 ? days : days - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(days - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp + (mp < 10 ? 3 : -9);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04lld-%02u-%02uT%02lld:%02lld:%02lld",
                static_cast<long long>(y + (m <= 2)), m, d,
                static_cast<long long>(rem / 3600),
                static_cast<long long>((rem / 60) % 60),
                static_cast<long long>(rem % 60));
  return buf;
}

// Parse a CSV with columns lon, lat, timestamp, the named covariates and no2.
// Rows with missing values are dropped (counted); time becomes fractional
// hours since the earliest timestamp; all columns are standardized.
inline Dataset ingest_csv(const std::string& path,
                          const std::vector<std::string>& covariate_columns) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file '" + path + "'");

  std::string header;
  if (!std::getline(in, header)) throw DataError("empty data file '" + path + "'");
  std::vector<std::string> cols = detail::split_csv_line(header);

  auto find_col = [&](const std::string& name) {
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (cols[i] == name) return static_cast<int>(i);
    }
    std::string have;
    for (const auto& c : cols) have += (have.empty() ? "" : ", ") + c;
    throw DataError("missing required column '" + name +
                    "'; file has: " + have +
                    " (expected lon, lat, timestamp, covariates, no2)");
  };

  std::vector<int> idx;
  idx.push_back(find_col("lon"));
  idx.push_back(find_col("lat"));
  int ts_idx = find_col("timestamp");
  for (const auto& c : covariate_columns) idx.push_back(find_col(c));
  int y_idx = find_col("no2");

  const int d = static_cast<int>(2 + 1 + covariate_columns.size());
  std::vector<double> values;   // d per kept row (time slot filled later)
  std::vector<std::int64_t> times;
  std::vector<double> ys;
  int dropped = 0;

  std::string line;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    std::vector<std::string> f = detail::split_csv_line(line);
    if (f.size() < cols.size()) {
      throw DataError("line " + std::to_string(lineno) + ": expected " +
                      std::to_string(cols.size()) + " fields, got " +
                      std::to_string(f.size()));
    }
    std::vector<double> row(static_cast<std::size_t>(d), 0.0);
    bool missing = false;
    double v;
    if (detail::parse_double(f[static_cast<std::size_t>(idx[0])], v)) row[0] = v; else missing = true;
    if (detail::parse_double(f[static_cast<std::size_t>(idx[1])], v)) row[1] = v; else missing = true;
    for (std::size_t c = 0; c < covariate_columns.size(); ++c) {
      if (detail::parse_double(f[static_cast<std::size_t>(idx[2 + c])], v)) {
        row[3 + c] = v;
      } else {
        missing = true;
      }
    }
    double yv = 0.0;
    if (!detail::parse_double(f[static_cast<std::size_t>(y_idx)], yv)) missing = true;

    const std::string& ts = f[static_cast<std::size_t>(ts_idx)];
    if (ts.empty()) {
      ++dropped;
      continue;
    }
    std::int64_t t;
    try {
      t = parse_timestamp(ts);
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    }
    if (missing) {
      ++dropped;
      continue;
    }
    times.push_back(t);
    ys.push_back(yv);
    values.insert(values.end(), row.begin(), row.end());
  }
  const Eigen::Index n = static_cast<Eigen::Index>(ys.size());
  if (n == 0) throw DataError("no usable rows in '" + path + "'");

  std::int64_t t0 = *std::min_element(times.begin(), times.end());
  Eigen::MatrixXd X(n, d);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < d; ++c) {
      X(i, c) = values[static_cast<std::size_t>(i * d + c)];
    }
    X(i, 2) = static_cast<double>(times[static_cast<std::size_t>(i)] - t0) / 3600.0;
    y(i) = ys[static_cast<std::size_t>(i)];
  }

  Dataset ds;
  std::vector<std::string> names = {"lon", "lat", "time"};
  names.insert(names.end(), covariate_columns.begin(), covariate_columns.end());
  ds.stats = fit_standardizer(X, y, names);
  ds.X = std::move(X);
  ds.y = std::move(y);
  ds.dropped_rows = dropped;
  ds.t0_epoch_seconds = t0;
  ds.covariate_columns = covariate_columns;
  return ds;
}

inline std::vector<std::string> default_covariate_columns() {
  return {"wind_speed", "wind_dir", "humidity", "temperature"};
}

}  // namespace svgp
