#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ltm/lattice.hpp"

namespace ltm {

/// Normalised effective sample size (sum w)^2 / (M sum w^2) from log weights.
/// Returns 0 when no weight is positive.
double ess(std::span<const double> log_weights);

double mean_field(std::span<const double> phi);
/// |mean field|.
double magnetization(std::span<const double> phi);
/// N (<M^2> - <M>^2) over a series of magnetizations.
double susceptibility(std::span<const double> magnetizations, int volume);

/// Action density S / N.
double energy(std::span<const double> phi, const PhiFourParams& params, const LatticeGeometry& geom);
inline constexpr const char* kEnergyDefinition = "action_density";

using Statistic = std::function<double(std::span<const double>)>;

double mean(std::span<const double> series);
Statistic susceptibility_statistic(int volume);

struct BootstrapResult {
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  int resamples = 0;
};

/// Percentile interval of `statistic` over resamples of the full series
/// drawn with replacement. The estimate is the statistic of the series itself.
BootstrapResult bootstrap_ci(std::span<const double> series, const Statistic& statistic, std::uint64_t seed,
                             int resamples = 500, double level = 0.68);

struct ErrorRow {
  int m = 0;
  double estimate = 0.0;
  double err_lo = 0.0;  // estimate - lower bound
  double err_hi = 0.0;  // upper bound - estimate
  std::string statistic;
  std::string sampler;

  double half_width() const { return 0.5 * (err_lo + err_hi); }
};

/// Bootstrap error of `statistic` on each prefix series[0, m) for m in `sizes`.
std::vector<ErrorRow> error_vs_samples(std::span<const double> series, const Statistic& statistic,
                                       std::span<const int> sizes, const std::string& statistic_name,
                                       const std::string& sampler, std::uint64_t seed, int resamples = 500);

/// Least-squares slope of log(err) against log(m) using half-widths.
double loglog_slope(std::span<const ErrorRow> rows);

/// Header `M,estimate,err_lo,err_hi,statistic,sampler`.
void write_error_csv(std::span<const ErrorRow> rows, std::ostream& out);

}  // namespace ltm
