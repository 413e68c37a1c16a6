#include "ltm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <random>
#include <stdexcept>

namespace ltm {

double ess(std::span<const double> log_weights) {
  if (log_weights.empty()) throw std::invalid_argument("ess needs at least one weight");
  double top = -std::numeric_limits<double>::infinity();
  for (double lw : log_weights) {
    if (std::isnan(lw)) throw std::invalid_argument("ess got a NaN log weight");
    top = std::max(top, lw);
  }
  if (!std::isfinite(top)) {
    if (top < 0.0) {
      std::cerr << "warning: all importance weights are zero; ess = 0\n";
      return 0.0;
    }
    throw std::invalid_argument("ess got an infinite log weight");
  }
  double sum = 0.0;
  double sum_sq = 0.0;
  for (double lw : log_weights) {
    const double w = std::exp(lw - top);
    sum += w;
    sum_sq += w * w;
  }
  return sum * sum / sum_sq / static_cast<double>(log_weights.size());
}

double mean_field(std::span<const double> phi) {
  if (phi.empty()) throw std::invalid_argument("empty field");
  double s = 0.0;
  for (double v : phi) s += v;
  return s / static_cast<double>(phi.size());
}

double magnetization(std::span<const double> phi) { return std::abs(mean_field(phi)); }

double mean(std::span<const double> series) {
  if (series.empty()) throw std::invalid_argument("mean of an empty series");
  double s = 0.0;
  for (double v : series) s += v;
  return s / static_cast<double>(series.size());
}

double susceptibility(std::span<const double> magnetizations, int volume) {
  if (magnetizations.empty()) throw std::invalid_argument("susceptibility of an empty series");
  // <M^2> - <M>^2 as a two-pass variance about a mean shifted by the first
  // sample, so a constant series gives exactly zero.
  const double n = static_cast<double>(magnetizations.size());
  const double x0 = magnetizations[0];
  double shift = 0.0;
  for (double v : magnetizations) shift += v - x0;
  const double m = x0 + shift / n;
  double ss = 0.0;
  for (double v : magnetizations) ss += (v - m) * (v - m);
  return std::max(0.0, volume * ss / n);
}

Statistic susceptibility_statistic(int volume) {
  return [volume](std::span<const double> s) { return susceptibility(s, volume); };
}

double energy(std::span<const double> phi, const PhiFourParams& params, const LatticeGeometry& geom) {
  return action(phi, params, geom) / geom.volume();
}

namespace {

// Linear interpolation between order statistics of a sorted sample.
double quantile(const std::vector<double>& sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

BootstrapResult bootstrap_ci(std::span<const double> series, const Statistic& statistic, std::uint64_t seed,
                             int resamples, double level) {
  if (series.size() < 2) throw std::invalid_argument("bootstrap needs at least two samples");
  if (resamples < 1) throw std::invalid_argument("bootstrap needs at least one resample");
  if (!(level > 0.0 && level <= 1.0)) throw std::invalid_argument("bootstrap level must lie in (0, 1]");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, series.size() - 1);
  std::vector<double> draw(series.size());
  std::vector<double> stats(resamples);
  for (int r = 0; r < resamples; ++r) {
    for (double& v : draw) v = series[pick(rng)];
    stats[r] = statistic(draw);
  }
  std::sort(stats.begin(), stats.end());
  BootstrapResult out;
  out.estimate = statistic(series);
  out.lower = quantile(stats, 0.5 * (1.0 - level));
  out.upper = quantile(stats, 0.5 * (1.0 + level));
  out.resamples = resamples;
  return out;
}

std::vector<ErrorRow> error_vs_samples(std::span<const double> series, const Statistic& statistic,
                                       std::span<const int> sizes, const std::string& statistic_name,
                                       const std::string& sampler, std::uint64_t seed, int resamples) {
  std::vector<ErrorRow> rows;
  rows.reserve(sizes.size());
  for (int m : sizes) {
    if (m < 2 || static_cast<std::size_t>(m) > series.size()) {
      throw std::invalid_argument("sub-sample size " + std::to_string(m) + " outside [2, " +
                                  std::to_string(series.size()) + "]");
    }
    const BootstrapResult b = bootstrap_ci(series.first(m), statistic, seed, resamples);
    rows.push_back({m, b.estimate, b.estimate - b.lower, b.upper - b.estimate, statistic_name, sampler});
  }
  return rows;
}

double loglog_slope(std::span<const ErrorRow> rows) {
  if (rows.size() < 2) throw std::invalid_argument("slope needs at least two rows");
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (const ErrorRow& r : rows) {
    const double x = std::log(static_cast<double>(r.m));
    const double y = std::log(r.half_width());
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(rows.size());
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

void write_error_csv(std::span<const ErrorRow> rows, std::ostream& out) {
  out << "M,estimate,err_lo,err_hi,statistic,sampler\n";
  out.precision(17);
  for (const ErrorRow& r : rows) {
    out << r.m << ',' << r.estimate << ',' << r.err_lo << ',' << r.err_hi << ',' << r.statistic << ','
        << r.sampler << '\n';
  }
}

}  // namespace ltm
