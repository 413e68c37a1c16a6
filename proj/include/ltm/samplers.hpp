#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ltm/lattice.hpp"
#include "ltm/random.hpp"
#include "ltm/transport.hpp"

namespace ltm {

/// Kept part of a Markov chain plus run metadata.
struct ChainRecord {
  std::string sampler;
  std::uint64_t seed = 0;
  int volume = 0;
  int burn_in = 0;
  std::vector<double> configs;  // kept configurations, one after another; empty unless requested
  std::vector<char> accepted;
  std::vector<double> action;
  std::vector<double> mean_field;  // signed
  double acceptance_rate = 0.0;    // over the kept chain
  double tuned_parameter = 0.0;    // HMC step size or IMH proposal scale
  long rejected_non_finite = 0;

  std::size_t size() const { return accepted.size(); }
  std::span<const double> config(std::size_t i) const {
    return {configs.data() + i * static_cast<std::size_t>(volume), static_cast<std::size_t>(volume)};
  }
  /// |mean field| per kept sample.
  std::vector<double> magnetizations() const;
  /// action / N per kept sample.
  std::vector<double> energies() const;
};

/// A chain could not be run to a usable result.
class SamplerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Multiplicative windowed adaptation x <- x exp(rate (acc - target)).
double adapt_multiplicative(double value, double window_acceptance, double target, double rate);

/// Half kick, n_steps drifts separated by full kicks, half kick, with force
/// -dS/dphi. Returns false when the trajectory becomes non-finite.
bool leapfrog(std::span<double> phi, std::span<double> momentum, double eps, int n_steps, const Action& action);

struct HmcConfig {
  int leapfrog_steps = 10;
  double step_size = 0.1;
  double target_acceptance = 0.70;
  double adapt_rate = 0.5;
  int adapt_window = 100;
  int burn_in = 2000;
  int chain_length = 20000;  // total steps including burn-in
  std::uint64_t seed = 0;
  bool keep_configs = false;

  void validate() const;
};

/// HMC with unit mass starting from phi = 0 (or `initial` when given). The
/// step size adapts only during burn-in.
ChainRecord hmc_run(const HmcConfig& config, const Action& action, std::span<const double> initial = {});

struct ImhConfig {
  double scale = 1.0;
  double scale_min = 1.0;
  double scale_max = 4.0;
  double target_acceptance = 0.5;
  double adapt_rate = 0.5;
  int adapt_window = 100;
  int burn_in = 2000;
  int chain_length = 20000;
  double min_acceptance = 0.01;
  std::uint64_t seed = 0;
  bool keep_configs = false;

  void validate() const;
};

struct ImhState {
  std::vector<double> phi;
  double log_weight = 0.0;  // -S - log q(phi) for the current configuration
  double action = 0.0;
  double scale = 1.0;
};

struct ImhProposal {
  std::vector<double> phi;
  double log_weight = 0.0;
  double action = 0.0;
};

/// Proposals phi = T(s z) with z ~ N(0, I) and weights -S - log N(s z; 0, s^2 I) + logdet.
/// Proposals whose weight is not finite get log_weight = -inf.
std::vector<ImhProposal> imh_proposals(const TriangularMap& map, const Action& action, double scale,
                                       std::size_t count, NormalSource& noise);

/// Metropolis test of `proposal` against `state`; replaces the state on
/// acceptance. `u` is a uniform draw in [0, 1).
bool imh_accept(ImhState& state, ImhProposal&& proposal, double u);

/// One IMH step with a freshly drawn proposal.
bool imh_step(ImhState& state, const TriangularMap& map, const Action& action, NormalSource& noise,
              std::mt19937_64& accept_rng);

/// IMH chain; throws SamplerError when acceptance after burn-in is below
/// `min_acceptance`.
ChainRecord imh_run(const ImhConfig& config, const TriangularMap& map, const Action& action);

/// Header `step,accepted,action,magnetization`; step counts from 1 including
/// burn-in and magnetization is |mean field|.
void write_chain_csv(const ChainRecord& chain, std::ostream& out);
/// JSON object with sampler, seed, tuned parameter and acceptance rate.
std::string chain_metadata_json(const ChainRecord& chain, const std::string& extra_json = "{}");

/// Parsed chain CSV. Only the columns are read; configurations are not stored.
struct ChainTable {
  std::vector<int> step;
  std::vector<char> accepted;
  std::vector<double> action;
  std::vector<double> magnetization;
};

/// Thrown on malformed chain CSV input; `row()` is the 1-based line number.
class ChainFormatError : public std::runtime_error {
 public:
  ChainFormatError(long row, const std::string& what)
      : std::runtime_error("row " + std::to_string(row) + ": " + what), row_(row) {}
  long row() const { return row_; }

 private:
  long row_;
};

ChainTable read_chain_csv(std::istream& in);

}  // namespace ltm
