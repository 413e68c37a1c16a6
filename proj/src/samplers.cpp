#include "ltm/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "ltm/errors.hpp"
#include "ltm/metrics.hpp"

namespace ltm {

namespace {

constexpr std::uint64_t kProposalStream = 1;
constexpr std::uint64_t kAcceptStream = 2;

double uniform01(std::mt19937_64& rng) { return std::generate_canonical<double, 64>(rng); }

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void record_sample(ChainRecord& chain, std::span<const double> phi, double s, bool accepted, bool keep) {
  if (keep) chain.configs.insert(chain.configs.end(), phi.begin(), phi.end());
  chain.accepted.push_back(accepted ? 1 : 0);
  chain.action.push_back(s);
  chain.mean_field.push_back(mean_field(phi));
}

void finish(ChainRecord& chain) {
  long acc = 0;
  for (char a : chain.accepted) acc += a;
  chain.acceptance_rate = chain.accepted.empty() ? 0.0 : static_cast<double>(acc) / chain.accepted.size();
}

}  // namespace

std::vector<double> ChainRecord::magnetizations() const {
  std::vector<double> m(mean_field.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::abs(mean_field[i]);
  return m;
}

std::vector<double> ChainRecord::energies() const {
  std::vector<double> e(action.size());
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = action[i] / volume;
  return e;
}

double adapt_multiplicative(double value, double window_acceptance, double target, double rate) {
  return value * std::exp(rate * (window_acceptance - target));
}

bool leapfrog(std::span<double> phi, std::span<double> momentum, double eps, int n_steps, const Action& action) {
  const std::size_t n = phi.size();
  std::vector<double> force(n);
  action.gradient(phi, force);
  for (std::size_t i = 0; i < n; ++i) momentum[i] -= 0.5 * eps * force[i];
  for (int step = 0; step < n_steps; ++step) {
    for (std::size_t i = 0; i < n; ++i) phi[i] += eps * momentum[i];
    action.gradient(phi, force);
    const double kick = step + 1 == n_steps ? 0.5 * eps : eps;
    for (std::size_t i = 0; i < n; ++i) momentum[i] -= kick * force[i];
    if (!all_finite(phi) || !all_finite(momentum)) return false;
  }
  return all_finite(phi) && all_finite(momentum);
}

void HmcConfig::validate() const {
  if (leapfrog_steps < 1) throw std::invalid_argument("leapfrog steps must be >= 1");
  if (!(step_size > 0.0)) throw std::invalid_argument("step size must be positive");
  if (!(target_acceptance > 0.0 && target_acceptance < 1.0)) throw std::invalid_argument("target must be in (0, 1)");
  if (adapt_window < 1) throw std::invalid_argument("adaptation window must be >= 1");
  if (burn_in < 0 || chain_length < burn_in) throw std::invalid_argument("need 0 <= burn_in <= chain_length");
}

ChainRecord hmc_run(const HmcConfig& config, const Action& action, std::span<const double> initial) {
  config.validate();
  const std::size_t n = action.volume();
  std::vector<double> phi(n, 0.0);
  if (!initial.empty()) {
    if (initial.size() != n) throw std::invalid_argument("initial configuration has wrong size");
    phi.assign(initial.begin(), initial.end());
  }
  NormalSource momenta(make_rng(config.seed, kProposalStream));
  std::mt19937_64 accept_rng = make_rng(config.seed, kAcceptStream);

  ChainRecord chain;
  chain.sampler = "hmc";
  chain.seed = config.seed;
  chain.volume = static_cast<int>(n);
  chain.burn_in = config.burn_in;

  double eps = config.step_size;
  double s_current = action.value(phi);
  std::vector<double> p(n), trial(n);
  int window_accepts = 0;
  int window_steps = 0;
  for (int step = 0; step < config.chain_length; ++step) {
    momenta.fill(p);
    double kinetic0 = 0.0;
    for (double v : p) kinetic0 += 0.5 * v * v;
    trial = phi;
    bool accepted = false;
    double s_trial = 0.0;
    if (leapfrog(trial, p, eps, config.leapfrog_steps, action)) {
      s_trial = action.value(trial);
      double kinetic1 = 0.0;
      for (double v : p) kinetic1 += 0.5 * v * v;
      const double delta_h = (s_trial + kinetic1) - (s_current + kinetic0);
      const double u = uniform01(accept_rng);
      accepted = std::isfinite(delta_h) && std::log(u) < -delta_h;
    } else {
      uniform01(accept_rng);
      ++chain.rejected_non_finite;
    }
    if (accepted) {
      phi.swap(trial);
      s_current = s_trial;
    }
    if (step < config.burn_in) {
      window_accepts += accepted ? 1 : 0;
      if (++window_steps == config.adapt_window) {
        eps = adapt_multiplicative(eps, static_cast<double>(window_accepts) / window_steps,
                                   config.target_acceptance, config.adapt_rate);
        window_accepts = 0;
        window_steps = 0;
      }
    } else {
      record_sample(chain, phi, s_current, accepted, config.keep_configs);
    }
  }
  chain.tuned_parameter = eps;
  finish(chain);
  return chain;
}

void ImhConfig::validate() const {
  if (!(scale > 0.0) || !(scale_min > 0.0) || scale_min > scale_max) {
    throw std::invalid_argument("invalid proposal scale bounds");
  }
  if (!(target_acceptance > 0.0 && target_acceptance < 1.0)) throw std::invalid_argument("target must be in (0, 1)");
  if (adapt_window < 1) throw std::invalid_argument("adaptation window must be >= 1");
  if (burn_in < 0 || chain_length < burn_in) throw std::invalid_argument("need 0 <= burn_in <= chain_length");
  if (!(min_acceptance >= 0.0 && min_acceptance < 1.0)) throw std::invalid_argument("min acceptance out of range");
}

std::vector<ImhProposal> imh_proposals(const TriangularMap& map, const Action& action, double scale,
                                       std::size_t count, NormalSource& noise) {
  const std::size_t n = map.size();
  Matrix z(count, n);
  noise.fill(z.values());
  std::vector<double> base_sq(count, 0.0);
  for (std::size_t b = 0; b < count; ++b) {
    for (double& v : z.row(b)) {
      base_sq[b] += v * v;
      v *= scale;
    }
  }
  // log N(s e; 0, s^2 I) = -|e|^2 / 2 - N log s - N/2 log(2 pi)
  const double norm = static_cast<double>(n) * (std::log(scale) + 0.5 * std::log(2.0 * std::numbers::pi));

  std::vector<ImhProposal> out(count);
  auto fill = [&](std::size_t b, std::span<const double> phi, double logdet) {
    ImhProposal& p = out[b];
    p.phi.assign(phi.begin(), phi.end());
    p.action = action.value(phi);
    p.log_weight = -p.action + 0.5 * base_sq[b] + norm + logdet;
    if (!std::isfinite(p.log_weight)) p.log_weight = -std::numeric_limits<double>::infinity();
  };
  try {
    const MapOutput mo = map.forward(z);
    for (std::size_t b = 0; b < count; ++b) fill(b, mo.phi.row(b), mo.logdet[b]);
  } catch (const NumericalError&) {
    // Isolate the failing draws; the rest keep their exact weights.
    Matrix one(1, n);
    for (std::size_t b = 0; b < count; ++b) {
      std::copy(z.row(b).begin(), z.row(b).end(), one.row(0).begin());
      try {
        const MapOutput mo = map.forward(one);
        fill(b, mo.phi.row(0), mo.logdet[0]);
      } catch (const NumericalError&) {
        out[b].phi.assign(n, 0.0);
        out[b].action = std::numeric_limits<double>::quiet_NaN();
        out[b].log_weight = -std::numeric_limits<double>::infinity();
      }
    }
  }
  return out;
}

bool imh_accept(ImhState& state, ImhProposal&& proposal, double u) {
  if (!std::isfinite(proposal.log_weight)) return false;
  const double log_ratio = proposal.log_weight - state.log_weight;
  if (!(log_ratio >= 0.0 || std::log(u) < log_ratio)) return false;
  state.phi = std::move(proposal.phi);
  state.log_weight = proposal.log_weight;
  state.action = proposal.action;
  return true;
}

bool imh_step(ImhState& state, const TriangularMap& map, const Action& action, NormalSource& noise,
              std::mt19937_64& accept_rng) {
  auto proposals = imh_proposals(map, action, state.scale, 1, noise);
  return imh_accept(state, std::move(proposals[0]), uniform01(accept_rng));
}

ChainRecord imh_run(const ImhConfig& config, const TriangularMap& map, const Action& action) {
  config.validate();
  if (action.volume() != map.size()) throw std::invalid_argument("action volume does not match map");
  NormalSource noise(make_rng(config.seed, kProposalStream));
  std::mt19937_64 accept_rng = make_rng(config.seed, kAcceptStream);

  ChainRecord chain;
  chain.sampler = "imh";
  chain.seed = config.seed;
  chain.volume = map.size();
  chain.burn_in = config.burn_in;

  ImhState state;
  state.scale = std::clamp(config.scale, config.scale_min, config.scale_max);
  // The chain starts from the first proposal with a finite weight.
  for (int attempt = 0;; ++attempt) {
    if (attempt == 100) throw SamplerError("no finite-weight initial proposal in 100 draws");
    auto first = imh_proposals(map, action, state.scale, 1, noise);
    if (std::isfinite(first[0].log_weight)) {
      state.phi = std::move(first[0].phi);
      state.log_weight = first[0].log_weight;
      state.action = first[0].action;
      break;
    }
  }

  int step = 0;
  double last_burn_window = 1.0;
  while (step < config.chain_length) {
    const int window = std::min(config.adapt_window, config.chain_length - step);
    // Burn-in windows end exactly at the burn-in boundary so the scale is
    // frozen for every kept step.
    const int count = step < config.burn_in ? std::min(window, config.burn_in - step) : window;
    auto proposals = imh_proposals(map, action, state.scale, count, noise);
    int accepts = 0;
    for (int i = 0; i < count; ++i, ++step) {
      if (!std::isfinite(proposals[i].log_weight)) ++chain.rejected_non_finite;
      const bool accepted = imh_accept(state, std::move(proposals[i]), uniform01(accept_rng));
      accepts += accepted ? 1 : 0;
      if (step >= config.burn_in) record_sample(chain, state.phi, state.action, accepted, config.keep_configs);
    }
    if (step <= config.burn_in) {
      last_burn_window = static_cast<double>(accepts) / count;
      state.scale = std::clamp(
          adapt_multiplicative(state.scale, last_burn_window, config.target_acceptance, config.adapt_rate),
          config.scale_min, config.scale_max);
    }
  }
  chain.tuned_parameter = state.scale;
  finish(chain);
  if (config.burn_in > 0 && last_burn_window < config.min_acceptance && chain.size() == 0) {
    throw SamplerError("IMH acceptance " + std::to_string(last_burn_window) + " below " +
                       std::to_string(config.min_acceptance) + " at the end of burn-in");
  }
  if (chain.size() > 0 && chain.acceptance_rate < config.min_acceptance) {
    throw SamplerError("IMH acceptance " + std::to_string(chain.acceptance_rate) + " below " +
                       std::to_string(config.min_acceptance) + "; the map is too poor a proposal");
  }
  return chain;
}

void write_chain_csv(const ChainRecord& chain, std::ostream& out) {
  const auto old = out.precision(17);
  out << "step,accepted,action,magnetization\n";
  for (std::size_t i = 0; i < chain.size(); ++i) {
    out << chain.burn_in + static_cast<long>(i) + 1 << ',' << static_cast<int>(chain.accepted[i]) << ','
        << chain.action[i] << ',' << std::abs(chain.mean_field[i]) << '\n';
  }
  out.precision(old);
}

std::string chain_metadata_json(const ChainRecord& chain, const std::string& extra_json) {
  nlohmann::json j = nlohmann::json::parse(extra_json);
  j["sampler"] = chain.sampler;
  j["seed"] = chain.seed;
  j["volume"] = chain.volume;
  j["burn_in"] = chain.burn_in;
  j["kept"] = chain.size();
  j["acceptance_rate"] = chain.acceptance_rate;
  j[chain.sampler == "hmc" ? "step_size" : "proposal_scale"] = chain.tuned_parameter;
  j["rejected_non_finite"] = chain.rejected_non_finite;
  j["energy_def"] = kEnergyDefinition;
  return j.dump(2);
}

ChainTable read_chain_csv(std::istream& in) {
  ChainTable t;
  std::string line;
  long row = 0;
  if (!std::getline(in, line)) throw ChainFormatError(1, "empty chain file");
  ++row;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "step,accepted,action,magnetization") throw ChainFormatError(row, "unexpected header '" + line + "'");
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string cell[4];
    int count = 0;
    while (count < 5 && std::getline(fields, cell[std::min(count, 3)], ',')) ++count;
    if (count != 4) throw ChainFormatError(row, "expected 4 fields");
    try {
      std::size_t pos = 0;
      const int step = std::stoi(cell[0], &pos);
      if (pos != cell[0].size()) throw std::invalid_argument("step");
      if (cell[1] != "0" && cell[1] != "1") throw std::invalid_argument("accepted");
      const double a = std::stod(cell[2], &pos);
      if (pos != cell[2].size()) throw std::invalid_argument("action");
      const double m = std::stod(cell[3], &pos);
      if (pos != cell[3].size()) throw std::invalid_argument("magnetization");
      if (!std::isfinite(a) || !std::isfinite(m)) throw std::invalid_argument("non-finite value");
      t.step.push_back(step);
      t.accepted.push_back(cell[1] == "1" ? 1 : 0);
      t.action.push_back(a);
      t.magnetization.push_back(m);
    } catch (const std::exception& e) {
      throw ChainFormatError(row, std::string("malformed field (") + e.what() + ")");
    }
  }
  return t;
}

}  // namespace ltm
