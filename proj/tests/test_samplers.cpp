#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "ltm/metrics.hpp"
#include "ltm/samplers.hpp"
#include "support.hpp"

using namespace ltm;

namespace {

const double kUnitBias = std::log(std::numbers::e - 1.0);

// S + c with an unchanged gradient.
class ShiftedAction final : public Action {
 public:
  ShiftedAction(const Action& base, double c) : base_(base), c_(c) {}
  int volume() const override { return base_.volume(); }
  double value(std::span<const double> phi) const override { return base_.value(phi) + c_; }
  void gradient(std::span<const double> phi, std::span<double> out) const override { base_.gradient(phi, out); }

 private:
  const Action& base_;
  double c_;
};

// One site with S = phi^2 / (2 sigma^2).
class WideGaussian final : public Action {
 public:
  explicit WideGaussian(double sigma) : inv_var_(1.0 / (sigma * sigma)) {}
  int volume() const override { return 1; }
  double value(std::span<const double> phi) const override { return 0.5 * inv_var_ * phi[0] * phi[0]; }
  void gradient(std::span<const double> phi, std::span<double> out) const override { out[0] = inv_var_ * phi[0]; }

 private:
  double inv_var_;
};

TriangularMap identity_map(int extent) {
  MapSpec spec;
  spec.extent = extent;
  spec.hidden = {4};
  return TriangularMap::build(spec);
}

ImhConfig fixed_scale(ImhConfig cfg, double s) {
  cfg.scale = cfg.scale_min = cfg.scale_max = s;
  return cfg;
}

double hamiltonian(std::span<const double> phi, std::span<const double> p, const Action& action) {
  double k = 0.0;
  for (double v : p) k += 0.5 * v * v;
  return action.value(phi) + k;
}

// Half width of the 68% bootstrap interval.
double bootstrap_sigma(std::span<const double> series, const Statistic& stat, std::uint64_t seed) {
  const auto r = bootstrap_ci(series, stat, seed);
  return 0.5 * (r.upper - r.lower);
}

Statistic variance_statistic() {
  return [](std::span<const double> x) {
    const double m = mean(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(x.size());
  };
}

}  // namespace

TEST_CASE("leapfrog") {
  const LatticeGeometry geom(4);
  const PhiFourAction action(PhiFourParams{-4.0, 8.0}, geom);

  SUBCASE("time reversible") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto phi0 = test::random_vector(16, seed, 1.5);
      const auto p0 = test::random_vector(16, seed + 100);
      auto phi = phi0, p = p0;
      REQUIRE(leapfrog(phi, p, 0.05, 10, action));
      for (double& v : p) v = -v;
      REQUIRE(leapfrog(phi, p, 0.05, 10, action));
      for (int i = 0; i < 16; ++i) {
        CHECK(std::abs(phi[i] - phi0[i]) < 1e-10);
        CHECK(std::abs(-p[i] - p0[i]) < 1e-10);
      }
    }
  }
  SUBCASE("zero step size leaves the state unchanged") {
    auto phi = test::random_vector(16, 1), p = test::random_vector(16, 2);
    const auto phi0 = phi, p0 = p;
    REQUIRE(leapfrog(phi, p, 0.0, 10, action));
    CHECK(phi == phi0);
    CHECK(p == p0);
  }
  SUBCASE("energy error is second order in the step size") {
    const PhiFourAction free_action(PhiFourParams{1.0, 0.0}, LatticeGeometry(2));
    double coarse = 0.0, fine = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto phi0 = test::random_vector(4, 10 + seed), p0 = test::random_vector(4, 20 + seed);
      const double h0 = hamiltonian(phi0, p0, free_action);
      auto phi = phi0, p = p0;
      leapfrog(phi, p, 0.1, 10, free_action);
      coarse += std::abs(hamiltonian(phi, p, free_action) - h0);
      phi = phi0;
      p = p0;
      leapfrog(phi, p, 0.05, 20, free_action);
      fine += std::abs(hamiltonian(phi, p, free_action) - h0);
    }
    MESSAGE("|dH| ratio " << coarse / fine);
    CHECK(coarse / fine > 3.5);
    CHECK(coarse / fine < 4.5);
  }
  SUBCASE("volume preserving") {
    const PhiFourAction small(PhiFourParams{-4.0, 8.0}, LatticeGeometry(2));
    const auto x0 = test::random_vector(8, 5);
    auto step = [&](const std::vector<double>& x) {
      std::vector<double> phi(x.begin(), x.begin() + 4), p(x.begin() + 4, x.end());
      leapfrog(phi, p, 0.1, 3, small);
      phi.insert(phi.end(), p.begin(), p.end());
      return phi;
    };
    Eigen::MatrixXd jac(8, 8);
    for (int k = 0; k < 8; ++k) {
      auto xp = x0, xm = x0;
      xp[k] += 1e-5;
      xm[k] -= 1e-5;
      const auto up = step(xp), down = step(xm);
      for (int i = 0; i < 8; ++i) jac(i, k) = (up[i] - down[i]) / 2e-5;
    }
    CHECK(std::abs(jac.determinant() - 1.0) < 1e-6);
  }
  SUBCASE("non-finite trajectory is reported") {
    std::vector<double> phi(16, 1e100), p(16, 1e100);
    CHECK_FALSE(leapfrog(phi, p, 1.0, 10, action));
  }
}

TEST_CASE("HMC") {
  SUBCASE("free-field zero mode variance") {
    const PhiFourAction free_action(PhiFourParams{1.0, 0.0}, LatticeGeometry(4));
    HmcConfig cfg;
    cfg.seed = 3;
    cfg.burn_in = 2000;
    cfg.chain_length = 22000;
    const ChainRecord chain = hmc_run(cfg, free_action);
    REQUIRE(chain.size() == 20000);
    const double var = variance_statistic()(chain.mean_field);
    const double sigma = bootstrap_sigma(chain.mean_field, variance_statistic(), 1);
    MESSAGE("Var(mean field) " << var << " +- " << sigma << ", acceptance " << chain.acceptance_rate);
    CHECK(std::abs(var - 1.0 / 16.0) < 3.0 * sigma);
    CHECK(chain.acceptance_rate >= 0.55);
    CHECK(chain.acceptance_rate <= 0.85);
  }
  SUBCASE("two seeds agree on <|M|>") {
    const PhiFourAction action(PhiFourParams{-4.0, 8.0}, LatticeGeometry(4));
    HmcConfig cfg;
    cfg.chain_length = 22000;
    cfg.seed = 10;
    const ChainRecord a = hmc_run(cfg, action);
    cfg.seed = 11;
    const ChainRecord b = hmc_run(cfg, action);
    const auto ma = a.magnetizations(), mb = b.magnetizations();
    const double sa = bootstrap_sigma(ma, mean, 1), sb = bootstrap_sigma(mb, mean, 2);
    MESSAGE("<|M|> " << mean(ma) << " vs " << mean(mb));
    CHECK(std::abs(mean(ma) - mean(mb)) < 3.0 * std::hypot(sa, sb));
  }
  SUBCASE("tuned acceptance on the L=8 target") {
    const PhiFourAction action(PhiFourParams{-4.0, 8.0}, LatticeGeometry(8));
    HmcConfig cfg;
    cfg.chain_length = 6000;
    cfg.seed = 4;
    const ChainRecord chain = hmc_run(cfg, action);
    MESSAGE("acceptance " << chain.acceptance_rate << " at step size " << chain.tuned_parameter);
    CHECK(chain.acceptance_rate >= 0.55);
    CHECK(chain.acceptance_rate <= 0.85);
  }
  SUBCASE("no kept steps gives an empty record") {
    const PhiFourAction action(PhiFourParams{-4.0, 8.0}, LatticeGeometry(4));
    HmcConfig cfg;
    cfg.burn_in = 300;
    cfg.chain_length = 300;
    const ChainRecord chain = hmc_run(cfg, action);
    CHECK(chain.size() == 0);
    CHECK(chain.action.empty());
    CHECK(chain.acceptance_rate == 0.0);
  }
  SUBCASE("determinism and stored configurations") {
    const PhiFourAction action(PhiFourParams{-4.0, 8.0}, LatticeGeometry(4));
    HmcConfig cfg;
    cfg.burn_in = 100;
    cfg.chain_length = 400;
    cfg.keep_configs = true;
    const ChainRecord a = hmc_run(cfg, action), b = hmc_run(cfg, action);
    CHECK(a.accepted == b.accepted);
    CHECK(a.action == b.action);
    REQUIRE(a.configs.size() == 300u * 16u);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(action.value(a.config(i)) == a.action[i]);
      CHECK(mean_field(a.config(i)) == a.mean_field[i]);
    }
  }
  SUBCASE("invalid configuration") {
    const GaussianAction g(4);
    HmcConfig cfg;
    cfg.leapfrog_steps = 0;
    CHECK_THROWS_AS(hmc_run(cfg, g), std::invalid_argument);
    cfg = HmcConfig{};
    cfg.burn_in = 10;
    cfg.chain_length = 5;
    CHECK_THROWS_AS(hmc_run(cfg, g), std::invalid_argument);
  }
}

TEST_CASE("adaptation rule") {
  CHECK(adapt_multiplicative(0.2, 0.7, 0.7, 0.5) == 0.2);
  CHECK(adapt_multiplicative(0.2, 1.0, 0.7, 0.5) == doctest::Approx(0.2 * std::exp(0.15)).epsilon(1e-15));
  CHECK(adapt_multiplicative(0.2, 0.0, 0.7, 0.5) == doctest::Approx(0.2 * std::exp(-0.35)).epsilon(1e-15));
}

TEST_CASE("IMH") {
  SUBCASE("perfect proposal is always accepted") {
    const TriangularMap map = identity_map(2);
    const GaussianAction gauss(4);
    ImhConfig cfg = fixed_scale(ImhConfig{}, 1.0);
    cfg.burn_in = 0;
    cfg.chain_length = 100000;
    cfg.keep_configs = true;
    cfg.seed = 9;
    const ChainRecord chain = imh_run(cfg, map, gauss);
    CHECK(chain.acceptance_rate == 1.0);
    const int n = static_cast<int>(chain.size());
    // Every kept sample is the next base draw: the first draw seeds the state.
    NormalSource raw(make_rng(cfg.seed, 1));
    std::vector<double> e(4);
    raw.fill(e);
    double worst = 0.0;
    for (int b = 0; b < n; ++b) {
      raw.fill(e);
      for (int i = 0; i < 4; ++i) worst = std::max(worst, std::abs(chain.config(b)[map.ordering().perm[i]] - e[i]));
    }
    CHECK(worst < 1e-14);
    for (int i = 0; i < 4; ++i) {
      double m = 0.0;
      for (int b = 0; b < n; ++b) m += chain.config(b)[i];
      m /= n;
      CHECK(std::abs(m) < 4.0 / std::sqrt(n));
      for (int k = i; k < 4; ++k) {
        double c = 0.0;
        for (int b = 0; b < n; ++b) c += chain.config(b)[i] * chain.config(b)[k];
        c /= n;
        CHECK(std::abs(c - (i == k ? 1.0 : 0.0)) < 4.0 * (i == k ? std::sqrt(2.0) : 1.0) / std::sqrt(n));
      }
    }
  }
  SUBCASE("equal weights are accepted") {
    ImhState state{{0.0}, -3.0, 0.0, 1.0};
    CHECK(imh_accept(state, ImhProposal{{1.0}, -3.0, 2.0}, 0.999999));
    CHECK(state.phi == std::vector<double>{1.0});
    CHECK(state.action == 2.0);
    CHECK_FALSE(imh_accept(state, ImhProposal{{5.0}, -std::numeric_limits<double>::infinity(), 0.0}, 0.0));
    CHECK_FALSE(imh_accept(state, ImhProposal{{5.0}, -4.0, 0.0}, std::exp(-1.0) + 1e-12));
    CHECK(imh_accept(state, ImhProposal{{5.0}, -4.0, 0.0}, std::exp(-1.0) - 1e-12));
  }
  SUBCASE("single-site acceptance matches a quadrature oracle") {
    // Proposal phi = a z with a = softplus(c) wider than the target
    // N(0, sigma^2), so the importance weights are bounded.
    const double c = 1.0, sigma = 0.8;
    const double a = softplus(c);
    TriangularMap map(Ordering::from_permutation("single", {0}), ConditioningSets{{{}}}, 15, {4});
    auto& g = map.integrand(0);
    g.bias(g.shape().layer_count() - 1)[0] = c;
    const WideGaussian target(sigma);

    auto log_target = [&](double x) { return -0.5 * x * x / (sigma * sigma) - std::log(sigma) - 0.5 * std::log(2 * std::numbers::pi); };
    auto log_proposal = [&](double x) { return -0.5 * x * x / (a * a) - std::log(a) - 0.5 * std::log(2 * std::numbers::pi); };
    const int points = 1601;
    const double lo = -12.0, h = 24.0 / (points - 1);
    double expected = 0.0;
    for (int i = 0; i < points; ++i) {
      const double x = lo + i * h;
      const double wx = log_target(x) - log_proposal(x);
      const double px = std::exp(log_target(x));
      for (int k = 0; k < points; ++k) {
        const double y = lo + k * h;
        const double wy = log_target(y) - log_proposal(y);
        expected += px * std::exp(log_proposal(y)) * std::min(1.0, std::exp(wy - wx)) * h * h;
      }
    }

    ImhConfig cfg = fixed_scale(ImhConfig{}, 1.0);
    cfg.burn_in = 1000;
    cfg.chain_length = 301000;
    cfg.seed = 12;
    const ChainRecord chain = imh_run(cfg, map, target);
    MESSAGE("acceptance " << chain.acceptance_rate << " vs quadrature " << expected);
    CHECK(std::abs(chain.acceptance_rate - expected) < 0.01 * expected);
  }
  SUBCASE("adding a constant to the action changes nothing") {
    const LatticeGeometry geom(2);
    const PhiFourAction action(PhiFourParams{-1.0, 2.0}, geom);
    const ShiftedAction shifted(action, 17.5);
    const TriangularMap map = identity_map(2);
    ImhConfig cfg;
    cfg.burn_in = 300;
    cfg.chain_length = 3000;
    cfg.seed = 21;
    const ChainRecord a = imh_run(cfg, map, action), b = imh_run(cfg, map, shifted);
    CHECK(a.accepted == b.accepted);
    CHECK(a.mean_field == b.mean_field);
    CHECK(a.tuned_parameter == b.tuned_parameter);
  }
  SUBCASE("the chain replays from its state and fresh randomness") {
    const LatticeGeometry geom(2);
    const PhiFourAction action(PhiFourParams{-1.0, 2.0}, geom);
    const TriangularMap map = identity_map(2);
    ImhConfig cfg = fixed_scale(ImhConfig{}, 1.5);
    cfg.burn_in = 0;
    cfg.chain_length = 500;
    cfg.seed = 5;
    const ChainRecord chain = imh_run(cfg, map, action);
    CHECK(imh_run(cfg, map, action).accepted == chain.accepted);

    NormalSource noise(make_rng(cfg.seed, 1));
    std::mt19937_64 accept_rng = make_rng(cfg.seed, 2);
    auto first = imh_proposals(map, action, 1.5, 1, noise);
    ImhState state{first[0].phi, first[0].log_weight, first[0].action, 1.5};
    for (std::size_t i = 0; i < chain.size(); ++i) {
      const bool acc = imh_step(state, map, action, noise, accept_rng);
      CHECK(acc == static_cast<bool>(chain.accepted[i]));
      CHECK(mean_field(state.phi) == chain.mean_field[i]);
    }
  }
  SUBCASE("proposal weights") {
    const LatticeGeometry geom(2);
    const PhiFourAction action(PhiFourParams{-1.0, 2.0}, geom);
    const TriangularMap map = identity_map(2);
    NormalSource noise(make_rng(1, 1)), replay(make_rng(1, 1));
    const double s = 2.0;
    const auto props = imh_proposals(map, action, s, 3, noise);
    for (const auto& p : props) {
      std::vector<double> e(4);
      replay.fill(e);
      double e2 = 0.0;
      for (int i = 0; i < 4; ++i) {
        e2 += e[i] * e[i];
        CHECK(p.phi[map.ordering().perm[i]] == doctest::Approx(s * e[i]).epsilon(1e-14));
      }
      const double expected = -action.value(p.phi) + 0.5 * e2 + 4.0 * (std::log(s) + 0.5 * std::log(2 * std::numbers::pi));
      CHECK(p.log_weight == doctest::Approx(expected).epsilon(1e-13));
    }
  }
  SUBCASE("non-finite proposals are rejected") {
    TriangularMap map = identity_map(2);
    auto& f = map.shift(1);
    f.bias(f.shape().layer_count() - 1)[0] = std::numeric_limits<double>::infinity();
    const GaussianAction gauss(4);
    NormalSource noise(make_rng(2, 1));
    for (const auto& p : imh_proposals(map, gauss, 1.0, 5, noise)) {
      CHECK(p.log_weight == -std::numeric_limits<double>::infinity());
    }
    CHECK_THROWS_AS(imh_run(ImhConfig{}, map, gauss), SamplerError);
  }
  SUBCASE("a poor proposal aborts the run") {
    const PhiFourAction action(PhiFourParams{-4.0, 8.0}, LatticeGeometry(8));
    TriangularMap map = identity_map(8);
    ImhConfig cfg;
    cfg.burn_in = 500;
    cfg.chain_length = 2500;
    CHECK_THROWS_AS(imh_run(cfg, map, action), SamplerError);
  }
  SUBCASE("scale adaptation stays within bounds and freezes after burn-in") {
    const LatticeGeometry geom(2);
    const GaussianAction gauss(4);
    const TriangularMap map = identity_map(2);
    ImhConfig cfg;
    cfg.burn_in = 1000;
    cfg.chain_length = 3000;
    const ChainRecord chain = imh_run(cfg, map, gauss);
    CHECK(chain.size() == 2000);
    CHECK(chain.tuned_parameter >= cfg.scale_min);
    CHECK(chain.tuned_parameter <= cfg.scale_max);
    CHECK(chain.tuned_parameter > 1.0);
  }
  SUBCASE("default lengths keep 18000 samples") {
    const ImhConfig cfg;
    CHECK(cfg.chain_length - cfg.burn_in == 18000);
    const HmcConfig hcfg;
    CHECK(hcfg.chain_length - hcfg.burn_in == 18000);
    CHECK(hcfg.leapfrog_steps == 10);
    CHECK(hcfg.target_acceptance == 0.70);
  }
}

TEST_CASE("chain files") {
  const PhiFourAction action(PhiFourParams{-4.0, 8.0}, LatticeGeometry(4));
  HmcConfig cfg;
  cfg.burn_in = 50;
  cfg.chain_length = 250;
  cfg.seed = 9;
  const ChainRecord chain = hmc_run(cfg, action);

  SUBCASE("round trip") {
    std::stringstream csv;
    write_chain_csv(chain, csv);
    const ChainTable t = read_chain_csv(csv);
    REQUIRE(t.step.size() == 200);
    CHECK(t.step.front() == 51);
    CHECK(t.step.back() == 250);
    CHECK(t.accepted == chain.accepted);
    CHECK(t.action == chain.action);
    CHECK(t.magnetization == chain.magnetizations());
  }
  SUBCASE("metadata") {
    const auto j = nlohmann::json::parse(chain_metadata_json(chain, R"({"L": 4})"));
    CHECK(j.at("sampler") == "hmc");
    CHECK(j.at("seed") == 9);
    CHECK(j.at("kept") == 200);
    CHECK(j.at("acceptance_rate").get<double>() == chain.acceptance_rate);
    CHECK(j.at("step_size").get<double>() == chain.tuned_parameter);
    CHECK(j.at("energy_def") == "action_density");
    CHECK(j.at("L") == 4);
  }
  SUBCASE("malformed rows name the line") {
    const std::string header = "step,accepted,action,magnetization\n";
    auto row_of = [](const std::string& text) {
      std::istringstream in(text);
      try {
        read_chain_csv(in);
      } catch (const ChainFormatError& e) {
        return e.row();
      }
      return 0L;
    };
    CHECK(row_of("") == 1);
    CHECK(row_of("step,acc,action,m\n1,1,0.5,0.1\n") == 1);
    CHECK(row_of(header + "1,1,0.5,0.1\n2,1,0.5\n") == 3);
    CHECK(row_of(header + "1,1,0.5,0.1,9\n") == 2);
    CHECK(row_of(header + "1,2,0.5,0.1\n") == 2);
    CHECK(row_of(header + "1,1,abc,0.1\n") == 2);
    CHECK(row_of(header + "1,1,0.5,0.1x\n") == 2);
    CHECK(row_of(header + "1,1,0.5,nan\n") == 2);
    CHECK(row_of(header + "1,1,0.5,0.1\r\n2,0,0.25,0.3\n") == 0);
  }
}
