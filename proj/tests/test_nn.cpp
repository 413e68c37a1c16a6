#include <cmath>
#include <numbers>

#include "doctest.h"
#include "ltm/errors.hpp"
#include "ltm/nn.hpp"
#include "support.hpp"

using namespace ltm;

namespace {

Mlp random_mlp(MlpShape shape, std::uint64_t seed, double output_scale = 1.0) {
  Mlp net(std::move(shape));
  std::mt19937_64 rng(seed);
  net.initialize(rng, output_scale, 0.1);
  // Non-zero hidden biases so every bias gradient is exercised.
  const auto noise = test::random_vector(net.parameter_count(), seed + 1, 0.05);
  auto p = net.parameters();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] += noise[i];
  return net;
}

// Sum over the batch of <output, weights>; a scalar loss for finite differences.
double weighted_output(const Mlp& net, const Matrix& input, const Matrix& weights) {
  const Matrix y = net.forward(input);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.values()[i] * weights.values()[i];
  return s;
}

}  // namespace

TEST_CASE("GELU against the erfc definition") {
  for (double x = -8.0; x <= 8.0; x += 0.0625) {
    const double expected = 0.5 * x * std::erfc(-x / std::numbers::sqrt2);
    CHECK(test::rel_error(gelu(x), expected, 1e-300) < 1e-13);
    const double fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
    CHECK(std::abs(gelu_derivative(x) - fd) < 1e-8);
  }
  CHECK(gelu(0.0) == 0.0);
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(softplus(800.0) == 800.0);
  CHECK(softplus(-800.0) >= 0.0);
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(sigmoid(0.0) == 0.5);
}

TEST_CASE("GEMM kernels match sequential fused accumulation bitwise") {
  for (auto [m, k, n] : {std::tuple{1, 1, 1}, {7, 5, 3}, {13, 64, 64}, {6, 8, 8}, {25, 17, 9}, {4, 0, 5}, {9, 3, 1},
                           {8, 11, 12}, {10, 9, 2}, {11, 4, 7}, {17, 64, 1}}) {
    const Matrix a = test::random_matrix(m, k, 1), b = test::random_matrix(k, n, 2);
    Matrix c = test::random_matrix(m, n, 3);
    Matrix expected = c;
    for (int r = 0; r < m; ++r) {
      for (int col = 0; col < n; ++col) {
        double acc = expected(r, col);
        for (int p = 0; p < k; ++p) acc = std::fma(a(r, p), b(p, col), acc);
        expected(r, col) = acc;
      }
    }
    gemm_accumulate(a.data(), b.data(), c.data(), m, k, n);
    CHECK(c == expected);
  }
  for (auto [rows, m, n] : {std::tuple{1, 1, 1}, {300, 7, 9}, {513, 64, 64}, {5, 6, 8}, {3, 13, 1},
                              {40, 64, 1}, {270, 3, 64}, {31, 10, 6}, {12, 23, 2}, {9, 4, 13}}) {
    const Matrix a = test::random_matrix(rows, m, 4), b = test::random_matrix(rows, n, 5);
    Matrix c = test::random_matrix(m, n, 6);
    Matrix expected = c;
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        double acc = expected(i, j);
        for (int p = 0; p < rows; ++p) acc = std::fma(a(p, i), b(p, j), acc);
        expected(i, j) = acc;
      }
    }
    gemm_tn_accumulate(a.data(), b.data(), c.data(), rows, m, n);
    CHECK(c == expected);
  }
}

TEST_CASE("MLP forward") {
  SUBCASE("zero parameters give zero output") {
    Mlp net(MlpShape{3, {64, 64, 64}, 1});
    CHECK(net.parameter_count() == 3 * 64 + 64 + 2 * (64 * 64 + 64) + 64 + 1);
    const Matrix y = net.forward(test::random_matrix(5, 3, 1));
    for (double v : y.values()) CHECK(v == 0.0);
  }
  SUBCASE("single linear layer is a matrix-vector product") {
    Mlp net = random_mlp(MlpShape{4, {}, 3}, 9);
    const Matrix x = test::random_matrix(6, 4, 10);
    const Matrix y = net.forward(x);
    for (int r = 0; r < 6; ++r) {
      for (int o = 0; o < 3; ++o) {
        double expected = net.bias(0)[o];
        for (int i = 0; i < 4; ++i) expected += x(r, i) * net.weight(0)[i * 3 + o];
        CHECK(y(r, o) == doctest::Approx(expected).epsilon(1e-14));
      }
    }
  }
  SUBCASE("batch equals independent single-row calls bitwise") {
    for (Activation out : {Activation::identity, Activation::softplus}) {
      Mlp net = random_mlp(MlpShape{5, {64, 64, 64}, 2, Activation::gelu, out}, 11);
      const Matrix x = test::random_matrix(37, 5, 12, 2.0);
      const Matrix batch = net.forward(x);
      MlpTape tape;
      CHECK(net.forward(x, tape) == batch);
      for (int r = 0; r < 37; ++r) {
        Matrix one(1, 5);
        std::copy(x.row(r).begin(), x.row(r).end(), one.data());
        const Matrix y = net.forward(one);
        CHECK(y(0, 0) == batch(r, 0));
        CHECK(y(0, 1) == batch(r, 1));
      }
    }
  }
  SUBCASE("softplus output is strictly positive") {
    Mlp net = random_mlp(MlpShape{2, {8}, 1, Activation::gelu, Activation::softplus}, 3, 3.0);
    const Matrix y = net.forward(test::random_matrix(200, 2, 4, 5.0));
    for (double v : y.values()) CHECK(v > 0.0);
  }
  SUBCASE("shape mismatch") {
    Mlp net(MlpShape{3, {4}, 1});
    CHECK_THROWS_AS(net.forward(Matrix(2, 4)), std::invalid_argument);
  }
}

TEST_CASE("MLP backward matches finite differences on the full-size network") {
  Mlp net = random_mlp(MlpShape{3, {64, 64, 64}, 1}, 21);
  const Matrix x = test::random_matrix(4, 3, 22);
  const Matrix w = test::random_matrix(4, 1, 23);
  MlpTape tape;
  net.forward(x, tape);
  std::vector<double> grad(net.parameter_count(), 0.0);
  Matrix dx;
  net.backward(tape, w, grad, &dx);

  auto params = net.parameters();
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double p0 = params[i];
    const double h = 1e-5;
    params[i] = p0 + h;
    const double up = weighted_output(net, x, w);
    params[i] = p0 - h;
    const double down = weighted_output(net, x, w);
    params[i] = p0;
    const double fd = (up - down) / (2 * h);
    worst = std::max(worst, test::rel_error(grad[i], fd, 1e-4));
  }
  CHECK(worst < 1e-5);

  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 3; ++c) {
      Matrix xp = x, xm = x;
      xp(r, c) += 1e-5;
      xm(r, c) -= 1e-5;
      const double fd = (weighted_output(net, xp, w) - weighted_output(net, xm, w)) / 2e-5;
      CHECK(test::rel_error(dx(r, c), fd, 1e-4) < 1e-5);
    }
  }
}

TEST_CASE("MLP backward matches finite differences over many seeds and activations") {
  for (Activation out : {Activation::identity, Activation::softplus}) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Mlp net = random_mlp(MlpShape{3, {8, 8, 8}, 1, Activation::gelu, out}, 1000 + seed);
      const Matrix x = test::random_matrix(3, 3, 2000 + seed);
      const Matrix w = test::random_matrix(3, 1, 3000 + seed);
      MlpTape tape;
      net.forward(x, tape);
      std::vector<double> grad(net.parameter_count(), 0.0);
      net.backward(tape, w, grad, nullptr);
      auto params = net.parameters();
      double worst = 0.0;
      for (std::size_t i = 0; i < params.size(); ++i) {
        const double p0 = params[i];
        params[i] = p0 + 1e-5;
        const double up = weighted_output(net, x, w);
        params[i] = p0 - 1e-5;
        const double down = weighted_output(net, x, w);
        params[i] = p0;
        worst = std::max(worst, test::rel_error(grad[i], (up - down) / 2e-5, 1e-4));
      }
      CHECK_MESSAGE(worst < 1e-5, "seed " << seed << " output " << to_string(out));
    }
  }
}

TEST_CASE("MLP backward linearity") {
  Mlp net = random_mlp(MlpShape{3, {16, 16}, 1, Activation::gelu, Activation::softplus}, 5);
  const Matrix x = test::random_matrix(6, 3, 6);
  MlpTape tape;
  net.forward(x, tape);

  std::vector<double> zero_grad(net.parameter_count(), 0.0);
  net.backward(tape, Matrix(6, 1), zero_grad, nullptr);
  for (double g : zero_grad) CHECK(g == 0.0);

  const Matrix ones(6, 1, 1.0);
  std::vector<double> batch_grad(net.parameter_count(), 0.0);
  net.backward(tape, ones, batch_grad, nullptr);
  std::vector<double> sum(net.parameter_count(), 0.0);
  for (int r = 0; r < 6; ++r) {
    Matrix one(1, 3);
    std::copy(x.row(r).begin(), x.row(r).end(), one.data());
    MlpTape t1;
    net.forward(one, t1);
    net.backward(t1, Matrix(1, 1, 1.0), sum, nullptr);
  }
  for (std::size_t i = 0; i < sum.size(); ++i) CHECK(batch_grad[i] == doctest::Approx(sum[i]).epsilon(1e-12));
}

TEST_CASE("AdamW") {
  SUBCASE("zero gradient and zero decay leave parameters unchanged") {
    AdamW opt(4, AdamW::Options{0.9, 0.999, 1e-8, 0.0});
    std::vector<double> p = {1.0, -2.0, 3.0, 0.5};
    const auto before = p;
    opt.step(p, std::vector<double>(4, 0.0), 1e-3);
    CHECK(p == before);
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    AdamW opt(3, AdamW::Options{0.9, 0.999, 1e-8, 0.0});
    std::vector<double> p = {0.0, 0.0, 0.0};
    opt.step(p, std::vector<double>{2.0, -0.5, 1e-3}, 1e-3);
    CHECK(p[0] == doctest::Approx(-1e-3).epsilon(1e-6));
    CHECK(p[1] == doctest::Approx(1e-3).epsilon(1e-6));
    CHECK(p[2] == doctest::Approx(-1e-3).epsilon(1e-4));
    CHECK(opt.steps() == 1);
  }
  SUBCASE("decoupled decay shrinks by (1 - lr w)") {
    AdamW opt(2, AdamW::Options{0.9, 0.999, 1e-8, 0.1});
    std::vector<double> p = {3.0, -1.5};
    opt.step(p, std::vector<double>(2, 0.0), 0.01);
    CHECK(p[0] == doctest::Approx(3.0 * (1 - 0.01 * 0.1)).epsilon(1e-15));
    CHECK(p[1] == doctest::Approx(-1.5 * (1 - 0.01 * 0.1)).epsilon(1e-15));
  }
  SUBCASE("defaults") {
    const AdamW opt(1);
    CHECK(opt.options().beta1 == 0.9);
    CHECK(opt.options().beta2 == 0.999);
    CHECK(opt.options().eps == 1e-8);
    CHECK(opt.options().weight_decay == 1e-5);
  }
  SUBCASE("non-finite gradient is rejected before any update") {
    AdamW opt(2);
    std::vector<double> p = {1.0, 2.0};
    CHECK_THROWS_AS(opt.step(p, std::vector<double>{0.1, NAN}, 1e-3), NumericalError);
    CHECK(p == std::vector<double>{1.0, 2.0});
    CHECK(opt.steps() == 0);
  }
}

TEST_CASE("cosine schedule") {
  const CosineSchedule s{1e-3, 1e-6, 3000};
  CHECK(cosine_lr(s, 0) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(cosine_lr(s, 3000) == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(cosine_lr(s, 1500) == doctest::Approx((1e-3 + 1e-6) / 2).epsilon(1e-14));
  double prev = cosine_lr(s, 0);
  for (int e = 1; e <= 3000; ++e) {
    const double lr = cosine_lr(s, e);
    CHECK(lr <= prev);
    prev = lr;
  }
}
