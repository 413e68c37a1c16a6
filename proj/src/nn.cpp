#include "ltm/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#endif

#include "ltm/errors.hpp"
#include "vector_math.hpp"

namespace ltm {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::gelu: return "gelu";
    case Activation::softplus: return "softplus";
  }
  return "unknown";
}

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "gelu") return Activation::gelu;
  if (s == "softplus") return Activation::softplus;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// GELU over one contiguous run of values; writes the derivative too when
// `slope` is non-null.
void gelu_run(double* v, double* slope, std::size_t n) {
  thread_local std::vector<double> cdf, gauss;
  cdf.resize(n);
  for (std::size_t i = 0; i < n; ++i) cdf[i] = -v[i] * kInvSqrt2;
  detail::erfc_inplace(cdf.data(), n);
  if (slope != nullptr) {
    gauss.resize(n);
    for (std::size_t i = 0; i < n; ++i) gauss[i] = -0.5 * v[i] * v[i];
    detail::exp_inplace(gauss.data(), n);
    for (std::size_t i = 0; i < n; ++i) {
      const double c = 0.5 * cdf[i];
      slope[i] = c + v[i] * kInvSqrt2Pi * gauss[i];
      v[i] *= c;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) v[i] *= 0.5 * cdf[i];
  }
}

// Applies the activation row by row so that each value is computed the same
// way whatever the batch size.
void activate(Activation a, Matrix& y, Matrix* slope) {
  if (slope != nullptr) slope->resize(y.rows(), y.cols());
  switch (a) {
    case Activation::identity:
      if (slope != nullptr) slope->fill(1.0);
      return;
    case Activation::gelu:
      for (std::size_t r = 0; r < y.rows(); ++r) {
        gelu_run(y.row(r).data(), slope != nullptr ? slope->row(r).data() : nullptr, y.cols());
      }
      return;
    case Activation::softplus: {
      auto yv = y.values();
      for (std::size_t i = 0; i < yv.size(); ++i) {
        if (slope != nullptr) slope->values()[i] = sigmoid(yv[i]);
        yv[i] = softplus(yv[i]);
      }
      return;
    }
  }
}

Matrix transpose(std::span<const double> w, std::size_t rows, std::size_t cols) {
  Matrix t(cols, rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) t(c, r) = w[r * cols + c];
  }
  return t;
}

}  // namespace

double gelu(double x) {
  gelu_run(&x, nullptr, 1);
  return x;
}

double gelu_derivative(double x) {
  double slope;
  gelu_run(&x, &slope, 1);
  return slope;
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

// Scalar path for the tile edges; the same fused multiply-add sequence as the
// vector tiles, so results match bit for bit. Four rows run as independent
// chains to hide the FMA latency.
void gemm_scalar_block(const double* a, const double* b, double* c, std::size_t r0, std::size_t r1,
                       std::size_t c0, std::size_t c1, std::size_t k, std::size_t n) {
  for (std::size_t col = c0; col < c1; ++col) {
    std::size_t r = r0;
    for (; r + 4 <= r1; r += 4) {
      double acc0 = c[r * n + col], acc1 = c[(r + 1) * n + col];
      double acc2 = c[(r + 2) * n + col], acc3 = c[(r + 3) * n + col];
      const double* a0 = a + r * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double bv = b[p * n + col];
        acc0 = std::fma(a0[p], bv, acc0);
        acc1 = std::fma(a0[k + p], bv, acc1);
        acc2 = std::fma(a0[2 * k + p], bv, acc2);
        acc3 = std::fma(a0[3 * k + p], bv, acc3);
      }
      c[r * n + col] = acc0;
      c[(r + 1) * n + col] = acc1;
      c[(r + 2) * n + col] = acc2;
      c[(r + 3) * n + col] = acc3;
    }
    for (; r < r1; ++r) {
      double acc = c[r * n + col];
      for (std::size_t p = 0; p < k; ++p) acc = std::fma(a[r * k + p], b[p * n + col], acc);
      c[r * n + col] = acc;
    }
  }
}

#if defined(__AVX2__) && defined(__FMA__)
// Rows [r, r + R) of C += A B over column tiles of eight and four.
template <std::size_t R>
void gemm_tile(const double* a, const double* b, double* c, std::size_t r, std::size_t k, std::size_t n) {
  std::size_t col = 0;
  for (; col + 8 <= n; col += 8) {
    __m256d acc[R][2];
    for (std::size_t i = 0; i < R; ++i) {
      acc[i][0] = _mm256_loadu_pd(c + (r + i) * n + col);
      acc[i][1] = _mm256_loadu_pd(c + (r + i) * n + col + 4);
    }
    const double* arow = a + r * k;
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d b0 = _mm256_loadu_pd(b + p * n + col);
      const __m256d b1 = _mm256_loadu_pd(b + p * n + col + 4);
      for (std::size_t i = 0; i < R; ++i) {
        const __m256d av = _mm256_broadcast_sd(arow + i * k + p);
        acc[i][0] = _mm256_fmadd_pd(av, b0, acc[i][0]);
        acc[i][1] = _mm256_fmadd_pd(av, b1, acc[i][1]);
      }
    }
    for (std::size_t i = 0; i < R; ++i) {
      _mm256_storeu_pd(c + (r + i) * n + col, acc[i][0]);
      _mm256_storeu_pd(c + (r + i) * n + col + 4, acc[i][1]);
    }
  }
  for (; col + 4 <= n; col += 4) {
    __m256d acc[R];
    for (std::size_t i = 0; i < R; ++i) acc[i] = _mm256_loadu_pd(c + (r + i) * n + col);
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d b0 = _mm256_loadu_pd(b + p * n + col);
      for (std::size_t i = 0; i < R; ++i) {
        acc[i] = _mm256_fmadd_pd(_mm256_broadcast_sd(a + (r + i) * k + p), b0, acc[i]);
      }
    }
    for (std::size_t i = 0; i < R; ++i) _mm256_storeu_pd(c + (r + i) * n + col, acc[i]);
  }
}
#endif

}  // namespace

void gemm_accumulate(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t n) {
#if defined(__AVX2__) && defined(__FMA__)
  constexpr std::size_t kRows = 6;
  std::size_t r = 0;
  for (; r + kRows <= m; r += kRows) gemm_tile<kRows>(a, b, c, r, k, n);
  switch (m - r) {
    case 5: gemm_tile<5>(a, b, c, r, k, n); break;
    case 4: gemm_tile<4>(a, b, c, r, k, n); break;
    case 3: gemm_tile<3>(a, b, c, r, k, n); break;
    case 2: gemm_tile<2>(a, b, c, r, k, n); break;
    case 1: gemm_tile<1>(a, b, c, r, k, n); break;
    default: break;
  }
  // Columns past the last vector tile.
  gemm_scalar_block(a, b, c, 0, m, n - n % 4, n, k, n);
#else
  gemm_scalar_block(a, b, c, 0, m, 0, n, k, n);
#endif
}

namespace {

// Edge path of gemm_tn_block: columns handled one at a time, four output rows
// as independent chains.
void gemm_tn_scalar(const double* a, const double* b, double* c, std::size_t p0, std::size_t p1, std::size_t m,
                    std::size_t n, std::size_t c0, std::size_t c1) {
  for (std::size_t o = c0; o < c1; ++o) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      double acc0 = c[i * n + o], acc1 = c[(i + 1) * n + o];
      double acc2 = c[(i + 2) * n + o], acc3 = c[(i + 3) * n + o];
      for (std::size_t p = p0; p < p1; ++p) {
        const double bv = b[p * n + o];
        const double* arow = a + p * m + i;
        acc0 = std::fma(arow[0], bv, acc0);
        acc1 = std::fma(arow[1], bv, acc1);
        acc2 = std::fma(arow[2], bv, acc2);
        acc3 = std::fma(arow[3], bv, acc3);
      }
      c[i * n + o] = acc0;
      c[(i + 1) * n + o] = acc1;
      c[(i + 2) * n + o] = acc2;
      c[(i + 3) * n + o] = acc3;
    }
    for (; i < m; ++i) {
      double acc = c[i * n + o];
      for (std::size_t p = p0; p < p1; ++p) acc = std::fma(a[p * m + i], b[p * n + o], acc);
      c[i * n + o] = acc;
    }
  }
}

#if defined(__AVX2__) && defined(__FMA__)
// Output rows [i, i + R) of C += A[p0:p1]^T B[p0:p1] over column tiles.
template <std::size_t R>
void gemm_tn_tile(const double* a, const double* b, double* c, std::size_t p0, std::size_t p1, std::size_t i,
                  std::size_t m, std::size_t n) {
  std::size_t col = 0;
  for (; col + 8 <= n; col += 8) {
    __m256d acc[R][2];
    for (std::size_t t = 0; t < R; ++t) {
      acc[t][0] = _mm256_loadu_pd(c + (i + t) * n + col);
      acc[t][1] = _mm256_loadu_pd(c + (i + t) * n + col + 4);
    }
    for (std::size_t p = p0; p < p1; ++p) {
      const __m256d b0 = _mm256_loadu_pd(b + p * n + col);
      const __m256d b1 = _mm256_loadu_pd(b + p * n + col + 4);
      const double* arow = a + p * m + i;
      for (std::size_t t = 0; t < R; ++t) {
        const __m256d av = _mm256_broadcast_sd(arow + t);
        acc[t][0] = _mm256_fmadd_pd(av, b0, acc[t][0]);
        acc[t][1] = _mm256_fmadd_pd(av, b1, acc[t][1]);
      }
    }
    for (std::size_t t = 0; t < R; ++t) {
      _mm256_storeu_pd(c + (i + t) * n + col, acc[t][0]);
      _mm256_storeu_pd(c + (i + t) * n + col + 4, acc[t][1]);
    }
  }
  for (; col + 4 <= n; col += 4) {
    __m256d acc[R];
    for (std::size_t t = 0; t < R; ++t) acc[t] = _mm256_loadu_pd(c + (i + t) * n + col);
    for (std::size_t p = p0; p < p1; ++p) {
      const __m256d b0 = _mm256_loadu_pd(b + p * n + col);
      for (std::size_t t = 0; t < R; ++t) acc[t] = _mm256_fmadd_pd(_mm256_broadcast_sd(a + p * m + i + t), b0, acc[t]);
    }
    for (std::size_t t = 0; t < R; ++t) _mm256_storeu_pd(c + (i + t) * n + col, acc[t]);
  }
}

// Single output column: vectors run along the output rows, which are
// contiguous in A.
void gemm_tn_column(const double* a, const double* b, double* c, std::size_t p0, std::size_t p1, std::size_t m) {
  std::size_t i = 0;
  for (; i + 16 <= m; i += 16) {
    __m256d acc[4];
    for (std::size_t t = 0; t < 4; ++t) acc[t] = _mm256_loadu_pd(c + i + 4 * t);
    for (std::size_t p = p0; p < p1; ++p) {
      const __m256d bv = _mm256_broadcast_sd(b + p);
      for (std::size_t t = 0; t < 4; ++t) acc[t] = _mm256_fmadd_pd(_mm256_loadu_pd(a + p * m + i + 4 * t), bv, acc[t]);
    }
    for (std::size_t t = 0; t < 4; ++t) _mm256_storeu_pd(c + i + 4 * t, acc[t]);
  }
  for (; i + 4 <= m; i += 4) {
    __m256d acc = _mm256_loadu_pd(c + i);
    for (std::size_t p = p0; p < p1; ++p) {
      acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + p * m + i), _mm256_broadcast_sd(b + p), acc);
    }
    _mm256_storeu_pd(c + i, acc);
  }
  for (; i < m; ++i) {
    double acc = c[i];
    for (std::size_t p = p0; p < p1; ++p) acc = std::fma(a[p * m + i], b[p], acc);
    c[i] = acc;
  }
}
#endif

// C += A[p0:p1]^T B[p0:p1]; see gemm_tn_accumulate.
void gemm_tn_block(const double* a, const double* b, double* c, std::size_t p0, std::size_t p1, std::size_t m,
                   std::size_t n) {
#if defined(__AVX2__) && defined(__FMA__)
  if (n == 1) {
    gemm_tn_column(a, b, c, p0, p1, m);
    return;
  }
  constexpr std::size_t kRows = 6;
  std::size_t i = 0;
  for (; i + kRows <= m; i += kRows) gemm_tn_tile<kRows>(a, b, c, p0, p1, i, m, n);
  switch (m - i) {
    case 5: gemm_tn_tile<5>(a, b, c, p0, p1, i, m, n); break;
    case 4: gemm_tn_tile<4>(a, b, c, p0, p1, i, m, n); break;
    case 3: gemm_tn_tile<3>(a, b, c, p0, p1, i, m, n); break;
    case 2: gemm_tn_tile<2>(a, b, c, p0, p1, i, m, n); break;
    case 1: gemm_tn_tile<1>(a, b, c, p0, p1, i, m, n); break;
    default: break;
  }
  gemm_tn_scalar(a, b, c, p0, p1, m, n, n - n % 4, n);
#else
  gemm_tn_scalar(a, b, c, p0, p1, m, n, 0, n);
#endif
}

}  // namespace

void gemm_tn_accumulate(const double* a, const double* b, double* c, std::size_t rows, std::size_t m,
                        std::size_t n) {
  constexpr std::size_t kBlock = 256;
  for (std::size_t p0 = 0; p0 < rows; p0 += kBlock) {
    gemm_tn_block(a, b, c, p0, std::min(rows, p0 + kBlock), m, n);
  }
}

std::size_t MlpShape::parameter_count() const {
  std::size_t count = 0;
  for (int l = 0; l < layer_count(); ++l) {
    count += static_cast<std::size_t>(layer_in(l) + 1) * static_cast<std::size_t>(layer_out(l));
  }
  return count;
}

Mlp::Mlp(MlpShape shape) : shape_(std::move(shape)) {
  if (shape_.in_dim < 0 || shape_.out_dim < 1) throw std::invalid_argument("invalid MLP dimensions");
  for (int h : shape_.hidden) {
    if (h < 1) throw std::invalid_argument("hidden layer width must be positive");
  }
  std::size_t offset = 0;
  for (int l = 0; l < shape_.layer_count(); ++l) {
    offsets_.push_back(offset);
    offset += static_cast<std::size_t>(shape_.layer_in(l) + 1) * static_cast<std::size_t>(shape_.layer_out(l));
  }
  params_.assign(offset, 0.0);
}

std::span<const double> Mlp::weight(int layer) const {
  return {params_.data() + offset(layer),
          static_cast<std::size_t>(shape_.layer_in(layer)) * static_cast<std::size_t>(shape_.layer_out(layer))};
}
std::span<double> Mlp::weight(int layer) {
  return {params_.data() + offset(layer),
          static_cast<std::size_t>(shape_.layer_in(layer)) * static_cast<std::size_t>(shape_.layer_out(layer))};
}
std::span<const double> Mlp::bias(int layer) const {
  return {params_.data() + offset(layer) + weight(layer).size(), static_cast<std::size_t>(shape_.layer_out(layer))};
}
std::span<double> Mlp::bias(int layer) {
  return {params_.data() + offset(layer) + weight(layer).size(), static_cast<std::size_t>(shape_.layer_out(layer))};
}

void Mlp::initialize(std::mt19937_64& rng, double output_scale, double output_bias) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const int last = shape_.layer_count() - 1;
  for (int l = 0; l <= last; ++l) {
    const double fan_in = std::max(1, shape_.layer_in(l));
    const double std_dev = l == last ? output_scale / std::sqrt(fan_in) : std::sqrt(2.0 / fan_in);
    for (double& w : weight(l)) w = std_dev * normal(rng);
    for (double& b : bias(l)) b = l == last ? output_bias : 0.0;
  }
}

Matrix Mlp::forward(const Matrix& input) const {
  if (static_cast<int>(input.cols()) != shape_.in_dim) {
    throw std::invalid_argument("MLP expects " + std::to_string(shape_.in_dim) + " inputs, got " +
                                std::to_string(input.cols()));
  }
  const std::size_t rows = input.rows();
  Matrix x = input;
  for (int l = 0; l < shape_.layer_count(); ++l) {
    const std::size_t in = shape_.layer_in(l);
    const std::size_t out = shape_.layer_out(l);
    Matrix y(rows, out);
    const auto b = bias(l);
    for (std::size_t r = 0; r < rows; ++r) std::copy(b.begin(), b.end(), y.row(r).begin());
    gemm_accumulate(x.data(), weight(l).data(), y.data(), rows, in, out);
    activate(l == shape_.layer_count() - 1 ? shape_.output_activation : shape_.hidden_activation, y, nullptr);
    x = std::move(y);
  }
  return x;
}

Matrix Mlp::forward(const Matrix& input, MlpTape& tape) const {
  if (static_cast<int>(input.cols()) != shape_.in_dim) {
    throw std::invalid_argument("MLP expects " + std::to_string(shape_.in_dim) + " inputs, got " +
                                std::to_string(input.cols()));
  }
  const std::size_t rows = input.rows();
  tape.input = input;
  tape.activations.resize(shape_.hidden.size());
  tape.slopes.resize(shape_.hidden.size());
  const Matrix* x = &tape.input;
  for (int l = 0; l < shape_.layer_count(); ++l) {
    const std::size_t in = shape_.layer_in(l);
    const std::size_t out = shape_.layer_out(l);
    const bool last = l == shape_.layer_count() - 1;
    Matrix& y = last ? tape.output_pre : tape.activations[l];
    y.resize(rows, out);
    const auto b = bias(l);
    for (std::size_t r = 0; r < rows; ++r) std::copy(b.begin(), b.end(), y.row(r).begin());
    gemm_accumulate(x->data(), weight(l).data(), y.data(), rows, in, out);
    if (!last) activate(shape_.hidden_activation, y, &tape.slopes[l]);
    x = &y;
  }
  Matrix output = tape.output_pre;
  activate(shape_.output_activation, output, nullptr);
  return output;
}

void Mlp::backward(const MlpTape& tape, const Matrix& output_grad, std::span<double> grad,
                   Matrix* input_grad) const {
  if (grad.size() != params_.size()) throw std::invalid_argument("gradient buffer has wrong size");
  const std::size_t rows = tape.input.rows();
  if (output_grad.rows() != rows || static_cast<int>(output_grad.cols()) != shape_.out_dim) {
    throw std::invalid_argument("output gradient has wrong shape");
  }

  Matrix delta = output_grad;
  if (shape_.output_activation != Activation::identity) {
    Matrix pre = tape.output_pre;
    Matrix slope;
    activate(shape_.output_activation, pre, &slope);
    auto dv = delta.values();
    auto sv = slope.values();
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] *= sv[i];
  }

  for (int l = shape_.layer_count() - 1; l >= 0; --l) {
    const std::size_t in = shape_.layer_in(l);
    const std::size_t out = shape_.layer_out(l);
    const Matrix& x = l == 0 ? tape.input : tape.activations[l - 1];

    double* gw = grad.data() + offset(l);
    double* gb = gw + in * out;
    gemm_tn_accumulate(x.data(), delta.data(), gw, rows, in, out);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto d = delta.row(r);
      for (std::size_t o = 0; o < out; ++o) gb[o] += d[o];
    }

    if (l == 0 && input_grad == nullptr) break;
    Matrix dx(rows, in);
    if (in > 0) {
      const Matrix wt = transpose(weight(l), in, out);
      gemm_accumulate(delta.data(), wt.data(), dx.data(), rows, out, in);
    }
    if (l == 0) {
      *input_grad = std::move(dx);
      break;
    }
    auto dv = dx.values();
    auto sv = tape.slopes[l - 1].values();
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] *= sv[i];
    delta = std::move(dx);
  }
}

AdamW::AdamW(std::size_t size, Options options) : options_(options), m_(size, 0.0), v_(size, 0.0) {
  if (!(options.beta1 >= 0.0 && options.beta1 < 1.0 && options.beta2 >= 0.0 && options.beta2 < 1.0)) {
    throw std::invalid_argument("AdamW betas must lie in [0, 1)");
  }
  if (!(options.eps > 0.0) || !(options.weight_decay >= 0.0)) {
    throw std::invalid_argument("AdamW eps must be positive and weight decay non-negative");
  }
}

void AdamW::step(std::span<double> params, std::span<const double> grads, double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw std::invalid_argument("AdamW state does not match parameter count");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericalError("non-finite gradient at parameter " + std::to_string(i));
    }
  }
  ++step_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double decay = 1.0 - lr * options_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * grads[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * grads[i] * grads[i];
    const double m_hat = m_[i] / correction1;
    const double v_hat = v_[i] / correction2;
    params[i] = params[i] * decay - lr * m_hat / (std::sqrt(v_hat) + options_.eps);
  }
}

double cosine_lr(const CosineSchedule& schedule, double epoch) {
  if (schedule.total_epochs <= 0) return schedule.lr_initial;
  const double t = std::clamp(epoch / schedule.total_epochs, 0.0, 1.0);
  return schedule.lr_min + 0.5 * (schedule.lr_initial - schedule.lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace ltm
