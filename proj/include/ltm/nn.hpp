#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ltm/matrix.hpp"

namespace ltm {

enum class Activation { identity, gelu, softplus };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Exact GELU, x * Phi(x) with Phi the standard normal CDF.
double gelu(double x);
double gelu_derivative(double x);
/// log(1 + exp(x)) evaluated without overflow.
double softplus(double x);
/// Logistic sigmoid, the derivative of softplus.
double sigmoid(double x);

/// C[r, :] += sum_p A[r, p] * B[p, :] with A m-by-k, B k-by-n, C m-by-n, all
/// row-major. Each output is accumulated by fused multiply-adds in increasing
/// p, so a row's result does not depend on how many rows are in the batch.
void gemm_accumulate(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);

/// C += A^T B with A rows-by-m, B rows-by-n, C m-by-n. Accumulates over rows
/// in increasing order, one fused multiply-add at a time.
void gemm_tn_accumulate(const double* a, const double* b, double* c, std::size_t rows, std::size_t m,
                        std::size_t n);

/// Layer sizes and activations of a fully connected network.
struct MlpShape {
  int in_dim = 1;
  std::vector<int> hidden;
  int out_dim = 1;
  Activation hidden_activation = Activation::gelu;
  Activation output_activation = Activation::identity;

  int layer_count() const { return static_cast<int>(hidden.size()) + 1; }
  int layer_in(int l) const { return l == 0 ? in_dim : hidden[l - 1]; }
  int layer_out(int l) const { return l == layer_count() - 1 ? out_dim : hidden[l]; }
  std::size_t parameter_count() const;

  friend bool operator==(const MlpShape&, const MlpShape&) = default;
};

/// Intermediate values of a forward pass kept for the backward pass.
struct MlpTape {
  Matrix input;
  std::vector<Matrix> activations;  // output of each hidden layer
  std::vector<Matrix> slopes;       // activation derivative at each hidden pre-activation
  Matrix output_pre;                // final pre-activation
};

/// Multilayer perceptron. Parameters live in one flat vector laid out layer by
/// layer as weight (in-by-out, row-major) followed by bias.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(MlpShape shape);

  const MlpShape& shape() const { return shape_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  std::span<const double> weight(int layer) const;
  std::span<double> weight(int layer);
  std::span<const double> bias(int layer) const;
  std::span<double> bias(int layer);

  /// Fan-in scaled normal weights (std sqrt(2 / fan_in)) and zero biases for
  /// hidden layers; the output layer gets std `output_scale / sqrt(fan_in)`
  /// and bias `output_bias`.
  void initialize(std::mt19937_64& rng, double output_scale, double output_bias);

  /// Batch forward pass, one sample per row.
  Matrix forward(const Matrix& input) const;
  /// Forward pass that records what backward() needs.
  Matrix forward(const Matrix& input, MlpTape& tape) const;

  /// Reverse pass. Adds parameter gradients into `grad` (same layout as
  /// parameters()) and, when `input_grad` is non-null, writes the gradient with
  /// respect to the input.
  void backward(const MlpTape& tape, const Matrix& output_grad, std::span<double> grad,
                Matrix* input_grad) const;

 private:
  std::size_t offset(int layer) const { return offsets_[layer]; }

  MlpShape shape_;
  std::vector<double> params_;
  std::vector<std::size_t> offsets_;
};

/// Decoupled-weight-decay Adam.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;
  };

  explicit AdamW(std::size_t size) : AdamW(size, Options{}) {}
  AdamW(std::size_t size, Options options);

  /// One update at learning rate `lr`. Throws NumericalError if any gradient
  /// entry is not finite; the parameters are untouched in that case.
  void step(std::span<double> params, std::span<const double> grads, double lr);

  long steps() const { return step_; }
  const Options& options() const { return options_; }
  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }

 private:
  Options options_;
  std::vector<double> m_;
  std::vector<double> v_;
  long step_ = 0;
};

struct CosineSchedule {
  double lr_initial = 1e-3;
  double lr_min = 1e-6;
  int total_epochs = 3000;
};

/// lr_min + (lr_initial - lr_min) (1 + cos(pi epoch / total)) / 2.
double cosine_lr(const CosineSchedule& schedule, double epoch);

}  // namespace ltm
