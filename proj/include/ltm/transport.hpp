#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "ltm/matrix.hpp"
#include "ltm/nn.hpp"
#include "ltm/ordering.hpp"

namespace ltm {

/// Quadrature nodes in (0, 1), increasing, with positive weights summing to one.
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  int size() const { return static_cast<int>(nodes.size()); }
};

/// Gauss-Legendre rule with `points` nodes, mapped from [-1, 1] to [0, 1].
QuadratureRule gauss_legendre(int points);

enum class MapMode { sparse, dense };

std::string to_string(MapMode mode);
MapMode map_mode_from_string(const std::string& s);

/// Everything needed to rebuild a map's structure for a lattice.
struct MapSpec {
  int extent = 8;
  int dim = 2;
  std::string ordering = "checkerboard";
  int neighborhood = 1;
  MapMode mode = MapMode::sparse;
  int quadrature = 15;
  std::vector<int> hidden = {64, 64, 64};
};

/// Samples phi (site order) and log|det dT/dz| for a batch of latent draws.
struct MapOutput {
  Matrix phi;
  std::vector<double> logdet;
};

struct ComponentOutput {
  double phi = 0.0;
  double diag = 0.0;  // d phi / d z of the exact-integral component
};

/// Reverse-mode record of one batched forward pass.
struct MapTape {
  Matrix z;          // label order
  Matrix phi_label;  // label order
  MapOutput output;
  std::vector<MlpTape> shift;
  std::vector<MlpTape> integrand;
  std::vector<Matrix> integrand_out;  // rectified integrand, rows b * (Q + 1) + q
};

/// Triangular transport map built from monotone rectified components
///
///   phi_j = f_j(ctx) + z_j * sum_q w_q softplus(g_j(t_q z_j, ctx)),
///
/// where ctx holds the already generated outputs phi_i for i in C(j). A
/// component with an empty conditioning set has a single learned scalar as
/// its shift.
class TriangularMap {
 public:
  TriangularMap(Ordering ordering, ConditioningSets conditioning, int quadrature_points = 15,
                std::vector<int> hidden = {64, 64, 64});

  /// Structure for `spec`: the named ordering and either the past-neighbour
  /// stencil (sparse) or the full past (dense).
  static TriangularMap build(const MapSpec& spec);

  int size() const { return ordering_.size(); }
  const Ordering& ordering() const { return ordering_; }
  const ConditioningSets& conditioning() const { return conditioning_; }
  const QuadratureRule& quadrature() const { return quadrature_; }
  const std::vector<int>& hidden() const { return hidden_; }

  /// Descriptor recorded in checkpoints; set by build().
  const MapSpec* spec() const { return has_spec_ ? &spec_ : nullptr; }
  void set_spec(const MapSpec& spec);

  Mlp& shift(int j) { return shift_[j]; }
  const Mlp& shift(int j) const { return shift_[j]; }
  Mlp& integrand(int j) { return integrand_[j]; }
  const Mlp& integrand(int j) const { return integrand_[j]; }

  /// Near-identity start: fan-in scaled hidden layers, zero shift output
  /// layers, integrand output layers with small weights (std `integrand_scale
  /// / sqrt(fan_in)`) and bias such that softplus(bias) = 1.
  void initialize(std::mt19937_64& rng, double integrand_scale = 1e-2);
  /// Exact identity: zero shifts and constant integrand softplus(b) = 1.
  void set_identity();

  std::size_t parameter_count() const;
  /// Flat parameter vector: shift_0, integrand_0, shift_1, integrand_1, ...
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> params);

  ComponentOutput component_forward(int j, double z, std::span<const double> context) const;
  /// Solves component_forward(j, z, context).phi == phi to 1e-10 absolute,
  /// iterating further until the Newton correction to z is at rounding level.
  double component_inverse(int j, double phi, std::span<const double> context) const;

  /// z is B-by-N in label order; the returned phi is in site order.
  MapOutput forward(const Matrix& z) const;
  /// phi is B-by-N in site order; returns z in label order.
  Matrix inverse(const Matrix& phi) const;

  MapTape forward_with_tape(const Matrix& z) const;
  /// Adds d(loss)/d(params) into `grad` given cotangents on phi (site order)
  /// and on each sample's logdet.
  void backward(const MapTape& tape, const Matrix& phi_grad, std::span<const double> logdet_grad,
                std::span<double> grad) const;
  /// forward_with_tape followed by backward.
  std::vector<double> forward_backward(const Matrix& z, const Matrix& phi_grad,
                                       std::span<const double> logdet_grad) const;

 private:
  // Shared by the batched and single-sample paths.
  void evaluate_component(int j, std::span<const double> z, const Matrix& context, std::span<double> phi,
                          std::span<double> log_diag, MlpTape* shift_tape, MlpTape* integrand_tape,
                          Matrix* integrand_out) const;
  Matrix gather_context(int j, const Matrix& phi_label) const;

  Ordering ordering_;
  ConditioningSets conditioning_;
  QuadratureRule quadrature_;
  std::vector<int> hidden_;
  std::vector<Mlp> shift_;
  std::vector<Mlp> integrand_;
  MapSpec spec_;
  bool has_spec_ = false;
};

/// log N(z; 0, I) - logdet for each row.
std::vector<double> model_logdensity(const Matrix& z, std::span<const double> logdet);

/// Writes an "ltm-v1" checkpoint of the map.
void save_checkpoint(const TriangularMap& map, const std::string& path);
TriangularMap load_checkpoint(const std::string& path);

}  // namespace ltm
