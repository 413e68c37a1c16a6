#pragma once

#include <span>
#include <vector>

namespace ltm {

/// Periodic hypercubic lattice (Z/LZ)^D with row-major site indexing.
///
/// Site coordinates (c_0, ..., c_{D-1}) map to i = sum_k c_k L^(D-1-k), so in
/// two dimensions i = row * L + col. Direction mu moves coordinate mu by +1.
class LatticeGeometry {
 public:
  LatticeGeometry(int extent, int dim = 2);

  int extent() const { return extent_; }
  int dim() const { return dim_; }
  int volume() const { return volume_; }

  /// Site reached from `site` by one step in direction mu, forward or back.
  int neighbor(int site, int mu, bool forward) const {
    return neighbors_[static_cast<std::size_t>(site) * 2 * dim_ + 2 * mu + (forward ? 0 : 1)];
  }
  /// The 2D neighbours of `site`, ordered (+0, -0, +1, -1, ...).
  std::span<const int> neighbors(int site) const {
    return {neighbors_.data() + static_cast<std::size_t>(site) * 2 * dim_,
            static_cast<std::size_t>(2 * dim_)};
  }

  std::vector<int> coords(int site) const;
  /// Site at `coords + offset` with periodic wrap; offsets may be negative.
  int shifted(int site, std::span<const int> offset) const;

 private:
  int extent_;
  int dim_;
  int volume_;
  std::vector<int> neighbors_;
};

/// Row-major site index of `coords`; throws std::out_of_range on bad input.
int site_index(std::span<const int> coords, const LatticeGeometry& geom);

/// Bare couplings of the lattice phi^4 action.
struct PhiFourParams {
  double m0_sq = -4.0;
  double lambda0 = 8.0;

  /// Throws std::invalid_argument unless both are finite and lambda0 >= 0.
  void validate() const;
};

/// S[phi] = sum_x [ 1/2 sum_mu (phi_{x+mu} - phi_x)^2 + m0^2/2 phi_x^2 + lambda0/4! phi_x^4 ].
double action(std::span<const double> phi, const PhiFourParams& params, const LatticeGeometry& geom);

/// dS/dphi_y = sum_mu (2 phi_y - phi_{y+mu} - phi_{y-mu}) + m0^2 phi_y + lambda0/6 phi_y^3.
void action_gradient(std::span<const double> phi, const PhiFourParams& params,
                     const LatticeGeometry& geom, std::span<double> out);
std::vector<double> action_gradient(std::span<const double> phi, const PhiFourParams& params,
                                    const LatticeGeometry& geom);

/// Unnormalised log of the full conditional of one site given its 2D
/// neighbours. Only the terms that involve `value` are kept.
double local_conditional_logdensity(double value, std::span<const double> neighbor_values,
                                    const PhiFourParams& params, const LatticeGeometry& geom);

/// A target density exp(-S) over R^N, as seen by the samplers and the
/// training loss.
class Action {
 public:
  virtual ~Action() = default;
  virtual int volume() const = 0;
  virtual double value(std::span<const double> phi) const = 0;
  virtual void gradient(std::span<const double> phi, std::span<double> out) const = 0;
};

class PhiFourAction final : public Action {
 public:
  PhiFourAction(PhiFourParams params, LatticeGeometry geom);

  int volume() const override { return geom_.volume(); }
  double value(std::span<const double> phi) const override;
  void gradient(std::span<const double> phi, std::span<double> out) const override;

  const PhiFourParams& params() const { return params_; }
  const LatticeGeometry& geometry() const { return geom_; }

 private:
  PhiFourParams params_;
  LatticeGeometry geom_;
};

/// S[phi] = |phi|^2 / 2, the standard normal. Used as a reference target.
class GaussianAction final : public Action {
 public:
  explicit GaussianAction(int volume) : volume_(volume) {}

  int volume() const override { return volume_; }
  double value(std::span<const double> phi) const override;
  void gradient(std::span<const double> phi, std::span<double> out) const override;

 private:
  int volume_;
};

}  // namespace ltm
