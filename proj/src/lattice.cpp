#include "ltm/lattice.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ltm {

LatticeGeometry::LatticeGeometry(int extent, int dim) : extent_(extent), dim_(dim), volume_(1) {
  if (extent < 1) throw std::invalid_argument("lattice extent must be positive");
  if (dim < 1) throw std::invalid_argument("lattice dimension must be positive");
  for (int k = 0; k < dim; ++k) {
    if (volume_ > (1 << 26) / extent) throw std::invalid_argument("lattice volume too large");
    volume_ *= extent;
  }

  neighbors_.resize(static_cast<std::size_t>(volume_) * 2 * dim_);
  // stride of coordinate mu in the row-major index
  std::vector<int> stride(dim_, 1);
  for (int mu = dim_ - 2; mu >= 0; --mu) stride[mu] = stride[mu + 1] * extent_;

  for (int site = 0; site < volume_; ++site) {
    for (int mu = 0; mu < dim_; ++mu) {
      const int c = (site / stride[mu]) % extent_;
      const int up = (c + 1) % extent_;
      const int down = (c + extent_ - 1) % extent_;
      auto* entry = &neighbors_[static_cast<std::size_t>(site) * 2 * dim_ + 2 * mu];
      entry[0] = site + (up - c) * stride[mu];
      entry[1] = site + (down - c) * stride[mu];
    }
  }
}

std::vector<int> LatticeGeometry::coords(int site) const {
  if (site < 0 || site >= volume_) throw std::out_of_range("site out of range: " + std::to_string(site));
  std::vector<int> c(dim_);
  for (int mu = dim_ - 1; mu >= 0; --mu) {
    c[mu] = site % extent_;
    site /= extent_;
  }
  return c;
}

int LatticeGeometry::shifted(int site, std::span<const int> offset) const {
  auto c = coords(site);
  if (offset.size() != c.size()) throw std::invalid_argument("offset dimension mismatch");
  for (std::size_t k = 0; k < c.size(); ++k) {
    c[k] = ((c[k] + offset[k]) % extent_ + extent_) % extent_;
  }
  return site_index(c, *this);
}

int site_index(std::span<const int> coords, const LatticeGeometry& geom) {
  if (static_cast<int>(coords.size()) != geom.dim()) {
    throw std::out_of_range("expected " + std::to_string(geom.dim()) + " coordinates");
  }
  int index = 0;
  for (int c : coords) {
    if (c < 0 || c >= geom.extent()) {
      throw std::out_of_range("coordinate " + std::to_string(c) + " outside [0, " +
                              std::to_string(geom.extent()) + ")");
    }
    index = index * geom.extent() + c;
  }
  return index;
}

void PhiFourParams::validate() const {
  if (!std::isfinite(m0_sq) || !std::isfinite(lambda0)) {
    throw std::invalid_argument("phi4 couplings must be finite");
  }
  if (lambda0 < 0.0) throw std::invalid_argument("lambda0 must be non-negative");
}

namespace {

void check_shape(std::span<const double> phi, const LatticeGeometry& geom) {
  if (static_cast<int>(phi.size()) != geom.volume()) {
    throw std::invalid_argument("field has " + std::to_string(phi.size()) + " entries, lattice has " +
                                std::to_string(geom.volume()) + " sites");
  }
}

}  // namespace

double action(std::span<const double> phi, const PhiFourParams& params, const LatticeGeometry& geom) {
  check_shape(phi, geom);
  const double quartic = params.lambda0 / 24.0;
  double s = 0.0;
  for (int x = 0; x < geom.volume(); ++x) {
    const double v = phi[x];
    double kinetic = 0.0;
    for (int mu = 0; mu < geom.dim(); ++mu) {
      const double d = phi[geom.neighbor(x, mu, true)] - v;
      kinetic += d * d;
    }
    const double v2 = v * v;
    s += 0.5 * kinetic + 0.5 * params.m0_sq * v2 + quartic * v2 * v2;
  }
  return s;
}

void action_gradient(std::span<const double> phi, const PhiFourParams& params, const LatticeGeometry& geom,
                     std::span<double> out) {
  check_shape(phi, geom);
  if (out.size() != phi.size()) throw std::invalid_argument("gradient buffer has wrong size");
  const double cubic = params.lambda0 / 6.0;
  for (int y = 0; y < geom.volume(); ++y) {
    const double v = phi[y];
    double laplacian = 0.0;
    for (int mu = 0; mu < geom.dim(); ++mu) {
      laplacian += 2.0 * v - phi[geom.neighbor(y, mu, true)] - phi[geom.neighbor(y, mu, false)];
    }
    out[y] = laplacian + params.m0_sq * v + cubic * v * v * v;
  }
}

std::vector<double> action_gradient(std::span<const double> phi, const PhiFourParams& params,
                                    const LatticeGeometry& geom) {
  std::vector<double> out(phi.size());
  action_gradient(phi, params, geom, out);
  return out;
}

double local_conditional_logdensity(double value, std::span<const double> neighbor_values,
                                    const PhiFourParams& params, const LatticeGeometry& geom) {
  if (static_cast<int>(neighbor_values.size()) != 2 * geom.dim()) {
    throw std::invalid_argument("expected " + std::to_string(2 * geom.dim()) + " neighbour values, got " +
                                std::to_string(neighbor_values.size()));
  }
  double kinetic = 0.0;
  for (double n : neighbor_values) kinetic += 0.5 * (n - value) * (n - value);
  const double v2 = value * value;
  return -(kinetic + 0.5 * params.m0_sq * v2 + params.lambda0 / 24.0 * v2 * v2);
}

PhiFourAction::PhiFourAction(PhiFourParams params, LatticeGeometry geom)
    : params_(params), geom_(std::move(geom)) {
  params_.validate();
}

double PhiFourAction::value(std::span<const double> phi) const { return action(phi, params_, geom_); }

void PhiFourAction::gradient(std::span<const double> phi, std::span<double> out) const {
  action_gradient(phi, params_, geom_, out);
}

double GaussianAction::value(std::span<const double> phi) const {
  double s = 0.0;
  for (double v : phi) s += v * v;
  return 0.5 * s;
}

void GaussianAction::gradient(std::span<const double> phi, std::span<double> out) const {
  for (std::size_t i = 0; i < phi.size(); ++i) out[i] = phi[i];
}

}  // namespace ltm
