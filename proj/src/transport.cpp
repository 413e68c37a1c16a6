#include "ltm/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "json.hpp"
#include "ltm/container.hpp"
#include "ltm/errors.hpp"

namespace ltm {

namespace {

// softplus(kUnitBias) == 1.
const double kUnitBias = std::log(std::numbers::e - 1.0);

// Samples per internal chunk of a tape-free forward pass.
constexpr std::size_t kForwardChunk = 64;

MlpShape shift_shape(int k, const std::vector<int>& hidden) {
  if (k == 0) return MlpShape{0, {}, 1, Activation::gelu, Activation::identity};
  return MlpShape{k, hidden, 1, Activation::gelu, Activation::identity};
}

MlpShape integrand_shape(int k, const std::vector<int>& hidden) {
  return MlpShape{k + 1, hidden, 1, Activation::gelu, Activation::softplus};
}

}  // namespace

std::string to_string(MapMode mode) { return mode == MapMode::sparse ? "sparse" : "dense"; }

MapMode map_mode_from_string(const std::string& s) {
  if (s == "sparse") return MapMode::sparse;
  if (s == "dense") return MapMode::dense;
  throw std::invalid_argument("unknown map mode '" + s + "'");
}

TriangularMap::TriangularMap(Ordering ordering, ConditioningSets conditioning, int quadrature_points,
                             std::vector<int> hidden)
    : ordering_(std::move(ordering)),
      conditioning_(std::move(conditioning)),
      quadrature_(gauss_legendre(quadrature_points)),
      hidden_(std::move(hidden)) {
  const int n = ordering_.size();
  if (conditioning_.size() != n) throw std::invalid_argument("conditioning sets do not match ordering size");
  for (int j = 0; j < n; ++j) {
    int prev = -1;
    for (int c : conditioning_.sets[j]) {
      if (c <= prev || c >= j) throw std::invalid_argument("conditioning set of label " + std::to_string(j) +
                                                           " must be sorted earlier labels");
      prev = c;
    }
  }
  shift_.reserve(n);
  integrand_.reserve(n);
  for (int j = 0; j < n; ++j) {
    const int k = static_cast<int>(conditioning_.sets[j].size());
    shift_.emplace_back(shift_shape(k, hidden_));
    integrand_.emplace_back(integrand_shape(k, hidden_));
  }
  set_identity();
}

TriangularMap TriangularMap::build(const MapSpec& spec) {
  const LatticeGeometry geom(spec.extent, spec.dim);
  Ordering ordering = make_ordering(spec.ordering, geom);
  ConditioningSets cond = spec.mode == MapMode::dense
                              ? dense_conditioning_sets(geom.volume())
                              : conditioning_sets(ordering, NeighborhoodSpec{spec.neighborhood}, geom);
  TriangularMap map(std::move(ordering), std::move(cond), spec.quadrature, spec.hidden);
  map.set_spec(spec);
  return map;
}

void TriangularMap::set_spec(const MapSpec& spec) {
  spec_ = spec;
  has_spec_ = true;
}

void TriangularMap::initialize(std::mt19937_64& rng, double integrand_scale) {
  for (int j = 0; j < size(); ++j) {
    shift_[j].initialize(rng, 0.0, 0.0);
    integrand_[j].initialize(rng, integrand_scale, kUnitBias);
  }
}

void TriangularMap::set_identity() {
  for (int j = 0; j < size(); ++j) {
    for (double& p : shift_[j].parameters()) p = 0.0;
    for (double& p : integrand_[j].parameters()) p = 0.0;
    const int last = integrand_[j].shape().layer_count() - 1;
    integrand_[j].bias(last)[0] = kUnitBias;
  }
}

std::size_t TriangularMap::parameter_count() const {
  std::size_t count = 0;
  for (int j = 0; j < size(); ++j) count += shift_[j].parameter_count() + integrand_[j].parameter_count();
  return count;
}

std::vector<double> TriangularMap::parameters() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (int j = 0; j < size(); ++j) {
    for (double p : shift_[j].parameters()) out.push_back(p);
    for (double p : integrand_[j].parameters()) out.push_back(p);
  }
  return out;
}

void TriangularMap::set_parameters(std::span<const double> params) {
  if (params.size() != parameter_count()) {
    throw std::invalid_argument("expected " + std::to_string(parameter_count()) + " parameters, got " +
                                std::to_string(params.size()));
  }
  std::size_t pos = 0;
  for (int j = 0; j < size(); ++j) {
    for (double& p : shift_[j].parameters()) p = params[pos++];
    for (double& p : integrand_[j].parameters()) p = params[pos++];
  }
}

Matrix TriangularMap::gather_context(int j, const Matrix& phi_label) const {
  const auto& set = conditioning_.sets[j];
  Matrix ctx(phi_label.rows(), set.size());
  for (std::size_t b = 0; b < phi_label.rows(); ++b) {
    for (std::size_t i = 0; i < set.size(); ++i) ctx(b, i) = phi_label(b, set[i]);
  }
  return ctx;
}

void TriangularMap::evaluate_component(int j, std::span<const double> z, const Matrix& context,
                                       std::span<double> phi, std::span<double> diag, MlpTape* shift_tape,
                                       MlpTape* integrand_tape, Matrix* integrand_out) const {
  const std::size_t batch = z.size();
  const std::size_t k = context.cols();
  const int nq = quadrature_.size();
  const std::size_t stride = nq + 1;

  const Matrix f = shift_tape != nullptr ? shift_[j].forward(context, *shift_tape) : shift_[j].forward(context);

  Matrix input(batch * stride, k + 1);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto ctx = context.row(b);
    for (std::size_t q = 0; q < stride; ++q) {
      auto row = input.row(b * stride + q);
      row[0] = q < static_cast<std::size_t>(nq) ? quadrature_.nodes[q] * z[b] : z[b];
      std::copy(ctx.begin(), ctx.end(), row.begin() + 1);
    }
  }
  Matrix s = integrand_tape != nullptr ? integrand_[j].forward(input, *integrand_tape) : integrand_[j].forward(input);

  for (std::size_t b = 0; b < batch; ++b) {
    double integral = 0.0;
    for (int q = 0; q < nq; ++q) integral += quadrature_.weights[q] * s(b * stride + q, 0);
    phi[b] = f(b, 0) + z[b] * integral;
    diag[b] = s(b * stride + nq, 0);
    if (!std::isfinite(phi[b]) || !std::isfinite(diag[b])) throw ComponentError(j, "non-finite output");
    if (!(diag[b] > 0.0)) throw ComponentError(j, "rectified derivative underflowed to zero");
  }
  if (integrand_out != nullptr) *integrand_out = std::move(s);
}

ComponentOutput TriangularMap::component_forward(int j, double z, std::span<const double> context) const {
  if (j < 0 || j >= size()) throw std::out_of_range("component label out of range");
  if (context.size() != conditioning_.sets[j].size()) {
    throw std::invalid_argument("component " + std::to_string(j) + " expects " +
                                std::to_string(conditioning_.sets[j].size()) + " context values");
  }
  if (!std::isfinite(z)) throw ComponentError(j, "non-finite latent input");
  for (double c : context) {
    if (!std::isfinite(c)) throw ComponentError(j, "non-finite context");
  }
  Matrix ctx(1, context.size());
  std::copy(context.begin(), context.end(), ctx.row(0).begin());
  ComponentOutput out;
  evaluate_component(j, {&z, 1}, ctx, {&out.phi, 1}, {&out.diag, 1}, nullptr, nullptr, nullptr);
  return out;
}

double TriangularMap::component_inverse(int j, double phi, std::span<const double> context) const {
  constexpr double kTol = 1e-10;
  if (!std::isfinite(phi)) throw ComponentError(j, "non-finite target");
  auto residual = [&](double z) { return component_forward(j, z, context).phi - phi; };

  double lo = -1.0;
  double hi = 1.0;
  double r_lo = residual(lo);
  double r_hi = residual(hi);
  int doublings = 0;
  while (r_lo > 0.0) {
    if (++doublings > 200) throw ComponentError(j, "inverse bracket expansion failed");
    hi = lo;
    r_hi = r_lo;
    lo *= 2.0;
    r_lo = residual(lo);
  }
  while (r_hi < 0.0) {
    if (++doublings > 200) throw ComponentError(j, "inverse bracket expansion failed");
    lo = hi;
    r_lo = r_hi;
    hi *= 2.0;
    r_hi = residual(hi);
  }
  if (std::abs(r_lo) <= kTol) return lo;
  if (std::abs(r_hi) <= kTol) return hi;

  double z = 0.5 * (lo + hi);
  for (int iter = 0; iter < 500; ++iter) {
    const ComponentOutput out = component_forward(j, z, context);
    const double r = out.phi - phi;
    // Within tolerance, stop once the Newton step is also negligible in z;
    // a flat component would otherwise leave z off by kTol / diag.
    if (std::abs(r) <= kTol && std::abs(r) <= 1e-13 * out.diag * std::max(1.0, std::abs(z))) return z;
    if (r == 0.0) return z;
    if (r < 0.0) {
      lo = z;
    } else {
      hi = z;
    }
    double next = z - r / out.diag;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == z || hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(z))) {
      return next;
    }
    z = next;
  }
  return z;
}

MapOutput TriangularMap::forward(const Matrix& z) const {
  const std::size_t n = size();
  if (z.cols() != n) throw std::invalid_argument("latent width does not match the map");
  MapOutput out{Matrix(z.rows(), n), std::vector<double>(z.rows(), 0.0)};
  std::vector<double> zj, phij, diag;
  for (std::size_t r0 = 0; r0 < z.rows(); r0 += kForwardChunk) {
    const std::size_t rows = std::min(kForwardChunk, z.rows() - r0);
    Matrix phi_label(rows, n);
    zj.resize(rows);
    phij.resize(rows);
    diag.resize(rows);
    std::vector<double> logdet(rows, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t b = 0; b < rows; ++b) zj[b] = z(r0 + b, j);
      evaluate_component(static_cast<int>(j), zj, gather_context(static_cast<int>(j), phi_label), phij, diag,
                         nullptr, nullptr, nullptr);
      for (std::size_t b = 0; b < rows; ++b) {
        phi_label(b, j) = phij[b];
        logdet[b] += std::log(diag[b]);
      }
    }
    for (std::size_t b = 0; b < rows; ++b) {
      for (std::size_t j = 0; j < n; ++j) out.phi(r0 + b, ordering_.perm[j]) = phi_label(b, j);
      out.logdet[r0 + b] = logdet[b];
    }
  }
  return out;
}

Matrix TriangularMap::inverse(const Matrix& phi) const {
  const std::size_t n = size();
  if (phi.cols() != n) throw std::invalid_argument("field width does not match the map");
  Matrix z(phi.rows(), n);
  std::vector<double> ctx;
  for (std::size_t b = 0; b < phi.rows(); ++b) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto& set = conditioning_.sets[j];
      ctx.resize(set.size());
      for (std::size_t i = 0; i < set.size(); ++i) ctx[i] = phi(b, ordering_.perm[set[i]]);
      z(b, j) = component_inverse(static_cast<int>(j), phi(b, ordering_.perm[j]), ctx);
    }
  }
  return z;
}

MapTape TriangularMap::forward_with_tape(const Matrix& z) const {
  const std::size_t n = size();
  if (z.cols() != n) throw std::invalid_argument("latent width does not match the map");
  const std::size_t batch = z.rows();
  MapTape tape;
  tape.z = z;
  tape.phi_label.resize(batch, n);
  tape.shift.resize(n);
  tape.integrand.resize(n);
  tape.integrand_out.resize(n);
  tape.output.phi.resize(batch, n);
  tape.output.logdet.assign(batch, 0.0);
  std::vector<double> zj(batch), phij(batch), diag(batch);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t b = 0; b < batch; ++b) zj[b] = z(b, j);
    evaluate_component(static_cast<int>(j), zj, gather_context(static_cast<int>(j), tape.phi_label), phij, diag,
                       &tape.shift[j], &tape.integrand[j], &tape.integrand_out[j]);
    for (std::size_t b = 0; b < batch; ++b) {
      tape.phi_label(b, j) = phij[b];
      tape.output.logdet[b] += std::log(diag[b]);
    }
  }
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < n; ++j) tape.output.phi(b, ordering_.perm[j]) = tape.phi_label(b, j);
  }
  return tape;
}

void TriangularMap::backward(const MapTape& tape, const Matrix& phi_grad, std::span<const double> logdet_grad,
                             std::span<double> grad) const {
  const std::size_t n = size();
  const std::size_t batch = tape.z.rows();
  if (phi_grad.rows() != batch || phi_grad.cols() != n || logdet_grad.size() != batch) {
    throw std::invalid_argument("cotangent shapes do not match the tape");
  }
  if (grad.size() != parameter_count()) throw std::invalid_argument("gradient buffer has wrong size");

  std::vector<std::size_t> offsets(n + 1, 0);
  for (std::size_t j = 0; j < n; ++j) {
    offsets[j + 1] = offsets[j] + shift_[j].parameter_count() + integrand_[j].parameter_count();
  }

  Matrix gl(batch, n);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < n; ++j) gl(b, j) = phi_grad(b, ordering_.perm[j]);
  }

  const int nq = quadrature_.size();
  const std::size_t stride = nq + 1;
  Matrix dctx_f, dinput;
  for (std::size_t jj = n; jj-- > 0;) {
    const int j = static_cast<int>(jj);
    const auto& set = conditioning_.sets[j];
    const std::size_t k = set.size();
    const auto fgrad = grad.subspan(offsets[j], shift_[j].parameter_count());
    const auto ggrad = grad.subspan(offsets[j] + shift_[j].parameter_count(), integrand_[j].parameter_count());

    Matrix df(batch, 1);
    for (std::size_t b = 0; b < batch; ++b) df(b, 0) = gl(b, j);
    shift_[j].backward(tape.shift[j], df, fgrad, k > 0 ? &dctx_f : nullptr);

    const Matrix& s = tape.integrand_out[j];
    Matrix ds(batch * stride, 1);
    for (std::size_t b = 0; b < batch; ++b) {
      const double a = gl(b, j) * tape.z(b, j);
      for (int q = 0; q < nq; ++q) ds(b * stride + q, 0) = a * quadrature_.weights[q];
      ds(b * stride + nq, 0) = logdet_grad[b] / s(b * stride + nq, 0);
    }
    integrand_[j].backward(tape.integrand[j], ds, ggrad, k > 0 ? &dinput : nullptr);

    if (k == 0) continue;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < k; ++i) {
        double acc = dctx_f(b, i);
        for (std::size_t q = 0; q < stride; ++q) acc += dinput(b * stride + q, i + 1);
        gl(b, set[i]) += acc;
      }
    }
  }
  for (double g : grad) {
    if (!std::isfinite(g)) throw NumericalError("non-finite map gradient");
  }
}

std::vector<double> TriangularMap::forward_backward(const Matrix& z, const Matrix& phi_grad,
                                                    std::span<const double> logdet_grad) const {
  const MapTape tape = forward_with_tape(z);
  std::vector<double> grad(parameter_count(), 0.0);
  backward(tape, phi_grad, logdet_grad, grad);
  return grad;
}

std::vector<double> model_logdensity(const Matrix& z, std::span<const double> logdet) {
  if (logdet.size() != z.rows()) throw std::invalid_argument("logdet size does not match batch");
  const double norm = 0.5 * static_cast<double>(z.cols()) * std::log(2.0 * std::numbers::pi);
  std::vector<double> out(z.rows());
  for (std::size_t b = 0; b < z.rows(); ++b) {
    double sq = 0.0;
    for (double v : z.row(b)) sq += v * v;
    out[b] = -0.5 * sq - norm - logdet[b];
  }
  return out;
}

void save_checkpoint(const TriangularMap& map, const std::string& path) {
  nlohmann::json h;
  h["version"] = kContainerVersion;
  h["ordering"] = map.ordering().name;
  h["permutation"] = map.ordering().perm;
  h["conditioning"] = map.conditioning().sets;
  h["quadrature"] = map.quadrature().size();
  h["hidden"] = map.hidden();
  h["activation"] = to_string(Activation::gelu);
  h["rectifier"] = "softplus";
  h["parameter_count"] = map.parameter_count();
  if (const MapSpec* spec = map.spec()) {
    h["L"] = spec->extent;
    h["D"] = spec->dim;
    h["neighborhood"] = spec->neighborhood;
    h["mode"] = to_string(spec->mode);
  }
  nlohmann::json comps = nlohmann::json::array();
  for (int j = 0; j < map.size(); ++j) {
    comps.push_back({{"f_in", map.shift(j).shape().in_dim}, {"g_in", map.integrand(j).shape().in_dim}});
  }
  h["components"] = std::move(comps);
  write_container(path, Container{h.dump(), map.parameters()});
}

TriangularMap load_checkpoint(const std::string& path) {
  Container c = read_container(path);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(c.header_json);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("bad checkpoint header in '" + path + "': " + e.what());
  }
  try {
    if (h.at("version").get<std::string>() != kContainerVersion) throw std::runtime_error("unsupported version");
    if (h.at("rectifier").get<std::string>() != "softplus" || h.at("activation").get<std::string>() != "gelu") {
      throw std::runtime_error("unsupported activation tags");
    }
    Ordering ordering = Ordering::from_permutation(h.at("ordering").get<std::string>(),
                                                   h.at("permutation").get<std::vector<int>>());
    ConditioningSets cond{h.at("conditioning").get<std::vector<std::vector<int>>>()};
    TriangularMap map(std::move(ordering), std::move(cond), h.at("quadrature").get<int>(),
                      h.at("hidden").get<std::vector<int>>());
    if (h.contains("L")) {
      MapSpec spec;
      spec.extent = h.at("L").get<int>();
      spec.dim = h.at("D").get<int>();
      spec.ordering = map.ordering().name;
      spec.neighborhood = h.at("neighborhood").get<int>();
      spec.mode = map_mode_from_string(h.at("mode").get<std::string>());
      spec.quadrature = map.quadrature().size();
      spec.hidden = map.hidden();
      map.set_spec(spec);
    }
    if (h.at("parameter_count").get<std::size_t>() != map.parameter_count()) {
      throw std::runtime_error("parameter count does not match architecture");
    }
    map.set_parameters(c.params);
    return map;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("bad checkpoint header in '" + path + "': " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("bad checkpoint '" + path + "': " + e.what());
  }
}

}  // namespace ltm
