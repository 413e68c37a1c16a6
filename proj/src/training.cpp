#include "ltm/training.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

#include "ltm/errors.hpp"
#include "ltm/metrics.hpp"
#include "ltm/random.hpp"

namespace ltm {

namespace {

// RNG streams derived from the training seed.
constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kBatchStream = 1;
constexpr std::uint64_t kEvalStream = 2;

Matrix normal_batch(NormalSource& source, std::size_t rows, std::size_t cols) {
  Matrix z(rows, cols);
  source.fill(z.values());
  return z;
}

Matrix slice_rows(const Matrix& m, std::size_t r0, std::size_t rows) {
  Matrix out(rows, m.cols());
  std::copy(m.data() + r0 * m.cols(), m.data() + (r0 + rows) * m.cols(), out.data());
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (!(lr_initial > 0.0) || !(lr_min >= 0.0) || lr_min > lr_initial) {
    throw std::invalid_argument("need 0 <= lr_min <= lr_initial and lr_initial > 0");
  }
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip norm must be positive");
  if (ess_every < 0 || ess_batch < 1) throw std::invalid_argument("invalid ESS evaluation settings");
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint cadence must be >= 0");
  if (chunk < 1) throw std::invalid_argument("chunk must be >= 1");
}

double TrainRecord::final_ess() const {
  for (std::size_t i = ess.size(); i-- > 0;) {
    if (ess[i]) return *ess[i];
  }
  return initial_ess;
}

TrainingDiverged::TrainingDiverged(int epoch, std::uint64_t seed, const std::string& what)
    : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + " (seed " + std::to_string(seed) +
                         "): " + what),
      epoch_(epoch) {}

TriangularMap make_initialized_map(const MapSpec& spec, std::uint64_t seed, double integrand_scale) {
  TriangularMap map = TriangularMap::build(spec);
  std::mt19937_64 rng = make_rng(seed, kInitStream);
  map.initialize(rng, integrand_scale);
  return map;
}

LossResult reverse_kl_loss(const MapOutput& output, const Action& action) {
  const std::size_t batch = output.phi.rows();
  const std::size_t n = output.phi.cols();
  if (static_cast<int>(n) != action.volume()) throw std::invalid_argument("action volume does not match map");
  LossResult r{0.0, Matrix(batch, n), std::vector<double>(batch, -1.0 / static_cast<double>(batch))};
  const double inv_b = 1.0 / static_cast<double>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto phi = output.phi.row(b);
    r.loss += action.value(phi) - output.logdet[b];
    auto g = r.phi_grad.row(b);
    action.gradient(phi, g);
    for (double& v : g) v *= inv_b;
  }
  r.loss *= inv_b;
  return r;
}

double reverse_kl_gradient(const TriangularMap& map, const Matrix& z, const Action& action, std::vector<double>& grad,
                           int chunk) {
  const std::size_t batch = z.rows();
  const std::size_t n = z.cols();
  if (grad.size() != map.parameter_count()) grad.assign(map.parameter_count(), 0.0);
  const double inv_b = 1.0 / static_cast<double>(batch);
  double loss = 0.0;
  for (std::size_t r0 = 0; r0 < batch; r0 += chunk) {
    const std::size_t rows = std::min<std::size_t>(chunk, batch - r0);
    const MapTape tape = map.forward_with_tape(slice_rows(z, r0, rows));
    Matrix phi_grad(rows, n);
    std::vector<double> logdet_grad(rows, -inv_b);
    for (std::size_t b = 0; b < rows; ++b) {
      const auto phi = tape.output.phi.row(b);
      loss += action.value(phi) - tape.output.logdet[b];
      auto g = phi_grad.row(b);
      action.gradient(phi, g);
      for (double& v : g) v *= inv_b;
    }
    map.backward(tape, phi_grad, logdet_grad, grad);
  }
  return loss * inv_b;
}

std::vector<double> importance_log_weights(const TriangularMap& map, const Matrix& z, const Action& action) {
  const MapOutput out = map.forward(z);
  const std::vector<double> logq_base = model_logdensity(z, out.logdet);
  std::vector<double> lw(z.rows());
  for (std::size_t b = 0; b < z.rows(); ++b) lw[b] = -action.value(out.phi.row(b)) - logq_base[b];
  return lw;
}

TrainRecord train(const TrainConfig& config, TriangularMap& map, const Action& action, std::ostream* csv) {
  config.validate();
  if (action.volume() != map.size()) throw std::invalid_argument("action volume does not match map");
  const std::size_t n = map.size();
  NormalSource batch_source(make_rng(config.seed, kBatchStream));
  NormalSource eval_source(make_rng(config.seed, kEvalStream));
  const Matrix eval_z = normal_batch(eval_source, config.ess_batch, n);

  TrainRecord record;
  record.initial_ess = ess(importance_log_weights(map, eval_z, action));
  if (csv != nullptr) write_train_csv_header(*csv);

  const CosineSchedule schedule{config.lr_initial, config.lr_min, std::max(config.epochs, 1)};
  AdamW optimizer(map.parameter_count(), config.optimizer);
  std::vector<double> params = map.parameters();
  std::vector<double> grad(params.size());

  for (int e = 0; e < config.epochs; ++e) {
    const Matrix z = normal_batch(batch_source, config.batch_size, n);
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    try {
      loss = reverse_kl_gradient(map, z, action, grad, config.chunk);
    } catch (const NumericalError& err) {
      throw TrainingDiverged(e + 1, config.seed, err.what());
    }
    if (!std::isfinite(loss)) throw TrainingDiverged(e + 1, config.seed, "non-finite loss");

    double norm_sq = 0.0;
    for (double g : grad) norm_sq += g * g;
    const double norm = std::sqrt(norm_sq);
    if (norm > config.clip_norm) {
      const double factor = config.clip_norm / norm;
      for (double& g : grad) g *= factor;
    }

    const double lr = cosine_lr(schedule, e);
    try {
      optimizer.step(params, grad, lr);
    } catch (const NumericalError& err) {
      throw TrainingDiverged(e + 1, config.seed, err.what());
    }
    map.set_parameters(params);

    record.epoch.push_back(e + 1);
    record.loss.push_back(loss);
    record.lr.push_back(lr);
    const bool last = e + 1 == config.epochs;
    std::optional<double> e_ess;
    if ((config.ess_every > 0 && (e + 1) % config.ess_every == 0) || last) {
      try {
        e_ess = ess(importance_log_weights(map, eval_z, action));
      } catch (const NumericalError& err) {
        throw TrainingDiverged(e + 1, config.seed, err.what());
      }
    }
    record.ess.push_back(e_ess);
    if (csv != nullptr) {
      write_train_csv_row(*csv, record, record.size() - 1);
      csv->flush();
    }

    if (!config.checkpoint_path.empty() &&
        (last || (config.checkpoint_every > 0 && (e + 1) % config.checkpoint_every == 0))) {
      save_checkpoint(map, config.checkpoint_path);
    }
  }
  return record;
}

void write_train_csv_header(std::ostream& out) { out << "epoch,loss,lr,ess\n"; }

void write_train_csv_row(std::ostream& out, const TrainRecord& record, std::size_t i) {
  const auto old = out.precision(17);
  out << record.epoch[i] << ',' << record.loss[i] << ',' << record.lr[i] << ',';
  if (record.ess[i]) out << *record.ess[i];
  out << '\n';
  out.precision(old);
}

void write_train_csv(const TrainRecord& record, std::ostream& out) {
  write_train_csv_header(out);
  for (std::size_t i = 0; i < record.size(); ++i) write_train_csv_row(out, record, i);
}

}  // namespace ltm
