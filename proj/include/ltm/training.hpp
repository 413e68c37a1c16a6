#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ltm/lattice.hpp"
#include "ltm/matrix.hpp"
#include "ltm/nn.hpp"
#include "ltm/transport.hpp"

namespace ltm {

struct TrainConfig {
  int epochs = 3000;
  int batch_size = 256;
  AdamW::Options optimizer;
  double lr_initial = 1e-3;
  double lr_min = 1e-6;
  double clip_norm = 10.0;
  std::uint64_t seed = 0;
  int ess_every = 50;
  int ess_batch = 1024;
  int checkpoint_every = 0;     // 0: only the final checkpoint
  std::string checkpoint_path;  // empty: no checkpoints
  int chunk = 32;               // samples per forward/backward pass

  /// Throws std::invalid_argument on out-of-range values (epochs may be 0).
  void validate() const;
};

struct TrainRecord {
  std::vector<int> epoch;  // 1-based
  std::vector<double> loss;
  std::vector<double> lr;
  std::vector<std::optional<double>> ess;
  double initial_ess = 0.0;  // held-out ESS before the first update

  std::size_t size() const { return epoch.size(); }
  /// Last recorded ESS, or initial_ess when none was recorded.
  double final_ess() const;
};

/// Loss value and cotangents of mean(S(phi) - logdet) over one batch.
struct LossResult {
  double loss = 0.0;
  Matrix phi_grad;                  // dS/dphi / B, site order
  std::vector<double> logdet_grad;  // -1 / B
};

/// Map for `spec` with parameters drawn from the initialization stream of `seed`.
TriangularMap make_initialized_map(const MapSpec& spec, std::uint64_t seed, double integrand_scale = 1e-2);

LossResult reverse_kl_loss(const MapOutput& output, const Action& action);

/// Loss over `z` with its parameter gradient accumulated into `grad`,
/// processing `chunk` samples at a time in a fixed order.
double reverse_kl_gradient(const TriangularMap& map, const Matrix& z, const Action& action, std::vector<double>& grad,
                           int chunk = 32);

/// log w' = -S(phi) - log q(phi) with q the map density, for latent draws z.
std::vector<double> importance_log_weights(const TriangularMap& map, const Matrix& z, const Action& action);

/// Loss became non-finite or a gradient blew up.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, std::uint64_t seed, const std::string& what);
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

/// Reverse-KL training: each epoch is one AdamW step on a fresh batch with a
/// cosine learning rate. When `csv` is given rows are streamed as they are
/// produced. The map is updated in place.
TrainRecord train(const TrainConfig& config, TriangularMap& map, const Action& action, std::ostream* csv = nullptr);

/// Header `epoch,loss,lr,ess`.
void write_train_csv_header(std::ostream& out);
void write_train_csv_row(std::ostream& out, const TrainRecord& record, std::size_t i);
void write_train_csv(const TrainRecord& record, std::ostream& out);

}  // namespace ltm
