#pragma once

#include "dodti/checkpoint.hpp"
#include "dodti/denoiser.hpp"
#include "dodti/estimators.hpp"
#include "dodti/simulation.hpp"
#include "dodti/unroll.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

namespace dodti {

/// Defaults: 250 epochs, batch 4, lr 1e-4 halved every 100 epochs, 32^3 blocks.
struct TrainConfig {
  int epochs = 250;
  int batch_size = 4;
  double lr = 1e-4;
  int lr_halving_period = 100;
  std::uint64_t seed = 0;
  int block_size = 32;
  /// Learning rate for log rho and log lambda; 0 means "same as lr".
  double scalar_lr = 0.0;
  /// Stop after the epoch in which this wall-clock budget is exceeded (0 = none).
  double max_seconds = 0.0;
  /// Writes config.json, loss.csv and checkpoints here when non-empty.
  std::filesystem::path run_dir;
  int checkpoint_every = 0;  // epochs; 0 = final checkpoint only
  /// Convolution arithmetic during training (see ConvPrecision).
  ConvPrecision conv_precision = ConvPrecision::f32;

  void validate() const;
};

/// Learning rate used in 0-based `epoch`: lr * 0.5^floor(epoch / period).
double learning_rate_at(const TrainConfig& cfg, int epoch);

struct TrainSample {
  DwiStack noisy_stack;
  ParamField gt;  // mm^2/s, mask marks the supervised voxels
  double noise_level = 0.0;
};

/// Stage-weighted loss sum_n (n/Ns) (MAE(X^n) + MAE(D(Z^{n-1})) + MAE(Z^n)),
/// MAE averaged over masked voxels and all 7 channels. All arguments share units.
double loss_eq12(const std::vector<StageTrace>& trace, const Eigen::MatrixXd& gt, const Mask& mask);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long long step = 0;
};

/// One bias-corrected Adam update. `lr` may be per-parameter.
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state, const Eigen::VectorXd& lr,
               const AdamOptions& options = {});
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state, double lr,
               const AdamOptions& options = {});

struct LossGradient {
  double loss = 0.0;
  DenoiserWeights grad_weights;
  double grad_log_rho = 0.0;
  double grad_log_lambda = 0.0;
  /// W entering each stage's fitting block during this evaluation.
  std::vector<Eigen::MatrixXd> weights_used;
};

/// Loss and exact reverse-mode gradient of the unrolled network with
/// respect to the CNN weights, log rho and log lambda. W is treated as a
/// constant (stop-gradient); with `frozen_weights` the forward pass uses
/// the given W sequence instead of refreshing it.
LossGradient unroll_loss_gradient(const UnrollProblem& problem, const Eigen::MatrixXd& gt_solver,
                                  const TrainedModel& model, int ns, int nt,
                                  const std::vector<Eigen::MatrixXd>* frozen_weights = nullptr);

/// Forward-only loss of `model` on a problem (same surrogate as above).
double unroll_loss(const UnrollProblem& problem, const Eigen::MatrixXd& gt_solver, const TrainedModel& model, int ns,
                   int nt, const std::vector<Eigen::MatrixXd>* frozen_weights = nullptr);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double rho = 0.0;
  double lambda = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  TrainedModel model;
  double initial_val_loss = 0.0;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Supervised end-to-end training. `validation` may be empty, in which case
/// the validation column repeats the training loss. ns, nt and tensor_unit
/// come from `ucfg`; rho/lambda start from `initial` and are learned when
/// ucfg.train_rho_lambda is set.
TrainResult train(const std::vector<TrainSample>& dataset, const std::vector<TrainSample>& validation,
                  const TrainConfig& cfg, const UnrollConfig& ucfg, TrainedModel initial,
                  const EpochCallback& on_epoch = {});

/// Supervised warm start of the denoiser alone: input is the WLLS fit of
/// each block in solver units, target its ground truth, loss the masked MSE.
/// Blocks are drawn with replacement from a seeded stream.
struct WarmStartConfig {
  int max_steps = 0;          // 0 = bounded by max_seconds only
  double max_seconds = 0.0;   // 0 = bounded by max_steps only
  double lr = 1e-3;
  std::uint64_t seed = 0;
  /// Divide each block's loss by the MSE of its own WLLS input, so
  /// low-noise blocks weigh as much as high-noise ones.
  bool normalise = false;
  int wlls_iterations = 2;
  int log_every = 500;        // steps between validation records
  ConvPrecision conv_precision = ConvPrecision::f32;
};

struct WarmStartRecord {
  int step = 0;
  double train_loss = 0.0;  // running mean since the previous record
  double val_mse = 0.0;
  double seconds = 0.0;
};

struct WarmStartResult {
  /// Weights at the record with the lowest validation MSE (the last step
  /// when there is no validation set).
  DenoiserWeights weights;
  int steps = 0;
  int best_step = 0;
  double input_val_mse = 0.0;  // WLLS input against truth
  std::vector<WarmStartRecord> history;
};

WarmStartResult pretrain_denoiser(const std::vector<TrainSample>& dataset, const std::vector<TrainSample>& validation,
                                  DenoiserWeights initial, const WarmStartConfig& cfg, double tensor_unit,
                                  const std::function<void(const WarmStartRecord&)>& on_record = {});

struct DatasetSpec {
  int count = 8;
  Dims phantom_dims{48, 48, 48};
  int phantoms = 4;  // distinct phantom geometries cycled over
  int block_size = 32;
  std::uint64_t seed = 0;
  std::vector<double> noise_levels;  // cycled; defaults to training_noise_levels()
  SchemeRequest scheme;              // default: DSM6 at b=1000, one b=0
};

/// Simulated blocks: phantom -> synthesis -> p99 normalisation -> Rician
/// noise, cropped to blocks whose centre lies inside the phantom mask.
std::vector<TrainSample> make_training_blocks(const DatasetSpec& spec);

}  // namespace dodti
