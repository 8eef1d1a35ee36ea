#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fpformant/data.hpp"
#include "fpformant/model.hpp"
#include "fpformant/tensor.hpp"

namespace fpf {

/// Optimization hyperparameters. Defaults are the desk-scale schedule:
/// the learning rate starts at 0.005 and halves every 500 iterations over
/// a 2000-iteration run. The default batch size of 16 matters: with the
/// low-momentum Adam betas (0.5, 0.9), 4-utterance batches are too noisy
/// for the extended-query model to fit the spectral term at this scale
/// (measured final/initial loss 0.21 at batch 4, 0.035 at 8, 0.0006 at 16).
struct TrainConfig {
  double alpha = 0.1;  // weight of the pitch loss
  double beta = 0.1;   // weight of the duration loss
  std::size_t batch_size = 16;
  double initial_lr = 0.005;
  std::size_t halving_interval = 500;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  double adam_eps = 1e-6;
  std::size_t max_iterations = 2000;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& json_text);

/// Loss components for one utterance. spec_losses holds the raw squared
/// error sums of the three decoder heads (no normalization applied), so
/// together with frames and bins the total is reconstructable:
///   total == (1/(frames*bins)) * (spec[0]+spec[1]+spec[2])
///            + alpha*pitch_loss + beta*duration_loss
/// pitch_loss and duration_loss are mean squared errors over the N
/// phonemes, in the standardized-pitch and log(frames+1) domains.
struct LossBreakdown {
  std::array<double, 3> spec_losses{};
  double pitch_loss = 0.0;
  double duration_loss = 0.0;
  double total = 0.0;
  std::size_t frames = 0;
  std::size_t bins = 0;
};

/// Supervision targets for one utterance, in the domains the model
/// predicts: the target mel, log(frames+1) durations, and per-speaker
/// standardized pitch (0 at unvoiced phonemes).
struct TrainTarget {
  Tensor mel;                          // [T, M], no gradient
  std::vector<double> log_durations;   // [N]
  std::vector<double> pitch_std;       // [N]
};

TrainTarget make_train_target(const PhonemeUtterance& utt,
                              const PitchStats& stats);

/// Breakdown plus the gradient-tracked total for backpropagation.
struct LossResult {
  LossBreakdown breakdown;
  Tensor total;  // scalar
};

/// Mean of the three-head spectral squared errors over T*M, plus the
/// weighted pitch and duration regressions. Shape mismatches between the
/// output and the target are ContractErrors.
LossResult compute_loss(const ForwardOutput& output, const TrainTarget& target,
                        const TrainConfig& cfg);

/// Adam moment buffers, element-aligned with Model::named_parameters().
struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;
};

/// Zeroed moments shaped like the model's parameter list.
OptimizerState make_optimizer_state(Model& model);

/// One bias-corrected Adam update over every parameter, reading the
/// accumulated gradients (a parameter with no gradient buffer counts as
/// zero). epsilon is added to the square root of the second moment. A
/// non-finite gradient aborts with a NumericError naming the parameter.
void adam_step(std::vector<std::pair<std::string, Tensor>>& params,
               OptimizerState& state, const TrainConfig& cfg, double lr);

/// Stepwise-halved schedule: initial_lr * 0.5^floor(it / halving_interval).
double lr_at(std::size_t iteration, const TrainConfig& cfg);

/// Batch-mean loss components logged once per iteration. spec_term is the
/// already-normalized spectral term, so for every entry
///   total == spec_term + alpha*pitch_term + beta*duration_term
/// up to rounding.
struct TrainLogEntry {
  std::size_t iteration = 0;
  double learning_rate = 0.0;
  double total = 0.0;
  double spec_term = 0.0;
  double pitch_term = 0.0;
  double duration_term = 0.0;
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
  std::size_t end_iteration = 0;
};

/// Teacher-forced gradient-descent loop: iterations start_iteration to
/// cfg.max_iterations-1, each averaging the loss over batch_size
/// utterances drawn by an epoch-shuffled order that depends only on
/// (cfg.seed, epoch index), so a resumed run replays the exact remaining
/// schedule. The model's pitch stats must be set before training.
/// A non-finite batch loss raises NumericError with the iteration index.
TrainResult train(Model& model, std::span<const PhonemeUtterance> data,
                  const TrainConfig& cfg, OptimizerState& opt,
                  std::size_t start_iteration = 0);

/// Everything a resumed or evaluated run needs.
struct Checkpoint {
  ModelConfig model_config;
  TrainConfig train_config;
  Model model;
  OptimizerState opt;
  std::size_t iteration = 0;
};

/// Versioned binary snapshot: both configs as JSON, every named parameter,
/// the pitch-standardization buffers, the Adam moments, and the iteration
/// counter. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, Model& model,
                     const TrainConfig& train_cfg, const OptimizerState& opt,
                     std::size_t iteration);

/// Throws IoError on wrong magic, version, missing or malformed records.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace fpf
