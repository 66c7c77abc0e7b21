#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mpq/components.hpp"
#include "mpq/matrix.hpp"
#include "mpq/transformer.hpp"

namespace mpq {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t patience = 10;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  std::size_t lr_halving_period = 3;
  std::uint64_t seed = 42;
  /// Quantization-aware training at this combination when set.
  std::optional<BitwidthCombination> qat;
  double ema_decay = 0.99;

  /// Throws Error(kValidation) for non-positive values or patience > epochs.
  void validate() const;
  /// lr * 2^-floor(epoch / period), epochs counted from 0.
  double lr_at(std::size_t epoch) const;
};

/// Training and validation pairs, inputs already normalized.
struct TrainData {
  std::vector<Matrix> fit_windows;
  std::vector<double> fit_targets;
  std::vector<Matrix> val_windows;
  std::vector<double> val_targets;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::string stop_reason;  // "patience" or "max_epochs"
};

/// Adam on MSE with seeded per-epoch shuffling (the last partial batch is
/// kept). Early stopping restores the best-validation parameters. With
/// cfg.qat set, forwards are fake-quantized with straight-through gradients
/// and EMA activation ranges; the ranges of the best epoch are stored in
/// the returned model's qat_ranges. Throws Error(kNumeric) on a non-finite
/// loss.
std::pair<FloatModel, TrainReport> train(FloatModel model, const TrainData& data,
                                         const TrainConfig& cfg);

/// train() that requires cfg.qat. Throws Error(kUsage) without it.
std::pair<FloatModel, TrainReport> train_qat(FloatModel model, const TrainData& data,
                                             const TrainConfig& cfg);

/// Mean squared error of EVAL predictions, batched. Uses the model's
/// qat_ranges with `plan` when both are given.
double evaluate_mse(const FloatModel& model, const std::vector<Matrix>& windows,
                    const std::vector<double>& targets, const CascadePlan* plan = nullptr);

/// EVAL predictions (first output) for every window.
std::vector<double> predict(const FloatModel& model, const std::vector<Matrix>& windows,
                            std::size_t batch_size = 256);

}  // namespace mpq
