#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "deepap/data/split.h"
#include "deepap/grad/tensor.h"
#include "deepap/models/model.h"

namespace deepap::train {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 100;
  std::size_t patience = 5;
  double dropout_rate = 0.1;
  double clip_threshold = 5.0;
  models::Normalization normalization = models::Normalization::none;
  // Running-statistics update weight for batch normalization buffers.
  double bn_momentum = 0.1;
  // false: run all max_epochs and keep the final weights (no early stopping).
  bool restore_best = true;
  std::uint64_t seed = 0;

  // Throws ConfigError for out-of-range values.
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_mse = 0.0;
  double val_mse = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double wall_seconds = 0.0;

  // Columns epoch,train_mse,val_mse.
  void write_csv(const std::filesystem::path& path) const;
};

// Mean squared error over n >= 1 pairs.
double mse(std::span<const double> predictions, std::span<const double> targets);
// Recorded version for training: mean over all entries of (pred - target)^2.
grad::Tensor mse_loss(const grad::Tensor& predictions, const grad::Tensor& targets);

// Rescales every gradient by threshold / ||g|| when the global norm over all
// of them exceeds `threshold`. Returns the norm before clipping.
double clip_gradient(std::vector<std::vector<double>>& grads, double threshold);

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;
};

// One bias-corrected Adam update applied in place to leaf `params`. An empty
// state is sized on first use.
void adam_step(std::span<grad::Tensor> params, const std::vector<std::vector<double>>& grads, AdamState& state,
               const TrainConfig& config);

struct TrainResult {
  models::ModelHandle model;
  TrainLog log;
};

// Fits `model` on splits.train, selecting the epoch with the lowest
// validation MSE unless restore_best is off. OLS models use the closed form. splits.test is never read.
// Throws NumericError, naming epoch and batch, when training diverges.
TrainResult train(const models::ModelHandle& model, const data::DataSplits& splits, const TrainConfig& config);

// Inference-mode forecasts for every example of `set`, in example order.
std::vector<double> predict(const models::ModelHandle& model, const data::ExampleSet& set,
                            std::size_t batch_size = 1024);

// Steps of the example window the model consumes (0 for feed-forward models).
std::size_t input_steps(const models::ModelHandle& model);

}  // namespace deepap::train
