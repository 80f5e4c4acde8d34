#include "deepap/train/trainer.h"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

#include "deepap/errors.h"
#include "deepap/grad/ops.h"
#include "deepap/models/zoo.h"
#include "deepap/rng.h"

namespace deepap::train {

using grad::Tensor;
using models::Arch;
using models::ModelHandle;

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("adam betas must lie in (0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
  if (!(clip_threshold > 0.0)) throw ConfigError("clip_threshold must be positive");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ConfigError("bn_momentum must lie in (0, 1]");
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "epoch,train_mse,val_mse\n" << std::setprecision(17);
  for (const auto& e : epochs) os << e.epoch << ',' << e.train_mse << ',' << e.val_mse << '\n';
}

double mse(std::span<const double> p, std::span<const double> t) {
  if (p.empty()) throw DataError("mse of an empty sample");
  if (p.size() != t.size()) throw ShapeError("mse: prediction and target counts differ");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
  return s / static_cast<double>(p.size());
}

Tensor mse_loss(const Tensor& predictions, const Tensor& targets) {
  if (predictions.shape() != targets.shape()) {
    throw ShapeError("mse_loss: " + grad::shape_string(predictions.shape()) + " vs " +
                     grad::shape_string(targets.shape()));
  }
  return grad::mean(grad::square(grad::sub(predictions, targets)));
}

double clip_gradient(std::vector<std::vector<double>>& grads, double threshold) {
  if (!(threshold > 0.0)) throw ConfigError("clip threshold must be positive");
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double v : g) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > threshold) {
    const double s = threshold / norm;
    for (auto& g : grads) {
      for (double& v : g) v *= s;
    }
  }
  return norm;
}

void adam_step(std::span<Tensor> params, const std::vector<std::vector<double>>& grads, AdamState& state,
               const TrainConfig& c) {
  if (grads.size() != params.size()) throw ShapeError("adam_step: gradient count differs from parameter count");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: state does not match parameters");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(c.beta1, t), c2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (grads[i].size() != values.size() || m.size() != values.size()) {
      throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i));
    }
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = grads[i][k];
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
      values[k] -= c.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + c.epsilon);
    }
  }
}

std::size_t input_steps(const ModelHandle& model) {
  return models::is_sequence_arch(model.arch()) ? model.hyper().seq_len : 0;
}

std::vector<double> predict(const ModelHandle& model, const data::ExampleSet& set, std::size_t batch_size) {
  std::vector<double> out;
  out.reserve(set.size());
  const std::size_t steps = input_steps(model);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    idx.resize(std::min(batch_size, set.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor y = models::forward(model, set.inputs(idx, steps));
    out.insert(out.end(), y.values().begin(), y.values().end());
  }
  return out;
}

namespace {

TrainResult train_ols(ModelHandle model, const data::DataSplits& splits) {
  const auto start = std::chrono::steady_clock::now();
  const auto& set = splits.train;
  std::vector<std::size_t> all(set.size());
  std::iota(all.begin(), all.end(), 0);
  const Tensor x = set.inputs(all, 0);
  const std::size_t n = set.size(), w = set.width();
  const bool intercept = model.hyper().ols_intercept;
  const std::size_t cols = w + (intercept ? 1 : 0);
  std::vector<double> design(n * cols);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < w; ++k) design[i * cols + k] = x.at(i * w + k);
    if (intercept) design[i * cols + w] = 1.0;
  }
  const auto targets = set.all_targets();
  auto theta = models::fit_ols(design, n, cols, targets);
  model.set_param("ols.theta", Tensor::constant({w, 1}, std::vector<double>(theta.begin(), theta.begin() + w)));
  model.set_param("ols.intercept", Tensor::constant({1}, {intercept ? theta[w] : 0.0}));

  TrainResult r{model, {}};
  r.log.epochs.push_back({1, mse(predict(model, set), targets),
                          mse(predict(model, splits.validation), splits.validation.all_targets())});
  r.log.best_epoch = 1;
  r.log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace

TrainResult train(const ModelHandle& initial, const data::DataSplits& splits, const TrainConfig& config) {
  config.validate();
  if (splits.train.empty() || splits.validation.empty()) throw DataError("train: empty train or validation slice");
  ModelHandle model = initial;
  if (model.arch() == Arch::OLS) return train_ols(model, splits);
  if (config.normalization != models::Normalization::none && model.hyper().normalization != config.normalization) {
    model.set_normalization(config.normalization);
  }

  const auto start = std::chrono::steady_clock::now();
  const std::size_t steps = input_steps(model);
  Rng shuffle_rng(derive_seed(config.seed, 1));
  Rng dropout_rng(derive_seed(config.seed, 2));
  const auto val_targets = splits.validation.all_targets();

  std::vector<std::string> names;
  for (const auto& [name, _] : model.params()) names.push_back(name);
  std::vector<Tensor> leaves = model.trainable();
  AdamState adam;

  TrainResult best{model, {}};
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  const std::size_t n = splits.train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle(std::span<std::size_t>(order), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t begin = 0; begin < n; ++batch_no) {
      std::size_t end = std::min(n, begin + config.batch_size);
      // A trailing single example would leave batch statistics undefined.
      if (n - end == 1) end = n;
      std::span<const std::size_t> idx(order.data() + begin, end - begin);
      try {
        models::ForwardContext ctx;
        ctx.training = true;
        ctx.dropout_rate = config.dropout_rate;
        ctx.rng = &dropout_rng;
        const Tensor pred = models::forward(model, splits.train.inputs(idx, steps), ctx);
        const Tensor loss = mse_loss(pred, splits.train.targets(idx));
        auto grads = grad::gradients(loss, leaves);
        clip_gradient(grads, config.clip_threshold);
        adam_step(leaves, grads, adam, config);
        for (const auto& [site, stats] : ctx.batch_stats) {
          auto mean = model.mutable_buffer(site + ".mean").mutable_values();
          auto var = model.mutable_buffer(site + ".var").mutable_values();
          for (std::size_t k = 0; k < mean.size(); ++k) {
            mean[k] = (1.0 - config.bn_momentum) * mean[k] + config.bn_momentum * stats.first[k];
            var[k] = (1.0 - config.bn_momentum) * var[k] + config.bn_momentum * stats.second[k];
          }
        }
        loss_sum += loss.item() * static_cast<double>(idx.size());
      } catch (const NumericError& e) {
        throw NumericError("training " + models::to_string(model.arch()) + " diverged at epoch " +
                           std::to_string(epoch) + ", batch " + std::to_string(batch_no + 1) + ": " + e.what());
      }
      begin = end;
    }
    for (const auto& p : leaves) {
      for (double v : p.values()) {
        if (!std::isfinite(v)) {
          throw NumericError("training " + models::to_string(model.arch()) + " diverged at epoch " +
                             std::to_string(epoch) + ": non-finite parameter");
        }
      }
    }
    double val = 0.0;
    try {
      val = mse(predict(model, splits.validation), val_targets);
    } catch (const NumericError& e) {
      throw NumericError("validation diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    best.log.epochs.push_back({epoch, loss_sum / static_cast<double>(n), val});
    if (!config.restore_best) {
      best.model = model;
      best.log.best_epoch = epoch;
    } else if (val < best_val) {
      best_val = val;
      best.model = model;
      best.log.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  best.log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return best;
}

}  // namespace deepap::train
