#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "deepap/errors.h"
#include "deepap/grad/ops.h"
#include "deepap/models/zoo.h"
#include "deepap/rng.h"
#include "deepap/train/regularization.h"
#include "deepap/train/trainer.h"
#include "panel_builders.h"

using namespace deepap;
using namespace deepap::train;
using grad::Tensor;
using models::Arch;

namespace {

data::DataSplits linear_splits(std::size_t window, double noise = 0.0, std::uint64_t seed = 3,
                               std::size_t assets = 40, std::size_t months = 31) {
  auto store = data::make_store(builders::linear_panel(assets, months, {0.5, -0.3, 0.2}, noise, seed));
  return data::make_splits(store, data::split_temporal(*store->panel, data::SplitSpec{}), window);
}

models::ModelHandle linear_network(std::size_t width, std::uint64_t seed = 1) {
  auto h = models::default_hyper(Arch::MLP, width);
  h.hidden = {};
  return models::init_model(Arch::MLP, h, seed);
}

}  // namespace

// ---- loss ------------------------------------------------------------------------------

TEST(Mse, HandCases) {
  const std::vector<double> t{1, 2};
  EXPECT_EQ(mse(t, t), 0.0);
  EXPECT_EQ(mse(std::vector<double>{0, 0}, t), 2.5);
  EXPECT_THROW(mse(std::vector<double>{}, std::vector<double>{}), DataError);
  EXPECT_THROW(mse(std::vector<double>{1}, t), ShapeError);
  EXPECT_EQ(mse_loss(Tensor::constant({2, 1}, {0, 0}), Tensor::constant({2, 1}, {1, 2})).item(), 2.5);
}

TEST(Mse, TranslationInvariant) {
  const std::vector<double> p{0.25, -1.5, 3.0}, t{1.0, 0.5, 2.0};
  std::vector<double> ps = p, ts = t;
  for (auto& v : ps) v += 7.0;
  for (auto& v : ts) v += 7.0;
  EXPECT_NEAR(mse(ps, ts), mse(p, t), 1e-12);
}

// ---- clipping ------------------------------------------------------------------------

TEST(Clip, RescalesAboveThresholdOnly) {
  std::vector<std::vector<double>> g{{6.0}, {8.0}};
  EXPECT_EQ(clip_gradient(g, 5.0), 10.0);
  EXPECT_NEAR(std::hypot(g[0][0], g[1][0]), 5.0, 1e-15);
  EXPECT_NEAR(g[0][0], 3.0, 1e-15);

  std::vector<std::vector<double>> small{{3.0}, {0.0}};
  clip_gradient(small, 5.0);
  EXPECT_EQ(small[0][0], 3.0);

  std::vector<std::vector<double>> zero{{0.0, 0.0}};
  clip_gradient(zero, 5.0);
  EXPECT_EQ(zero[0][0], 0.0);
  EXPECT_THROW(clip_gradient(zero, 0.0), ConfigError);
}

TEST(Clip, NeverGrowsAndKeepsDirection) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<double>> g(3, std::vector<double>(7));
    for (auto& v : g) {
      for (auto& x : v) x = normal(rng) * (trial % 5 + 1);
    }
    const auto before = g;
    const double norm = clip_gradient(g, 4.0);
    double after_sq = 0.0, dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      for (std::size_t k = 0; k < g[i].size(); ++k) {
        after_sq += g[i][k] * g[i][k];
        dot += g[i][k] * before[i][k];
      }
    }
    EXPECT_LE(std::sqrt(after_sq), std::max(norm, 4.0) * (1 + 1e-15));
    EXPECT_LE(std::sqrt(after_sq), norm * (1 + 1e-15));
    EXPECT_NEAR(dot / (std::sqrt(after_sq) * norm), 1.0, 1e-12);
  }
}

// ---- adam -------------------------------------------------------------------------------

TEST(Adam, ZeroGradientOrZeroRateLeavesParameters) {
  TrainConfig c;
  std::vector<Tensor> p{Tensor::parameter({2}, {1.5, -2.0})};
  AdamState s;
  adam_step(p, {{0.0, 0.0}}, s, c);
  EXPECT_EQ(p[0].at(0), 1.5);
  EXPECT_EQ(p[0].at(1), -2.0);
  c.learning_rate = 0.0;
  adam_step(p, {{3.0, -1.0}}, s, c);
  EXPECT_EQ(p[0].at(0), 1.5);
  EXPECT_EQ(p[0].at(1), -2.0);
}

TEST(Adam, FirstStepHandCase) {
  TrainConfig c;
  c.learning_rate = 0.1;
  std::vector<Tensor> p{Tensor::parameter({1}, {1.0})};
  AdamState s;
  adam_step(p, {{2.0}}, s, c);
  // m_hat = 2, v_hat = 4, so the step is -0.1 * 2 / (2 + 1e-8).
  EXPECT_NEAR(p[0].item() - 1.0, -0.0999999995, 1e-15);
  EXPECT_EQ(s.step, 1u);
  EXPECT_THROW(adam_step(p, {{1.0, 2.0}}, s, c), ShapeError);
}

// ---- dropout and layer norm ------------------------------------------------------------

TEST(Dropout, EvalAndZeroRateAreIdentity) {
  Rng rng(1);
  auto h = Tensor::constant({3, 4}, std::vector<double>(12, 0.7));
  auto e = apply_dropout(h, 0.5, Mode::eval, rng);
  EXPECT_EQ(std::memcmp(e.values().data(), h.values().data(), 12 * sizeof(double)), 0);
  auto z = apply_dropout(h, 0.0, Mode::train, rng);
  EXPECT_EQ(std::memcmp(z.values().data(), h.values().data(), 12 * sizeof(double)), 0);
  EXPECT_THROW(apply_dropout(h, 1.0, Mode::train, rng), ConfigError);
  EXPECT_THROW(apply_dropout(h, -0.1, Mode::eval, rng), ConfigError);
}

TEST(Dropout, InvertedScalingPreservesTheMean) {
  Rng rng(2024);
  auto h = Tensor::full({100000}, 1.0);
  auto d = apply_dropout(h, 0.5, Mode::train, rng);
  double sum = 0.0;
  std::size_t zeros = 0;
  for (double v : d.values()) {
    sum += v;
    zeros += v == 0.0;
    EXPECT_TRUE(v == 0.0 || v == 2.0);
  }
  EXPECT_GE(sum / 1e5, 0.98);
  EXPECT_LE(sum / 1e5, 1.02);
  EXPECT_GT(zeros, 0u);
}

TEST(LayerNorm, TwoPointAndStandardized) {
  auto y = train::layer_norm(Tensor::constant({1, 2}, {1, 3}));
  EXPECT_NEAR(y.at(0), -1.0, 1e-9);
  EXPECT_NEAR(y.at(1), 1.0, 1e-9);
  auto again = train::layer_norm(y);
  EXPECT_NEAR(again.at(0), -1.0, 1e-9);
  auto constant = train::layer_norm(Tensor::full({1, 4}, 2.0));
  for (double v : constant.values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, RandomVectorMoments) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> normal(3.0, 2.0);
  std::vector<double> v(32);
  for (auto& x : v) x = normal(rng);
  auto y = train::layer_norm(Tensor::constant({1, 32}, v));
  double mean = 0.0, var = 0.0;
  for (double x : y.values()) mean += x / 32.0;
  for (double x : y.values()) var += (x - mean) * (x - mean) / 32.0;
  EXPECT_NEAR(mean, 0.0, 1e-10);
  EXPECT_NEAR(var, 1.0, 1e-8);
}

// ---- train -----------------------------------------------------------------------------

TEST(Train, ConfigValidation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.dropout_rate = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.beta2 = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.clip_threshold = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, LinearNetworkFitsNoiselessLinearData) {
  auto splits = linear_splits(1);
  TrainConfig c;
  c.learning_rate = 0.01;
  c.max_epochs = 200;
  c.patience = 200;
  c.dropout_rate = 0.0;
  c.batch_size = 64;
  auto r = train::train(linear_network(splits.train.width()), splits, c);
  double best_train = 1e9;
  for (const auto& e : r.log.epochs) best_train = std::min(best_train, e.train_mse);
  EXPECT_LT(best_train, 1e-6);
  EXPECT_LE(r.log.epochs.size(), 200u);
}

TEST(Train, SameSeedIsBitIdentical) {
  auto splits = linear_splits(3, 0.1);
  TrainConfig c;
  c.max_epochs = 4;
  c.batch_size = 32;
  c.seed = 11;
  auto h = models::default_hyper(Arch::GRU, splits.train.width(), 3);
  h.state_size = 4;
  auto m = models::init_model(Arch::GRU, h, 5);
  auto a = train::train(m, splits, c), b = train::train(m, splits, c);
  EXPECT_TRUE(a.model == b.model);
  ASSERT_EQ(a.log.epochs.size(), b.log.epochs.size());
  for (std::size_t i = 0; i < a.log.epochs.size(); ++i) {
    EXPECT_EQ(a.log.epochs[i].train_mse, b.log.epochs[i].train_mse);
    EXPECT_EQ(a.log.epochs[i].val_mse, b.log.epochs[i].val_mse);
  }
}

TEST(Train, EarlyStoppingReturnsTheBestValidationEpoch) {
  auto splits = linear_splits(1, 0.5, 9, 20, 41);
  TrainConfig c;
  c.learning_rate = 0.05;
  c.max_epochs = 60;
  c.patience = 3;
  c.batch_size = 16;
  auto h = models::default_hyper(Arch::MLP, splits.train.width());
  auto r = train::train(models::init_model(Arch::MLP, h, 2), splits, c);
  ASSERT_FALSE(r.log.epochs.empty());
  double min_val = 1e9;
  for (const auto& e : r.log.epochs) min_val = std::min(min_val, e.val_mse);
  EXPECT_EQ(r.log.epochs[r.log.best_epoch - 1].val_mse, min_val);
  EXPECT_EQ(mse(predict(r.model, splits.validation), splits.validation.all_targets()), min_val);
  // Stopped `patience` epochs after the best one, or ran out of epochs.
  EXPECT_TRUE(r.log.epochs.size() == r.log.best_epoch + c.patience || r.log.epochs.size() == c.max_epochs);
}

TEST(Train, WithoutRestoreBestKeepsTheFinalEpoch) {
  auto splits = linear_splits(1, 0.5, 9, 20, 41);
  TrainConfig c;
  c.learning_rate = 0.05;
  c.max_epochs = 25;
  c.patience = 1;
  c.batch_size = 16;
  c.restore_best = false;
  auto r = train::train(models::init_model(Arch::MLP, models::default_hyper(Arch::MLP, splits.train.width()), 2),
                        splits, c);
  ASSERT_EQ(r.log.epochs.size(), c.max_epochs);
  EXPECT_EQ(r.log.best_epoch, c.max_epochs);
  EXPECT_EQ(mse(predict(r.model, splits.validation), splits.validation.all_targets()), r.log.epochs.back().val_mse);
}

TEST(Train, NeverReadsTheTestSlice) {
  auto splits = linear_splits(2, 0.1);
  TrainConfig c;
  c.max_epochs = 3;
  for (Arch arch : {Arch::OLS, Arch::MLP, Arch::LSTM}) {
    const std::size_t before = splits.test.reads();
    auto h = models::default_hyper(arch, splits.train.width(), 2);
    h.state_size = 4;
    train::train(models::init_model(arch, h, 1), splits, c);
    EXPECT_EQ(splits.test.reads(), before) << models::to_string(arch);
    EXPECT_GT(splits.train.reads(), 0u);
  }
}

TEST(Train, MatchesAPlainAdamLoop) {
  auto splits = linear_splits(1, 0.2);
  TrainConfig c;
  c.max_epochs = 5;
  c.patience = 100;
  c.batch_size = 48;
  c.dropout_rate = 0.0;
  c.seed = 21;
  auto h = models::default_hyper(Arch::MLP, splits.train.width());
  h.hidden = {6};
  const auto initial = models::init_model(Arch::MLP, h, 4);
  auto r = train::train(initial, splits, c);

  // Reference: shuffle, minibatch MSE, clip, Adam, written out directly.
  auto model = initial;
  auto leaves = model.trainable();
  AdamState s;
  Rng rng(derive_seed(c.seed, 1));
  const std::size_t n = splits.train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < c.max_epochs; ++epoch) {
    shuffle(std::span<std::size_t>(order), rng);
    double total = 0.0;
    for (std::size_t b = 0; b < n;) {
      std::size_t e = std::min(n, b + c.batch_size);
      if (n - e == 1) e = n;
      std::span<const std::size_t> idx(order.data() + b, e - b);
      auto x = splits.train.inputs(idx, 0);
      auto y = splits.train.targets(idx);
      auto loss = grad::mean(grad::square(grad::sub(models::forward(model, x), y)));
      auto g = grad::gradients(loss, leaves);
      clip_gradient(g, c.clip_threshold);
      adam_step(leaves, g, s, c);
      total += loss.item() * static_cast<double>(idx.size());
      b = e;
    }
    EXPECT_EQ(r.log.epochs[epoch].train_mse, total / static_cast<double>(n)) << "epoch " << epoch + 1;
  }
}

TEST(Train, OlsUsesTheClosedForm) {
  auto splits = linear_splits(1, 0.3);
  auto r = train::train(models::init_model(Arch::OLS, models::default_hyper(Arch::OLS, 3), 1), splits, {});
  std::vector<std::size_t> all(splits.train.size());
  std::iota(all.begin(), all.end(), 0);
  auto x = splits.train.inputs(all, 0);
  std::vector<double> design;
  for (std::size_t i = 0; i < all.size(); ++i) {
    for (std::size_t k = 0; k < 3; ++k) design.push_back(x.at(i * 3 + k));
    design.push_back(1.0);
  }
  auto theta = models::fit_ols(design, all.size(), 4, splits.train.all_targets());
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(r.model.param("ols.theta").at(k), theta[k]);
  EXPECT_EQ(r.model.param("ols.intercept").item(), theta[3]);
  EXPECT_EQ(r.log.epochs.size(), 1u);
}

TEST(Train, BatchNormalizationUpdatesRunningStatistics) {
  auto splits = linear_splits(1, 0.1);
  TrainConfig c;
  c.max_epochs = 2;
  c.normalization = models::Normalization::batch;
  auto r = train::train(models::init_model(Arch::MLP, models::default_hyper(Arch::MLP, 3), 1), splits, c);
  const auto var = r.model.buffer("mlp.0.norm.var");
  bool moved = false;
  for (double v : var.values()) moved |= v != 1.0;
  EXPECT_TRUE(moved);
  auto a = predict(r.model, splits.validation), b = predict(r.model, splits.validation);
  EXPECT_EQ(a, b);
}

TEST(Train, DivergenceNamesEpochAndBatch) {
  auto splits = linear_splits(1, 0.1);
  TrainConfig c;
  c.learning_rate = 1e300;
  c.max_epochs = 5;
  c.dropout_rate = 0.0;
  try {
    train::train(models::init_model(Arch::MLP, models::default_hyper(Arch::MLP, 3), 1), splits, c);
    FAIL() << "expected divergence";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
  }
}

TEST(TrainLog, CsvExport) {
  TrainLog log;
  log.epochs = {{1, 0.5, 0.75}, {2, 0.25, 0.5}};
  const auto path = std::filesystem::temp_directory_path() / "deepap_trainlog.csv";
  log.write_csv(path);
  std::ifstream is(path);
  std::string header, first;
  std::getline(is, header);
  std::getline(is, first);
  EXPECT_EQ(header, "epoch,train_mse,val_mse");
  EXPECT_EQ(first, "1,0.5,0.75");
  std::filesystem::remove(path);
}
