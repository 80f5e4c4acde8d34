#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "deepap/data/panel.h"
#include "deepap/data/split.h"
#include "deepap/eval/stats.h"
#include "deepap/models/model.h"
#include "deepap/train/trainer.h"

namespace deepap::sim {

enum class DgpModel { linear, nonlinear };

std::string to_string(DgpModel m);
DgpModel parse_dgp_model(const std::string& s);

// Returns r_{i,t+1} = a * g(c_{i,t}, x_t) + noise_scale * e. g uses c_1..c_3
// and x_1:
//   linear     g = c_1 + c_2 + x_1 c_3
//   nonlinear  g = c_1^2 + 1.5 c_1 c_2 + 0.3 sign(c_3 x_1)
// The amplitude a is fixed so that the oracle's population R^2 equals
// target_r2 when noise_scale = kReferenceNoise; other noise levels move the
// R^2 accordingly.
struct DgpSpec {
  std::size_t n_assets = 200;
  std::size_t n_months = 180;  // return observations; the panel holds one more month
  std::size_t n_chars = 4;
  std::size_t n_macro = 2;
  DgpModel model = DgpModel::nonlinear;
  double noise_scale = 0.1;
  double persistence = 0.95;       // macro AR(1) coefficient
  double char_persistence = 0.9;   // latent characteristic AR(1) coefficient
  double target_r2 = 0.075;
  std::uint64_t seed = 0;

  // Throws ConfigError; g needs at least 3 characteristics and 1 macro series.
  void validate() const;
};

inline constexpr double kReferenceNoise = 0.1;

// E[g^2] under the stationary law, using the exact moments of the N-point
// rank grid and unit-variance macro series.
double signal_second_moment(const DgpSpec& spec);
double signal_amplitude(const DgpSpec& spec);
// Population R^2 of the oracle, a^2 E[g^2] / (a^2 E[g^2] + noise_scale^2).
double oracle_r2(const DgpSpec& spec);

struct SimulatedPanel {
  data::PanelDataset panel;  // every row from the second month on carries its oracle mean
  double amplitude = 0.0;
};

SimulatedPanel generate_panel(const DgpSpec& spec);

// Long-memory sequence task: one i.i.d. standard normal characteristic, no
// macro series, and ret_{t+1} = c_{t-lag} + noise_scale * e. Predicting it
// needs a window of more than `lag` steps. Rows whose lagged value falls
// before the panel start carry pure noise.
struct MemoryTaskSpec {
  std::size_t n_assets = 100;
  std::size_t n_months = 120;
  std::size_t lag = 10;
  double noise_scale = 0.5;
  std::uint64_t seed = 0;
};

data::PanelDataset generate_memory_panel(const MemoryTaskSpec& spec);

// The oracle mean for every example of `set`. Throws DataError when a row
// has no oracle value.
eval::ForecastPanel oracle_forecast(const data::ExampleSet& set, const std::string& slice);

// One model of the study: architecture, sizes (input width and window are
// filled in per panel) and training settings.
struct StudyModel {
  models::Arch arch = models::Arch::OLS;
  models::Hyper hyper;
  train::TrainConfig train;
};

struct StudyConfig {
  DgpSpec dgp;  // model and seed are overridden per cell
  std::vector<DgpModel> dgps{DgpModel::linear, DgpModel::nonlinear};
  std::vector<StudyModel> models;
  std::size_t reps = 10;
  std::size_t window = 4;  // steps fed to sequence models; every model sees the same examples
  data::SplitSpec split;
  std::uint64_t seed = 0;
};

// Desk-scale settings for OLS, MLP, MLP_Residual, RNN, RNN_Attention, GRU and
// LSTM.
std::vector<StudyModel> default_study_models();

struct StudyCell {
  DgpModel dgp;
  std::string model;  // architecture name or "Oracle"
  std::size_t rep;
  double is_r2;
  double oos_r2;
  std::size_t best_epoch;
  double seconds;
};

struct StudyResult {
  std::vector<StudyCell> cells;

  // Means over repetitions for every (model, dgp); models in config order
  // then "Oracle".
  eval::R2Table table(const std::vector<std::string>& model_order) const;
  double mean_oos(DgpModel dgp, const std::string& model) const;
  double mean_is(DgpModel dgp, const std::string& model) const;
  std::string to_csv() const;
};

// Per repetition and DGP: simulate, split 80/10/10, train each model with
// validation early stopping, score IS (train slice) and OOS (test slice).
// Training failures are rethrown naming the model and repetition. `progress`
// receives each finished cell.
StudyResult run_simulation_study(const StudyConfig& config,
                                 const std::function<void(const StudyCell&)>& progress = {});

}  // namespace deepap::sim
