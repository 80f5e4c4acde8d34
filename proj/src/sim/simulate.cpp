#include "deepap/sim/simulate.h"

#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

#include "deepap/csv.h"
#include "deepap/errors.h"
#include "deepap/models/zoo.h"
#include "deepap/rng.h"

namespace deepap::sim {

std::string to_string(DgpModel m) { return m == DgpModel::linear ? "linear" : "nonlinear"; }

DgpModel parse_dgp_model(const std::string& s) {
  if (s == "linear") return DgpModel::linear;
  if (s == "nonlinear") return DgpModel::nonlinear;
  throw ConfigError("unknown DGP model '" + s + "' (expected linear or nonlinear)");
}

void DgpSpec::validate() const {
  if (n_assets < 2) throw ConfigError("simulation needs at least 2 assets for the cross-sectional rank map");
  if (n_months < 1) throw ConfigError("simulation needs at least 1 month");
  if (n_chars < 3) throw ConfigError("simulated returns use 3 characteristics; n_chars must be >= 3");
  if (n_macro < 1) throw ConfigError("simulated returns use 1 macro series; n_macro must be >= 1");
  if (!(noise_scale > 0.0) || !std::isfinite(noise_scale)) throw ConfigError("noise_scale must be positive");
  if (!(std::abs(persistence) < 1.0)) throw ConfigError("macro persistence must lie in (-1, 1)");
  if (!(std::abs(char_persistence) < 1.0)) throw ConfigError("characteristic persistence must lie in (-1, 1)");
  if (!(target_r2 > 0.0 && target_r2 < 1.0)) throw ConfigError("target_r2 must lie in (0, 1)");
}

namespace {

double raw_signal(DgpModel model, const std::vector<double>& c, double x1) {
  if (model == DgpModel::linear) return c[0] + c[1] + x1 * c[2];
  const double s = c[2] * x1;
  const double sign = s > 0.0 ? 1.0 : (s < 0.0 ? -1.0 : 0.0);
  return c[0] * c[0] + 1.5 * c[0] * c[1] + 0.3 * sign;
}

}  // namespace

double signal_second_moment(const DgpSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_assets;
  double m2 = 0.0, m4 = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double v = 2.0 * static_cast<double>(j) / static_cast<double>(n - 1) - 1.0;
    m2 += v * v;
    m4 += v * v * v * v;
  }
  m2 /= static_cast<double>(n);
  m4 /= static_cast<double>(n);
  if (spec.model == DgpModel::linear) return 3.0 * m2;
  const double nonzero = n % 2 == 1 ? 1.0 - 1.0 / static_cast<double>(n) : 1.0;
  return m4 + 2.25 * m2 * m2 + 0.09 * nonzero;
}

double signal_amplitude(const DgpSpec& spec) {
  const double ratio = spec.target_r2 / (1.0 - spec.target_r2);
  return std::sqrt(ratio * kReferenceNoise * kReferenceNoise / signal_second_moment(spec));
}

double oracle_r2(const DgpSpec& spec) {
  const double a = signal_amplitude(spec);
  const double s = a * a * signal_second_moment(spec);
  return s / (s + spec.noise_scale * spec.noise_scale);
}

SimulatedPanel generate_panel(const DgpSpec& spec) {
  spec.validate();
  const std::size_t N = spec.n_assets, T = spec.n_months + 1, Pc = spec.n_chars, Px = spec.n_macro;
  Rng char_rng(derive_seed(spec.seed, 1)), macro_rng(derive_seed(spec.seed, 2)), noise_rng(derive_seed(spec.seed, 3));

  SimulatedPanel out;
  out.amplitude = signal_amplitude(spec);
  auto& p = out.panel;
  const data::MonthIndex start = 2000 * 12;
  for (std::size_t t = 0; t < T; ++t) p.months.push_back(start + static_cast<data::MonthIndex>(t));
  const int digits = static_cast<int>(std::to_string(N - 1).size());
  for (std::size_t i = 0; i < N; ++i) {
    std::string id = std::to_string(i);
    p.assets.push_back("S" + std::string(static_cast<std::size_t>(digits) - id.size(), '0') + id);
  }
  for (std::size_t k = 0; k < Pc; ++k) p.char_names.push_back("c_" + std::to_string(k + 1));
  for (std::size_t j = 0; j < Px; ++j) p.macro_names.push_back("x_" + std::to_string(j + 1));

  // Macro: stationary unit-variance AR(1).
  const double rho = spec.persistence, rho_c = spec.char_persistence;
  const double shock = std::sqrt(1.0 - rho * rho), shock_c = std::sqrt(1.0 - rho_c * rho_c);
  std::vector<double> x(Px);
  for (auto& v : x) v = standard_normal(macro_rng);
  for (std::size_t t = 0; t < T; ++t) {
    if (t > 0) {
      for (auto& v : x) v = rho * v + shock * standard_normal(macro_rng);
    }
    std::vector<double> row{1.0};
    row.insert(row.end(), x.begin(), x.end());
    p.macro.push_back(std::move(row));
  }

  // Latent characteristics, rank-mapped per month.
  std::vector<std::vector<double>> latent(N, std::vector<double>(Pc));
  for (auto& a : latent) {
    for (auto& v : a) v = standard_normal(char_rng);
  }
  std::vector<std::vector<std::vector<double>>> chars(T, std::vector<std::vector<double>>(N, std::vector<double>(Pc)));
  for (std::size_t t = 0; t < T; ++t) {
    if (t > 0) {
      for (auto& a : latent) {
        for (auto& v : a) v = rho_c * v + shock_c * standard_normal(char_rng);
      }
    }
    std::vector<double> cross(N);
    for (std::size_t k = 0; k < Pc; ++k) {
      for (std::size_t i = 0; i < N; ++i) cross[i] = latent[i][k];
      const auto mapped = data::rank_map(cross);
      for (std::size_t i = 0; i < N; ++i) chars[t][i][k] = mapped[i];
    }
  }

  // Noise drawn month-major so the stream does not depend on row order.
  std::vector<std::vector<double>> noise(T, std::vector<double>(N, 0.0));
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t i = 0; i < N; ++i) noise[t][i] = standard_normal(noise_rng);
  }

  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t t = 0; t < T; ++t) {
      data::PanelRow r;
      r.asset = i;
      r.month = t;
      r.chars = chars[t][i];
      r.missing.assign(Pc, 0);
      if (t > 0) {
        const double mean = out.amplitude * raw_signal(spec.model, chars[t - 1][i], p.macro[t - 1][1]);
        r.oracle = mean;
        r.ret = mean + spec.noise_scale * noise[t][i];
      }
      p.rows.push_back(std::move(r));
    }
  }
  p.reindex();
  return out;
}

data::PanelDataset generate_memory_panel(const MemoryTaskSpec& spec) {
  if (spec.n_assets < 1 || spec.n_months <= spec.lag + 1) throw ConfigError("memory task needs n_months > lag + 1");
  if (!(spec.noise_scale >= 0.0)) throw ConfigError("memory task noise_scale must be non-negative");
  const std::size_t N = spec.n_assets, T = spec.n_months + 1;
  Rng char_rng(derive_seed(spec.seed, 1)), noise_rng(derive_seed(spec.seed, 3));
  data::PanelDataset p;
  for (std::size_t t = 0; t < T; ++t) p.months.push_back(2000 * 12 + static_cast<data::MonthIndex>(t));
  const int digits = static_cast<int>(std::to_string(N - 1).size());
  for (std::size_t i = 0; i < N; ++i) {
    std::string id = std::to_string(i);
    p.assets.push_back("S" + std::string(static_cast<std::size_t>(digits) - id.size(), '0') + id);
  }
  p.char_names = {"c_1"};
  p.macro.assign(T, std::vector<double>{1.0});
  std::vector<std::vector<double>> c(T, std::vector<double>(N)), noise(T, std::vector<double>(N, 0.0));
  for (auto& month : c) {
    for (auto& v : month) v = standard_normal(char_rng);
  }
  for (std::size_t t = 1; t < T; ++t) {
    for (auto& v : noise[t]) v = standard_normal(noise_rng);
  }
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t t = 0; t < T; ++t) {
      data::PanelRow r;
      r.asset = i;
      r.month = t;
      r.chars = {c[t][i]};
      r.missing = {0};
      if (t > 0) {
        const double mean = t >= spec.lag + 1 ? c[t - 1 - spec.lag][i] : 0.0;
        r.oracle = mean;
        r.ret = mean + spec.noise_scale * noise[t][i];
      }
      p.rows.push_back(std::move(r));
    }
  }
  p.reindex();
  return p;
}

eval::ForecastPanel oracle_forecast(const data::ExampleSet& set, const std::string& slice) {
  std::vector<double> pred;
  pred.reserve(set.size());
  const auto& panel = set.panel();
  for (const auto& e : set.examples()) {
    const auto o = panel.oracle_target(e.last_row);
    if (!o) {
      throw DataError("panel has no oracle mean for " + panel.assets[e.asset] + " after " +
                      data::format_month(panel.months[e.month]));
    }
    pred.push_back(*o);
  }
  return eval::make_forecast_panel("Oracle", slice, set, pred);
}

std::vector<StudyModel> default_study_models() {
  using models::Arch;
  std::vector<StudyModel> out;
  auto add = [&](Arch arch, auto&& tweak) {
    StudyModel m;
    m.arch = arch;
    m.hyper = models::default_hyper(arch, 0);
    m.train.learning_rate = 2e-3;
    m.train.batch_size = 128;
    m.train.max_epochs = 20;
    m.train.patience = 4;
    m.train.dropout_rate = 0.1;
    tweak(m);
    out.push_back(std::move(m));
  };
  add(Arch::OLS, [](StudyModel&) {});
  add(Arch::MLP, [](StudyModel& m) { m.hyper.hidden = {32, 16}; });
  add(Arch::MLP_Residual, [](StudyModel& m) {
    m.hyper.residual_width = 32;
    m.hyper.residual_blocks = 1;
  });
  add(Arch::RNN, [](StudyModel& m) { m.hyper.state_size = 16; });
  add(Arch::RNN_Attention, [](StudyModel& m) { m.hyper.state_size = 16; });
  add(Arch::GRU, [](StudyModel& m) { m.hyper.state_size = 16; });
  add(Arch::LSTM, [](StudyModel& m) { m.hyper.state_size = 16; });
  return out;
}

StudyResult run_simulation_study(const StudyConfig& config, const std::function<void(const StudyCell&)>& progress) {
  if (config.reps < 1) throw ConfigError("simulation study needs reps >= 1");
  if (config.window < 1) throw ConfigError("simulation study window must be >= 1");
  config.dgp.validate();
  StudyResult result;
  for (std::size_t rep = 0; rep < config.reps; ++rep) {
    for (std::size_t g = 0; g < config.dgps.size(); ++g) {
      DgpSpec spec = config.dgp;
      spec.model = config.dgps[g];
      spec.seed = derive_seed(config.seed, rep * 16 + g);
      auto sim = generate_panel(spec);
      auto store = data::make_store(std::move(sim.panel));
      const auto months = data::split_temporal(*store->panel, config.split);
      const auto splits = data::make_splits(store, months, config.window);

      for (std::size_t m = 0; m < config.models.size(); ++m) {
        const auto& sm = config.models[m];
        const auto name = models::to_string(sm.arch);
        const auto t0 = std::chrono::steady_clock::now();
        models::Hyper hyper = sm.hyper;
        hyper.input_width = store->width;
        hyper.seq_len = models::is_sequence_arch(sm.arch) ? config.window : 1;
        train::TrainConfig tc = sm.train;
        tc.seed = derive_seed(spec.seed, 100 + m);
        train::TrainResult fit;
        try {
          fit = train::train(models::init_model(sm.arch, hyper, derive_seed(spec.seed, 200 + m)), splits, tc);
        } catch (const NumericError& e) {
          throw NumericError(name + ", repetition " + std::to_string(rep + 1) + " (" + to_string(spec.model) +
                             "): " + e.what());
        }
        const auto is = train::predict(fit.model, splits.train);
        const auto oos = train::predict(fit.model, splits.test);
        StudyCell cell{spec.model,
                       name,
                       rep,
                       eval::r2_oos(is, splits.train.all_targets()),
                       eval::r2_oos(oos, splits.test.all_targets()),
                       fit.log.best_epoch,
                       std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
        result.cells.push_back(cell);
        if (progress) progress(cell);
      }
      StudyCell oracle{spec.model,
                       "Oracle",
                       rep,
                       eval::r2_oos(oracle_forecast(splits.train, "IS")),
                       eval::r2_oos(oracle_forecast(splits.test, "OOS")),
                       0,
                       0.0};
      result.cells.push_back(oracle);
      if (progress) progress(oracle);
    }
  }
  return result;
}

namespace {

double mean_of(const std::vector<StudyCell>& cells, DgpModel dgp, const std::string& model, bool oos) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& c : cells) {
    if (c.dgp == dgp && c.model == model) {
      s += oos ? c.oos_r2 : c.is_r2;
      ++n;
    }
  }
  if (n == 0) throw DataError("study has no results for " + model + " on the " + to_string(dgp) + " DGP");
  return s / static_cast<double>(n);
}

}  // namespace

double StudyResult::mean_oos(DgpModel dgp, const std::string& model) const { return mean_of(cells, dgp, model, true); }
double StudyResult::mean_is(DgpModel dgp, const std::string& model) const { return mean_of(cells, dgp, model, false); }

eval::R2Table StudyResult::table(const std::vector<std::string>& model_order) const {
  std::vector<eval::R2Entry> entries;
  std::vector<DgpModel> dgps;
  for (const auto& c : cells) {
    if (std::find(dgps.begin(), dgps.end(), c.dgp) == dgps.end()) dgps.push_back(c.dgp);
  }
  for (const auto& model : model_order) {
    for (auto d : dgps) {
      if (std::none_of(cells.begin(), cells.end(), [&](const StudyCell& c) { return c.dgp == d && c.model == model; })) {
        continue;
      }
      entries.push_back({model, to_string(d), mean_is(d, model), mean_oos(d, model)});
    }
  }
  return eval::build_r2_table(entries, model_order);
}

std::string StudyResult::to_csv() const {
  std::ostringstream os;
  os << "dgp,model,rep,is_r2,oos_r2,best_epoch\n";
  for (const auto& c : cells) {
    os << to_string(c.dgp) << ',' << c.model << ',' << c.rep + 1 << ',' << csv::number_text(c.is_r2) << ','
       << csv::number_text(c.oos_r2) << ',' << c.best_epoch << '\n';
  }
  return os.str();
}

}  // namespace deepap::sim
