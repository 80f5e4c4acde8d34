#include "deepap/cli/commands.h"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <regex>
#include <set>
#include <sstream>

#include "deepap/backtest/portfolio.h"
#include "deepap/errors.h"
#include "deepap/eval/stats.h"
#include "deepap/rng.h"
#include "deepap/sim/simulate.h"
#include "deepap/train/trainer.h"

namespace deepap::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifest = "manifest.txt";
constexpr const char* kConfig = "config.json";

struct Run {
  fs::path dir;
  RunConfig config;
  RunManifest manifest;
};

std::string read_text(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw DataError("cannot read " + p.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  os << text;
  if (!os) throw DataError("cannot write " + p.string());
}

void note(const Options& opts, const std::string& msg) {
  if (opts.log) *opts.log << msg << '\n';
}

Run create_run(const Options& opts, RunConfig config) {
  std::error_code ec;
  fs::create_directories(opts.out, ec);
  if (ec) throw DataError("cannot create output directory " + opts.out.string() + ": " + ec.message());
  const auto runs = list_runs(opts.out);
  std::size_t next = 1;
  if (!runs.empty()) next = std::stoul(runs.back().filename().string().substr(4)) + 1;
  char name[32];
  std::snprintf(name, sizeof name, "run-%03zu", next);
  Run run{opts.out / name, std::move(config), {}};
  if (!fs::create_directory(run.dir, ec) || ec) {
    throw DataError("cannot create run directory " + run.dir.string() + (ec ? ": " + ec.message() : ""));
  }
  write_text(run.dir / kConfig, run.config.to_json().dump(2) + "\n");
  run.manifest.config_sha256 = run.config.digest();
  write_text(run.dir / kManifest, run.manifest.header_text());
  note(opts, "created " + run.dir.string());
  return run;
}

Run open_run(const Options& opts) {
  fs::path dir;
  if (opts.run) {
    dir = *opts.run;
  } else {
    const auto runs = list_runs(opts.out);
    if (runs.empty()) throw DataError("no run under " + opts.out.string() + "; run simulate or train first");
    dir = runs.back();
  }
  if (!fs::is_directory(dir)) throw DataError("run directory " + dir.string() + " does not exist");
  Run run{dir, {}, RunManifest::load(dir / kManifest)};
  nlohmann::json stored;
  try {
    stored = nlohmann::json::parse(read_text(dir / kConfig));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(dir.string() + "/" + kConfig + ": " + e.what());
  }
  run.config = parse_config(stored);
  if (run.config.digest() != run.manifest.config_sha256) {
    throw DataError(dir.string() + ": config.json does not match the manifest digest");
  }
  if (opts.config || opts.seed) {
    RunConfig requested = opts.config ? load_config(*opts.config) : run.config;
    if (opts.seed) requested.seed = *opts.seed;
    if (requested.digest() != run.manifest.config_sha256) {
      throw ConfigError("config/seed differ from the config of " + dir.string() + "; start a new run instead");
    }
  }
  return run;
}

void begin_stage(const Run& run, const std::string& stage) {
  if (run.manifest.stage(stage)) {
    throw ConfigError(run.dir.filename().string() + " already has a " + stage +
                      " stage; runs are append-only, start a new run");
  }
}

// Upstream outputs must exist unchanged.
const StageRecord& require_stage(const Run& run, const std::string& stage) {
  const auto* s = run.manifest.stage(stage);
  if (!s) throw DataError(run.dir.filename().string() + " has no " + stage + " stage; run it first");
  const auto problems = verify_files(run.dir, s->files);
  if (!problems.empty()) throw DataError(run.dir.filename().string() + ": " + problems.front());
  return *s;
}

class StageWriter {
 public:
  StageWriter(Run& run, std::string name) : run_(run), start_(std::chrono::steady_clock::now()) {
    record_.name = std::move(name);
  }
  fs::path path(const std::string& relative) {
    relatives_.push_back(relative);
    const auto p = run_.dir / relative;
    fs::create_directories(p.parent_path());
    return p;
  }
  void text(const std::string& relative, const std::string& content) { write_text(path(relative), content); }
  void commit() {
    for (const auto& r : relatives_) record_.files.push_back(record_file(run_.dir, r));
    record_.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::ofstream os(run_.dir / kManifest, std::ios::binary | std::ios::app);
    os << RunManifest::stage_text(record_);
    if (!os) throw DataError("cannot append to " + (run_.dir / kManifest).string());
    run_.manifest.stages.push_back(record_);
  }

 private:
  Run& run_;
  std::chrono::steady_clock::time_point start_;
  StageRecord record_;
  std::vector<std::string> relatives_;
};

data::PanelDataset load_run_panel(const Run& run) {
  const auto& c = run.config;
  if (c.panel) {
    const auto schema = c.schema ? data::load_schema(*c.schema) : data::PanelSchema{};
    std::vector<std::string> warnings;
    return data::rank_normalize(data::load_panel(*c.panel, schema, c.macro), &warnings);
  }
  require_stage(run, "simulate");
  return data::load_panel(run.dir / "data/panel.csv", {}, run.dir / "data/macro.csv");
}

struct Prepared {
  std::shared_ptr<const data::CovariateStore> store;
  data::DataSplits splits;
};

Prepared prepare(const Run& run) {
  auto store = data::make_store(load_run_panel(run));
  const auto months = data::split_temporal(*store->panel, run.config.split);
  auto splits = data::make_splits(store, months, run.config.window);
  return {store, std::move(splits)};
}

bool has_oracle(const data::ExampleSet& set) {
  const auto& p = set.panel();
  for (const auto& e : set.examples()) {
    if (!p.oracle_target(e.last_row)) return false;
  }
  return !set.empty();
}

std::string model_path(const std::string& name) { return "models/" + name + ".ckpt"; }
std::string forecast_path(const std::string& name, const std::string& slice) {
  return "forecasts/" + name + "." + slice + ".csv";
}

std::vector<std::string> forecast_models(const Run& run) {
  std::vector<std::string> names;
  for (const auto& m : run.config.models) names.push_back(m.name);
  const auto& s = require_stage(run, "predict");
  for (const auto& f : s.files) {
    if (f.path == forecast_path("Oracle", "OOS")) names.push_back("Oracle");
  }
  return names;
}

}  // namespace

RunConfig resolve_config(const Options& opts) {
  RunConfig c = opts.config ? load_config(*opts.config) : default_config();
  if (opts.seed) c.seed = *opts.seed;
  return c;
}

std::vector<fs::path> list_runs(const fs::path& root) {
  std::vector<fs::path> out;
  if (!fs::is_directory(root)) return out;
  static const std::regex pattern("run-[0-9]{3,}");
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && std::regex_match(e.path().filename().string(), pattern)) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) {
    return std::stoul(a.filename().string().substr(4)) < std::stoul(b.filename().string().substr(4));
  });
  return out;
}

std::filesystem::path cmd_simulate(const Options& opts) {
  RunConfig config = resolve_config(opts);
  if (config.panel) throw ConfigError("simulate: the config names a data panel; remove data.panel to simulate");
  sim::DgpSpec spec = config.dgp;
  spec.seed = derive_seed(config.seed, 1);
  spec.validate();
  Run run = create_run(opts, config);
  StageWriter w(run, "simulate");
  const auto sim = sim::generate_panel(spec);
  data::write_panel_csv(sim.panel, w.path("data/panel.csv"));
  data::write_macro_csv(sim.panel, w.path("data/macro.csv"));
  w.commit();
  note(opts, "simulate: " + std::to_string(sim.panel.assets.size()) + " assets, " +
                 std::to_string(sim.panel.months.size()) + " months, oracle R2 " +
                 eval::fixed2(100.0 * sim::oracle_r2(spec)) + "%");
  return run.dir;
}

std::filesystem::path cmd_train(const Options& opts) {
  Run run = [&] {
    if (!opts.run) {
      RunConfig config = resolve_config(opts);
      if (config.panel) return create_run(opts, config);
    }
    return open_run(opts);
  }();
  begin_stage(run, "train");
  const auto prep = prepare(run);
  StageWriter w(run, "train");
  for (std::size_t m = 0; m < run.config.models.size(); ++m) {
    const auto& spec = run.config.models[m];
    models::Hyper hyper = spec.hyper;
    hyper.input_width = prep.store->width;
    hyper.seq_len = models::is_sequence_arch(spec.arch) ? run.config.window : 1;
    train::TrainConfig tc = spec.train;
    tc.seed = derive_seed(run.config.seed, 100 + m);
    train::TrainResult fit;
    try {
      fit = train::train(models::init_model(spec.arch, hyper, derive_seed(run.config.seed, 200 + m)), prep.splits, tc);
    } catch (const NumericError& e) {
      throw NumericError("train " + spec.name + ": " + e.what());
    } catch (const ShapeError& e) {
      throw ConfigError("train " + spec.name + ": " + e.what());
    }
    models::save_model(fit.model, w.path(model_path(spec.name)));
    fit.log.write_csv(w.path("models/" + spec.name + ".log.csv"));
    note(opts, "train " + spec.name + ": best epoch " + std::to_string(fit.log.best_epoch));
  }
  w.commit();
  return run.dir;
}

std::filesystem::path cmd_predict(const Options& opts) {
  Run run = open_run(opts);
  begin_stage(run, "predict");
  require_stage(run, "train");
  const auto prep = prepare(run);
  StageWriter w(run, "predict");
  for (const auto& spec : run.config.models) {
    const auto model = models::load_model(run.dir / model_path(spec.name));
    for (const auto& [slice, set] : {std::pair{"IS", &prep.splits.train}, std::pair{"OOS", &prep.splits.test}}) {
      const auto pred = train::predict(model, *set);
      eval::write_forecasts(eval::make_forecast_panel(spec.name, slice, *set, pred),
                            w.path(forecast_path(spec.name, slice)));
    }
  }
  if (has_oracle(prep.splits.train) && has_oracle(prep.splits.test)) {
    eval::write_forecasts(sim::oracle_forecast(prep.splits.train, "IS"), w.path(forecast_path("Oracle", "IS")));
    eval::write_forecasts(sim::oracle_forecast(prep.splits.test, "OOS"), w.path(forecast_path("Oracle", "OOS")));
  }
  w.commit();
  note(opts, "predict: " + std::to_string(prep.splits.test.size()) + " test examples");
  return run.dir;
}

std::filesystem::path cmd_evaluate(const Options& opts) {
  Run run = open_run(opts);
  begin_stage(run, "evaluate");
  const auto names = forecast_models(run);
  std::vector<eval::R2Entry> entries;
  std::vector<eval::ForecastPanel> fitted;
  for (const auto& name : names) {
    const auto is = eval::read_forecasts(run.dir / forecast_path(name, "IS"), name, "IS");
    auto oos = eval::read_forecasts(run.dir / forecast_path(name, "OOS"), name, "OOS");
    entries.push_back({name, "full", eval::r2_oos(is), eval::r2_oos(oos)});
    if (name != "Oracle") fitted.push_back(std::move(oos));
  }
  StageWriter w(run, "evaluate");
  const auto table = eval::build_r2_table(entries, names);
  w.text("tables/r2.csv", table.to_csv());
  w.text("tables/r2.txt", table.to_text());
  if (fitted.size() >= 2) {
    std::set<data::MonthIndex> months;
    for (const auto& r : fitted.front().rows) months.insert(r.month);
    if (months.size() < eval::kDmMinMonths) {
      w.text("tables/dm.txt", "not computed: " + std::to_string(months.size()) + " test months, need " +
                                  std::to_string(eval::kDmMinMonths) + "\n");
    } else {
      const auto dm = eval::build_dm_matrix(fitted, run.config.dm_lag, run.config.dm_critical);
      w.text("tables/dm.csv", dm.to_csv());
      w.text("tables/dm.txt", dm.to_text());
    }
  }
  w.commit();
  return run.dir;
}

std::filesystem::path cmd_backtest(const Options& opts) {
  Run run = open_run(opts);
  begin_stage(run, "backtest");
  require_stage(run, "predict");
  StageWriter w(run, "backtest");
  for (const auto& spec : run.config.models) {
    const auto oos = eval::read_forecasts(run.dir / forecast_path(spec.name, "OOS"), spec.name, "OOS");
    const auto series = backtest::portfolio_returns(oos);
    const auto report = backtest::portfolio_report(spec.name, series);
    w.text("portfolios/" + spec.name + ".csv", report.to_csv());
    w.text("portfolios/" + spec.name + ".txt", report.to_text());
    w.text("portfolios/" + spec.name + ".cumulative.csv", backtest::cumulative_log(series).to_csv());
  }
  w.commit();
  return run.dir;
}

std::filesystem::path cmd_report(const Options& opts) {
  Run run = open_run(opts);
  const auto problems = verify_manifest(run.dir, run.manifest);
  if (!problems.empty()) {
    std::string msg = run.dir.filename().string() + " failed verification:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw DataError(msg);
  }
  for (const char* stage : {"train", "predict", "evaluate", "backtest"}) {
    if (!run.manifest.stage(stage)) throw DataError(run.dir.filename().string() + " is incomplete: no " + stage + " stage");
  }
  const auto& cfg = run.config;
  std::ostringstream os;
  os << "deepap run report\n";
  os << "artifact " << run.manifest.artifact_version << ", config sha256 " << run.manifest.config_sha256 << "\n";
  os << "seed " << cfg.seed << ", window " << cfg.window << ", data "
     << (cfg.panel ? cfg.panel->string() : "simulated (" + sim::to_string(cfg.dgp.model) + ")") << "\n";
  os << "models";
  for (const auto& m : cfg.models) os << ' ' << m.name << " (" << models::to_string(m.arch) << ")";
  os << "\n\n";

  os << "== R2 (%), zero-forecast benchmark ==\n" << read_text(run.dir / "tables/r2.txt") << "\n";
  if (fs::exists(run.dir / "tables/dm.txt")) {
    os << "== Diebold-Mariano, lag " << cfg.dm_lag << " (positive: column model better; * |DM| > "
       << eval::fixed2(cfg.dm_critical) << ") ==\n"
       << read_text(run.dir / "tables/dm.txt") << "\n";
  }
  for (const auto& m : cfg.models) {
    os << "== Decile portfolios: " << m.name << " (% per month) ==\n"
       << read_text(run.dir / ("portfolios/" + m.name + ".txt")) << "\n";
  }
  os << "== Cumulative log returns ==\n";
  for (const auto& m : cfg.models) os << m.name << ": portfolios/" << m.name << ".cumulative.csv\n";
  const std::string text = os.str();

  const auto out = run.dir / "report.txt";
  if (const auto* s = run.manifest.stage("report")) {
    if (s->files.empty() || s->files.front().sha256 != sha256_hex(text)) {
      throw DataError(run.dir.filename().string() + ": regenerated report differs from the recorded one");
    }
    return out;
  }
  StageWriter w(run, "report");
  w.text("report.txt", text);
  w.commit();
  return out;
}

std::vector<models::ModelGradCheck> run_gradcheck(std::uint64_t seed, std::size_t seeds) {
  std::vector<models::ModelGradCheck> out;
  for (auto arch : models::all_archs()) {
    for (std::size_t s = 0; s < seeds; ++s) out.push_back(models::check_model_gradients(arch, seed + s));
  }
  return out;
}

}  // namespace deepap::cli
