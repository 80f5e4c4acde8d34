#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "deepap/cli/config.h"
#include "deepap/cli/manifest.h"
#include "deepap/models/gradcheck.h"

namespace deepap::cli {

struct Options {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out = "runs";
  // Run directory for stages after the first; defaults to the newest run-NNN
  // under `out`.
  std::optional<std::filesystem::path> run;
  std::ostream* log = nullptr;
};

// Config file (or defaults) with the --seed override applied.
RunConfig resolve_config(const Options& opts);

// run-NNN directories under `root`, oldest first.
std::vector<std::filesystem::path> list_runs(const std::filesystem::path& root);

// Each stage returns the run directory it wrote to. A run is append-only: a
// stage that already completed in the run raises ConfigError, as does a
// --config/--seed that resolves to a different config than the run's.
// Missing or altered upstream outputs raise DataError.

// New run: data/panel.csv (with the oracle column) and data/macro.csv.
std::filesystem::path cmd_simulate(const Options& opts);
// Trains every configured model; models/<name>.ckpt and models/<name>.log.csv.
// Starts a new run when the config names a panel file and no --run is given.
std::filesystem::path cmd_train(const Options& opts);
// forecasts/<name>.IS.csv (train slice) and forecasts/<name>.OOS.csv (test
// slice), plus Oracle forecasts for simulated panels.
std::filesystem::path cmd_predict(const Options& opts);
// tables/r2.{csv,txt} and, with two or more models, tables/dm.{csv,txt}.
std::filesystem::path cmd_evaluate(const Options& opts);
// portfolios/<name>.{csv,txt} and portfolios/<name>.cumulative.csv from the
// out-of-sample forecasts.
std::filesystem::path cmd_backtest(const Options& opts);
// Verifies every manifest digest, then writes report.txt. Regenerating the
// report of an unchanged run gives the same bytes.
std::filesystem::path cmd_report(const Options& opts);

// Gradient checks for every architecture at seeds seed, seed+1, ...
std::vector<models::ModelGradCheck> run_gradcheck(std::uint64_t seed, std::size_t seeds);
inline constexpr double kGradcheckTolerance = 1e-4;

}  // namespace deepap::cli
