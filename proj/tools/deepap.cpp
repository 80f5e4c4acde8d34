// deepap: simulate -> train -> predict -> evaluate -> backtest -> report.
#include <CLI11.hpp>

#include <iomanip>
#include <iostream>

#include "deepap/cli/commands.h"
#include "deepap/errors.h"

using namespace deepap;

namespace {

int fail(int code, const std::string& kind, const std::string& what) {
  std::cerr << "deepap: " << kind << ": " << what << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Return forecasting pipeline on asset panels"};
  app.require_subcommand(1);
  app.set_version_flag("--version", cli::kArtifactVersion);

  cli::Options opts;
  std::string config, out = "runs", run;
  std::uint64_t seed = 0;
  bool quiet = false;
  std::size_t seeds = 5;

  auto stage = [&](const char* name, const char* help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "JSON run config")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "global seed (overrides the config)");
    sub->add_option("--out", out, "root holding run-NNN directories")->capture_default_str();
    sub->add_option("--run", run, "run directory (default: newest run under --out)");
    sub->add_flag("-q,--quiet", quiet, "no progress output");
    return sub;
  };
  auto* simulate = stage("simulate", "simulate a panel into a new run");
  auto* train = stage("train", "train the configured models");
  auto* predict = stage("predict", "write in- and out-of-sample forecasts");
  auto* evaluate = stage("evaluate", "R2 and Diebold-Mariano tables");
  auto* backtest = stage("backtest", "decile portfolio reports");
  auto* report = stage("report", "verify the run and write report.txt");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every architecture");
  gradcheck->add_option("--seed", seed, "first seed");
  gradcheck->add_option("--seeds", seeds, "number of seeds")->capture_default_str()->check(CLI::PositiveNumber);
  gradcheck->add_option("--out", out, "also write gradcheck.csv here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  auto* sub = app.get_subcommands().front();
  if (!config.empty()) opts.config = config;
  if (sub->count("--seed")) opts.seed = seed;
  opts.out = out;
  if (!run.empty()) opts.run = run;
  if (!quiet) opts.log = &std::cerr;

  try {
    if (sub == gradcheck) {
      std::ostringstream csv;
      csv << "arch,seed,max_relative_error,kink_distance,coordinates,draws,status\n";
      bool ok = true;
      for (const auto& r : cli::run_gradcheck(seed, seeds)) {
        const bool pass = r.max_relative_error < cli::kGradcheckTolerance;
        ok = ok && pass;
        csv << models::to_string(r.arch) << ',' << r.seed << ',' << std::scientific << std::setprecision(3)
            << r.max_relative_error << ',' << r.kink_distance << std::defaultfloat << ',' << r.coordinates << ','
            << r.draws << ',' << (pass ? "ok" : "FAIL") << '\n';
      }
      std::cout << csv.str();
      if (gradcheck->count("--out")) {
        std::filesystem::create_directories(out);
        std::ofstream(std::filesystem::path(out) / "gradcheck.csv") << csv.str();
      }
      return ok ? 0 : 1;
    }
    std::filesystem::path result;
    if (sub == simulate) result = cli::cmd_simulate(opts);
    if (sub == train) result = cli::cmd_train(opts);
    if (sub == predict) result = cli::cmd_predict(opts);
    if (sub == evaluate) result = cli::cmd_evaluate(opts);
    if (sub == backtest) result = cli::cmd_backtest(opts);
    if (sub == report) result = cli::cmd_report(opts);
    std::cout << result.string() << '\n';
    return 0;
  } catch (const ConfigError& e) {
    return fail(2, "config error", e.what());
  } catch (const DataError& e) {
    return fail(3, "data error", e.what());
  } catch (const NumericError& e) {
    return fail(4, "numeric error", e.what());
  } catch (const ShapeError& e) {
    return fail(2, "config error", e.what());
  } catch (const std::exception& e) {
    return fail(1, "error", e.what());
  }
}
