#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deepap/data/panel.h"
#include "deepap/eval/stats.h"

namespace deepap::backtest {

inline constexpr std::size_t kDeciles = 10;

// Decile (1 = lowest forecast, 10 = highest) for each input position. Ranks
// by forecast, ties by asset id. When the count is not a multiple of ten the
// extra assets go to the lowest deciles. Throws DataError below 10 assets.
std::vector<int> sort_deciles(std::span<const double> forecasts, std::span<const std::string> assets);

// Sizes of deciles 1..10 for n assets.
std::array<std::size_t, kDeciles> decile_sizes(std::size_t n);

// Monthly equal-weighted portfolio series, in decimal returns.
struct PortfolioSeries {
  std::vector<data::MonthIndex> months;
  std::array<std::vector<double>, kDeciles> predicted;  // mean forecast per decile
  std::array<std::vector<double>, kDeciles> realized;
  std::vector<double> hl_predicted;
  std::vector<double> hl_realized;  // decile 10 minus decile 1
  std::vector<double> market;       // equal-weighted mean over all assets
};

// Re-sorts every month of `panel`. Throws DataError for non-finite values or
// a month with fewer than 10 assets.
PortfolioSeries portfolio_returns(const eval::ForecastPanel& panel);

// Avg / Std * sqrt(12); empty when Std is zero.
std::optional<double> annualized_sharpe(double avg, double std_dev);

struct PortfolioRow {
  std::string label;
  double pred = 0.0;  // % monthly
  double avg = 0.0;   // % monthly
  double std = 0.0;   // % monthly, sample standard deviation
  std::optional<double> sr;
};

// Inputs in decimal returns; throws DataError with fewer than 2 months.
PortfolioRow portfolio_stats(std::string label, std::span<const double> predicted, std::span<const double> realized);

struct PortfolioReport {
  std::string model;
  std::vector<PortfolioRow> rows;  // Low(L), 2, ..., 9, High(H), H-L

  std::string to_csv() const;
  std::string to_text() const;
};

PortfolioReport portfolio_report(const std::string& model, const PortfolioSeries& series);

// One point per month end, starting at 0 the month before the first return.
struct CumulativeSeries {
  std::vector<data::MonthIndex> months;
  std::vector<double> long_leg;   // top decile
  std::vector<double> short_leg;  // bottom decile, sign not flipped
  std::vector<double> long_short;
  std::vector<double> market;

  std::string to_csv() const;
};

// 0 followed by the running sum of log(1 + r). Throws DataError for r <= -1.
std::vector<double> cumulative_log(std::span<const double> returns);
CumulativeSeries cumulative_log(const PortfolioSeries& series);

}  // namespace deepap::backtest
