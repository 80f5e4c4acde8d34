#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deepap/data/panel.h"
#include "deepap/data/split.h"
#include "deepap/errors.h"

namespace deepap::eval {

struct Forecast {
  data::MonthIndex month;  // month of the covariates; the return is realized a month later
  std::string asset;
  double predicted;
  double realized;
};

// Forecasts of one model over one slice, sorted by (month, asset).
struct ForecastPanel {
  std::string model;
  std::string slice;  // "IS" or "OOS"
  std::vector<Forecast> rows;

  std::vector<double> predicted() const;
  std::vector<double> realized() const;
};

ForecastPanel make_forecast_panel(std::string model, std::string slice, const data::ExampleSet& set,
                                  std::span<const double> predictions);

// CSV month,asset,predicted,realized with round-trip precision.
void write_forecasts(const ForecastPanel& panel, const std::filesystem::path& path);
ForecastPanel read_forecasts(const std::filesystem::path& path, std::string model, std::string slice);

// 100 * (1 - SSE / sum r^2), the benchmark being a zero forecast. Throws
// DataError for empty input or when every realized return is zero.
double r2_oos(std::span<const double> predicted, std::span<const double> realized);
double r2_oos(const ForecastPanel& panel);

// Raised when two forecast panels give a loss differential with zero
// long-run variance (for example identical forecasts).
class DegenerateComparison : public DataError {
 public:
  using DataError::DataError;
};

// Monthly loss differential d_t = mean over assets of (e_A^2 - e_B^2).
std::vector<double> loss_differential(const ForecastPanel& a, const ForecastPanel& b);

// Diebold-Mariano statistic d_bar / se(d_bar) with a Bartlett-kernel HAC
// variance at `lag`. Positive values mean B forecasts better than A.
// Requires identical (month, asset) coverage and at least 8 months.
double dm_test(const ForecastPanel& a, const ForecastPanel& b, std::size_t lag = 3);
// Same statistic on a given differential series.
double dm_statistic(std::span<const double> differential, std::size_t lag = 3);

struct DmCell {
  std::optional<double> statistic;
  bool significant = false;
  std::string error;  // set when the comparison is degenerate
};

// Entry (i, j), i < j, compares row model i with column model j; a positive
// statistic means the column model outperforms the row model.
struct DmMatrix {
  std::vector<std::string> models;
  std::vector<std::vector<DmCell>> cells;

  std::string to_text() const;
  std::string to_csv() const;
};

inline constexpr double kDmCritical = 1.96;
inline constexpr std::size_t kDmMinMonths = 8;

inline bool dm_significant(double statistic, double critical = kDmCritical) {
  return statistic > critical || statistic < -critical;
}

DmMatrix build_dm_matrix(const std::vector<ForecastPanel>& panels, std::size_t lag = 3,
                         double critical = kDmCritical);

struct R2Entry {
  std::string model;
  std::string span;
  double in_sample = 0.0;
  double out_of_sample = 0.0;
};

// One row per (model, span) in the configured model order, then span order
// of first appearance. Percentages are printed with 2 decimals.
struct R2Table {
  std::vector<R2Entry> rows;
  std::string to_csv() const;
  std::string to_text() const;
};

R2Table build_r2_table(const std::vector<R2Entry>& runs, const std::vector<std::string>& model_order);

// Formats with 2 decimals; "-0.00" is printed as "0.00".
std::string fixed2(double v);

}  // namespace deepap::eval
