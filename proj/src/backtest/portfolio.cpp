#include "deepap/backtest/portfolio.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "deepap/csv.h"

namespace deepap::backtest {

std::array<std::size_t, kDeciles> decile_sizes(std::size_t n) {
  std::array<std::size_t, kDeciles> sizes{};
  for (std::size_t d = 0; d < kDeciles; ++d) sizes[d] = n / kDeciles + (d < n % kDeciles ? 1 : 0);
  return sizes;
}

std::vector<int> sort_deciles(std::span<const double> forecasts, std::span<const std::string> assets) {
  const std::size_t n = forecasts.size();
  if (assets.size() != n) throw ShapeError("sort_deciles: forecast and asset counts differ");
  if (n < kDeciles) throw DataError("decile sort needs at least 10 assets, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (forecasts[a] != forecasts[b]) return forecasts[a] < forecasts[b];
    return assets[a] < assets[b];
  });
  const auto sizes = decile_sizes(n);
  std::vector<int> out(n);
  std::size_t pos = 0;
  for (std::size_t d = 0; d < kDeciles; ++d) {
    for (std::size_t k = 0; k < sizes[d]; ++k) out[order[pos++]] = static_cast<int>(d + 1);
  }
  return out;
}

PortfolioSeries portfolio_returns(const eval::ForecastPanel& panel) {
  PortfolioSeries s;
  const auto& rows = panel.rows;
  std::size_t begin = 0;
  while (begin < rows.size()) {
    std::size_t end = begin;
    while (end < rows.size() && rows[end].month == rows[begin].month) ++end;
    const std::string when = data::format_month(rows[begin].month);
    std::vector<double> pred, real;
    std::vector<std::string> ids;
    for (std::size_t i = begin; i < end; ++i) {
      if (!std::isfinite(rows[i].predicted) || !std::isfinite(rows[i].realized)) {
        throw DataError("backtest: non-finite forecast or realization for " + rows[i].asset + " in " + when);
      }
      pred.push_back(rows[i].predicted);
      real.push_back(rows[i].realized);
      ids.push_back(rows[i].asset);
    }
    std::vector<int> decile;
    try {
      decile = sort_deciles(pred, ids);
    } catch (const DataError& e) {
      throw DataError(std::string(e.what()) + " in " + when);
    }
    std::array<double, kDeciles> psum{}, rsum{};
    std::array<std::size_t, kDeciles> count{};
    double market = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const auto d = static_cast<std::size_t>(decile[i] - 1);
      psum[d] += pred[i];
      rsum[d] += real[i];
      ++count[d];
      market += real[i];
    }
    s.months.push_back(rows[begin].month);
    for (std::size_t d = 0; d < kDeciles; ++d) {
      s.predicted[d].push_back(psum[d] / static_cast<double>(count[d]));
      s.realized[d].push_back(rsum[d] / static_cast<double>(count[d]));
    }
    s.hl_predicted.push_back(s.predicted[kDeciles - 1].back() - s.predicted[0].back());
    s.hl_realized.push_back(s.realized[kDeciles - 1].back() - s.realized[0].back());
    s.market.push_back(market / static_cast<double>(pred.size()));
    begin = end;
  }
  return s;
}

std::optional<double> annualized_sharpe(double avg, double std_dev) {
  if (!(std_dev > 0.0)) return std::nullopt;
  return avg / std_dev * std::sqrt(12.0);
}

PortfolioRow portfolio_stats(std::string label, std::span<const double> predicted, std::span<const double> realized) {
  const std::size_t T = realized.size();
  if (T < 2) throw DataError("portfolio statistics need at least 2 months");
  if (predicted.size() != T) throw ShapeError("portfolio_stats: series lengths differ");
  PortfolioRow row;
  row.label = std::move(label);
  double p = 0.0, m = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    p += predicted[t];
    m += realized[t];
  }
  p /= static_cast<double>(T);
  m /= static_cast<double>(T);
  double ss = 0.0;
  for (double r : realized) ss += (r - m) * (r - m);
  row.pred = 100.0 * p;
  row.avg = 100.0 * m;
  row.std = 100.0 * std::sqrt(ss / static_cast<double>(T - 1));
  row.sr = annualized_sharpe(row.avg, row.std);
  return row;
}

PortfolioReport portfolio_report(const std::string& model, const PortfolioSeries& series) {
  PortfolioReport r{model, {}};
  for (std::size_t d = 0; d < kDeciles; ++d) {
    std::string label = d == 0 ? "Low(L)" : d + 1 == kDeciles ? "High(H)" : std::to_string(d + 1);
    r.rows.push_back(portfolio_stats(std::move(label), series.predicted[d], series.realized[d]));
  }
  r.rows.push_back(portfolio_stats("H-L", series.hl_predicted, series.hl_realized));
  return r;
}

namespace {

std::string sr_text(const std::optional<double>& sr) { return sr ? eval::fixed2(*sr) : "NA"; }

}  // namespace

std::string PortfolioReport::to_csv() const {
  std::ostringstream os;
  os << "portfolio,pred,avg,std,sr\n";
  for (const auto& r : rows) {
    os << r.label << ',' << eval::fixed2(r.pred) << ',' << eval::fixed2(r.avg) << ',' << eval::fixed2(r.std) << ','
       << sr_text(r.sr) << '\n';
  }
  return os.str();
}

std::string PortfolioReport::to_text() const {
  std::ostringstream os;
  auto right = [](const std::string& s, std::size_t w) { return std::string(w > s.size() ? w - s.size() : 0, ' ') + s; };
  os << model << '\n';
  os << right("", 8) << right("Pred", 8) << right("Avg", 8) << right("Std", 8) << right("SR", 8) << '\n';
  for (const auto& r : rows) {
    os << right(r.label, 8) << right(eval::fixed2(r.pred), 8) << right(eval::fixed2(r.avg), 8)
       << right(eval::fixed2(r.std), 8) << right(sr_text(r.sr), 8) << '\n';
  }
  return os.str();
}

std::vector<double> cumulative_log(std::span<const double> returns) {
  std::vector<double> out;
  out.reserve(returns.size() + 1);
  double acc = 0.0;
  out.push_back(acc);
  for (double r : returns) {
    if (!(r > -1.0)) throw DataError("cumulative log return undefined for a return of " + csv::number_text(r));
    acc += std::log1p(r);
    out.push_back(acc);
  }
  return out;
}

CumulativeSeries cumulative_log(const PortfolioSeries& series) {
  // Point t is the value at the end of month months[0] + t; returns forecast
  // with month-m covariates are realized in month m + 1.
  std::vector<data::MonthIndex> months;
  if (!series.months.empty()) months.push_back(series.months.front());
  for (auto m : series.months) months.push_back(m + 1);
  return {std::move(months), cumulative_log(series.realized[kDeciles - 1]), cumulative_log(series.realized[0]),
          cumulative_log(series.hl_realized), cumulative_log(series.market)};
}

std::string CumulativeSeries::to_csv() const {
  std::ostringstream os;
  os << "month,long,short,long_short,market\n";
  for (std::size_t t = 0; t < months.size(); ++t) {
    os << data::format_month(months[t]) << ',' << csv::number_text(long_leg[t]) << ','
       << csv::number_text(short_leg[t]) << ',' << csv::number_text(long_short[t]) << ','
       << csv::number_text(market[t]) << '\n';
  }
  return os.str();
}

}  // namespace deepap::backtest
