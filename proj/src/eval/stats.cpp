#include "deepap/eval/stats.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "deepap/csv.h"

namespace deepap::eval {

std::vector<double> ForecastPanel::predicted() const {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.predicted);
  return out;
}

std::vector<double> ForecastPanel::realized() const {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.realized);
  return out;
}

namespace {

void sort_rows(std::vector<Forecast>& rows) {
  std::sort(rows.begin(), rows.end(),
            [](const Forecast& a, const Forecast& b) { return std::tie(a.month, a.asset) < std::tie(b.month, b.asset); });
}

}  // namespace

ForecastPanel make_forecast_panel(std::string model, std::string slice, const data::ExampleSet& set,
                                  std::span<const double> predictions) {
  if (predictions.size() != set.size()) throw ShapeError("forecast count differs from example count");
  ForecastPanel p{std::move(model), std::move(slice), {}};
  const auto& panel = set.panel();
  p.rows.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& e = set.examples()[i];
    p.rows.push_back({panel.months[e.month], panel.assets[e.asset], predictions[i], e.target});
  }
  sort_rows(p.rows);
  return p;
}

void write_forecasts(const ForecastPanel& panel, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "month,asset,predicted,realized\n";
  for (const auto& r : panel.rows) {
    os << data::format_month(r.month) << ',' << r.asset << ',' << csv::number_text(r.predicted) << ','
       << csv::number_text(r.realized) << '\n';
  }
  if (!os) throw DataError("failed writing " + path.string());
}

ForecastPanel read_forecasts(const std::filesystem::path& path, std::string model, std::string slice) {
  const auto t = csv::read(path);
  const std::string file = path.string();
  const std::size_t cm = t.column("month", file), ca = t.column("asset", file), cp = t.column("predicted", file),
                    cr = t.column("realized", file);
  ForecastPanel p{std::move(model), std::move(slice), {}};
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const std::string where = file + ":" + std::to_string(t.line_numbers[i]);
    const auto& row = t.rows[i];
    p.rows.push_back({data::parse_month(row[cm]), row[ca], csv::parse_number(row[cp], where),
                      csv::parse_number(row[cr], where)});
  }
  sort_rows(p.rows);
  return p;
}

// ---- R^2 ----------------------------------------------------------------------------

double r2_oos(std::span<const double> predicted, std::span<const double> realized) {
  if (predicted.empty()) throw DataError("r2_oos: empty forecast panel");
  if (predicted.size() != realized.size()) throw ShapeError("r2_oos: forecast and realization counts differ");
  double sse = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double e = realized[i] - predicted[i];
    sse += e * e;
    sst += realized[i] * realized[i];
  }
  if (sst == 0.0) throw DataError("r2_oos: every realized return is zero");
  return 100.0 * (1.0 - sse / sst);
}

double r2_oos(const ForecastPanel& panel) { return r2_oos(panel.predicted(), panel.realized()); }

// ---- Diebold-Mariano -------------------------------------------------------------------

std::vector<double> loss_differential(const ForecastPanel& a, const ForecastPanel& b) {
  if (a.rows.size() != b.rows.size()) {
    throw DataError("DM: " + a.model + " and " + b.model + " cover different observations");
  }
  std::vector<double> d;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    const auto& ra = a.rows[i];
    const auto& rb = b.rows[i];
    if (ra.month != rb.month || ra.asset != rb.asset) {
      throw DataError("DM: " + a.model + " and " + b.model + " cover different observations (" +
                      data::format_month(ra.month) + ", " + ra.asset + ")");
    }
    if (ra.realized != rb.realized) {
      throw DataError("DM: realized returns differ for (" + data::format_month(ra.month) + ", " + ra.asset + ")");
    }
    const double ea = ra.realized - ra.predicted, eb = rb.realized - rb.predicted;
    sum += ea * ea - eb * eb;
    ++count;
    if (i + 1 == a.rows.size() || a.rows[i + 1].month != ra.month) {
      d.push_back(sum / static_cast<double>(count));
      sum = 0.0;
      count = 0;
    }
  }
  return d;
}

double dm_statistic(std::span<const double> d, std::size_t lag) {
  const std::size_t T = d.size();
  if (T < kDmMinMonths) throw DataError("DM test needs at least " + std::to_string(kDmMinMonths) + " months, got " + std::to_string(T));
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(T);
  auto autocov = [&](std::size_t j) {
    double s = 0.0;
    for (std::size_t t = j; t < T; ++t) s += (d[t] - mean) * (d[t - j] - mean);
    return s / static_cast<double>(T);
  };
  double longrun = autocov(0);
  for (std::size_t j = 1; j <= lag && j < T; ++j) {
    longrun += 2.0 * (1.0 - static_cast<double>(j) / static_cast<double>(lag + 1)) * autocov(j);
  }
  const double var = longrun / static_cast<double>(T - 1);
  if (!(var > 0.0)) throw DegenerateComparison("DM test: loss differential has zero long-run variance");
  return mean / std::sqrt(var);
}

double dm_test(const ForecastPanel& a, const ForecastPanel& b, std::size_t lag) {
  const auto d = loss_differential(a, b);
  try {
    return dm_statistic(d, lag);
  } catch (const DegenerateComparison&) {
    throw DegenerateComparison("DM test: " + a.model + " vs " + b.model + " is degenerate (identical losses)");
  }
}

DmMatrix build_dm_matrix(const std::vector<ForecastPanel>& panels, std::size_t lag, double critical) {
  if (panels.size() < 2) throw DataError("DM matrix needs at least two models");
  DmMatrix m;
  for (const auto& p : panels) m.models.push_back(p.model);
  m.cells.assign(panels.size(), std::vector<DmCell>(panels.size()));
  for (std::size_t i = 0; i < panels.size(); ++i) {
    for (std::size_t j = i + 1; j < panels.size(); ++j) {
      auto& cell = m.cells[i][j];
      try {
        cell.statistic = dm_test(panels[i], panels[j], lag);
        cell.significant = dm_significant(*cell.statistic, critical);
      } catch (const DegenerateComparison& e) {
        cell.error = "degenerate";
      }
    }
  }
  return m;
}

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  std::string s = buf;
  if (s == "-0.00") s = "0.00";
  return s;
}

std::string DmMatrix::to_text() const {
  std::size_t name_width = 0;
  for (const auto& n : models) name_width = std::max(name_width, n.size());
  std::size_t cell_width = 8;
  for (const auto& n : models) cell_width = std::max(cell_width, n.size() + 2);
  std::ostringstream os;
  auto pad_left = [](const std::string& s, std::size_t w) { return std::string(w > s.size() ? w - s.size() : 0, ' ') + s; };
  auto pad_right = [](const std::string& s, std::size_t w) { return s + std::string(w > s.size() ? w - s.size() : 0, ' '); };
  os << pad_right("", name_width);
  for (std::size_t j = 1; j < models.size(); ++j) os << pad_left(models[j], cell_width);
  os << '\n';
  for (std::size_t i = 0; i + 1 < models.size(); ++i) {
    std::string line = pad_right(models[i], name_width);
    for (std::size_t j = 1; j < models.size(); ++j) {
      std::string text;
      if (j > i) {
        const auto& c = cells[i][j];
        text = c.statistic ? fixed2(*c.statistic) + (c.significant ? "*" : " ") : c.error + " ";
      }
      line += pad_left(text, cell_width);
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    os << line << '\n';
  }
  return os.str();
}

std::string DmMatrix::to_csv() const {
  std::ostringstream os;
  os << "row_model,column_model,statistic,significant\n";
  for (std::size_t i = 0; i < models.size(); ++i) {
    for (std::size_t j = i + 1; j < models.size(); ++j) {
      const auto& c = cells[i][j];
      os << models[i] << ',' << models[j] << ',' << (c.statistic ? csv::number_text(*c.statistic) : c.error) << ','
         << (c.significant ? 1 : 0) << '\n';
    }
  }
  return os.str();
}

// ---- R^2 table ---------------------------------------------------------------------------

R2Table build_r2_table(const std::vector<R2Entry>& runs, const std::vector<std::string>& model_order) {
  std::vector<std::string> spans;
  for (const auto& r : runs) {
    if (std::find(spans.begin(), spans.end(), r.span) == spans.end()) spans.push_back(r.span);
  }
  R2Table t;
  for (const auto& model : model_order) {
    for (const auto& span : spans) {
      for (const auto& r : runs) {
        if (r.model == model && r.span == span) t.rows.push_back(r);
      }
    }
  }
  return t;
}

std::string R2Table::to_csv() const {
  std::ostringstream os;
  os << "model,span,is_r2,oos_r2\n";
  for (const auto& r : rows) {
    os << r.model << ',' << r.span << ',' << fixed2(r.in_sample) << ',' << fixed2(r.out_of_sample) << '\n';
  }
  return os.str();
}

std::string R2Table::to_text() const {
  std::size_t w = 5;
  for (const auto& r : rows) w = std::max(w, r.model.size());
  std::size_t sw = 4;
  for (const auto& r : rows) sw = std::max(sw, r.span.size());
  std::ostringstream os;
  auto right = [](const std::string& s, std::size_t width) {
    return std::string(width > s.size() ? width - s.size() : 0, ' ') + s;
  };
  auto left = [](const std::string& s, std::size_t width) {
    return s + std::string(width > s.size() ? width - s.size() : 0, ' ');
  };
  os << left("Model", w) << "  " << left("Span", sw) << right("IS R2 (%)", 12) << right("OOS R2 (%)", 12) << '\n';
  for (const auto& r : rows) {
    os << left(r.model, w) << "  " << left(r.span, sw) << right(fixed2(r.in_sample), 12)
       << right(fixed2(r.out_of_sample), 12) << '\n';
  }
  return os.str();
}

}  // namespace deepap::eval
