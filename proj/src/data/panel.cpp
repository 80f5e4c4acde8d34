#include "deepap/data/panel.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <numeric>
#include <set>

#include "deepap/csv.h"
#include "deepap/errors.h"

namespace deepap::data {

MonthIndex parse_month(const std::string& iso) {
  int year = 0, month = 0;
  if (iso.size() != 7 || iso[4] != '-' ||
      std::from_chars(iso.data(), iso.data() + 4, year).ptr != iso.data() + 4 ||
      std::from_chars(iso.data() + 5, iso.data() + 7, month).ptr != iso.data() + 7 || month < 1 || month > 12) {
    throw DataError("invalid month '" + iso + "', expected YYYY-MM");
  }
  return static_cast<MonthIndex>(year) * 12 + (month - 1);
}

std::string format_month(MonthIndex month) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02d", static_cast<int>(month / 12), static_cast<int>(month % 12) + 1);
  return buf;
}

// ---- PanelDataset -----------------------------------------------------------

void PanelDataset::reindex() {
  std::sort(rows.begin(), rows.end(),
            [](const PanelRow& a, const PanelRow& b) { return std::tie(a.asset, a.month) < std::tie(b.asset, b.month); });
  asset_begin_.assign(assets.size() + 1, rows.size());
  for (std::size_t r = rows.size(); r-- > 0;) asset_begin_[rows[r].asset] = r;
  for (std::size_t a = assets.size(); a-- > 0;) asset_begin_[a] = std::min(asset_begin_[a], asset_begin_[a + 1]);
}

std::optional<std::size_t> PanelDataset::find(std::size_t asset, std::size_t month) const {
  if (asset >= assets.size() || asset_begin_.size() != assets.size() + 1) return std::nullopt;
  auto first = rows.begin() + static_cast<std::ptrdiff_t>(asset_begin_[asset]);
  auto last = rows.begin() + static_cast<std::ptrdiff_t>(asset_begin_[asset + 1]);
  auto it = std::lower_bound(first, last, month, [](const PanelRow& r, std::size_t m) { return r.month < m; });
  if (it == last || it->month != month) return std::nullopt;
  return static_cast<std::size_t>(it - rows.begin());
}

std::optional<double> PanelDataset::target(std::size_t row) const {
  const std::size_t next = row + 1;
  if (next >= rows.size() || rows[next].asset != rows[row].asset || rows[next].month != rows[row].month + 1) {
    return std::nullopt;
  }
  return rows[next].ret;
}

std::optional<double> PanelDataset::oracle_target(std::size_t row) const {
  const std::size_t next = row + 1;
  if (next >= rows.size() || rows[next].asset != rows[row].asset || rows[next].month != rows[row].month + 1) {
    return std::nullopt;
  }
  return rows[next].oracle;
}

std::size_t PanelDataset::usable_rows() const {
  std::size_t n = 0;
  for (std::size_t r = 0; r < rows.size(); ++r) n += target(r).has_value();
  return n;
}

// ---- schema -----------------------------------------------------------------

PanelSchema load_schema(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open schema " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("schema " + path.string() + ": " + e.what());
  }
  static const std::set<std::string> known{"month", "asset", "return", "oracle", "characteristics",
                                           "char_prefix", "macro", "macro_prefix"};
  PanelSchema s;
  try {
    for (const auto& [key, value] : j.items()) {
      if (!known.count(key)) throw ConfigError("schema: unknown key '" + key + "'");
    }
    s.month_column = j.value("month", s.month_column);
    s.asset_column = j.value("asset", s.asset_column);
    s.return_column = j.value("return", s.return_column);
    s.oracle_column = j.value("oracle", s.oracle_column);
    s.char_columns = j.value("characteristics", s.char_columns);
    s.char_prefix = j.value("char_prefix", s.char_prefix);
    s.macro_columns = j.value("macro", s.macro_columns);
    s.macro_prefix = j.value("macro_prefix", s.macro_prefix);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("schema " + path.string() + ": " + e.what());
  }
  return s;
}

// ---- loading ----------------------------------------------------------------

PanelDataset load_panel(const std::filesystem::path& panel_csv, const PanelSchema& schema,
                        const std::optional<std::filesystem::path>& macro_csv) {
  const std::string file = panel_csv.string();
  const csv::Table t = csv::read(panel_csv);
  const std::size_t c_month = t.column(schema.month_column, file);
  const std::size_t c_asset = t.column(schema.asset_column, file);
  const std::size_t c_ret = t.column(schema.return_column, file);
  const auto oracle_it = std::find(t.header.begin(), t.header.end(), schema.oracle_column);
  const bool has_oracle = oracle_it != t.header.end();
  const std::size_t c_oracle = has_oracle ? static_cast<std::size_t>(oracle_it - t.header.begin()) : 0;

  PanelDataset p;
  p.char_names = schema.char_columns.empty() ? t.with_prefix(schema.char_prefix) : schema.char_columns;
  if (p.char_names.empty()) throw DataError(file + ": no characteristic columns");
  std::vector<std::size_t> c_chars;
  for (const auto& name : p.char_names) c_chars.push_back(t.column(name, file));
  if (t.rows.empty()) throw DataError(file + ": no data rows");

  std::vector<MonthIndex> months(t.rows.size());
  std::set<std::string> asset_set;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    months[r] = parse_month(t.rows[r][c_month]);
    asset_set.insert(t.rows[r][c_asset]);
  }
  const auto [lo, hi] = std::minmax_element(months.begin(), months.end());
  for (MonthIndex m = *lo; m <= *hi; ++m) p.months.push_back(m);
  p.assets.assign(asset_set.begin(), asset_set.end());

  std::map<std::string, std::size_t> asset_index;
  for (std::size_t a = 0; a < p.assets.size(); ++a) asset_index[p.assets[a]] = a;

  std::set<std::pair<std::size_t, std::size_t>> seen;
  p.rows.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& cells = t.rows[r];
    const std::string where = file + ":" + std::to_string(t.line_numbers[r]);
    PanelRow row;
    row.asset = asset_index.at(cells[c_asset]);
    row.month = static_cast<std::size_t>(months[r] - *lo);
    if (!seen.emplace(row.asset, row.month).second) {
      throw DataError(where + ": duplicate row for asset '" + cells[c_asset] + "' month " + cells[c_month]);
    }
    if (!csv::is_missing(cells[c_ret])) row.ret = csv::parse_number(cells[c_ret], where);
    if (has_oracle && !csv::is_missing(cells[c_oracle])) row.oracle = csv::parse_number(cells[c_oracle], where);
    row.chars.resize(c_chars.size(), 0.0);
    row.missing.resize(c_chars.size(), 0);
    for (std::size_t k = 0; k < c_chars.size(); ++k) {
      const auto& cell = cells[c_chars[k]];
      if (csv::is_missing(cell)) {
        row.missing[k] = 1;
      } else {
        row.chars[k] = csv::parse_number(cell, where);
      }
    }
    p.rows.push_back(std::move(row));
  }

  p.macro.assign(p.months.size(), std::vector<double>{1.0});
  if (macro_csv) {
    const std::string mfile = macro_csv->string();
    const csv::Table mt = csv::read(*macro_csv);
    const std::size_t m_month = mt.column(schema.month_column, mfile);
    p.macro_names = schema.macro_columns.empty() ? mt.with_prefix(schema.macro_prefix) : schema.macro_columns;
    std::vector<std::size_t> c_macro;
    for (const auto& name : p.macro_names) c_macro.push_back(mt.column(name, mfile));
    std::optional<MonthIndex> previous;
    std::vector<bool> covered(p.months.size(), false);
    for (std::size_t r = 0; r < mt.rows.size(); ++r) {
      const std::string where = mfile + ":" + std::to_string(mt.line_numbers[r]);
      const MonthIndex m = parse_month(mt.rows[r][m_month]);
      if (previous && m <= *previous) throw DataError(where + ": months not strictly increasing");
      previous = m;
      if (m < *lo || m > *hi) continue;
      auto& x = p.macro[static_cast<std::size_t>(m - *lo)];
      for (std::size_t k = 0; k < c_macro.size(); ++k) x.push_back(csv::parse_number(mt.rows[r][c_macro[k]], where));
      covered[static_cast<std::size_t>(m - *lo)] = true;
    }
    for (std::size_t m = 0; m < covered.size(); ++m) {
      if (!covered[m]) throw DataError(mfile + ": no macro row for " + format_month(p.months[m]));
    }
  }
  p.reindex();
  return p;
}

void write_panel_csv(const PanelDataset& panel, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  const bool has_oracle = std::any_of(panel.rows.begin(), panel.rows.end(), [](const PanelRow& r) { return r.oracle; });
  os << "month,asset,ret_excess";
  for (const auto& n : panel.char_names) os << ',' << n;
  if (has_oracle) os << ",oracle_mean";
  os << '\n';
  for (const auto& r : panel.rows) {
    os << format_month(panel.months[r.month]) << ',' << panel.assets[r.asset] << ',';
    os << (r.ret ? csv::number_text(*r.ret) : "NA");
    for (std::size_t k = 0; k < r.chars.size(); ++k) os << ',' << (r.missing[k] ? "NA" : csv::number_text(r.chars[k]));
    if (has_oracle) os << ',' << (r.oracle ? csv::number_text(*r.oracle) : "NA");
    os << '\n';
  }
  if (!os) throw DataError("failed writing " + path.string());
}

void write_macro_csv(const PanelDataset& panel, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "month";
  for (const auto& n : panel.macro_names) os << ',' << n;
  os << '\n';
  for (std::size_t m = 0; m < panel.months.size(); ++m) {
    os << format_month(panel.months[m]);
    for (std::size_t k = 1; k < panel.macro[m].size(); ++k) os << ',' << csv::number_text(panel.macro[m][k]);
    os << '\n';
  }
  if (!os) throw DataError("failed writing " + path.string());
}

// ---- normalization ------------------------------------------------------------

std::vector<double> rank_map(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<double> out(n, 0.0);
  if (n < 2) return out;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    // 1-based mid-rank of the tie group [i, j].
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    const double mapped = 2.0 * (rank - 1.0) / static_cast<double>(n - 1) - 1.0;
    for (std::size_t k = i; k <= j; ++k) out[order[k]] = mapped;
    i = j + 1;
  }
  return out;
}

PanelDataset rank_normalize(const PanelDataset& panel, std::vector<std::string>* warnings) {
  PanelDataset out = panel;
  const std::size_t P = panel.n_chars();
  std::vector<std::vector<std::size_t>> by_month(panel.months.size());
  for (std::size_t r = 0; r < panel.rows.size(); ++r) by_month[panel.rows[r].month].push_back(r);
  for (std::size_t m = 0; m < by_month.size(); ++m) {
    for (std::size_t k = 0; k < P; ++k) {
      std::vector<std::size_t> members;
      std::vector<double> values;
      for (std::size_t r : by_month[m]) {
        if (panel.rows[r].missing[k]) {
          out.rows[r].chars[k] = 0.0;
        } else {
          members.push_back(r);
          values.push_back(panel.rows[r].chars[k]);
        }
      }
      if (members.size() == 1 && warnings) {
        warnings->push_back("characteristic " + panel.char_names[k] + " observed for one asset in " +
                            format_month(panel.months[m]) + "; set to 0");
      }
      const auto mapped = rank_map(values);
      for (std::size_t i = 0; i < members.size(); ++i) out.rows[members[i]].chars[k] = mapped[i];
    }
  }
  return out;
}

// ---- covariates -----------------------------------------------------------------

std::vector<double> kronecker(const std::vector<double>& macro, const std::vector<double>& chars) {
  std::vector<double> z(macro.size() * chars.size());
  for (std::size_t j = 0; j < macro.size(); ++j) {
    for (std::size_t k = 0; k < chars.size(); ++k) z[j * chars.size() + k] = macro[j] * chars[k];
  }
  return z;
}

std::vector<double> build_covariates(const PanelDataset& panel) {
  const std::size_t width = panel.covariate_width();
  std::vector<double> z;
  z.reserve(panel.rows.size() * width);
  for (const auto& row : panel.rows) {
    auto zr = kronecker(panel.macro[row.month], row.chars);
    z.insert(z.end(), zr.begin(), zr.end());
  }
  return z;
}

}  // namespace deepap::data
