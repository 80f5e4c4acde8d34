#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace deepap::data {

// Calendar month as a count since year 0 (month = year * 12 + m - 1).
using MonthIndex = std::int64_t;

MonthIndex parse_month(const std::string& iso);  // "YYYY-MM"; throws DataError
std::string format_month(MonthIndex month);

// One (asset, month) record. `ret` is the excess return realized during the
// month; the prediction target of the record is the next month's `ret`.
struct PanelRow {
  std::size_t asset = 0;  // index into PanelDataset::assets
  std::size_t month = 0;  // index into PanelDataset::months
  std::optional<double> ret;
  std::vector<double> chars;
  std::vector<std::uint8_t> missing;  // per characteristic, 1 = not observed
  std::optional<double> oracle;       // simulated panels: E[ret] given the previous month
};

struct PanelDataset {
  std::vector<MonthIndex> months;  // strictly increasing, consecutive calendar months
  std::vector<std::string> assets;  // sorted
  std::vector<std::string> char_names;
  std::vector<std::string> macro_names;  // excludes the constant entry
  // Per month: [1, x_1 .. x_Px].
  std::vector<std::vector<double>> macro;
  // Sorted by (asset, month).
  std::vector<PanelRow> rows;

  std::size_t n_chars() const { return char_names.size(); }
  std::size_t macro_width() const { return macro_names.size() + 1; }
  std::size_t covariate_width() const { return n_chars() * macro_width(); }

  // Row index for (asset, month), if present.
  std::optional<std::size_t> find(std::size_t asset, std::size_t month) const;
  // Next month's realized return for `row`, when both exist.
  std::optional<double> target(std::size_t row) const;
  std::optional<double> oracle_target(std::size_t row) const;
  // Number of rows with a target.
  std::size_t usable_rows() const;

  // Rebuilds the per-asset index; call after editing `rows`.
  void reindex();

 private:
  std::vector<std::size_t> asset_begin_;  // rows of asset a: [asset_begin_[a], asset_begin_[a+1])
};

// Column roles. Characteristic columns default to every column starting
// with `char_prefix`; macro columns likewise with `macro_prefix`.
struct PanelSchema {
  std::string month_column = "month";
  std::string asset_column = "asset";
  std::string return_column = "ret_excess";
  std::string oracle_column = "oracle_mean";
  std::vector<std::string> char_columns;
  std::string char_prefix = "c_";
  std::vector<std::string> macro_columns;
  std::string macro_prefix = "x_";
};

PanelSchema load_schema(const std::filesystem::path& path);

// Reads a panel CSV (and optionally a macro CSV). Rows may come in any
// order; the panel is stored sorted. Throws DataError on missing columns,
// unparseable values, duplicate (asset, month) keys, or a macro file whose
// months are not strictly increasing or do not cover the panel.
PanelDataset load_panel(const std::filesystem::path& panel_csv, const PanelSchema& schema = {},
                        const std::optional<std::filesystem::path>& macro_csv = std::nullopt);

// Writes the panel (and, when present, the oracle column) in the load_panel
// format. Values are printed with round-trip precision.
void write_panel_csv(const PanelDataset& panel, const std::filesystem::path& path);
void write_macro_csv(const PanelDataset& panel, const std::filesystem::path& path);

// Cross-sectional rank map into [-1, 1] per month and characteristic with
// mid-ranks for ties; unobserved values become 0. A characteristic observed
// for a single asset in a month is set to 0 and a warning is appended.
PanelDataset rank_normalize(const PanelDataset& panel, std::vector<std::string>* warnings = nullptr);

// Rank map of one cross-section, exposed for testing.
std::vector<double> rank_map(const std::vector<double>& values);

// z = x_t (x) c_{i,t}, macro-major: z[j * Pc + k] = x[j] * c[k]. Returns one
// row of width Px*Pc per panel row.
std::vector<double> kronecker(const std::vector<double>& macro, const std::vector<double>& chars);
std::vector<double> build_covariates(const PanelDataset& panel);

}  // namespace deepap::data
