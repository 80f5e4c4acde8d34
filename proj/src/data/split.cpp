#include "deepap/data/split.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <tuple>

#include "deepap/errors.h"

namespace deepap::data {

SplitMonths split_temporal(std::size_t n, const SplitSpec& spec) {
  const double fractions[] = {spec.train_fraction, spec.validation_fraction, spec.test_fraction};
  for (double f : fractions) {
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("split fractions must lie in (0, 1)");
  }
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  // Small epsilon so that e.g. 0.1 * 40 counts as 4 months, not 3.
  const auto count = [n](double f) { return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9)); };
  const std::size_t n_val = count(spec.validation_fraction), n_test = count(spec.test_fraction);
  if (n_val == 0 || n_test == 0 || n_val + n_test >= n) {
    throw DataError("temporal split of " + std::to_string(n) + " months leaves an empty slice");
  }
  const std::size_t n_train = n - n_val - n_test;
  return {{0, n_train}, {n_train, n_train + n_val}, {n_train + n_val, n}};
}

SplitMonths split_temporal(const PanelDataset& panel, const SplitSpec& spec) {
  if (panel.months.size() < 2) throw DataError("panel needs at least two months to form targets");
  // The last month has no following month, so it carries no targets.
  const std::size_t observation = panel.months.size() - 1;
  if (!spec.dates) return split_temporal(observation, spec);

  const auto& d = *spec.dates;
  const MonthIndex first = panel.months.front();
  const MonthIndex last_obs = panel.months[observation - 1];
  const MonthIndex bounds[] = {d.train_first, d.train_last, d.validation_first, d.validation_last, d.test_first, d.test_last};
  for (int i = 0; i < 6; i += 2) {
    if (bounds[i] > bounds[i + 1]) throw DataError("split: slice starts after it ends");
  }
  if (d.train_last >= d.validation_first || d.validation_last >= d.test_first) {
    throw DataError("split: slices overlap or are out of order");
  }
  if (d.train_first < first || d.test_last > last_obs) {
    throw DataError("split: dates " + format_month(d.train_first) + ".." + format_month(d.test_last) +
                    " fall outside the observation months " + format_month(first) + ".." + format_month(last_obs));
  }
  const auto idx = [first](MonthIndex m) { return static_cast<std::size_t>(m - first); };
  return {{idx(d.train_first), idx(d.train_last) + 1},
          {idx(d.validation_first), idx(d.validation_last) + 1},
          {idx(d.test_first), idx(d.test_last) + 1}};
}

std::shared_ptr<const CovariateStore> make_store(PanelDataset panel) {
  auto store = std::make_shared<CovariateStore>();
  store->width = panel.covariate_width();
  store->z = build_covariates(panel);
  store->panel = std::make_shared<const PanelDataset>(std::move(panel));
  return store;
}

ExampleSet::ExampleSet(std::shared_ptr<const CovariateStore> store, MonthRange months, std::size_t window)
    : store_(std::move(store)), months_(months), window_(window) {
  if (window_ == 0) throw ConfigError("window length must be at least 1");
  const auto& p = *store_->panel;
  for (std::size_t r = 0; r < p.rows.size(); ++r) {
    const auto& row = p.rows[r];
    if (!months_.contains(row.month)) continue;
    const auto target = p.target(r);
    if (!target) continue;
    if (r + 1 < window_) continue;
    const std::size_t first = r + 1 - window_;
    if (p.rows[first].asset != row.asset || row.month - p.rows[first].month != window_ - 1) continue;
    examples_.push_back({r, row.asset, row.month, *target});
  }
  // Month-major order keeps cross-sections together for evaluation.
  std::stable_sort(examples_.begin(), examples_.end(), [](const Example& a, const Example& b) {
    return std::tie(a.month, a.asset) < std::tie(b.month, b.asset);
  });
}

grad::Tensor ExampleSet::inputs(std::span<const std::size_t> indices, std::size_t steps) const {
  ++*reads_;
  if (steps > window_) throw ShapeError("requested " + std::to_string(steps) + " steps from a window of " +
                                        std::to_string(window_));
  const std::size_t w = store_->width, n = indices.size(), s = std::max<std::size_t>(steps, 1);
  std::vector<double> out(n * s * w);
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t first = examples_.at(indices[b]).last_row + 1 - s;
    std::memcpy(out.data() + b * s * w, store_->z.data() + first * w, s * w * sizeof(double));
  }
  if (steps == 0) return grad::Tensor::constant({n, w}, std::move(out));
  return grad::Tensor::constant({n, s, w}, std::move(out));
}

grad::Tensor ExampleSet::targets(std::span<const std::size_t> indices) const {
  ++*reads_;
  std::vector<double> out(indices.size());
  for (std::size_t b = 0; b < indices.size(); ++b) out[b] = examples_.at(indices[b]).target;
  return grad::Tensor::constant({indices.size(), 1}, std::move(out));
}

std::vector<double> ExampleSet::all_targets() const {
  ++*reads_;
  std::vector<double> out(examples_.size());
  for (std::size_t i = 0; i < examples_.size(); ++i) out[i] = examples_[i].target;
  return out;
}

DataSplits make_splits(std::shared_ptr<const CovariateStore> store, const SplitMonths& months, std::size_t window) {
  DataSplits s{ExampleSet(store, months.train, window), ExampleSet(store, months.validation, window),
               ExampleSet(store, months.test, window)};
  if (s.train.empty() || s.validation.empty() || s.test.empty()) {
    throw DataError("a split slice has no examples with a full window of " + std::to_string(window) + " months");
  }
  return s;
}

}  // namespace deepap::data
