#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deepap/data/panel.h"
#include "deepap/grad/tensor.h"

namespace deepap::data {

// Half-open range of panel month indices.
struct MonthRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool contains(std::size_t m) const { return m >= begin && m < end; }
  bool operator==(const MonthRange&) const = default;
};

// Either fractions of the observation months (months with a following
// month) or explicit inclusive month boundaries for each slice.
struct SplitSpec {
  double train_fraction = 0.8;
  double validation_fraction = 0.1;
  double test_fraction = 0.1;
  struct Dates {
    MonthIndex train_first, train_last, validation_first, validation_last, test_first, test_last;
  };
  std::optional<Dates> dates;
};

struct SplitMonths {
  MonthRange train, validation, test;
};

// Partitions the observation months. Fractions: validation and test get
// floor(fraction * n) months, train the remainder. Throws DataError for an
// empty slice, overlapping or unordered dates, or dates outside the panel.
SplitMonths split_temporal(const PanelDataset& panel, const SplitSpec& spec);
SplitMonths split_temporal(std::size_t observation_months, const SplitSpec& spec);

// Covariates shared by every example set cut from one panel.
struct CovariateStore {
  std::shared_ptr<const PanelDataset> panel;
  std::vector<double> z;  // rows x width
  std::size_t width = 0;
};

std::shared_ptr<const CovariateStore> make_store(PanelDataset panel);

// One forecast target: the window ending at `last_row` predicts the next
// month's excess return of that asset.
struct Example {
  std::size_t last_row;
  std::size_t asset;
  std::size_t month;
  double target;
};

// The examples of one slice: every row whose month lies in the slice, has a
// target, and has `window` consecutive observed months ending at it. Window
// steps may reach back before the slice start (covariates only).
class ExampleSet {
 public:
  ExampleSet() = default;
  ExampleSet(std::shared_ptr<const CovariateStore> store, MonthRange months, std::size_t window);

  std::size_t size() const { return examples_.size(); }
  bool empty() const { return examples_.empty(); }
  std::size_t window() const { return window_; }
  std::size_t width() const { return store_ ? store_->width : 0; }
  MonthRange months() const { return months_; }
  const std::vector<Example>& examples() const { return examples_; }
  const PanelDataset& panel() const { return *store_->panel; }

  // Batch of covariates: the trailing `steps` window steps as
  // [n, steps, width]; steps = 0 gives the last step alone as [n, width].
  // Each call counts as a read.
  grad::Tensor inputs(std::span<const std::size_t> indices, std::size_t steps) const;
  grad::Tensor targets(std::span<const std::size_t> indices) const;
  std::vector<double> all_targets() const;

  // Number of inputs()/targets()/all_targets() calls so far.
  std::size_t reads() const { return *reads_; }

 private:
  std::shared_ptr<const CovariateStore> store_;
  MonthRange months_;
  std::size_t window_ = 1;
  std::vector<Example> examples_;
  std::shared_ptr<std::size_t> reads_ = std::make_shared<std::size_t>(0);
};

struct DataSplits {
  ExampleSet train, validation, test;
};

DataSplits make_splits(std::shared_ptr<const CovariateStore> store, const SplitMonths& months, std::size_t window);

}  // namespace deepap::data
