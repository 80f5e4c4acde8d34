#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "deepap/data/panel.h"
#include "deepap/data/split.h"
#include "deepap/errors.h"

using namespace deepap;
using namespace deepap::data;

namespace {

const std::filesystem::path fixtures = DEEPAP_FIXTURE_DIR;

// Panel with `n_assets` assets over consecutive months from `first`, random
// characteristics, Px macro series.
PanelDataset synthetic_panel(std::size_t n_assets, std::size_t n_months, std::size_t n_chars, std::size_t n_macro,
                             MonthIndex first = 2000 * 12, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  PanelDataset p;
  for (std::size_t m = 0; m < n_months; ++m) p.months.push_back(first + static_cast<MonthIndex>(m));
  for (std::size_t a = 0; a < n_assets; ++a) p.assets.push_back("A" + std::to_string(100 + a));
  for (std::size_t k = 0; k < n_chars; ++k) p.char_names.push_back("c_" + std::to_string(k + 1));
  for (std::size_t j = 0; j < n_macro; ++j) p.macro_names.push_back("x_" + std::to_string(j + 1));
  for (std::size_t m = 0; m < n_months; ++m) {
    std::vector<double> x{1.0};
    for (std::size_t j = 0; j < n_macro; ++j) x.push_back(normal(rng));
    p.macro.push_back(x);
  }
  for (std::size_t a = 0; a < n_assets; ++a) {
    for (std::size_t m = 0; m < n_months; ++m) {
      PanelRow r;
      r.asset = a;
      r.month = m;
      r.ret = normal(rng) * 0.1;
      for (std::size_t k = 0; k < n_chars; ++k) r.chars.push_back(normal(rng));
      r.missing.assign(n_chars, 0);
      p.rows.push_back(r);
    }
  }
  p.reindex();
  return p;
}

}  // namespace

TEST(Months, ParseAndFormat) {
  EXPECT_EQ(parse_month("1976-01"), 1976 * 12);
  EXPECT_EQ(format_month(parse_month("2016-12")), "2016-12");
  EXPECT_THROW(parse_month("2016-13"), DataError);
  EXPECT_THROW(parse_month("201612"), DataError);
}

TEST(LoadPanel, TwoAssetsThreeMonthsGiveTwoTargetsEach) {
  auto p = load_panel(fixtures / "panel_2x3.csv");
  ASSERT_EQ(p.assets.size(), 2u);
  ASSERT_EQ(p.months.size(), 3u);
  EXPECT_EQ(p.usable_rows(), 4u);
  for (std::size_t a = 0; a < 2; ++a) {
    EXPECT_TRUE(p.target(*p.find(a, 0)).has_value());
    EXPECT_TRUE(p.target(*p.find(a, 1)).has_value());
    EXPECT_FALSE(p.target(*p.find(a, 2)).has_value());
  }
  // AAA's January row predicts AAA's February return.
  EXPECT_EQ(*p.target(*p.find(0, 0)), 0.03);
  EXPECT_EQ(p.rows[*p.find(1, 0)].missing[1], 1);
  EXPECT_EQ(p.macro_width(), 1u);
}

TEST(LoadPanel, ShuffledRowsGiveTheSamePanel) {
  auto a = load_panel(fixtures / "panel_2x3.csv");
  auto b = load_panel(fixtures / "panel_2x3_shuffled.csv");
  ASSERT_EQ(a.rows.size(), b.rows.size());
  EXPECT_EQ(a.months, b.months);
  EXPECT_EQ(a.assets, b.assets);
  for (std::size_t r = 0; r < a.rows.size(); ++r) {
    EXPECT_EQ(a.rows[r].asset, b.rows[r].asset);
    EXPECT_EQ(a.rows[r].month, b.rows[r].month);
    EXPECT_EQ(a.rows[r].ret, b.rows[r].ret);
    EXPECT_EQ(a.rows[r].chars, b.rows[r].chars);
    EXPECT_EQ(a.rows[r].missing, b.rows[r].missing);
  }
}

TEST(LoadPanel, DuplicateKeyNamesTheKey) {
  try {
    load_panel(fixtures / "panel_duplicate.csv");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("AAA"), std::string::npos);
    EXPECT_NE(msg.find("2001-01"), std::string::npos);
  }
}

TEST(LoadPanel, MissingColumnAndSchemaMapping) {
  PanelSchema s;
  s.return_column = "no_such_column";
  EXPECT_THROW(load_panel(fixtures / "panel_2x3.csv", s), DataError);

  auto renamed = load_panel(fixtures / "panel_renamed.csv", load_schema(fixtures / "schema_renamed.json"));
  EXPECT_EQ(renamed.char_names, (std::vector<std::string>{"size", "mom"}));
  EXPECT_EQ(renamed.rows[1].chars, (std::vector<double>{3, 4}));
}

TEST(LoadPanel, MacroFileAddsConstantAndChecksOrder) {
  auto p = load_panel(fixtures / "panel_2x3.csv", {}, fixtures / "macro_2x3.csv");
  EXPECT_EQ(p.macro_width(), 3u);
  EXPECT_EQ(p.macro[1], (std::vector<double>{1.0, 0.25, 2.0}));
  EXPECT_THROW(load_panel(fixtures / "panel_2x3.csv", {}, fixtures / "macro_unordered.csv"), DataError);
}

TEST(LoadPanel, WriteThenLoadRoundTrips) {
  auto p = synthetic_panel(4, 5, 3, 2);
  p.rows[3].missing[1] = 1;
  p.rows[3].chars[1] = 0.0;
  p.rows[2].oracle = 0.125;
  const auto dir = std::filesystem::temp_directory_path();
  write_panel_csv(p, dir / "deepap_rt_panel.csv");
  write_macro_csv(p, dir / "deepap_rt_macro.csv");
  auto q = load_panel(dir / "deepap_rt_panel.csv", {}, dir / "deepap_rt_macro.csv");
  ASSERT_EQ(q.rows.size(), p.rows.size());
  for (std::size_t r = 0; r < p.rows.size(); ++r) {
    EXPECT_EQ(q.rows[r].ret, p.rows[r].ret);
    EXPECT_EQ(q.rows[r].chars, p.rows[r].chars);
    EXPECT_EQ(q.rows[r].missing, p.rows[r].missing);
    EXPECT_EQ(q.rows[r].oracle, p.rows[r].oracle);
  }
  EXPECT_EQ(q.macro, p.macro);
}

TEST(RankMap, HandCases) {
  EXPECT_EQ(rank_map({10, 20, 30}), (std::vector<double>{-1, 0, 1}));
  EXPECT_EQ(rank_map({4, 4, 4, 4}), (std::vector<double>{0, 0, 0, 0}));
  const auto v = rank_map({5, 1, 9, 7});
  const std::vector<double> expected{-1.0 / 3.0, -1.0, 1.0, 1.0 / 3.0};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(v[i], expected[i], 1e-15);
  EXPECT_EQ(rank_map({3.5}), (std::vector<double>{0}));
}

TEST(RankNormalize, RangeMissingAndSingletons) {
  auto p = load_panel(fixtures / "panel_2x3.csv");
  std::vector<std::string> warnings;
  auto n = rank_normalize(p, &warnings);
  for (const auto& r : n.rows) {
    for (double c : r.chars) {
      EXPECT_GE(c, -1.0);
      EXPECT_LE(c, 1.0);
    }
  }
  // January c_2 is observed only for AAA: set to 0 with a warning; BBB's NA is 0.
  EXPECT_EQ(n.rows[*n.find(0, 0)].chars[1], 0.0);
  EXPECT_EQ(n.rows[*n.find(1, 0)].chars[1], 0.0);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("2001-01"), std::string::npos);
  // February c_1: AAA 30 > BBB 5.
  EXPECT_EQ(n.rows[*n.find(0, 1)].chars[0], 1.0);
  EXPECT_EQ(n.rows[*n.find(1, 1)].chars[0], -1.0);
}

TEST(RankNormalize, Idempotent) {
  auto p = synthetic_panel(9, 6, 4, 0);
  for (std::size_t r = 0; r < p.rows.size(); r += 5) p.rows[r].missing[r % 4] = 1;
  // Ties as well.
  for (std::size_t r = 1; r < p.rows.size(); r += 7) p.rows[r].chars[0] = 0.5;
  auto once = rank_normalize(p);
  auto twice = rank_normalize(once);
  for (std::size_t r = 0; r < p.rows.size(); ++r) EXPECT_EQ(once.rows[r].chars, twice.rows[r].chars);
}

TEST(Covariates, KroneckerCases) {
  EXPECT_EQ(kronecker({1.0}, {0.3, -0.7}), (std::vector<double>{0.3, -0.7}));
  EXPECT_EQ(kronecker({1, 10}, {2, 3}), (std::vector<double>{2, 3, 20, 30}));
  EXPECT_EQ(kronecker(std::vector<double>(12, 1.0), std::vector<double>(81, 1.0)).size(), 972u);
}

TEST(Covariates, RowsFactorIntoMacroTimesCharacteristics) {
  auto p = synthetic_panel(3, 4, 5, 2);
  auto z = build_covariates(p);
  const std::size_t W = p.covariate_width();
  ASSERT_EQ(W, 15u);
  for (std::size_t r = 0; r < p.rows.size(); ++r) {
    const auto& x = p.macro[p.rows[r].month];
    const auto& c = p.rows[r].chars;
    // Rank-1 check: every 2x2 minor of the Px x Pc reshape vanishes, and
    // the first block row recovers c (x[0] = 1).
    for (std::size_t k = 0; k < c.size(); ++k) EXPECT_EQ(z[r * W + k], c[k]);
    for (std::size_t j = 1; j < x.size(); ++j) {
      for (std::size_t k = 1; k < c.size(); ++k) {
        const double minor = z[r * W + 0 * 5 + 0] * z[r * W + j * 5 + k] - z[r * W + j * 5 + 0] * z[r * W + 0 * 5 + k];
        EXPECT_NEAR(minor, 0.0, 1e-12);
      }
    }
  }
}

TEST(Split, FractionCounts) {
  auto s = split_temporal(40, SplitSpec{});
  EXPECT_EQ(s.train.size(), 32u);
  EXPECT_EQ(s.validation.size(), 4u);
  EXPECT_EQ(s.test.size(), 4u);
  auto t = split_temporal(10, SplitSpec{});
  EXPECT_EQ(t.train.size(), 8u);
  EXPECT_EQ(t.validation.size(), 1u);
  EXPECT_EQ(t.test.size(), 1u);
  EXPECT_THROW(split_temporal(5, SplitSpec{}), DataError);
}

TEST(Split, SlicesPartitionTheObservationMonths) {
  for (std::size_t n = 10; n < 200; n += 7) {
    auto s = split_temporal(n, SplitSpec{});
    EXPECT_EQ(s.train.begin, 0u);
    EXPECT_EQ(s.train.end, s.validation.begin);
    EXPECT_EQ(s.validation.end, s.test.begin);
    EXPECT_EQ(s.test.end, n);
  }
}

TEST(Split, LongSpanCalendarDates) {
  // Monthly calendar 1976-01 .. 2017-01, so that 2016-12 still has a target.
  auto p = synthetic_panel(2, 41 * 12 + 1, 1, 0, parse_month("1976-01"));
  SplitSpec spec;
  spec.dates = SplitSpec::Dates{parse_month("1976-01"), parse_month("2007-12"), parse_month("2008-01"),
                                parse_month("2012-12"), parse_month("2013-01"), parse_month("2016-12")};
  auto s = split_temporal(p, spec);
  EXPECT_EQ(format_month(p.months[s.train.begin]), "1976-01");
  EXPECT_EQ(format_month(p.months[s.train.end - 1]), "2007-12");
  EXPECT_EQ(format_month(p.months[s.validation.begin]), "2008-01");
  EXPECT_EQ(format_month(p.months[s.validation.end - 1]), "2012-12");
  EXPECT_EQ(format_month(p.months[s.test.begin]), "2013-01");
  EXPECT_EQ(format_month(p.months[s.test.end - 1]), "2016-12");
  EXPECT_EQ(s.train.size(), 32u * 12);

  auto overlap = spec;
  overlap.dates->validation_first = parse_month("2007-06");
  EXPECT_THROW(split_temporal(p, overlap), DataError);
}

TEST(Examples, WindowsAndTargets) {
  auto p = synthetic_panel(3, 10, 2, 1);
  // Remove asset 1's month 4 so windows crossing it are skipped.
  p.rows.erase(p.rows.begin() + 10 + 4);
  p.reindex();
  auto store = make_store(p);
  ExampleSet set(store, {0, 9}, 3);
  for (const auto& e : set.examples()) {
    EXPECT_GE(e.month, 2u);
    if (e.asset == 1) {
      EXPECT_TRUE(e.month < 4 || e.month > 6);
    }
    EXPECT_EQ(e.target, *store->panel->rows[*store->panel->find(e.asset, e.month + 1)].ret);
  }
  // Assets 0 and 2: months 2..8 (7 each); asset 1: months 2,3,7,8 except 3 has
  // no target (month 4 missing), so 2,7,8.
  EXPECT_EQ(set.size(), 7u + 7u + 3u);

  std::vector<std::size_t> idx{0, 1};
  auto seq = set.inputs(idx, 3);
  EXPECT_EQ(seq.shape(), (grad::Shape{2, 3, store->width}));
  auto flat = set.inputs(idx, 0);
  EXPECT_EQ(flat.shape(), (grad::Shape{2, store->width}));
  // The flat input is the last step of the window.
  for (std::size_t k = 0; k < store->width; ++k) EXPECT_EQ(flat.at(k), seq.at(2 * store->width + k));
  EXPECT_EQ(set.reads(), 2u);
  EXPECT_THROW(set.inputs(idx, 4), ShapeError);
}

TEST(Examples, WindowsMayReachIntoEarlierSlices) {
  auto p = synthetic_panel(2, 20, 1, 0);
  auto store = make_store(p);
  auto months = split_temporal(*store->panel, SplitSpec{});
  auto splits = make_splits(store, months, 4);
  // Validation starts at month 15; its first examples still use a full window.
  EXPECT_EQ(splits.validation.examples().front().month, months.validation.begin);
  EXPECT_EQ(splits.test.size(), 2u);
}
