#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "deepap/eval/stats.h"

using namespace deepap;
using namespace deepap::eval;

namespace {

const std::filesystem::path fixtures = DEEPAP_FIXTURE_DIR;

// `months` x `assets` panel with realized returns from `seed`; predictions
// are realized + noise_scale * N(0,1).
ForecastPanel synthetic(const std::string& model, std::size_t months, std::size_t assets, double noise_scale,
                        std::uint64_t seed, std::uint64_t realized_seed = 1) {
  std::mt19937_64 rr(realized_seed), rp(seed);
  std::normal_distribution<double> normal;
  ForecastPanel p{model, "OOS", {}};
  for (std::size_t m = 0; m < months; ++m) {
    for (std::size_t a = 0; a < assets; ++a) {
      const double r = 0.1 * normal(rr);
      p.rows.push_back({static_cast<data::MonthIndex>(24000 + m), "A" + std::to_string(10 + a), r + noise_scale * normal(rp), r});
    }
  }
  return p;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(R2, UnitCases) {
  const std::vector<double> r{1, 2};
  EXPECT_EQ(r2_oos(r, r), 100.0);
  EXPECT_EQ(r2_oos(std::vector<double>{0, 0}, r), 0.0);
  EXPECT_NEAR(r2_oos(std::vector<double>{1, 1}, r), 80.0, 1e-10);
  EXPECT_THROW(r2_oos(std::vector<double>{1, 1}, std::vector<double>{0, 0}), DataError);
  EXPECT_THROW(r2_oos(std::vector<double>{}, std::vector<double>{}), DataError);
}

TEST(R2, ZeroForecastIsExactlyZeroAndOrderFree) {
  auto p = synthetic("m", 12, 9, 0.05, 3);
  for (auto& row : p.rows) row.predicted = 0.0;
  EXPECT_EQ(r2_oos(p), 0.0);

  auto q = synthetic("m", 12, 9, 0.05, 3);
  auto pred = q.predicted(), real = q.realized();
  std::vector<std::size_t> perm(pred.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(4));
  std::vector<double> pp, rr;
  for (auto i : perm) {
    pp.push_back(pred[i]);
    rr.push_back(real[i]);
  }
  EXPECT_NEAR(r2_oos(pp, rr), r2_oos(pred, real), 1e-10);
}

TEST(Dm, AntisymmetricToMachinePrecision) {
  auto a = synthetic("A", 30, 15, 0.05, 7), b = synthetic("B", 30, 15, 0.06, 8);
  for (std::size_t lag : {0u, 1u, 3u, 6u}) {
    EXPECT_NEAR(dm_test(a, b, lag), -dm_test(b, a, lag), 1e-12);
  }
}

TEST(Dm, DominantColumnModelGivesPositiveStatistic) {
  // B's errors are half of A's in every observation.
  auto a = synthetic("A", 24, 10, 0.05, 11);
  auto b = a;
  b.model = "B";
  for (auto& row : b.rows) row.predicted = row.realized + 0.5 * (row.predicted - row.realized);
  EXPECT_GT(dm_test(a, b), 0.0);
  EXPECT_LT(dm_test(b, a), 0.0);
}

TEST(Dm, LagZeroMatchesBruteForceTStatistic) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> normal(0.3, 1.0);
  std::vector<double> d(60);
  for (auto& v : d) v = normal(rng);
  // One-sample t statistic with the unbiased variance.
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= 60.0;
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double t = mean / std::sqrt(ss / 59.0 / 60.0);
  EXPECT_NEAR(dm_statistic(d, 0), t, 1e-8);
}

TEST(Dm, DifferentialIsTheCrossSectionalMean) {
  ForecastPanel a{"A", "OOS", {}}, b{"B", "OOS", {}};
  for (int m = 0; m < 2; ++m) {
    a.rows.push_back({m, "x", 1.0, 0.0});
    a.rows.push_back({m, "y", 0.0, 0.0});
    b.rows.push_back({m, "x", 0.0, 0.0});
    b.rows.push_back({m, "y", 2.0, 0.0});
  }
  // Month: mean of (1 - 0, 0 - 4) = -1.5.
  EXPECT_EQ(loss_differential(a, b), (std::vector<double>{-1.5, -1.5}));
}

TEST(Dm, ErrorsForCoverageShortSamplesAndIdenticalModels) {
  auto a = synthetic("A", 12, 5, 0.05, 1);
  auto b = synthetic("B", 12, 4, 0.05, 2);
  EXPECT_THROW(dm_test(a, b), DataError);
  auto shorter = synthetic("C", 7, 5, 0.05, 3);
  auto shorter2 = synthetic("D", 7, 5, 0.05, 4);
  EXPECT_THROW(dm_test(shorter, shorter2), DataError);
  auto same = a;
  same.model = "A2";
  EXPECT_THROW(dm_test(a, same), DegenerateComparison);
}

TEST(DmMatrix, EntriesAreThePairwiseTests) {
  std::vector<ForecastPanel> panels{synthetic("OLS", 20, 12, 0.08, 1), synthetic("MLP", 20, 12, 0.05, 2),
                                    synthetic("LSTM", 20, 12, 0.04, 3)};
  auto m = build_dm_matrix(panels);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_FALSE(m.cells[i][i].statistic.has_value());
    for (std::size_t j = i + 1; j < 3; ++j) {
      ASSERT_TRUE(m.cells[i][j].statistic.has_value());
      EXPECT_EQ(*m.cells[i][j].statistic, dm_test(panels[i], panels[j]));
      EXPECT_EQ(m.cells[i][j].significant, std::abs(*m.cells[i][j].statistic) > 1.96);
    }
  }
  EXPECT_THROW(build_dm_matrix({panels[0]}), DataError);
  auto bad = panels;
  bad[2] = synthetic("GRU", 20, 11, 0.04, 3);
  EXPECT_THROW(build_dm_matrix(bad), DataError);
}

TEST(DmMatrix, IdenticalModelsSurfaceDegenerateCell) {
  auto a = synthetic("A", 10, 6, 0.05, 1);
  auto b = a;
  b.model = "B";
  auto m = build_dm_matrix({a, b});
  EXPECT_FALSE(m.cells[0][1].statistic.has_value());
  EXPECT_EQ(m.cells[0][1].error, "degenerate");
}

TEST(DmMatrix, FlagBoundary) {
  EXPECT_TRUE(dm_significant(1.97));
  EXPECT_TRUE(dm_significant(-1.97));
  EXPECT_FALSE(dm_significant(1.95));
  EXPECT_FALSE(dm_significant(-1.95));
  EXPECT_FALSE(dm_significant(1.96));
}

TEST(DmMatrix, TextLayoutMatchesFixture) {
  DmMatrix m;
  m.models = {"OLS", "MLP", "LSTM"};
  m.cells.assign(3, std::vector<DmCell>(3));
  m.cells[0][1].statistic = 2.5;
  m.cells[0][1].significant = true;
  m.cells[0][2].statistic = 3.25;
  m.cells[0][2].significant = true;
  m.cells[1][2].statistic = -0.5;
  EXPECT_EQ(m.to_text(), read_file(fixtures / "dm_matrix.txt"));
}

TEST(R2Table, OrderAndFormatting) {
  std::vector<R2Entry> runs{{"MLP", "long", 5.0, 1.234}, {"OLS", "long", 100.0, -0.001}, {"MLP", "short", 1, 2}};
  auto t = build_r2_table(runs, {"OLS", "MLP"});
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_EQ(t.rows[0].model, "OLS");
  EXPECT_EQ(t.to_csv(), "model,span,is_r2,oos_r2\nOLS,long,100.00,0.00\nMLP,long,5.00,1.23\nMLP,short,1.00,2.00\n");
}

TEST(Forecasts, PersistedPanelsReproduceStatisticsBitExactly) {
  auto a = synthetic("A", 15, 8, 0.05, 5), b = synthetic("B", 15, 8, 0.07, 6);
  const auto dir = std::filesystem::temp_directory_path();
  write_forecasts(a, dir / "deepap_fa.csv");
  write_forecasts(b, dir / "deepap_fb.csv");
  auto ra = read_forecasts(dir / "deepap_fa.csv", "A", "OOS");
  auto rb = read_forecasts(dir / "deepap_fb.csv", "B", "OOS");
  EXPECT_EQ(r2_oos(ra), r2_oos(a));
  EXPECT_EQ(dm_test(ra, rb), dm_test(a, b));
  R2Table live = build_r2_table({{"A", "s", 0.0, r2_oos(a)}}, {"A"});
  R2Table again = build_r2_table({{"A", "s", 0.0, r2_oos(ra)}}, {"A"});
  EXPECT_EQ(live.to_csv(), again.to_csv());
}
