#include <gtest/gtest.h>

#include "firegen/metrics.hpp"
#include "test_support.hpp"

using namespace firegen;
using ca::BurnedSequence;

namespace {

// Direct evaluation of the SSIM formula with a full 2D window per position.
double ssim_direct(const std::vector<float>& a, const std::vector<float>& b, int h, int w) {
  const auto g = metrics::gaussian_window(11, 1.5);
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  int n = 0;
  for (int r = 0; r + 11 <= h; ++r)
    for (int c = 0; c + 11 <= w; ++c) {
      double mx = 0, my = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double wt = g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(j)];
          const auto k = static_cast<std::size_t>((r + i) * w + c + j);
          mx += wt * a[k];
          my += wt * b[k];
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double wt = g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(j)];
          const auto k = static_cast<std::size_t>((r + i) * w + c + j);
          vx += wt * (a[k] - mx) * (a[k] - mx);
          vy += wt * (b[k] - my) * (b[k] - my);
          cxy += wt * (a[k] - mx) * (b[k] - my);
        }
      total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++n;
    }
  return total / n;
}

std::vector<float> random_frame(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> f(static_cast<std::size_t>(n));
  for (auto& v : f) v = static_cast<float>(rng.uniform());
  return f;
}

BurnedSequence with_counts(std::initializer_list<int> counts) {
  BurnedSequence s(static_cast<int>(counts.size()), 8, 8);
  int t = 0;
  for (int c : counts) {
    for (int i = 0; i < c; ++i) s.frame(t)[static_cast<std::size_t>(i)] = 1.0f;
    ++t;
  }
  return s;
}

}  // namespace

TEST(Threshold, StrictInequality) {
  const std::vector<float> f{0.41f, 0.39f, 0.40f, 0.0f, 1.0f};
  const auto b = metrics::threshold_burned(f);
  EXPECT_EQ(b, (std::vector<float>{1, 0, 0, 0, 1}));
  const std::vector<float> bin{0, 1, 1, 0};
  EXPECT_EQ(metrics::threshold_burned(bin), bin);
  EXPECT_EQ(metrics::threshold_burned(std::vector<float>(9, 0.0f)), std::vector<float>(9, 0.0f));
}

TEST(RelativeMismatch, Definition) {
  std::vector<float> truth(400, 0.0f), pred(400, 0.0f);
  for (int i = 0; i < 100; ++i) truth[static_cast<std::size_t>(i)] = 1.0f;
  EXPECT_EQ(metrics::relative_mismatch(truth, truth), 0.0);
  pred = truth;
  for (int i = 0; i < 10; ++i) pred[static_cast<std::size_t>(i)] = 0.0f;
  for (int i = 200; i < 209; ++i) pred[static_cast<std::size_t>(i)] = 1.0f;
  EXPECT_DOUBLE_EQ(metrics::relative_mismatch(pred, truth), 0.19);
  // Normalised by the truth area, so swapping arguments changes the value.
  EXPECT_NE(metrics::relative_mismatch(truth, pred), 0.19);
  EXPECT_THROW(metrics::relative_mismatch(pred, std::vector<float>(400, 0.0f)), DegenerateError);
  EXPECT_THROW(metrics::relative_mismatch(std::vector<float>(3), truth), InvalidArgument);
}

TEST(RelativeMismatch, SequenceAverage) {
  auto truth = with_counts({4, 8});
  auto pred = with_counts({2, 8});
  EXPECT_DOUBLE_EQ(metrics::relative_mismatch(pred, truth), (0.5 + 0.0) / 2);
}

TEST(Ssim, IdentityAndConstants) {
  const auto a = random_frame(32 * 32, 1);
  EXPECT_NEAR(metrics::ssim(a, a, 32, 32), 1.0, 1e-9);
  const std::vector<float> zero(32 * 32, 0.0f), one(32 * 32, 1.0f);
  const double closed_form = 1e-4 * 9e-4 / ((1 + 1e-4) * 9e-4);
  EXPECT_NEAR(metrics::ssim(zero, one, 32, 32), closed_form, 1e-12);
  EXPECT_LE(metrics::ssim(zero, one, 32, 32), 0.01);
  EXPECT_THROW(metrics::ssim(std::vector<float>(100), std::vector<float>(100), 10, 10),
               InvalidArgument);
}

TEST(Ssim, MatchesDirectWindowedFormula) {
  for (std::uint64_t s = 0; s < 4; ++s) {
    const auto a = random_frame(32 * 32, 10 + s);
    const auto b = random_frame(32 * 32, 20 + s);
    const double fast = metrics::ssim(a, b, 32, 32);
    EXPECT_NEAR(fast, ssim_direct(a, b, 32, 32), 1e-6);
    EXPECT_NEAR(fast, metrics::ssim(b, a, 32, 32), 1e-12);
    EXPECT_GE(fast, -1.0);
    EXPECT_LE(fast, 1.0);
  }
}

TEST(AreaCurve, CountsAndHours) {
  const auto s = with_counts({1, 3, 3, 10});
  const auto curve = metrics::burned_area_curve(s);
  ASSERT_EQ(curve.size(), 4u);
  EXPECT_EQ(curve[0].burned, 1u);
  EXPECT_EQ(curve[3].burned, 10u);
  EXPECT_DOUBLE_EQ(curve[2].hours, 12.0);
  for (const auto& p : metrics::burned_area_curve(BurnedSequence(3, 8, 8))) EXPECT_EQ(p.burned, 0u);
}

TEST(AreaCurve, CaOutputIsCumulative) {
  geo::SyntheticEcoregionConfig cfg;
  cfg.size = 32;
  const auto eco = geo::synth_ecoregion(1, cfg);
  const auto seq = ca::simulate(eco, ca::CAParams{}, {16, 16}, 16, 3);
  const auto curve = metrics::burned_area_curve(seq);
  EXPECT_EQ(curve[0].burned, 1u);
  for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_GE(curve[i].burned, curve[i - 1].burned);
  EXPECT_EQ(metrics::monotonicity_violation_rate(seq), 0.0);
}

TEST(Barycentre, Examples) {
  BurnedSequence s(3, 64, 64);
  s.at(2, 10, 20) = 1.0f;
  EXPECT_EQ(metrics::ignition_barycentre(s), (geo::Cell{10, 20}));
  BurnedSequence block(3, 64, 64);
  for (int r = 49; r <= 51; ++r)
    for (int c = 49; c <= 51; ++c) block.at(2, r, c) = 1.0f;
  EXPECT_EQ(metrics::ignition_barycentre(block), (geo::Cell{50, 50}));
  BurnedSequence pair(3, 8, 8);
  pair.at(2, 0, 0) = 1.0f;
  pair.at(2, 0, 2) = 1.0f;
  EXPECT_EQ(metrics::ignition_barycentre(pair), (geo::Cell{0, 1}));
  EXPECT_THROW(metrics::ignition_barycentre(BurnedSequence(3, 8, 8)), DegenerateError);
  EXPECT_THROW(metrics::ignition_barycentre(pair, 48.0), InvalidArgument);
}

TEST(Covariates, UniformVegetationAndFlatTerrain) {
  const auto eco = fgtest::flat_ecoregion(32, 0.7f);
  std::vector<BurnedSequence> data;
  for (int i = 0; i < 3; ++i) data.push_back(ca::simulate(eco, ca::CAParams{}, {16, 16}, 13, 5 + i));
  for (const auto& row : metrics::area_vs_covariates(data, eco)) {
    EXPECT_NEAR(row.mean_vegetation, 0.7, 1e-6);
    EXPECT_EQ(row.mean_slope, 0.0);
    EXPECT_GE(row.final_area, 1u);
  }
}

TEST(Covariates, VegetationCorrelatesWithArea) {
  geo::SyntheticEcoregionConfig cfg;
  cfg.size = 64;
  const auto eco = geo::synth_ecoregion(42, cfg);
  ca::CAParams p;
  p.steps_per_snapshot = 1;
  Rng rng(5);
  std::vector<BurnedSequence> data;
  for (int i = 0; i < 50; ++i)
    data.push_back(ca::simulate(eco, p, ca::sample_ignition(rng, eco), 16, stable_hash(5, "cov", i)));
  std::vector<double> area, veg;
  for (const auto& row : metrics::area_vs_covariates(data, eco)) {
    area.push_back(static_cast<double>(row.final_area));
    veg.push_back(row.mean_vegetation);
  }
  EXPECT_GT(metrics::spearman(veg, area), 0.0);
}

TEST(Monotonicity, Examples) {
  EXPECT_DOUBLE_EQ(metrics::monotonicity_violation_rate(with_counts({5, 4, 6})), 0.5);
  EXPECT_DOUBLE_EQ(metrics::monotonicity_violation_rate(with_counts({3, 3, 3})), 0.0);
  EXPECT_THROW(metrics::monotonicity_violation_rate(with_counts({3})), InvalidArgument);
}

TEST(Statistics, RanksAndCorrelations) {
  const std::vector<double> x{1, 2, 2, 5};
  EXPECT_EQ(metrics::ranks(x), (std::vector<double>{1, 2.5, 2.5, 4}));
  const std::vector<double> y{10, 20, 30, 40}, z{1, 4, 9, 16};
  EXPECT_NEAR(metrics::pearson(y, y), 1.0, 1e-12);
  EXPECT_NEAR(metrics::spearman(y, z), 1.0, 1e-12);
  EXPECT_NEAR(metrics::ls_slope(y, z), metrics::pearson(y, z) * metrics::stddev(z) / metrics::stddev(y), 1e-12);
  EXPECT_DOUBLE_EQ(metrics::median({3, 1, 2, 10}), 2.5);
  EXPECT_DOUBLE_EQ(metrics::mean(y), 25.0);
}

TEST(TotalVariation, Examples) {
  std::vector<float> flat(64, 0.3f);
  EXPECT_EQ(metrics::total_variation(flat, 8, 8), 0.0);
  std::vector<float> checker(64);
  for (int i = 0; i < 64; ++i) checker[static_cast<std::size_t>(i)] = static_cast<float>((i / 8 + i % 8) % 2);
  EXPECT_DOUBLE_EQ(metrics::total_variation(checker, 8, 8), 1.0);
}
