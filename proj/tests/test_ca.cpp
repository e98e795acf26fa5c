#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <numbers>
#include <queue>

#include "firegen/ca.hpp"
#include "test_support.hpp"

using namespace firegen;
using ca::CAParams;
using ca::CellState;
using geo::Cell;

namespace {

CAParams neutral(double p_h) {
  CAParams p;
  p.p_h = p_h;
  p.veg_gain = 0.0;
  p.den_gain = 0.0;
  return p;
}

geo::Ecoregion synthetic(int n, std::uint64_t seed, double wind = 5.0) {
  geo::SyntheticEcoregionConfig cfg;
  cfg.size = n;
  cfg.wind_speed = wind;
  return geo::synth_ecoregion(seed, cfg);
}

// Flood fill over the 8-neighbourhood; returns the number of burned cells
// reachable from `start`.
std::size_t connected_size(std::span<const float> frame, int h, int w, Cell start) {
  std::vector<std::uint8_t> seen(frame.size(), 0);
  std::queue<Cell> todo;
  todo.push(start);
  seen[static_cast<std::size_t>(start.row) * w + start.col] = 1;
  std::size_t n = 0;
  while (!todo.empty()) {
    const Cell c = todo.front();
    todo.pop();
    ++n;
    for (const auto& d : ca::kNeighbours) {
      const Cell x{c.row + d[0], c.col + d[1]};
      if (x.row < 0 || x.row >= h || x.col < 0 || x.col >= w) continue;
      const auto i = static_cast<std::size_t>(x.row) * w + x.col;
      if (seen[i] || frame[i] < 0.5f) continue;
      seen[i] = 1;
      todo.push(x);
    }
  }
  return n;
}

}  // namespace

TEST(CellState, TransitionTable) {
  EXPECT_TRUE(ca::legal_transition(CellState::Unburned, CellState::Burning));
  EXPECT_TRUE(ca::legal_transition(CellState::Burning, CellState::Burned));
  EXPECT_TRUE(ca::legal_transition(CellState::Burned, CellState::Burned));
  EXPECT_FALSE(ca::legal_transition(CellState::Unburned, CellState::Burned));
  EXPECT_FALSE(ca::legal_transition(CellState::Burned, CellState::Burning));
  EXPECT_FALSE(ca::legal_transition(CellState::Unburnable, CellState::Burning));
  EXPECT_FALSE(ca::legal_transition(CellState::Burning, CellState::Unburned));
}

TEST(BurnProbability, NeutralFactorsGiveOne) {
  const auto eco = fgtest::flat_ecoregion(16);
  EXPECT_DOUBLE_EQ(ca::burn_probability(neutral(1.0), eco, {5, 5}, {5, 6}), 1.0);
  EXPECT_DOUBLE_EQ(ca::burn_probability(neutral(0.3), eco, {5, 5}, {4, 4}), 0.3);
  EXPECT_THROW(ca::burn_probability(neutral(1.0), eco, {5, 5}, {5, 7}), InvalidArgument);
}

TEST(BurnProbability, UnburnableReceiverIsZero) {
  const auto eco = fgtest::flat_ecoregion(16, 0.01f);
  EXPECT_EQ(ca::burn_probability(neutral(1.0), eco, {5, 5}, {5, 6}), 0.0);
}

TEST(BurnProbability, MatchesAnalyticProduct) {
  const auto eco = synthetic(32, 3);
  const CAParams p;
  const Cell d{10, 10}, r{9, 11};
  const double veg = eco.vegetation_density().at(r), can = eco.canopy_cover().at(r);
  const double theta_s = std::atan((eco.elevation().at(r) - eco.elevation().at(d)) /
                                   (30.0 * std::sqrt(2.0)));
  // Direction (-1, +1) is bearing pi/4, the same as the wind: theta_w = 0.
  const double expected = std::clamp(0.58 * (1 + 0.8 * (veg - 0.5)) * (1 + 0.6 * (can - 0.5)) *
                                         std::exp(0.078 * theta_s) * std::exp(0.045 * 5.0),
                                     0.0, 1.0);
  EXPECT_NEAR(ca::burn_probability(p, eco, d, r), expected, 1e-6);
}

TEST(BurnProbability, MonteCarloFrequency) {
  const auto eco = synthetic(32, 21);
  const CAParams p;
  const Cell donor{16, 16}, receiver{17, 16};
  const double prob = ca::burn_probability(p, eco, donor, receiver);
  ASSERT_GT(prob, 0.0);
  ASSERT_LT(prob, 1.0);
  auto base = ca::FireState::initial(eco);
  // Isolate the pair: every other cell burnable neighbour of the donor is made
  // unburnable so only the receiver can ignite.
  for (const auto& d : ca::kNeighbours) {
    const Cell c{donor.row + d[0], donor.col + d[1]};
    if (!(c == receiver)) base.states[base.index(c)] = CellState::Unburnable;
  }
  base.ignite(donor);
  const ca::SpreadTable table(p, eco);
  Rng rng(99);
  const int trials = 20000;
  int hits = 0;
  for (int i = 0; i < trials; ++i)
    hits += ca::step(base, table, p, rng).at(receiver) == CellState::Burning;
  const double sigma = std::sqrt(trials * prob * (1 - prob));
  EXPECT_LE(std::abs(hits - trials * prob), 3 * sigma);
}

TEST(Step, NoDonorsNoChange) {
  const auto eco = synthetic(16, 1);
  auto s = ca::FireState::initial(eco);
  Rng rng(1);
  const auto next = ca::step(s, eco, CAParams{}, rng);
  EXPECT_EQ(next.states, s.states);
  EXPECT_EQ(next.step_index, 1);
}

TEST(Step, CertainSpreadToAllNeighbours) {
  const auto eco = fgtest::flat_ecoregion(16);
  auto s = ca::FireState::initial(eco);
  s.ignite({8, 8});
  Rng rng(2);
  const auto next = ca::step(s, eco, neutral(1.0), rng);
  EXPECT_EQ(next.count(CellState::Burning), 8u);
  EXPECT_EQ(next.at({8, 8}), CellState::Burned);
}

TEST(Step, ShapeMismatchRejected) {
  const auto eco = fgtest::flat_ecoregion(16);
  auto s = ca::FireState::initial(fgtest::flat_ecoregion(12));
  Rng rng(3);
  EXPECT_THROW(ca::step(s, eco, CAParams{}, rng), InvalidArgument);
}

TEST(Step, NeighbourCountDistributionChiSquare) {
  // Heterogeneous probabilities around the centre cell; the exact law of the
  // number of new ignitions is obtained by enumerating all 2^8 outcomes.
  const auto eco = synthetic(16, 17, 4.0);
  CAParams p;
  p.p_h = 0.45;
  const Cell centre{8, 8};
  std::array<double, 8> prob{};
  for (std::size_t k = 0; k < 8; ++k)
    prob[k] = ca::burn_probability(
        p, eco, centre, {centre.row + ca::kNeighbours[k][0], centre.col + ca::kNeighbours[k][1]});
  std::array<double, 9> law{};
  for (unsigned mask = 0; mask < 256; ++mask) {
    double pr = 1.0;
    int n = 0;
    for (std::size_t k = 0; k < 8; ++k) {
      const bool on = (mask >> k) & 1u;
      pr *= on ? prob[k] : 1.0 - prob[k];
      n += on;
    }
    law[static_cast<std::size_t>(n)] += pr;
  }
  auto s = ca::FireState::initial(eco);
  s.ignite(centre);
  const ca::SpreadTable table(p, eco);
  Rng rng(2024);
  const int reps = 10000;
  std::array<int, 9> observed{};
  for (int i = 0; i < reps; ++i)
    ++observed[ca::step(s, table, p, rng).count(CellState::Burning)];

  // Merge sparse tail bins so every expected count is >= 5.
  std::vector<double> exp_bins, obs_bins;
  double e_acc = 0, o_acc = 0;
  for (std::size_t n = 0; n < 9; ++n) {
    e_acc += law[n] * reps;
    o_acc += observed[n];
    if (e_acc >= 5.0) {
      exp_bins.push_back(e_acc);
      obs_bins.push_back(o_acc);
      e_acc = o_acc = 0;
    }
  }
  exp_bins.back() += e_acc;
  obs_bins.back() += o_acc;
  double chi2 = 0;
  for (std::size_t i = 0; i < exp_bins.size(); ++i)
    chi2 += (obs_bins[i] - exp_bins[i]) * (obs_bins[i] - exp_bins[i]) / exp_bins[i];
  ASSERT_GE(exp_bins.size(), 3u);
  EXPECT_GT(fgtest::chi2_pvalue(chi2, static_cast<double>(exp_bins.size() - 1)), 0.01);
}

TEST(Simulate, ZeroSpreadKeepsIgnitionOnly) {
  const auto eco = fgtest::flat_ecoregion(16);
  const auto seq = ca::simulate(eco, neutral(0.0), {8, 8}, 2, 5);
  EXPECT_EQ(seq.frame(0)[8 * 16 + 8], 1.0f);
  EXPECT_TRUE(std::equal(seq.frame(0).begin(), seq.frame(0).end(), seq.frame(1).begin()));
  EXPECT_THROW(ca::simulate(eco, neutral(0.0), {8, 8}, 1, 5), InvalidArgument);
  EXPECT_THROW(ca::simulate(fgtest::flat_ecoregion(16, 0.0f), neutral(0.5), {8, 8}, 4, 5),
               InvalidArgument);
}

TEST(Simulate, InvariantsOverManyRuns) {
  const auto eco = synthetic(64, 8);
  CAParams p;
  p.steps_per_snapshot = 1;
  const auto mask = eco.unburnable_mask();
  Rng rng(4);
  for (int run = 0; run < 20; ++run) {
    const auto ign = ca::sample_ignition(rng, eco);
    const auto seq = ca::simulate(eco, p, ign, 16, stable_hash(4, "run", run));
    EXPECT_EQ(seq.ignition, ign);
    std::size_t prev = 0;
    for (int t = 0; t < seq.frames; ++t) {
      auto f = seq.frame(t);
      std::size_t cnt = 0;
      for (std::size_t i = 0; i < f.size(); ++i) {
        ASSERT_TRUE(f[i] == 0.0f || f[i] == 1.0f);
        if (mask[i]) {
          ASSERT_EQ(f[i], 0.0f);
        }
        if (t > 0) {
          ASSERT_GE(f[i], seq.frame(t - 1)[i]);
        }
        cnt += f[i] > 0.5f;
      }
      if (t == 0) {
        EXPECT_EQ(cnt, 1u);
      }
      EXPECT_GE(cnt, prev);
      prev = cnt;
    }
  }
}

TEST(Simulate, StateLegalityAfterEveryStep) {
  const auto eco = synthetic(32, 12);
  CAParams p;
  p.burning_duration_steps = 2;
  auto s = ca::FireState::initial(eco);
  Rng rng(5);
  s.ignite(ca::sample_ignition(rng, eco));
  const ca::SpreadTable table(p, eco);
  for (int k = 0; k < 40; ++k) {
    const auto next = ca::step(s, table, p, rng);
    for (std::size_t i = 0; i < s.states.size(); ++i) {
      ASSERT_TRUE(ca::legal_transition(s.states[i], next.states[i]));
      ASSERT_EQ(next.burn_clock[i] > 0, next.states[i] == CellState::Burning);
    }
    s = next;
  }
}

TEST(Simulate, ConnectedGrowthAtFullSize) {
  const auto eco = synthetic(128, 31);
  const CAParams p;
  Rng rng(6);
  const auto ign = ca::sample_ignition(rng, eco);
  const auto seq = ca::simulate(eco, p, ign, 16, 77);
  const auto last = seq.frame(15);
  std::size_t total = 0;
  for (float v : last) total += v > 0.5f;
  EXPECT_GT(total, 1u);
  EXPECT_EQ(connected_size(last, 128, 128, ign), total);
}

TEST(Simulate, DeterministicGivenSeed) {
  const auto eco = synthetic(32, 2);
  const auto a = ca::simulate(eco, CAParams{}, {16, 16}, 8, 42);
  const auto b = ca::simulate(eco, CAParams{}, {16, 16}, 8, 42);
  EXPECT_EQ(a, b);
  const auto c = ca::simulate(eco, CAParams{}, {16, 16}, 8, 43);
  EXPECT_EQ(c.seed, 43u);
}

TEST(Simulate, IsotropicWithoutWindOrSlope) {
  const auto eco = fgtest::flat_ecoregion(64);
  CAParams p = neutral(0.35);
  p.steps_per_snapshot = 1;
  const Cell ign{32, 32};
  std::array<double, 4> extent{};  // up, down, left, right
  const int runs = 200;
  for (int run = 0; run < runs; ++run) {
    const auto seq = ca::simulate(eco, p, ign, 16, stable_hash(1, "iso", run));
    const int t = seq.frames - 1;
    const std::array<std::array<int, 2>, 4> dirs{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};
    for (std::size_t d = 0; d < 4; ++d) {
      int far = 0;
      for (int k = 1; k < 32; ++k)
        if (seq.at(t, ign.row + dirs[d][0] * k, ign.col + dirs[d][1] * k) > 0.5f) far = k;
      extent[d] += far;
    }
  }
  const double lo = *std::min_element(extent.begin(), extent.end());
  const double hi = *std::max_element(extent.begin(), extent.end());
  EXPECT_GT(lo, 0.0);
  EXPECT_LE((hi - lo) / hi, 0.10);
}

TEST(Simulate, WindPushesBarycentreDownwind) {
  // Wind blowing toward increasing column (bearing pi/2).
  const auto eco = fgtest::flat_ecoregion(64, 0.5f, 0.5f, 12.0, std::numbers::pi / 2);
  CAParams p = neutral(0.3);
  p.steps_per_snapshot = 1;
  const Cell ign{32, 32};
  int downwind = 0;
  const int runs = 50;
  for (int run = 0; run < runs; ++run) {
    const auto seq = ca::simulate(eco, p, ign, 10, stable_hash(2, "wind", run));
    double sum = 0, n = 0;
    auto f = seq.frame(9);
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c)
        if (f[static_cast<std::size_t>(r) * 64 + c] > 0.5f) sum += c, ++n;
    downwind += sum / n > ign.col;
  }
  // One-sided sign test: P(X >= 33 | n=50, p=0.5) < 0.02.
  EXPECT_GE(downwind, 33);
}

TEST(SampleIgnition, CentralBox) {
  Rng rng(7);
  for (int i = 0; i < 2000; ++i) {
    const auto c = ca::sample_ignition(rng, 128, 128);
    ASSERT_GE(c.row, 32);
    ASSERT_LT(c.row, 96);
    ASSERT_GE(c.col, 32);
    ASSERT_LT(c.col, 96);
  }
}

TEST(SampleIgnition, UniformMarginals) {
  Rng rng(8);
  const int draws = 10000;
  std::array<int, 32> rows{}, cols{};
  for (int i = 0; i < draws; ++i) {
    const auto c = ca::sample_ignition(rng, 64, 64);
    ++rows[static_cast<std::size_t>(c.row - 16)];
    ++cols[static_cast<std::size_t>(c.col - 16)];
  }
  for (const auto* hist : {&rows, &cols}) {
    const double e = draws / 32.0;
    double chi2 = 0;
    for (int v : *hist) chi2 += (v - e) * (v - e) / e;
    EXPECT_GT(fgtest::chi2_pvalue(chi2, 31), 0.01);
  }
}

TEST(SampleIgnition, DegenerateCentre) {
  std::vector<std::uint8_t> mask(64 * 64, 0);
  for (int r = 16; r < 48; ++r)
    for (int c = 16; c < 48; ++c) mask[static_cast<std::size_t>(r) * 64 + c] = 1;
  Rng rng(9);
  EXPECT_THROW(ca::sample_ignition(rng, 64, 64, mask), DegenerateError);
}

TEST(SequenceIO, RoundTrip) {
  const auto dir = fgtest::temp_dir("fseq");
  const auto eco = synthetic(16, 2);
  const auto seq = ca::simulate(eco, CAParams{}, {8, 8}, 5, 1234);
  ca::save_sequence(seq, dir / "a.fseq");
  EXPECT_EQ(ca::load_sequence(dir / "a.fseq"), seq);
  EXPECT_THROW(ca::load_sequence(dir / "nope.fseq"), MissingInput);
  std::filesystem::remove_all(dir);
}
