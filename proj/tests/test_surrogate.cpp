#include <gtest/gtest.h>

#include "firegen/surrogate.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace firegen;
using surrogate::LstmConfig;
using surrogate::LstmSurrogate;
using surrogate::TrainConfig;
using surrogate::Window;
using surrogate::WindowConfig;

namespace {

Eigen::MatrixXd random_latents(int q, int steps, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(q, steps);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

LstmConfig small(int hidden, int layers) {
  LstmConfig c;
  c.hidden_size = hidden;
  c.num_layers = layers;
  return c;
}

}  // namespace

TEST(MakeWindows, CountsAndContents) {
  Eigen::MatrixXd seq(1, 16);
  for (int t = 0; t < 16; ++t) seq(0, t) = t;
  const auto w = surrogate::make_windows(seq, {4, 4});
  ASSERT_EQ(w.size(), 9u);
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(w[0].input(0, k), k);
    EXPECT_EQ(w[0].target(0, k), 4 + k);
  }
  EXPECT_EQ(w[8].target(0, 3), 15);
  EXPECT_EQ(surrogate::make_windows(seq.leftCols(8), {4, 4}).size(), 1u);
  EXPECT_THROW(surrogate::make_windows(seq.leftCols(7), {4, 4}), InvalidArgument);
  for (int steps = 2; steps <= 20; ++steps)
    for (int mi = 1; mi <= 5; ++mi)
      for (int mo = 1; mo <= 5; ++mo)
        if (steps >= mi + mo) {
          EXPECT_EQ(surrogate::make_windows(Eigen::MatrixXd::Zero(3, steps), {mi, mo}).size(),
                    static_cast<std::size_t>(steps - mi - mo + 1));
        }
}

TEST(LstmGradient, MatchesFiniteDifferences) {
  for (auto kind : {surrogate::LossKind::Mse}) {
    auto cfg = small(8, 2);
    cfg.loss = kind;
    LstmSurrogate<double> model(5, cfg, 3);
    const auto windows = surrogate::make_windows(random_latents(5, 12, 4), cfg.window);
    model.fit_normalization(windows);
    const auto batch = model.make_batch(windows);
    for (auto* p : model.parameters()) p->zero_grad();
    model.forward_backward(batch, true);
    int checked = 0;
    for (auto* p : model.parameters()) {
      // Every entry of small groups, a strided subset of the larger ones; this
      // covers all four gate blocks of every layer.
      const Eigen::Index stride = std::max<Eigen::Index>(1, p->value.size() / 37);
      for (Eigen::Index i = 0; i < p->value.size(); i += stride) {
        const double fd = fgtest::central_difference(
            [&] { return model.loss(batch); }, p->value.data()[i], 1e-5);
        EXPECT_LE(fgtest::rel_error(p->grad.data()[i], fd, 1e-7), 1e-4) << p->name << "[" << i << "]";
        ++checked;
      }
    }
    EXPECT_GT(checked, 200);
  }
}

TEST(LstmTrain, ZeroLearningRateFreezes) {
  LstmSurrogate<double> model(4, small(8, 1), 1);
  const auto windows = surrogate::make_windows(random_latents(4, 16, 2), {4, 4});
  TrainConfig tc;
  tc.epochs = 5;
  tc.learning_rate = 0.0;
  model.fit_normalization(windows);
  tc.fit_normalization = false;
  std::vector<Eigen::MatrixXd> before;
  for (auto* p : model.parameters()) before.push_back(p->value);
  const auto hist = surrogate::train(model, windows, windows, tc);
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) EXPECT_EQ(params[i]->value, before[i]);
  for (double l : hist.train) EXPECT_DOUBLE_EQ(l, hist.train.front());
}

TEST(LstmTrain, OverfitsSingleWindow) {
  LstmSurrogate<double> model(6, small(16, 1), 5);
  auto windows = surrogate::make_windows(random_latents(6, 8, 6), {4, 4});
  ASSERT_EQ(windows.size(), 1u);
  TrainConfig tc;
  tc.epochs = 200;
  tc.learning_rate = 1e-2;
  const auto hist = surrogate::train(model, windows, {}, tc);
  EXPECT_LT(hist.train.back(), 0.01 * hist.train.front());
}

TEST(LstmTrain, DeterministicAndBestValidationRestored) {
  const auto train_w = surrogate::make_windows(random_latents(3, 30, 7), {4, 4});
  const auto val_w = surrogate::make_windows(random_latents(3, 12, 8), {4, 4});
  TrainConfig tc;
  tc.epochs = 30;
  tc.batch_size = 4;
  tc.learning_rate = 5e-3;
  tc.seed = 9;
  LstmSurrogate<double> a(3, small(8, 2), 1), b(3, small(8, 2), 1);
  const auto ha = surrogate::train(a, train_w, val_w, tc);
  const auto hb = surrogate::train(b, train_w, val_w, tc);
  EXPECT_EQ(ha.train, hb.train);
  EXPECT_EQ(ha.validation, hb.validation);
  EXPECT_LE(ha.best_validation, ha.validation.front());
  for (double v : ha.train) EXPECT_TRUE(std::isfinite(v));
  const auto val_batch = a.make_batch(val_w);
  EXPECT_DOUBLE_EQ(a.loss(val_batch), ha.best_validation);
}

TEST(LstmTrain, DivergenceIsReported) {
  LstmSurrogate<double> model(2, small(4, 1), 1);
  auto windows = surrogate::make_windows(random_latents(2, 10, 1), {4, 4});
  windows[0].target(0, 0) = std::numeric_limits<double>::quiet_NaN();
  TrainConfig tc;
  tc.epochs = 2;
  tc.fit_normalization = false;
  EXPECT_THROW(surrogate::train(model, windows, {}, tc), NumericalFailure);
  EXPECT_THROW(surrogate::train(model, std::span<const Window>{}, {}, tc), InvalidArgument);
}

TEST(Rollout, FeedbackContract) {
  LstmSurrogate<double> model(3, small(8, 1), 2);
  const Eigen::MatrixXd seed = random_latents(3, 4, 3);
  const auto one = surrogate::rollout(model, seed, 4);
  EXPECT_EQ(one, model.predict(seed));
  const auto two = surrogate::rollout(model, seed, 8);
  EXPECT_EQ(two.leftCols(4), one);
  EXPECT_EQ(two.rightCols(4), model.predict(one));
  EXPECT_EQ(surrogate::rollout(model, seed, 6).cols(), 6);
  EXPECT_EQ(surrogate::rollout(model, seed, 8), two);
  EXPECT_THROW(surrogate::rollout(model, seed, 3), InvalidArgument);
}

TEST(Rollout, IdentityModelIsConstant) {
  // Targets repeat the last input step; a model that learned this map must
  // produce a flat rollout.
  Rng rng(12);
  std::vector<Window> windows;
  for (int k = 0; k < 256; ++k) {
    Window w{Eigen::MatrixXd(2, 4), Eigen::MatrixXd(2, 4)};
    for (Eigen::Index i = 0; i < w.input.size(); ++i) w.input.data()[i] = rng.uniform(-1, 1);
    w.target = w.input.col(3).replicate(1, 4);
    windows.push_back(w);
  }
  LstmSurrogate<double> model(2, small(24, 1), 4);
  TrainConfig tc;
  tc.epochs = 300;
  tc.learning_rate = 1e-2;
  tc.batch_size = 32;
  tc.fit_normalization = false;
  const auto hist = surrogate::train(model, windows, {}, tc);
  ASSERT_LT(hist.train.back(), 1e-3);
  for (int k = 0; k < 5; ++k) {
    Eigen::MatrixXd seed(2, 4);
    for (Eigen::Index i = 0; i < seed.size(); ++i) seed.data()[i] = rng.uniform(-0.8, 0.8);
    const auto out = surrogate::rollout(model, seed, 16);
    for (int t = 0; t < 16; ++t) EXPECT_LE((out.col(t) - seed.col(3)).cwiseAbs().maxCoeff(), 0.1);
  }
}

TEST(PredictBurned, ZeroModelAndRanges) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(64, 6);
  Rng rng(1);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform();
  const auto basis = pod::fit(pod::SnapshotMatrix(x), 4);
  LstmSurrogate<double> zero(4, small(8, 1), 1);
  zero.zero_parameters();
  ca::BurnedSequence obs(4, 8, 8);
  const auto pred = surrogate::predict_burned(zero, basis, obs, 4);
  for (float v : pred.continuous.data) EXPECT_EQ(v, 0.0f);
  for (float v : pred.binary.data) EXPECT_EQ(v, 0.0f);

  LstmSurrogate<double> random(4, small(8, 1), 9);
  Eigen::VectorXd scale = Eigen::VectorXd::Constant(4, 30.0);
  random.set_normalization(Eigen::VectorXd::Zero(4), scale);
  for (int k = 0; k < 4; ++k)
    for (auto& v : obs.frame(k)) v = static_cast<float>(rng.uniform());
  const auto p2 = surrogate::predict_burned(random, basis, obs, 8);
  EXPECT_EQ(p2.continuous.frames, 8);
  for (std::size_t i = 0; i < p2.continuous.data.size(); ++i) {
    const float v = p2.continuous.data[i];
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
    EXPECT_EQ(p2.binary.data[i], v > 0.4f ? 1.0f : 0.0f);
  }
  EXPECT_THROW(surrogate::predict_burned(random, basis, ca::BurnedSequence(4, 9, 9), 4), InvalidArgument);
}

TEST(LstmCheckpoint, RoundTripIsBitExact) {
  const auto dir = fgtest::temp_dir("lstm");
  LstmSurrogate<double> model(5, small(8, 2), 3);
  const auto windows = surrogate::make_windows(random_latents(5, 12, 4), {4, 4});
  model.fit_normalization(windows);
  model.save(dir / "m.ckpt", "pod.fpod", "0123456789abcdef");
  const auto loaded = LstmSurrogate<double>::load(dir / "m.ckpt");
  EXPECT_EQ(loaded.pod_path, "pod.fpod");
  EXPECT_EQ(loaded.pod_checksum, "0123456789abcdef");
  for (const auto& w : windows) EXPECT_EQ(loaded.model.predict(w.input), model.predict(w.input));
  std::filesystem::remove_all(dir);
}
