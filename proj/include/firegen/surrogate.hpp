#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "firegen/binary_io.hpp"
#include "firegen/ca.hpp"
#include "firegen/errors.hpp"
#include "firegen/metrics.hpp"
#include "firegen/nn.hpp"
#include "firegen/pod.hpp"
#include "firegen/rng.hpp"

namespace firegen::surrogate {

using nn::Matrix;
using nn::Param;

struct WindowConfig {
  int m_in = 4;
  int m_out = 4;

  void validate() const {
    if (m_in < 1 || m_out < 1) throw InvalidArgument("window sizes must be >= 1");
  }
};

/// One training pair; columns are time steps, rows latent dimensions.
struct Window {
  Eigen::MatrixXd input;   // q x m_in
  Eigen::MatrixXd target;  // q x m_out
};

/// Slides the initial time step over a q x T latent sequence. Pair k covers
/// input steps [k, k+m_in) and target steps [k+m_in, k+m_in+m_out).
inline std::vector<Window> make_windows(const Eigen::MatrixXd& seq, const WindowConfig& cfg) {
  cfg.validate();
  const auto steps = static_cast<int>(seq.cols());
  if (steps < cfg.m_in + cfg.m_out)
    throw InvalidArgument("make_windows: sequence of length " + std::to_string(steps) +
                          " is shorter than m_in + m_out");
  std::vector<Window> out;
  out.reserve(static_cast<std::size_t>(steps - cfg.m_in - cfg.m_out + 1));
  for (int k = 0; k + cfg.m_in + cfg.m_out <= steps; ++k)
    out.push_back({seq.middleCols(k, cfg.m_in), seq.middleCols(k + cfg.m_in, cfg.m_out)});
  return out;
}

enum class LossKind : std::uint8_t { Mse = 0, Mae = 1 };

struct LstmConfig {
  int hidden_size = 128;
  int num_layers = 2;
  WindowConfig window{};
  LossKind loss = LossKind::Mse;
};

struct TrainConfig {
  int epochs = 500;
  double learning_rate = 1e-3;
  int batch_size = 16;
  int patience = 50;
  std::uint64_t seed = 0;
  bool fit_normalization = true;
  // Called after every epoch with (epoch, train_loss, validation_loss).
  std::function<void(int, double, double)> on_epoch;
};

struct LossHistory {
  std::vector<double> train;
  std::vector<double> validation;
  int best_epoch = -1;
  double best_validation = std::numeric_limits<double>::infinity();
};

/// Mini-batch in the model's normalized coordinates.
template <typename T>
struct Batch {
  std::vector<Matrix<T>> inputs;  // m_in matrices, q x B
  Matrix<T> target;               // (q * m_out) x B, step-major rows
  Eigen::Index size() const { return target.cols(); }
};

/// Stacked LSTM over normalized POD latents, with a linear head emitting all
/// m_out future steps from the final hidden state in one shot.
template <typename T = double>
class LstmSurrogate {
 public:
  LstmSurrogate(int q, LstmConfig cfg, std::uint64_t seed) : q_(q), cfg_(cfg) {
    if (q < 1) throw InvalidArgument("latent size must be >= 1");
    if (cfg.hidden_size < 1 || cfg.num_layers < 1)
      throw InvalidArgument("hidden_size and num_layers must be >= 1");
    cfg.window.validate();
    const int h = cfg.hidden_size;
    for (int l = 0; l < cfg.num_layers; ++l) {
      const int in = l == 0 ? q : h;
      const std::string p = "layer" + std::to_string(l) + ".";
      layers_.push_back({Param<T>(p + "w_input", 4 * h, in), Param<T>(p + "w_hidden", 4 * h, h),
                         Param<T>(p + "bias", 4 * h, 1)});
    }
    head_w_ = Param<T>("head.weight", q * cfg.window.m_out, h);
    head_b_ = Param<T>("head.bias", q * cfg.window.m_out, 1);
    mean_ = Eigen::VectorXd::Zero(q);
    scale_ = Eigen::VectorXd::Ones(q);

    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));
    for (Param<T>* p : parameters()) p->init_uniform(rng, bound);
  }

  int latent_size() const { return q_; }
  const LstmConfig& config() const { return cfg_; }
  const WindowConfig& window() const { return cfg_.window; }
  const Eigen::VectorXd& latent_mean() const { return mean_; }
  const Eigen::VectorXd& latent_scale() const { return scale_; }

  std::vector<Param<T>*> parameters() {
    std::vector<Param<T>*> out;
    for (auto& l : layers_) out.insert(out.end(), {&l.w_input, &l.w_hidden, &l.bias});
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    return out;
  }

  void zero_parameters() {
    for (Param<T>* p : parameters()) p->value.setZero();
  }

  void set_normalization(Eigen::VectorXd mean, Eigen::VectorXd scale) {
    if (mean.size() != q_ || scale.size() != q_)
      throw InvalidArgument("normalization statistics have the wrong length");
    if ((scale.array() <= 0.0).any()) throw InvalidArgument("normalization scale must be > 0");
    mean_ = std::move(mean);
    scale_ = std::move(scale);
  }

  /// Per-dimension mean and standard deviation over every step in the windows.
  void fit_normalization(std::span<const Window> windows) {
    if (windows.empty()) throw InvalidArgument("fit_normalization: no windows");
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(q_);
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(q_);
    double n = 0;
    for (const auto& w : windows)
      for (const Eigen::MatrixXd* m : {&w.input, &w.target}) {
        sum += m->rowwise().sum();
        sq += m->array().square().matrix().rowwise().sum();
        n += static_cast<double>(m->cols());
      }
    Eigen::VectorXd mean = sum / n;
    Eigen::VectorXd var = (sq / n - mean.cwiseProduct(mean)).cwiseMax(0.0);
    Eigen::VectorXd scale = var.cwiseSqrt();
    for (Eigen::Index i = 0; i < scale.size(); ++i)
      if (!(scale(i) > 1e-8)) scale(i) = 1.0;
    set_normalization(std::move(mean), std::move(scale));
  }

  Batch<T> make_batch(std::span<const Window> windows, std::span<const std::size_t> idx) const {
    const auto& wc = cfg_.window;
    Batch<T> b;
    const auto n = static_cast<Eigen::Index>(idx.size());
    b.inputs.assign(static_cast<std::size_t>(wc.m_in), Matrix<T>(q_, n));
    b.target.resize(static_cast<Eigen::Index>(q_) * wc.m_out, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const Window& w = windows[idx[static_cast<std::size_t>(j)]];
      if (w.input.rows() != q_ || w.input.cols() != wc.m_in || w.target.rows() != q_ ||
          w.target.cols() != wc.m_out)
        throw InvalidArgument("window shape does not match the model");
      for (int s = 0; s < wc.m_in; ++s)
        b.inputs[static_cast<std::size_t>(s)].col(j) =
            ((w.input.col(s) - mean_).cwiseQuotient(scale_)).template cast<T>();
      for (int s = 0; s < wc.m_out; ++s)
        b.target.block(static_cast<Eigen::Index>(s) * q_, j, q_, 1) =
            ((w.target.col(s) - mean_).cwiseQuotient(scale_)).template cast<T>();
    }
    return b;
  }

  Batch<T> make_batch(std::span<const Window> windows) const {
    std::vector<std::size_t> idx(windows.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return make_batch(windows, idx);
  }

  /// Mean loss over the batch; accumulates parameter gradients when asked.
  T forward_backward(const Batch<T>& batch, bool accumulate_grad) {
    Cache cache;
    const Matrix<T> y = forward(batch.inputs, &cache);
    const Matrix<T> diff = y - batch.target;
    const auto count = static_cast<T>(diff.size());
    T loss;
    Matrix<T> dy;
    if (cfg_.loss == LossKind::Mse) {
      loss = diff.squaredNorm() / count;
      if (accumulate_grad) dy = static_cast<T>(2) * diff / count;
    } else {
      loss = diff.cwiseAbs().sum() / count;
      if (accumulate_grad) dy = diff.unaryExpr([](T v) { return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0)); }) / count;
    }
    if (accumulate_grad) backward(cache, dy);
    return loss;
  }

  T loss(const Batch<T>& batch) { return forward_backward(batch, false); }

  /// Raw-latent prediction: q x m_in -> q x m_out.
  Eigen::MatrixXd predict(const Eigen::MatrixXd& input) const {
    const auto& wc = cfg_.window;
    if (input.rows() != q_ || input.cols() != wc.m_in)
      throw InvalidArgument("predict: input must be q x m_in");
    std::vector<Matrix<T>> xs;
    for (int s = 0; s < wc.m_in; ++s)
      xs.push_back(((input.col(s) - mean_).cwiseQuotient(scale_)).template cast<T>());
    const Matrix<T> y = forward(xs, nullptr);
    Eigen::MatrixXd out(q_, wc.m_out);
    for (int s = 0; s < wc.m_out; ++s)
      out.col(s) = y.block(static_cast<Eigen::Index>(s) * q_, 0, q_, 1).template cast<double>()
                       .cwiseProduct(scale_) + mean_;
    return out;
  }

  // Checkpoint: "FLSM", u32 version, u32 q, hidden, layers, m_in, m_out, u8 loss,
  // normalization (f64), parameters, then the POD basis reference.
  static constexpr std::uint32_t kVersion = 1;

  void save(const std::filesystem::path& path, const std::string& pod_path = {},
            const std::string& pod_checksum = {}) const {
    io::ByteWriter w;
    w.magic("FLSM");
    w.put(kVersion);
    w.put(static_cast<std::uint32_t>(q_));
    w.put(static_cast<std::uint32_t>(cfg_.hidden_size));
    w.put(static_cast<std::uint32_t>(cfg_.num_layers));
    w.put(static_cast<std::uint32_t>(cfg_.window.m_in));
    w.put(static_cast<std::uint32_t>(cfg_.window.m_out));
    w.put(static_cast<std::uint8_t>(cfg_.loss));
    for (Eigen::Index i = 0; i < q_; ++i) w.put(mean_(i));
    for (Eigen::Index i = 0; i < q_; ++i) w.put(scale_(i));
    auto* self = const_cast<LstmSurrogate*>(this);
    for (const Param<T>* p : self->parameters()) nn::write_param(w, *p);
    w.string(pod_path);
    w.string(pod_checksum);
    w.write_file(path);
  }

  struct Loaded;
  static Loaded load(const std::filesystem::path& path);

 private:
  struct Layer {
    Param<T> w_input;
    Param<T> w_hidden;
    Param<T> bias;
  };

  struct StepCache {
    Matrix<T> x, h_prev, c_prev, i, f, g, o, c, tanh_c;
  };

  struct Cache {
    std::vector<std::vector<StepCache>> steps;  // [layer][step]
    Matrix<T> h_last;
  };

  static Matrix<T> sigmoid(const Matrix<T>& a) {
    return a.unaryExpr([](T v) { return static_cast<T>(1) / (static_cast<T>(1) + std::exp(-v)); });
  }

  Matrix<T> forward(const std::vector<Matrix<T>>& xs, Cache* cache) const {
    const int h = cfg_.hidden_size;
    const Eigen::Index n = xs.front().cols();
    std::vector<Matrix<T>> seq = xs;
    if (cache) cache->steps.resize(layers_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& layer = layers_[l];
      Matrix<T> hs = Matrix<T>::Zero(h, n);
      Matrix<T> cs = Matrix<T>::Zero(h, n);
      if (cache) cache->steps[l].resize(seq.size());
      for (std::size_t s = 0; s < seq.size(); ++s) {
        Matrix<T> a = layer.w_input.value * seq[s] + layer.w_hidden.value * hs;
        a.colwise() += layer.bias.value.col(0);
        Matrix<T> i = sigmoid(a.topRows(h));
        Matrix<T> f = sigmoid(a.middleRows(h, h));
        Matrix<T> g = a.middleRows(2 * h, h).array().tanh().matrix();
        Matrix<T> o = sigmoid(a.bottomRows(h));
        Matrix<T> c = f.cwiseProduct(cs) + i.cwiseProduct(g);
        Matrix<T> tc = c.array().tanh().matrix();
        Matrix<T> hn = o.cwiseProduct(tc);
        if (cache) {
          cache->steps[l][s] = {seq[s], std::move(hs), std::move(cs), std::move(i), std::move(f),
                                std::move(g), std::move(o), c, tc};
        }
        hs = std::move(hn);
        cs = std::move(c);
        seq[s] = hs;
      }
    }
    Matrix<T> y = head_w_.value * seq.back();
    y.colwise() += head_b_.value.col(0);
    if (cache) cache->h_last = seq.back();
    return y;
  }

  void backward(const Cache& cache, const Matrix<T>& dy) {
    const int h = cfg_.hidden_size;
    const auto steps = cache.steps.front().size();
    head_w_.grad += dy * cache.h_last.transpose();
    head_b_.grad += dy.rowwise().sum();

    // Gradient flowing into each step's hidden output from above.
    std::vector<Matrix<T>> dh_above(steps, Matrix<T>::Zero(h, dy.cols()));
    dh_above.back() = head_w_.value.transpose() * dy;

    for (std::size_t li = layers_.size(); li-- > 0;) {
      Layer& layer = layers_[li];
      Matrix<T> dh_rec = Matrix<T>::Zero(h, dy.cols());
      Matrix<T> dc_rec = Matrix<T>::Zero(h, dy.cols());
      std::vector<Matrix<T>> dx(steps);
      for (std::size_t s = steps; s-- > 0;) {
        const StepCache& sc = cache.steps[li][s];
        const Matrix<T> dh = dh_above[s] + dh_rec;
        const auto one = static_cast<T>(1);
        Matrix<T> dc = dc_rec + dh.cwiseProduct(sc.o).cwiseProduct(
                                    (one - sc.tanh_c.array().square()).matrix());
        Matrix<T> da(4 * h, dy.cols());
        da.topRows(h) = dc.cwiseProduct(sc.g).cwiseProduct(
            sc.i.cwiseProduct((one - sc.i.array()).matrix()));
        da.middleRows(h, h) = dc.cwiseProduct(sc.c_prev).cwiseProduct(
            sc.f.cwiseProduct((one - sc.f.array()).matrix()));
        da.middleRows(2 * h, h) =
            dc.cwiseProduct(sc.i).cwiseProduct((one - sc.g.array().square()).matrix());
        da.bottomRows(h) = dh.cwiseProduct(sc.tanh_c).cwiseProduct(
            sc.o.cwiseProduct((one - sc.o.array()).matrix()));
        dc_rec = dc.cwiseProduct(sc.f);

        layer.w_input.grad += da * sc.x.transpose();
        layer.w_hidden.grad += da * sc.h_prev.transpose();
        layer.bias.grad += da.rowwise().sum();
        dh_rec = layer.w_hidden.value.transpose() * da;
        if (li > 0) dx[s] = layer.w_input.value.transpose() * da;
      }
      if (li > 0) dh_above = std::move(dx);
    }
  }

  int q_;
  LstmConfig cfg_;
  std::vector<Layer> layers_;
  Param<T> head_w_;
  Param<T> head_b_;
  Eigen::VectorXd mean_;
  Eigen::VectorXd scale_;
};

template <typename T>
struct LstmSurrogate<T>::Loaded {
  LstmSurrogate<T> model;
  std::string pod_path;
  std::string pod_checksum;
};

template <typename T>
typename LstmSurrogate<T>::Loaded LstmSurrogate<T>::load(const std::filesystem::path& path) {
  auto r = io::ByteReader::from_file(path);
  r.expect_magic("FLSM");
  r.expect_version(kVersion);
  const auto q = static_cast<int>(r.get<std::uint32_t>());
  LstmConfig cfg;
  cfg.hidden_size = static_cast<int>(r.get<std::uint32_t>());
  cfg.num_layers = static_cast<int>(r.get<std::uint32_t>());
  cfg.window.m_in = static_cast<int>(r.get<std::uint32_t>());
  cfg.window.m_out = static_cast<int>(r.get<std::uint32_t>());
  const auto loss = r.get<std::uint8_t>();
  if (loss > 1 || q < 1 || q > 1 << 20 || cfg.hidden_size < 1 || cfg.hidden_size > 1 << 16 ||
      cfg.num_layers < 1 || cfg.num_layers > 64 || cfg.window.m_in < 1 || cfg.window.m_out < 1)
    throw FormatError(path.string() + ": bad surrogate header");
  cfg.loss = static_cast<LossKind>(loss);
  LstmSurrogate<T> model(q, cfg, 0);
  Eigen::VectorXd mean(q), scale(q);
  for (int i = 0; i < q; ++i) mean(i) = r.get<double>();
  for (int i = 0; i < q; ++i) scale(i) = r.get<double>();
  model.set_normalization(std::move(mean), std::move(scale));
  for (Param<T>* p : model.parameters()) nn::read_param(r, *p);
  Loaded out{std::move(model), r.string(), r.string()};
  r.expect_end();
  return out;
}

/// Adam on the mean window loss, shuffled mini-batches, early stopping on the
/// validation loss with the best parameters restored at the end.
template <typename T>
LossHistory train(LstmSurrogate<T>& model, std::span<const Window> windows,
                  std::span<const Window> validation, const TrainConfig& cfg) {
  if (windows.empty()) throw InvalidArgument("surrogate train: no training windows");
  if (cfg.epochs < 0 || cfg.batch_size < 1 || !(cfg.learning_rate >= 0.0))
    throw InvalidArgument("surrogate train: bad epochs/batch_size/learning_rate");
  if (cfg.fit_normalization) model.fit_normalization(windows);

  auto params = model.parameters();
  nn::Adam<T> adam(cfg.learning_rate);
  Rng rng(cfg.seed);
  const Batch<T> val_batch = validation.empty() ? Batch<T>{} : model.make_batch(validation);

  std::vector<Matrix<T>> best;
  LossHistory hist;
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  int since_best = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with our own generator.
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);

    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const auto idx = std::span<const std::size_t>(order).subspan(start, stop - start);
      const Batch<T> batch = model.make_batch(windows, idx);
      for (Param<T>* p : params) p->zero_grad();
      const double loss = static_cast<double>(model.forward_backward(batch, true));
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "surrogate training diverged: non-finite loss at epoch " << epoch << ", batch "
            << start / static_cast<std::size_t>(cfg.batch_size) << " (lr=" << cfg.learning_rate
            << ")";
        throw NumericalFailure(msg.str());
      }
      total += loss * static_cast<double>(stop - start);
      adam.step(params);
    }
    hist.train.push_back(total / static_cast<double>(windows.size()));

    double val = std::numeric_limits<double>::quiet_NaN();
    if (!validation.empty()) {
      val = static_cast<double>(model.loss(val_batch));
      if (!std::isfinite(val))
        throw NumericalFailure("surrogate training: non-finite validation loss at epoch " +
                               std::to_string(epoch));
      hist.validation.push_back(val);
      if (val < hist.best_validation) {
        hist.best_validation = val;
        hist.best_epoch = epoch;
        best.clear();
        for (const Param<T>* p : params) best.push_back(p->value);
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        if (cfg.on_epoch) cfg.on_epoch(epoch, hist.train.back(), val);
        break;
      }
    }
    if (cfg.on_epoch) cfg.on_epoch(epoch, hist.train.back(), val);
  }
  if (!best.empty())
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  return hist;
}

/// Iterative forecasting: predict m_out steps, append, and feed the latest m_in
/// steps back in until `horizon` steps exist.
template <typename T>
Eigen::MatrixXd rollout(const LstmSurrogate<T>& model, const Eigen::MatrixXd& seed_window,
                        int horizon) {
  const auto& wc = model.window();
  if (horizon < wc.m_out) throw InvalidArgument("rollout: horizon must be >= m_out");
  if (seed_window.rows() != model.latent_size() || seed_window.cols() != wc.m_in)
    throw InvalidArgument("rollout: seed window must be q x m_in");
  Eigen::MatrixXd history = seed_window;
  int produced = 0;
  while (produced < horizon) {
    const Eigen::MatrixXd next = model.predict(history.rightCols(wc.m_in));
    Eigen::MatrixXd grown(history.rows(), history.cols() + next.cols());
    grown << history, next;
    history = std::move(grown);
    produced += wc.m_out;
  }
  return history.middleCols(wc.m_in, horizon);
}

struct BurnedPrediction {
  ca::BurnedSequence continuous;
  ca::BurnedSequence binary;
};

/// Full-field forecast from the first m_in observed frames: POD encode,
/// rollout, POD decode, clamp to [0,1], threshold.
template <typename T>
BurnedPrediction predict_burned(const LstmSurrogate<T>& model, const pod::PODBasis& basis,
                                const ca::BurnedSequence& observed, int horizon,
                                double tau = metrics::kBurnedThreshold) {
  const auto& wc = model.window();
  if (observed.frames < wc.m_in) throw InvalidArgument("predict_burned: too few observed frames");
  if (static_cast<Eigen::Index>(observed.frame_size()) != basis.dim() ||
      basis.q != model.latent_size())
    throw InvalidArgument("predict_burned: observed frames do not match the POD basis");
  Eigen::MatrixXd seed(basis.q, wc.m_in);
  for (int t = 0; t < wc.m_in; ++t) seed.col(t) = pod::encode(basis, observed.frame(t));
  const Eigen::MatrixXd latents = rollout(model, seed, horizon);

  BurnedPrediction out{ca::BurnedSequence(horizon, observed.height, observed.width),
                       ca::BurnedSequence(horizon, observed.height, observed.width)};
  for (auto* s : {&out.continuous, &out.binary}) {
    s->snapshot_interval_hours = observed.snapshot_interval_hours;
    s->ignition = observed.ignition;
    s->seed = observed.seed;
  }
  for (int t = 0; t < horizon; ++t) {
    const Eigen::VectorXd x = pod::decode(basis, latents.col(t));
    auto cont = out.continuous.frame(t);
    for (std::size_t i = 0; i < cont.size(); ++i)
      cont[i] = static_cast<float>(std::clamp(x(static_cast<Eigen::Index>(i)), 0.0, 1.0));
    metrics::threshold_burned(cont, out.binary.frame(t), tau);
  }
  return out;
}

}  // namespace firegen::surrogate
