#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <tuple>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "firegen/binary_io.hpp"
#include "firegen/ca.hpp"
#include "firegen/conv3d.hpp"
#include "firegen/errors.hpp"
#include "firegen/nn.hpp"
#include "firegen/parallel.hpp"
#include "firegen/rng.hpp"

namespace firegen::vq {

enum class Activation : std::uint8_t { Relu = 0, LeakyRelu = 1, Silu = 2, Tanh = 3 };

inline Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "leaky_relu") return Activation::LeakyRelu;
  if (name == "silu") return Activation::Silu;
  if (name == "tanh") return Activation::Tanh;
  throw InvalidArgument("unknown activation '" + name + "'");
}

inline std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::LeakyRelu: return "leaky_relu";
    case Activation::Silu: return "silu";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

enum class Output : std::uint8_t { Identity, Hidden, Sigmoid };

template <typename T>
Matrix<T> activate(const Matrix<T>& pre, Output kind, Activation act) {
  if (kind == Output::Identity) return pre;
  if (kind == Output::Sigmoid)
    return pre.unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
  switch (act) {
    case Activation::Relu: return pre.cwiseMax(T(0));
    case Activation::LeakyRelu: return pre.unaryExpr([](T v) { return v > 0 ? v : T(0.1) * v; });
    case Activation::Silu: return pre.unaryExpr([](T v) { return v / (T(1) + std::exp(-v)); });
    case Activation::Tanh: return pre.array().tanh().matrix();
  }
  return pre;
}

// d(post)/d(pre) applied to the upstream gradient.
template <typename T>
Matrix<T> activate_backward(const Matrix<T>& pre, const Matrix<T>& dpost, Output kind,
                            Activation act) {
  if (kind == Output::Identity) return dpost;
  Matrix<T> d(pre.rows(), pre.cols());
  const Eigen::Index n = pre.size();
  const T* x = pre.data();
  const T* g = dpost.data();
  T* out = d.data();
  if (kind == Output::Sigmoid) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const T s = T(1) / (T(1) + std::exp(-x[i]));
      out[i] = g[i] * s * (T(1) - s);
    }
    return d;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    switch (act) {
      case Activation::Relu: out[i] = x[i] > 0 ? g[i] : T(0); break;
      case Activation::LeakyRelu: out[i] = x[i] > 0 ? g[i] : T(0.1) * g[i]; break;
      case Activation::Silu: {
        const T s = T(1) / (T(1) + std::exp(-x[i]));
        out[i] = g[i] * (s + x[i] * s * (T(1) - s));
        break;
      }
      case Activation::Tanh: {
        const T t = std::tanh(x[i]);
        out[i] = g[i] * (T(1) - t * t);
        break;
      }
    }
  }
  return d;
}

/// One encoder stage; the decoder mirrors it with a transposed convolution.
struct Stage {
  int t_stride = 1;
  int s_stride = 2;
  int channels = 32;
  int t_kernel = 3;
  int s_kernel = 4;
};

struct EncoderDecoderSpec {
  std::vector<Stage> stages{{1, 2, 32, 3, 4}, {2, 2, 64, 3, 4}, {2, 2, 64, 3, 4}};
  int latent_dim = 64;
  Activation activation = Activation::Silu;

  int total_t_stride() const {
    int s = 1;
    for (const auto& st : stages) s *= st.t_stride;
    return s;
  }
  int total_s_stride() const {
    int s = 1;
    for (const auto& st : stages) s *= st.s_stride;
    return s;
  }

  void validate() const {
    if (stages.empty()) throw InvalidArgument("encoder needs at least one stage");
    if (latent_dim < 1) throw InvalidArgument("latent_dim must be >= 1");
    for (const auto& s : stages)
      if (s.channels < 1 || s.t_stride < 1 || s.s_stride < 1 || s.t_kernel < s.t_stride ||
          s.s_kernel < s.s_stride)
        throw InvalidArgument("invalid encoder stage");
  }

  void validate_clip(Dims clip) const {
    if (clip.t % total_t_stride() || clip.h % total_s_stride() || clip.w % total_s_stride())
      throw InvalidArgument("clip " + to_string(clip) + " is not divisible by the total strides " +
                            std::to_string(total_t_stride()) + "x" +
                            std::to_string(total_s_stride()) + "x" +
                            std::to_string(total_s_stride()));
  }
};

struct VQVAEConfig {
  double beta = 0.25;
  double alpha = 0.6;
  int codebook_size = 128;
  double learning_rate = 1e-3;
  int epochs = 100;
  int batch_size = 4;
  std::uint64_t seed = 0;
  bool reseed_dead_codes = true;

  void validate() const {
    if (!(beta > 0.0)) throw InvalidArgument("beta must be > 0");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must lie in [0,1]");
    if (codebook_size < 2) throw InvalidArgument("codebook size must be >= 2");
    if (!(learning_rate >= 0.0)) throw InvalidArgument("learning rate must be >= 0");
    if (epochs < 0 || batch_size < 1) throw InvalidArgument("bad epochs or batch size");
  }
};

/// K code vectors of dimension d, stored as columns of a d x K parameter.
template <typename T>
class Codebook {
 public:
  Codebook(int size, int dim) : entries_("codebook", dim, size), usage_(static_cast<std::size_t>(size), 0) {
    if (size < 2) throw InvalidArgument("codebook size must be >= 2");
  }

  int size() const { return static_cast<int>(entries_.value.cols()); }
  int dim() const { return static_cast<int>(entries_.value.rows()); }
  Param<T>& entries() { return entries_; }
  const Matrix<T>& vectors() const { return entries_.value; }
  const std::vector<std::uint64_t>& usage_counts() const { return usage_; }
  void reset_usage() { std::fill(usage_.begin(), usage_.end(), 0); }

  /// Euclidean nearest entry for each column of z; ties go to the lowest index.
  std::vector<std::int32_t> nearest(const Matrix<T>& z) const {
    if (z.rows() != dim()) throw InvalidArgument("quantize: latent dimension does not match codebook");
    std::vector<std::int32_t> idx(static_cast<std::size_t>(z.cols()));
    const Eigen::Index d = z.rows();
    for (Eigen::Index p = 0; p < z.cols(); ++p) {
      const T* zp = z.data() + p * d;
      T best = std::numeric_limits<T>::infinity();
      std::int32_t arg = 0;
      for (Eigen::Index k = 0; k < entries_.value.cols(); ++k) {
        const T* ek = entries_.value.data() + k * d;
        T dist = 0;
        for (Eigen::Index j = 0; j < d; ++j) {
          const T diff = zp[j] - ek[j];
          dist += diff * diff;
        }
        if (dist < best) {
          best = dist;
          arg = static_cast<std::int32_t>(k);
        }
      }
      idx[static_cast<std::size_t>(p)] = arg;
    }
    return idx;
  }

  Matrix<T> gather(std::span<const std::int32_t> idx) const {
    Matrix<T> e(dim(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t p = 0; p < idx.size(); ++p) e.col(static_cast<Eigen::Index>(p)) = entries_.value.col(idx[p]);
    return e;
  }

  /// Nearest-neighbour quantization that also records entry usage.
  std::pair<Matrix<T>, std::vector<std::int32_t>> quantize(const Matrix<T>& z) {
    auto idx = nearest(z);
    for (auto i : idx) ++usage_[static_cast<std::size_t>(i)];
    return {gather(idx), std::move(idx)};
  }

  void set_usage(std::vector<std::uint64_t> u) {
    if (u.size() != usage_.size()) throw InvalidArgument("usage vector size mismatch");
    usage_ = std::move(u);
  }

 private:
  Param<T> entries_;
  std::vector<std::uint64_t> usage_;
};

/// Decoder input in the forward pass equals the quantized e; in the backward
/// pass the decoder-input gradient is copied to the encoder output and the
/// codebook receives nothing through this path.
struct StraightThrough {
  template <typename T>
  static Matrix<T> forward(const Matrix<T>& z, const Matrix<T>& e) {
    if (z.rows() != e.rows() || z.cols() != e.cols())
      throw InvalidArgument("straight_through: shape mismatch");
    return e;
  }

  template <typename T>
  static Matrix<T> backward_to_encoder(const Matrix<T>& grad_decoder_input) {
    return grad_decoder_input;
  }

  template <typename T>
  static Matrix<T> backward_to_codebook(const Matrix<T>& grad_decoder_input) {
    return Matrix<T>::Zero(grad_decoder_input.rows(), grad_decoder_input.cols());
  }
};

struct Losses {
  double recon = 0.0;
  double codebook = 0.0;
  double commit = 0.0;
  double total = 0.0;

  Losses& operator+=(const Losses& o) {
    recon += o.recon, codebook += o.codebook, commit += o.commit, total += o.total;
    return *this;
  }
  Losses scaled(double s) const { return {recon * s, codebook * s, commit * s, total * s}; }
};

/// Loss values for one clip: squared Frobenius norms summed over elements.
template <typename T>
Losses losses(const Matrix<T>& clip, const Matrix<T>& reconstructed, const Matrix<T>& z,
              const Matrix<T>& e, double beta) {
  if (clip.rows() != reconstructed.rows() || clip.cols() != reconstructed.cols() ||
      z.rows() != e.rows() || z.cols() != e.cols())
    throw InvalidArgument("losses: shape mismatch");
  Losses l;
  l.recon = static_cast<double>((reconstructed - clip).squaredNorm());
  const double dist = static_cast<double>((z - e).squaredNorm());
  l.codebook = dist;
  l.commit = beta * dist;
  l.total = l.recon + l.codebook + l.commit;
  return l;
}

/// Which loss terms feed gradients in a backward pass.
struct LossTerms {
  bool recon = true;
  bool codebook = true;
  bool commit = true;
};

/// 3D-convolutional VQ-VAE over single-channel clips of fixed shape.
template <typename T = double>
class VqVae {
 public:
  VqVae(EncoderDecoderSpec spec, Dims clip, int codebook_size, std::uint64_t seed)
      : spec_(std::move(spec)), clip_(clip), codebook_(codebook_size, spec_.latent_dim) {
    spec_.validate();
    spec_.validate_clip(clip);
    int in = 1;
    for (std::size_t i = 0; i < spec_.stages.size(); ++i) {
      const Stage& s = spec_.stages[i];
      encoder_.push_back({Conv3d<T>("enc" + std::to_string(i), in, s.channels,
                                    {s.t_kernel, s.s_kernel, s.s_kernel, s.t_stride, s.s_stride, s.s_stride},
                                    false),
                          Output::Hidden});
      in = s.channels;
    }
    encoder_.push_back({Conv3d<T>("enc_proj", in, spec_.latent_dim, {}, false), Output::Identity});

    decoder_.push_back({Conv3d<T>("dec_proj", spec_.latent_dim, in, {}, false), Output::Hidden});
    for (std::size_t i = spec_.stages.size(); i-- > 0;) {
      const Stage& s = spec_.stages[i];
      const int out = i == 0 ? 1 : spec_.stages[i - 1].channels;
      decoder_.push_back({Conv3d<T>("dec" + std::to_string(i), s.channels, out,
                                    {s.t_kernel, s.s_kernel, s.s_kernel, s.t_stride, s.s_stride, s.s_stride},
                                    true),
                          i == 0 ? Output::Sigmoid : Output::Hidden});
    }

    Rng rng(seed);
    for (auto& l : encoder_) l.conv.init(rng);
    for (auto& l : decoder_) l.conv.init(rng);
    codebook_.entries().init_uniform(rng, 1.0 / codebook_size);
  }

  /// Same weights applied to clips of another shape (the network is fully
  /// convolutional, so only the stride divisibility has to hold).
  VqVae with_clip_dims(Dims clip) const {
    spec_.validate_clip(clip);
    VqVae out = *this;
    out.clip_ = clip;
    return out;
  }

  const EncoderDecoderSpec& spec() const { return spec_; }
  Dims clip_dims() const { return clip_; }
  Dims latent_dims() const {
    return {clip_.t / spec_.total_t_stride(), clip_.h / spec_.total_s_stride(),
            clip_.w / spec_.total_s_stride()};
  }
  Codebook<T>& codebook() { return codebook_; }
  const Codebook<T>& codebook() const { return codebook_; }
  bool codebook_initialized() const { return codebook_initialized_; }
  void mark_codebook_initialized(bool v = true) { codebook_initialized_ = v; }

  std::vector<Param<T>*> encoder_parameters() {
    std::vector<Param<T>*> out;
    for (auto& l : encoder_) out.insert(out.end(), {&l.conv.weight(), &l.conv.bias()});
    return out;
  }
  std::vector<Param<T>*> decoder_parameters() {
    std::vector<Param<T>*> out;
    for (auto& l : decoder_) out.insert(out.end(), {&l.conv.weight(), &l.conv.bias()});
    return out;
  }
  std::vector<Param<T>*> parameters() {
    auto out = encoder_parameters();
    auto dec = decoder_parameters();
    out.insert(out.end(), dec.begin(), dec.end());
    out.push_back(&codebook_.entries());
    return out;
  }
  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  /// 1 x (T*H*W) clip from the first T frames of a burned-area sequence.
  Matrix<T> clip_from_sequence(const ca::BurnedSequence& seq) const {
    if (seq.frames < clip_.t || seq.height != clip_.h || seq.width != clip_.w)
      throw InvalidArgument("sequence " + std::to_string(seq.frames) + "x" +
                            std::to_string(seq.height) + "x" + std::to_string(seq.width) +
                            " does not fit clip " + to_string(clip_));
    Matrix<T> x(1, clip_.count());
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
      const float v = seq.data[static_cast<std::size_t>(i)];
      if (!(v >= 0.0f && v <= 1.0f)) throw InvalidArgument("clip values must lie in [0,1]");
      x(0, i) = static_cast<T>(v);
    }
    return x;
  }

  ca::BurnedSequence sequence_from_clip(const Matrix<T>& x, float interval_hours = 6.0f) const {
    ca::BurnedSequence seq(clip_.t, clip_.h, clip_.w);
    seq.snapshot_interval_hours = interval_hours;
    for (Eigen::Index i = 0; i < x.cols(); ++i)
      seq.data[static_cast<std::size_t>(i)] = static_cast<float>(x(0, i));
    return seq;
  }

  /// Encoder output Z: d x (T' * H' * W').
  Matrix<T> encode(const Matrix<T>& clip) const { return run(encoder_, clip, clip_, nullptr); }

  /// Decoder output in (0,1): 1 x (T * H * W).
  Matrix<T> decode(const Matrix<T>& latent) const {
    if (latent.rows() != spec_.latent_dim || latent.cols() != latent_dims().count())
      throw InvalidArgument("decode: latent shape mismatch");
    return run(decoder_, latent, latent_dims(), nullptr);
  }

  /// decode(quantize(encode(clip))).
  Matrix<T> reconstruct(const Matrix<T>& clip) const {
    const Matrix<T> z = encode(clip);
    return clamp01(decode(codebook_.gather(codebook_.nearest(z))));
  }

  /// Forward + backward for one clip. Losses are scaled by `scale` (1/B for a
  /// batch mean) before differentiation. Returns the unscaled loss values.
  Losses accumulate_gradients(const Matrix<T>& clip, double beta, double scale,
                              LossTerms terms = {}, bool count_usage = true) {
    std::vector<LayerCache> enc_cache, dec_cache;
    const Matrix<T> z = run(encoder_, clip, clip_, &enc_cache);
    std::vector<std::int32_t> idx;
    Matrix<T> e;
    if (count_usage) {
      std::tie(e, idx) = codebook_.quantize(z);
    } else {
      idx = codebook_.nearest(z);
      e = codebook_.gather(idx);
    }
    const Matrix<T> dec_in = StraightThrough::forward(z, e);
    const Matrix<T> xhat = run(decoder_, dec_in, latent_dims(), &dec_cache);
    const Losses l = losses(clip, xhat, z, e, beta);

    const T s = static_cast<T>(scale);
    Matrix<T> dz = Matrix<T>::Zero(z.rows(), z.cols());
    if (terms.recon) {
      const Matrix<T> dxhat = T(2) * s * (xhat - clip);
      const Matrix<T> ddec_in = back(decoder_, dec_cache, dxhat);
      dz += StraightThrough::backward_to_encoder(ddec_in);
    }
    if (terms.commit) dz += T(2) * s * static_cast<T>(beta) * (z - e);
    if (terms.codebook) {
      Matrix<T>& g = codebook_.entries().grad;
      for (std::size_t p = 0; p < idx.size(); ++p) {
        const auto col = static_cast<Eigen::Index>(p);
        g.col(idx[p]) += T(2) * s * (e.col(col) - z.col(col));
      }
    }
    back(encoder_, enc_cache, dz);
    last_latent_ = z;
    return l;
  }

  /// Gradient of the reconstruction loss w.r.t. the decoder input, evaluated at
  /// the quantized latent of `clip`. Parameter gradients are left untouched.
  Matrix<T> decoder_input_gradient(const Matrix<T>& clip) {
    std::vector<LayerCache> dec_cache;
    const Matrix<T> z = encode(clip);
    const Matrix<T> e = codebook_.gather(codebook_.nearest(z));
    const Matrix<T> xhat = run(decoder_, e, latent_dims(), &dec_cache);
    std::vector<Matrix<T>> saved;
    for (auto* p : decoder_parameters()) saved.push_back(p->grad);
    Matrix<T> g = back(decoder_, dec_cache, T(2) * (xhat - clip));
    auto params = decoder_parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->grad = saved[i];
    return g;
  }

  /// Encoder output of the most recent accumulate_gradients call.
  const Matrix<T>& last_latent() const { return last_latent_; }

  static Matrix<T> clamp01(Matrix<T> x) { return x.cwiseMax(T(0)).cwiseMin(T(1)); }

  // Checkpoint: "FVQV", u32 version, spec, clip dims, codebook size, config,
  // parameters, usage counts.
  static constexpr std::uint32_t kVersion = 1;

  void save(const std::filesystem::path& path, const VQVAEConfig& cfg) {
    io::ByteWriter w;
    w.magic("FVQV");
    w.put(kVersion);
    w.put(static_cast<std::uint32_t>(spec_.stages.size()));
    for (const auto& s : spec_.stages) {
      for (int v : {s.t_stride, s.s_stride, s.channels, s.t_kernel, s.s_kernel})
        w.put(static_cast<std::uint32_t>(v));
    }
    w.put(static_cast<std::uint32_t>(spec_.latent_dim));
    w.put(static_cast<std::uint8_t>(spec_.activation));
    for (int v : {clip_.t, clip_.h, clip_.w}) w.put(static_cast<std::uint32_t>(v));
    w.put(static_cast<std::uint32_t>(codebook_.size()));
    w.put(cfg.beta);
    w.put(cfg.alpha);
    w.put(cfg.learning_rate);
    w.put(static_cast<std::uint32_t>(cfg.epochs));
    w.put(static_cast<std::uint32_t>(cfg.batch_size));
    w.put(cfg.seed);
    w.put(static_cast<std::uint8_t>(cfg.reseed_dead_codes));
    w.put(static_cast<std::uint8_t>(codebook_initialized_));
    for (const Param<T>* p : parameters()) nn::write_param(w, *p);
    for (auto u : codebook_.usage_counts()) w.put(u);
    w.write_file(path);
  }

  struct Loaded;
  static Loaded load(const std::filesystem::path& path);

 private:
  struct Layer {
    Conv3d<T> conv;
    Output output;
  };

  struct LayerCache {
    Matrix<T> input;
    Dims in_dims;
    Matrix<T> pre;
  };

  Matrix<T> run(const std::vector<Layer>& layers, const Matrix<T>& x, Dims dims,
                std::vector<LayerCache>* cache) const {
    Matrix<T> cur = x;
    for (const Layer& l : layers) {
      Matrix<T> pre = l.conv.forward(cur, dims);
      Matrix<T> post = activate(pre, l.output, spec_.activation);
      const Dims out = l.conv.output_dims(dims);
      if (cache) cache->push_back({std::move(cur), dims, std::move(pre)});
      cur = std::move(post);
      dims = out;
    }
    return cur;
  }

  Matrix<T> back(std::vector<Layer>& layers, const std::vector<LayerCache>& cache,
                 Matrix<T> grad) {
    for (std::size_t i = layers.size(); i-- > 0;) {
      const LayerCache& c = cache[i];
      grad = activate_backward(c.pre, grad, layers[i].output, spec_.activation);
      grad = layers[i].conv.backward(c.input, c.in_dims, grad);
    }
    return grad;
  }

  EncoderDecoderSpec spec_;
  Dims clip_;
  std::vector<Layer> encoder_;
  std::vector<Layer> decoder_;
  Codebook<T> codebook_;
  bool codebook_initialized_ = false;
  Matrix<T> last_latent_;
};

template <typename T>
struct VqVae<T>::Loaded {
  VqVae<T> model;
  VQVAEConfig config;
};

template <typename T>
typename VqVae<T>::Loaded VqVae<T>::load(const std::filesystem::path& path) {
  auto r = io::ByteReader::from_file(path);
  r.expect_magic("FVQV");
  r.expect_version(kVersion);
  EncoderDecoderSpec spec;
  spec.stages.clear();
  const auto n_stages = r.get<std::uint32_t>();
  if (n_stages == 0 || n_stages > 16) throw FormatError(path.string() + ": bad stage count");
  for (std::uint32_t i = 0; i < n_stages; ++i) {
    Stage s;
    s.t_stride = static_cast<int>(r.get<std::uint32_t>());
    s.s_stride = static_cast<int>(r.get<std::uint32_t>());
    s.channels = static_cast<int>(r.get<std::uint32_t>());
    s.t_kernel = static_cast<int>(r.get<std::uint32_t>());
    s.s_kernel = static_cast<int>(r.get<std::uint32_t>());
    spec.stages.push_back(s);
  }
  spec.latent_dim = static_cast<int>(r.get<std::uint32_t>());
  const auto act = r.get<std::uint8_t>();
  if (act > 3) throw FormatError(path.string() + ": bad activation");
  spec.activation = static_cast<Activation>(act);
  Dims clip;
  clip.t = static_cast<int>(r.get<std::uint32_t>());
  clip.h = static_cast<int>(r.get<std::uint32_t>());
  clip.w = static_cast<int>(r.get<std::uint32_t>());
  const auto k = static_cast<int>(r.get<std::uint32_t>());
  VQVAEConfig cfg;
  cfg.beta = r.get<double>();
  cfg.alpha = r.get<double>();
  cfg.learning_rate = r.get<double>();
  cfg.epochs = static_cast<int>(r.get<std::uint32_t>());
  cfg.batch_size = static_cast<int>(r.get<std::uint32_t>());
  cfg.seed = r.get<std::uint64_t>();
  cfg.reseed_dead_codes = r.get<std::uint8_t>() != 0;
  cfg.codebook_size = k;
  const bool initialized = r.get<std::uint8_t>() != 0;
  try {
    VqVae<T> model(spec, clip, k, 0);
    for (Param<T>* p : model.parameters()) nn::read_param(r, *p);
    model.codebook().set_usage(r.get_vector<std::uint64_t>(static_cast<std::size_t>(k)));
    model.mark_codebook_initialized(initialized);
    r.expect_end();
    return {std::move(model), cfg};
  } catch (const InvalidArgument& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

struct EpochLosses {
  int epoch = 0;
  Losses mean;
  int reseeded_codes = 0;
};

struct TrainResult {
  std::vector<EpochLosses> history;
};

/// Seeds every codebook entry with a randomly chosen encoder output position
/// from a warm-up batch.
template <typename T>
void initialize_codebook(VqVae<T>& model, std::span<const Matrix<T>> clips, Rng& rng,
                         int warmup = 8) {
  if (clips.empty()) throw InvalidArgument("initialize_codebook: no clips");
  std::vector<Matrix<T>> latents;
  for (int i = 0; i < std::min<int>(warmup, static_cast<int>(clips.size())); ++i)
    latents.push_back(model.encode(clips[static_cast<std::size_t>(rng.below(clips.size()))]));
  auto& cb = model.codebook().entries().value;
  for (Eigen::Index k = 0; k < cb.cols(); ++k) {
    const auto& z = latents[static_cast<std::size_t>(rng.below(latents.size()))];
    cb.col(k) = z.col(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(z.cols()))));
  }
  model.mark_codebook_initialized();
}

/// Adam on the batch-mean total loss. Codebook entries unused for a whole epoch
/// are re-seeded from encoder outputs (only while the model is actually learning).
template <typename T>
TrainResult train(VqVae<T>& model, std::span<const Matrix<T>> clips, const VQVAEConfig& cfg,
                  const std::function<void(const EpochLosses&)>& on_epoch = {}) {
  cfg.validate();
  if (clips.empty()) throw InvalidArgument("vqvae train: empty dataset");
  if (cfg.codebook_size != model.codebook().size())
    throw InvalidArgument("vqvae train: codebook size differs from the model");
  Rng rng(cfg.seed);
  if (!model.codebook_initialized()) initialize_codebook(model, clips, rng);

  auto params = model.parameters();
  nn::Adam<T> adam(cfg.learning_rate);
  std::vector<std::size_t> order(clips.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  TrainResult result;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);
    model.codebook().reset_usage();
    Losses sum;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      model.zero_grad();
      const double scale = 1.0 / static_cast<double>(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        const Losses l = model.accumulate_gradients(clips[order[i]], cfg.beta, scale);
        if (!std::isfinite(l.total)) {
          std::ostringstream msg;
          msg << "vqvae training diverged at epoch " << epoch << ", clip " << order[i]
              << ": recon=" << l.recon << " codebook=" << l.codebook << " commit=" << l.commit;
          throw NumericalFailure(msg.str());
        }
        sum += l;
      }
      adam.step(params);
    }
    EpochLosses el{epoch, sum.scaled(1.0 / static_cast<double>(clips.size())), 0};

    if (cfg.reseed_dead_codes && cfg.learning_rate > 0.0) {
      const auto& usage = model.codebook().usage_counts();
      auto& cb = model.codebook().entries().value;
      Matrix<T> z;
      for (Eigen::Index k = 0; k < cb.cols(); ++k) {
        if (usage[static_cast<std::size_t>(k)] != 0) continue;
        if (z.size() == 0) z = model.encode(clips[static_cast<std::size_t>(rng.below(clips.size()))]);
        cb.col(k) = z.col(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(z.cols()))));
        model.codebook().entries().m.col(k).setZero();
        model.codebook().entries().v.col(k).setZero();
        ++el.reseeded_codes;
      }
    }
    result.history.push_back(el);
    if (on_epoch) on_epoch(el);
  }
  return result;
}

/// decode(alpha * e + (1 - alpha) * eps), eps ~ N(0, 1) per latent element,
/// clamped to [0, 1].
template <typename T>
Matrix<T> generate(const VqVae<T>& model, const Matrix<T>& source_clip, double alpha, Rng& rng) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("generate: alpha must lie in [0,1]");
  const Matrix<T> z = model.encode(source_clip);
  const Matrix<T> e = model.codebook().gather(model.codebook().nearest(z));
  Matrix<T> eps(e.rows(), e.cols());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = static_cast<T>(rng.normal());
  const Matrix<T> mixed = static_cast<T>(alpha) * e + static_cast<T>(1.0 - alpha) * eps;
  return VqVae<T>::clamp01(model.decode(mixed));
}

struct GeneratedSample {
  ca::BurnedSequence sequence;
  std::size_t source_index = 0;
};

/// `count` generated sequences; sample i uses its own stream derived from
/// (master_seed, i), so the result is independent of evaluation order.
template <typename T>
std::vector<GeneratedSample> generate_dataset(const VqVae<T>& model,
                                              std::span<const ca::BurnedSequence> training,
                                              int count, double alpha, std::uint64_t master_seed,
                                              int threads = 1) {
  if (training.empty()) throw InvalidArgument("generate_dataset: empty training set");
  if (count < 1) throw InvalidArgument("generate_dataset: count must be >= 1");
  std::vector<GeneratedSample> out(static_cast<std::size_t>(count));
  parallel_for(static_cast<std::size_t>(count), threads, [&](std::size_t i) {
    const std::uint64_t child = stable_hash(master_seed, "generate", i);
    Rng rng(child);
    const auto src = static_cast<std::size_t>(rng.below(training.size()));
    const Matrix<T> x = generate(model, model.clip_from_sequence(training[src]), alpha, rng);
    auto seq = model.sequence_from_clip(x, training[src].snapshot_interval_hours);
    seq.ignition = training[src].ignition;
    seq.seed = child;
    out[i] = {std::move(seq), src};
  });
  return out;
}

}  // namespace firegen::vq
