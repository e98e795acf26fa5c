#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "firegen/errors.hpp"
#include "firegen/nn.hpp"

namespace firegen::vq {

using nn::Matrix;
using nn::Param;

struct Dims {
  int t = 0;
  int h = 0;
  int w = 0;
  Eigen::Index count() const { return static_cast<Eigen::Index>(t) * h * w; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

inline std::string to_string(Dims d) {
  return std::to_string(d.t) + "x" + std::to_string(d.h) + "x" + std::to_string(d.w);
}

/// Channel-major volume: data is channels x (t*h*w), positions ordered (t, h, w).
template <typename T>
struct Volume {
  Matrix<T> data;
  Dims dims;
  Eigen::Index channels() const { return data.rows(); }
};

/// Strided 3D convolution geometry whose output is exactly input/stride in
/// every axis. Total padding per axis is kernel - stride, split with the extra
/// cell in front.
struct ConvGeometry {
  int kt = 1, kh = 1, kw = 1;
  int st = 1, sh = 1, sw = 1;
  int pt = 0, ph = 0, pw = 0;
  Dims in;
  Dims out;

  static ConvGeometry downsampling(Dims in, int kt, int kh, int kw, int st, int sh, int sw) {
    if (kt < st || kh < sh || kw < sw || st < 1 || sh < 1 || sw < 1)
      throw InvalidArgument("conv geometry: kernel must be >= stride >= 1");
    if (in.t % st || in.h % sh || in.w % sw)
      throw InvalidArgument("conv geometry: input " + to_string(in) + " not divisible by stride");
    ConvGeometry g;
    g.kt = kt, g.kh = kh, g.kw = kw;
    g.st = st, g.sh = sh, g.sw = sw;
    g.pt = (kt - st + 1) / 2;
    g.ph = (kh - sh + 1) / 2;
    g.pw = (kw - sw + 1) / 2;
    g.in = in;
    g.out = {in.t / st, in.h / sh, in.w / sw};
    return g;
  }

  int kernel_volume() const { return kt * kh * kw; }
};

/// Unfolds patches: rows ordered (kernel offset, channel), one column per output position.
template <typename T>
Matrix<T> im2col(const Matrix<T>& x, const ConvGeometry& g) {
  const Eigen::Index c = x.rows();
  Matrix<T> col(c * g.kernel_volume(), g.out.count());
  const T* src = x.data();
  T* dst = col.data();
  for (int ot = 0; ot < g.out.t; ++ot)
    for (int oh = 0; oh < g.out.h; ++oh)
      for (int ow = 0; ow < g.out.w; ++ow) {
        for (int a = 0; a < g.kt; ++a) {
          const int it = ot * g.st - g.pt + a;
          for (int b = 0; b < g.kh; ++b) {
            const int ih = oh * g.sh - g.ph + b;
            for (int d = 0; d < g.kw; ++d, dst += c) {
              const int iw = ow * g.sw - g.pw + d;
              if (it < 0 || it >= g.in.t || ih < 0 || ih >= g.in.h || iw < 0 || iw >= g.in.w) {
                std::fill(dst, dst + c, T(0));
              } else {
                const T* s = src + ((static_cast<Eigen::Index>(it) * g.in.h + ih) * g.in.w + iw) * c;
                std::copy(s, s + c, dst);
              }
            }
          }
        }
      }
  return col;
}

/// Adjoint of im2col: scatters (adds) columns back into a channels x in-positions volume.
template <typename T>
Matrix<T> col2im(const Matrix<T>& col, Eigen::Index channels, const ConvGeometry& g) {
  Matrix<T> x = Matrix<T>::Zero(channels, g.in.count());
  T* dst = x.data();
  const T* src = col.data();
  for (int ot = 0; ot < g.out.t; ++ot)
    for (int oh = 0; oh < g.out.h; ++oh)
      for (int ow = 0; ow < g.out.w; ++ow) {
        for (int a = 0; a < g.kt; ++a) {
          const int it = ot * g.st - g.pt + a;
          for (int b = 0; b < g.kh; ++b) {
            const int ih = oh * g.sh - g.ph + b;
            for (int d = 0; d < g.kw; ++d, src += channels) {
              const int iw = ow * g.sw - g.pw + d;
              if (it < 0 || it >= g.in.t || ih < 0 || ih >= g.in.h || iw < 0 || iw >= g.in.w)
                continue;
              T* p = dst + ((static_cast<Eigen::Index>(it) * g.in.h + ih) * g.in.w + iw) * channels;
              for (Eigen::Index k = 0; k < channels; ++k) p[k] += src[k];
            }
          }
        }
      }
  return x;
}

struct KernelShape {
  int kt = 1, kh = 1, kw = 1;
  int st = 1, sh = 1, sw = 1;
};

/// Strided 3D convolution (downsampling) or its transpose (upsampling by the
/// same strides). A transposed layer is the exact adjoint of the forward conv
/// with swapped channel roles.
template <typename T>
class Conv3d {
 public:
  Conv3d(std::string name, int in_channels, int out_channels, KernelShape k, bool transposed)
      : in_ch_(in_channels), out_ch_(out_channels), k_(k), transposed_(transposed) {
    const int kv = k.kt * k.kh * k.kw;
    if (transposed)
      weight_ = Param<T>(name + ".weight", in_channels, static_cast<Eigen::Index>(kv) * out_channels);
    else
      weight_ = Param<T>(name + ".weight", out_channels, static_cast<Eigen::Index>(kv) * in_channels);
    bias_ = Param<T>(name + ".bias", out_channels, 1);
  }

  void init(Rng& rng) {
    const int kv = k_.kt * k_.kh * k_.kw;
    double fan_in = static_cast<double>(in_ch_) * kv;
    if (transposed_) fan_in /= static_cast<double>(k_.st) * k_.sh * k_.sw;
    const double bound = 1.0 / std::sqrt(fan_in);
    weight_.init_uniform(rng, bound);
    bias_.init_uniform(rng, bound);
  }

  Dims output_dims(Dims in) const {
    if (transposed_) return {in.t * k_.st, in.h * k_.sh, in.w * k_.sw};
    return geometry(in).out;
  }

  Matrix<T> forward(const Matrix<T>& x, Dims in) const {
    if (x.rows() != in_ch_ || x.cols() != in.count())
      throw InvalidArgument("conv3d: input shape does not match layer '" + weight_.name + "'");
    Matrix<T> y;
    if (!transposed_) {
      const auto g = geometry(in);
      y.noalias() = weight_.value * im2col(x, g);
    } else {
      const auto g = geometry(output_dims(in));
      Matrix<T> col;
      col.noalias() = weight_.value.transpose() * x;
      y = col2im(col, out_ch_, g);
    }
    y.colwise() += bias_.value.col(0);
    return y;
  }

  /// Accumulates weight/bias gradients; returns the gradient w.r.t. the input.
  Matrix<T> backward(const Matrix<T>& x, Dims in, const Matrix<T>& dy) {
    bias_.grad += dy.rowwise().sum();
    if (!transposed_) {
      const auto g = geometry(in);
      const Matrix<T> col = im2col(x, g);
      weight_.grad.noalias() += dy * col.transpose();
      Matrix<T> dcol;
      dcol.noalias() = weight_.value.transpose() * dy;
      return col2im(dcol, in_ch_, g);
    }
    const auto g = geometry(output_dims(in));
    const Matrix<T> dcol = im2col(dy, g);
    weight_.grad.noalias() += x * dcol.transpose();
    Matrix<T> dx;
    dx.noalias() = weight_.value * dcol;
    return dx;
  }

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }

 private:
  // For the transposed layer, `in` is the big (upsampled) side.
  ConvGeometry geometry(Dims in) const {
    return ConvGeometry::downsampling(in, k_.kt, k_.kh, k_.kw, k_.st, k_.sh, k_.sw);
  }

  int in_ch_;
  int out_ch_;
  KernelShape k_;
  bool transposed_;
  Param<T> weight_;
  Param<T> bias_;
};

}  // namespace firegen::vq
