#include <gtest/gtest.h>

#include "firegen/conv3d.hpp"
#include "oracles.hpp"

using namespace firegen;
using vq::Conv3d;
using vq::Dims;
using Mat = Eigen::MatrixXd;

namespace {

Mat random(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1, 1);
  return m;
}

// Direct strided convolution with zero padding, written independently of im2col.
Mat naive_conv(const Mat& x, Dims in, const Mat& w, const Mat& b, vq::KernelShape k) {
  const auto g = vq::ConvGeometry::downsampling(in, k.kt, k.kh, k.kw, k.st, k.sh, k.sw);
  const Eigen::Index cin = x.rows(), cout = w.rows();
  Mat y(cout, g.out.count());
  for (int ot = 0; ot < g.out.t; ++ot)
    for (int oh = 0; oh < g.out.h; ++oh)
      for (int ow = 0; ow < g.out.w; ++ow) {
        const Eigen::Index o = (static_cast<Eigen::Index>(ot) * g.out.h + oh) * g.out.w + ow;
        for (Eigen::Index co = 0; co < cout; ++co) {
          double acc = b(co, 0);
          for (int a = 0; a < k.kt; ++a)
            for (int bb = 0; bb < k.kh; ++bb)
              for (int d = 0; d < k.kw; ++d) {
                const int it = ot * k.st - g.pt + a, ih = oh * k.sh - g.ph + bb, iw = ow * k.sw - g.pw + d;
                if (it < 0 || it >= in.t || ih < 0 || ih >= in.h || iw < 0 || iw >= in.w) continue;
                const Eigen::Index pos = (static_cast<Eigen::Index>(it) * in.h + ih) * in.w + iw;
                const Eigen::Index koff = (static_cast<Eigen::Index>(a) * k.kh + bb) * k.kw + d;
                for (Eigen::Index ci = 0; ci < cin; ++ci) acc += w(co, koff * cin + ci) * x(ci, pos);
              }
          y(co, o) = acc;
        }
      }
  return y;
}

}  // namespace

TEST(ConvGeometry, OutputIsInputOverStride) {
  const auto g = vq::ConvGeometry::downsampling({16, 32, 32}, 3, 4, 4, 2, 2, 2);
  EXPECT_EQ(g.out, (Dims{8, 16, 16}));
  EXPECT_EQ(g.pt, 1);
  EXPECT_EQ(g.ph, 1);
  EXPECT_THROW(vq::ConvGeometry::downsampling({15, 32, 32}, 3, 4, 4, 2, 2, 2), InvalidArgument);
  EXPECT_THROW(vq::ConvGeometry::downsampling({16, 32, 32}, 1, 4, 4, 2, 2, 2), InvalidArgument);
}

TEST(Im2col, Col2imIsAdjoint) {
  const auto g = vq::ConvGeometry::downsampling({4, 6, 6}, 3, 4, 4, 1, 2, 2);
  const Mat x = random(3, g.in.count(), 1);
  const Mat y = random(3 * g.kernel_volume(), g.out.count(), 2);
  const double lhs = (vq::im2col(x, g).array() * y.array()).sum();
  const double rhs = (x.array() * vq::col2im(y, 3, g).array()).sum();
  EXPECT_NEAR(lhs, rhs, 1e-10 * std::abs(lhs));
}

TEST(Conv3d, MatchesDirectConvolution) {
  const vq::KernelShape k{3, 4, 4, 2, 2, 2};
  Conv3d<double> conv("c", 2, 5, k, false);
  Rng rng(3);
  conv.init(rng);
  const Dims in{4, 8, 8};
  const Mat x = random(2, in.count(), 4);
  const Mat y = conv.forward(x, in);
  EXPECT_EQ(conv.output_dims(in), (Dims{2, 4, 4}));
  EXPECT_LT((y - naive_conv(x, in, conv.weight().value, conv.bias().value, k)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Conv3d, TransposeIsAdjointOfConvolution) {
  const vq::KernelShape k{3, 4, 4, 2, 2, 2};
  Conv3d<double> down("d", 3, 4, k, false);
  Conv3d<double> up("u", 4, 3, k, true);
  Rng rng(5);
  down.init(rng);
  // Same linear map read in the other direction: up.weight = down.weight.
  up.weight().value = down.weight().value;
  down.bias().value.setZero();
  up.bias().value.setZero();
  const Dims big{4, 8, 8}, small{2, 4, 4};
  EXPECT_EQ(up.output_dims(small), big);
  const Mat x = random(3, big.count(), 6);
  const Mat z = random(4, small.count(), 7);
  const double lhs = (down.forward(x, big).array() * z.array()).sum();
  const double rhs = (x.array() * up.forward(z, small).array()).sum();
  EXPECT_NEAR(lhs, rhs, 1e-10 * std::abs(lhs));
}

TEST(Conv3d, GradientsMatchFiniteDifferences) {
  for (bool transposed : {false, true}) {
    const vq::KernelShape k{3, 4, 4, 1, 2, 2};
    Conv3d<double> conv("c", 2, 3, k, transposed);
    Rng rng(8);
    conv.init(rng);
    const Dims in = transposed ? Dims{2, 3, 3} : Dims{2, 6, 6};
    Mat x = random(2, in.count(), 9);
    const Dims out = conv.output_dims(in);
    const Mat target = random(3, out.count(), 10);
    auto loss = [&] { return 0.5 * (conv.forward(x, in) - target).squaredNorm(); };
    conv.weight().zero_grad();
    conv.bias().zero_grad();
    const Mat dx = conv.backward(x, in, conv.forward(x, in) - target);
    for (Eigen::Index i = 0; i < conv.weight().value.size(); i += 7)
      EXPECT_LE(fgtest::rel_error(conv.weight().grad.data()[i],
                                  fgtest::central_difference(loss, conv.weight().value.data()[i], 1e-6)),
                1e-6);
    for (Eigen::Index i = 0; i < conv.bias().value.size(); ++i)
      EXPECT_LE(fgtest::rel_error(conv.bias().grad.data()[i],
                                  fgtest::central_difference(loss, conv.bias().value.data()[i], 1e-6)),
                1e-6);
    for (Eigen::Index i = 0; i < x.size(); i += 5)
      EXPECT_LE(fgtest::rel_error(dx.data()[i], fgtest::central_difference(loss, x.data()[i], 1e-6)), 1e-6);
  }
}

TEST(Conv3d, ShapeChecks) {
  Conv3d<double> conv("c", 2, 3, {3, 4, 4, 1, 2, 2}, false);
  EXPECT_THROW(conv.forward(Mat::Zero(3, 72), {2, 6, 6}), InvalidArgument);
  EXPECT_THROW(conv.forward(Mat::Zero(2, 70), {2, 6, 6}), InvalidArgument);
}
