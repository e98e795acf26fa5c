#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "firegen/binary_io.hpp"
#include "firegen/ca.hpp"
#include "firegen/errors.hpp"

namespace firegen::pod {

/// dim(x) x n_state snapshot matrix; column t is a flattened frame.
class SnapshotMatrix {
 public:
  SnapshotMatrix() = default;
  explicit SnapshotMatrix(Eigen::MatrixXd columns) : columns_(std::move(columns)) { validate(); }

  /// Stacks every frame of every sequence as one column.
  static SnapshotMatrix from_sequences(std::span<const ca::BurnedSequence> seqs) {
    if (seqs.empty()) throw InvalidArgument("snapshot matrix needs at least one sequence");
    const auto dim = static_cast<Eigen::Index>(seqs.front().frame_size());
    Eigen::Index n = 0;
    for (const auto& s : seqs) {
      if (static_cast<Eigen::Index>(s.frame_size()) != dim)
        throw InvalidArgument("snapshot matrix: sequences differ in frame size");
      n += s.frames;
    }
    Eigen::MatrixXd x(dim, n);
    Eigen::Index col = 0;
    for (const auto& s : seqs)
      for (int t = 0; t < s.frames; ++t, ++col) {
        auto f = s.frame(t);
        for (Eigen::Index i = 0; i < dim; ++i) x(i, col) = f[static_cast<std::size_t>(i)];
      }
    return SnapshotMatrix(std::move(x));
  }

  const Eigen::MatrixXd& columns() const { return columns_; }
  Eigen::Index dim() const { return columns_.rows(); }
  Eigen::Index n_state() const { return columns_.cols(); }

 private:
  void validate() const {
    if (columns_.cols() < 2) throw InvalidArgument("snapshot matrix needs n_state >= 2");
    if (!columns_.allFinite()) throw InvalidArgument("snapshot matrix has non-finite entries");
  }

  Eigen::MatrixXd columns_;
};

/// Truncated orthonormal basis (dim x q) plus the full eigenvalue spectrum of
/// the uncentred empirical covariance X X^T / (n_state - 1).
struct PODBasis {
  Eigen::MatrixXd modes;
  Eigen::VectorXd eigenvalues;
  int q = 0;
  int n_state_fitted = 0;

  bool fitted() const { return q > 0 && modes.cols() == q; }
  Eigen::Index dim() const { return modes.rows(); }
};

/// SVD-based fit; the covariance matrix is never formed. No mean subtraction.
/// Each mode is sign-normalized so its largest-magnitude entry is non-negative.
inline PODBasis fit(const SnapshotMatrix& x, int q) {
  const Eigen::Index max_q = std::min(x.dim(), x.n_state());
  if (q < 1 || q > max_q)
    throw InvalidArgument("pod::fit: q=" + std::to_string(q) + " outside [1, " +
                          std::to_string(max_q) + "]");

  Eigen::BDCSVD<Eigen::MatrixXd> svd(x.columns(), Eigen::ComputeThinU);
  const Eigen::VectorXd& sigma = svd.singularValues();

  PODBasis basis;
  basis.q = q;
  basis.n_state_fitted = static_cast<int>(x.n_state());
  basis.eigenvalues = sigma.array().square() / static_cast<double>(x.n_state() - 1);
  for (Eigen::Index i = 0; i < basis.eigenvalues.size(); ++i)
    if (basis.eigenvalues(i) < 0.0) basis.eigenvalues(i) = 0.0;

  basis.modes = svd.matrixU().leftCols(q);
  for (Eigen::Index j = 0; j < q; ++j) {
    Eigen::Index arg = 0;
    basis.modes.col(j).cwiseAbs().maxCoeff(&arg);
    if (basis.modes(arg, j) < 0.0) basis.modes.col(j) *= -1.0;
  }
  return basis;
}

inline Eigen::VectorXd encode(const PODBasis& basis, const Eigen::VectorXd& x) {
  if (!basis.fitted()) throw StateError("pod::encode on an unfitted basis");
  if (x.size() != basis.dim()) throw InvalidArgument("pod::encode: dimension mismatch");
  return basis.modes.transpose() * x;
}

inline Eigen::VectorXd encode(const PODBasis& basis, std::span<const float> frame) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(frame.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = frame[static_cast<std::size_t>(i)];
  return encode(basis, x);
}

inline Eigen::VectorXd decode(const PODBasis& basis, const Eigen::VectorXd& latent) {
  if (!basis.fitted()) throw StateError("pod::decode on an unfitted basis");
  if (latent.size() != basis.q) throw InvalidArgument("pod::decode: latent length mismatch");
  return basis.modes * latent;
}

/// All frames of a sequence as a q x T matrix of latents.
inline Eigen::MatrixXd encode_sequence(const PODBasis& basis, const ca::BurnedSequence& seq) {
  if (static_cast<Eigen::Index>(seq.frame_size()) != basis.dim())
    throw InvalidArgument("pod::encode_sequence: frame size does not match basis");
  Eigen::MatrixXd frames(basis.dim(), seq.frames);
  for (int t = 0; t < seq.frames; ++t) {
    auto f = seq.frame(t);
    for (Eigen::Index i = 0; i < basis.dim(); ++i) frames(i, t) = f[static_cast<std::size_t>(i)];
  }
  return basis.modes.transpose() * frames;
}

struct CompressionStats {
  double gamma = 0.0;  // retained squared-eigenvalue energy
  double rho = 0.0;    // q / n_state
};

inline CompressionStats compression_stats(const PODBasis& basis) {
  if (!basis.fitted() || basis.n_state_fitted < 1)
    throw StateError("compression_stats on an unfitted basis");
  const Eigen::ArrayXd sq = basis.eigenvalues.array().square();
  const double total = sq.sum();
  CompressionStats s;
  s.gamma = total > 0.0 ? sq.head(basis.q).sum() / total : 1.0;
  s.rho = static_cast<double>(basis.q) / basis.n_state_fitted;
  return s;
}

// ---------------------------------------------------------------------------
// FPOD: "FPOD", u32 version=1, u32 dim, u32 q, u32 n_state_fitted,
// modes f64 row-major (dim x q), eigenvalues f64 (min(dim, n_state_fitted)).

inline constexpr std::uint32_t kFpodVersion = 1;

inline void save_basis(const PODBasis& basis, const std::filesystem::path& path) {
  if (!basis.fitted()) throw StateError("cannot save an unfitted basis");
  io::ByteWriter w;
  w.magic("FPOD");
  w.put(kFpodVersion);
  w.put(static_cast<std::uint32_t>(basis.dim()));
  w.put(static_cast<std::uint32_t>(basis.q));
  w.put(static_cast<std::uint32_t>(basis.n_state_fitted));
  for (Eigen::Index i = 0; i < basis.dim(); ++i)
    for (Eigen::Index j = 0; j < basis.q; ++j) w.put(basis.modes(i, j));
  for (Eigen::Index i = 0; i < basis.eigenvalues.size(); ++i) w.put(basis.eigenvalues(i));
  w.write_file(path);
}

inline PODBasis load_basis(const std::filesystem::path& path) {
  auto r = io::ByteReader::from_file(path);
  r.expect_magic("FPOD");
  r.expect_version(kFpodVersion);
  const auto dim = r.get<std::uint32_t>();
  const auto q = r.get<std::uint32_t>();
  const auto n = r.get<std::uint32_t>();
  if (dim == 0 || q == 0 || q > dim || q > n || n < 2 || dim > (1u << 28))
    throw FormatError(path.string() + ": bad POD header");
  PODBasis b;
  b.q = static_cast<int>(q);
  b.n_state_fitted = static_cast<int>(n);
  b.modes.resize(dim, q);
  for (Eigen::Index i = 0; i < dim; ++i)
    for (Eigen::Index j = 0; j < q; ++j) b.modes(i, j) = r.get<double>();
  b.eigenvalues.resize(std::min(dim, n));
  for (Eigen::Index i = 0; i < b.eigenvalues.size(); ++i) b.eigenvalues(i) = r.get<double>();
  r.expect_end();
  return b;
}

}  // namespace firegen::pod
