#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "firegen/binary_io.hpp"
#include "firegen/errors.hpp"
#include "firegen/rng.hpp"

namespace firegen::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// A trainable array with its gradient accumulator and Adam moments.
template <typename T>
struct Param {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
  Matrix<T> m;
  Matrix<T> v;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)),
        value(Matrix<T>::Zero(rows, cols)),
        grad(Matrix<T>::Zero(rows, cols)),
        m(Matrix<T>::Zero(rows, cols)),
        v(Matrix<T>::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }

  void init_uniform(Rng& rng, double bound) {
    for (Eigen::Index i = 0; i < value.size(); ++i)
      value.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
  }
};

/// Adam with bias correction.
template <typename T>
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Param<T>*>& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (Param<T>* p : params) {
      p->m = static_cast<T>(beta1_) * p->m + static_cast<T>(1.0 - beta1_) * p->grad;
      p->v = static_cast<T>(beta2_) * p->v +
             static_cast<T>(1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
      if (lr_ == 0.0) continue;
      const auto mhat = p->m.array() / static_cast<T>(c1);
      const auto vhat = p->v.array() / static_cast<T>(c2);
      p->value.array() -= static_cast<T>(lr_) * mhat / (vhat.sqrt() + static_cast<T>(eps_));
    }
  }

  double learning_rate() const { return lr_; }

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  std::int64_t t_ = 0;
};

template <typename T>
bool all_finite(const std::vector<Param<T>*>& params) {
  for (const Param<T>* p : params)
    if (!p->value.allFinite()) return false;
  return true;
}

template <typename T>
void write_param(io::ByteWriter& w, const Param<T>& p) {
  w.string(p.name);
  w.put(static_cast<std::uint32_t>(p.value.rows()));
  w.put(static_cast<std::uint32_t>(p.value.cols()));
  for (Eigen::Index i = 0; i < p.value.size(); ++i)
    w.put(static_cast<double>(p.value.data()[i]));
}

template <typename T>
void read_param(io::ByteReader& r, Param<T>& p) {
  const auto name = r.string();
  const auto rows = r.get<std::uint32_t>();
  const auto cols = r.get<std::uint32_t>();
  if (name != p.name || rows != p.value.rows() || cols != p.value.cols())
    throw FormatError(r.origin() + ": parameter '" + name + "' does not match model layout");
  for (Eigen::Index i = 0; i < p.value.size(); ++i)
    p.value.data()[i] = static_cast<T>(r.get<double>());
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace firegen::nn
