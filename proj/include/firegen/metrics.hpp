#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "firegen/ca.hpp"
#include "firegen/errors.hpp"
#include "firegen/geofields.hpp"

namespace firegen::metrics {

inline constexpr double kBurnedThreshold = 0.4;

/// Frames are f32, so the comparison happens in f32 as well: a stored 0.4f
/// must not count as burned against a threshold of 0.4.
inline bool is_burned(float v, double tau) { return v > static_cast<float>(tau); }

/// 1 where value > tau (strict), else 0.
inline void threshold_burned(std::span<const float> frame, std::span<float> out,
                             double tau = kBurnedThreshold) {
  if (frame.size() != out.size()) throw InvalidArgument("threshold_burned: size mismatch");
  for (std::size_t i = 0; i < frame.size(); ++i) out[i] = is_burned(frame[i], tau) ? 1.0f : 0.0f;
}

inline std::vector<float> threshold_burned(std::span<const float> frame,
                                           double tau = kBurnedThreshold) {
  std::vector<float> out(frame.size());
  threshold_burned(frame, out, tau);
  return out;
}

inline ca::BurnedSequence threshold_sequence(const ca::BurnedSequence& seq,
                                             double tau = kBurnedThreshold) {
  ca::BurnedSequence out = seq;
  threshold_burned(seq.data, out.data, tau);
  return out;
}

inline std::size_t burned_count(std::span<const float> frame, double tau = kBurnedThreshold) {
  return static_cast<std::size_t>(
      std::count_if(frame.begin(), frame.end(), [tau](float v) { return is_burned(v, tau); }));
}

/// Disagreeing cells divided by truth-burned cells. Inputs are binary frames.
/// Not symmetric: the denominator is always the truth's burned area.
inline double relative_mismatch(std::span<const float> pred, std::span<const float> truth) {
  if (pred.size() != truth.size()) throw InvalidArgument("relative_mismatch: shape mismatch");
  std::size_t disagree = 0;
  std::size_t burned = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = pred[i] > 0.5f;
    const bool t = truth[i] > 0.5f;
    disagree += p != t;
    burned += t;
  }
  if (burned == 0) throw DegenerateError("relative_mismatch: truth frame has no burned cells");
  return static_cast<double>(disagree) / static_cast<double>(burned);
}

/// Frame-averaged relative mismatch over two equally shaped sequences.
inline double relative_mismatch(const ca::BurnedSequence& pred, const ca::BurnedSequence& truth) {
  if (pred.frames != truth.frames || pred.frame_size() != truth.frame_size())
    throw InvalidArgument("relative_mismatch: sequence shape mismatch");
  if (pred.frames == 0) throw InvalidArgument("relative_mismatch: empty sequences");
  double sum = 0.0;
  for (int t = 0; t < pred.frames; ++t) sum += relative_mismatch(pred.frame(t), truth.frame(t));
  return sum / pred.frames;
}

/// ||pred - truth||_F / ||truth||_F, reported next to the relative mismatch.
inline double frobenius_relative(std::span<const float> pred, std::span<const float> truth) {
  if (pred.size() != truth.size()) throw InvalidArgument("frobenius_relative: shape mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - truth[i];
    num += d * d;
    den += static_cast<double>(truth[i]) * truth[i];
  }
  if (den == 0.0) throw DegenerateError("frobenius_relative: truth frame is zero");
  return std::sqrt(num / den);
}

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double dynamic_range = 1.0;
  double k1 = 0.01;
  double k2 = 0.03;
};

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size));
  const double centre = (size - 1) / 2.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - centre;
    w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
  }
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& v : w) v /= s;
  return w;
}

/// Structural similarity with a Gaussian window over every fully contained
/// window position, averaged.
inline double ssim(std::span<const float> a, std::span<const float> b, int height, int width,
                   const SsimOptions& opt = {}) {
  if (a.size() != b.size() || a.size() != static_cast<std::size_t>(height) * width)
    throw InvalidArgument("ssim: shape mismatch");
  if (height < opt.window || width < opt.window)
    throw InvalidArgument("ssim: frame smaller than the window");
  const auto w = gaussian_window(opt.window, opt.sigma);
  const int oh = height - opt.window + 1;
  const int ow = width - opt.window + 1;

  // Horizontal pass of the five moment images, then vertical.
  std::array<std::vector<double>, 5> rows;
  for (auto& r : rows) r.assign(static_cast<std::size_t>(height) * ow, 0.0);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < ow; ++c) {
      std::array<double, 5> acc{};
      for (int k = 0; k < opt.window; ++k) {
        const std::size_t i = static_cast<std::size_t>(r) * width + c + k;
        const double x = a[i], y = b[i], wk = w[static_cast<std::size_t>(k)];
        acc[0] += wk * x;
        acc[1] += wk * y;
        acc[2] += wk * x * x;
        acc[3] += wk * y * y;
        acc[4] += wk * x * y;
      }
      for (std::size_t m = 0; m < 5; ++m) rows[m][static_cast<std::size_t>(r) * ow + c] = acc[m];
    }

  const double c1 = std::pow(opt.k1 * opt.dynamic_range, 2);
  const double c2 = std::pow(opt.k2 * opt.dynamic_range, 2);
  double total = 0.0;
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c) {
      std::array<double, 5> acc{};
      for (int k = 0; k < opt.window; ++k) {
        const std::size_t i = static_cast<std::size_t>(r + k) * ow + c;
        for (std::size_t m = 0; m < 5; ++m) acc[m] += w[static_cast<std::size_t>(k)] * rows[m][i];
      }
      const double mx = acc[0], my = acc[1];
      const double vx = acc[2] - mx * mx;
      const double vy = acc[3] - my * my;
      const double cxy = acc[4] - mx * my;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
  return total / (static_cast<double>(oh) * ow);
}

struct AreaPoint {
  double hours = 0.0;
  std::size_t burned = 0;
};

inline std::vector<AreaPoint> burned_area_curve(const ca::BurnedSequence& seq,
                                                double tau = kBurnedThreshold) {
  std::vector<AreaPoint> out;
  out.reserve(static_cast<std::size_t>(seq.frames));
  for (int t = 0; t < seq.frames; ++t) out.push_back({seq.hours(t), burned_count(seq.frame(t), tau)});
  return out;
}

/// Frame whose timestamp is nearest to `hours`; throws if beyond the sequence.
inline int frame_at_hours(const ca::BurnedSequence& seq, double hours) {
  const int t = static_cast<int>(std::lround(hours / seq.snapshot_interval_hours));
  if (t < 0 || t >= seq.frames)
    throw InvalidArgument("sequence does not reach " + std::to_string(hours) + " h");
  return t;
}

/// Mean row/col of the burned cells at the frame nearest `at_hours`, rounded.
inline geo::Cell ignition_barycentre(const ca::BurnedSequence& seq, double at_hours = 12.0,
                                     double tau = kBurnedThreshold) {
  const int t = frame_at_hours(seq, at_hours);
  double sr = 0.0, sc = 0.0;
  std::size_t n = 0;
  for (int r = 0; r < seq.height; ++r)
    for (int c = 0; c < seq.width; ++c)
      if (is_burned(seq.at(t, r, c), tau)) {
        sr += r;
        sc += c;
        ++n;
      }
  if (n == 0) throw DegenerateError("ignition_barycentre: no burned cells at the requested time");
  return {static_cast<int>(std::lround(sr / static_cast<double>(n))),
          static_cast<int>(std::lround(sc / static_cast<double>(n)))};
}

struct CovariateRow {
  std::size_t final_area = 0;
  double mean_vegetation = 0.0;
  double mean_slope = 0.0;
  geo::Cell barycentre{};
};

struct CovariateOptions {
  double at_hours = 72.0;
  double barycentre_hours = 12.0;
  int neighbourhood_radius = 8;
  double tau = kBurnedThreshold;
};

/// Final burned area against vegetation density and normalized slope
/// magnitude, both averaged over a disc around the estimated ignition point.
inline std::vector<CovariateRow> area_vs_covariates(std::span<const ca::BurnedSequence> dataset,
                                                    const geo::Ecoregion& eco,
                                                    const CovariateOptions& opt = {}) {
  const auto slope_raw = geo::slope_magnitude(eco.elevation());
  std::vector<float> slope(slope_raw.size(), 0.0f);
  if (slope_raw.max() > slope_raw.min()) {
    auto n = geo::normalize01(slope_raw).values();
    std::copy(n.begin(), n.end(), slope.begin());
  }
  const auto& veg = eco.vegetation_density();
  const int rad = opt.neighbourhood_radius;

  std::vector<CovariateRow> rows;
  for (const auto& seq : dataset) {
    if (seq.height != eco.height() || seq.width != eco.width())
      throw InvalidArgument("area_vs_covariates: sequence does not match the ecoregion");
    CovariateRow row;
    row.final_area = burned_count(seq.frame(frame_at_hours(seq, opt.at_hours)), opt.tau);
    row.barycentre = ignition_barycentre(seq, opt.barycentre_hours, opt.tau);
    double sv = 0.0, ss = 0.0;
    std::size_t n = 0;
    for (int dr = -rad; dr <= rad; ++dr)
      for (int dc = -rad; dc <= rad; ++dc) {
        if (dr * dr + dc * dc > rad * rad) continue;
        const geo::Cell c{row.barycentre.row + dr, row.barycentre.col + dc};
        if (!veg.contains(c)) continue;
        sv += veg.at(c);
        ss += slope[static_cast<std::size_t>(c.row) * eco.width() + c.col];
        ++n;
      }
    row.mean_vegetation = sv / static_cast<double>(n);
    row.mean_slope = ss / static_cast<double>(n);
    rows.push_back(row);
  }
  return rows;
}

/// Fraction of consecutive frame pairs whose thresholded burned count drops.
inline double monotonicity_violation_rate(const ca::BurnedSequence& seq,
                                          double tau = kBurnedThreshold) {
  if (seq.frames < 2) throw InvalidArgument("monotonicity_violation_rate: need >= 2 frames");
  int violations = 0;
  std::size_t prev = burned_count(seq.frame(0), tau);
  for (int t = 1; t < seq.frames; ++t) {
    const std::size_t cur = burned_count(seq.frame(t), tau);
    violations += cur < prev;
    prev = cur;
  }
  return static_cast<double>(violations) / (seq.frames - 1);
}

/// Mean absolute difference between 4-neighbours; a noise proxy for generated frames.
inline double total_variation(std::span<const float> frame, int height, int width) {
  double tv = 0.0;
  std::size_t n = 0;
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * width + c;
      if (c + 1 < width) tv += std::abs(frame[i + 1] - frame[i]), ++n;
      if (r + 1 < height) tv += std::abs(frame[i + static_cast<std::size_t>(width)] - frame[i]), ++n;
    }
  return n ? tv / static_cast<double>(n) : 0.0;
}

/// Average ranks (ties share the mean rank), 1-based.
inline std::vector<double> ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("pearson: need >= 2 pairs");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  return pearson(rx, ry);
}

inline double mean(std::span<const double> v) {
  if (v.empty()) throw InvalidArgument("mean of an empty range");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw InvalidArgument("median of an empty range");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

/// Least-squares slope of y against x.
inline double ls_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("ls_slope: need >= 2 points");
  const double mx = mean(x), my = mean(y);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += (x[i] - mx) * (y[i] - my);
    den += (x[i] - mx) * (x[i] - mx);
  }
  if (den == 0.0) throw DegenerateError("ls_slope: x values are all equal");
  return num / den;
}

}  // namespace firegen::metrics
