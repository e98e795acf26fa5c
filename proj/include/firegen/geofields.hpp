#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "firegen/binary_io.hpp"
#include "firegen/errors.hpp"
#include "firegen/rng.hpp"

namespace firegen::geo {

struct Cell {
  int row = 0;
  int col = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

/// Square-mesh raster of 32-bit values, row-major. Immutable after construction.
class RasterGrid {
 public:
  static constexpr int kMinDim = 8;

  RasterGrid(int height, int width, float cell_size_m, std::vector<float> values,
             std::string name = {})
      : height_(height),
        width_(width),
        cell_size_m_(cell_size_m),
        values_(std::move(values)),
        name_(std::move(name)) {
    if (height < kMinDim || width < kMinDim)
      throw InvalidArgument("raster dimensions must be >= 8, got " + std::to_string(height) +
                            "x" + std::to_string(width));
    if (!(cell_size_m > 0.0f) || !std::isfinite(cell_size_m))
      throw InvalidArgument("cell size must be positive and finite");
    if (values_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width))
      throw InvalidArgument("raster value count does not match dimensions");
    for (float v : values_)
      if (!std::isfinite(v)) throw InvalidArgument("raster '" + name_ + "' has non-finite values");
  }

  static RasterGrid constant(int height, int width, float value, float cell_size_m = 30.0f,
                             std::string name = {}) {
    return {height, width, cell_size_m,
            std::vector<float>(static_cast<std::size_t>(height) * width, value), std::move(name)};
  }

  int height() const { return height_; }
  int width() const { return width_; }
  float cell_size_m() const { return cell_size_m_; }
  const std::string& name() const { return name_; }
  std::span<const float> values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  float at(int row, int col) const {
    return values_[static_cast<std::size_t>(row) * width_ + col];
  }
  float at(Cell c) const { return at(c.row, c.col); }

  bool contains(Cell c) const {
    return c.row >= 0 && c.row < height_ && c.col >= 0 && c.col < width_;
  }

  float min() const { return *std::min_element(values_.begin(), values_.end()); }
  float max() const { return *std::max_element(values_.begin(), values_.end()); }

  bool same_shape(const RasterGrid& o) const {
    return height_ == o.height_ && width_ == o.width_ && cell_size_m_ == o.cell_size_m_;
  }

  RasterGrid renamed(std::string name) const {
    return {height_, width_, cell_size_m_, values_, std::move(name)};
  }

  friend bool operator==(const RasterGrid&, const RasterGrid&) = default;

 private:
  int height_;
  int width_;
  float cell_size_m_;
  std::vector<float> values_;
  std::string name_;
};

/// Min-max rescale to [0, 1]. Throws DegenerateError on a constant grid.
inline RasterGrid normalize01(const RasterGrid& grid) {
  const double lo = grid.min();
  const double hi = grid.max();
  if (!(hi > lo)) throw DegenerateError("cannot normalize constant field '" + grid.name() + "'");
  std::vector<float> out(grid.size());
  auto in = grid.values();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>((static_cast<double>(in[i]) - lo) / (hi - lo));
  return {grid.height(), grid.width(), grid.cell_size_m(), std::move(out), grid.name()};
}

namespace detail {

inline void fft2(std::vector<std::complex<double>>& data, int height, int width, bool inverse) {
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> line_in;
  std::vector<std::complex<double>> line_out;
  line_in.resize(static_cast<std::size_t>(width));
  for (int r = 0; r < height; ++r) {
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(r) * width, width, line_in.begin());
    if (inverse)
      fft.inv(line_out, line_in);
    else
      fft.fwd(line_out, line_in);
    std::copy(line_out.begin(), line_out.end(),
              data.begin() + static_cast<std::ptrdiff_t>(r) * width);
  }
  line_in.resize(static_cast<std::size_t>(height));
  for (int c = 0; c < width; ++c) {
    for (int r = 0; r < height; ++r)
      line_in[static_cast<std::size_t>(r)] = data[static_cast<std::size_t>(r) * width + c];
    if (inverse)
      fft.inv(line_out, line_in);
    else
      fft.fwd(line_out, line_in);
    for (int r = 0; r < height; ++r)
      data[static_cast<std::size_t>(r) * width + c] = line_out[static_cast<std::size_t>(r)];
  }
}

// Signed frequency in cycles per cell for DFT bin k of an n-point transform.
inline double frequency(int k, int n) {
  return static_cast<double>(k <= n / 2 ? k : k - n) / static_cast<double>(n);
}

}  // namespace detail

/// Gaussian random field: white noise low-pass filtered in the frequency domain
/// with a Gaussian kernel whose spatial standard deviation is
/// `correlation_length` cells, then min-max normalized to [0, 1].
inline RasterGrid synth_field(std::uint64_t seed, int height, int width,
                              double correlation_length, float cell_size_m = 30.0f,
                              std::string name = "field") {
  if (height <= 0 || width <= 0) throw InvalidArgument("synth_field: non-positive dimensions");
  if (!(correlation_length >= 1.0))
    throw InvalidArgument("synth_field: correlation_length must be >= 1");

  Rng rng(seed);
  std::vector<std::complex<double>> field(static_cast<std::size_t>(height) * width);
  for (auto& v : field) v = {rng.normal(), 0.0};

  detail::fft2(field, height, width, false);
  const double s2 = 2.0 * std::numbers::pi * std::numbers::pi * correlation_length *
                    correlation_length;
  for (int r = 0; r < height; ++r) {
    const double fy = detail::frequency(r, height);
    for (int c = 0; c < width; ++c) {
      const double fx = detail::frequency(c, width);
      field[static_cast<std::size_t>(r) * width + c] *= std::exp(-s2 * (fx * fx + fy * fy));
    }
  }
  detail::fft2(field, height, width, true);

  std::vector<float> values(field.size());
  double lo = field[0].real();
  double hi = lo;
  for (const auto& v : field) {
    lo = std::min(lo, v.real());
    hi = std::max(hi, v.real());
  }
  if (!(hi > lo)) throw DegenerateError("synth_field: degenerate realization");
  for (std::size_t i = 0; i < field.size(); ++i)
    values[i] = static_cast<float>((field[i].real() - lo) / (hi - lo));
  return {height, width, cell_size_m, std::move(values), std::move(name)};
}

/// Bilinear resampling with pixel-centre alignment. Output stays within the
/// input's [min, max]. The physical extent is preserved, so the cell size scales.
inline RasterGrid resize(const RasterGrid& grid, int new_h, int new_w) {
  if (new_h < RasterGrid::kMinDim || new_w < RasterGrid::kMinDim)
    throw InvalidArgument("resize: target dimensions must be >= 8");
  if (new_h == grid.height() && new_w == grid.width()) return grid;

  const double sy = static_cast<double>(grid.height()) / new_h;
  const double sx = static_cast<double>(grid.width()) / new_w;
  std::vector<float> out(static_cast<std::size_t>(new_h) * new_w);
  for (int r = 0; r < new_h; ++r) {
    double y = std::clamp((r + 0.5) * sy - 0.5, 0.0, grid.height() - 1.0);
    const int y0 = static_cast<int>(std::floor(y));
    const int y1 = std::min(y0 + 1, grid.height() - 1);
    const double wy = y - y0;
    for (int c = 0; c < new_w; ++c) {
      double x = std::clamp((c + 0.5) * sx - 0.5, 0.0, grid.width() - 1.0);
      const int x0 = static_cast<int>(std::floor(x));
      const int x1 = std::min(x0 + 1, grid.width() - 1);
      const double wx = x - x0;
      const double top = (1.0 - wx) * grid.at(y0, x0) + wx * grid.at(y0, x1);
      const double bottom = (1.0 - wx) * grid.at(y1, x0) + wx * grid.at(y1, x1);
      out[static_cast<std::size_t>(r) * new_w + c] =
          static_cast<float>((1.0 - wy) * top + wy * bottom);
    }
  }
  const float cell = grid.cell_size_m() * static_cast<float>(grid.width()) / new_w;
  return {new_h, new_w, cell, std::move(out), grid.name()};
}

inline bool adjacent(Cell a, Cell b) {
  const int dr = std::abs(a.row - b.row);
  const int dc = std::abs(a.col - b.col);
  return std::max(dr, dc) == 1;
}

/// Slope angle (radians) from `from` to `to`: atan(delta elevation over the
/// centre-to-centre distance). Positive when `to` is uphill.
inline double slope_angle(const RasterGrid& elevation, Cell from, Cell to) {
  if (!elevation.contains(from) || !elevation.contains(to) || !adjacent(from, to))
    throw InvalidArgument("slope_angle: cells must be adjacent and inside the grid");
  const bool diagonal = from.row != to.row && from.col != to.col;
  const double run = elevation.cell_size_m() * (diagonal ? std::numbers::sqrt2 : 1.0);
  const double rise = static_cast<double>(elevation.at(to)) - static_cast<double>(elevation.at(from));
  return std::atan(rise / run);
}

/// Per-cell terrain steepness atan(|grad elevation|) from central differences.
inline RasterGrid slope_magnitude(const RasterGrid& elevation) {
  const int h = elevation.height();
  const int w = elevation.width();
  const double cs = elevation.cell_size_m();
  std::vector<float> out(elevation.size());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int r0 = std::max(r - 1, 0), r1 = std::min(r + 1, h - 1);
      const int c0 = std::max(c - 1, 0), c1 = std::min(c + 1, w - 1);
      const double gy = (elevation.at(r1, c) - elevation.at(r0, c)) / (cs * (r1 - r0));
      const double gx = (elevation.at(r, c1) - elevation.at(r, c0)) / (cs * (c1 - c0));
      out[static_cast<std::size_t>(r) * w + c] =
          static_cast<float>(std::atan(std::hypot(gx, gy)));
    }
  }
  return {h, w, elevation.cell_size_m(), std::move(out), "slope"};
}

// ---------------------------------------------------------------------------
// FGRD: "FGRD", u32 version=1, u32 height, u32 width, f32 cell_size_m,
// then height*width f32, row-major, all little-endian.

inline constexpr std::uint32_t kFgrdVersion = 1;

inline void save_grid(const RasterGrid& grid, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.magic("FGRD");
  w.put(kFgrdVersion);
  w.put(static_cast<std::uint32_t>(grid.height()));
  w.put(static_cast<std::uint32_t>(grid.width()));
  w.put(grid.cell_size_m());
  w.put_all(grid.values());
  w.write_file(path);
}

inline RasterGrid decode_grid(io::ByteReader& r, std::string name) {
  r.expect_magic("FGRD");
  r.expect_version(kFgrdVersion);
  const auto h = r.get<std::uint32_t>();
  const auto w = r.get<std::uint32_t>();
  const auto cell = r.get<float>();
  if (h < RasterGrid::kMinDim || w < RasterGrid::kMinDim || h > (1u << 15) || w > (1u << 15))
    throw FormatError(r.origin() + ": bad grid dimensions");
  auto values = r.get_vector<float>(static_cast<std::size_t>(h) * w);
  r.expect_end();
  try {
    return {static_cast<int>(h), static_cast<int>(w), cell, std::move(values), std::move(name)};
  } catch (const InvalidArgument& e) {
    throw FormatError(r.origin() + ": " + e.what());
  }
}

inline RasterGrid load_grid(const std::filesystem::path& path) {
  auto reader = io::ByteReader::from_file(path);
  return decode_grid(reader, path.stem().string());
}

// ---------------------------------------------------------------------------

/// The static fields that parameterize spread over one domain. Wind is uniform
/// and constant; direction is the bearing the wind blows toward, in radians,
/// clockwise from grid "north" (decreasing row index).
class Ecoregion {
 public:
  static constexpr float kDefaultUnburnableBelow = 0.05f;

  Ecoregion(RasterGrid vegetation_density, RasterGrid canopy_cover, RasterGrid elevation,
            double wind_speed, double wind_direction, std::vector<std::uint8_t> unburnable)
      : vegetation_(std::move(vegetation_density)),
        canopy_(std::move(canopy_cover)),
        elevation_(std::move(elevation)),
        wind_speed_(wind_speed),
        wind_direction_(wind_direction),
        unburnable_(std::move(unburnable)) {
    if (!vegetation_.same_shape(canopy_) || !vegetation_.same_shape(elevation_))
      throw InvalidArgument("ecoregion grids must share height, width and cell size");
    if (unburnable_.size() != vegetation_.size())
      throw InvalidArgument("unburnable mask shape does not match the grids");
    if (!(wind_speed >= 0.0) || !std::isfinite(wind_speed))
      throw InvalidArgument("wind speed must be finite and >= 0");
    if (!(wind_direction >= 0.0 && wind_direction < 2.0 * std::numbers::pi))
      throw InvalidArgument("wind direction must lie in [0, 2pi)");
    check_unit_range(vegetation_);
    check_unit_range(canopy_);
  }

  /// Mask defaults to vegetation density below 0.05.
  Ecoregion(RasterGrid vegetation_density, RasterGrid canopy_cover, RasterGrid elevation,
            double wind_speed, double wind_direction)
      : Ecoregion(vegetation_density, std::move(canopy_cover), std::move(elevation), wind_speed,
                  wind_direction, default_mask(vegetation_density)) {}

  static std::vector<std::uint8_t> default_mask(const RasterGrid& vegetation,
                                                float below = kDefaultUnburnableBelow) {
    std::vector<std::uint8_t> mask(vegetation.size());
    auto v = vegetation.values();
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = v[i] < below ? 1 : 0;
    return mask;
  }

  int height() const { return vegetation_.height(); }
  int width() const { return vegetation_.width(); }
  float cell_size_m() const { return vegetation_.cell_size_m(); }
  const RasterGrid& vegetation_density() const { return vegetation_; }
  const RasterGrid& canopy_cover() const { return canopy_; }
  const RasterGrid& elevation() const { return elevation_; }
  double wind_speed() const { return wind_speed_; }
  double wind_direction() const { return wind_direction_; }
  std::span<const std::uint8_t> unburnable_mask() const { return unburnable_; }

  bool contains(Cell c) const { return vegetation_.contains(c); }
  bool unburnable(Cell c) const {
    return !contains(c) || unburnable_[static_cast<std::size_t>(c.row) * width() + c.col] != 0;
  }

 private:
  static void check_unit_range(const RasterGrid& g) {
    for (float v : g.values())
      if (v < 0.0f || v > 1.0f)
        throw InvalidArgument("field '" + g.name() + "' must be normalized to [0,1]");
  }

  RasterGrid vegetation_;
  RasterGrid canopy_;
  RasterGrid elevation_;
  double wind_speed_;
  double wind_direction_;
  std::vector<std::uint8_t> unburnable_;
};

struct SyntheticEcoregionConfig {
  int size = 128;
  float cell_size_m = 30.0f;
  double vegetation_correlation = 8.0;
  double canopy_correlation = 6.0;
  double elevation_correlation = 16.0;
  double relief_m = 300.0;
  double wind_speed = 5.0;
  double wind_direction = std::numbers::pi / 4.0;
};

inline Ecoregion synth_ecoregion(std::uint64_t master_seed, const SyntheticEcoregionConfig& cfg) {
  auto veg = synth_field(stable_hash(master_seed, "vegetation", 0), cfg.size, cfg.size,
                         cfg.vegetation_correlation, cfg.cell_size_m, "vegetation_density");
  auto canopy = synth_field(stable_hash(master_seed, "canopy", 0), cfg.size, cfg.size,
                            cfg.canopy_correlation, cfg.cell_size_m, "canopy_cover");
  auto unit_elev = synth_field(stable_hash(master_seed, "elevation", 0), cfg.size, cfg.size,
                               cfg.elevation_correlation, cfg.cell_size_m, "elevation");
  std::vector<float> elev(unit_elev.size());
  for (std::size_t i = 0; i < elev.size(); ++i)
    elev[i] = static_cast<float>(unit_elev.values()[i] * cfg.relief_m);
  RasterGrid elevation(cfg.size, cfg.size, cfg.cell_size_m, std::move(elev), "elevation");
  return {std::move(veg), std::move(canopy), std::move(elevation), cfg.wind_speed,
          cfg.wind_direction};
}

}  // namespace firegen::geo
