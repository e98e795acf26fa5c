#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "firegen/binary_io.hpp"
#include "firegen/errors.hpp"
#include "firegen/geofields.hpp"
#include "firegen/rng.hpp"

namespace firegen::ca {

using geo::Cell;
using geo::Ecoregion;

enum class CellState : std::uint8_t { Unburnable, Unburned, Burning, Burned };

inline bool legal_transition(CellState from, CellState to) {
  if (from == to) return true;
  return (from == CellState::Unburned && to == CellState::Burning) ||
         (from == CellState::Burning && to == CellState::Burned);
}

// Neighbour offsets, row-major around the centre:
//   0 1 2
//   3 . 4
//   5 6 7
inline constexpr std::array<std::array<int, 2>, 8> kNeighbours{{
    {-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}}};

/// Spread model constants. The probability of fire passing from a burning donor
/// to an unburned receiver is
///   p_h * (1 + p_veg) * (1 + p_den) * p_s * p_w, clamped to [0, 1],
/// with p_veg = veg_gain * (d - 0.5), p_den = den_gain * (c - 0.5) at the receiver,
/// p_s = exp(slope_coeff * theta_s) and
/// p_w = exp(c1 * V) * exp(V * c2 * (cos theta_w - 1)).
struct CAParams {
  double p_h = 0.58;
  double veg_gain = 0.8;
  double den_gain = 0.6;
  double slope_coeff = 0.078;  // 1/radian
  double wind_c1 = 0.045;
  double wind_c2 = 0.131;
  int burning_duration_steps = 1;
  int steps_per_snapshot = 2;
  double snapshot_interval_hours = 6.0;

  void validate() const {
    if (!(p_h >= 0.0 && p_h <= 1.0)) throw InvalidArgument("p_h must lie in [0,1]");
    if (burning_duration_steps < 1) throw InvalidArgument("burning_duration_steps must be >= 1");
    if (steps_per_snapshot < 1) throw InvalidArgument("steps_per_snapshot must be >= 1");
    if (!(snapshot_interval_hours > 0.0))
      throw InvalidArgument("snapshot_interval_hours must be positive");
    // Fields are in [0,1], so gain*(x-0.5) > -1 for every cell iff |gain| < 2.
    if (!(std::abs(veg_gain) < 2.0) || !(std::abs(den_gain) < 2.0))
      throw InvalidArgument("veg_gain/den_gain must keep (1+p_veg), (1+p_den) positive");
    for (double v : {slope_coeff, wind_c1, wind_c2})
      if (!std::isfinite(v)) throw InvalidArgument("CA coefficients must be finite");
  }
};

/// Angle between the wind vector and the donor->receiver direction.
inline double wind_angle(double wind_direction, Cell donor, Cell receiver) {
  // Bearing convention: 0 points to decreasing row, pi/2 to increasing column.
  const double wr = -std::cos(wind_direction);
  const double wc = std::sin(wind_direction);
  const double dr = receiver.row - donor.row;
  const double dc = receiver.col - donor.col;
  const double cosang = (wr * dr + wc * dc) / std::hypot(dr, dc);
  return std::acos(std::clamp(cosang, -1.0, 1.0));
}

inline double burn_probability(const CAParams& params, const Ecoregion& eco, Cell donor,
                               Cell receiver) {
  if (!geo::adjacent(donor, receiver) || !eco.contains(donor))
    throw InvalidArgument("burn_probability: donor and receiver must be adjacent grid cells");
  if (eco.unburnable(receiver)) return 0.0;
  const double p_veg = params.veg_gain * (eco.vegetation_density().at(receiver) - 0.5);
  const double p_den = params.den_gain * (eco.canopy_cover().at(receiver) - 0.5);
  const double p_s =
      std::exp(params.slope_coeff * geo::slope_angle(eco.elevation(), donor, receiver));
  const double v = eco.wind_speed();
  const double cos_w = std::cos(wind_angle(eco.wind_direction(), donor, receiver));
  const double p_w = std::exp(params.wind_c1 * v) * std::exp(v * params.wind_c2 * (cos_w - 1.0));
  const double p = params.p_h * (1.0 + p_veg) * (1.0 + p_den) * p_s * p_w;
  return std::clamp(p, 0.0, 1.0);
}

struct FireState {
  int height = 0;
  int width = 0;
  std::vector<CellState> states;
  std::vector<std::int32_t> burn_clock;
  std::int64_t step_index = 0;

  /// All burnable cells Unburned, unburnable ones marked.
  static FireState initial(const Ecoregion& eco) {
    FireState s;
    s.height = eco.height();
    s.width = eco.width();
    s.states.resize(static_cast<std::size_t>(s.height) * s.width);
    s.burn_clock.assign(s.states.size(), 0);
    auto mask = eco.unburnable_mask();
    for (std::size_t i = 0; i < s.states.size(); ++i)
      s.states[i] = mask[i] ? CellState::Unburnable : CellState::Unburned;
    return s;
  }

  std::size_t index(Cell c) const { return static_cast<std::size_t>(c.row) * width + c.col; }
  CellState at(Cell c) const { return states[index(c)]; }

  void ignite(Cell c) {
    if (at(c) != CellState::Unburned) throw InvalidArgument("can only ignite an unburned cell");
    states[index(c)] = CellState::Burning;
    burn_clock[index(c)] = 1;
  }

  std::size_t count(CellState which) const {
    return static_cast<std::size_t>(std::count(states.begin(), states.end(), which));
  }
};

/// Per-step cache of the donor->receiver probabilities for one ecoregion.
/// burn_probability is a pure function of (params, eco, donor, receiver), so
/// the 8 directional values per receiver can be tabulated once.
class SpreadTable {
 public:
  SpreadTable(const CAParams& params, const Ecoregion& eco)
      : height_(eco.height()), width_(eco.width()) {
    params.validate();
    probs_.assign(static_cast<std::size_t>(height_) * width_ * 8, 0.0);
    for (int r = 0; r < height_; ++r)
      for (int c = 0; c < width_; ++c)
        for (std::size_t k = 0; k < 8; ++k) {
          // Offset k points from the receiver towards the donor.
          const Cell receiver{r, c};
          const Cell donor{r + kNeighbours[k][0], c + kNeighbours[k][1]};
          if (!eco.contains(donor)) continue;
          probs_[(static_cast<std::size_t>(r) * width_ + c) * 8 + k] =
              burn_probability(params, eco, donor, receiver);
        }
  }

  double probability(int receiver_row, int receiver_col, std::size_t k) const {
    return probs_[(static_cast<std::size_t>(receiver_row) * width_ + receiver_col) * 8 + k];
  }

 private:
  int height_;
  int width_;
  std::vector<double> probs_;
};

/// One CA step. Each Unburned cell with burning neighbours runs one Bernoulli
/// trial per burning donor and ignites if any succeeds. Burning cells whose
/// clock has reached burning_duration_steps become Burned. Cells outside the
/// grid act as unburnable.
inline FireState step(const FireState& state, const SpreadTable& table, const CAParams& params,
                      Rng& rng) {
  FireState next = state;
  const int h = state.height;
  const int w = state.width;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      if (state.states[i] != CellState::Unburned) continue;
      bool ignited = false;
      for (std::size_t k = 0; k < 8; ++k) {
        const int dr = r + kNeighbours[k][0];
        const int dc = c + kNeighbours[k][1];
        if (dr < 0 || dr >= h || dc < 0 || dc >= w) continue;
        if (state.states[static_cast<std::size_t>(dr) * w + dc] != CellState::Burning) continue;
        // Every burning donor gets its own trial; draws are consumed even after
        // a success so the stream layout is independent of outcomes.
        if (rng.uniform() < table.probability(r, c, k)) ignited = true;
      }
      if (ignited) {
        next.states[i] = CellState::Burning;
        next.burn_clock[i] = 1;
      }
    }
  }
  for (std::size_t i = 0; i < state.states.size(); ++i) {
    if (state.states[i] != CellState::Burning) continue;
    if (state.burn_clock[i] >= params.burning_duration_steps) {
      next.states[i] = CellState::Burned;
      next.burn_clock[i] = 0;
    } else {
      next.burn_clock[i] = state.burn_clock[i] + 1;
    }
  }
  next.step_index = state.step_index + 1;
  return next;
}

inline FireState step(const FireState& state, const Ecoregion& eco, const CAParams& params,
                      Rng& rng) {
  if (state.height != eco.height() || state.width != eco.width() ||
      state.states.size() != static_cast<std::size_t>(eco.height()) * eco.width())
    throw InvalidArgument("fire state shape does not match the ecoregion");
  return step(state, SpreadTable(params, eco), params, rng);
}

/// T x H x W burned-area frames, frame-major then row-major. CA output is
/// binary and monotone; generated or predicted sequences are continuous in [0,1].
struct BurnedSequence {
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;
  float snapshot_interval_hours = 6.0f;
  Cell ignition{};
  std::uint64_t seed = 0;

  BurnedSequence() = default;
  BurnedSequence(int t, int h, int w)
      : frames(t), height(h), width(w), data(static_cast<std::size_t>(t) * h * w, 0.0f) {}

  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width; }
  std::span<float> frame(int t) {
    return {data.data() + static_cast<std::size_t>(t) * frame_size(), frame_size()};
  }
  std::span<const float> frame(int t) const {
    return {data.data() + static_cast<std::size_t>(t) * frame_size(), frame_size()};
  }
  float& at(int t, int r, int c) { return data[t * frame_size() + static_cast<std::size_t>(r) * width + c]; }
  float at(int t, int r, int c) const {
    return data[t * frame_size() + static_cast<std::size_t>(r) * width + c];
  }
  double hours(int t) const { return t * static_cast<double>(snapshot_interval_hours); }

  friend bool operator==(const BurnedSequence&, const BurnedSequence&) = default;
};

inline void write_burned_frame(const FireState& s, std::span<float> out) {
  for (std::size_t i = 0; i < s.states.size(); ++i)
    out[i] = (s.states[i] == CellState::Burning || s.states[i] == CellState::Burned) ? 1.0f : 0.0f;
}

/// Runs steps_per_snapshot CA steps per emitted frame. Frame 0 holds only the
/// ignition cell.
inline BurnedSequence simulate(const Ecoregion& eco, const CAParams& params, Cell ignition,
                               int n_snapshots, std::uint64_t seed) {
  params.validate();
  if (n_snapshots < 2) throw InvalidArgument("simulate: n_snapshots must be >= 2");
  if (!eco.contains(ignition) || eco.unburnable(ignition))
    throw InvalidArgument("simulate: ignition cell is outside the grid or unburnable");

  const SpreadTable table(params, eco);
  Rng rng(seed);
  FireState state = FireState::initial(eco);
  state.ignite(ignition);

  BurnedSequence seq(n_snapshots, eco.height(), eco.width());
  seq.snapshot_interval_hours = static_cast<float>(params.snapshot_interval_hours);
  seq.ignition = ignition;
  seq.seed = seed;
  write_burned_frame(state, seq.frame(0));
  for (int t = 1; t < n_snapshots; ++t) {
    for (int k = 0; k < params.steps_per_snapshot; ++k) state = step(state, table, params, rng);
    write_burned_frame(state, seq.frame(t));
  }
  return seq;
}

/// Uniform draw over the central box [H/4, 3H/4) x [W/4, 3W/4), rejecting
/// unburnable cells.
inline Cell sample_ignition(Rng& rng, int height, int width,
                            std::span<const std::uint8_t> unburnable = {}) {
  if (height < 8 || width < 8) throw InvalidArgument("sample_ignition: dimensions must be >= 8");
  if (!unburnable.empty() &&
      unburnable.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width))
    throw InvalidArgument("sample_ignition: mask shape mismatch");
  const int r0 = height / 4, r1 = 3 * height / 4;
  const int c0 = width / 4, c1 = 3 * width / 4;
  constexpr int kMaxRetries = 1000;
  for (int attempt = 0; attempt <= kMaxRetries; ++attempt) {
    const Cell c{r0 + static_cast<int>(rng.below(static_cast<std::uint64_t>(r1 - r0))),
                 c0 + static_cast<int>(rng.below(static_cast<std::uint64_t>(c1 - c0)))};
    if (unburnable.empty() || !unburnable[static_cast<std::size_t>(c.row) * width + c.col])
      return c;
  }
  throw DegenerateError("sample_ignition: no burnable cell found in the central zone");
}

inline Cell sample_ignition(Rng& rng, const Ecoregion& eco) {
  return sample_ignition(rng, eco.height(), eco.width(), eco.unburnable_mask());
}

// ---------------------------------------------------------------------------
// FSEQ: "FSEQ", u32 version=1, u32 T, u32 H, u32 W, u8 dtype (0=f32),
// f32 snapshot_interval_hours, u32 ignition_row, u32 ignition_col, u64 seed,
// then T*H*W little-endian f32, frame-major then row-major.

inline constexpr std::uint32_t kFseqVersion = 1;

inline void save_sequence(const BurnedSequence& seq, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.magic("FSEQ");
  w.put(kFseqVersion);
  w.put(static_cast<std::uint32_t>(seq.frames));
  w.put(static_cast<std::uint32_t>(seq.height));
  w.put(static_cast<std::uint32_t>(seq.width));
  w.put(std::uint8_t{0});
  w.put(seq.snapshot_interval_hours);
  w.put(static_cast<std::uint32_t>(seq.ignition.row));
  w.put(static_cast<std::uint32_t>(seq.ignition.col));
  w.put(seq.seed);
  w.put_all(std::span<const float>(seq.data));
  w.write_file(path);
}

inline BurnedSequence load_sequence(const std::filesystem::path& path) {
  auto r = io::ByteReader::from_file(path);
  r.expect_magic("FSEQ");
  r.expect_version(kFseqVersion);
  const auto t = r.get<std::uint32_t>();
  const auto h = r.get<std::uint32_t>();
  const auto w = r.get<std::uint32_t>();
  if (r.get<std::uint8_t>() != 0) throw FormatError(path.string() + ": unsupported dtype");
  if (t == 0 || h == 0 || w == 0 || t > 4096 || h > (1u << 15) || w > (1u << 15))
    throw FormatError(path.string() + ": bad sequence dimensions");
  BurnedSequence seq(static_cast<int>(t), static_cast<int>(h), static_cast<int>(w));
  seq.snapshot_interval_hours = r.get<float>();
  seq.ignition.row = static_cast<int>(r.get<std::uint32_t>());
  seq.ignition.col = static_cast<int>(r.get<std::uint32_t>());
  seq.seed = r.get<std::uint64_t>();
  seq.data = r.get_vector<float>(static_cast<std::size_t>(t) * h * w);
  r.expect_end();
  return seq;
}

}  // namespace firegen::ca
