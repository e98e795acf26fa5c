#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "firegen/errors.hpp"
#include "firegen/metrics.hpp"

namespace firegen::report {

/// Round-trippable, locale-independent number formatting.
inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ofstream open_out(const std::filesystem::path& path, bool binary = false) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

class Csv {
 public:
  explicit Csv(std::vector<std::string> header) : header_(std::move(header)) {}

  Csv& row(std::vector<std::string> cells) {
    if (cells.size() != header_.size()) throw InvalidArgument("csv: row width does not match header");
    rows_.push_back(std::move(cells));
    return *this;
  }

  std::size_t size() const { return rows_.size(); }

  void write(const std::filesystem::path& path) const {
    auto out = open_out(path, true);
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
      out << '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

using Rgb = std::array<std::uint8_t, 3>;

/// RGB raster written as binary PPM (P6).
class Image {
 public:
  Image(int width, int height, Rgb fill = {255, 255, 255})
      : w_(width), h_(height), px_(static_cast<std::size_t>(width) * height, fill) {}

  void set(int x, int y, Rgb c) {
    if (x >= 0 && y >= 0 && x < w_ && y < h_) px_[static_cast<std::size_t>(y) * w_ + x] = c;
  }

  void write(const std::filesystem::path& path) const {
    auto out = open_out(path, true);
    out << "P6\n" << w_ << ' ' << h_ << "\n255\n";
    for (const auto& p : px_) out.write(reinterpret_cast<const char*>(p.data()), 3);
  }

 private:
  int w_, h_;
  std::vector<Rgb> px_;
};

inline constexpr Rgb kBoth{40, 40, 40};        // burned in truth and prediction
inline constexpr Rgb kMissed{215, 48, 39};     // truth only
inline constexpr Rgb kFalseAlarm{69, 117, 180};  // prediction only

/// Rows of panels: one row per fire, columns truth | prediction | mismatch for
/// each predicted frame. Frames are binarized with tau.
struct MontageRow {
  const ca::BurnedSequence* truth = nullptr;
  const ca::BurnedSequence* prediction = nullptr;
};

inline void write_mismatch_montage(const std::filesystem::path& path, std::span<const MontageRow> rows,
                                   double tau = metrics::kBurnedThreshold, int scale = 2) {
  if (rows.empty()) return;
  const auto& first = *rows[0].truth;
  const int gap = 4;
  const int pw = first.width * scale, ph = first.height * scale;
  const int cols = first.frames * 3;
  Image img(cols * (pw + gap) + gap, static_cast<int>(rows.size()) * (ph + gap) + gap, {200, 200, 200});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& tr = *rows[r].truth;
    const auto& pr = *rows[r].prediction;
    for (int f = 0; f < tr.frames; ++f)
      for (int panel = 0; panel < 3; ++panel) {
        const int ox = gap + (f * 3 + panel) * (pw + gap);
        const int oy = gap + static_cast<int>(r) * (ph + gap);
        for (int y = 0; y < tr.height; ++y)
          for (int x = 0; x < tr.width; ++x) {
            const bool t = metrics::is_burned(tr.at(f, y, x), tau);
            const bool p = metrics::is_burned(pr.at(f, y, x), tau);
            Rgb c{255, 255, 255};
            if (panel == 0 && t) c = kBoth;
            if (panel == 1 && p) c = kBoth;
            if (panel == 2) c = t && p ? kBoth : t ? kMissed : p ? kFalseAlarm : Rgb{255, 255, 255};
            for (int sy = 0; sy < scale; ++sy)
              for (int sx = 0; sx < scale; ++sx) img.set(ox + x * scale + sx, oy + y * scale + sy, c);
          }
      }
  }
  img.write(path);
}

/// Grayscale strip of every frame of each sequence (continuous values).
inline void write_sequence_strip(const std::filesystem::path& path,
                                 std::span<const ca::BurnedSequence> seqs, int scale = 2) {
  if (seqs.empty()) return;
  const int gap = 2;
  const int pw = seqs[0].width * scale, ph = seqs[0].height * scale;
  Image img(seqs[0].frames * (pw + gap) + gap, static_cast<int>(seqs.size()) * (ph + gap) + gap,
            {200, 200, 200});
  for (std::size_t s = 0; s < seqs.size(); ++s)
    for (int f = 0; f < seqs[s].frames; ++f)
      for (int y = 0; y < seqs[s].height; ++y)
        for (int x = 0; x < seqs[s].width; ++x) {
          const auto v = static_cast<std::uint8_t>(
              std::lround(255.0 * (1.0 - std::clamp(seqs[s].at(f, y, x), 0.0f, 1.0f))));
          for (int sy = 0; sy < scale; ++sy)
            for (int sx = 0; sx < scale; ++sx)
              img.set(gap + f * (pw + gap) + x * scale + sx,
                      gap + static_cast<int>(s) * (ph + gap) + y * scale + sy, {v, v, v});
        }
  img.write(path);
}

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Minimal SVG line chart with axes, tick labels and a legend.
inline void write_line_plot(const std::filesystem::path& path, const std::string& title,
                            const std::string& xlabel, const std::string& ylabel,
                            std::span<const Series> series, bool log_y = false) {
  static constexpr std::array<const char*, 6> kColours{"#1f77b4", "#d62728", "#2ca02c",
                                                       "#ff7f0e", "#9467bd", "#8c564b"};
  const double W = 640, H = 420, L = 70, R = 20, T = 40, B = 50;
  auto ty = [&](double v) { return log_y ? std::log10(std::max(v, 1e-300)) : v; };
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (ty(y) - y0) / (y1 - y0) * (H - T - B); };

  auto out = open_out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title
      << "</text>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  char buf[64];
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0;
    const double yv = y0 + (y1 - y0) * k / 4.0;
    std::snprintf(buf, sizeof buf, "%.4g", xv);
    out << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << buf
        << "</text>\n";
    std::snprintf(buf, sizeof buf, "%.4g", log_y ? std::pow(10.0, yv) : yv);
    const double yy = H - B - (yv - y0) / (y1 - y0) * (H - T - B);
    out << "<text x=\"" << L - 6 << "\" y=\"" << yy + 4 << "\" text-anchor=\"end\">" << buf
        << "</text>\n";
  }
  out << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
      << xlabel << "</text>\n";
  out << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << (T + H - B) / 2 << ")\">" << ylabel << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* colour = kColours[s % kColours.size()];
    out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size(); ++i)
      if (std::isfinite(series[s].y[i])) out << px(series[s].x[i]) << ',' << py(series[s].y[i]) << ' ';
    out << "\"/>\n";
    out << "<text x=\"" << W - R - 150 << "\" y=\"" << T + 16 * (s + 1) << "\" fill=\"" << colour
        << "\">" << series[s].label << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace firegen::report
