// Minimal SVG figure emission: density before/after plots and the 2D
// valence-arousal histogram heatmap.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "varest/common.hpp"
#include "varest/lds.hpp"

namespace varest::plot {

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(2);
  os.setf(std::ios::fixed);
  os << v;
  return os.str();
}

}  // namespace detail

// Empirical histogram (bars) against the smoothed density (line), shared
// y scale in count units.
inline std::string svg_density_figure(const std::vector<double>& bin_edges,
                                      const std::vector<double>& empirical,
                                      const std::vector<double>& smoothed,
                                      const std::string& title) {
  const size_t n = empirical.size();
  if (n == 0 || smoothed.size() != n || bin_edges.size() != n + 1) {
    throw ValidationError("svg_density_figure: inconsistent series lengths");
  }
  const double width = 640, height = 420;
  const double left = 60, right = 20, top = 40, bottom = 40;
  const double plot_w = width - left - right, plot_h = height - top - bottom;
  double ymax = 1e-12;
  for (double v : empirical) ymax = std::max(ymax, v);
  for (double v : smoothed) ymax = std::max(ymax, v);
  ymax *= 1.05;

  auto px = [&](double label) {
    return left + (label + 1.0) / 2.0 * plot_w;
  };
  auto py = [&](double v) { return top + plot_h * (1.0 - v / ymax); };

  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width
      << "' height='" << height << "' viewBox='0 0 " << width << " " << height
      << "'>\n";
  svg << "<rect width='100%' height='100%' fill='white'/>\n";
  svg << "<text x='" << width / 2 << "' y='24' text-anchor='middle' "
      << "font-family='sans-serif' font-size='16'>" << title << "</text>\n";
  for (size_t b = 0; b < n; ++b) {
    const double x0 = px(bin_edges[b]);
    const double x1 = px(bin_edges[b + 1]);
    const double y = py(empirical[b]);
    svg << "<rect x='" << detail::fmt(x0) << "' y='" << detail::fmt(y)
        << "' width='" << detail::fmt(std::max(0.5, x1 - x0)) << "' height='"
        << detail::fmt(top + plot_h - y) << "' fill='#9ecae1'/>\n";
  }
  svg << "<polyline fill='none' stroke='#d62728' stroke-width='2' points='";
  for (size_t b = 0; b < n; ++b) {
    const double cx = 0.5 * (px(bin_edges[b]) + px(bin_edges[b + 1]));
    svg << detail::fmt(cx) << "," << detail::fmt(py(smoothed[b])) << " ";
  }
  svg << "'/>\n";
  svg << "<line x1='" << left << "' y1='" << top + plot_h << "' x2='"
      << left + plot_w << "' y2='" << top + plot_h
      << "' stroke='black'/>\n";
  svg << "<line x1='" << left << "' y1='" << top << "' x2='" << left << "' y2='"
      << top + plot_h << "' stroke='black'/>\n";
  for (double tick : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
    svg << "<text x='" << detail::fmt(px(tick)) << "' y='" << height - 18
        << "' text-anchor='middle' font-family='sans-serif' font-size='11'>"
        << detail::fmt(tick) << "</text>\n";
  }
  svg << "<text x='" << left - 8 << "' y='" << top + 4
      << "' text-anchor='end' font-family='sans-serif' font-size='11'>"
      << detail::fmt(ymax) << "</text>\n";
  svg << "<text x='" << left - 8 << "' y='" << top + plot_h
      << "' text-anchor='end' font-family='sans-serif' font-size='11'>0</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

// Counts over the [-1,1]^2 plane; [row][col] = [valence bin][arousal bin].
// Sentinel-labelled pairs are excluded.
inline std::vector<std::vector<std::int64_t>> va_histogram_2d(
    const std::vector<std::pair<double, double>>& labels, int bins) {
  if (bins < 2) throw ConfigError("va_histogram_2d: bins must be >= 2");
  std::vector<std::vector<std::int64_t>> counts(
      static_cast<size_t>(bins),
      std::vector<std::int64_t>(static_cast<size_t>(bins), 0));
  long kept = 0;
  for (const auto& [v, a] : labels) {
    if (is_sentinel(v) || is_sentinel(a)) continue;
    counts[static_cast<size_t>(lds::bin_index(v, bins))]
          [static_cast<size_t>(lds::bin_index(a, bins))]++;
    ++kept;
  }
  if (kept == 0) {
    throw ValidationError("va_histogram_2d: no annotated labels");
  }
  return counts;
}

inline std::string svg_heatmap(
    const std::vector<std::vector<std::int64_t>>& counts, bool log_scale,
    const std::string& title) {
  const size_t rows = counts.size();
  if (rows == 0) throw ValidationError("svg_heatmap: empty counts");
  const size_t cols = counts[0].size();
  const double cell = std::max(8.0, 400.0 / static_cast<double>(rows));
  const double left = 60, top = 50;
  const double width = left + cell * static_cast<double>(cols) + 30;
  const double height = top + cell * static_cast<double>(rows) + 50;

  double vmax = 1.0;
  for (const auto& row : counts) {
    for (std::int64_t c : row) {
      const double v = log_scale ? std::log1p(static_cast<double>(c))
                                 : static_cast<double>(c);
      vmax = std::max(vmax, v);
    }
  }

  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width
      << "' height='" << height << "'>\n";
  svg << "<rect width='100%' height='100%' fill='white'/>\n";
  svg << "<text x='" << width / 2 << "' y='26' text-anchor='middle' "
      << "font-family='sans-serif' font-size='15'>" << title << "</text>\n";
  for (size_t r = 0; r < rows; ++r) {
    for (size_t c = 0; c < cols; ++c) {
      const double v = log_scale
                           ? std::log1p(static_cast<double>(counts[r][c]))
                           : static_cast<double>(counts[r][c]);
      const int shade = 255 - static_cast<int>(std::lround(235.0 * v / vmax));
      // valence on the vertical axis, +1 at the top
      const double x = left + cell * static_cast<double>(c);
      const double y = top + cell * static_cast<double>(rows - 1 - r);
      svg << "<rect x='" << detail::fmt(x) << "' y='" << detail::fmt(y)
          << "' width='" << detail::fmt(cell) << "' height='"
          << detail::fmt(cell) << "' fill='rgb(" << shade << "," << shade
          << ",255)'/>\n";
    }
  }
  svg << "<text x='" << left - 6 << "' y='" << top + 10
      << "' text-anchor='end' font-family='sans-serif' font-size='11'>+1</text>\n";
  svg << "<text x='" << left - 6 << "' y='"
      << top + cell * static_cast<double>(rows)
      << "' text-anchor='end' font-family='sans-serif' font-size='11'>-1</text>\n";
  svg << "<text x='" << left << "' y='" << height - 14
      << "' font-family='sans-serif' font-size='11'>arousal -1..+1, valence "
         "vertical</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << text;
  if (!out) throw IoError("short write: " + path);
}

}  // namespace varest::plot
