// Label distribution smoothing over a continuous target in [-1, 1].
//
// The empirical label histogram is convolved with a symmetric kernel to
// estimate the effective label density; per-bin loss weights are the inverse
// of that density, capped at clip_max and scaled so their sample mean over
// the training labels is 1.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "varest/common.hpp"

namespace varest::lds {

enum class KernelKind { kGaussian, kTriangular, kLaplacian, kDelta };

inline const char* kernel_name(KernelKind k) {
  switch (k) {
    case KernelKind::kGaussian: return "gaussian";
    case KernelKind::kTriangular: return "triangular";
    case KernelKind::kLaplacian: return "laplacian";
    case KernelKind::kDelta: return "delta";
  }
  return "?";
}

inline KernelKind kernel_from_name(const std::string& s) {
  if (s == "gaussian") return KernelKind::kGaussian;
  if (s == "triangular") return KernelKind::kTriangular;
  if (s == "laplacian") return KernelKind::kLaplacian;
  if (s == "delta") return KernelKind::kDelta;
  throw ConfigError("unknown kernel kind: " + s);
}

struct SmoothingKernel {
  KernelKind kind = KernelKind::kGaussian;
  double bandwidth = 0.02;  // label units; unused by triangular and delta
  int half_width = 5;       // support radius in bins
};

struct LabelHistogram {
  std::vector<double> bin_edges;       // B+1 edges spanning [-1, 1]
  std::vector<std::int64_t> counts;    // B bins
  int n_bins() const { return static_cast<int>(counts.size()); }
  double bin_width() const { return 2.0 / n_bins(); }
};

struct DensityEstimate {
  std::vector<double> bin_edges;
  std::vector<double> density;
  int n_bins() const { return static_cast<int>(density.size()); }
};

struct WeightTable {
  std::vector<double> bin_edges;
  std::vector<double> weights;
  double clip_max = 0.0;
  int n_bins() const { return static_cast<int>(weights.size()); }
};

inline std::vector<double> make_bin_edges(int n_bins) {
  std::vector<double> edges(static_cast<size_t>(n_bins) + 1);
  for (int i = 0; i <= n_bins; ++i) {
    edges[static_cast<size_t>(i)] = -1.0 + 2.0 * i / n_bins;
  }
  edges.front() = -1.0;
  edges.back() = 1.0;
  return edges;
}

// Half-open bins [edge_b, edge_{b+1}), final bin closed so 1.0 lands in it.
// The floor estimate is corrected against the actual edge values so labels
// sitting exactly on an edge deterministically take the right-hand bin.
inline int bin_index(double label, int n_bins) {
  if (is_sentinel(label)) {
    throw ValidationError("bin_index: sentinel label has no bin");
  }
  if (label < -1.0 || label > 1.0) {
    throw ValidationError("bin_index: label outside [-1, 1]: " +
                          format_exact(label));
  }
  if (label == 1.0) return n_bins - 1;
  const auto edge = [n_bins](int i) { return -1.0 + 2.0 * i / n_bins; };
  int idx = std::clamp(
      static_cast<int>(std::floor((label + 1.0) / (2.0 / n_bins))), 0,
      n_bins - 1);
  while (idx + 1 < n_bins && label >= edge(idx + 1)) ++idx;
  while (idx > 0 && label < edge(idx)) --idx;
  return idx;
}

inline LabelHistogram empirical_density(const std::vector<double>& labels,
                                        int n_bins) {
  if (n_bins < 2) throw ConfigError("empirical_density: n_bins must be >= 2");
  if (labels.empty()) throw ValidationError("empirical_density: no labels");
  LabelHistogram hist;
  hist.bin_edges = make_bin_edges(n_bins);
  hist.counts.assign(static_cast<size_t>(n_bins), 0);
  for (double v : labels) {
    hist.counts[static_cast<size_t>(bin_index(v, n_bins))]++;
  }
  return hist;
}

// Symmetric discrete kernel over offsets -half_width..half_width, sum 1.
inline std::vector<double> discretize_kernel(const SmoothingKernel& kernel,
                                             double bin_width) {
  if (kernel.half_width < 0) {
    throw ConfigError("discretize_kernel: half_width must be >= 0");
  }
  if ((kernel.kind == KernelKind::kGaussian ||
       kernel.kind == KernelKind::kLaplacian) &&
      kernel.bandwidth <= 0.0) {
    throw ConfigError("discretize_kernel: bandwidth must be > 0");
  }
  const int hw = kernel.half_width;
  std::vector<double> k(static_cast<size_t>(2 * hw + 1), 0.0);
  for (int i = -hw; i <= hw; ++i) {
    const double x = i * bin_width;
    double v = 0.0;
    switch (kernel.kind) {
      case KernelKind::kGaussian:
        v = std::exp(-0.5 * (x / kernel.bandwidth) * (x / kernel.bandwidth));
        break;
      case KernelKind::kTriangular:
        // Apex 1 at the center, reaching 0 one bin past the support edge.
        v = 1.0 - std::abs(i) / (hw + 1.0);
        break;
      case KernelKind::kLaplacian:
        v = std::exp(-std::abs(x) / kernel.bandwidth);
        break;
      case KernelKind::kDelta:
        v = (i == 0) ? 1.0 : 0.0;
        break;
    }
    k[static_cast<size_t>(i + hw)] = v;
  }
  double total = 0.0;
  for (double v : k) total += v;
  for (double& v : k) v /= total;
  return k;
}

// Convolve counts with the kernel. Kernel mass that would fall outside
// [-1, 1] is renormalized back over the in-range part, per source bin, so
// the total mass is preserved.
inline DensityEstimate smooth_density(const LabelHistogram& hist,
                                      const SmoothingKernel& kernel) {
  const int B = hist.n_bins();
  const int hw = kernel.half_width;
  const std::vector<double> k = discretize_kernel(kernel, hist.bin_width());

  // In-range kernel mass seen from each source bin.
  std::vector<double> in_mass(static_cast<size_t>(B), 0.0);
  for (int j = 0; j < B; ++j) {
    double m = 0.0;
    for (int o = -hw; o <= hw; ++o) {
      if (j + o >= 0 && j + o < B) m += k[static_cast<size_t>(o + hw)];
    }
    in_mass[static_cast<size_t>(j)] = m;
  }

  DensityEstimate est;
  est.bin_edges = hist.bin_edges;
  est.density.assign(static_cast<size_t>(B), 0.0);
  for (int b = 0; b < B; ++b) {
    double acc = 0.0;
    for (int o = -hw; o <= hw; ++o) {
      const int j = b - o;
      if (j < 0 || j >= B) continue;
      acc += hist.counts[static_cast<size_t>(j)] *
             k[static_cast<size_t>(o + hw)] / in_mass[static_cast<size_t>(j)];
    }
    est.density[static_cast<size_t>(b)] = acc;
  }
  return est;
}

namespace detail {

// Sample mean of min(clip, c * raw[bin]) over the label multiset, given the
// number of labels per bin.
inline double capped_mean(double c, double clip,
                          const std::vector<double>& raw,
                          const std::vector<std::int64_t>& bin_counts,
                          std::int64_t n_labels) {
  double acc = 0.0;
  for (size_t b = 0; b < raw.size(); ++b) {
    if (bin_counts[b] == 0) continue;
    acc += bin_counts[b] * std::min(clip, c * raw[b]);
  }
  return acc / static_cast<double>(n_labels);
}

}  // namespace detail

// Inverse-density weights: w_b = min(clip_max, c / max(density_b, eps)) with
// the scale c chosen so the mean weight over the training labels is 1.
inline WeightTable compute_weights(const DensityEstimate& density,
                                   double clip_max,
                                   const std::vector<double>& labels) {
  constexpr double kEps = 1e-8;
  if (clip_max <= 0.0) throw ConfigError("compute_weights: clip_max must be > 0");
  if (clip_max < 1.0) {
    throw ConfigError(
        "compute_weights: clip_max < 1 cannot satisfy mean weight 1");
  }
  if (labels.empty()) throw ValidationError("compute_weights: no labels");
  const int B = density.n_bins();
  double mass = 0.0;
  for (double d : density.density) mass += d;
  if (mass <= 0.0) {
    throw ValidationError("compute_weights: density has no training mass");
  }

  std::vector<double> raw(static_cast<size_t>(B), 0.0);
  for (int b = 0; b < B; ++b) {
    raw[static_cast<size_t>(b)] =
        1.0 / std::max(density.density[static_cast<size_t>(b)], kEps);
  }
  std::vector<std::int64_t> bin_counts(static_cast<size_t>(B), 0);
  for (double v : labels) {
    bin_counts[static_cast<size_t>(bin_index(v, B))]++;
  }
  const auto n_labels = static_cast<std::int64_t>(labels.size());

  // Exact scale assuming no cap engages; fall back to bisection otherwise.
  double mean_raw = 0.0;
  for (int b = 0; b < B; ++b) {
    mean_raw += bin_counts[static_cast<size_t>(b)] * raw[static_cast<size_t>(b)];
  }
  mean_raw /= static_cast<double>(n_labels);
  double c = 1.0 / mean_raw;

  bool occupied_clips = false;
  for (int b = 0; b < B; ++b) {
    if (bin_counts[static_cast<size_t>(b)] > 0 &&
        c * raw[static_cast<size_t>(b)] > clip_max) {
      occupied_clips = true;
      break;
    }
  }
  if (occupied_clips) {
    double lo = 0.0, hi = c;
    while (detail::capped_mean(hi, clip_max, raw, bin_counts, n_labels) < 1.0) {
      hi *= 2.0;
      if (hi > 1e300) {
        throw ValidationError("compute_weights: mean weight 1 is unreachable");
      }
    }
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (detail::capped_mean(mid, clip_max, raw, bin_counts, n_labels) < 1.0) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    c = hi;
  }

  WeightTable table;
  table.bin_edges = density.bin_edges;
  table.clip_max = clip_max;
  table.weights.assign(static_cast<size_t>(B), 0.0);
  for (int b = 0; b < B; ++b) {
    table.weights[static_cast<size_t>(b)] =
        std::min(clip_max, c * raw[static_cast<size_t>(b)]);
  }
  return table;
}

inline double weight_for(const WeightTable& table, double label) {
  if (is_sentinel(label)) {
    throw ValidationError("weight_for: sentinel labels are never weighted");
  }
  return table.weights[static_cast<size_t>(bin_index(label, table.n_bins()))];
}

// Unit table used when LDS is disabled; shares the code path of the
// weighted loss so disabled runs are bit-identical to explicit unit weights.
inline WeightTable unit_weight_table(int n_bins) {
  WeightTable table;
  table.bin_edges = make_bin_edges(n_bins);
  table.weights.assign(static_cast<size_t>(n_bins), 1.0);
  table.clip_max = 1.0;
  return table;
}

// One "bin_left bin_right weight" line per bin.
inline void write_weight_table(std::ostream& out, const WeightTable& table) {
  for (int b = 0; b < table.n_bins(); ++b) {
    out << format_fixed(table.bin_edges[static_cast<size_t>(b)], 6) << " "
        << format_fixed(table.bin_edges[static_cast<size_t>(b) + 1], 6) << " "
        << format_exact(table.weights[static_cast<size_t>(b)]) << "\n";
  }
}

inline void write_weight_table_file(const std::string& path,
                                    const WeightTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  write_weight_table(out, table);
}

}  // namespace varest::lds
