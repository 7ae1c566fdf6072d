// Local phase via a bank of oriented complex band-pass (quadrature) filters,
// and wrapped consecutive-frame phase differences for the temporal stream.
//
// Filters are log-Gabor in radius with a Gaussian angular falloff, restricted
// to a half-plane in the frequency domain so each spatial response is
// analytic: its magnitude is the local amplitude and its argument the local
// phase.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "varest/common.hpp"
#include "varest/dataio.hpp"
#include "varest/fft.hpp"
#include "varest/image.hpp"

namespace varest::phase {

using BoolField = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Wrap into (-pi, pi].
inline double wrap_angle(double a) {
  double w = std::remainder(a, 2.0 * M_PI);
  if (w <= -M_PI) w = M_PI;
  return w;
}

struct FilterBank {
  int n_scales = 0;
  int n_orientations = 0;
  int image_size = 0;
  std::vector<double> center_wavelengths;       // pixels, per scale
  std::vector<double> orientation_angles;       // radians, per orientation
  std::vector<ComplexField> filters;            // [s * n_orientations + o]
  int n_filters() const { return n_scales * n_orientations; }
  const ComplexField& filter(int s, int o) const {
    return filters[static_cast<size_t>(s * n_orientations + o)];
  }
};

struct PhaseMap {
  int n_scales = 0;
  int n_orientations = 0;
  std::vector<Eigen::ArrayXXd> phase;      // (-pi, pi]
  std::vector<Eigen::ArrayXXd> amplitude;  // >= 0
  int n_filters() const { return n_scales * n_orientations; }
};

struct PhaseDiffStack {
  int n_scales = 0;
  int n_orientations = 0;
  std::vector<Eigen::ArrayXXd> diff;  // (-pi, pi]; masked-out entries are 0
  std::vector<BoolField> mask;
  int n_filters() const { return n_scales * n_orientations; }
};

// Orientations evenly spaced over [0, pi); wavelengths geometric by factor 2
// starting at 4 px. Deterministic for fixed parameters.
inline FilterBank build_filter_bank(int n_scales, int n_orientations,
                                    int image_size) {
  if (image_size < 16) throw ConfigError("filter bank: image_size must be >= 16");
  if (n_scales < 1 || n_scales > 5) {
    throw ConfigError("filter bank: n_scales must be in [1, 5]");
  }
  if (n_orientations < 2 || n_orientations > 8) {
    throw ConfigError("filter bank: n_orientations must be in [2, 8]");
  }
  FilterBank bank;
  bank.n_scales = n_scales;
  bank.n_orientations = n_orientations;
  bank.image_size = image_size;
  for (int s = 0; s < n_scales; ++s) {
    bank.center_wavelengths.push_back(4.0 * std::pow(2.0, s));
  }
  for (int o = 0; o < n_orientations; ++o) {
    bank.orientation_angles.push_back(o * M_PI / n_orientations);
  }

  const int n = image_size;
  const double sigma_radial = 0.65;  // log-Gabor bandwidth, ~1 octave
  const double sigma_theta = M_PI / (1.7 * n_orientations);
  const double log_sig = std::log(sigma_radial);

  for (int s = 0; s < n_scales; ++s) {
    const double f0 = 1.0 / bank.center_wavelengths[static_cast<size_t>(s)];
    for (int o = 0; o < n_orientations; ++o) {
      const double theta = bank.orientation_angles[static_cast<size_t>(o)];
      ComplexField filt(n, n);
      double peak = 0.0;
      for (int iy = 0; iy < n; ++iy) {
        const double fy = (iy <= n / 2 ? iy : iy - n) / static_cast<double>(n);
        for (int ix = 0; ix < n; ++ix) {
          const double fx = (ix <= n / 2 ? ix : ix - n) / static_cast<double>(n);
          double h = 0.0;
          const double r = std::hypot(fx, fy);
          const bool nyquist =
              (n % 2 == 0) && (iy == n / 2 || ix == n / 2);
          if (r > 0.0 && !nyquist) {
            const double dtheta = wrap_angle(std::atan2(fy, fx) - theta);
            if (std::abs(dtheta) < M_PI / 2.0) {  // analytic half-plane
              const double lr = std::log(r / f0);
              h = std::exp(-0.5 * lr * lr / (log_sig * log_sig)) *
                  std::exp(-0.5 * dtheta * dtheta / (sigma_theta * sigma_theta));
            }
          }
          filt(iy, ix) = h;
          peak = std::max(peak, h);
        }
      }
      if (peak > 0.0) filt /= peak;
      bank.filters.push_back(std::move(filt));
    }
  }
  return bank;
}

// Complex filter responses: amplitude = |r|, phase = arg(r).
inline PhaseMap decompose(const Image& frame, const FilterBank& bank) {
  if (frame.rows() != bank.image_size || frame.cols() != bank.image_size) {
    throw ValidationError("decompose: frame size does not match the bank");
  }
  const ComplexField spectrum = fft2(frame);
  PhaseMap map;
  map.n_scales = bank.n_scales;
  map.n_orientations = bank.n_orientations;
  map.phase.reserve(static_cast<size_t>(bank.n_filters()));
  map.amplitude.reserve(static_cast<size_t>(bank.n_filters()));
  for (const auto& filt : bank.filters) {
    const ComplexField response = ifft2((spectrum * filt).eval());
    Eigen::ArrayXXd ph(frame.rows(), frame.cols());
    Eigen::ArrayXXd am(frame.rows(), frame.cols());
    for (Eigen::Index y = 0; y < frame.rows(); ++y) {
      for (Eigen::Index x = 0; x < frame.cols(); ++x) {
        const std::complex<double> c = response(y, x);
        am(y, x) = std::abs(c);
        double p = std::atan2(c.imag(), c.real());
        if (p <= -M_PI) p = M_PI;
        ph(y, x) = p;
      }
    }
    map.phase.push_back(std::move(ph));
    map.amplitude.push_back(std::move(am));
  }
  return map;
}

// Wrapped phase difference with an amplitude-reliability mask. The threshold
// is the given quantile of min(prev, curr) amplitudes pooled over the whole
// bank; quantile 0 disables masking.
inline PhaseDiffStack phase_difference(const PhaseMap& prev,
                                       const PhaseMap& curr,
                                       double amplitude_quantile) {
  if (prev.n_scales != curr.n_scales ||
      prev.n_orientations != curr.n_orientations ||
      prev.phase.size() != curr.phase.size()) {
    throw ValidationError("phase_difference: phase map shapes differ");
  }
  for (size_t f = 0; f < prev.phase.size(); ++f) {
    if (prev.phase[f].rows() != curr.phase[f].rows() ||
        prev.phase[f].cols() != curr.phase[f].cols()) {
      throw ValidationError("phase_difference: phase map shapes differ");
    }
  }
  if (amplitude_quantile < 0.0 || amplitude_quantile >= 1.0) {
    throw ConfigError("phase_difference: amplitude_quantile must be in [0,1)");
  }

  double threshold = -1.0;
  if (amplitude_quantile > 0.0) {
    std::vector<double> pool;
    for (size_t f = 0; f < prev.amplitude.size(); ++f) {
      const auto& pa = prev.amplitude[f];
      const auto& ca = curr.amplitude[f];
      for (Eigen::Index y = 0; y < pa.rows(); ++y) {
        for (Eigen::Index x = 0; x < pa.cols(); ++x) {
          pool.push_back(std::min(pa(y, x), ca(y, x)));
        }
      }
    }
    size_t k = static_cast<size_t>(amplitude_quantile *
                                   static_cast<double>(pool.size()));
    k = std::min(k, pool.size() - 1);
    std::nth_element(pool.begin(), pool.begin() + static_cast<long>(k),
                     pool.end());
    threshold = pool[k];
  }

  PhaseDiffStack stack;
  stack.n_scales = prev.n_scales;
  stack.n_orientations = prev.n_orientations;
  for (size_t f = 0; f < prev.phase.size(); ++f) {
    const auto& pp = prev.phase[f];
    const auto& cp = curr.phase[f];
    Eigen::ArrayXXd d(pp.rows(), pp.cols());
    BoolField m(pp.rows(), pp.cols());
    for (Eigen::Index y = 0; y < pp.rows(); ++y) {
      for (Eigen::Index x = 0; x < pp.cols(); ++x) {
        const bool ok =
            std::min(prev.amplitude[f](y, x), curr.amplitude[f](y, x)) >
            threshold;
        m(y, x) = ok;
        d(y, x) = ok ? wrap_angle(cp(y, x) - pp(y, x)) : 0.0;
      }
    }
    stack.diff.push_back(std::move(d));
    stack.mask.push_back(std::move(m));
  }
  return stack;
}

// Phase differences for consecutive frame pairs; element t compares frames
// t and t+1.
inline std::vector<PhaseDiffStack> sequence_phase_diffs(
    const dataio::VideoSequence& video, const FilterBank& bank,
    double amplitude_quantile) {
  if (video.n_frames() < 2) {
    throw ValidationError("sequence_phase_diffs: need at least 2 frames");
  }
  std::vector<PhaseDiffStack> out;
  out.reserve(static_cast<size_t>(video.n_frames() - 1));
  PhaseMap prev = decompose(*video.frames[0].image, bank);
  for (int t = 1; t < video.n_frames(); ++t) {
    PhaseMap curr = decompose(*video.frames[static_cast<size_t>(t)].image, bank);
    out.push_back(phase_difference(prev, curr, amplitude_quantile));
    prev = std::move(curr);
  }
  return out;
}

// ---- binary cache ----------------------------------------------------------
//
// Header: magic, S, O, H, W, count, dtype, quantile, wavelengths. Diffs are
// stored as float64 so cached and freshly computed stacks are bit-identical;
// masks as uint8. Native little-endian; the cache is a local artifact, not an
// interchange format.

inline constexpr std::uint64_t kCacheMagic = 0x5650444331ull;  // "VPDC1"
inline constexpr std::uint64_t kCacheDtypeF64 = 8;

inline void save_phase_diffs(const std::string& path,
                             const std::vector<PhaseDiffStack>& stacks,
                             const FilterBank& bank, double quantile) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open cache for writing: " + path);
  auto put_u64 = [&out](std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  };
  auto put_f64 = [&out](double v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  };
  put_u64(kCacheMagic);
  put_u64(static_cast<std::uint64_t>(bank.n_scales));
  put_u64(static_cast<std::uint64_t>(bank.n_orientations));
  put_u64(static_cast<std::uint64_t>(bank.image_size));
  put_u64(static_cast<std::uint64_t>(bank.image_size));
  put_u64(static_cast<std::uint64_t>(stacks.size()));
  put_u64(kCacheDtypeF64);
  put_f64(quantile);
  for (double w : bank.center_wavelengths) put_f64(w);
  for (const auto& stack : stacks) {
    for (size_t f = 0; f < stack.diff.size(); ++f) {
      const auto& d = stack.diff[f];
      for (Eigen::Index y = 0; y < d.rows(); ++y) {
        for (Eigen::Index x = 0; x < d.cols(); ++x) {
          const double v = d(y, x);
          out.write(reinterpret_cast<const char*>(&v), sizeof v);
        }
      }
    }
    for (size_t f = 0; f < stack.mask.size(); ++f) {
      const auto& m = stack.mask[f];
      for (Eigen::Index y = 0; y < m.rows(); ++y) {
        for (Eigen::Index x = 0; x < m.cols(); ++x) {
          const std::uint8_t v = m(y, x) ? 1 : 0;
          out.write(reinterpret_cast<const char*>(&v), sizeof v);
        }
      }
    }
  }
  if (!out) throw IoError("short write to cache: " + path);
}

inline std::vector<PhaseDiffStack> load_phase_diffs(const std::string& path,
                                                    const FilterBank& bank,
                                                    double quantile) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open cache: " + path);
  auto get_u64 = [&in]() {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
  };
  auto get_f64 = [&in]() {
    double v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
  };
  if (get_u64() != kCacheMagic) throw IoError("bad cache magic: " + path);
  const auto s = get_u64(), o = get_u64(), h = get_u64(), w = get_u64();
  const auto count = get_u64();
  const auto dtype = get_u64();
  const double q = get_f64();
  if (static_cast<int>(s) != bank.n_scales ||
      static_cast<int>(o) != bank.n_orientations ||
      static_cast<int>(h) != bank.image_size ||
      static_cast<int>(w) != bank.image_size || dtype != kCacheDtypeF64 ||
      q != quantile) {
    throw ValidationError("cache parameters do not match the bank: " + path);
  }
  for (int i = 0; i < static_cast<int>(s); ++i) {
    if (get_f64() != bank.center_wavelengths[static_cast<size_t>(i)]) {
      throw ValidationError("cache wavelengths do not match the bank: " + path);
    }
  }
  std::vector<PhaseDiffStack> stacks(count);
  for (auto& stack : stacks) {
    stack.n_scales = static_cast<int>(s);
    stack.n_orientations = static_cast<int>(o);
    const int nf = stack.n_filters();
    stack.diff.assign(static_cast<size_t>(nf),
                      Eigen::ArrayXXd(static_cast<Eigen::Index>(h),
                                      static_cast<Eigen::Index>(w)));
    stack.mask.assign(static_cast<size_t>(nf),
                      BoolField(static_cast<Eigen::Index>(h),
                                static_cast<Eigen::Index>(w)));
    for (auto& d : stack.diff) {
      for (Eigen::Index y = 0; y < d.rows(); ++y) {
        for (Eigen::Index x = 0; x < d.cols(); ++x) {
          double v = 0;
          in.read(reinterpret_cast<char*>(&v), sizeof v);
          d(y, x) = v;
        }
      }
    }
    for (auto& m : stack.mask) {
      for (Eigen::Index y = 0; y < m.rows(); ++y) {
        for (Eigen::Index x = 0; x < m.cols(); ++x) {
          std::uint8_t v = 0;
          in.read(reinterpret_cast<char*>(&v), sizeof v);
          m(y, x) = v != 0;
        }
      }
    }
  }
  if (!in) throw IoError("truncated cache: " + path);
  return stacks;
}

// Load the video's stacks from cache_dir when a matching cache exists,
// otherwise compute and (when cache_dir is non-empty) persist them.
inline std::vector<PhaseDiffStack> cached_sequence_phase_diffs(
    const dataio::VideoSequence& video, const FilterBank& bank,
    double amplitude_quantile, const std::string& cache_dir) {
  if (cache_dir.empty()) {
    return sequence_phase_diffs(video, bank, amplitude_quantile);
  }
  namespace fs = std::filesystem;
  fs::create_directories(cache_dir);
  const std::string path =
      (fs::path(cache_dir) / (video.video_id + ".vpd")).string();
  if (fs::exists(path)) {
    try {
      auto stacks = load_phase_diffs(path, bank, amplitude_quantile);
      if (static_cast<int>(stacks.size()) == video.n_frames() - 1) {
        return stacks;
      }
    } catch (const std::exception&) {
      // stale or mismatched cache entry; fall through and recompute
    }
  }
  auto stacks = sequence_phase_diffs(video, bank, amplitude_quantile);
  save_phase_diffs(path, stacks, bank, amplitude_quantile);
  return stacks;
}

}  // namespace varest::phase
