// Dataset ingestion: annotation parsing, frame/annotation alignment,
// cross-validation folds, the on-disk manifest layout, and a synthetic
// drifting-grating dataset used for desk-scale verification.
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "varest/common.hpp"
#include "varest/image.hpp"

namespace varest::dataio {

struct FrameRecord {
  std::string video_id;
  int frame_index = 0;  // position in the pre-alignment frame stream
  std::shared_ptr<const Image> image;
  double valence = kSentinel;
  double arousal = kSentinel;
  bool annotated() const { return !is_sentinel(valence); }
};

struct VideoSequence {
  std::string video_id;
  std::vector<FrameRecord> frames;
  int n_frames() const { return static_cast<int>(frames.size()); }
};

struct FoldSplit {
  int k = 0;
  std::map<std::string, int> assignment;  // video_id -> fold in [0, k)
};

struct SynthConfig {
  int n_videos = 8;
  int frames_per_video = 60;
  int image_size = 32;
  double imbalance_exponent = 0.0;  // 0 = approximately uniform labels
  double noise_std = 0.05;          // pixel noise, intensity units
  long seed = 0;

  void validate() const {
    if (n_videos < 1) throw ConfigError("synth: n_videos must be >= 1");
    if (frames_per_video < 2) {
      throw ConfigError("synth: frames_per_video must be >= 2");
    }
    if (image_size < 16) throw ConfigError("synth: image_size must be >= 16");
    if (imbalance_exponent < 0.0) {
      throw ConfigError("synth: imbalance_exponent must be >= 0");
    }
    if (noise_std < 0.0) throw ConfigError("synth: noise_std must be >= 0");
  }
};

inline constexpr const char* kAnnotationHeader = "valence,arousal";
inline constexpr const char* kIndexMagic = "varest-dataset-v1";

namespace detail {

inline void validate_pair(double v, double a, int line_no) {
  if (!label_in_range(v) || !label_in_range(a)) {
    throw ValidationError("line " + std::to_string(line_no) +
                          ": annotation outside [-1,1] and not the -5 sentinel");
  }
  if (is_sentinel(v) != is_sentinel(a)) {
    throw ValidationError("line " + std::to_string(line_no) +
                          ": -5 sentinel must apply to both targets or neither");
  }
}

inline double parse_real(const std::string& tok, int line_no) {
  size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &pos);
  } catch (const std::exception&) {
    throw ParseError("not a number: '" + tok + "'", line_no);
  }
  while (pos < tok.size() && std::isspace(static_cast<unsigned char>(tok[pos]))) {
    ++pos;
  }
  if (pos != tok.size()) {
    throw ParseError("trailing junk after number: '" + tok + "'", line_no);
  }
  return v;
}

}  // namespace detail

// Header line "valence,arousal" then one "v,a" pair per line.
inline std::vector<std::pair<double, double>> parse_annotation_file(
    const std::string& text) {
  if (text.empty()) throw ParseError("empty annotation text", 1);
  std::vector<std::pair<double, double>> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header_seen) {
      if (line != kAnnotationHeader) {
        throw ParseError("expected header '" + std::string(kAnnotationHeader) +
                             "', got '" + line + "'",
                         line_no);
      }
      header_seen = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw ParseError("expected 'valence,arousal' pair", line_no);
    }
    const double v = detail::parse_real(line.substr(0, comma), line_no);
    const double a = detail::parse_real(line.substr(comma + 1), line_no);
    detail::validate_pair(v, a, line_no);
    out.emplace_back(v, a);
  }
  if (!header_seen) throw ParseError("missing header line", 1);
  return out;
}

inline std::string serialize_annotations(
    const std::vector<std::pair<double, double>>& pairs) {
  std::string out = std::string(kAnnotationHeader) + "\n";
  for (const auto& [v, a] : pairs) {
    out += format_fixed(v, 6) + "," + format_fixed(a, 6) + "\n";
  }
  return out;
}

// Drop leading unannotated frames, then pair frames with annotations
// positionally, truncating to the shorter list. Interior sentinel frames are
// kept; they are masked from losses and metrics downstream.
inline VideoSequence align_frames(
    const std::vector<std::shared_ptr<const Image>>& images,
    const std::vector<std::pair<double, double>>& annotations,
    const std::string& video_id) {
  if (images.empty() || annotations.empty()) {
    throw ValidationError("align_frames: empty input for video " + video_id);
  }
  size_t start = 0;
  while (start < annotations.size() &&
         is_sentinel(annotations[start].first)) {
    ++start;
  }
  if (start == annotations.size()) {
    throw ValidationError("align_frames: all annotations are sentinels for " +
                          video_id);
  }
  if (start >= images.size()) {
    throw ValidationError(
        "align_frames: no frames left after dropping leading sentinels for " +
        video_id);
  }
  const size_t n = std::min(images.size(), annotations.size()) - start;
  VideoSequence seq;
  seq.video_id = video_id;
  seq.frames.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    FrameRecord rec;
    rec.video_id = video_id;
    rec.frame_index = static_cast<int>(start + i);
    rec.image = images[start + i];
    rec.valence = annotations[start + i].first;
    rec.arousal = annotations[start + i].second;
    seq.frames.push_back(std::move(rec));
  }
  return seq;
}

// Video-level k-fold partition; fold sizes differ by at most one.
inline FoldSplit make_folds(const std::vector<std::string>& video_ids, int k,
                            long seed) {
  if (k < 2) throw ConfigError("make_folds: k must be >= 2");
  if (static_cast<size_t>(k) > video_ids.size()) {
    throw ConfigError("make_folds: k exceeds the number of videos");
  }
  std::vector<std::string> ids = video_ids;
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw ValidationError("make_folds: duplicate video ids");
  }
  std::mt19937_64 rng(mix_seed(static_cast<std::uint64_t>(seed), 0x7A11D5));
  std::shuffle(ids.begin(), ids.end(), rng);
  FoldSplit split;
  split.k = k;
  for (size_t i = 0; i < ids.size(); ++i) {
    split.assignment[ids[i]] = static_cast<int>(i % static_cast<size_t>(k));
  }
  return split;
}

// Fixed train/validation split at video granularity: fold 0 trains, fold 1
// is held out. Complements make_folds for the fixed-split protocol.
inline FoldSplit holdout_split(const std::vector<std::string>& video_ids,
                               double holdout_fraction, long seed) {
  if (holdout_fraction <= 0.0 || holdout_fraction >= 1.0) {
    throw ConfigError("holdout_split: fraction must be in (0, 1)");
  }
  if (video_ids.size() < 2) {
    throw ConfigError("holdout_split: need at least 2 videos");
  }
  std::vector<std::string> ids = video_ids;
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw ValidationError("holdout_split: duplicate video ids");
  }
  std::mt19937_64 rng(mix_seed(static_cast<std::uint64_t>(seed), 0x60D001));
  std::shuffle(ids.begin(), ids.end(), rng);
  size_t n_val = static_cast<size_t>(
      std::lround(holdout_fraction * static_cast<double>(ids.size())));
  n_val = std::clamp<size_t>(n_val, 1, ids.size() - 1);
  FoldSplit split;
  split.k = 2;
  for (size_t i = 0; i < ids.size(); ++i) {
    split.assignment[ids[i]] = i < n_val ? 1 : 0;
  }
  return split;
}

namespace detail {

// Triangle wave in [0, 1]; uniform marginal under a uniform phase.
inline double triangle_wave(double z) {
  const double f = z - std::floor(z);
  return 1.0 - 2.0 * std::abs(f - 0.5);
}

// Quantile of the skewed label density p(v) ~ v^e + 0.05 on [0, 1].
// The additive floor keeps the rare tail populated at desk scale.
inline double skew_quantile(double u, double exponent) {
  if (exponent == 0.0) return u;
  constexpr double kFloor = 0.05;
  const double z = 1.0 / (exponent + 1.0) + kFloor;
  auto cdf = [&](double v) {
    return (std::pow(v, exponent + 1.0) / (exponent + 1.0) + kFloor * v) / z;
  };
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (cdf(mid) < u ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

// Each video is a drifting sinusoidal grating. Valence is an affine map of
// the mean brightness; arousal is an affine map of the instantaneous drift
// speed. The grating contrast is tied to the speed so that both targets are
// observable from a single frame as well as from phase differences.
inline std::vector<VideoSequence> generate_synthetic_dataset(
    const SynthConfig& config) {
  config.validate();
  constexpr double kBrightLo = 0.30, kBrightHi = 0.70;
  constexpr double kSpeedLo = 0.10, kSpeedHi = 1.60;  // px/frame
  constexpr double kAmpLo = 0.06, kAmpHi = 0.24;
  const int n = config.image_size;

  std::vector<VideoSequence> videos;
  videos.reserve(static_cast<size_t>(config.n_videos));
  for (int vi = 0; vi < config.n_videos; ++vi) {
    std::mt19937_64 rng(
        mix_seed(static_cast<std::uint64_t>(config.seed), static_cast<std::uint64_t>(vi)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const double wavelength = 5.0 + 5.0 * unit(rng);
    const int orient = static_cast<int>(rng() % 4);
    const double theta = orient * (M_PI / 4.0);
    const double rate_v = 0.004 + 0.016 * unit(rng);
    const double phase_v = unit(rng);
    const double rate_a = 0.004 + 0.016 * unit(rng);
    const double phase_a = unit(rng);
    double grating_phase = 2.0 * M_PI * unit(rng);
    std::normal_distribution<double> noise(0.0, 1.0);

    char idbuf[16];
    std::snprintf(idbuf, sizeof idbuf, "v%04d", vi);
    VideoSequence seq;
    seq.video_id = idbuf;
    seq.frames.reserve(static_cast<size_t>(config.frames_per_video));

    const double cos_t = std::cos(theta), sin_t = std::sin(theta);
    for (int t = 0; t < config.frames_per_video; ++t) {
      const double uv = detail::triangle_wave(rate_v * t + phase_v);
      const double ua = detail::triangle_wave(rate_a * t + phase_a);
      const double val = std::clamp(
          2.0 * detail::skew_quantile(uv, config.imbalance_exponent) - 1.0,
          -1.0, 1.0);
      const double aro = std::clamp(
          2.0 * detail::skew_quantile(ua, config.imbalance_exponent) - 1.0,
          -1.0, 1.0);

      const double bright = kBrightLo + (kBrightHi - kBrightLo) * 0.5 * (val + 1.0);
      const double speed = kSpeedLo + (kSpeedHi - kSpeedLo) * 0.5 * (aro + 1.0);
      const double amp = kAmpLo + (kAmpHi - kAmpLo) * 0.5 * (aro + 1.0);

      auto img = std::make_shared<Image>(n, n);
      for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
          const double carrier = std::cos(
              2.0 * M_PI * (x * cos_t + y * sin_t) / wavelength + grating_phase);
          double px = bright + amp * carrier;
          if (config.noise_std > 0.0) px += config.noise_std * noise(rng);
          (*img)(y, x) = std::clamp(px, 0.0, 1.0);
        }
      }

      FrameRecord rec;
      rec.video_id = seq.video_id;
      rec.frame_index = t;
      rec.image = std::move(img);
      rec.valence = val;
      rec.arousal = aro;
      seq.frames.push_back(std::move(rec));

      grating_phase += 2.0 * M_PI * speed / wavelength;
    }
    videos.push_back(std::move(seq));
  }
  return videos;
}

// ---- manifest layout -------------------------------------------------------
//
//   root/index.txt                   first line kIndexMagic, then "id dir"
//   root/<id>/annotations.csv        header + one pair per frame
//   root/<id>/frame_NNNNNN.pgm       zero-padded, numbered by frame position

inline std::string frame_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06d.pgm", index);
  return buf;
}

inline void write_dataset(const std::string& root,
                          const std::vector<VideoSequence>& videos) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  std::ofstream index(fs::path(root) / "index.txt");
  if (!index) throw IoError("cannot write index in " + root);
  index << kIndexMagic << "\n";
  for (const auto& video : videos) {
    if (video.video_id.find_first_of(" \t\n") != std::string::npos) {
      throw ValidationError("video id contains whitespace: " + video.video_id);
    }
    index << video.video_id << " " << video.video_id << "\n";
    const fs::path dir = fs::path(root) / video.video_id;
    fs::create_directories(dir);
    std::vector<std::pair<double, double>> pairs;
    pairs.reserve(video.frames.size());
    for (size_t i = 0; i < video.frames.size(); ++i) {
      const auto& f = video.frames[i];
      pairs.emplace_back(f.valence, f.arousal);
      write_pgm((dir / frame_file_name(static_cast<int>(i))).string(),
                *f.image);
    }
    std::ofstream ann(dir / "annotations.csv");
    if (!ann) throw IoError("cannot write annotations for " + video.video_id);
    ann << serialize_annotations(pairs);
  }
}

inline std::vector<std::pair<std::string, std::string>> read_index(
    const std::string& root) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(root) / "index.txt");
  if (!in) throw IoError("no dataset index at " + root + "/index.txt");
  std::string line;
  if (!std::getline(in, line) || line != kIndexMagic) {
    throw ParseError("bad dataset index magic in " + root, 1);
  }
  std::vector<std::pair<std::string, std::string>> entries;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, dir;
    if (!(ls >> id >> dir)) {
      throw ParseError("bad index entry '" + line + "'", line_no);
    }
    entries.emplace_back(id, dir);
  }
  if (entries.empty()) throw ValidationError("dataset index lists no videos");
  return entries;
}

// Labels only; used where decoding frames would be wasted work.
inline std::map<std::string, std::vector<std::pair<double, double>>>
load_annotations(const std::string& root) {
  namespace fs = std::filesystem;
  std::map<std::string, std::vector<std::pair<double, double>>> out;
  for (const auto& [id, dir] : read_index(root)) {
    std::ifstream in(fs::path(root) / dir / "annotations.csv");
    if (!in) throw IoError("missing annotations for video " + id);
    std::stringstream buf;
    buf << in.rdbuf();
    out[id] = parse_annotation_file(buf.str());
  }
  return out;
}

inline std::vector<VideoSequence> load_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  std::vector<VideoSequence> videos;
  for (const auto& [id, dir] : read_index(root)) {
    std::ifstream in(fs::path(root) / dir / "annotations.csv");
    if (!in) throw IoError("missing annotations for video " + id);
    std::stringstream buf;
    buf << in.rdbuf();
    const auto pairs = parse_annotation_file(buf.str());
    std::vector<std::shared_ptr<const Image>> images;
    images.reserve(pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i) {
      const fs::path p = fs::path(root) / dir / frame_file_name(static_cast<int>(i));
      if (!fs::exists(p)) {
        throw IoError("missing frame image " + p.string());
      }
      images.push_back(std::make_shared<Image>(read_pgm(p.string())));
    }
    videos.push_back(align_frames(images, pairs, id));
  }
  return videos;
}

enum class Target { kValence, kArousal };

inline double target_of(const FrameRecord& f, Target t) {
  return t == Target::kValence ? f.valence : f.arousal;
}

// Annotated labels across a set of videos, in video/frame order.
inline std::vector<double> collect_labels(
    const std::vector<VideoSequence>& videos, Target target) {
  std::vector<double> labels;
  for (const auto& v : videos) {
    for (const auto& f : v.frames) {
      if (f.annotated()) labels.push_back(target_of(f, target));
    }
  }
  return labels;
}

}  // namespace varest::dataio
