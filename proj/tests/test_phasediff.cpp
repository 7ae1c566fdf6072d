#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <memory>
#include <random>
#include <vector>

#include "varest/dataio.hpp"
#include "varest/phasediff.hpp"

using namespace varest;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

// cos(2 pi (u x + v y) + phi) in [0,1]-ish intensity units.
Image plane_wave(int n, double u, double v, double phi, double amp = 0.3,
                 double dc = 0.5) {
  Image img(n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      img(y, x) = dc + amp * std::cos(2.0 * M_PI * (u * x + v * y) + phi);
    }
  }
  return img;
}

double masked_mean_diff(const phase::PhaseDiffStack& stack, int filter) {
  const auto& d = stack.diff[static_cast<size_t>(filter)];
  const auto& m = stack.mask[static_cast<size_t>(filter)];
  double acc = 0.0;
  long count = 0;
  for (Eigen::Index y = 0; y < d.rows(); ++y) {
    for (Eigen::Index x = 0; x < d.cols(); ++x) {
      if (m(y, x)) {
        acc += d(y, x);
        ++count;
      }
    }
  }
  REQUIRE(count > 0);
  return acc / static_cast<double>(count);
}

}  // namespace

TEST_CASE("filter bank construction") {
  const auto bank = phase::build_filter_bank(2, 4, 64);
  REQUIRE(bank.n_filters() == 8);
  REQUIRE(bank.center_wavelengths == std::vector<double>{4.0, 8.0});
  REQUIRE(bank.orientation_angles.size() == 4);
  REQUIRE(bank.orientation_angles[0] == Approx(0.0));
  REQUIRE(bank.orientation_angles[1] == Approx(M_PI / 4.0));
  REQUIRE(bank.orientation_angles[2] == Approx(M_PI / 2.0));
  REQUIRE(bank.orientation_angles[3] == Approx(3.0 * M_PI / 4.0));

  const auto rebuilt = phase::build_filter_bank(2, 4, 64);
  for (int f = 0; f < bank.n_filters(); ++f) {
    REQUIRE((bank.filters[static_cast<size_t>(f)] ==
             rebuilt.filters[static_cast<size_t>(f)])
                .all());
  }

  REQUIRE_THROWS_AS(phase::build_filter_bank(0, 4, 64), ConfigError);
  REQUIRE_THROWS_AS(phase::build_filter_bank(2, 1, 64), ConfigError);
  REQUIRE_THROWS_AS(phase::build_filter_bank(2, 4, 8), ConfigError);
}

TEST_CASE("wrap_angle maps into (-pi, pi]") {
  REQUIRE(phase::wrap_angle(M_PI / 2.0 - (-3.0 * M_PI / 4.0)) ==
          Approx(-3.0 * M_PI / 4.0).margin(1e-12));
  REQUIRE(phase::wrap_angle(M_PI) == Approx(M_PI));
  REQUIRE(phase::wrap_angle(-M_PI) == Approx(M_PI));
  REQUIRE(phase::wrap_angle(3.0 * M_PI) == Approx(M_PI));
  REQUIRE(phase::wrap_angle(0.1) == Approx(0.1));
}

TEST_CASE("decompose basics") {
  const auto bank = phase::build_filter_bank(2, 4, 64);

  SECTION("constant image has no pass-band energy") {
    Image flat(64, 64);
    flat.setConstant(0.5);
    const auto map = phase::decompose(flat, bank);
    for (const auto& amp : map.amplitude) {
      REQUIRE(amp.maxCoeff() < 1e-9);
    }
  }

  SECTION("matched sinusoid dominates the right filter") {
    // Horizontal variation, wavelength 4 px: scale 0, orientation 0.
    const Image img = plane_wave(64, 1.0 / 4.0, 0.0, 0.3);
    const auto map = phase::decompose(img, bank);
    std::vector<double> mean_amp(8, 0.0);
    for (int f = 0; f < 8; ++f) {
      mean_amp[static_cast<size_t>(f)] =
          map.amplitude[static_cast<size_t>(f)].mean();
    }
    const int best = static_cast<int>(
        std::max_element(mean_amp.begin(), mean_amp.end()) - mean_amp.begin());
    REQUIRE(best == 0);
    for (const auto& ph : map.phase) {
      REQUIRE(ph.maxCoeff() <= M_PI);
      REQUIRE(ph.minCoeff() > -M_PI);
    }
  }

  SECTION("size mismatch is rejected") {
    Image small(32, 32);
    small.setConstant(0.5);
    REQUIRE_THROWS_AS(phase::decompose(small, bank), ValidationError);
  }
}

TEST_CASE("phase differences track sub-pixel shifts") {
  const auto bank = phase::build_filter_bank(2, 4, 64);
  struct Case {
    double wavelength;
    int orientation;  // filter index within scale
    double u, v;      // cycles/px
  };
  // On-grid sinusoids at both center wavelengths, horizontal and vertical.
  const Case cases[] = {
      {4.0, 0, 1.0 / 4.0, 0.0},
      {4.0, 2, 0.0, 1.0 / 4.0},
      {8.0, 0, 1.0 / 8.0, 0.0},
      {8.0, 2, 0.0, 1.0 / 8.0},
  };
  for (const auto& c : cases) {
    const int scale = c.wavelength == 4.0 ? 0 : 1;
    const int filter = scale * 4 + c.orientation;
    for (double d : {0.25, 0.5, 1.0}) {
      const double expected = 2.0 * M_PI * d / c.wavelength;
      const Image a = plane_wave(64, c.u, c.v, 0.2);
      // Translation by d px along the gradient equals a phase offset.
      const Image b = plane_wave(64, c.u, c.v, 0.2 - expected);
      const auto diff =
          phase::phase_difference(phase::decompose(a, bank),
                                  phase::decompose(b, bank), 0.5);
      const double measured = masked_mean_diff(diff, filter);
      REQUIRE(std::abs(measured) == Approx(expected).epsilon(0.05));
    }
  }
}

TEST_CASE("diagonal sinusoid matches the 45-degree filter") {
  const auto bank = phase::build_filter_bank(2, 4, 64);
  // Wave vector (11, 11)/64: exactly 45 degrees, on the discrete grid.
  const double u = 11.0 / 64.0, v = 11.0 / 64.0;
  const double freq = std::hypot(u, v);
  const double d = 0.5;
  const double expected = 2.0 * M_PI * d * freq;
  const Image a = plane_wave(64, u, v, -0.4);
  const Image b = plane_wave(64, u, v, -0.4 - expected);
  const auto diff = phase::phase_difference(phase::decompose(a, bank),
                                            phase::decompose(b, bank), 0.5);
  const double measured = masked_mean_diff(diff, 0 * 4 + 1);
  REQUIRE(std::abs(measured) == Approx(expected).epsilon(0.05));
}

TEST_CASE("identical frames give zero differences") {
  const auto bank = phase::build_filter_bank(2, 4, 64);
  const Image img = plane_wave(64, 1.0 / 8.0, 0.0, 0.9);
  const auto map = phase::decompose(img, bank);
  const auto diff = phase::phase_difference(map, map, 0.5);
  for (const auto& d : diff.diff) {
    REQUIRE(d.abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("DC offset and intensity scaling invariances") {
  const auto bank = phase::build_filter_bank(2, 4, 32);
  dataio::SynthConfig config;
  config.n_videos = 1;
  config.frames_per_video = 2;
  config.image_size = 32;
  config.noise_std = 0.02;
  config.seed = 5;
  const auto video = dataio::generate_synthetic_dataset(config)[0];
  const Image& f0 = *video.frames[0].image;
  const Image& f1 = *video.frames[1].image;

  const auto base = phase::phase_difference(phase::decompose(f0, bank),
                                            phase::decompose(f1, bank), 0.5);

  SECTION("adding a constant to both frames changes nothing") {
    const Image g0 = f0 + 0.2, g1 = f1 + 0.2;
    const auto shifted = phase::phase_difference(
        phase::decompose(g0, bank), phase::decompose(g1, bank), 0.5);
    for (size_t f = 0; f < base.diff.size(); ++f) {
      REQUIRE((base.mask[f] == shifted.mask[f]).all());
      REQUIRE((base.diff[f] - shifted.diff[f]).abs().maxCoeff() < 1e-9);
    }
  }

  SECTION("scaling both frames leaves phase diffs, scales amplitude") {
    const double c = 2.5;
    const auto m0 = phase::decompose(f0, bank);
    const auto m0s = phase::decompose((c * f0).eval(), bank);
    for (size_t f = 0; f < m0.amplitude.size(); ++f) {
      REQUIRE((m0s.amplitude[f] - c * m0.amplitude[f]).abs().maxCoeff() <
              1e-9 * c);
    }
    const auto scaled = phase::phase_difference(
        phase::decompose((c * f0).eval(), bank),
        phase::decompose((c * f1).eval(), bank), 0.5);
    for (size_t f = 0; f < base.diff.size(); ++f) {
      REQUIRE((base.diff[f] - scaled.diff[f]).abs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("sequence_phase_diffs contracts") {
  const auto bank = phase::build_filter_bank(2, 4, 32);
  dataio::SynthConfig config;
  config.n_videos = 1;
  config.frames_per_video = 6;
  config.image_size = 32;
  config.noise_std = 0.01;
  config.seed = 9;
  const auto video = dataio::generate_synthetic_dataset(config)[0];

  const auto stacks = phase::sequence_phase_diffs(video, bank, 0.5);
  REQUIRE(stacks.size() == 5);

  // Two-frame video: exactly one stack.
  dataio::VideoSequence two;
  two.video_id = "two";
  two.frames = {video.frames[0], video.frames[1]};
  REQUIRE(phase::sequence_phase_diffs(two, bank, 0.5).size() == 1);

  dataio::VideoSequence one;
  one.video_id = "one";
  one.frames = {video.frames[0]};
  REQUIRE_THROWS_AS(phase::sequence_phase_diffs(one, bank, 0.5),
                    ValidationError);

  SECTION("static video gives all-zero stacks") {
    dataio::VideoSequence still;
    still.video_id = "still";
    for (int t = 0; t < 4; ++t) {
      auto f = video.frames[0];
      f.frame_index = t;
      still.frames.push_back(f);
    }
    for (const auto& stack : phase::sequence_phase_diffs(still, bank, 0.5)) {
      for (const auto& d : stack.diff) REQUIRE(d.abs().maxCoeff() < 1e-12);
    }
  }

  SECTION("reversing the video negates unmasked diffs up to wrapping") {
    dataio::VideoSequence reversed;
    reversed.video_id = "rev";
    for (int t = video.n_frames() - 1; t >= 0; --t) {
      auto f = video.frames[static_cast<size_t>(t)];
      f.frame_index = video.n_frames() - 1 - t;
      reversed.frames.push_back(f);
    }
    const auto back = phase::sequence_phase_diffs(reversed, bank, 0.5);
    REQUIRE(back.size() == stacks.size());
    for (size_t i = 0; i < stacks.size(); ++i) {
      const auto& fwd = stacks[i];
      const auto& rev = back[stacks.size() - 1 - i];
      for (size_t f = 0; f < fwd.diff.size(); ++f) {
        REQUIRE((fwd.mask[f] == rev.mask[f]).all());
        for (Eigen::Index y = 0; y < fwd.diff[f].rows(); ++y) {
          for (Eigen::Index x = 0; x < fwd.diff[f].cols(); ++x) {
            if (!fwd.mask[f](y, x)) continue;
            REQUIRE(std::abs(phase::wrap_angle(fwd.diff[f](y, x) +
                                               rev.diff[f](y, x))) < 1e-9);
          }
        }
      }
    }
  }
}

TEST_CASE("phase-diff cache round-trips") {
  const auto bank = phase::build_filter_bank(2, 4, 32);
  dataio::SynthConfig config;
  config.n_videos = 1;
  config.frames_per_video = 4;
  config.image_size = 32;
  config.seed = 13;
  const auto video = dataio::generate_synthetic_dataset(config)[0];
  const auto stacks = phase::sequence_phase_diffs(video, bank, 0.5);

  const auto path =
      (fs::temp_directory_path() / "varest_phase_cache.vpd").string();
  phase::save_phase_diffs(path, stacks, bank, 0.5);
  const auto loaded = phase::load_phase_diffs(path, bank, 0.5);
  REQUIRE(loaded.size() == stacks.size());
  for (size_t i = 0; i < stacks.size(); ++i) {
    for (size_t f = 0; f < stacks[i].diff.size(); ++f) {
      REQUIRE((stacks[i].mask[f] == loaded[i].mask[f]).all());
      REQUIRE((stacks[i].diff[f] - loaded[i].diff[f]).abs().maxCoeff() < 1e-6);
    }
  }
  REQUIRE_THROWS_AS(phase::load_phase_diffs(path, bank, 0.25), ValidationError);
  const auto other_bank = phase::build_filter_bank(1, 4, 32);
  REQUIRE_THROWS_AS(phase::load_phase_diffs(path, other_bank, 0.5),
                    ValidationError);
  fs::remove(path);
}
