#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <random>
#include <vector>

#include "varest/model.hpp"

using namespace varest;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

Image random_image(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(0.0, scale);
  Image img(n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) img(y, x) = u(rng);
  }
  return img;
}

phase::PhaseDiffStack random_stack(int scales, int orients, int n,
                                   std::mt19937_64& rng) {
  phase::PhaseDiffStack stack;
  stack.n_scales = scales;
  stack.n_orientations = orients;
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int f = 0; f < scales * orients; ++f) {
    Eigen::ArrayXXd d(n, n);
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) d(y, x) = phase::wrap_angle(u(rng));
    }
    stack.diff.push_back(d);
    stack.mask.push_back(phase::BoolField::Constant(n, n, true));
  }
  return stack;
}

phase::PhaseDiffStack zero_stack(int scales, int orients, int n) {
  phase::PhaseDiffStack stack;
  stack.n_scales = scales;
  stack.n_orientations = orients;
  for (int f = 0; f < scales * orients; ++f) {
    stack.diff.push_back(Eigen::ArrayXXd::Zero(n, n));
    stack.mask.push_back(phase::BoolField::Constant(n, n, false));
  }
  return stack;
}

model::ModelConfig tiny_config() {
  model::ModelConfig c;
  c.spatial_feature_dim = 3;
  c.mlp_hidden = 4;
  c.temporal_channels = 2;
  c.recurrent_hidden = 5;
  c.window_length = 4;
  c.mode = model::Mode::kTwoStream;
  c.extractor = "grid_stats";
  c.grid = 2;
  c.image_size = 16;
  c.n_scales = 1;
  c.n_orientations = 2;
  return c;
}

}  // namespace

TEST_CASE("count_parameters matches the hand count") {
  // grid_stats(2) -> 8 features; mlp 8->4->3; temporal conv 2ch->2ch (3x3)
  // plus 2->2 projection; GRU input 5, hidden 5; head 5->2.
  //   mlp1 8*4+4 = 36, mlp2 4*3+3 = 15,
  //   tconv 2*2*9+2 = 38, tproj 2*2+2 = 6,
  //   gru 3*(5*5 + 5*5 + 5) = 165, head 5*2+2 = 12  -> 272
  auto config = tiny_config();
  REQUIRE(model::count_parameters(config) == 272);

  // spatial_only drops the temporal block and shrinks the GRU input to 3:
  //   36 + 15 + 3*(3*5 + 5*5 + 5) + 12 = 198
  auto spatial = config;
  spatial.mode = model::Mode::kSpatialOnly;
  REQUIRE(model::count_parameters(spatial) == 198);
  REQUIRE(model::count_parameters(config) > model::count_parameters(spatial));

  // tiny_cnn extractor: conv 1->2 (20), 2->3 (57), 3->4 (112); mlp 4->4->3.
  auto cnn = config;
  cnn.extractor = "tiny_cnn";
  cnn.cnn_c1 = 2;
  cnn.cnn_c2 = 3;
  cnn.cnn_c3 = 4;
  REQUIRE(model::count_parameters(cnn) ==
          (20 + 57 + 112) + (4 * 4 + 4) + (4 * 3 + 3) + 38 + 6 + 165 + 12);

  // The count is structural: instantiation seeds do not affect it.
  model::TwoStreamModel m1(config), m2(config);
  std::mt19937_64 r1(1), r2(999);
  m1.init(r1);
  m2.init(r2);
  REQUIRE(m1.count_parameters() == m2.count_parameters());
}

TEST_CASE("spatial_forward shape and determinism") {
  auto config = tiny_config();
  model::TwoStreamModel m(config);
  std::mt19937_64 rng(3);
  m.init(rng);

  std::mt19937_64 irng(7);
  const Image a = random_image(16, irng);
  const Image b = random_image(16, irng);
  const auto feats = m.spatial_forward({&a, &b, &a}, nullptr);
  REQUIRE(feats.size() == 3);
  for (const auto& f : feats) {
    REQUIRE(f.size() == 3);
    REQUIRE(f.allFinite());
  }
  REQUIRE((feats[0] - feats[2]).cwiseAbs().maxCoeff() == 0.0);

  Image wrong(8, 8);
  wrong.setConstant(0.1);
  REQUIRE_THROWS_AS(m.spatial_forward({&wrong}, nullptr), ValidationError);
  REQUIRE_THROWS_AS(m.spatial_forward({}, nullptr), ValidationError);
}

TEST_CASE("temporal_forward contracts") {
  auto config = tiny_config();
  config.temporal_channels = 4;
  model::TwoStreamModel m(config);
  std::mt19937_64 rng(5);
  m.init(rng);

  SECTION("all-zero stacks give one shared bias response") {
    const auto z1 = zero_stack(1, 2, 16);
    const auto z2 = zero_stack(1, 2, 16);
    const auto out = m.temporal_forward({&z1, &z2}, nullptr);
    REQUIRE(out.size() == 2);
    REQUIRE((out[0] - out[1]).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("batch shape") {
    std::mt19937_64 srng(11);
    const auto s1 = random_stack(1, 2, 16, srng);
    const auto s2 = random_stack(1, 2, 16, srng);
    const auto s3 = random_stack(1, 2, 16, srng);
    const auto out = m.temporal_forward({&s1, &s2, &s3}, nullptr);
    REQUIRE(out.size() == 3);
    for (const auto& f : out) {
      REQUIRE(f.size() == 4);
      REQUIRE(f.allFinite());
    }
  }

  SECTION("doubling the diffs changes the output") {
    std::mt19937_64 srng(13);
    auto stack = random_stack(1, 2, 16, srng);
    const auto before = m.temporal_forward({&stack}, nullptr);
    for (auto& d : stack.diff) d *= 2.0;
    const auto after = m.temporal_forward({&stack}, nullptr);
    REQUIRE((before[0] - after[0]).cwiseAbs().maxCoeff() > 1e-12);
  }

  SECTION("shape mismatch and mode errors") {
    const auto bad = zero_stack(2, 2, 16);
    REQUIRE_THROWS_AS(m.temporal_forward({&bad}, nullptr), ValidationError);
    auto spatial = tiny_config();
    spatial.mode = model::Mode::kSpatialOnly;
    model::TwoStreamModel sm(spatial);
    const auto ok = zero_stack(1, 2, 16);
    REQUIRE_THROWS_AS(sm.temporal_forward({&ok}, nullptr), ValidationError);
  }
}

TEST_CASE("fuse_and_regress output range and order sensitivity") {
  auto config = tiny_config();
  config.mode = model::Mode::kSpatialOnly;
  model::TwoStreamModel m(config);
  std::mt19937_64 rng(9);
  m.init(rng);
  // Blow up the head weights so tanh saturation is actually exercised.
  for (model::Param* p : m.params()) p->value *= 40.0;

  std::mt19937_64 frng(1);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::vector<Eigen::VectorXd> sfeats(4, Eigen::VectorXd(3));
  for (auto& f : sfeats) {
    for (int i = 0; i < 3; ++i) f[i] = u(frng);
  }

  const auto preds = m.fuse_and_regress(sfeats, {}, nullptr);
  REQUIRE(preds.size() == 4);
  for (const auto& p : preds) {
    REQUIRE(p.valence >= -1.0);
    REQUIRE(p.valence <= 1.0);
    REQUIRE(p.arousal >= -1.0);
    REQUIRE(p.arousal <= 1.0);
  }

  // Recurrence is order sensitive.
  std::vector<Eigen::VectorXd> permuted = {sfeats[2], sfeats[0], sfeats[3],
                                           sfeats[1]};
  const auto shuffled = m.fuse_and_regress(permuted, {}, nullptr);
  bool differs = false;
  for (size_t t = 0; t < preds.size(); ++t) {
    differs = differs || std::abs(preds[t].valence - shuffled[t].valence) > 1e-12 ||
              std::abs(preds[t].arousal - shuffled[t].arousal) > 1e-12;
  }
  REQUIRE(differs);

  // Degenerate window of one frame.
  const auto single = m.fuse_and_regress({sfeats[0]}, {}, nullptr);
  REQUIRE(single.size() == 1);
  REQUIRE(std::abs(single[0].valence) <= 1.0);

  REQUIRE_THROWS_AS(m.fuse_and_regress({}, {}, nullptr), ValidationError);
}

TEST_CASE("forward_window shape contract in both modes") {
  auto config = tiny_config();
  model::TwoStreamModel m(config);
  std::mt19937_64 rng(23);
  m.init(rng);

  std::mt19937_64 irng(2);
  std::vector<Image> images;
  for (int t = 0; t < 4; ++t) images.push_back(random_image(16, irng));
  std::vector<const Image*> frames;
  for (const auto& img : images) frames.push_back(&img);

  std::mt19937_64 srng(3);
  std::vector<phase::PhaseDiffStack> stacks;
  for (int t = 0; t < 3; ++t) stacks.push_back(random_stack(1, 2, 16, srng));
  std::vector<const phase::PhaseDiffStack*> stack_ptrs;
  for (const auto& s : stacks) stack_ptrs.push_back(&s);

  const auto preds = m.forward_window(frames, stack_ptrs, nullptr);
  REQUIRE(preds.size() == 4);
  REQUIRE_THROWS_AS(m.forward_window(frames, {}, nullptr), ValidationError);

  SECTION("spatial_only ignores the temporal input entirely") {
    auto spatial = tiny_config();
    spatial.mode = model::Mode::kSpatialOnly;
    model::TwoStreamModel sm(spatial);
    std::mt19937_64 r2(23);
    sm.init(r2);
    const auto p1 = sm.forward_window(frames, {}, nullptr);
    std::mt19937_64 srng2(99);
    std::vector<phase::PhaseDiffStack> other;
    for (int t = 0; t < 3; ++t) other.push_back(random_stack(1, 2, 16, srng2));
    std::vector<const phase::PhaseDiffStack*> other_ptrs;
    for (const auto& s : other) other_ptrs.push_back(&s);
    const auto p2 = sm.forward_window(frames, other_ptrs, nullptr);
    REQUIRE(p1.size() == p2.size());
    for (size_t t = 0; t < p1.size(); ++t) {
      REQUIRE(p1[t].valence == p2[t].valence);
      REQUIRE(p1[t].arousal == p2[t].arousal);
    }
  }
}

TEST_CASE("tiny_cnn extractor window pass stays finite") {
  auto config = tiny_config();
  config.extractor = "tiny_cnn";
  config.cnn_c1 = 2;
  config.cnn_c2 = 3;
  config.cnn_c3 = 4;
  model::TwoStreamModel m(config);
  std::mt19937_64 rng(31);
  m.init(rng);
  std::mt19937_64 irng(8);
  const Image img = random_image(16, irng);
  const auto preds = m.forward_window({&img}, {}, nullptr);
  REQUIRE(preds.size() == 1);
  REQUIRE(std::isfinite(preds[0].valence));
  REQUIRE(std::abs(preds[0].valence) <= 1.0);
}

TEST_CASE("checkpoints restore parameters exactly") {
  auto config = tiny_config();
  model::TwoStreamModel m(config);
  std::mt19937_64 rng(37);
  m.init(rng);

  std::map<std::string, Eigen::VectorXd> momenta;
  for (model::Param* p : m.params()) {
    momenta[p->name] = Eigen::VectorXd::Constant(p->size(), 0.125);
  }
  std::ostringstream rs;
  rs << rng;
  const auto cp = model::snapshot(m, momenta, 7, rs.str());

  const auto path = (fs::temp_directory_path() / "varest_ckpt_test.txt").string();
  model::save_checkpoint(path, cp);
  const auto loaded = model::load_checkpoint(path);
  REQUIRE(loaded.epoch == 7);
  REQUIRE(loaded.rng_state == rs.str());
  REQUIRE(loaded.config.mode == config.mode);
  REQUIRE(loaded.config.spatial_feature_dim == config.spatial_feature_dim);
  REQUIRE(loaded.momenta.size() == momenta.size());

  model::TwoStreamModel m2(loaded.config);
  model::restore(m2, loaded);
  auto p1 = m.params(), p2 = m2.params();
  REQUIRE(p1.size() == p2.size());
  for (size_t i = 0; i < p1.size(); ++i) {
    REQUIRE(p1[i]->name == p2[i]->name);
    REQUIRE((p1[i]->value - p2[i]->value).cwiseAbs().maxCoeff() == 0.0);
  }
  fs::remove(path);
}
