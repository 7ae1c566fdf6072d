#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "varest/cli.hpp"

using namespace varest;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run_cli(std::vector<std::string> args) {
  std::vector<const char*> argv = {"varest"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code =
      cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

const fs::path kRoot = fs::temp_directory_path() / "varest_cli_test";

std::string data_root() { return (kRoot / "data").string(); }

void make_small_dataset() {
  fs::remove_all(kRoot);
  const auto r = run_cli({"synth", "--seed", "3", "--set",
                          "dataset.root=" + data_root(), "--set",
                          "synth.n_videos=6", "--set",
                          "synth.frames_per_video=24", "--set",
                          "synth.image_size=16"});
  REQUIRE(r.code == 0);
}

}  // namespace

TEST_CASE("synth writes the manifest layout and refuses overwrites") {
  make_small_dataset();
  REQUIRE(fs::exists(fs::path(data_root()) / "index.txt"));
  REQUIRE(fs::exists(fs::path(data_root()) / "config_echo.txt"));
  int video_dirs = 0;
  for (const auto& e : fs::directory_iterator(data_root())) {
    if (e.is_directory()) ++video_dirs;
  }
  REQUIRE(video_dirs == 6);
  REQUIRE(fs::exists(fs::path(data_root()) / "v0000" / "annotations.csv"));
  REQUIRE(fs::exists(fs::path(data_root()) / "v0000" / "frame_000000.pgm"));

  const auto before = slurp(fs::path(data_root()) / "v0000" / "annotations.csv");

  // Refusal without --force.
  const auto refused = run_cli({"synth", "--seed", "3", "--set",
                                "dataset.root=" + data_root()});
  REQUIRE(refused.code == 1);

  // --force overwrites; same seed gives byte-identical annotations.
  const auto forced = run_cli({"synth", "--seed", "3", "--force", "--set",
                               "dataset.root=" + data_root(), "--set",
                               "synth.n_videos=6", "--set",
                               "synth.frames_per_video=24", "--set",
                               "synth.image_size=16"});
  REQUIRE(forced.code == 0);
  REQUIRE(slurp(fs::path(data_root()) / "v0000" / "annotations.csv") == before);
}

TEST_CASE("ingest-check validates the layout") {
  make_small_dataset();
  const auto r = run_cli({"ingest-check", "--set", "dataset.root=" + data_root()});
  REQUIRE(r.code == 0);
  REQUIRE(r.out.find("ok") != std::string::npos);

  const auto missing = run_cli(
      {"ingest-check", "--set", "dataset.root=" + (kRoot / "nope").string()});
  REQUIRE(missing.code == 2);
}

TEST_CASE("unknown config keys are rejected") {
  const auto r = run_cli({"synth", "--set", "bogus.key=1"});
  REQUIRE(r.code == 1);
  REQUIRE(r.err.find("unknown config key") != std::string::npos);

  const auto bad = run_cli({"synth", "--set", "not-a-pair"});
  REQUIRE(bad.code == 1);
}

TEST_CASE("config file is applied and flags win") {
  fs::remove_all(kRoot);
  fs::create_directories(kRoot);
  const auto cfg_path = (kRoot / "run.cfg").string();
  {
    std::ofstream cfg(cfg_path);
    cfg << "# comment\n";
    cfg << "dataset.root = " << data_root() << "\n";
    cfg << "synth.n_videos = 3\n";
    cfg << "synth.frames_per_video = 12\n";
    cfg << "synth.image_size = 16\n";
    cfg << "seed = 9\n";
  }
  const auto r = run_cli({"--config", cfg_path, "synth", "--seed", "4"});
  REQUIRE(r.code == 0);
  const auto echo = slurp(fs::path(data_root()) / "config_echo.txt");
  REQUIRE(echo.find("seed = 4") != std::string::npos);  // flag wins
  REQUIRE(echo.find("synth.n_videos = 3") != std::string::npos);
}

TEST_CASE("weights command emits tables and figures") {
  make_small_dataset();
  const auto out = (kRoot / "weights_out").string();
  const auto r = run_cli({"weights", "--set", "dataset.root=" + data_root(),
                          "--out", out, "--set", "lds.bins=10"});
  REQUIRE(r.code == 0);
  for (const char* name :
       {"weights_valence.txt", "weights_arousal.txt", "density_valence.svg",
        "density_arousal.svg", "config_echo.txt"}) {
    const auto p = fs::path(out) / name;
    REQUIRE(fs::exists(p));
    REQUIRE(fs::file_size(p) > 0);
  }
  // Table format: one "left right weight" line per bin.
  std::istringstream table(slurp(fs::path(out) / "weights_valence.txt"));
  std::string line;
  int rows = 0;
  while (std::getline(table, line)) {
    double left, right, weight;
    std::istringstream ls(line);
    REQUIRE((ls >> left >> right >> weight));
    REQUIRE(weight > 0.0);
    ++rows;
  }
  REQUIRE(rows == 10);
}

TEST_CASE("weight flatness and monotonicity follow the label distribution") {
  // Near-flat tables on approximately uniform labels (delta kernel, large n).
  dataio::SynthConfig c;
  c.n_videos = 20;
  c.frames_per_video = 1000;
  c.image_size = 16;
  c.seed = 4;
  const auto uniform = dataio::generate_synthetic_dataset(c);
  const auto labels = dataio::collect_labels(uniform, dataio::Target::kValence);
  lds::SmoothingKernel delta{lds::KernelKind::kDelta, 0.1, 0};
  const auto flat = lds::compute_weights(
      lds::smooth_density(lds::empirical_density(labels, 20), delta), 50.0,
      labels);
  for (double w : flat.weights) REQUIRE(std::abs(w - 1.0) < 0.05);

  // Skewed labels: for a delta kernel the count-weight relation is monotone.
  c.imbalance_exponent = 3.0;
  const auto skewed = dataio::generate_synthetic_dataset(c);
  const auto slabels = dataio::collect_labels(skewed, dataio::Target::kValence);
  const auto hist = lds::empirical_density(slabels, 20);
  const auto table = lds::compute_weights(lds::smooth_density(hist, delta),
                                          1e12, slabels);
  for (size_t i = 0; i < hist.counts.size(); ++i) {
    for (size_t j = 0; j < hist.counts.size(); ++j) {
      if (hist.counts[i] > hist.counts[j] && hist.counts[j] > 0) {
        REQUIRE(table.weights[i] <= table.weights[j] + 1e-12);
      }
    }
  }
}

TEST_CASE("train and eval round-trip through the filesystem") {
  make_small_dataset();
  const auto out1 = (kRoot / "train1").string();
  const std::vector<std::string> train_args = {
      "train", "--seed", "5",
      "--set", "dataset.root=" + data_root(),
      "--set", "model.mode=spatial_only",
      "--set", "model.extractor=grid_stats",
      "--set", "model.spatial_feature_dim=4",
      "--set", "model.mlp_hidden=6",
      "--set", "model.recurrent_hidden=6",
      "--set", "model.window_length=4",
      "--set", "train.epochs=2",
      "--set", "train.k=2",
      "--set", "lds.bins=10"};

  auto args1 = train_args;
  args1.push_back("--out");
  args1.push_back(out1);
  const auto r1 = run_cli(args1);
  REQUIRE(r1.code == 0);

  for (int fold : {0, 1}) {
    const auto fold_dir = fs::path(out1) / ("fold_" + std::to_string(fold));
    REQUIRE(fs::exists(fold_dir / "train_report.txt"));
    REQUIRE(fs::exists(fold_dir / "checkpoint_best.txt"));
    REQUIRE(fs::exists(fold_dir / "checkpoint_final.txt"));
    // One row per epoch.
    const auto report = slurp(fold_dir / "train_report.txt");
    size_t rows = 0, pos = 0;
    while ((pos = report.find("\nepoch ", pos)) != std::string::npos) {
      ++rows;
      ++pos;
    }
    REQUIRE(rows == 2);
  }
  REQUIRE(fs::exists(fs::path(out1) / "train_summary.txt"));

  SECTION("byte-identical reports for identical config and seed") {
    const auto out2 = (kRoot / "train2").string();
    auto args2 = train_args;
    args2.push_back("--out");
    args2.push_back(out2);
    REQUIRE(run_cli(args2).code == 0);
    for (int fold : {0, 1}) {
      REQUIRE(slurp(fs::path(out1) / ("fold_" + std::to_string(fold)) /
                    "train_report.txt") ==
              slurp(fs::path(out2) / ("fold_" + std::to_string(fold)) /
                    "train_report.txt"));
    }
    REQUIRE(slurp(fs::path(out1) / "train_summary.txt") ==
            slurp(fs::path(out2) / "train_summary.txt"));
  }

  SECTION("--no-lds flips the config") {
    const auto out3 = (kRoot / "train3").string();
    auto args3 = train_args;
    args3.push_back("--out");
    args3.push_back(out3);
    args3.push_back("--no-lds");
    REQUIRE(run_cli(args3).code == 0);
    REQUIRE(slurp(fs::path(out3) / "config_echo.txt")
                .find("lds.enabled = false") != std::string::npos);
  }

  SECTION("eval consumes the checkpoint and writes re-ingestible predictions") {
    const auto eval_out = (kRoot / "eval1").string();
    const auto ckpt =
        (fs::path(out1) / "fold_0" / "checkpoint_best.txt").string();
    const auto r = run_cli({"eval", "--set", "dataset.root=" + data_root(),
                            "--out", eval_out, "--checkpoint", ckpt});
    REQUIRE(r.code == 0);
    REQUIRE(fs::exists(fs::path(eval_out) / "eval_report.txt"));
    const auto report =
        eval::parse_eval_report(slurp(fs::path(eval_out) / "eval_report.txt"));
    REQUIRE(report.n_frames_scored > 0);
    REQUIRE(report.mean_ccc_value ==
            Approx(0.5 * (report.pooled_valence_ccc + report.pooled_arousal_ccc))
                .margin(1e-12));

    // Prediction files share the annotation format.
    const auto pred_text =
        slurp(fs::path(eval_out) / "predictions" / "v0000.csv");
    const auto pairs = dataio::parse_annotation_file(pred_text);
    REQUIRE(pairs.size() == 24);
    for (const auto& [v, a] : pairs) {
      REQUIRE(((v >= -1.0 && v <= 1.0) || v == kSentinel));
    }

    // Re-ingest the predictions as ground truth: a dataset scored against
    // itself is perfectly concordant.
    const auto eval_out2 = (kRoot / "eval2").string();
    const auto r2 = run_cli({"eval", "--set", "dataset.root=" + data_root(),
                             "--out", eval_out2, "--checkpoint", ckpt, "--set",
                             "eval.missing_rate=0.2", "--seed", "11"});
    REQUIRE(r2.code == 0);
    const auto imputed =
        eval::parse_eval_report(slurp(fs::path(eval_out2) / "eval_report.txt"));
    REQUIRE(imputed.n_frames_scored <= report.n_frames_scored);
  }

  SECTION("eval without a checkpoint is a config error") {
    const auto r = run_cli({"eval", "--set", "dataset.root=" + data_root()});
    REQUIRE(r.code == 1);
  }
}

TEST_CASE("plot-histogram emits a figure and follows the label skew") {
  make_small_dataset();
  const auto out = (kRoot / "plot_out").string();
  const auto r = run_cli({"plot-histogram", "--set",
                          "dataset.root=" + data_root(), "--out", out});
  REQUIRE(r.code == 0);
  const auto svg = fs::path(out) / "va_histogram.svg";
  REQUIRE(fs::exists(svg));
  REQUIRE(fs::file_size(svg) > 0);

  // Cell-count behaviour at scale, checked against the generator directly.
  dataio::SynthConfig c;
  c.n_videos = 50;
  c.frames_per_video = 2000;
  c.image_size = 16;
  c.seed = 6;
  auto cell_ratio = [](const std::vector<std::vector<std::int64_t>>& counts) {
    std::int64_t lo = counts[0][0], hi = counts[0][0];
    for (const auto& row : counts) {
      for (auto v : row) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    return static_cast<double>(hi) / std::max<double>(1.0, static_cast<double>(lo));
  };
  std::vector<std::pair<double, double>> labels;
  for (const auto& video : dataio::generate_synthetic_dataset(c)) {
    for (const auto& f : video.frames) labels.emplace_back(f.valence, f.arousal);
  }
  REQUIRE(labels.size() == 100000);
  REQUIRE(cell_ratio(plot::va_histogram_2d(labels, 20)) < 3.0);

  c.imbalance_exponent = 3.0;
  labels.clear();
  for (const auto& video : dataio::generate_synthetic_dataset(c)) {
    for (const auto& f : video.frames) labels.emplace_back(f.valence, f.arousal);
  }
  REQUIRE(cell_ratio(plot::va_histogram_2d(labels, 20)) > 10.0);

  const auto empty = run_cli({"plot-histogram", "--set",
                              "dataset.root=" + (kRoot / "void").string(),
                              "--out", out});
  REQUIRE(empty.code == 2);
}

TEST_CASE("config-keys lists the documented surface") {
  const auto r = run_cli({"config-keys"});
  REQUIRE(r.code == 0);
  REQUIRE(r.out.find("dataset.root") != std::string::npos);
  REQUIRE(r.out.find("lds.kernel") != std::string::npos);
  REQUIRE(r.out.find("default") != std::string::npos);
}
