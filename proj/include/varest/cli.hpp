// Command-line front end: dataset synthesis, ingestion checks, weight-table
// inspection, training, evaluation and figure emission.
//
// Exit codes: 0 success, 1 validation/config error, 2 runtime failure.
#pragma once

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "varest/common.hpp"
#include "varest/config.hpp"
#include "varest/dataio.hpp"
#include "varest/eval.hpp"
#include "varest/lds.hpp"
#include "varest/model.hpp"
#include "varest/plot.hpp"
#include "varest/train.hpp"

namespace varest::cli {

namespace fs = std::filesystem;

namespace detail {

inline void write_echo(const cfg::RunConfig& config, const fs::path& dir) {
  fs::create_directories(dir);
  plot::write_text_file((dir / "config_echo.txt").string(),
                        cfg::echo_config(config));
}

inline void print_label_histogram(std::ostream& out, const char* name,
                                  const std::vector<double>& labels,
                                  int bins) {
  const auto hist = lds::empirical_density(labels, bins);
  out << name << " histogram (" << bins << " bins over [-1,1]):";
  for (auto c : hist.counts) out << " " << c;
  out << "\n";
}

inline lds::SmoothingKernel kernel_of(const cfg::RunConfig& c) {
  lds::SmoothingKernel k;
  k.kind = lds::kernel_from_name(c.lds_kernel);
  k.bandwidth = c.lds_bandwidth_bins * (2.0 / c.lds_bins);
  k.half_width = c.lds_half_width;
  return k;
}

inline int dataset_image_size(const std::vector<dataio::VideoSequence>& videos) {
  if (videos.empty()) throw ValidationError("dataset has no videos");
  const auto& first = *videos.front().frames.front().image;
  if (first.rows() != first.cols()) {
    throw ValidationError("frames must be square");
  }
  const auto size = first.rows();
  for (const auto& v : videos) {
    for (const auto& f : v.frames) {
      if (f.image->rows() != size || f.image->cols() != size) {
        throw ValidationError("inconsistent frame sizes in dataset");
      }
    }
  }
  return static_cast<int>(size);
}

}  // namespace detail

inline int cmd_synth(const cfg::RunConfig& config, std::ostream& out) {
  const fs::path root(config.dataset_root);
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!config.force) {
      throw ConfigError("refusing to overwrite non-empty '" + root.string() +
                        "' without force");
    }
    fs::remove_all(root);
  }
  const auto videos = dataio::generate_synthetic_dataset(cfg::synth_config(config));
  dataio::write_dataset(root.string(), videos);
  detail::write_echo(config, root);

  detail::print_label_histogram(
      out, "valence", dataio::collect_labels(videos, dataio::Target::kValence), 20);
  detail::print_label_histogram(
      out, "arousal", dataio::collect_labels(videos, dataio::Target::kArousal), 20);
  long frames = 0;
  for (const auto& v : videos) frames += v.n_frames();
  out << "wrote " << videos.size() << " videos, " << frames << " frames to "
      << root.string() << "\n";
  return 0;
}

inline int cmd_ingest_check(const cfg::RunConfig& config, std::ostream& out) {
  const auto videos = dataio::load_dataset(config.dataset_root);
  long frames = 0, annotated = 0;
  double vmin = 2, vmax = -2, amin = 2, amax = -2;
  for (const auto& video : videos) {
    if (video.frames.empty()) {
      throw ValidationError("video with no frames: " + video.video_id);
    }
    if (!video.frames.front().annotated()) {
      throw ValidationError("leading unannotated frame survived alignment in " +
                            video.video_id);
    }
    int prev_index = -1;
    for (const auto& f : video.frames) {
      if (f.frame_index <= prev_index) {
        throw ValidationError("frame_index not strictly increasing in " +
                              video.video_id);
      }
      prev_index = f.frame_index;
      ++frames;
      if (f.annotated()) {
        ++annotated;
        vmin = std::min(vmin, f.valence);
        vmax = std::max(vmax, f.valence);
        amin = std::min(amin, f.arousal);
        amax = std::max(amax, f.arousal);
      }
    }
  }
  out << "videos " << videos.size() << "\n";
  out << "frames " << frames << "\n";
  out << "annotated " << annotated << "\n";
  out << "valence range [" << format_fixed(vmin, 3) << ", "
      << format_fixed(vmax, 3) << "]\n";
  out << "arousal range [" << format_fixed(amin, 3) << ", "
      << format_fixed(amax, 3) << "]\n";
  out << "ok\n";
  return 0;
}

inline int cmd_weights(const cfg::RunConfig& config, std::ostream& out) {
  const auto annotations = dataio::load_annotations(config.dataset_root);
  std::vector<double> valence, arousal;
  for (const auto& [id, pairs] : annotations) {
    for (const auto& [v, a] : pairs) {
      if (!is_sentinel(v)) valence.push_back(v);
      if (!is_sentinel(a)) arousal.push_back(a);
    }
  }
  if (valence.empty() || arousal.empty()) {
    throw ValidationError("dataset has no annotated labels");
  }
  const fs::path dir(config.out_dir);
  fs::create_directories(dir);
  const auto kernel = detail::kernel_of(config);
  const struct {
    const char* name;
    const std::vector<double>* labels;
  } targets[] = {{"valence", &valence}, {"arousal", &arousal}};
  for (const auto& t : targets) {
    const auto hist = lds::empirical_density(*t.labels, config.lds_bins);
    const auto density = lds::smooth_density(hist, kernel);
    const auto table =
        config.lds_enabled
            ? lds::compute_weights(density, config.lds_clip_max, *t.labels)
            : lds::unit_weight_table(config.lds_bins);
    lds::write_weight_table_file(
        (dir / (std::string("weights_") + t.name + ".txt")).string(), table);
    std::vector<double> empirical(hist.counts.begin(), hist.counts.end());
    plot::write_text_file(
        (dir / (std::string("density_") + t.name + ".svg")).string(),
        plot::svg_density_figure(hist.bin_edges, empirical, density.density,
                                 std::string(t.name) +
                                     " label density: empirical vs smoothed"));
    const auto [wmin, wmax] =
        std::minmax_element(table.weights.begin(), table.weights.end());
    out << t.name << " weights in [" << format_fixed(*wmin, 4) << ", "
        << format_fixed(*wmax, 4) << "]\n";
  }
  detail::write_echo(config, dir);
  return 0;
}

inline int cmd_train(const cfg::RunConfig& config, std::ostream& out) {
  const auto videos = dataio::load_dataset(config.dataset_root);
  auto model_config = cfg::model_config(config);
  model_config.image_size = detail::dataset_image_size(videos);
  model_config.validate();
  const auto train_config = cfg::train_config(config);

  std::vector<std::string> ids;
  ids.reserve(videos.size());
  for (const auto& v : videos) ids.push_back(v.video_id);

  dataio::FoldSplit split;
  std::vector<int> fold_indices;
  if (config.train_split == "kfold") {
    split = dataio::make_folds(ids, config.train_k, config.seed);
    for (int f = 0; f < split.k; ++f) fold_indices.push_back(f);
  } else if (config.train_split == "holdout") {
    split = dataio::holdout_split(ids, config.train_holdout_fraction, config.seed);
    fold_indices.push_back(1);
  } else {
    throw ConfigError("train.split must be kfold or holdout");
  }

  const fs::path dir(config.out_dir);
  fs::create_directories(dir);
  std::ostringstream summary;
  summary << "varest-train-summary-v1\n";
  summary << "split " << config.train_split << "\n";
  double best_sum = 0.0;
  for (int f : fold_indices) {
    const auto report = train::fit(videos, split, f, model_config, train_config);
    const fs::path fold_dir = dir / ("fold_" + std::to_string(f));
    fs::create_directories(fold_dir);
    plot::write_text_file((fold_dir / "train_report.txt").string(),
                          train::serialize_train_report(report));
    model::save_checkpoint((fold_dir / "checkpoint_best.txt").string(),
                           report.best_checkpoint);
    model::save_checkpoint((fold_dir / "checkpoint_final.txt").string(),
                           report.final_checkpoint);
    lds::write_weight_table_file((fold_dir / "weights_valence.txt").string(),
                                 report.valence_weights);
    lds::write_weight_table_file((fold_dir / "weights_arousal.txt").string(),
                                 report.arousal_weights);
    summary << "fold " << f << " best_epoch " << report.best_epoch
            << " best_mean_ccc " << format_exact(report.best_mean_ccc) << "\n";
    best_sum += report.best_mean_ccc;
    out << "fold " << f << ": best epoch " << report.best_epoch
        << ", best mean CCC " << format_fixed(report.best_mean_ccc, 4) << "\n";
  }
  summary << "mean_best_ccc "
          << format_exact(best_sum / static_cast<double>(fold_indices.size()))
          << "\n";
  summary << "end\n";
  plot::write_text_file((dir / "train_summary.txt").string(), summary.str());
  detail::write_echo(config, dir);
  return 0;
}

inline int cmd_eval(const cfg::RunConfig& config, std::ostream& out) {
  if (config.eval_checkpoint.empty()) {
    throw ConfigError("eval requires eval.checkpoint (or --checkpoint)");
  }
  if (config.eval_missing_rate < 0.0 || config.eval_missing_rate >= 1.0) {
    throw ConfigError("eval.missing_rate must be in [0, 1)");
  }
  const auto cp = model::load_checkpoint(config.eval_checkpoint);
  model::TwoStreamModel m(cp.config);
  model::restore(m, cp);

  const auto videos = dataio::load_dataset(config.dataset_root);
  if (detail::dataset_image_size(videos) != cp.config.image_size) {
    throw ValidationError("dataset frame size does not match the checkpoint");
  }
  std::optional<phase::FilterBank> bank;
  if (cp.config.mode == model::Mode::kTwoStream) {
    bank = phase::build_filter_bank(cp.config.n_scales,
                                    cp.config.n_orientations,
                                    cp.config.image_size);
  }

  std::vector<std::vector<model::Prediction>> predictions;
  predictions.reserve(videos.size());
  for (size_t vi = 0; vi < videos.size(); ++vi) {
    auto preds = eval::predict_video(m, videos[vi], bank ? &*bank : nullptr);
    if (config.eval_missing_rate > 0.0) {
      // Simulated missing frames, then the imputation rules.
      std::mt19937_64 rng(mix_seed(static_cast<std::uint64_t>(config.seed),
                                   0xE7A1 + vi));
      std::bernoulli_distribution missing(config.eval_missing_rate);
      std::vector<std::optional<model::Prediction>> masked;
      masked.reserve(preds.size());
      for (const auto& p : preds) {
        masked.push_back(missing(rng) ? std::nullopt
                                      : std::optional<model::Prediction>(p));
      }
      preds = eval::impute_missing(masked);
    }
    predictions.push_back(std::move(preds));
  }

  const auto pooling = config.eval_pooling == "per_video"
                           ? eval::Pooling::kPerVideo
                           : eval::Pooling::kPooled;
  const auto report = eval::score_predictions(videos, predictions, pooling);
  if (std::abs(report.mean_ccc_value -
               0.5 * (report.pooled_valence_ccc + report.pooled_arousal_ccc)) >
      1e-12) {
    throw std::runtime_error("eval: mean CCC consistency check failed");
  }

  const fs::path dir(config.out_dir);
  fs::create_directories(dir / "predictions");
  plot::write_text_file((dir / "eval_report.txt").string(),
                        eval::serialize_eval_report(report));
  for (size_t vi = 0; vi < videos.size(); ++vi) {
    plot::write_text_file(
        (dir / "predictions" / (videos[vi].video_id + ".csv")).string(),
        eval::serialize_predictions(predictions[vi]));
  }
  detail::write_echo(config, dir);

  if (pooling == eval::Pooling::kPerVideo) {
    out << "macro valence CCC " << format_fixed(report.macro_valence_ccc, 4)
        << ", macro arousal CCC " << format_fixed(report.macro_arousal_ccc, 4)
        << "\n";
  }
  out << "pooled valence CCC " << format_fixed(report.pooled_valence_ccc, 4)
      << ", pooled arousal CCC " << format_fixed(report.pooled_arousal_ccc, 4)
      << ", mean " << format_fixed(report.mean_ccc_value, 4) << "\n";
  return 0;
}

inline int cmd_plot_histogram(const cfg::RunConfig& config, std::ostream& out) {
  const auto annotations = dataio::load_annotations(config.dataset_root);
  std::vector<std::pair<double, double>> labels;
  for (const auto& [id, pairs] : annotations) {
    labels.insert(labels.end(), pairs.begin(), pairs.end());
  }
  const auto counts = plot::va_histogram_2d(labels, config.plot_bins);
  const fs::path dir(config.out_dir);
  fs::create_directories(dir);
  plot::write_text_file(
      (dir / "va_histogram.svg").string(),
      plot::svg_heatmap(counts, true, "2D valence-arousal histogram (log counts)"));
  detail::write_echo(config, dir);
  out << "wrote " << (dir / "va_histogram.svg").string() << "\n";
  return 0;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"valence-arousal estimation workbench"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  long seed = 0;
  std::string out_dir;
  bool force = false, no_lds = false;
  std::vector<std::string> sets;
  std::string checkpoint;

  app.add_option("--config", config_path, "flat key=value config file");
  app.add_option("--seed", seed, "master RNG seed");
  app.add_option("--out", out_dir, "output directory");
  app.add_flag("--force", force, "overwrite non-empty output locations");
  app.add_flag("--no-lds", no_lds, "disable label distribution smoothing");
  app.add_option("--set", sets, "KEY=VALUE config override (repeatable)");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  auto* ingest = app.add_subcommand("ingest-check", "validate a dataset");
  auto* weights =
      app.add_subcommand("weights", "emit LDS weight tables and density plots");
  auto* train_cmd = app.add_subcommand("train", "train under cross-validation");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint to evaluate");
  auto* plot_cmd =
      app.add_subcommand("plot-histogram", "emit the 2D VA histogram figure");
  auto* keys_cmd =
      app.add_subcommand("config-keys", "list config keys with defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    cfg::RunConfig config;
    if (!config_path.empty()) cfg::apply_config_file(config, config_path);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
      }
      cfg::set_key(config, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (app.count("--seed")) config.seed = seed;
    if (app.count("--out")) config.out_dir = out_dir;
    if (force) config.force = true;
    if (no_lds) config.lds_enabled = false;
    if (eval_cmd->count("--checkpoint")) config.eval_checkpoint = checkpoint;

    if (synth->parsed()) return cmd_synth(config, out);
    if (ingest->parsed()) return cmd_ingest_check(config, out);
    if (weights->parsed()) return cmd_weights(config, out);
    if (train_cmd->parsed()) return cmd_train(config, out);
    if (eval_cmd->parsed()) return cmd_eval(config, out);
    if (plot_cmd->parsed()) return cmd_plot_histogram(config, out);
    if (keys_cmd->parsed()) {
      out << cfg::document_keys();
      return 0;
    }
    err << "error: no command\n";
    return 1;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace varest::cli
