// Command-line entry point: synthetic dataset generation, training,
// evaluation, and the finite-difference gradient check suite.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "speednet/data.hpp"
#include "speednet/eval.hpp"
#include "speednet/gradcheck.hpp"
#include "speednet/model.hpp"
#include "speednet/synth.hpp"
#include "speednet/train.hpp"

namespace fs = std::filesystem;
using namespace speednet;

namespace {

// Every run records its exact resolved configuration next to its outputs.
void write_run_config(const std::string& out_dir,
                      const std::vector<std::pair<std::string, std::string>>& kv) {
  fs::create_directories(out_dir);
  std::ofstream f(fs::path(out_dir) / "resolved_config.txt");
  for (const auto& [k, v] : kv) f << k << "=" << v << "\n";
}

struct SynthOpts {
  std::string out;
  int clips = 16;
  int frames = 10;
  double rate = 10.0;
  int size = 64;
  double speed_min = 2.0;
  double speed_max = 18.0;
  int distractors = 0;
  double noise = 0.0;
  uint64_t seed = 0;
  double test_fraction = 0.2;
  std::string format = "png";
};

int cmd_synth(const SynthOpts& o) {
  if (o.speed_max > SyntheticSceneConfig::kMaxSpeed || o.speed_min < 0 ||
      o.speed_min > o.speed_max) {
    std::cerr << "error: speeds must lie within [0, "
              << SyntheticSceneConfig::kMaxSpeed << "] m/s\n";
    return 1;
  }
  SyntheticSceneConfig cfg;
  cfg.speed_profile = [&](double) { return o.speed_min; };  // replaced per clip
  cfg.frame_count = o.frames;
  cfg.rate_hz = o.rate;
  cfg.output_size = o.size;
  cfg.distractor_count = o.distractors;
  cfg.noise_std = o.noise;
  export_synthetic_dataset(o.out, cfg, o.clips, o.speed_min, o.speed_max,
                           o.test_fraction, o.seed, o.format);
  write_run_config(o.out, {{"command", "synth"},
                           {"clips", std::to_string(o.clips)},
                           {"frames", std::to_string(o.frames)},
                           {"rate", std::to_string(o.rate)},
                           {"size", std::to_string(o.size)},
                           {"speed_min", std::to_string(o.speed_min)},
                           {"speed_max", std::to_string(o.speed_max)},
                           {"distractors", std::to_string(o.distractors)},
                           {"noise", std::to_string(o.noise)},
                           {"seed", std::to_string(o.seed)},
                           {"test_fraction", std::to_string(o.test_fraction)},
                           {"format", o.format}});
  std::cout << "wrote " << o.clips << " clips to " << o.out << "\n";
  return 0;
}

struct DataOpts {
  std::string data;
  std::string dataset = "manifest";  // manifest | kitti
  double rate = 0;                   // 0 = profile default
  int stride = 0;                    // 0 = profile default
  int workers = 1;                   // upper bound on clip-level parallelism
};

// Loads clips for one split. The stride default follows the dataset family:
// 5 for KITTI-style overlapping windows, n (non-overlapping) for manifests.
std::vector<VideoClip> load_clips(const DataOpts& d, const DatasetProfile& profile,
                                  bool with_mask, const std::string& split) {
  if (d.workers < 1)
    throw std::invalid_argument("--workers must be at least 1");
  std::vector<VideoClip> clips;
  if (d.dataset == "manifest") {
    const double rate = d.rate > 0 ? d.rate : profile.rate_hz;
    const int64_t stride = d.stride > 0 ? d.stride : profile.n_frames;
    for (auto& mc : load_manifest_clips(d.data, rate)) {
      if (mc.split != split) continue;
      if (with_mask && !mc.seq.has_masks())
        throw std::invalid_argument("clip " + mc.clip_id +
                                    " has no masks but the model needs them");
      auto cs = build_clips(mc.seq, profile, with_mask, stride, mc.clip_id);
      clips.insert(clips.end(), cs.begin(), cs.end());
    }
  } else if (d.dataset == "kitti") {
    const int64_t stride = d.stride > 0 ? d.stride : 5;
    auto table = load_split_table("kitti");
    for (const auto& [drive, sp] : table) {
      if (sp != split) continue;
      fs::path base = fs::path(d.data) / drive.substr(0, 10) / (drive + "_sync");
      if (!fs::is_directory(base)) continue;  // partial local copies are fine
      if (with_mask)
        throw std::invalid_argument(
            "kitti raw drives carry no masks; provide a manifest with mask paths "
            "for masked models");
      FrameSequence seq = kitti_load_drive(d.data, drive);
      auto windows = make_windows(seq, profile.n_frames, profile.label_frame, stride);
      if (is_stationary_heavy(seq)) filter_stationary(windows);
      for (const auto& w : windows) {
        std::vector<Image> fr(seq.frames.begin() + static_cast<long>(w.start),
                              seq.frames.begin() + static_cast<long>(w.start) +
                                  profile.n_frames);
        clips.push_back({preprocess_clip(fr, {}, false), w.label_speed,
                         drive + "@" + std::to_string(w.start)});
      }
    }
    if (clips.empty())
      throw std::invalid_argument("no " + split + " drives found under " + d.data);
  } else {
    throw std::invalid_argument("unknown dataset kind: " + d.dataset);
  }
  if (clips.empty()) throw std::invalid_argument("no clips in split '" + split + "'");
  return clips;
}

struct TrainOpts {
  DataOpts data;
  std::string model = "threedcma";
  std::string preset = "reduced";
  int frames = 10;
  std::string out;
  TrainConfig cfg;
};

int cmd_train(const TrainOpts& o) {
  auto kind = kind_from_name(o.model);
  if (!kind) {
    std::cerr << "error: unknown model kind " << o.model << "\n";
    return 1;
  }
  ModelSpec spec;
  spec.kind = *kind;
  spec.input_frames = o.frames;
  spec.input_channels = *kind == ModelKind::ThreeDCMA ? 2 : 1;
  spec.preset = o.preset == "faithful" ? Preset::Faithful : Preset::Reduced;
  const DatasetProfile profile = o.frames == 13 ? nuimages_profile() : kitti_profile();
  auto clips = load_clips(o.data, profile, spec.input_channels == 2, "train");

  Model model = build_model(spec, o.cfg.seed);
  History hist = train_model(model, clips, o.cfg);

  fs::create_directories(o.out);
  save_checkpoint(model, (fs::path(o.out) / "checkpoint.bin").string());
  write_history_csv(hist, (fs::path(o.out) / "train_log.csv").string());
  write_run_config(o.out, {{"command", "train"},
                           {"data", o.data.data},
                           {"dataset", o.data.dataset},
                           {"model", o.model},
                           {"preset", o.preset},
                           {"frames", std::to_string(o.frames)},
                           {"lr", std::to_string(o.cfg.learning_rate)},
                           {"epochs", std::to_string(o.cfg.max_epochs)},
                           {"patience", std::to_string(o.cfg.patience)},
                           {"batch", std::to_string(o.cfg.batch_size)},
                           {"val_fraction", std::to_string(o.cfg.val_fraction)},
                           {"seed", std::to_string(o.cfg.seed)}});
  std::cout << "trained on " << clips.size() << " clips; best epoch "
            << hist.best_epoch << ", best val loss " << hist.best_val_loss() << "\n";
  return 0;
}

struct EvalOpts {
  std::string checkpoint;
  DataOpts data;
  std::string split = "test";
  std::string out = ".";
  std::string results = "results.csv";
  std::string hist_file;
  bool cross = false;
  double target_hz = 2.0;
};

int cmd_eval(const EvalOpts& o) {
  Model model = load_checkpoint(o.checkpoint);
  Metrics m;
  std::string dataset_tag = o.data.dataset;
  std::vector<double> labels;
  if (o.cross) {
    const DatasetProfile profile = model_profile(model);
    if (std::abs(profile.rate_hz - o.target_hz) > 1e-9)
      throw std::invalid_argument("cross evaluation: model expects " +
                                  std::to_string(profile.rate_hz) +
                                  " Hz windows, got --target-hz " +
                                  std::to_string(o.target_hz));
    const bool with_mask = model.spec.input_channels == 2;
    if (o.data.dataset != "manifest")
      throw std::invalid_argument("cross evaluation reads a manifest dataset");
    const double rate = o.data.rate > 0 ? o.data.rate : 10.0;
    std::vector<double> preds;
    Metrics agg{0, 0, 0};
    double se = 0, ae = 0;
    int64_t n = 0;
    for (auto& mc : load_manifest_clips(o.data.data, rate)) {
      if (mc.split != o.split) continue;
      Metrics cm = cross_dataset_eval(model, mc.seq);
      se += cm.rmse * cm.rmse * static_cast<double>(cm.n_samples);
      ae += cm.mae * static_cast<double>(cm.n_samples);
      n += cm.n_samples;
    }
    if (n == 0) throw std::invalid_argument("no clips in split '" + o.split + "'");
    m = {std::sqrt(se / static_cast<double>(n)), ae / static_cast<double>(n), n};
    dataset_tag += "+cross";
  } else {
    const DatasetProfile profile = model_profile(model);
    auto clips = load_clips(o.data, profile, model.spec.input_channels == 2, o.split);
    m = evaluate_model(model, clips);
    for (const auto& c : clips) labels.push_back(c.label_speed);
  }
  fs::create_directories(o.out);
  append_results_csv((fs::path(o.out) / o.results).string(),
                     kind_name(model.spec.kind), dataset_tag, o.split, m);
  if (!o.hist_file.empty() && !labels.empty()) {
    // speed-distribution histogram data: 1 m/s bins over [0, 20]
    std::vector<int> bins(21, 0);
    for (double s : labels) bins[std::min<size_t>(20, static_cast<size_t>(s))]++;
    std::ofstream hf(fs::path(o.out) / o.hist_file);
    hf << "bin_lo_mps,count\n";
    for (size_t b = 0; b < bins.size(); ++b) hf << b << ',' << bins[b] << "\n";
  }
  write_run_config(o.out, {{"command", "eval"},
                           {"checkpoint", o.checkpoint},
                           {"data", o.data.data},
                           {"dataset", o.data.dataset},
                           {"split", o.split},
                           {"cross", o.cross ? "true" : "false"},
                           {"target_hz", std::to_string(o.target_hz)}});
  std::cout << "rmse=" << m.rmse << " mae=" << m.mae << " n=" << m.n_samples << "\n";
  return 0;
}

struct GradcheckOpts {
  std::string op;  // empty = all
  int seeds = 10;
  bool inject_bad_grad = false;
};

int cmd_gradcheck(const GradcheckOpts& o) {
  const real tol = real(1e-5);
  bool all_pass = true;
  auto run = [&](const std::string& name) {
    real worst = 0;
    for (int s = 0; s < o.seeds; ++s)
      worst = std::max(worst, gradcheck_op(name, static_cast<uint64_t>(s), real(1e-5),
                                           o.inject_bad_grad));
    const bool ok = worst < tol;
    all_pass &= ok;
    std::cout << (ok ? "PASS" : "FAIL") << " " << name
              << " max_rel_err=" << static_cast<double>(worst) << "\n";
  };
  if (!o.op.empty() && o.op != "model3dcma" && o.op != "vivit") {
    run(o.op);
  } else if (o.op.empty()) {
    for (const auto& name : gradcheck_op_names()) run(name);
  }
  auto run_model = [&](const std::string& tag, Model& model, uint64_t seed) {
    Rng rng(seed);
    std::vector<real> clip(static_cast<size_t>(model.spec.input_channels *
                                               model.spec.input_frames * 64 * 64));
    for (auto& v : clip) v = static_cast<real>(rng.next_double());
    Tensor x = Tensor::create(
        {model.spec.input_channels, model.spec.input_frames, 64, 64}, clip);
    real worst = gradcheck_model(model, x, 200, seed);
    if (o.inject_bad_grad) worst = std::max<real>(worst, real(1));
    const bool ok = worst < tol;
    all_pass &= ok;
    std::cout << (ok ? "PASS" : "FAIL") << " " << tag
              << " max_rel_err=" << static_cast<double>(worst) << "\n";
  };
  if (o.op.empty() || o.op == "model3dcma") {
    ModelSpec spec;
    spec.kind = ModelKind::ThreeDCMA;
    spec.preset = Preset::Reduced;
    spec.input_frames = 10;
    Model m = build_3dcma(spec, 7);
    run_model("model3dcma_reduced", m, 11);
  }
  if (o.op.empty() || o.op == "vivit") {
    ModelSpec spec;
    spec.kind = ModelKind::ViViT;
    spec.input_channels = 1;
    spec.input_frames = 10;
    spec.layers = 1;
    spec.heads = 2;
    spec.dim = 16;
    Model m = build_vivit(spec, 7);
    run_model("vivit_1layer", m, 13);
  }
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"monocular ego-vehicle speed estimation toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value config file; flags take precedence");

  SynthOpts so;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dashed-lane dataset");
  synth->add_option("--out", so.out, "output directory")->required();
  synth->add_option("--clips", so.clips);
  synth->add_option("--frames", so.frames);
  synth->add_option("--rate", so.rate, "sampling rate, Hz");
  synth->add_option("--size", so.size, "source image size before 64x64 resize");
  synth->add_option("--speed-min", so.speed_min);
  synth->add_option("--speed-max", so.speed_max);
  synth->add_option("--distractors", so.distractors);
  synth->add_option("--noise", so.noise, "additive gray-channel noise std");
  synth->add_option("--seed", so.seed);
  synth->add_option("--test-fraction", so.test_fraction);
  synth->add_option("--format", so.format, "png or pgm");

  TrainOpts to;
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--data", to.data.data, "manifest CSV or kitti root")->required();
  train->add_option("--dataset", to.data.dataset, "manifest or kitti");
  train->add_option("--rate", to.data.rate, "manifest frame rate, Hz");
  train->add_option("--stride", to.data.stride, "window stride in frames");
  train->add_option("--workers", to.data.workers,
                    "upper bound on clip-level parallelism during ingestion");
  train->add_option("--model", to.model, "threedcma | threedcnn_nomask | vivit");
  train->add_option("--preset", to.preset, "faithful | reduced");
  train->add_option("--frames", to.frames, "temporal window length");
  train->add_option("--out", to.out, "output directory")->required();
  train->add_option("--lr", to.cfg.learning_rate);
  train->add_option("--epochs", to.cfg.max_epochs);
  train->add_option("--patience", to.cfg.patience);
  train->add_option("--batch", to.cfg.batch_size);
  train->add_option("--val-fraction", to.cfg.val_fraction);
  train->add_option("--seed", to.cfg.seed);

  EvalOpts eo;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", eo.checkpoint)->required();
  eval->add_option("--data", eo.data.data)->required();
  eval->add_option("--dataset", eo.data.dataset, "manifest or kitti");
  eval->add_option("--rate", eo.data.rate, "source frame rate, Hz");
  eval->add_option("--stride", eo.data.stride);
  eval->add_option("--workers", eo.data.workers,
                   "upper bound on clip-level parallelism during ingestion");
  eval->add_option("--split", eo.split);
  eval->add_option("--out", eo.out);
  eval->add_option("--results", eo.results, "results CSV (appended)");
  eval->add_option("--hist", eo.hist_file, "speed histogram output file");
  eval->add_flag("--cross", eo.cross, "cross-dataset protocol (decimate first)");
  eval->add_option("--target-hz", eo.target_hz);

  GradcheckOpts go;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--op", go.op, "check a single op");
  gc->add_option("--seeds", go.seeds);
  gc->add_flag("--inject-bad-grad", go.inject_bad_grad,
               "negative control: corrupt analytic gradients");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*synth) return cmd_synth(so);
    if (*train) return cmd_train(to);
    if (*eval) return cmd_eval(eo);
    if (*gc) return cmd_gradcheck(go);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
