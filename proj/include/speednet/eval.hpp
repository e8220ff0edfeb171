#pragma once

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "speednet/data.hpp"
#include "speednet/model.hpp"

namespace speednet {

struct Metrics {
  double rmse = 0;  // m/s
  double mae = 0;   // m/s
  int64_t n_samples = 0;
};

inline double rmse(const std::vector<double>& preds, const std::vector<double>& gts) {
  if (preds.empty() || preds.size() != gts.size())
    throw std::invalid_argument("rmse: empty or mismatched inputs");
  double s = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    const double d = gts[i] - preds[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(preds.size()));
}

inline double mae(const std::vector<double>& preds, const std::vector<double>& gts) {
  if (preds.empty() || preds.size() != gts.size())
    throw std::invalid_argument("mae: empty or mismatched inputs");
  double s = 0;
  for (size_t i = 0; i < preds.size(); ++i) s += std::abs(preds[i] - gts[i]);
  return s / static_cast<double>(preds.size());
}

inline Metrics evaluate_model(const Model& model, const std::vector<VideoClip>& clips) {
  if (clips.empty()) throw std::invalid_argument("evaluate_model: no clips");
  std::vector<double> preds, gts;
  preds.reserve(clips.size());
  gts.reserve(clips.size());
  for (const auto& c : clips) {
    preds.push_back(static_cast<double>(forward(model, c.input).at(0)));
    gts.push_back(c.label_speed);
  }
  return {rmse(preds, gts), mae(preds, gts), static_cast<int64_t>(clips.size())};
}

// The temporal profile a model expects, inferred from its input frame count.
inline DatasetProfile model_profile(const Model& model) {
  if (model.spec.input_frames == 13) return nuimages_profile();
  if (model.spec.input_frames == 10) return kitti_profile();
  throw std::invalid_argument("no windowing profile for input_frames = " +
                              std::to_string(model.spec.input_frames));
}

// Evaluates a model trained on one dataset profile against a stream recorded
// at another rate: decimate to the model's rate, window, preprocess, evaluate.
// Refuses when the source rate cannot supply the model's temporal window.
inline Metrics cross_dataset_eval(const Model& model, const FrameSequence& seq,
                                  int64_t stride = 1) {
  const DatasetProfile profile = model_profile(model);
  if (seq.rate_hz < profile.rate_hz)
    throw std::invalid_argument(
        "cross_dataset_eval: cannot fit " + std::to_string(profile.n_frames) +
        " frames per " + std::to_string(profile.window_s) + " s window from a " +
        std::to_string(seq.rate_hz) + " Hz source");
  FrameSequence resampled = resample_to_rate(seq, profile.rate_hz);
  const bool with_mask = model.spec.input_channels == 2;
  if (with_mask && !resampled.has_masks())
    throw std::invalid_argument("cross_dataset_eval: model needs masks");
  auto clips = build_clips(resampled, profile, with_mask, stride, "cross");
  return evaluate_model(model, clips);
}

inline void append_results_csv(const std::string& path, const std::string& model,
                               const std::string& dataset, const std::string& split,
                               const Metrics& m) {
  const bool fresh = !std::ifstream(path).good();
  std::ofstream f(path, std::ios::app);
  if (!f) throw std::runtime_error("cannot write results: " + path);
  if (fresh) f << "model,dataset,split,rmse,mae,n\n";
  f.precision(17);
  f << model << ',' << dataset << ',' << split << ',' << m.rmse << ',' << m.mae << ','
    << m.n_samples << "\n";
}

}  // namespace speednet
