#pragma once

#include <chrono>
#include <limits>
#include <stdexcept>
#include <vector>

#include "speednet/data.hpp"
#include "speednet/model.hpp"
#include "speednet/rng.hpp"

namespace speednet {

struct TrainConfig {
  double learning_rate = 1e-3;
  int max_epochs = 100;
  int patience = 10;
  int batch_size = 8;
  double val_fraction = 0.1;
  uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<real>> m;  // first moments, one per parameter
  std::vector<std::vector<real>> v;  // second moments
  int64_t step = 0;
};

struct History {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> seconds;
  int best_epoch = -1;  // 0-based

  double best_val_loss() const { return val_loss[static_cast<size_t>(best_epoch)]; }
};

// Mean squared error over the batch: (1/b) sum (S_i - S_hat_i)^2.
inline Tensor l2_loss(const Tensor& predictions, const Tensor& targets) {
  if (predictions.shape().size() != 1 || predictions.shape() != targets.shape())
    throw std::invalid_argument("l2_loss: prediction/target length mismatch");
  Tensor diff = sub(predictions, targets);
  return mean(mul(diff, diff));
}

// Standard Adam with bias correction; caller clears grads afterwards.
inline void adam_step(Model& model, AdamState& state, const TrainConfig& cfg) {
  if (state.m.empty()) {
    state.m.resize(model.parameters.size());
    state.v.resize(model.parameters.size());
    for (size_t i = 0; i < model.parameters.size(); ++i) {
      const size_t n = model.parameters[i].second.values().size();
      state.m[i].assign(n, real(0));
      state.v[i].assign(n, real(0));
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < model.parameters.size(); ++i) {
    Tensor& p = model.parameters[i].second;
    if (!p.has_grad())
      throw std::runtime_error("adam_step: parameter " + model.parameters[i].first +
                               " has no gradient");
    const auto& g = p.grad();
    auto& w = p.mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (size_t j = 0; j < w.size(); ++j) {
      m[j] = static_cast<real>(cfg.beta1 * m[j] + (1 - cfg.beta1) * g[j]);
      v[j] = static_cast<real>(cfg.beta2 * v[j] + (1 - cfg.beta2) * g[j] * g[j]);
      const double mh = m[j] / bc1;
      const double vh = v[j] / bc2;
      w[j] -= static_cast<real>(cfg.learning_rate * mh / (std::sqrt(vh) + cfg.adam_eps));
    }
  }
}

namespace detail {

inline double run_batch(Model& model, const std::vector<VideoClip>& clips,
                        const std::vector<size_t>& idx, size_t lo, size_t hi,
                        bool update, AdamState* state, const TrainConfig* cfg) {
  std::vector<Tensor> preds;
  std::vector<real> targets;
  for (size_t i = lo; i < hi; ++i) {
    preds.push_back(forward(model, clips[idx[i]].input));
    targets.push_back(static_cast<real>(clips[idx[i]].label_speed));
  }
  Tensor loss = l2_loss(stack_scalars(preds),
                        Tensor::create({static_cast<int64_t>(targets.size())}, targets));
  if (update) {
    zero_grads(model);
    backward(loss);
    adam_step(model, *state, *cfg);
  }
  return static_cast<double>(loss.at(0));
}

}  // namespace detail

// Seeded shuffling, a one-time validation holdout, Adam updates, and early
// stopping on validation loss with best-epoch parameter restore.
inline History train_model(Model& model, const std::vector<VideoClip>& clips,
                           const TrainConfig& cfg) {
  if (clips.empty()) throw std::invalid_argument("train_model: no clips");
  for (const auto& c : clips)
    if (c.input.shape() != Shape{model.spec.input_channels, model.spec.input_frames,
                                 64, 64})
      throw std::invalid_argument("train_model: clip " + c.source_id +
                                  " does not match model geometry");

  Rng rng(cfg.seed);
  std::vector<size_t> order(clips.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng = rng.split(0);
  split_rng.shuffle(order);
  const size_t n_val =
      std::max<size_t>(1, static_cast<size_t>(std::lround(clips.size() * cfg.val_fraction)));
  if (n_val >= clips.size())
    throw std::invalid_argument("train_model: validation split leaves no training data");
  std::vector<size_t> val_idx(order.begin(), order.begin() + static_cast<long>(n_val));
  std::vector<size_t> train_idx(order.begin() + static_cast<long>(n_val), order.end());

  AdamState state;
  History hist;
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::vector<real>> best_params;
  int since_improve = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t_start = std::chrono::steady_clock::now();
    Rng erng = rng.split(1 + static_cast<uint64_t>(epoch));
    erng.shuffle(train_idx);
    double train_sum = 0;
    size_t train_count = 0;
    for (size_t lo = 0; lo < train_idx.size(); lo += static_cast<size_t>(cfg.batch_size)) {
      const size_t hi = std::min(train_idx.size(), lo + static_cast<size_t>(cfg.batch_size));
      train_sum += detail::run_batch(model, clips, train_idx, lo, hi, true, &state, &cfg) *
                   static_cast<double>(hi - lo);
      train_count += hi - lo;
    }
    std::vector<size_t> vid(val_idx.size());
    for (size_t i = 0; i < vid.size(); ++i) vid[i] = i;
    double val_sum = 0;
    for (size_t lo = 0; lo < val_idx.size(); lo += static_cast<size_t>(cfg.batch_size)) {
      const size_t hi = std::min(val_idx.size(), lo + static_cast<size_t>(cfg.batch_size));
      val_sum += detail::run_batch(model, clips, val_idx, lo, hi, false, nullptr, nullptr) *
                 static_cast<double>(hi - lo);
    }
    const double train_loss = train_sum / static_cast<double>(train_count);
    const double val_loss = val_sum / static_cast<double>(val_idx.size());
    hist.train_loss.push_back(train_loss);
    hist.val_loss.push_back(val_loss);
    hist.seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count());

    if (val_loss < best) {
      best = val_loss;
      hist.best_epoch = epoch;
      since_improve = 0;
      best_params.clear();
      for (const auto& [name, p] : model.parameters) best_params.push_back(p.values());
    } else {
      ++since_improve;
      if (since_improve >= cfg.patience) break;
    }
  }

  for (size_t i = 0; i < model.parameters.size(); ++i)
    model.parameters[i].second.mutable_values() = best_params[i];
  return hist;
}

inline void write_history_csv(const History& h, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write training log: " + path);
  f << "epoch,train_loss,val_loss,seconds\n";
  f.precision(17);
  for (size_t e = 0; e < h.train_loss.size(); ++e)
    f << e << ',' << h.train_loss[e] << ',' << h.val_loss[e] << ',' << h.seconds[e]
      << "\n";
}

}  // namespace speednet
