#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "speednet/train.hpp"

using namespace speednet;

// constant-valued clips whose label is an affine function of the fill value;
// a bias-only path can fit these, so tiny models learn them fast
static std::vector<VideoClip> constant_clips(size_t count, int64_t frames) {
  std::vector<VideoClip> clips;
  for (size_t i = 0; i < count; ++i) {
    const real fill = static_cast<real>(i) / static_cast<real>(count);
    clips.push_back({Tensor::create({2, frames, 64, 64}, fill),
                     2.0 + 10.0 * static_cast<double>(fill),
                     "c" + std::to_string(i)});
  }
  return clips;
}

static Model tiny_model(uint64_t seed) {
  ModelSpec s;
  s.preset = Preset::Reduced;
  s.input_frames = 2;
  return build_model(s, seed);
}

TEST_CASE("l2 loss: hand values, gradient, shape checks") {
  Tensor p = Tensor::create({2}, std::vector<real>{1, 2}, true);
  Tensor t = Tensor::create({2}, std::vector<real>{0, 0});
  Tensor loss = l2_loss(p, t);
  CHECK(loss.at(0) == doctest::Approx(2.5).epsilon(1e-15));
  backward(loss);
  CHECK(p.grad()[0] == doctest::Approx(1.0).epsilon(1e-14));  // 2(p-t)/b
  CHECK(p.grad()[1] == doctest::Approx(2.0).epsilon(1e-14));

  Tensor perfect = l2_loss(Tensor::create({3}, std::vector<real>{4, 5, 6}),
                           Tensor::create({3}, std::vector<real>{4, 5, 6}));
  CHECK(perfect.at(0) == real(0));
  CHECK_THROWS_AS(l2_loss(Tensor::create({2}), Tensor::create({3})),
                  std::invalid_argument);
  CHECK_THROWS_AS(l2_loss(Tensor::create({2, 1}), Tensor::create({2, 1})),
                  std::invalid_argument);
}

TEST_CASE("adam: first step moves by lr regardless of gradient scale") {
  for (double g0 : {0.01, 1.0, 250.0}) {
    Model m;
    m.parameters.emplace_back("w", Tensor::create({1}, real(5), true));
    m.parameters[0].second.zero_grad();
    m.parameters[0].second.node()->grad[0] = static_cast<real>(g0);
    AdamState st;
    TrainConfig cfg;
    adam_step(m, st, cfg);
    // bias corrections cancel at step one: delta = -lr * g / (|g| + eps)
    const double expect = 5.0 - cfg.learning_rate * g0 / (std::abs(g0) + cfg.adam_eps);
    CHECK(m.parameters[0].second.at(0) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("adam: zero gradient leaves the parameter unchanged") {
  Model m;
  m.parameters.emplace_back("w", Tensor::create({3}, std::vector<real>{1, 2, 3}, true));
  m.parameters[0].second.zero_grad();
  AdamState st;
  TrainConfig cfg;
  for (int i = 0; i < 5; ++i) adam_step(m, st, cfg);
  CHECK(m.parameters[0].second.values() == std::vector<real>{1, 2, 3});

  Model missing;
  missing.parameters.emplace_back("w", Tensor::create({1}, real(0), true));
  AdamState st2;
  CHECK_THROWS_AS(adam_step(missing, st2, cfg), std::runtime_error);
}

TEST_CASE("adam: drives a quadratic to its minimum") {
  Model m;
  m.parameters.emplace_back("w", Tensor::create({1}, real(2), true));
  AdamState st;
  TrainConfig cfg;
  cfg.learning_rate = 2e-3;
  Tensor target = Tensor::create({1}, real(3));
  int steps = 0;
  for (; steps < 2000; ++steps) {
    Tensor& w = m.parameters[0].second;
    if (std::abs(w.at(0) - real(3)) < real(1e-3)) break;
    w.zero_grad();
    Tensor d = sub(w, target);
    backward(sum(mul(d, d)));
    adam_step(m, st, cfg);
  }
  CHECK(steps < 2000);
  CHECK(std::abs(m.parameters[0].second.at(0) - real(3)) < real(1e-3));
}

TEST_CASE("training reduces the loss on learnable data") {
  Model m = tiny_model(1);
  auto clips = constant_clips(12, 2);
  TrainConfig cfg;
  cfg.max_epochs = 8;
  cfg.patience = 8;
  cfg.learning_rate = 1e-3;
  cfg.seed = 3;
  History h = train_model(m, clips, cfg);
  REQUIRE(h.train_loss.size() >= 2);
  CHECK(h.train_loss.back() < h.train_loss.front());
  CHECK(h.best_epoch >= 0);
  CHECK(h.best_val_loss() == *std::min_element(h.val_loss.begin(), h.val_loss.end()));
}

TEST_CASE("early stopping: a flat run stops after patience epochs past the best") {
  Model m = tiny_model(2);
  auto clips = constant_clips(10, 2);
  TrainConfig cfg;
  cfg.learning_rate = 0;  // epoch 0 improves on infinity, then a flat streak
  cfg.max_epochs = 100;
  cfg.patience = 10;
  History h = train_model(m, clips, cfg);
  CHECK(h.train_loss.size() == 11);  // best epoch plus ten non-improving epochs
  CHECK(h.best_epoch == 0);
  for (size_t e = 1; e < h.val_loss.size(); ++e)
    CHECK(h.val_loss[e] == h.val_loss[0]);  // ties never count as improvement

  Model m2 = tiny_model(2);
  cfg.patience = 3;
  History h3 = train_model(m2, clips, cfg);
  CHECK(h3.train_loss.size() == 4);
}

TEST_CASE("restored parameters reproduce the best validation loss") {
  Model m = tiny_model(4);
  auto clips = constant_clips(12, 2);
  TrainConfig cfg;
  cfg.max_epochs = 6;
  cfg.patience = 6;
  cfg.seed = 9;
  cfg.val_fraction = 0.25;
  History h = train_model(m, clips, cfg);

  // recreate the holdout exactly as training drew it
  std::vector<size_t> order(clips.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng(cfg.seed).split(0).shuffle(order);
  const size_t n_val = static_cast<size_t>(std::lround(clips.size() * cfg.val_fraction));
  std::vector<Tensor> preds;
  std::vector<real> targets;
  for (size_t i = 0; i < n_val; ++i) {
    preds.push_back(forward(m, clips[order[i]].input));
    targets.push_back(static_cast<real>(clips[order[i]].label_speed));
  }
  const double val = static_cast<double>(
      l2_loss(stack_scalars(preds),
              Tensor::create({static_cast<int64_t>(n_val)}, targets))
          .at(0));
  CHECK(val == doctest::Approx(h.best_val_loss()).epsilon(1e-12));
}

TEST_CASE("training is deterministic in config and seed") {
  auto clips = constant_clips(10, 2);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.patience = 3;
  cfg.seed = 5;
  Model a = tiny_model(7), b = tiny_model(7);
  History ha = train_model(a, clips, cfg);
  History hb = train_model(b, clips, cfg);
  CHECK(ha.train_loss == hb.train_loss);
  CHECK(ha.val_loss == hb.val_loss);
  CHECK(ha.best_epoch == hb.best_epoch);
  for (size_t i = 0; i < a.parameters.size(); ++i)
    CHECK(a.parameters[i].second.values() == b.parameters[i].second.values());
}

TEST_CASE("train_model input validation") {
  Model m = tiny_model(8);
  TrainConfig cfg;
  CHECK_THROWS_AS(train_model(m, {}, cfg), std::invalid_argument);
  auto clips = constant_clips(4, 4);  // frames mismatch the 2-frame model
  CHECK_THROWS_AS(train_model(m, clips, cfg), std::invalid_argument);
  auto two = constant_clips(2, 2);
  TrainConfig big = cfg;
  big.val_fraction = 0.9;  // holdout would swallow everything
  CHECK_THROWS_AS(train_model(m, two, big), std::invalid_argument);
}

TEST_CASE("history csv layout") {
  History h;
  h.train_loss = {2.0, 1.0};
  h.val_loss = {2.5, 1.5};
  h.seconds = {0.25, 0.125};
  h.best_epoch = 1;
  namespace fsys = std::filesystem;
  const auto path = (fsys::temp_directory_path() / "speednet_hist.csv").string();
  write_history_csv(h, path);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "epoch,train_loss,val_loss,seconds");
  std::getline(f, line);
  CHECK(line == "0,2,2.5,0.25");
  std::getline(f, line);
  CHECK(line == "1,1,1.5,0.125");
  fsys::remove(path);
}
