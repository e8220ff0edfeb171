#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "speednet/eval.hpp"
#include "speednet/rng.hpp"
#include "speednet/synth.hpp"

using namespace speednet;

TEST_CASE("rmse and mae: hand-checked values") {
  const std::vector<double> p{1, 2, 3}, g{1, 2, 3};
  CHECK(rmse(p, g) == 0.0);
  CHECK(mae(p, g) == 0.0);

  const std::vector<double> p2{2, 7}, g2{5, 3};  // errors 3 and 4
  CHECK(rmse(p2, g2) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-15));  // 3.5355
  CHECK(mae(p2, g2) == doctest::Approx(3.5).epsilon(1e-15));

  const std::vector<double> one{4.0}, oneg{6.5};
  CHECK(rmse(one, oneg) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(mae(one, oneg) == doctest::Approx(2.5).epsilon(1e-15));

  CHECK_THROWS_AS(rmse({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(mae({1}, {1, 2}), std::invalid_argument);
}

TEST_CASE("rmse dominates mae on random data, ties only for constant error") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const size_t n = 2 + rng.next_below(20);
    std::vector<double> p(n), g(n);
    for (size_t i = 0; i < n; ++i) {
      p[i] = rng.uniform(0, 20);
      g[i] = rng.uniform(0, 20);
    }
    CHECK(rmse(p, g) >= mae(p, g) - 1e-12);
  }
  // constant absolute error: the two metrics coincide
  std::vector<double> p{1, 2, 3}, g{3, 0, 5};
  CHECK(rmse(p, g) == doctest::Approx(mae(p, g)).epsilon(1e-15));
}

TEST_CASE("metrics are invariant to sample order") {
  Rng rng(23);
  std::vector<double> p(31), g(31);
  for (size_t i = 0; i < p.size(); ++i) {
    p[i] = rng.uniform(0, 20);
    g[i] = rng.uniform(0, 20);
  }
  std::vector<size_t> perm(p.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm);
  std::vector<double> pp(p.size()), gp(g.size());
  for (size_t i = 0; i < perm.size(); ++i) {
    pp[i] = p[perm[i]];
    gp[i] = g[perm[i]];
  }
  CHECK(rmse(pp, gp) == doctest::Approx(rmse(p, g)).epsilon(1e-14));
  CHECK(mae(pp, gp) == doctest::Approx(mae(p, g)).epsilon(1e-14));
}

static Model tiny_model(int64_t frames) {
  ModelSpec s;
  s.preset = Preset::Reduced;
  s.input_frames = frames;
  return build_model(s, 3);
}

TEST_CASE("evaluate_model: metrics recompute from its own predictions") {
  Model m = tiny_model(10);
  std::vector<VideoClip> clips;
  Rng rng(5);
  for (int i = 0; i < 4; ++i) {
    std::vector<real> v(2 * 10 * 64 * 64);
    for (auto& x : v) x = static_cast<real>(rng.uniform(0.0, 1.0));
    clips.push_back({Tensor::create({2, 10, 64, 64}, v), rng.uniform(0.0, 15.0), "e"});
  }
  Metrics got = evaluate_model(m, clips);
  CHECK(got.n_samples == 4);
  std::vector<double> p, g;
  for (const auto& c : clips) {
    p.push_back(static_cast<double>(forward(m, c.input).at(0)));
    g.push_back(c.label_speed);
  }
  CHECK(got.rmse == doctest::Approx(rmse(p, g)).epsilon(1e-14));
  CHECK(got.mae == doctest::Approx(mae(p, g)).epsilon(1e-14));
  CHECK_THROWS_AS(evaluate_model(m, {}), std::invalid_argument);
}

TEST_CASE("model_profile follows the input frame count") {
  CHECK(model_profile(tiny_model(10)).rate_hz == 10.0);
  CHECK(model_profile(tiny_model(10)).label_frame == 10);
  ModelSpec s;
  s.kind = ModelKind::ViViT;
  s.input_frames = 13;
  s.layers = 1;
  s.heads = 2;
  s.dim = 16;
  Model vv = build_model(s, 1);
  CHECK(model_profile(vv).rate_hz == 2.0);
  CHECK(model_profile(vv).n_frames == 13);
  CHECK_THROWS_AS(model_profile(tiny_model(12)), std::invalid_argument);
}

TEST_CASE("cross-dataset eval equals decimate + window + evaluate by hand") {
  Model m = tiny_model(10);

  SyntheticSceneConfig cfg;
  cfg.speed_profile = [](double) { return 6.0; };
  cfg.frame_count = 25;
  FrameSequence seq = synth_generate_clip(cfg, 11);

  Metrics via = cross_dataset_eval(m, seq, 2);
  FrameSequence res = resample_to_rate(seq, 10.0);
  auto clips = build_clips(res, kitti_profile(), true, 2, "cross");
  Metrics manual = evaluate_model(m, clips);
  CHECK(via.n_samples == manual.n_samples);
  CHECK(via.rmse == doctest::Approx(manual.rmse).epsilon(1e-14));
  CHECK(via.mae == doctest::Approx(manual.mae).epsilon(1e-14));

  // a 10 Hz model cannot be served from a 2 Hz stream
  FrameSequence slow = resample_to_rate(seq, 2.0);
  CHECK_THROWS_AS(cross_dataset_eval(m, slow), std::invalid_argument);

  // mask-free streams cannot feed a masked model
  FrameSequence nomask = seq;
  nomask.masks.clear();
  CHECK_THROWS_AS(cross_dataset_eval(m, nomask), std::invalid_argument);
}

TEST_CASE("results csv appends with a single header") {
  namespace fsys = std::filesystem;
  const auto path = (fsys::temp_directory_path() / "speednet_results.csv").string();
  fsys::remove(path);
  append_results_csv(path, "threedcma", "synth", "test", {1.5, 1.25, 40});
  append_results_csv(path, "vivit", "synth", "test", {2.5, 2.0, 40});
  std::ifstream f(path);
  std::string l1, l2, l3, extra;
  std::getline(f, l1);
  std::getline(f, l2);
  std::getline(f, l3);
  CHECK(l1 == "model,dataset,split,rmse,mae,n");
  CHECK(l2 == "threedcma,synth,test,1.5,1.25,40");
  CHECK(l3 == "vivit,synth,test,2.5,2,40");
  CHECK_FALSE(std::getline(f, extra));
  fsys::remove(path);
}
