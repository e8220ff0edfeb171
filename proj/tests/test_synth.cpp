#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <complex>
#include <filesystem>
#include <fstream>

#include "speednet/synth.hpp"

using namespace speednet;
namespace fsys = std::filesystem;

static SyntheticSceneConfig base_config(double v) {
  SyntheticSceneConfig cfg;
  cfg.speed_profile = [v](double) { return v; };
  return cfg;
}

static bool images_equal(const Image& a, const Image& b) {
  return a.width == b.width && a.height == b.height && a.channels == b.channels &&
         a.pixels == b.pixels;
}

TEST_CASE("validation: speed cap and missing profile") {
  SyntheticSceneConfig cfg = base_config(25.0);
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.speed_profile = [](double) { return -1.0; };
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.speed_profile = nullptr;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK_NOTHROW(base_config(20.0).validate());
}

TEST_CASE("distance integration: constant and ramp profiles") {
  SyntheticSceneConfig c = base_config(7.0);
  CHECK(synth_distance_at(c, 2.0) == doctest::Approx(14.0).epsilon(1e-9));
  SyntheticSceneConfig ramp;
  ramp.speed_profile = [](double t) { return 4.0 * t; };  // s = 2 t^2
  CHECK(synth_distance_at(ramp, 3.0) == doctest::Approx(18.0).epsilon(1e-6));
}

TEST_CASE("zero speed: every frame identical, timestamps advance") {
  FrameSequence seq = synth_generate_clip(base_config(0.0), 1);
  REQUIRE(seq.size() == 10);
  for (size_t k = 1; k < seq.size(); ++k) {
    CHECK(images_equal(seq.frames[k], seq.frames[0]));
    CHECK(images_equal(seq.masks[k], seq.masks[0]));
  }
  for (size_t k = 0; k < seq.size(); ++k) {
    CHECK(seq.timestamps_us[k] == 1000000 + static_cast<int64_t>(k) * 100000);
    CHECK(seq.speeds[k] == 0.0);
  }
}

TEST_CASE("frames depend only on distance traveled") {
  // 8 m/s sampled at 10 Hz covers the same distances as 4 m/s at 5 Hz,
  // so the rendered frames must coincide pair-for-pair.
  SyntheticSceneConfig fast = base_config(8.0);
  SyntheticSceneConfig slow = base_config(4.0);
  slow.rate_hz = 5.0;
  FrameSequence a = synth_generate_clip(fast, 3);
  FrameSequence b = synth_generate_clip(slow, 3);
  for (size_t k = 0; k < 10; ++k) CHECK(images_equal(a.frames[k], b.frames[k]));
}

TEST_CASE("determinism: identical bytes for identical seeds") {
  SyntheticSceneConfig cfg = base_config(6.0);
  cfg.distractor_count = 4;
  cfg.noise_std = 0.02;
  FrameSequence a = synth_generate_clip(cfg, 9);
  FrameSequence b = synth_generate_clip(cfg, 9);
  FrameSequence c = synth_generate_clip(cfg, 10);
  bool same = true, diff = false;
  for (size_t k = 0; k < 10; ++k) {
    same = same && images_equal(a.frames[k], b.frames[k]) &&
           images_equal(a.masks[k], b.masks[k]);
    diff = diff || !images_equal(a.frames[k], c.frames[k]);
  }
  CHECK(same);
  CHECK(diff);
}

TEST_CASE("masks cover lane markings only; sky rows stay empty") {
  SyntheticSceneConfig cfg = base_config(5.0);
  FrameSequence seq = synth_generate_clip(cfg, 2);
  const Image& m = seq.masks[0];
  int64_t on = 0;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      CHECK((m.at(y, x) == 0 || m.at(y, x) == 255));
      if (m.at(y, x) == 255) {
        ++on;
        CHECK(y + 0.5 > cfg.horizon_row);  // never above the horizon
      }
    }
  CHECK(on > 20);  // the dashes are actually visible
}

TEST_CASE("distractors perturb the gray channel but never the mask") {
  SyntheticSceneConfig clean = base_config(5.0);
  SyntheticSceneConfig busy = clean;
  busy.distractor_count = 5;
  FrameSequence a = synth_generate_clip(clean, 4);
  FrameSequence b = synth_generate_clip(busy, 4);
  bool gray_diff = false;
  for (size_t k = 0; k < 10; ++k) {
    CHECK(images_equal(a.masks[k], b.masks[k]));
    gray_diff = gray_diff || !images_equal(a.frames[k], b.frames[k]);
  }
  CHECK(gray_diff);
}

// Recovers ego speed from the masks alone: each mask pixel's row maps back to
// a ground depth Z, the dash pattern is periodic in Z, and its phase advances
// with distance traveled. The first Fourier coefficient of the pixel depths
// tracks that phase shift.
static double mask_phase(const Image& m, const SyntheticSceneConfig& cfg) {
  const double k = m.height / 64.0;  // rendering scales with resolution
  const double f = cfg.focal_px * k, hor = cfg.horizon_row * k;
  const double period = cfg.dash_length + cfg.dash_gap;
  auto depth = [&](double row) { return f * cfg.camera_height / (row + 0.5 - hor); };
  std::complex<double> c{0, 0};
  // Integrate over exactly one period in depth so the square wave's first
  // Fourier coefficient carries the dash phase with no spectral leakage.
  const double z_lo = 4.0, z_hi = z_lo + period;
  for (int y = 1; y < m.height; ++y) {
    if (y + 0.5 <= hor) continue;
    double z0 = depth(y), z1 = depth(y - 1);  // depth slab this row spans
    z0 = std::max(z0, z_lo);
    z1 = std::min(z1, z_hi);
    if (z1 <= z0) continue;
    bool on = false;
    for (int x = 0; x < m.width; ++x) on = on || m.at(y, x) == 255;
    if (!on) continue;
    c += (z1 - z0) * std::polar(1.0, 2 * M_PI * (z0 + z1) / 2 / period);
  }
  return std::arg(c);
}

TEST_CASE("speed recovered from mask motion agrees within 5 percent") {
  const double v = 5.0;
  SyntheticSceneConfig cfg = base_config(v);
  cfg.output_size = 256;  // finer depth quantization for the estimate
  FrameSequence seq = synth_generate_clip(cfg, 6);
  const double period = cfg.dash_length + cfg.dash_gap;
  double total = 0;
  int pairs = 0;
  for (size_t k = 0; k + 1 < seq.size(); ++k) {
    double d = mask_phase(seq.masks[k], cfg) - mask_phase(seq.masks[k + 1], cfg);
    while (d > M_PI) d -= 2 * M_PI;
    while (d < -M_PI) d += 2 * M_PI;
    total += d * period / (2 * M_PI);  // phase decreases as distance grows
    ++pairs;
  }
  const double v_est = total / pairs * cfg.rate_hz;
  CHECK(std::abs(v_est - v) / v < 0.05);
}

TEST_CASE("export: manifest layout, splits, determinism, reload") {
  const fsys::path d1 = fsys::temp_directory_path() / "speednet_synth_a";
  const fsys::path d2 = fsys::temp_directory_path() / "speednet_synth_b";
  fsys::remove_all(d1);
  fsys::remove_all(d2);
  SyntheticSceneConfig cfg = base_config(5.0);
  cfg.distractor_count = 2;
  export_synthetic_dataset(d1.string(), cfg, 5, 2.0, 12.0, 0.2, 77, "pgm");
  export_synthetic_dataset(d2.string(), cfg, 5, 2.0, 12.0, 0.2, 77, "pgm");

  auto records = read_manifest((d1 / "manifest.csv").string());
  REQUIRE(records.size() == 50);  // 5 clips x 10 frames
  int test_rows = 0;
  for (const auto& r : records) {
    CHECK(r.speed_mps >= 2.0);
    CHECK(r.speed_mps <= 12.0);
    CHECK_FALSE(r.mask_path.empty());
    if (r.split == "test") ++test_rows;
  }
  CHECK(test_rows == 10);  // exactly the last clip
  CHECK(records.back().clip_id == "clip_0004");
  CHECK(records.back().split == "test");

  // per-clip constant speed
  for (size_t i = 1; i < records.size(); ++i)
    if (records[i].clip_id == records[i - 1].clip_id)
      CHECK(records[i].speed_mps == records[i - 1].speed_mps);

  // byte-identical across runs: manifest plus a sampled frame and mask
  auto slurp = [](const fsys::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
  };
  CHECK(slurp(d1 / "manifest.csv") == slurp(d2 / "manifest.csv"));
  CHECK(slurp(d1 / "frames" / "clip_0002_f005.pgm") ==
        slurp(d2 / "frames" / "clip_0002_f005.pgm"));
  CHECK(slurp(d1 / "masks" / "clip_0000_f000.pgm") ==
        slurp(d2 / "masks" / "clip_0000_f000.pgm"));

  // the exported set loads back through the generic manifest path
  auto clips = load_manifest_clips((d1 / "manifest.csv").string(), cfg.rate_hz);
  REQUIRE(clips.size() == 5);
  CHECK(clips[0].seq.size() == 10);
  CHECK(clips[0].seq.has_masks());
  clips[0].seq.validate();

  CHECK_THROWS_AS(export_synthetic_dataset(d1.string(), cfg, 2, 1, 2, 0, 1, "tiff"),
                  std::invalid_argument);
  fsys::remove_all(d1);
  fsys::remove_all(d2);
}
