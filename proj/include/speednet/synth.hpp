#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "speednet/data.hpp"
#include "speednet/rng.hpp"

namespace speednet {

// Dashed-lane road scene rendered under a pinhole ground-plane projection.
// Lane dashes advance with the ego speed profile; distractor rectangles move
// with independent velocities and are drawn only into the gray channel.
struct SyntheticSceneConfig {
  std::function<double(double)> speed_profile;  // t [s] -> m/s, within [0, 20]
  // lane geometry (meters)
  double lane_width = 3.5;
  double dash_length = 3.0;
  double dash_gap = 4.5;
  double line_half_width = 0.12;
  // camera
  double camera_height = 1.5;
  double focal_px = 96.0;       // pixels, relative to output size below
  double horizon_row = 20.0;    // row of the horizon line
  // distractors
  int distractor_count = 0;
  double distractor_vmin = 0.0;  // absolute velocities, m/s
  double distractor_vmax = 15.0;
  // noise
  double noise_std = 0.0;
  // sampling
  int frame_count = 10;
  double rate_hz = 10.0;
  int output_size = 64;

  static constexpr double kMaxSpeed = 20.0;

  void validate() const {
    if (!speed_profile) throw std::invalid_argument("synth: missing speed profile");
    if (frame_count < 1 || rate_hz <= 0 || output_size < 8)
      throw std::invalid_argument("synth: bad sampling parameters");
    for (int k = 0; k < frame_count; ++k) {
      const double v = speed_profile(k / rate_hz);
      if (v < 0 || v > kMaxSpeed)
        throw std::invalid_argument("synth: speed profile leaves [0, " +
                                    std::to_string(kMaxSpeed) + "] m/s");
    }
    if (distractor_vmin < 0 || distractor_vmax < distractor_vmin)
      throw std::invalid_argument("synth: bad distractor velocity range");
  }
};

namespace synth_detail {

constexpr double kZNear = 2.0;
constexpr double kZFar = 60.0;

struct Distractor {
  double x;        // lateral ground position, m
  double z0;       // initial depth, m
  double vel;      // absolute forward velocity, m/s
  double shade;    // gray fill value
  double width;    // m
  double height;   // m
};

}  // namespace synth_detail

// Ego distance traveled by time t under the profile, by fine trapezoid steps.
inline double synth_distance_at(const SyntheticSceneConfig& cfg, double t) {
  const int steps = std::max(1, static_cast<int>(std::ceil(t * 100)));
  const double dt = t / steps;
  double s = 0;
  for (int i = 0; i < steps; ++i)
    s += 0.5 * (cfg.speed_profile(i * dt) + cfg.speed_profile((i + 1) * dt)) * dt;
  return s;
}

inline FrameSequence synth_generate_clip(const SyntheticSceneConfig& cfg,
                                         uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  Rng noise_rng = rng.split(1);
  Rng dis_rng = rng.split(2);

  std::vector<synth_detail::Distractor> distractors;
  for (int i = 0; i < cfg.distractor_count; ++i) {
    synth_detail::Distractor d;
    d.x = dis_rng.uniform(-1.5 * cfg.lane_width, 1.5 * cfg.lane_width);
    d.z0 = dis_rng.uniform(synth_detail::kZNear + 3, synth_detail::kZFar - 10);
    d.vel = dis_rng.uniform(cfg.distractor_vmin, cfg.distractor_vmax);
    d.shade = dis_rng.uniform(0.45, 0.85);
    d.width = dis_rng.uniform(1.5, 2.2);
    d.height = dis_rng.uniform(1.2, 1.8);
    distractors.push_back(d);
  }

  const int N = cfg.output_size;
  const double cx = N / 2.0;
  const double f = cfg.focal_px * N / 64.0;  // focal scales with resolution
  const double hor = cfg.horizon_row * N / 64.0;
  const double period = cfg.dash_length + cfg.dash_gap;

  FrameSequence seq;
  seq.rate_hz = cfg.rate_hz;

  auto lane_hit = [&](double X, double Z, double s) {
    // two dashed lines at the ego lane edges; dash phase advances with s
    for (double xl : {-cfg.lane_width / 2, cfg.lane_width / 2}) {
      if (std::abs(X - xl) > cfg.line_half_width) continue;
      double phase = std::fmod(Z + s, period);
      if (phase < 0) phase += period;
      if (phase < cfg.dash_length) return true;
    }
    return false;
  };

  for (int k = 0; k < cfg.frame_count; ++k) {
    const double t = k / cfg.rate_hz;
    const double s = synth_distance_at(cfg, t);
    Image gray = Image::make(N, N, 1);
    Image mask = Image::make(N, N, 1);

    for (int y = 0; y < N; ++y) {
      for (int x = 0; x < N; ++x) {
        double g;
        bool m = false;
        if (y + 0.5 <= hor + 0.5) {
          g = 0.55;  // sky
        } else {
          g = 0.25;  // road
          // 2x2 supersample for the gray channel, center sample for the mask
          int hits = 0;
          for (double dy : {0.25, 0.75})
            for (double dx : {0.25, 0.75}) {
              const double v = y + dy, u = x + dx;
              if (v <= hor + 1e-9) continue;
              const double Z = f * cfg.camera_height / (v - hor);
              if (Z > synth_detail::kZFar || Z < synth_detail::kZNear) continue;
              const double X = (u - cx) * Z / f;
              if (lane_hit(X, Z, s)) ++hits;
            }
          g += (0.95 - 0.25) * hits / 4.0;
          const double vc = y + 0.5, uc = x + 0.5;
          if (vc > hor + 1e-9) {
            const double Z = f * cfg.camera_height / (vc - hor);
            if (Z <= synth_detail::kZFar && Z >= synth_detail::kZNear) {
              const double X = (uc - cx) * Z / f;
              m = lane_hit(X, Z, s);
            }
          }
        }
        gray.at(y, x) = static_cast<uint8_t>(std::lround(std::clamp(g, 0.0, 1.0) * 255));
        mask.at(y, x) = m ? 255 : 0;
      }
    }

    // distractors occlude the gray channel only
    for (const auto& d : distractors) {
      double z = d.z0 + d.vel * t - s;
      // wrap into the visible depth band so they stay in the scene
      const double band = synth_detail::kZFar - synth_detail::kZNear;
      z = synth_detail::kZNear + std::fmod(std::fmod(z - synth_detail::kZNear, band) + band, band);
      const double vb = hor + f * cfg.camera_height / z;          // ground contact row
      const double vt = vb - f * d.height / z;
      const double ul = cx + f * (d.x - d.width / 2) / z;
      const double ur = cx + f * (d.x + d.width / 2) / z;
      const int y0 = std::max(0, static_cast<int>(std::ceil(vt - 0.5)));
      const int y1 = std::min(N - 1, static_cast<int>(std::floor(vb - 0.5)));
      const int x0 = std::max(0, static_cast<int>(std::ceil(ul - 0.5)));
      const int x1 = std::min(N - 1, static_cast<int>(std::floor(ur - 0.5)));
      const uint8_t shade = static_cast<uint8_t>(std::lround(d.shade * 255));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) gray.at(y, x) = shade;
    }

    if (cfg.noise_std > 0) {
      for (auto& px : gray.pixels) {
        const double v = px / 255.0 + noise_rng.normal(0.0, cfg.noise_std);
        px = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255));
      }
    }

    seq.frames.push_back(std::move(gray));
    seq.masks.push_back(std::move(mask));
    seq.timestamps_us.push_back(static_cast<int64_t>(std::llround(t * 1e6)) + 1000000);
    seq.speeds.push_back(cfg.speed_profile(t));
  }
  seq.validate();
  return seq;
}

// Writes clips as frame/mask image files plus a manifest CSV, so synthetic
// data flows through the same loading path as real datasets.
inline void export_synthetic_dataset(const std::string& out_dir,
                                     const SyntheticSceneConfig& base_cfg,
                                     int n_clips, double speed_min,
                                     double speed_max, double test_fraction,
                                     uint64_t seed,
                                     const std::string& format = "png") {
  if (format != "png" && format != "pgm")
    throw std::invalid_argument("export: format must be png or pgm");
  fs::create_directories(fs::path(out_dir) / "frames");
  fs::create_directories(fs::path(out_dir) / "masks");
  Rng rng(seed);
  std::vector<ManifestRecord> records;
  const int n_test = static_cast<int>(std::lround(n_clips * test_fraction));
  for (int c = 0; c < n_clips; ++c) {
    SyntheticSceneConfig cfg = base_cfg;
    Rng crng = rng.split(static_cast<uint64_t>(c));
    const double v = crng.uniform(speed_min, speed_max);
    cfg.speed_profile = [v](double) { return v; };
    FrameSequence seq = synth_generate_clip(cfg, crng.next_u64());
    char clip_id[32];
    std::snprintf(clip_id, sizeof clip_id, "clip_%04d", c);
    const std::string split = c >= n_clips - n_test ? "test" : "train";
    for (size_t k = 0; k < seq.size(); ++k) {
      char name[64];
      std::snprintf(name, sizeof name, "%s_f%03zu.%s", clip_id, k, format.c_str());
      const std::string img_rel = std::string("frames/") + name;
      const std::string msk_rel = std::string("masks/") + name;
      write_image(seq.frames[k], (fs::path(out_dir) / img_rel).string());
      write_image(seq.masks[k], (fs::path(out_dir) / msk_rel).string());
      records.push_back({clip_id, static_cast<int64_t>(k), img_rel, msk_rel,
                         seq.timestamps_us[k], seq.speeds[k], split});
    }
  }
  write_manifest(records, (fs::path(out_dir) / "manifest.csv").string());
}

}  // namespace speednet
