#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "speednet/image.hpp"
#include "speednet/tensor.hpp"

namespace speednet {

namespace fs = std::filesystem;

// Ordered raw frames with synchronized timestamps and per-frame speeds.
struct FrameSequence {
  std::vector<Image> frames;
  std::vector<Image> masks;  // empty when no masks are available
  std::vector<int64_t> timestamps_us;
  std::vector<double> speeds;  // m/s
  double rate_hz = 0;

  bool has_masks() const { return !masks.empty(); }
  size_t size() const { return frames.size(); }

  void validate() const {
    if (timestamps_us.size() != frames.size() || speeds.size() != frames.size())
      throw std::invalid_argument("FrameSequence: frames/timestamps/speeds length mismatch");
    if (has_masks() && masks.size() != frames.size())
      throw std::invalid_argument("FrameSequence: masks length mismatch");
    for (size_t i = 1; i < timestamps_us.size(); ++i)
      if (timestamps_us[i] <= timestamps_us[i - 1])
        throw std::invalid_argument("FrameSequence: timestamps not strictly increasing");
    for (double s : speeds)
      if (s < 0) throw std::invalid_argument("FrameSequence: negative speed");
  }
};

// One training sample: preprocessed input block plus its speed label.
struct VideoClip {
  Tensor input;  // [c, n, 64, 64], pixels in [0,1], mask channel in {0,1}
  double label_speed = 0;  // m/s
  std::string source_id;
};

// Temporal windowing profile of a dataset family.
struct DatasetProfile {
  int64_t n_frames;
  int64_t label_frame;  // 1-based index within the window
  double window_s;
  double rate_hz;
};

inline DatasetProfile kitti_profile() { return {10, 10, 1.0, 10.0}; }
inline DatasetProfile nuimages_profile() { return {13, 7, 6.0, 2.0}; }

// ---- KITTI raw ----

// oxts record: lat lon alt roll pitch yaw vn ve vf ... ; speed is the
// horizontal norm of the north/east velocities.
inline double kitti_parse_oxts_speed(const std::string& record) {
  std::istringstream ss(record);
  std::vector<double> fields;
  double v;
  while (ss >> v) fields.push_back(v);
  if (fields.size() < 9)
    throw std::invalid_argument("oxts record has " + std::to_string(fields.size()) +
                                " fields, need >= 9");
  const double vn = fields[6], ve = fields[7];
  return std::sqrt(vn * vn + ve * ve);
}

// "2011-09-26 13:02:25.964389445" -> microseconds since epoch (UTC).
inline int64_t parse_kitti_timestamp(const std::string& line) {
  std::tm tm{};
  int y, mo, d, h, mi;
  double sec;
  if (std::sscanf(line.c_str(), "%d-%d-%d %d:%d:%lf", &y, &mo, &d, &h, &mi, &sec) != 6)
    throw std::invalid_argument("bad timestamp: " + line);
  tm.tm_year = y - 1900;
  tm.tm_mon = mo - 1;
  tm.tm_mday = d;
  tm.tm_hour = h;
  tm.tm_min = mi;
  tm.tm_sec = 0;
  const int64_t base = static_cast<int64_t>(timegm(&tm));
  return base * 1000000 + static_cast<int64_t>(std::llround(sec * 1e6));
}

// Loads image_03 frames, oxts speeds, and timestamps for one drive under the
// raw layout <root>/<date>/<date>_drive_<id>_sync/...
inline FrameSequence kitti_load_drive(const std::string& root,
                                      const std::string& drive_id) {
  // drive_id like "2011_09_26_drive_0001"
  const std::string date = drive_id.substr(0, 10);
  const fs::path base = fs::path(root) / date / (drive_id + "_sync");
  const fs::path img_dir = base / "image_03" / "data";
  const fs::path oxts_dir = base / "oxts" / "data";
  const fs::path ts_file = base / "oxts" / "timestamps.txt";
  if (!fs::is_directory(img_dir) || !fs::is_directory(oxts_dir) || !fs::exists(ts_file))
    throw std::runtime_error("kitti drive layout missing under " + base.string());

  std::vector<fs::path> img_files, oxts_files;
  for (const auto& e : fs::directory_iterator(img_dir)) img_files.push_back(e.path());
  for (const auto& e : fs::directory_iterator(oxts_dir)) oxts_files.push_back(e.path());
  std::sort(img_files.begin(), img_files.end());
  std::sort(oxts_files.begin(), oxts_files.end());
  if (img_files.size() != oxts_files.size())
    throw std::runtime_error("kitti drive " + drive_id + ": " +
                             std::to_string(img_files.size()) + " images vs " +
                             std::to_string(oxts_files.size()) + " oxts records");

  FrameSequence seq;
  seq.rate_hz = 10.0;
  std::ifstream ts(ts_file);
  std::string line;
  while (std::getline(ts, line))
    if (!line.empty()) seq.timestamps_us.push_back(parse_kitti_timestamp(line));
  if (seq.timestamps_us.size() != img_files.size())
    throw std::runtime_error("kitti drive " + drive_id + ": timestamp count mismatch");

  for (size_t i = 0; i < img_files.size(); ++i) {
    seq.frames.push_back(read_image(img_files[i].string()));
    std::ifstream of(oxts_files[i]);
    std::string rec;
    std::getline(of, rec);
    seq.speeds.push_back(kitti_parse_oxts_speed(rec));
  }
  seq.validate();
  return seq;
}

// Table of train/test drive assignments (City and Road categories).
inline std::map<std::string, std::string> load_split_table(const std::string& dataset) {
  if (dataset != "kitti")
    throw std::invalid_argument("unknown dataset for split table: " + dataset);
  std::map<std::string, std::string> t;
  auto add = [&](const char* date, std::initializer_list<const char*> ids,
                 const char* split) {
    for (const char* id : ids) t[std::string(date) + "_drive_" + id] = split;
  };
  // City
  add("2011_09_26",
      {"0002", "0005", "0009", "0011", "0013", "0014", "0048", "0051", "0056",
       "0059", "0084", "0091", "0095", "0096", "0104", "0106", "0113"},
      "train");
  add("2011_09_28", {"0001"}, "train");
  add("2011_09_29", {"0071"}, "train");
  add("2011_09_26", {"0001", "0117"}, "test");
  // Road
  add("2011_09_26", {"0015", "0027", "0028", "0029", "0032", "0052"}, "train");
  add("2011_09_29", {"0004", "0016", "0042", "0047"}, "train");
  add("2011_09_26", {"0070", "0101"}, "test");
  return t;
}

// ---- windowing and preprocessing ----

struct WindowRef {
  size_t start;        // first frame index
  double label_speed;  // speed at the window's label frame
};

// Sliding windows of n consecutive frames, each labeled with the speed of the
// stated 1-based label frame within the window.
inline std::vector<WindowRef> make_windows(const FrameSequence& seq, int64_t n,
                                           int64_t label_frame, int64_t stride = 1) {
  if (label_frame < 1 || label_frame > n)
    throw std::invalid_argument("make_windows: label_frame out of range");
  if (stride < 1) throw std::invalid_argument("make_windows: stride < 1");
  if (static_cast<int64_t>(seq.size()) < n)
    throw std::invalid_argument("make_windows: sequence of " +
                                std::to_string(seq.size()) + " frames shorter than n=" +
                                std::to_string(n));
  std::vector<WindowRef> out;
  for (size_t s = 0; s + static_cast<size_t>(n) <= seq.size();
       s += static_cast<size_t>(stride))
    out.push_back({s, seq.speeds[s + static_cast<size_t>(label_frame) - 1]});
  return out;
}

// Grayscale + bilinear resize to 64x64; masks resized nearest-neighbor then
// thresholded to {0,1}. Channel order is gray first, mask second.
inline Tensor preprocess_clip(const std::vector<Image>& frames,
                              const std::vector<Image>& masks, bool with_mask) {
  if (frames.empty()) throw std::invalid_argument("preprocess_clip: no frames");
  if (with_mask && masks.size() != frames.size())
    throw std::invalid_argument("preprocess_clip: masks required but missing");
  const int64_t n = static_cast<int64_t>(frames.size());
  const int64_t c = with_mask ? 2 : 1;
  std::vector<real> data(static_cast<size_t>(c * n * 64 * 64));
  for (int64_t k = 0; k < n; ++k) {
    const Image& f = frames[static_cast<size_t>(k)];
    auto gray = resize_bilinear(to_gray01(f), f.width, f.height, 64, 64);
    for (int64_t p = 0; p < 64 * 64; ++p)
      data[static_cast<size_t>(k * 64 * 64 + p)] = static_cast<real>(gray[p]);
    if (with_mask) {
      const Image& m = masks[static_cast<size_t>(k)];
      auto mk = resize_nearest(to_gray01(m), m.width, m.height, 64, 64);
      for (int64_t p = 0; p < 64 * 64; ++p)
        data[static_cast<size_t>((n + k) * 64 * 64 + p)] =
            mk[p] >= 0.5 ? real(1) : real(0);
    }
  }
  return Tensor::create({c, n, 64, 64}, data);
}

inline std::vector<VideoClip> build_clips(const FrameSequence& seq,
                                          const DatasetProfile& profile,
                                          bool with_mask, int64_t stride,
                                          const std::string& source_id) {
  auto windows = make_windows(seq, profile.n_frames, profile.label_frame, stride);
  std::vector<VideoClip> clips;
  clips.reserve(windows.size());
  for (const auto& w : windows) {
    std::vector<Image> fr(seq.frames.begin() + static_cast<long>(w.start),
                          seq.frames.begin() + static_cast<long>(w.start) +
                              profile.n_frames);
    std::vector<Image> mk;
    if (with_mask)
      mk.assign(seq.masks.begin() + static_cast<long>(w.start),
                seq.masks.begin() + static_cast<long>(w.start) + profile.n_frames);
    clips.push_back({preprocess_clip(fr, mk, with_mask), w.label_speed,
                     source_id + "@" + std::to_string(w.start)});
  }
  return clips;
}

// Drops near-stationary windows when the drive as a whole is stationary-heavy.
inline bool is_stationary_heavy(const FrameSequence& seq, double thr = 0.1,
                                double frac = 0.25) {
  if (seq.speeds.empty()) return false;
  size_t still = 0;
  for (double s : seq.speeds)
    if (s < thr) ++still;
  return static_cast<double>(still) / static_cast<double>(seq.speeds.size()) > frac;
}

inline void filter_stationary(std::vector<WindowRef>& windows, double thr = 0.1) {
  windows.erase(std::remove_if(windows.begin(), windows.end(),
                               [&](const WindowRef& w) { return w.label_speed < thr; }),
                windows.end());
}

// ---- decimation ----

// Resamples the whole stream at target_hz by nearest-timestamp selection.
inline FrameSequence resample_to_rate(const FrameSequence& seq, double target_hz) {
  if (seq.rate_hz < target_hz)
    throw std::invalid_argument("resample: source rate " + std::to_string(seq.rate_hz) +
                                " Hz below target " + std::to_string(target_hz) + " Hz");
  if (seq.size() == 0) throw std::invalid_argument("resample: empty sequence");
  FrameSequence out;
  out.rate_hz = target_hz;
  const int64_t t0 = seq.timestamps_us[0];
  const int64_t last = seq.timestamps_us.back();
  const double period_us = 1e6 / target_hz;
  for (int64_t k = 0;; ++k) {
    const int64_t ideal = t0 + static_cast<int64_t>(std::llround(k * period_us));
    if (ideal > last) break;
    auto it = std::lower_bound(seq.timestamps_us.begin(), seq.timestamps_us.end(), ideal);
    size_t idx = static_cast<size_t>(it - seq.timestamps_us.begin());
    if (idx == seq.size()) idx = seq.size() - 1;
    // prefer the earlier frame on exact ties
    if (idx > 0 && std::llabs(seq.timestamps_us[idx - 1] - ideal) <=
                       std::llabs(seq.timestamps_us[idx] - ideal))
      --idx;
    out.frames.push_back(seq.frames[idx]);
    if (seq.has_masks()) out.masks.push_back(seq.masks[idx]);
    out.timestamps_us.push_back(seq.timestamps_us[idx]);
    out.speeds.push_back(seq.speeds[idx]);
  }
  return out;
}

// Exactly n frames spanning window_s seconds at target_hz, taken from the
// start of the sequence by nearest-timestamp selection.
inline FrameSequence decimate(const FrameSequence& seq, double target_hz,
                              double window_s, int64_t n) {
  if (seq.rate_hz < target_hz)
    throw std::invalid_argument("decimate: source rate below target rate");
  if (std::abs((static_cast<double>(n) - 1) / target_hz - window_s) > 1e-9)
    throw std::invalid_argument("decimate: n frames at target rate do not span window");
  const int64_t t0 = seq.timestamps_us[0];
  const int64_t need = t0 + static_cast<int64_t>(std::llround(window_s * 1e6));
  if (seq.timestamps_us.back() < need)
    throw std::invalid_argument("decimate: sequence shorter than the requested window");
  FrameSequence full = resample_to_rate(seq, target_hz);
  if (static_cast<int64_t>(full.size()) < n)
    throw std::invalid_argument("decimate: insufficient frames after resampling");
  FrameSequence out;
  out.rate_hz = target_hz;
  out.frames.assign(full.frames.begin(), full.frames.begin() + n);
  if (full.has_masks()) out.masks.assign(full.masks.begin(), full.masks.begin() + n);
  out.timestamps_us.assign(full.timestamps_us.begin(), full.timestamps_us.begin() + n);
  out.speeds.assign(full.speeds.begin(), full.speeds.begin() + n);
  return out;
}

// ---- manifest CSV ----

struct ManifestRecord {
  std::string clip_id;
  int64_t frame_index;
  std::string image_path;
  std::string mask_path;  // may be empty
  int64_t timestamp_us;
  double speed_mps;
  std::string split;  // train | test
};

inline const char* kManifestHeader =
    "clip_id,frame_index,image_path,mask_path,timestamp_us,speed_mps,split";

inline void write_manifest(const std::vector<ManifestRecord>& records,
                           const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write manifest: " + path);
  f << kManifestHeader << "\n";
  for (const auto& r : records) {
    std::ostringstream row;
    row.precision(17);
    row << r.clip_id << ',' << r.frame_index << ',' << r.image_path << ','
        << r.mask_path << ',' << r.timestamp_us << ',' << r.speed_mps << ','
        << r.split;
    f << row.str() << "\n";
  }
}

inline std::vector<ManifestRecord> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read manifest: " + path);
  std::string line;
  if (!std::getline(f, line) || line != kManifestHeader)
    throw std::runtime_error("bad manifest header in " + path);
  std::vector<ManifestRecord> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    ManifestRecord r;
    std::string fi, ts, sp;
    if (!std::getline(ss, r.clip_id, ',') || !std::getline(ss, fi, ',') ||
        !std::getline(ss, r.image_path, ',') || !std::getline(ss, r.mask_path, ',') ||
        !std::getline(ss, ts, ',') || !std::getline(ss, sp, ',') ||
        !std::getline(ss, r.split))
      throw std::runtime_error("bad manifest row: " + line);
    r.frame_index = std::stoll(fi);
    r.timestamp_us = std::stoll(ts);
    r.speed_mps = std::stod(sp);
    out.push_back(std::move(r));
  }
  return out;
}

struct ManifestClip {
  std::string clip_id;
  std::string split;
  FrameSequence seq;
};

// Groups manifest rows into per-clip sequences; paths resolve relative to the
// manifest's directory. frame_index must be contiguous from 0 per clip.
inline std::vector<ManifestClip> load_manifest_clips(const std::string& manifest_path,
                                                     double rate_hz) {
  auto records = read_manifest(manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<ManifestClip> clips;
  std::map<std::string, size_t> index;
  for (const auto& r : records) {
    auto [it, fresh] = index.try_emplace(r.clip_id, clips.size());
    if (fresh) clips.push_back({r.clip_id, r.split, {}});
    ManifestClip& c = clips[it->second];
    if (r.frame_index != static_cast<int64_t>(c.seq.frames.size()))
      throw std::runtime_error("manifest clip " + r.clip_id +
                               ": frame_index not contiguous");
    c.seq.frames.push_back(read_image((base / r.image_path).string()));
    if (!r.mask_path.empty())
      c.seq.masks.push_back(read_image((base / r.mask_path).string()));
    c.seq.timestamps_us.push_back(r.timestamp_us);
    c.seq.speeds.push_back(r.speed_mps);
    c.seq.rate_hz = rate_hz;
  }
  for (auto& c : clips) c.seq.validate();
  return clips;
}

}  // namespace speednet
