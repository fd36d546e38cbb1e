#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "vf/errors.hpp"
#include "vf/random.hpp"
#include "vf/tensor.hpp"
#include "vf/threads.hpp"

namespace vf {

// ---------------------------------------------------------------------------
// clip representation and binary format
// ---------------------------------------------------------------------------

struct ClipGeometry {
  int64_t frames = 0;    // T
  int64_t channels = 0;  // C
  int64_t height = 0;    // H
  int64_t width = 0;     // W

  int64_t frame_size() const { return channels * height * width; }
  int64_t numel() const { return frames * frame_size(); }
  bool operator==(const ClipGeometry&) const = default;

  std::string str() const {
    return std::to_string(frames) + "x" + std::to_string(channels) + "x" +
           std::to_string(height) + "x" + std::to_string(width);
  }
};

// One video sample: frame stack [T,C,H,W] with scalars in [0,1] and a binary
// label (0 = real, 1 = fake).
struct Clip {
  ClipGeometry geom;
  std::vector<float> data;
  int label = 0;
  std::string source_id;

  void validate() const {
    if (geom.frames < 1) throw DataError("clip " + source_id + ": no frames");
    if (label != 0 && label != 1)
      throw DataError("clip " + source_id + ": label " + std::to_string(label) + " not in {0,1}");
    if (static_cast<int64_t>(data.size()) != geom.numel())
      throw DataError("clip " + source_id + ": data size does not match geometry " + geom.str());
    for (float v : data)
      if (!(v >= 0.0f && v <= 1.0f))
        throw DataError("clip " + source_id + ": value " + std::to_string(v) + " outside [0,1]");
  }

  float& at(int64_t t, int64_t c, int64_t y, int64_t x) {
    return data[((t * geom.channels + c) * geom.height + y) * geom.width + x];
  }
  float at(int64_t t, int64_t c, int64_t y, int64_t x) const {
    return data[((t * geom.channels + c) * geom.height + y) * geom.width + x];
  }
};

constexpr uint32_t kClipVersion = 1;

namespace detail {

inline void put_u32(std::ofstream& f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  f.write(reinterpret_cast<char*>(b), 4);
}

inline uint32_t get_u32(std::istream& f, const std::string& what) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw DataError("corrupt header in " + what);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace detail

// Binary layout: "VFCL" | u32 version | u32 T,C,H,W | float32 raw scalars,
// all little-endian.
inline void write_clip(const std::string& path, const Clip& clip) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write clip file: " + path);
  f.write("VFCL", 4);
  detail::put_u32(f, kClipVersion);
  detail::put_u32(f, static_cast<uint32_t>(clip.geom.frames));
  detail::put_u32(f, static_cast<uint32_t>(clip.geom.channels));
  detail::put_u32(f, static_cast<uint32_t>(clip.geom.height));
  detail::put_u32(f, static_cast<uint32_t>(clip.geom.width));
  f.write(reinterpret_cast<const char*>(clip.data.data()),
          static_cast<std::streamsize>(clip.data.size() * sizeof(float)));
  if (!f) throw IoError("short write to clip file: " + path);
}

inline Clip read_clip(const std::string& path, int label = 0) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("missing clip file: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "VFCL", 4) != 0)
    throw DataError("corrupt header (bad magic) in clip file: " + path);
  uint32_t version = detail::get_u32(f, path);
  if (version != kClipVersion)
    throw DataError("unsupported clip version " + std::to_string(version) + " in " + path);
  Clip clip;
  clip.geom.frames = detail::get_u32(f, path);
  clip.geom.channels = detail::get_u32(f, path);
  clip.geom.height = detail::get_u32(f, path);
  clip.geom.width = detail::get_u32(f, path);
  if (clip.geom.frames < 1 || clip.geom.channels < 1 || clip.geom.height < 1 ||
      clip.geom.width < 1 || clip.geom.numel() > (int64_t(1) << 32))
    throw DataError("corrupt header (implausible geometry " + clip.geom.str() + ") in " + path);
  clip.data.resize(clip.geom.numel());
  f.read(reinterpret_cast<char*>(clip.data.data()),
         static_cast<std::streamsize>(clip.data.size() * sizeof(float)));
  if (f.gcount() != static_cast<std::streamsize>(clip.data.size() * sizeof(float)))
    throw DataError("corrupt header or truncated data in clip file: " + path);
  clip.label = label;
  clip.source_id = path;
  clip.validate();
  return clip;
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

constexpr uint32_t kManifestVersion = 1;

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  int label = 0;
  std::string split;  // train | val | test
};

struct DatasetManifest {
  uint32_t version = kManifestVersion;
  ClipGeometry geom;
  std::vector<ManifestEntry> entries;
  std::string base_dir;  // directory of the manifest file; not serialized

  void validate() const {
    std::vector<std::string> paths;
    for (const auto& e : entries) {
      if (e.label != 0 && e.label != 1)
        throw DataError("manifest entry " + e.path + ": label not in {0,1}");
      if (e.split != "train" && e.split != "val" && e.split != "test")
        throw DataError("manifest entry " + e.path + ": unknown split tag '" + e.split + "'");
      paths.push_back(e.path);
    }
    std::sort(paths.begin(), paths.end());
    auto dup = std::adjacent_find(paths.begin(), paths.end());
    if (dup != paths.end()) throw DataError("manifest lists path twice: " + *dup);
  }

  std::vector<int64_t> split_indices(const std::string& split) const {
    std::vector<int64_t> idx;
    for (size_t i = 0; i < entries.size(); ++i)
      if (entries[i].split == split) idx.push_back(static_cast<int64_t>(i));
    return idx;
  }
};

// Line-oriented text: a version line, a geometry line, then
// path<TAB>label<TAB>split per clip.
inline void save_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write manifest: " + path);
  f << "vfmanifest\t" << m.version << "\n";
  f << "geometry\t" << m.geom.frames << "\t" << m.geom.channels << "\t" << m.geom.height << "\t"
    << m.geom.width << "\n";
  for (const auto& e : m.entries) f << e.path << "\t" << e.label << "\t" << e.split << "\n";
  if (!f) throw IoError("short write to manifest: " + path);
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("missing manifest file: " + path);
  DatasetManifest m;
  m.base_dir = std::filesystem::path(path).parent_path().string();
  std::string line;
  if (!std::getline(f, line)) throw DataError("corrupt header: empty manifest " + path);
  {
    std::istringstream is(line);
    std::string tag;
    uint32_t version = 0;
    is >> tag >> version;
    if (tag != "vfmanifest") throw DataError("corrupt header (not a manifest): " + path);
    if (version != kManifestVersion)
      throw DataError("manifest version mismatch: file has " + std::to_string(version) +
                      ", supported is " + std::to_string(kManifestVersion));
    m.version = version;
  }
  if (!std::getline(f, line)) throw DataError("corrupt header: manifest missing geometry line");
  {
    std::istringstream is(line);
    std::string tag;
    is >> tag >> m.geom.frames >> m.geom.channels >> m.geom.height >> m.geom.width;
    if (tag != "geometry" || !is || m.geom.numel() < 1)
      throw DataError("corrupt geometry line in manifest: " + path);
  }
  int lineno = 2;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    ManifestEntry e;
    size_t t1 = line.find('\t');
    size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      throw DataError("manifest line " + std::to_string(lineno) + " is not path<TAB>label<TAB>split");
    e.path = line.substr(0, t1);
    e.label = std::stoi(line.substr(t1 + 1, t2 - t1 - 1));
    e.split = line.substr(t2 + 1);
    m.entries.push_back(std::move(e));
  }
  m.validate();
  return m;
}

// Manifest plus clips loaded into memory (desk-scale datasets fit easily).
struct Dataset {
  DatasetManifest manifest;
  std::vector<Clip> clips;  // aligned with manifest.entries

  std::vector<int64_t> split_indices(const std::string& split) const {
    return manifest.split_indices(split);
  }
};

// Loads every clip; validates per-clip geometry against the manifest.
inline Dataset load_dataset(const std::string& manifest_path) {
  Dataset ds;
  ds.manifest = load_manifest(manifest_path);
  ds.clips.resize(ds.manifest.entries.size());
  std::vector<std::string> errors(ds.clips.size());
  parallel_for(static_cast<int64_t>(ds.clips.size()), [&](int64_t i) {
    const auto& e = ds.manifest.entries[i];
    std::string full = ds.manifest.base_dir.empty()
                           ? e.path
                           : (std::filesystem::path(ds.manifest.base_dir) / e.path).string();
    try {
      ds.clips[i] = read_clip(full, e.label);
      if (!(ds.clips[i].geom == ds.manifest.geom))
        errors[i] = "geometry mismatch for " + e.path + ": clip is " + ds.clips[i].geom.str() +
                    ", manifest says " + ds.manifest.geom.str();
    } catch (const Error& err) {
      errors[i] = err.what();
    }
  });
  for (const auto& err : errors)
    if (!err.empty()) throw DataError(err);
  return ds;
}

// ---------------------------------------------------------------------------
// frame sampling and augmentation
// ---------------------------------------------------------------------------

// Evenly spaced indices with both endpoints included:
// idx_i = floor(i * (F-1) / (n-1)).
inline std::vector<int64_t> sample_frames(int64_t total_frames, int64_t n,
                                          const std::string& clip_id = "") {
  if (n < 1 || n > total_frames)
    throw DataError("cannot sample " + std::to_string(n) + " frames from " +
                    std::to_string(total_frames) +
                    (clip_id.empty() ? "" : " (clip " + clip_id + ")"));
  if (n == 1) return {0};
  std::vector<int64_t> idx(n);
  for (int64_t i = 0; i < n; ++i) idx[i] = i * (total_frames - 1) / (n - 1);
  return idx;
}

enum class Flip { None, Horizontal, Vertical };

// The same flip applies to every frame of the clip; per-frame flips would
// fabricate temporal inconsistency indistinguishable from the flicker signal.
inline void apply_flip(Clip& clip, Flip flip) {
  if (flip == Flip::None) return;
  const auto& g = clip.geom;
  for (int64_t t = 0; t < g.frames; ++t)
    for (int64_t c = 0; c < g.channels; ++c)
      for (int64_t y = 0; y < g.height; ++y)
        for (int64_t x = 0; x < g.width; ++x) {
          if (flip == Flip::Horizontal) {
            int64_t mx = g.width - 1 - x;
            if (x < mx) std::swap(clip.at(t, c, y, x), clip.at(t, c, y, mx));
          } else {
            int64_t my = g.height - 1 - y;
            if (y < my) std::swap(clip.at(t, c, y, x), clip.at(t, c, my, x));
          }
        }
}

// Horizontal, vertical or no flip with probability 1/3 each.
inline Flip flip_augment(Clip& clip, Rng& rng) {
  switch (rng.below(3)) {
    case 0: return Flip::None;
    case 1: apply_flip(clip, Flip::Horizontal); return Flip::Horizontal;
    default: apply_flip(clip, Flip::Vertical); return Flip::Vertical;
  }
}

// ---------------------------------------------------------------------------
// synthetic deepfake-proxy generator
// ---------------------------------------------------------------------------

enum class ArtifactKind { Seam, Flicker, Both };

inline const char* artifact_name(ArtifactKind k) {
  switch (k) {
    case ArtifactKind::Seam: return "seam";
    case ArtifactKind::Flicker: return "flicker";
    default: return "both";
  }
}

inline ArtifactKind parse_artifact(const std::string& s) {
  if (s == "seam") return ArtifactKind::Seam;
  if (s == "flicker") return ArtifactKind::Flicker;
  if (s == "both") return ArtifactKind::Both;
  throw ConfigError("unknown artifact kind '" + s + "' (expected seam|flicker|both)");
}

struct SynthSpec {
  int64_t count = 160;
  double fake_fraction = 0.5;
  ArtifactKind artifact = ArtifactKind::Both;
  double strength = 1.0;          // artifact visibility dial, (0, 1]
  double motion_amplitude = 2.0;  // texture translation in pixels
  double noise_level = 0.02;      // iid per-pixel noise floor
  uint64_t seed = 0;
  ClipGeometry geom{30, 3, 64, 64};
  std::array<double, 3> ratios{0.8, 0.1, 0.1};

  void validate() const {
    if (count < 4) throw ConfigError("synthetic dataset needs at least 4 clips");
    if (!(fake_fraction > 0.0 && fake_fraction < 1.0))
      throw ConfigError("fake fraction must lie in (0,1)");
    if (!(strength > 0.0 && strength <= 1.0))
      throw ConfigError("artifact strength must lie in (0,1], got " + std::to_string(strength));
    if (motion_amplitude < 0.0 || noise_level < 0.0)
      throw ConfigError("motion amplitude and noise level must be >= 0");
    if (geom.frames < 2 || geom.channels < 1 || geom.height < 8 || geom.width < 8)
      throw ConfigError("synthetic geometry too small: " + geom.str());
  }
};

// Central face ellipse shared by the generator and the pixel-statistic
// baseline. Fixed per geometry so the statistic needs no side information.
inline bool in_face(const ClipGeometry& g, int64_t y, int64_t x) {
  double cx = 0.5 * (g.width - 1), cy = 0.5 * (g.height - 1);
  double rx = 0.32 * g.width, ry = 0.40 * g.height;
  double ex = (x - cx) / rx, ey = (y - cy) / ry;
  return ex * ex + ey * ey <= 1.0;
}

namespace detail {

struct TextureWave {
  double fx, fy, phase, amp;
};

// Band-limited moving texture: a handful of low-frequency plane waves
// evaluated at translated coordinates, so motion is exact and smooth.
inline double texture_value(const std::vector<TextureWave>& waves, double x, double y) {
  double v = 0.0;
  for (const auto& w : waves) v += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
  return v;
}

}  // namespace detail

// Deterministic synthetic clip. Real clips are translating band-limited
// textures with a static elliptical face region of its own (brighter, lower
// contrast) texture. Fakes additionally carry a seam (static rectangle of
// boosted contrast inside the face: spatial artifact) and/or flicker
// (iid per-frame brightness jitter inside the face: temporal artifact).
inline Clip synth_clip(const SynthSpec& spec, int64_t index, int label) {
  const ClipGeometry& g = spec.geom;
  Rng rng(Rng::derive(spec.seed, static_cast<uint64_t>(index)));

  std::vector<std::vector<detail::TextureWave>> bg(g.channels), face(g.channels);
  for (int64_t c = 0; c < g.channels; ++c) {
    for (int k = 0; k < 5; ++k) {
      double f = rng.uniform(0.5, 3.0) * 2.0 * M_PI;
      double ang = rng.uniform(0.0, 2.0 * M_PI);
      bg[c].push_back({f * std::cos(ang) / g.width, f * std::sin(ang) / g.height,
                       rng.uniform(0.0, 2.0 * M_PI), 0.28 / (k + 1)});
    }
    for (int k = 0; k < 4; ++k) {
      double f = rng.uniform(0.5, 2.0) * 2.0 * M_PI;
      double ang = rng.uniform(0.0, 2.0 * M_PI);
      face[c].push_back({f * std::cos(ang) / g.width, f * std::sin(ang) / g.height,
                         rng.uniform(0.0, 2.0 * M_PI), 0.13 / (k + 1)});
    }
  }
  double motion_phase_x = rng.uniform(0.0, 2.0 * M_PI);
  double motion_phase_y = rng.uniform(0.0, 2.0 * M_PI);
  double motion_period = rng.uniform(0.6, 1.4) * g.frames;

  // seam rectangle, fixed relative to the face
  double cx = 0.5 * (g.width - 1), cy = 0.5 * (g.height - 1);
  double seam_hw = 0.18 * g.width, seam_hh = 0.26 * g.height;
  bool with_seam = label == 1 && (spec.artifact == ArtifactKind::Seam ||
                                  spec.artifact == ArtifactKind::Both);
  bool with_flicker = label == 1 && (spec.artifact == ArtifactKind::Flicker ||
                                     spec.artifact == ArtifactKind::Both);

  std::vector<double> flicker(g.frames, 1.0);
  if (with_flicker) {
    for (int64_t t = 0; t < g.frames; ++t)
      flicker[t] = 1.0 + spec.strength * 0.22 * rng.uniform(-1.0, 1.0);
  }

  Clip clip;
  clip.geom = g;
  clip.label = label;
  clip.source_id = "synth-" + std::to_string(index);
  clip.data.resize(g.numel());
  for (int64_t t = 0; t < g.frames; ++t) {
    double dx = spec.motion_amplitude * std::sin(2.0 * M_PI * t / motion_period + motion_phase_x);
    double dy = spec.motion_amplitude * std::cos(2.0 * M_PI * t / motion_period + motion_phase_y);
    for (int64_t c = 0; c < g.channels; ++c)
      for (int64_t y = 0; y < g.height; ++y)
        for (int64_t x = 0; x < g.width; ++x) {
          double v;
          if (in_face(g, y, x)) {
            v = 0.62 + detail::texture_value(face[c], x + dx, y + dy);
            if (with_seam && std::abs(x - cx) <= seam_hw && std::abs(y - cy) <= seam_hh) {
              double edge_x = seam_hw - std::abs(x - cx);
              double edge_y = seam_hh - std::abs(y - cy);
              double blend = std::min(1.0, 0.6 * std::min(edge_x, edge_y));
              v = 0.62 + (v - 0.62) * (1.0 + blend * 0.9 * spec.strength) +
                  blend * 0.07 * spec.strength;
            }
            if (with_flicker) v *= flicker[t];
          } else {
            v = 0.45 + detail::texture_value(bg[c], x + dx, y + dy);
          }
          v += spec.noise_level * rng.uniform(-1.0, 1.0);
          clip.at(t, c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
  }
  return clip;
}

// Label-stratified shuffle split; deterministic under seed. Ratios must sum
// to 1 and every split must receive at least one clip per run requirement.
inline void split_dataset(DatasetManifest& m, std::array<double, 3> ratios, uint64_t seed) {
  double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  const char* names[3] = {"train", "val", "test"};
  for (int label = 0; label <= 1; ++label) {
    std::vector<int64_t> idx;
    for (size_t i = 0; i < m.entries.size(); ++i)
      if (m.entries[i].label == label) idx.push_back(static_cast<int64_t>(i));
    if (idx.empty()) continue;
    Rng rng(Rng::derive(seed, 0xa11 + label));
    rng.shuffle(idx.begin(), idx.end());
    int64_t n = static_cast<int64_t>(idx.size());
    // largest-remainder apportionment
    std::array<int64_t, 3> counts{};
    std::array<double, 3> rem{};
    int64_t assigned = 0;
    for (int s = 0; s < 3; ++s) {
      double exact = ratios[s] * n;
      counts[s] = static_cast<int64_t>(exact);
      rem[s] = exact - counts[s];
      assigned += counts[s];
    }
    while (assigned < n) {
      int best = 0;
      for (int s = 1; s < 3; ++s)
        if (rem[s] > rem[best]) best = s;
      ++counts[best];
      rem[best] = -1;
      ++assigned;
    }
    int64_t at = 0;
    for (int s = 0; s < 3; ++s)
      for (int64_t i = 0; i < counts[s]; ++i) m.entries[idx[at++]].split = names[s];
  }
  for (const char* name : names)
    if (m.split_indices(name).empty())
      throw DataError(std::string("split '") + name +
                      "' received no clips; dataset too small for stratified split");
}

// Generates clips + manifest under out_dir. Same spec -> byte-identical
// output.
inline DatasetManifest synth_generate(const SynthSpec& spec, const std::string& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());

  int64_t n_fake = std::llround(spec.count * spec.fake_fraction);
  if (n_fake < 1 || n_fake >= spec.count)
    throw ConfigError("fake fraction leaves an empty class for count " +
                      std::to_string(spec.count));

  DatasetManifest m;
  m.geom = spec.geom;
  m.base_dir = out_dir;
  for (int64_t i = 0; i < spec.count; ++i) {
    int label = i < n_fake ? 1 : 0;
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%05d.vfcl", static_cast<int>(i));
    m.entries.push_back({name, label, "train"});
  }
  split_dataset(m, spec.ratios, spec.seed);

  std::vector<Clip> clips(spec.count);
  parallel_for(spec.count, [&](int64_t i) {
    clips[i] = synth_clip(spec, i, m.entries[i].label);
  });
  for (int64_t i = 0; i < spec.count; ++i) {
    auto path = std::filesystem::path(out_dir) / m.entries[i].path;
    write_clip(path.string(), clips[i]);
  }
  save_manifest((std::filesystem::path(out_dir) / "manifest.tsv").string(), m);
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// pixel-statistic baseline
// ---------------------------------------------------------------------------

// Mean over face-region pixels of the per-pixel temporal variance. Flicker
// breaks temporal coherence inside the face, which this measures directly.
inline double face_temporal_variance(const Clip& clip) {
  const ClipGeometry& g = clip.geom;
  double acc = 0.0;
  int64_t count = 0;
  for (int64_t c = 0; c < g.channels; ++c)
    for (int64_t y = 0; y < g.height; ++y)
      for (int64_t x = 0; x < g.width; ++x) {
        if (!in_face(g, y, x)) continue;
        double mean = 0.0;
        for (int64_t t = 0; t < g.frames; ++t) mean += clip.at(t, c, y, x);
        mean /= g.frames;
        double var = 0.0;
        for (int64_t t = 0; t < g.frames; ++t) {
          double d = clip.at(t, c, y, x) - mean;
          var += d * d;
        }
        acc += var / g.frames;
        ++count;
      }
  return acc / count;
}

// Mean absolute frame-to-frame difference inside the face region.
inline double face_frame_delta(const Clip& clip) {
  const ClipGeometry& g = clip.geom;
  double acc = 0.0;
  int64_t count = 0;
  for (int64_t t = 1; t < g.frames; ++t)
    for (int64_t c = 0; c < g.channels; ++c)
      for (int64_t y = 0; y < g.height; ++y)
        for (int64_t x = 0; x < g.width; ++x) {
          if (!in_face(g, y, x)) continue;
          acc += std::abs(clip.at(t, c, y, x) - clip.at(t - 1, c, y, x));
          ++count;
        }
  return acc / count;
}

// Best single-threshold accuracy of a scalar statistic against labels
// (either direction), i.e. the strongest stump on this feature.
inline double threshold_classifier_accuracy(const std::vector<double>& stats,
                                            const std::vector<int>& labels) {
  if (stats.size() != labels.size() || stats.empty())
    throw ContractError("threshold classifier: size mismatch or empty input");
  std::vector<size_t> order(stats.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return stats[a] < stats[b]; });
  int64_t total = static_cast<int64_t>(stats.size());
  int64_t positives = std::count(labels.begin(), labels.end(), 1);
  // sweep: below threshold predicted 0, above predicted 1 (and the inverse)
  int64_t pos_below = 0, best = 0;
  for (int64_t cut = 0; cut <= total; ++cut) {
    int64_t correct_fwd = (cut - pos_below) + (positives - pos_below);
    int64_t correct_rev = total - correct_fwd;
    best = std::max({best, correct_fwd, correct_rev});
    if (cut < total && labels[order[cut]] == 1) ++pos_below;
  }
  return static_cast<double>(best) / static_cast<double>(total);
}

}  // namespace vf
