#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vf/digest.hpp"
#include "vf/errors.hpp"
#include "vf/models.hpp"

namespace vf {

enum class ModelKind { R2Plus1D, ViViT };
enum class DType { Float32, Float64 };

inline const char* model_kind_name(ModelKind k) {
  return k == ModelKind::R2Plus1D ? "r2plus1d" : "vivit";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "r2plus1d") return ModelKind::R2Plus1D;
  if (s == "vivit") return ModelKind::ViViT;
  throw ConfigError("unknown model kind '" + s + "' (expected r2plus1d|vivit)");
}

inline const char* dtype_name(DType d) { return d == DType::Float32 ? "float32" : "float64"; }

inline DType parse_dtype(const std::string& s) {
  if (s == "float32") return DType::Float32;
  if (s == "float64") return DType::Float64;
  throw ConfigError("unknown dtype '" + s + "' (expected float32|float64)");
}

// Run-level hyperparameters. Geometry is adopted from the dataset manifest at
// training time and embedded here so checkpoints can rebuild the exact model.
struct ExperimentConfig {
  ModelKind model = ModelKind::ViViT;
  DType dtype = DType::Float32;
  int64_t frames = 15;  // frames sampled per clip
  double lr = 1e-3;
  int64_t episodes = 100;
  int64_t batch_size = 32;
  bool scheduler = false;
  double dropout = 0.2;  // classifier dropout (ViViT)
  uint64_t seed = 7;
  double budget_minutes = 60.0;
  // ViViT
  int64_t dim = 192;
  int64_t heads = 3;
  int64_t head_dim = 64;
  int64_t spatial_depth = 2;
  int64_t temporal_depth = 2;
  int64_t patch = 16;
  // R(2+1)D
  double width_multiplier = 1.0;
  // geometry
  int64_t height = 64;
  int64_t width = 64;
  int64_t channels = 3;

  void validate() const {
    if (episodes < 1) throw ConfigError("episodes must be >= 1");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (budget_minutes <= 0.0) throw ConfigError("compute budget must be positive");
    if (lr <= 0.0) throw ConfigError("learning rate must be positive");
    if (frames < 1) throw ConfigError("frames per clip must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    model_config_check();
  }

  ViViTConfig vivit_config() const {
    ViViTConfig c;
    c.model_dim = dim;
    c.num_heads = heads;
    c.head_dim = head_dim;
    c.spatial_depth = spatial_depth;
    c.temporal_depth = temporal_depth;
    c.patch = patch;
    c.frames = frames;
    c.height = height;
    c.width = width;
    c.channels = channels;
    c.classifier_dropout = dropout;
    return c;
  }

  R2Plus1DConfig r2plus1d_config() const {
    R2Plus1DConfig c;
    c.channels = channels;
    c.frames = frames;
    c.height = height;
    c.width = width;
    c.width_multiplier = width_multiplier;
    return c;
  }

 private:
  void model_config_check() const {
    if (model == ModelKind::ViViT)
      vivit_config().validate();
    else
      r2plus1d_config().validate();
  }
};

// Canonical key/value rendering: fixed section and key order, so the digest
// identifies the recipe and checkpoints embed exactly this text.
inline std::string canonical_config_text(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "[run]\n";
  os << "model = " << model_kind_name(c.model) << "\n";
  os << "dtype = " << dtype_name(c.dtype) << "\n";
  os << "frames = " << c.frames << "\n";
  os << "lr = " << c.lr << "\n";
  os << "episodes = " << c.episodes << "\n";
  os << "batch = " << c.batch_size << "\n";
  os << "scheduler = " << (c.scheduler ? "on" : "off") << "\n";
  os << "dropout = " << c.dropout << "\n";
  os << "seed = " << c.seed << "\n";
  os << "budget_min = " << c.budget_minutes << "\n";
  if (c.model == ModelKind::ViViT) {
    os << "[vivit]\n";
    os << "dim = " << c.dim << "\n";
    os << "heads = " << c.heads << "\n";
    os << "head_dim = " << c.head_dim << "\n";
    os << "spatial_depth = " << c.spatial_depth << "\n";
    os << "temporal_depth = " << c.temporal_depth << "\n";
    os << "patch = " << c.patch << "\n";
  } else {
    os << "[r2plus1d]\n";
    os << "width_mult = " << c.width_multiplier << "\n";
  }
  os << "[geometry]\n";
  os << "height = " << c.height << "\n";
  os << "width = " << c.width << "\n";
  os << "channels = " << c.channels << "\n";
  return os.str();
}

inline std::string config_digest(const ExperimentConfig& c) {
  return digest_hex(fnv1a64(canonical_config_text(c)));
}

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

template <typename V>
V parse_number(const std::string& value, int lineno, const std::string& key) {
  std::istringstream is(value);
  V v{};
  is >> v;
  if (!is || !is.eof())
    throw ConfigError("line " + std::to_string(lineno) + ": bad value '" + value + "' for key '" +
                      key + "'");
  return v;
}

}  // namespace detail

// Applies one `key = value` setting. Keys are unique across sections, so the
// section prefix is optional context rather than an address.
inline void apply_config_key(ExperimentConfig& c, const std::string& key, const std::string& value,
                             int lineno = 0) {
  using detail::parse_number;
  if (key == "model")
    c.model = parse_model_kind(value);
  else if (key == "dtype")
    c.dtype = parse_dtype(value);
  else if (key == "frames")
    c.frames = parse_number<int64_t>(value, lineno, key);
  else if (key == "lr")
    c.lr = parse_number<double>(value, lineno, key);
  else if (key == "episodes")
    c.episodes = parse_number<int64_t>(value, lineno, key);
  else if (key == "batch")
    c.batch_size = parse_number<int64_t>(value, lineno, key);
  else if (key == "scheduler") {
    if (value == "on")
      c.scheduler = true;
    else if (value == "off")
      c.scheduler = false;
    else
      throw ConfigError("line " + std::to_string(lineno) + ": scheduler must be on|off");
  } else if (key == "dropout")
    c.dropout = parse_number<double>(value, lineno, key);
  else if (key == "seed")
    c.seed = parse_number<uint64_t>(value, lineno, key);
  else if (key == "budget_min")
    c.budget_minutes = parse_number<double>(value, lineno, key);
  else if (key == "dim")
    c.dim = parse_number<int64_t>(value, lineno, key);
  else if (key == "heads")
    c.heads = parse_number<int64_t>(value, lineno, key);
  else if (key == "head_dim")
    c.head_dim = parse_number<int64_t>(value, lineno, key);
  else if (key == "spatial_depth")
    c.spatial_depth = parse_number<int64_t>(value, lineno, key);
  else if (key == "temporal_depth")
    c.temporal_depth = parse_number<int64_t>(value, lineno, key);
  else if (key == "patch")
    c.patch = parse_number<int64_t>(value, lineno, key);
  else if (key == "width_mult")
    c.width_multiplier = parse_number<double>(value, lineno, key);
  else if (key == "height")
    c.height = parse_number<int64_t>(value, lineno, key);
  else if (key == "width")
    c.width = parse_number<int64_t>(value, lineno, key);
  else if (key == "channels")
    c.channels = parse_number<int64_t>(value, lineno, key);
  else
    throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
}

// Parses the sectioned key/value format emitted by canonical_config_text.
// Unknown sections and keys are rejected with their line number.
inline ExperimentConfig parse_config_text(const std::string& text,
                                          const ExperimentConfig& base = {}) {
  ExperimentConfig c = base;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) + ": unterminated section header");
      std::string section = t.substr(1, t.size() - 2);
      if (section != "run" && section != "vivit" && section != "r2plus1d" &&
          section != "geometry")
        throw ConfigError("line " + std::to_string(lineno) + ": unknown section '" + section + "'");
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = detail::trim(t.substr(0, eq));
    std::string value = detail::trim(t.substr(eq + 1));
    apply_config_key(c, key, value, lineno);
  }
  return c;
}

// ---------------------------------------------------------------------------
// experiment presets
// ---------------------------------------------------------------------------

// The training recipes exercised in the experiments: two CNN runs and the
// four transformer refinement stages.
inline std::vector<std::string> preset_names() {
  return {"cnn-a", "cnn-b", "vit-1", "vit-2", "vit-3", "vit-4"};
}

inline ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c;
  c.frames = 15;
  c.batch_size = 32;
  if (name == "cnn-a" || name == "cnn-b") {
    c.model = ModelKind::R2Plus1D;
    c.episodes = 10;
    c.scheduler = false;
    c.dropout = 0.0;
    c.lr = name == "cnn-a" ? 1e-4 : 1e-3;
    return c;
  }
  c.model = ModelKind::ViViT;
  c.dim = 192;
  c.heads = 3;
  c.head_dim = 64;
  c.spatial_depth = 2;
  c.temporal_depth = 2;
  if (name == "vit-1") {
    c.lr = 1e-4;
    c.episodes = 100;
    c.scheduler = false;
    c.dropout = 0.0;
  } else if (name == "vit-2") {
    c.lr = 1e-3;
    c.episodes = 100;
    c.scheduler = true;
    c.dropout = 0.2;
  } else if (name == "vit-3") {
    c.dim = 512;
    c.heads = 8;
    c.lr = 1e-3;
    c.episodes = 50;
    c.scheduler = true;
    c.dropout = 0.2;
  } else if (name == "vit-4") {
    c.dim = 512;
    c.heads = 8;
    c.lr = 1e-2;
    c.episodes = 30;
    c.scheduler = true;
    c.dropout = 0.2;
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + name + "'; available: " + known);
  }
  return c;
}

}  // namespace vf
