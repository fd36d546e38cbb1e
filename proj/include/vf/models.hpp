#pragma once

#include <array>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vf/digest.hpp"
#include "vf/nn.hpp"

namespace vf {

// ---------------------------------------------------------------------------
// R(2+1)D ResNet-18 video CNN
// ---------------------------------------------------------------------------

struct R2Plus1DConfig {
  int64_t channels = 3;
  int64_t frames = 15;
  int64_t height = 64;
  int64_t width = 64;
  double width_multiplier = 1.0;  // 1, 1/2, 1/4 or 1/8
  std::array<int64_t, 4> blocks{2, 2, 2, 2};
  int64_t temporal_kernel = 3;
  int64_t spatial_kernel = 3;

  static constexpr std::array<int64_t, 4> kBaseWidths{64, 128, 256, 512};

  int64_t stage_width(int stage) const {
    return static_cast<int64_t>(kBaseWidths[stage] * width_multiplier);
  }

  void validate() const {
    const double allowed[] = {1.0, 0.5, 0.25, 0.125};
    bool ok = false;
    for (double a : allowed)
      if (width_multiplier == a) ok = true;
    if (!ok) throw ConfigError("width multiplier must be one of 1, 1/2, 1/4, 1/8");
    for (int64_t b : blocks)
      if (b < 1) throw ConfigError("every stage needs at least one block");
    // stem halves H,W; stages 2..4 halve again: cumulative spatial stride 16
    if (height % 16 != 0 || width % 16 != 0)
      throw ConfigError("resolution " + std::to_string(height) + "x" + std::to_string(width) +
                        " not divisible by cumulative stride 16");
    if (frames < 1 || channels < 1) throw ConfigError("frames and channels must be >= 1");
  }
};

// conv-norm-ReLU x2 with identity or strided 1x1x1 projection shortcut.
template <typename T>
class R2Plus1dBlock {
 public:
  R2Plus1dBlock() = default;
  R2Plus1dBlock(int64_t c_in, int64_t c_out, int64_t kt, int64_t kd, bool downsample)
      : downsample_(downsample || c_in != c_out),
        conv1_(c_in, c_out, kt, kd, downsample ? std::array<int64_t, 3>{2, 2, 2}
                                               : std::array<int64_t, 3>{1, 1, 1},
               {kt / 2, kd / 2, kd / 2}),
        conv2_(c_out, c_out, kt, kd, {1, 1, 1}, {kt / 2, kd / 2, kd / 2}),
        bn1_(c_out),
        bn2_(c_out) {
    if (downsample_) {
      proj_ = Conv3dLayer<T>(c_in, c_out, {1, 1, 1},
                             downsample ? std::array<int64_t, 3>{2, 2, 2}
                                        : std::array<int64_t, 3>{1, 1, 1},
                             {0, 0, 0}, false);
      bn_proj_ = BatchNorm<T>(c_out);
    }
  }

  void init(Rng& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
    if (downsample_) proj_.init(rng);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    Tensor<T> h = relu(bn1_.forward(conv1_.forward(x), mode));
    h = bn2_.forward(conv2_.forward(h), mode);
    Tensor<T> shortcut = downsample_ ? bn_proj_.forward(proj_.forward(x), mode) : x;
    return relu(add(h, shortcut));
  }

  void register_params(const std::string& prefix, ParamRegistry<T>& reg) {
    conv1_.register_params(prefix + ".conv1", reg);
    bn1_.register_params(prefix + ".bn1", reg);
    conv2_.register_params(prefix + ".conv2", reg);
    bn2_.register_params(prefix + ".bn2", reg);
    if (downsample_) {
      proj_.register_params(prefix + ".proj", reg);
      bn_proj_.register_params(prefix + ".bn_proj", reg);
    }
  }

  std::vector<Conv2Plus1d<T>*> factorized_convs() { return {&conv1_, &conv2_}; }

 private:
  bool downsample_ = false;
  Conv2Plus1d<T> conv1_, conv2_;
  Conv3dLayer<T> proj_;
  BatchNorm<T> bn1_, bn2_, bn_proj_;
};

template <typename T>
class R2Plus1D {
 public:
  explicit R2Plus1D(const R2Plus1DConfig& cfg, uint64_t init_seed = 1) : cfg_(cfg) {
    cfg.validate();
    int64_t kt = cfg.temporal_kernel, kd = cfg.spatial_kernel;
    stem_ = Conv2Plus1d<T>(cfg.channels, cfg.stage_width(0), kt, kd, {1, 2, 2},
                           {kt / 2, kd / 2, kd / 2});
    bn_stem_ = BatchNorm<T>(cfg.stage_width(0));
    for (int s = 0; s < 4; ++s) {
      int64_t c_in = cfg.stage_width(s == 0 ? 0 : s - 1);
      int64_t c_out = cfg.stage_width(s);
      for (int64_t b = 0; b < cfg.blocks[s]; ++b) {
        bool down = (s > 0 && b == 0);
        stages_[s].emplace_back(b == 0 ? c_in : c_out, c_out, kt, kd, down);
      }
    }
    head_ = Linear<T>(cfg.stage_width(3), 1);
    Rng rng(init_seed);
    stem_.init(rng);
    for (auto& stage : stages_)
      for (auto& block : stage) block.init(rng);
    head_.init(rng);
  }

  R2Plus1D(const R2Plus1D&) = delete;
  R2Plus1D& operator=(const R2Plus1D&) = delete;

  // clips [N,C,T,H,W] -> fake probabilities [N]
  Tensor<T> forward(const Tensor<T>& clips, Mode mode, Rng& /*rng*/) {
    check_input(clips);
    Tensor<T> h = relu(bn_stem_.forward(stem_.forward(clips), mode));
    for (auto& stage : stages_)
      for (auto& block : stage) h = block.forward(h, mode);
    Tensor<T> pooled = global_avg_pool3d(h);
    return reshape(sigmoid(head_.forward(pooled)), {clips.shape()[0]});
  }

  void register_params(ParamRegistry<T>& reg) {
    stem_.register_params("stem.conv", reg);
    bn_stem_.register_params("stem.bn", reg);
    for (int s = 0; s < 4; ++s)
      for (size_t b = 0; b < stages_[s].size(); ++b)
        stages_[s][b].register_params("stage" + std::to_string(s + 1) + ".block" +
                                          std::to_string(b),
                                      reg);
    head_.register_params("head", reg);
  }

  const R2Plus1DConfig& config() const { return cfg_; }

  std::vector<Conv2Plus1d<T>*> factorized_convs() {
    std::vector<Conv2Plus1d<T>*> out{&stem_};
    for (auto& stage : stages_)
      for (auto& block : stage)
        for (auto* c : block.factorized_convs()) out.push_back(c);
    return out;
  }

 private:
  void check_input(const Tensor<T>& clips) const {
    if (clips.rank() != 5 || clips.shape()[1] != cfg_.channels ||
        clips.shape()[2] != cfg_.frames || clips.shape()[3] != cfg_.height ||
        clips.shape()[4] != cfg_.width)
      throw DimensionError("clip batch " + shape_str(clips.shape()) + " does not match model [N," +
                           std::to_string(cfg_.channels) + "," + std::to_string(cfg_.frames) + "," +
                           std::to_string(cfg_.height) + "," + std::to_string(cfg_.width) + "]");
  }

  R2Plus1DConfig cfg_;
  Conv2Plus1d<T> stem_;
  BatchNorm<T> bn_stem_;
  std::array<std::vector<R2Plus1dBlock<T>>, 4> stages_;
  Linear<T> head_;
};

// ---------------------------------------------------------------------------
// ViViT Factorised Encoder (Model 2)
// ---------------------------------------------------------------------------

struct ViViTConfig {
  int64_t model_dim = 192;
  int64_t spatial_depth = 2;
  int64_t temporal_depth = 2;
  int64_t num_heads = 3;
  int64_t head_dim = 64;
  int64_t patch = 16;
  int64_t frames = 15;
  int64_t height = 64;
  int64_t width = 64;
  int64_t channels = 3;
  double classifier_dropout = 0.2;
  int64_t classifier_hidden = 0;  // 0 = model_dim

  int64_t hidden() const { return classifier_hidden > 0 ? classifier_hidden : model_dim; }

  void validate() const {
    if (model_dim < 1 || num_heads < 1 || head_dim < 1)
      throw ConfigError("transformer dimensions must be >= 1");
    if (spatial_depth < 1 || temporal_depth < 1)
      throw ConfigError("encoder depths must be >= 1");
    if (classifier_dropout < 0.0 || classifier_dropout >= 1.0)
      throw ConfigError("classifier dropout must be in [0, 1)");
    if (patch < 1 || height % patch != 0 || width % patch != 0)
      throw ConfigError("patch size " + std::to_string(patch) + " does not divide H=" +
                        std::to_string(height) + ", W=" + std::to_string(width));
    if (frames < 1 || channels < 1) throw ConfigError("frames and channels must be >= 1");
  }

  AttentionConfig attention() const { return {model_dim, num_heads, head_dim}; }
};

// Two encoders: a spatial one over per-frame patch tokens (weights shared
// across frames) and a temporal one over the per-frame CLS summaries.
template <typename T>
class ViViT {
 public:
  explicit ViViT(const ViViTConfig& cfg, uint64_t init_seed = 1) : cfg_(cfg) {
    cfg.validate();
    embed_ = PatchEmbed<T>(cfg.channels, cfg.height, cfg.width, cfg.patch, cfg.model_dim);
    for (int64_t i = 0; i < cfg.spatial_depth; ++i) spatial_.emplace_back(cfg.attention());
    for (int64_t i = 0; i < cfg.temporal_depth; ++i) temporal_.emplace_back(cfg.attention());
    cls_spatial_ = Tensor<T>({1, 1, cfg.model_dim});
    cls_temporal_ = Tensor<T>({1, 1, cfg.model_dim});
    temporal_pos_ = Tensor<T>({cfg.frames, cfg.model_dim});
    ln_spatial_ = LayerNorm<T>(cfg.model_dim);
    ln_temporal_ = LayerNorm<T>(cfg.model_dim);
    fc1_ = Linear<T>(cfg.model_dim, cfg.hidden());
    fc2_ = Linear<T>(cfg.hidden(), 1);
    drop_ = Dropout<T>(cfg.classifier_dropout);

    Rng rng(init_seed);
    embed_.init(rng);
    for (auto& b : spatial_) b.init(rng);
    for (auto& b : temporal_) b.init(rng);
    init::truncated_normal(cls_spatial_, rng);
    init::truncated_normal(cls_temporal_, rng);
    init::truncated_normal(temporal_pos_, rng);
    fc1_.init(rng);
    fc2_.init(rng);
  }

  ViViT(const ViViT&) = delete;
  ViViT& operator=(const ViViT&) = delete;

  // Per-frame summaries before the temporal encoder: clips [N,C,T,H,W] ->
  // [N,T,model_dim]. Exposed so spatial weight sharing is testable.
  Tensor<T> frame_tokens(const Tensor<T>& clips) {
    check_input(clips);
    int64_t N = clips.shape()[0], Tn = cfg_.frames;
    Tensor<T> frames = permute(clips, {0, 2, 1, 3, 4});  // [N,T,C,H,W]
    Tensor<T> tokens = embed_.forward(frames);           // [N,T,S,d]
    int64_t S = embed_.tokens_per_frame();
    tokens = reshape(tokens, {N * Tn, S, cfg_.model_dim});
    Tensor<T> cls = broadcast_rows(cls_spatial_, N * Tn);  // [N*T,1,d]
    Tensor<T> seq = concat<T>({cls, tokens}, 1);           // [N*T,S+1,d]
    for (auto& block : spatial_) seq = block.forward(seq);
    Tensor<T> summary = slice(seq, 1, 0, 1);  // spatial CLS out
    return ln_spatial_.forward(reshape(summary, {N, Tn, cfg_.model_dim}));
  }

  // clips [N,C,T,H,W] -> fake probabilities [N]
  Tensor<T> forward(const Tensor<T>& clips, Mode mode, Rng& rng) {
    int64_t N = clips.shape()[0];
    Tensor<T> frames = frame_tokens(clips);                       // [N,T,d]
    frames = add_broadcast_trailing(frames, temporal_pos_);       // temporal positions
    Tensor<T> cls = broadcast_rows(cls_temporal_, N);             // [N,1,d]
    Tensor<T> seq = concat<T>({cls, frames}, 1);                  // [N,T+1,d]
    for (auto& block : temporal_) seq = block.forward(seq);
    Tensor<T> summary = ln_temporal_.forward(reshape(slice(seq, 1, 0, 1), {N, cfg_.model_dim}));
    Tensor<T> hidden = gelu(fc1_.forward(summary));
    hidden = drop_.forward(hidden, mode, rng);
    return reshape(sigmoid(fc2_.forward(hidden)), {N});
  }

  void register_params(ParamRegistry<T>& reg) {
    embed_.register_params("embed", reg);
    reg.add("cls_spatial", cls_spatial_, true);
    for (size_t i = 0; i < spatial_.size(); ++i)
      spatial_[i].register_params("spatial.block" + std::to_string(i), reg);
    ln_spatial_.register_params("spatial.ln_out", reg);
    reg.add("temporal_pos", temporal_pos_, true);
    reg.add("cls_temporal", cls_temporal_, true);
    for (size_t i = 0; i < temporal_.size(); ++i)
      temporal_[i].register_params("temporal.block" + std::to_string(i), reg);
    ln_temporal_.register_params("temporal.ln_out", reg);
    fc1_.register_params("classifier.fc1", reg);
    fc2_.register_params("classifier.fc2", reg);
  }

  const ViViTConfig& config() const { return cfg_; }

  // patch tokens plus the spatial CLS token
  int64_t spatial_sequence_length() const { return embed_.tokens_per_frame() + 1; }
  // frame summaries plus the temporal CLS token
  int64_t temporal_sequence_length() const { return cfg_.frames + 1; }

 private:
  void check_input(const Tensor<T>& clips) const {
    if (clips.rank() != 5 || clips.shape()[1] != cfg_.channels ||
        clips.shape()[2] != cfg_.frames || clips.shape()[3] != cfg_.height ||
        clips.shape()[4] != cfg_.width)
      throw DimensionError("clip batch " + shape_str(clips.shape()) + " does not match model [N," +
                           std::to_string(cfg_.channels) + "," + std::to_string(cfg_.frames) + "," +
                           std::to_string(cfg_.height) + "," + std::to_string(cfg_.width) + "]");
  }

  ViViTConfig cfg_;
  PatchEmbed<T> embed_;
  std::vector<TransformerBlock<T>> spatial_, temporal_;
  Tensor<T> cls_spatial_, cls_temporal_, temporal_pos_;
  LayerNorm<T> ln_spatial_, ln_temporal_;
  Linear<T> fc1_, fc2_;
  Dropout<T> drop_;
};

// ---------------------------------------------------------------------------
// prediction and parameter accounting
// ---------------------------------------------------------------------------

struct Prediction {
  double probability;
  int label;  // 1 = fake; ties at exactly 0.5 classify as fake (>= rule)
};

inline Prediction make_prediction(double probability) {
  return {probability, probability >= 0.5 ? 1 : 0};
}

// Batched evaluation-mode forward with the 0.5 threshold applied.
template <typename T, typename Model>
std::vector<Prediction> predict(Model& model, const Tensor<T>& clips) {
  Rng rng(0);  // unused: dropout is identity in evaluation mode
  Tensor<T> probs = model.forward(clips, Mode::Evaluation, rng);
  std::vector<Prediction> out;
  out.reserve(probs.numel());
  for (T p : probs.values()) out.push_back(make_prediction(static_cast<double>(p)));
  return out;
}

template <typename T>
int64_t param_count(const ParamRegistry<T>& reg) {
  return reg.trainable_count();
}

// Trainable totals grouped by the name prefix before the first '.'.
template <typename T>
std::map<std::string, int64_t> param_breakdown(const ParamRegistry<T>& reg) {
  std::map<std::string, int64_t> groups;
  for (const auto& e : reg.entries) {
    if (!e.trainable) continue;
    std::string key = e.name.substr(0, e.name.find('.'));
    groups[key] += e.tensor->numel();
  }
  return groups;
}

// ---------------------------------------------------------------------------
// checkpoint format
// ---------------------------------------------------------------------------
//
// Byte layout (all integers little-endian):
//   "VFCK" | u32 version | u64 config_digest | u64 payload_digest
//   | payload
// payload:
//   u32 config_len | config text | u32 record_count
//   | records: u32 name_len | name | u8 dtype (0=f32, 1=f64) | u8 trainable
//   | u32 rank | u64 extents[rank] | raw scalars
// config_digest is the FNV-1a 64 of the config text; payload_digest covers
// the whole payload, so any tampered byte is caught on load.

namespace detail {

template <typename V>
void put_le(std::string& buf, V v) {
  for (size_t i = 0; i < sizeof(V); ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename V>
V get_le(const std::string& buf, size_t& off) {
  if (off + sizeof(V) > buf.size()) throw DataError("checkpoint truncated");
  V v = 0;
  for (size_t i = 0; i < sizeof(V); ++i)
    v |= static_cast<V>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
  off += sizeof(V);
  return v;
}

}  // namespace detail

constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::string& path, const std::string& config_text,
                     const ParamRegistry<T>& reg) {
  std::string payload;
  detail::put_le<uint32_t>(payload, static_cast<uint32_t>(config_text.size()));
  payload += config_text;
  detail::put_le<uint32_t>(payload, static_cast<uint32_t>(reg.entries.size()));
  for (const auto& e : reg.entries) {
    detail::put_le<uint32_t>(payload, static_cast<uint32_t>(e.name.size()));
    payload += e.name;
    payload.push_back(static_cast<char>(sizeof(T) == 4 ? 0 : 1));
    payload.push_back(static_cast<char>(e.trainable ? 1 : 0));
    detail::put_le<uint32_t>(payload, static_cast<uint32_t>(e.tensor->rank()));
    for (int64_t ext : e.tensor->shape()) detail::put_le<uint64_t>(payload, ext);
    size_t bytes = e.tensor->numel() * sizeof(T);
    size_t at = payload.size();
    payload.resize(at + bytes);
    std::memcpy(payload.data() + at, e.tensor->values().data(), bytes);
  }

  std::string head = "VFCK";
  detail::put_le<uint32_t>(head, kCheckpointVersion);
  detail::put_le<uint64_t>(head, fnv1a64(config_text));
  detail::put_le<uint64_t>(head, fnv1a64(payload));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(head.data(), static_cast<std::streamsize>(head.size()));
  f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!f) throw IoError("short write to checkpoint: " + path);
}

// Returns the embedded config text. When `reg` is non-null, parameters are
// restored into it (names, shapes and dtype must match exactly).
template <typename T>
std::string load_checkpoint(const std::string& path, ParamRegistry<T>* reg) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  size_t off = 0;
  if (blob.size() < 24 || blob.compare(0, 4, "VFCK") != 0)
    throw DataError("not a checkpoint file (bad magic): " + path);
  off = 4;
  uint32_t version = detail::get_le<uint32_t>(blob, off);
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  uint64_t config_digest = detail::get_le<uint64_t>(blob, off);
  uint64_t payload_digest = detail::get_le<uint64_t>(blob, off);
  std::string payload = blob.substr(off);
  if (fnv1a64(payload) != payload_digest)
    throw DataError("checkpoint digest mismatch (file corrupted or tampered): " + path);

  size_t p = 0;
  uint32_t cfg_len = detail::get_le<uint32_t>(payload, p);
  if (p + cfg_len > payload.size()) throw DataError("checkpoint truncated");
  std::string config_text = payload.substr(p, cfg_len);
  p += cfg_len;
  if (fnv1a64(config_text) != config_digest)
    throw DataError("checkpoint config digest mismatch: " + path);

  uint32_t count = detail::get_le<uint32_t>(payload, p);
  struct Rec {
    std::string name;
    int dtype;
    Shape shape;
    size_t data_off;
  };
  std::vector<Rec> recs;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = detail::get_le<uint32_t>(payload, p);
    if (p + name_len > payload.size()) throw DataError("checkpoint truncated");
    Rec r;
    r.name = payload.substr(p, name_len);
    p += name_len;
    r.dtype = static_cast<unsigned char>(payload[p++]);
    ++p;  // trainable flag: informational
    uint32_t rank = detail::get_le<uint32_t>(payload, p);
    int64_t n = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      int64_t ext = static_cast<int64_t>(detail::get_le<uint64_t>(payload, p));
      r.shape.push_back(ext);
      n *= ext;
    }
    r.data_off = p;
    size_t bytes = static_cast<size_t>(n) * (r.dtype == 0 ? 4 : 8);
    if (p + bytes > payload.size()) throw DataError("checkpoint truncated");
    p += bytes;
    recs.push_back(std::move(r));
  }

  if (reg) {
    int expected_dtype = sizeof(T) == 4 ? 0 : 1;
    for (auto& e : reg->entries) {
      const Rec* found = nullptr;
      for (const Rec& r : recs)
        if (r.name == e.name) found = &r;
      if (!found) throw DataError("checkpoint is missing parameter: " + e.name);
      if (found->dtype != expected_dtype)
        throw DataError("checkpoint dtype mismatch for " + e.name + " (stored " +
                        (found->dtype == 0 ? std::string("float32") : std::string("float64")) +
                        ")");
      if (found->shape != e.tensor->shape())
        throw DataError("checkpoint shape mismatch for " + e.name + ": stored " +
                        shape_str(found->shape) + ", model has " + shape_str(e.tensor->shape()));
      std::memcpy(e.tensor->raw().data(), payload.data() + found->data_off,
                  e.tensor->numel() * sizeof(T));
    }
  }
  return config_text;
}

}  // namespace vf


}  // namespace vf
