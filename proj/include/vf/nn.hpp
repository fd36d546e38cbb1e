#pragma once

#include <array>
#include <string>
#include <unordered_set>
#include <vector>

#include "vf/gradcheck.hpp"
#include "vf/ops.hpp"
#include "vf/random.hpp"
#include "vf/tensor.hpp"

namespace vf {

enum class Mode { Training, Evaluation };

// Named parameter table for a model. Trainable entries feed the optimizer
// and param_count; buffers (batch-norm running statistics) ride along for
// checkpointing only. Aliased registration is a bug and rejected.
template <typename T>
struct ParamRegistry {
  struct Entry {
    std::string name;
    Tensor<T>* tensor;
    bool trainable;
  };
  std::vector<Entry> entries;

  void add(const std::string& name, Tensor<T>& t, bool trainable = true) {
    for (const Entry& e : entries) {
      if (e.name == name) throw ContractError("duplicate parameter name: " + name);
      if (e.tensor->storage().get() == t.storage().get())
        throw ContractError("parameter aliased under two names: " + e.name + ", " + name);
    }
    if (trainable) t.set_requires_grad(true);
    entries.push_back({name, &t, trainable});
  }

  int64_t trainable_count() const {
    int64_t n = 0;
    for (const Entry& e : entries)
      if (e.trainable) n += e.tensor->numel();
    return n;
  }

  void zero_grad() {
    for (Entry& e : entries)
      if (e.trainable) e.tensor->zero_grad();
  }

  std::vector<std::pair<std::string, Tensor<T>*>> trainable() const {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (const Entry& e : entries)
      if (e.trainable) out.emplace_back(e.name, e.tensor);
    return out;
  }
};

namespace init {

template <typename T>
void truncated_normal(Tensor<T>& t, Rng& rng, double stddev = 0.02) {
  for (T& v : t.raw()) v = static_cast<T>(rng.truncated_normal(stddev));
}

template <typename T>
void zeros(Tensor<T>& t) {
  std::fill(t.raw().begin(), t.raw().end(), T(0));
}

template <typename T>
void ones(Tensor<T>& t) {
  std::fill(t.raw().begin(), t.raw().end(), T(1));
}

}  // namespace init

// ---------------------------------------------------------------------------

// y = x W + b over the trailing axis; x [..., in] -> [..., out].
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(int64_t in, int64_t out) : in_(in), out_(out), weight_({in, out}), bias_({out}) {}

  // zero_weight: residual output projections start at zero so a fresh
  // pre-norm block is the identity.
  void init(Rng& rng, bool zero_weight = false) {
    if (zero_weight)
      init::zeros(weight_);
    else
      init::truncated_normal(weight_, rng);
    init::zeros(bias_);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.shape().back() != in_)
      throw DimensionError("linear: input extent " + std::to_string(x.shape().back()) +
                           " != " + std::to_string(in_));
    int64_t rows = x.numel() / in_;
    Tensor<T> flat = reshape(x, {rows, in_});
    Tensor<T> y = add_broadcast_trailing(matmul(flat, weight_), bias_);
    Shape out_shape = x.shape();
    out_shape.back() = out_;
    return reshape(y, out_shape);
  }

  void register_params(const std::string& prefix, ParamRegistry<T>& reg) {
    reg.add(prefix + ".weight", weight_, true);
    reg.add(prefix + ".bias", bias_, true);
  }

  int64_t in_dim() const { return in_; }
  int64_t out_dim() const { return out_; }

 private:
  int64_t in_ = 0, out_ = 0;
  Tensor<T> weight_, bias_;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(int64_t dim) : dim_(dim), gamma_({dim}), beta_({dim}) {
    init::ones(gamma_);
    init::zeros(beta_);
  }

  Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gamma_, beta_, T(1e-5)); }

  void register_params(const std::string& prefix, ParamRegistry<T>& reg) {
    reg.add(prefix + ".gamma", gamma_, true);
    reg.add(prefix + ".beta", beta_, true);
  }

 private:
  int64_t dim_ = 0;
  Tensor<T> gamma_, beta_;
};

// Per-channel normalization of [N,C,...] activations. Batch statistics in
// training mode (with running-average updates, momentum 0.1); frozen running
// statistics in evaluation mode, which makes evaluation batch-independent.
template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(int64_t channels)
      : channels_(channels),
        gamma_({channels}),
        beta_({channels}),
        running_mean_({channels}),
        running_var_({channels}) {
    init::ones(gamma_);
    init::zeros(beta_);
    init::zeros(running_mean_);
    init::ones(running_var_);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (x.rank() < 2 || x.shape()[1] != channels_)
      throw DimensionError("batch_norm: expects [N," + std::to_string(channels_) + ",...], got " +
                           shape_str(x.shape()));
    const T eps = T(1e-5);
    int64_t N = x.shape()[0], C = channels_;
    int64_t inner = x.numel() / (N * C);
    int64_t m = N * inner;  // reduction set per channel
    Tensor<T> out(x.shape());
    const T* xs = x.values().data();
    T* z = out.raw().data();

    std::vector<T> mean(C), inv_std(C);
    if (mode == Mode::Training) {
      for (int64_t c = 0; c < C; ++c) {
        T mu = 0;
        for (int64_t n = 0; n < N; ++n) {
          const T* p = xs + (n * C + c) * inner;
          for (int64_t i = 0; i < inner; ++i) mu += p[i];
        }
        mu /= static_cast<T>(m);
        T var = 0;
        for (int64_t n = 0; n < N; ++n) {
          const T* p = xs + (n * C + c) * inner;
          for (int64_t i = 0; i < inner; ++i) {
            T d = p[i] - mu;
            var += d * d;
          }
        }
        var /= static_cast<T>(m);
        mean[c] = mu;
        inv_std[c] = T(1) / std::sqrt(var + eps);
        auto rm = running_mean_.raw();
        auto rv = running_var_.raw();
        rm[c] = (T(1) - momentum_) * rm[c] + momentum_ * mu;
        rv[c] = (T(1) - momentum_) * rv[c] + momentum_ * var;
      }
    } else {
      auto rm = running_mean_.values();
      auto rv = running_var_.values();
      for (int64_t c = 0; c < C; ++c) {
        mean[c] = rm[c];
        inv_std[c] = T(1) / std::sqrt(rv[c] + eps);
      }
    }

    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    const T* g = gamma_.values().data();
    const T* b = beta_.values().data();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        const T* p = xs + (n * C + c) * inner;
        T* q = z + (n * C + c) * inner;
        T* xh = xhat->data() + (n * C + c) * inner;
        for (int64_t i = 0; i < inner; ++i) {
          T v = (p[i] - mean[c]) * inv_std[c];
          xh[i] = v;
          q[i] = g[c] * v + b[c];
        }
      }
    debug_check_finite(out, "batch_norm");

    if (grad_needed<T>({&x, &gamma_, &beta_})) {
      out.set_requires_grad(true);
      auto dz = out.grad_storage();
      auto dx = x.grad_storage(), dg = gamma_.grad_storage(), db = beta_.grad_storage();
      auto gs = gamma_.storage();
      auto inv_copy = std::make_shared<std::vector<T>>(inv_std);
      bool batch_stats = (mode == Mode::Training);
      active_tape<T>()->record({&x, &gamma_, &beta_}, out, [=] {
        for (int64_t c = 0; c < C; ++c) {
          T sum_dy = 0, sum_dy_xh = 0;
          for (int64_t n = 0; n < N; ++n) {
            int64_t base = (n * C + c) * inner;
            for (int64_t i = 0; i < inner; ++i) {
              sum_dy += (*dz)[base + i];
              sum_dy_xh += (*dz)[base + i] * (*xhat)[base + i];
            }
          }
          if (dg) (*dg)[c] += sum_dy_xh;
          if (db) (*db)[c] += sum_dy;
          if (dx) {
            T gc = (*gs)[c], inv = (*inv_copy)[c];
            if (batch_stats) {
              T m1 = gc * sum_dy / static_cast<T>(m);
              T m2 = gc * sum_dy_xh / static_cast<T>(m);
              for (int64_t n = 0; n < N; ++n) {
                int64_t base = (n * C + c) * inner;
                for (int64_t i = 0; i < inner; ++i)
                  (*dx)[base + i] +=
                      inv * (gc * (*dz)[base + i] - m1 - (*xhat)[base + i] * m2);
              }
            } else {
              for (int64_t n = 0; n < N; ++n) {
                int64_t base = (n * C + c) * inner;
                for (int64_t i = 0; i < inner; ++i) (*dx)[base + i] += inv * gc * (*dz)[base + i];
              }
            }
          }
        }
      });
    }
    return out;
  }

  void register_params(const std::string& prefix, ParamRegistry<T>& reg) {
    reg.add(prefix + ".gamma", gamma_, true);
    reg.add(prefix + ".beta", beta_, true);
    reg.add(prefix + ".running_mean", running_mean_, false);
    reg.add(prefix + ".running_var", running_var_, false);
  }

 private:
  int64_t channels_ = 0;
  T momentum_ = T(0.1);
  Tensor<T> gamma_, beta_, running_mean_, running_var_;
};

template <typename T>
class Dropout {
 public:
  Dropout() = default;
  explicit Dropout(double p) : p_(p) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must be in [0, 1)");
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng& rng) const {
    return dropout(x, p_, mode == Mode::Training, rng);
  }

  double p() const { return p_; }

 private:
  double p_ = 0.0;
};

// ---------------------------------------------------------------------------
// convolution layers
// ---------------------------------------------------------------------------

template <typename T>
class Conv3dLayer {
 public:
  Conv3dLayer() = default;
  Conv3dLayer(int64_t c_in, int64_t c_out, std::array<int64_t, 3> kernel,
              std::array<int64_t, 3> stride, std::array<int64_t, 3> pad, bool bias = false)
      : weight_({c_out, c_in, kernel[0], kernel[1], kernel[2]}),
        has_bias_(bias),
        spec_{stride, pad} {
    if (bias) bias_ = Tensor<T>({c_out});
  }

  void init(Rng& rng) {
    init::truncated_normal(weight_, rng);
    if (has_bias_) init::zeros(bias_);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return conv3d(x, weight_, has_bias_ ? &bias_ : nullptr, spec_);
  }

  void register_params(const std::string& prefix, ParamRegistry<T>& reg) {
    reg.add(prefix + ".weight", weight_, true);
    if (has_bias_) reg.add(prefix + ".bias", bias_, true);
  }

  const Tensor<T>& weight() const { return weight_; }
  Tensor<T>& weight() { return weight_; }

 private:
  Tensor<T> weight_, bias_;
  bool has_bias_ = false;
  Conv3dSpec spec_;
};

// Intermediate channel count of the (2+1)D factorization: chosen so the two
// factor kernels carry (up to flooring) the parameter budget of the full
// t x d x d kernel they replace.
inline int64_t conv2plus1d_mid_channels(int64_t t, int64_t d, int64_t c_in, int64_t c_out) {
  int64_t m = (t * d * d * c_in * c_out) / (d * d * c_in + t * c_out);
  if (m < 1)
    throw ConfigError("(2+1)D factorization degenerates: M < 1 for t=" + std::to_string(t) +
                      " d=" + std::to_string(d) + " c_in=" + std::to_string(c_in) +
                      " c_out=" + std::to_string(c_out));
  return m;
}

// Factorized spatiotemporal convolution: a 1 x d x d spatial stage into M
// channels, a pointwise nonlinearity, then a t x 1 x 1 temporal stage.
// Output geometry matches the full t x d x d convolution with the same
// stride/padding. Both stages are bias-free (a norm layer follows in every
// use here), which keeps the parameter budget of the worked factorization
// exact.
template <typename T>
class Conv2Plus1d {
 public:
  Conv2Plus1d() = default;
  Conv2Plus1d(int64_t c_in, int64_t c_out, int64_t t_extent, int64_t d_extent,
              std::array<int64_t, 3> stride, std::array<int64_t, 3> pad)
      : t_extent_(t_extent), d_extent_(d_extent) {
    if (t_extent % 2 == 0 || d_extent % 2 == 0)
      throw ConfigError("(2+1)D kernel extents must be odd, got t=" + std::to_string(t_extent) +
                        " d=" + std::to_string(d_extent));
    mid_ = conv2plus1d_mid_channels(t_extent, d_extent, c_in, c_out);
    spatial_ = Conv3dLayer<T>(c_in, mid_, {1, d_extent, d_extent}, {1, stride[1], stride[2]},
                              {0, pad[1], pad[2]}, false);
    temporal_ = Conv3dLayer<T>(mid_, c_out, {t_extent, 1, 1}, {stride[0], 1, 1}, {pad[0], 0, 0},
                               false);
  }

  void init(Rng& rng) {
    spatial_.init(rng);
    temporal_.init(rng);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> h = spatial_.forward(x);
    if (nonlinearity_enabled_) h = relu(h);
    return temporal_.forward(h);
  }

  void register_params(const std::string& prefix, ParamRegistry<T>& reg) {
    spatial_.register_params(prefix + ".spatial", reg);
    temporal_.register_params(prefix + ".temporal", reg);
  }

  int64_t mid_channels() const { return mid_; }

  // Test hook: with the inter-stage nonlinearity off, the composition is a
  // plain bilinear map comparable against a direct 3-D convolution.
  void set_nonlinearity(bool enabled) { nonlinearity_enabled_ = enabled; }

  Conv3dLayer<T>& spatial() { return spatial_; }
  Conv3dLayer<T>& temporal() { return temporal_; }

 private:
  int64_t t_extent_ = 0, d_extent_ = 0, mid_ = 0;
  bool nonlinearity_enabled_ = true;
  Conv3dLayer<T> spatial_, temporal_;
};

// ---------------------------------------------------------------------------
// attention / transformer
// ---------------------------------------------------------------------------

struct AttentionConfig {
  int64_t model_dim = 0;
  int64_t num_heads = 0;
  int64_t head_dim = 0;

  void validate() const {
    if (model_dim < 1 || num_heads < 1 || head_dim < 1)
      throw ConfigError("attention config requires model_dim, heads, head_dim >= 1");
  }
};

template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  explicit MultiHeadAttention(const AttentionConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    int64_t width = cfg.num_heads * cfg.head_dim;
    wq_ = Linear<T>(cfg.model_dim, width);
    wk_ = Linear<T>(cfg.model_dim, width);
    wv_ = Linear<T>(cfg.model_dim, width);
    wo_ = Linear<T>(width, cfg.model_dim);
  }

  void init(Rng& rng, bool zero_out_proj = true) {
    wq_.init(rng);
    wk_.init(rng);
    wv_.init(rng);
    wo_.init(rng, zero_out_proj);
  }

  // x [N,S,d] -> [N,S,d]. `attn_probe`, when given, receives the softmaxed
  // attention matrix [N*h, S, S].
  Tensor<T> forward(const Tensor<T>& x, Tensor<T>* attn_probe = nullptr) const {
    if (x.rank() != 3 || x.shape()[2] != cfg_.model_dim)
      throw DimensionError("attention: expects [N,S," + std::to_string(cfg_.model_dim) +
                           "], got " + shape_str(x.shape()));
    int64_t N = x.shape()[0], S = x.shape()[1];
    if (S < 1) throw ContractError("attention: empty sequence");
    int64_t h = cfg_.num_heads, dh = cfg_.head_dim;

    auto split_heads = [&](const Tensor<T>& y) {
      return reshape(permute(reshape(y, {N, S, h, dh}), {0, 2, 1, 3}), {N * h, S, dh});
    };
    Tensor<T> q = split_heads(wq_.forward(x));
    Tensor<T> k = split_heads(wk_.forward(x));
    Tensor<T> v = split_heads(wv_.forward(x));

    Tensor<T> scores = scale(bmm(q, permute(k, {0, 2, 1})), T(1) / std::sqrt(static_cast<T>(dh)));
    Tensor<T> attn = softmax(scores, 2);
    if (attn_probe) *attn_probe = attn;
    Tensor<T> ctx = sign_flip_probe(bmm(attn, v));
    Tensor<T> merged = reshape(permute(reshape(ctx, {N, h, S, dh}), {0, 2, 1, 3}), {N, S, h * dh});
    return wo_.forward(merged);
  }

  void register_params(const std::string& prefix, ParamRegistry<T>& reg) {
    wq_.register_params(prefix + ".wq", reg);
    wk_.register_params(prefix + ".wk", reg);
    wv_.register_params(prefix + ".wv", reg);
    wo_.register_params(prefix + ".wo", reg);
  }

  const AttentionConfig& config() const { return cfg_; }

  Linear<T>& value_proj() { return wv_; }
  Linear<T>& output_proj() { return wo_; }

 private:
  AttentionConfig cfg_;
  Linear<T> wq_, wk_, wv_, wo_;
};

// Pre-norm encoder block: x + MHA(LN(x)), then + MLP(LN(.)) with GELU and a
// 4x hidden expansion. Output projections start at zero, so a freshly
// initialized block is the identity.
template <typename T>
class TransformerBlock {
 public:
  TransformerBlock() = default;
  explicit TransformerBlock(const AttentionConfig& cfg)
      : ln1_(cfg.model_dim),
        ln2_(cfg.model_dim),
        attn_(cfg),
        fc1_(cfg.model_dim, 4 * cfg.model_dim),
        fc2_(4 * cfg.model_dim, cfg.model_dim) {}

  void init(Rng& rng) {
    attn_.init(rng, /*zero_out_proj=*/true);
    fc1_.init(rng);
    fc2_.init(rng, /*zero_weight=*/true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> h = add(x, attn_.forward(ln1_.forward(x)));
    return add(h, fc2_.forward(gelu(fc1_.forward(ln2_.forward(h)))));
  }

  void register_params(const std::string& prefix, ParamRegistry<T>& reg) {
    ln1_.register_params(prefix + ".ln1", reg);
    attn_.register_params(prefix + ".attn", reg);
    ln2_.register_params(prefix + ".ln2", reg);
    fc1_.register_params(prefix + ".mlp.fc1", reg);
    fc2_.register_params(prefix + ".mlp.fc2", reg);
  }

  MultiHeadAttention<T>& attention() { return attn_; }

 private:
  LayerNorm<T> ln1_, ln2_;
  MultiHeadAttention<T> attn_;
  Linear<T> fc1_, fc2_;
};

// Linear projection of non-overlapping P x P x C patches to `dim`, plus a
// learned positional embedding per patch index.
template <typename T>
class PatchEmbed {
 public:
  PatchEmbed() = default;
  PatchEmbed(int64_t channels, int64_t height, int64_t width, int64_t patch, int64_t dim)
      : channels_(channels), height_(height), width_(width), patch_(patch), dim_(dim) {
    if (patch < 1 || height % patch != 0 || width % patch != 0)
      throw ConfigError("patch size " + std::to_string(patch) + " does not divide H=" +
                        std::to_string(height) + ", W=" + std::to_string(width));
    tokens_ = (height / patch) * (width / patch);
    proj_ = Linear<T>(patch * patch * channels, dim);
    pos_ = Tensor<T>({tokens_, dim});
  }

  void init(Rng& rng) {
    proj_.init(rng);
    init::truncated_normal(pos_, rng);
  }

  // frames [N,T,C,H,W] -> tokens [N,T,S,dim]
  Tensor<T> forward(const Tensor<T>& frames) const {
    if (frames.rank() != 5 || frames.shape()[2] != channels_ || frames.shape()[3] != height_ ||
        frames.shape()[4] != width_)
      throw DimensionError("patch_embed: geometry mismatch, got " + shape_str(frames.shape()));
    int64_t N = frames.shape()[0], Tn = frames.shape()[1];
    Tensor<T> patches = extract_patches(frames, patch_);          // [N*T, S, P*P*C]
    Tensor<T> tokens = proj_.forward(patches);                    // [N*T, S, dim]
    tokens = add_broadcast_trailing(tokens, pos_);                // + spatial positions
    return reshape(tokens, {N, Tn, tokens_, dim_});
  }

  void register_params(const std::string& prefix, ParamRegistry<T>& reg) {
    proj_.register_params(prefix + ".proj", reg);
    reg.add(prefix + ".pos", pos_, true);
  }

  int64_t tokens_per_frame() const { return tokens_; }
  const Tensor<T>& positions() const { return pos_; }

 private:
  int64_t channels_ = 0, height_ = 0, width_ = 0, patch_ = 0, dim_ = 0, tokens_ = 0;
  Linear<T> proj_;
  Tensor<T> pos_;
};

}  // namespace vf
