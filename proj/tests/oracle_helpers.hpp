#pragma once

// Test-side oracles, kept independent of the library's implementation paths:
// a padding-materializing 3-D convolution and closed-form parameter counts.

#include <array>
#include <vector>

#include "vf/random.hpp"
#include "vf/tensor.hpp"

namespace oracle {

// Direct 3-D convolution computed over an explicitly zero-padded copy of the
// input (the library convolves in place with bounds checks).
template <typename T>
vf::Tensor<T> conv3d_reference(const vf::Tensor<T>& x, const vf::Tensor<T>& w,
                               std::array<int64_t, 3> stride, std::array<int64_t, 3> pad) {
  int64_t N = x.shape()[0], C = x.shape()[1], Ti = x.shape()[2], Hi = x.shape()[3],
          Wi = x.shape()[4];
  int64_t Co = w.shape()[0], kt = w.shape()[2], kh = w.shape()[3], kw = w.shape()[4];
  int64_t Tp = Ti + 2 * pad[0], Hp = Hi + 2 * pad[1], Wp = Wi + 2 * pad[2];
  std::vector<T> padded(N * C * Tp * Hp * Wp, T(0));
  auto pad_at = [&](int64_t n, int64_t c, int64_t t, int64_t y, int64_t z) -> T& {
    return padded[(((n * C + c) * Tp + t) * Hp + y) * Wp + z];
  };
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t t = 0; t < Ti; ++t)
        for (int64_t y = 0; y < Hi; ++y)
          for (int64_t z = 0; z < Wi; ++z)
            pad_at(n, c, t + pad[0], y + pad[1], z + pad[2]) =
                x.values()[(((n * C + c) * Ti + t) * Hi + y) * Wi + z];

  int64_t To = (Tp - kt) / stride[0] + 1;
  int64_t Ho = (Hp - kh) / stride[1] + 1;
  int64_t Wo = (Wp - kw) / stride[2] + 1;
  vf::Tensor<T> out({N, Co, To, Ho, Wo});
  auto ov = out.raw();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t co = 0; co < Co; ++co)
      for (int64_t to = 0; to < To; ++to)
        for (int64_t ho = 0; ho < Ho; ++ho)
          for (int64_t wo = 0; wo < Wo; ++wo) {
            T acc = 0;
            for (int64_t ci = 0; ci < C; ++ci)
              for (int64_t i = 0; i < kt; ++i)
                for (int64_t j = 0; j < kh; ++j)
                  for (int64_t k = 0; k < kw; ++k)
                    acc += pad_at(n, ci, to * stride[0] + i, ho * stride[1] + j,
                                  wo * stride[2] + k) *
                           w.values()[(((co * C + ci) * kt + i) * kh + j) * kw + k];
            ov[(((n * Co + co) * To + to) * Ho + ho) * Wo + wo] = acc;
          }
  return out;
}

// Spreadsheet-style parameter counts assembled from layer dimensions alone.

inline int64_t linear_params(int64_t in, int64_t out) { return in * out + out; }

inline int64_t transformer_block_params(int64_t d, int64_t heads, int64_t head_dim) {
  int64_t width = heads * head_dim;
  int64_t ln = 2 * d;
  int64_t attn = 3 * linear_params(d, width) + linear_params(width, d);
  int64_t mlp = linear_params(d, 4 * d) + linear_params(4 * d, d);
  return 2 * ln + attn + mlp;
}

inline int64_t vivit_params(int64_t d, int64_t heads, int64_t head_dim, int64_t spatial_depth,
                            int64_t temporal_depth, int64_t patch, int64_t channels,
                            int64_t height, int64_t width, int64_t frames, int64_t hidden) {
  int64_t tokens = (height / patch) * (width / patch);
  int64_t count = 0;
  count += linear_params(patch * patch * channels, d);  // patch projection
  count += tokens * d;                                  // spatial positions
  count += d;                                           // spatial CLS
  count += spatial_depth * transformer_block_params(d, heads, head_dim);
  count += 2 * d;                                       // spatial output norm
  count += frames * d;                                  // temporal positions
  count += d;                                           // temporal CLS
  count += temporal_depth * transformer_block_params(d, heads, head_dim);
  count += 2 * d;                                       // temporal output norm
  count += linear_params(d, hidden) + linear_params(hidden, 1);
  return count;
}

inline int64_t conv2plus1d_mid(int64_t t, int64_t d, int64_t cin, int64_t cout) {
  return (t * d * d * cin * cout) / (d * d * cin + t * cout);
}

inline int64_t conv2plus1d_params(int64_t t, int64_t d, int64_t cin, int64_t cout) {
  int64_t m = conv2plus1d_mid(t, d, cin, cout);
  return d * d * cin * m + t * m * cout;
}

inline int64_t r2plus1d_params(double wm, std::array<int64_t, 4> blocks, int64_t channels) {
  auto w = [&](int s) { return static_cast<int64_t>(std::array<int64_t, 4>{64, 128, 256, 512}[s] * wm); };
  const int64_t t = 3, d = 3;
  int64_t count = conv2plus1d_params(t, d, channels, w(0)) + 2 * w(0);  // stem conv + bn
  for (int s = 0; s < 4; ++s) {
    int64_t cin = s == 0 ? w(0) : w(s - 1);
    for (int64_t b = 0; b < blocks[s]; ++b) {
      int64_t block_in = b == 0 ? cin : w(s);
      count += conv2plus1d_params(t, d, block_in, w(s)) + 2 * w(s);  // conv1 + bn1
      count += conv2plus1d_params(t, d, w(s), w(s)) + 2 * w(s);      // conv2 + bn2
      if (s > 0 && b == 0) count += block_in * w(s) + 2 * w(s);      // projection + bn
    }
  }
  count += linear_params(w(3), 1);
  return count;
}

template <typename T>
void fill_uniform(vf::Tensor<T>& t, vf::Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (T& v : t.raw()) v = static_cast<T>(rng.uniform(lo, hi));
}

}  // namespace oracle
