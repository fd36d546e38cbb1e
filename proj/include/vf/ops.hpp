#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <memory>
#include <vector>

#include "vf/random.hpp"
#include "vf/tape.hpp"
#include "vf/tensor.hpp"

// Differentiable primitives. Each op computes its value into a fresh buffer
// and, when a tape is active and an input requires grad, records a closure
// that accumulates input gradients from the output gradient. Closures work on
// raw buffers only and never re-enter the op layer, so running backward while
// a tape is still active cannot record spurious nodes.

namespace vf {

namespace detail {

// C (+)= A(m x k) * B(k x n)
template <typename T>
void mm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool acc) {
  if (!acc) std::fill(c, c + m * n, T(0));
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (+)= A(m x k) * B(n x k)^T
template <typename T>
void mm_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool acc) {
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T s = acc ? crow[j] : T(0);
      for (int64_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] = s;
    }
  }
}

// C (+)= A(k x m)^T * B(k x n)
template <typename T>
void mm_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool acc) {
  if (!acc) std::fill(c, c + m * n, T(0));
  for (int64_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (int64_t i = 0; i < m; ++i) {
      T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int64_t i = static_cast<int64_t>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

// dst[permuted index] = src[index]; dst extents are src extents permuted.
template <typename T>
void permute_copy(const T* src, T* dst, const Shape& in_shape, const std::vector<int64_t>& axes,
                  bool acc) {
  int64_t rank = static_cast<int64_t>(in_shape.size());
  Shape out_shape(rank);
  for (int64_t i = 0; i < rank; ++i) out_shape[i] = in_shape[axes[i]];
  auto out_strides = row_major_strides(out_shape);
  // stride in dst for a unit step along input axis a
  std::vector<int64_t> dst_stride_of_in(rank, 0);
  for (int64_t i = 0; i < rank; ++i) dst_stride_of_in[axes[i]] = out_strides[i];
  std::vector<int64_t> idx(rank, 0);
  int64_t n = 1;
  for (int64_t e : in_shape) n *= e;
  int64_t dst_off = 0;
  for (int64_t lin = 0; lin < n; ++lin) {
    if (acc)
      dst[dst_off] += src[lin];
    else
      dst[dst_off] = src[lin];
    for (int64_t a = rank - 1; a >= 0; --a) {
      idx[a]++;
      dst_off += dst_stride_of_in[a];
      if (idx[a] < in_shape[a]) break;
      dst_off -= dst_stride_of_in[a] * in_shape[a];
      idx[a] = 0;
    }
  }
}

template <typename T>
void axpy(T* dst, const T* src, int64_t n, T alpha = T(1)) {
  for (int64_t i = 0; i < n; ++i) dst[i] += alpha * src[i];
}

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  auto x = a.values(), y = b.values();
  auto z = out.raw();
  for (int64_t i = 0; i < out.numel(); ++i) z[i] = x[i] + y[i];
  debug_check_finite(out, "add");
  if (grad_needed<T>({&a, &b})) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage(), da = a.grad_storage(), db = b.grad_storage();
    int64_t n = out.numel();
    active_tape<T>()->record({&a, &b}, out, [=] {
      if (da) detail::axpy(da->data(), dz->data(), n);
      if (db) detail::axpy(db->data(), dz->data(), n);
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  auto x = a.values(), y = b.values();
  auto z = out.raw();
  for (int64_t i = 0; i < out.numel(); ++i) z[i] = x[i] - y[i];
  debug_check_finite(out, "sub");
  if (grad_needed<T>({&a, &b})) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage(), da = a.grad_storage(), db = b.grad_storage();
    int64_t n = out.numel();
    active_tape<T>()->record({&a, &b}, out, [=] {
      if (da) detail::axpy(da->data(), dz->data(), n);
      if (db) detail::axpy(db->data(), dz->data(), n, T(-1));
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  auto x = a.values(), y = b.values();
  auto z = out.raw();
  for (int64_t i = 0; i < out.numel(); ++i) z[i] = x[i] * y[i];
  debug_check_finite(out, "mul");
  if (grad_needed<T>({&a, &b})) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage(), da = a.grad_storage(), db = b.grad_storage();
    auto xs = a.storage(), ys = b.storage();
    int64_t n = out.numel();
    active_tape<T>()->record({&a, &b}, out, [=] {
      if (da)
        for (int64_t i = 0; i < n; ++i) (*da)[i] += (*dz)[i] * (*ys)[i];
      if (db)
        for (int64_t i = 0; i < n; ++i) (*db)[i] += (*dz)[i] * (*xs)[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  Tensor<T> out(a.shape());
  auto x = a.values();
  auto z = out.raw();
  for (int64_t i = 0; i < out.numel(); ++i) z[i] = c * x[i];
  debug_check_finite(out, "scale");
  if (grad_needed<T>({&a})) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage(), da = a.grad_storage();
    int64_t n = out.numel();
    active_tape<T>()->record({&a}, out, [=] { detail::axpy(da->data(), dz->data(), n, c); });
  }
  return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  Tensor<T> out(a.shape());
  auto x = a.values();
  auto z = out.raw();
  for (int64_t i = 0; i < out.numel(); ++i) z[i] = x[i] + c;
  debug_check_finite(out, "add_scalar");
  if (grad_needed<T>({&a})) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage(), da = a.grad_storage();
    int64_t n = out.numel();
    active_tape<T>()->record({&a}, out, [=] { detail::axpy(da->data(), dz->data(), n); });
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  auto x = a.values();
  auto z = out.raw();
  for (int64_t i = 0; i < out.numel(); ++i) z[i] = x[i] > T(0) ? x[i] : T(0);
  debug_check_finite(out, "relu");
  if (grad_needed<T>({&a})) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage(), da = a.grad_storage();
    auto xs = a.storage();
    int64_t n = out.numel();
    active_tape<T>()->record({&a}, out, [=] {
      for (int64_t i = 0; i < n; ++i)
        if ((*xs)[i] > T(0)) (*da)[i] += (*dz)[i];
    });
  }
  return out;
}

// x * Phi(x) with the exact Gaussian CDF.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  auto x = a.values();
  auto z = out.raw();
  const T inv_sqrt2 = T(0.7071067811865475244);
  for (int64_t i = 0; i < out.numel(); ++i)
    z[i] = x[i] * T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
  debug_check_finite(out, "gelu");
  if (grad_needed<T>({&a})) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage(), da = a.grad_storage();
    auto xs = a.storage();
    int64_t n = out.numel();
    active_tape<T>()->record({&a}, out, [=] {
      const T is2 = T(0.7071067811865475244);
      const T inv_sqrt2pi = T(0.3989422804014326779);
      for (int64_t i = 0; i < n; ++i) {
        T v = (*xs)[i];
        T cdf = T(0.5) * (T(1) + std::erf(v * is2));
        T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
        (*da)[i] += (*dz)[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  auto x = a.values();
  auto z = out.raw();
  for (int64_t i = 0; i < out.numel(); ++i) {
    T v = x[i];
    z[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  debug_check_finite(out, "sigmoid");
  if (grad_needed<T>({&a})) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage(), da = a.grad_storage();
    auto zs = out.storage();
    int64_t n = out.numel();
    active_tape<T>()->record({&a}, out, [=] {
      for (int64_t i = 0; i < n; ++i) {
        T s = (*zs)[i];
        (*da)[i] += (*dz)[i] * s * (T(1) - s);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape movement
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.numel())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(new_shape) +
                         " changes element count");
  Tensor<T> out(std::move(new_shape));
  std::copy(a.values().begin(), a.values().end(), out.raw().begin());
  if (grad_needed<T>({&a})) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage(), da = a.grad_storage();
    int64_t n = out.numel();
    active_tape<T>()->record({&a}, out, [=] { detail::axpy(da->data(), dz->data(), n); });
  }
  return out;
}

// Materializing axis permutation (views copy; desk-scale sizes keep this cheap).
template <typename T>
Tensor<T> permute(const Tensor<T>& a, std::vector<int64_t> axes) {
  int64_t rank = a.rank();
  if (static_cast<int64_t>(axes.size()) != rank)
    throw DimensionError("permute: axes count " + std::to_string(axes.size()) + " vs rank " +
                         std::to_string(rank));
  std::vector<bool> seen(rank, false);
  for (int64_t ax : axes) {
    if (ax < 0 || ax >= rank || seen[ax]) throw DimensionError("permute: invalid axes");
    seen[ax] = true;
  }
  Shape out_shape(rank);
  for (int64_t i = 0; i < rank; ++i) out_shape[i] = a.shape()[axes[i]];
  Tensor<T> out(out_shape);
  detail::permute_copy(a.values().data(), out.raw().data(), a.shape(), axes, false);
  if (grad_needed<T>({&a})) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage(), da = a.grad_storage();
    // unit step along output axis i moves along input axis axes[i]
    std::vector<int64_t> inv(rank);
    for (int64_t i = 0; i < rank; ++i) inv[axes[i]] = i;
    Shape oshape = out.shape();
    active_tape<T>()->record({&a}, out, [=] {
      detail::permute_copy(dz->data(), da->data(), oshape, inv, true);
    });
  }
  return out;
}

// Concatenate along `axis`; extents elsewhere must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int64_t axis) {
  if (parts.empty()) throw ContractError("concat: empty input list");
  const Shape& s0 = parts[0].shape();
  int64_t rank = static_cast<int64_t>(s0.size());
  if (axis < 0 || axis >= rank) throw DimensionError("concat: axis out of range");
  int64_t total_axis = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw DimensionError("concat: rank mismatch");
    for (int64_t i = 0; i < rank; ++i)
      if (i != axis && p.shape()[i] != s0[i])
        throw DimensionError("concat: extent mismatch at axis " + std::to_string(i));
    total_axis += p.shape()[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = total_axis;
  Tensor<T> out(out_shape);

  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= s0[i];
  for (int64_t i = axis + 1; i < rank; ++i) inner *= s0[i];
  T* dst = out.raw().data();
  int64_t out_row = total_axis * inner;
  int64_t offset = 0;
  for (const auto& p : parts) {
    int64_t chunk = p.shape()[axis] * inner;
    const T* src = p.values().data();
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(dst + o * out_row + offset, src + o * chunk, sizeof(T) * chunk);
    offset += chunk;
  }

  bool need = false;
  for (const auto& p : parts)
    if (p.requires_grad()) need = true;
  if (need && active_tape<T>() != nullptr) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage();
    struct Piece {
      std::shared_ptr<std::vector<T>> grad;
      int64_t offset, chunk;
    };
    std::vector<Piece> pieces;
    int64_t off = 0;
    for (const auto& p : parts) {
      int64_t chunk = p.shape()[axis] * inner;
      pieces.push_back({p.grad_storage(), off, chunk});
      off += chunk;
    }
    std::vector<const Tensor<T>*> ins;
    for (const auto& p : parts) ins.push_back(&p);
    active_tape<T>()->record(ins, out, [=] {
      for (const Piece& pc : pieces) {
        if (!pc.grad) continue;
        for (int64_t o = 0; o < outer; ++o)
          detail::axpy(pc.grad->data() + o * pc.chunk, dz->data() + o * out_row + pc.offset,
                       pc.chunk);
      }
    });
  }
  return out;
}

// out = x[..., start:start+len, ...] along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& a, int64_t axis, int64_t start, int64_t len) {
  int64_t rank = a.rank();
  if (axis < 0 || axis >= rank) throw DimensionError("slice: axis out of range");
  if (start < 0 || len < 1 || start + len > a.shape()[axis])
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") outside extent " +
                         std::to_string(a.shape()[axis]));
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  Tensor<T> out(out_shape);
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= a.shape()[i];
  for (int64_t i = axis + 1; i < rank; ++i) inner *= a.shape()[i];
  int64_t in_row = a.shape()[axis] * inner;
  int64_t out_row = len * inner;
  const T* src = a.values().data();
  T* dst = out.raw().data();
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(dst + o * out_row, src + o * in_row + start * inner, sizeof(T) * out_row);
  if (grad_needed<T>({&a})) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage(), da = a.grad_storage();
    active_tape<T>()->record({&a}, out, [=] {
      for (int64_t o = 0; o < outer; ++o)
        detail::axpy(da->data() + o * in_row + start * inner, dz->data() + o * out_row, out_row);
    });
  }
  return out;
}

// Repeat a tensor with leading extent 1 n times along axis 0.
template <typename T>
Tensor<T> broadcast_rows(const Tensor<T>& a, int64_t n) {
  if (a.rank() < 1 || a.shape()[0] != 1)
    throw DimensionError("broadcast_rows: leading extent must be 1, got " + shape_str(a.shape()));
  Shape out_shape = a.shape();
  out_shape[0] = n;
  Tensor<T> out(out_shape);
  int64_t chunk = a.numel();
  const T* src = a.values().data();
  T* dst = out.raw().data();
  for (int64_t r = 0; r < n; ++r) std::memcpy(dst + r * chunk, src, sizeof(T) * chunk);
  if (grad_needed<T>({&a})) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage(), da = a.grad_storage();
    active_tape<T>()->record({&a}, out, [=] {
      for (int64_t r = 0; r < n; ++r) detail::axpy(da->data(), dz->data() + r * chunk, chunk);
    });
  }
  return out;
}

// y = x + p where p's shape is a trailing suffix of x's (bias addition,
// positional embeddings). Gradient for p sums over the leading replication.
template <typename T>
Tensor<T> add_broadcast_trailing(const Tensor<T>& x, const Tensor<T>& p) {
  int64_t xr = x.rank(), pr = p.rank();
  if (pr > xr) throw DimensionError("add_broadcast_trailing: rank of p exceeds rank of x");
  for (int64_t i = 0; i < pr; ++i)
    if (p.shape()[i] != x.shape()[xr - pr + i])
      throw DimensionError("add_broadcast_trailing: " + shape_str(p.shape()) +
                           " is not a trailing suffix of " + shape_str(x.shape()));
  int64_t pn = p.numel();
  int64_t lead = x.numel() / pn;
  Tensor<T> out(x.shape());
  const T* xs = x.values().data();
  const T* ps = p.values().data();
  T* z = out.raw().data();
  for (int64_t l = 0; l < lead; ++l)
    for (int64_t i = 0; i < pn; ++i) z[l * pn + i] = xs[l * pn + i] + ps[i];
  debug_check_finite(out, "add_broadcast_trailing");
  if (grad_needed<T>({&x, &p})) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage(), dx = x.grad_storage(), dp = p.grad_storage();
    int64_t n = out.numel();
    active_tape<T>()->record({&x, &p}, out, [=] {
      if (dx) detail::axpy(dx->data(), dz->data(), n);
      if (dp)
        for (int64_t l = 0; l < lead; ++l)
          detail::axpy(dp->data(), dz->data() + l * pn, pn);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// contractions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul: expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  int64_t m = a.shape()[0], k = a.shape()[1];
  if (b.shape()[0] != k)
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  int64_t n = b.shape()[1];
  Tensor<T> out({m, n});
  detail::mm_nn(a.values().data(), b.values().data(), out.raw().data(), m, k, n, false);
  debug_check_finite(out, "matmul");
  if (grad_needed<T>({&a, &b})) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage(), da = a.grad_storage(), db = b.grad_storage();
    auto as = a.storage(), bs = b.storage();
    active_tape<T>()->record({&a, &b}, out, [=] {
      if (da) detail::mm_nt(dz->data(), bs->data(), da->data(), m, n, k, true);
      if (db) detail::mm_tn(as->data(), dz->data(), db->data(), k, m, n, true);
    });
  }
  return out;
}

// Batched matmul: [B,m,k] x [B,k,n] -> [B,m,n].
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3)
    throw DimensionError("bmm: expects rank-3 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  int64_t B = a.shape()[0], m = a.shape()[1], k = a.shape()[2];
  if (b.shape()[0] != B || b.shape()[1] != k)
    throw DimensionError("bmm: incompatible " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  int64_t n = b.shape()[2];
  Tensor<T> out({B, m, n});
  for (int64_t i = 0; i < B; ++i)
    detail::mm_nn(a.values().data() + i * m * k, b.values().data() + i * k * n,
                  out.raw().data() + i * m * n, m, k, n, false);
  debug_check_finite(out, "bmm");
  if (grad_needed<T>({&a, &b})) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage(), da = a.grad_storage(), db = b.grad_storage();
    auto as = a.storage(), bs = b.storage();
    active_tape<T>()->record({&a, &b}, out, [=] {
      for (int64_t i = 0; i < B; ++i) {
        const T* dzi = dz->data() + i * m * n;
        if (da) detail::mm_nt(dzi, bs->data() + i * k * n, da->data() + i * m * k, m, n, k, true);
        if (db) detail::mm_tn(as->data() + i * m * k, dzi, db->data() + i * k * n, k, m, n, true);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions and normalization
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.values()) s += v;
  Tensor<T> out = Tensor<T>::scalar(s);
  debug_check_finite(out, "sum_all");
  if (grad_needed<T>({&a})) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage(), da = a.grad_storage();
    int64_t n = a.numel();
    active_tape<T>()->record({&a}, out, [=] {
      T g = (*dz)[0];
      for (int64_t i = 0; i < n; ++i) (*da)[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return scale(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

// exp-normalization along `axis` with max subtraction; rows sum to 1.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int64_t axis) {
  if (axis < 0 || axis >= a.rank())
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(a.shape()));
  int64_t n = a.shape()[axis];
  int64_t inner = 1, outer = 1;
  for (int64_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape()[i];
  for (int64_t i = 0; i < axis; ++i) outer *= a.shape()[i];
  Tensor<T> out(a.shape());
  const T* x = a.values().data();
  T* z = out.raw().data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      int64_t base = o * n * inner + in;
      T mx = x[base];
      for (int64_t i = 1; i < n; ++i) mx = std::max(mx, x[base + i * inner]);
      T denom = 0;
      for (int64_t i = 0; i < n; ++i) {
        T e = std::exp(x[base + i * inner] - mx);
        z[base + i * inner] = e;
        denom += e;
      }
      T inv = T(1) / denom;
      for (int64_t i = 0; i < n; ++i) z[base + i * inner] *= inv;
    }
  }
  debug_check_finite(out, "softmax");
  if (grad_needed<T>({&a})) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage(), da = a.grad_storage();
    auto zs = out.storage();
    active_tape<T>()->record({&a}, out, [=] {
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
          int64_t base = o * n * inner + in;
          T dot = 0;
          for (int64_t i = 0; i < n; ++i) dot += (*dz)[base + i * inner] * (*zs)[base + i * inner];
          for (int64_t i = 0; i < n; ++i) {
            int64_t p = base + i * inner;
            (*da)[p] += (*zs)[p] * ((*dz)[p] - dot);
          }
        }
      }
    });
  }
  return out;
}

// Mean over T,H,W of an [N,C,T,H,W] activation -> [N,C].
template <typename T>
Tensor<T> global_avg_pool3d(const Tensor<T>& a) {
  if (a.rank() != 5) throw DimensionError("global_avg_pool3d: expects [N,C,T,H,W]");
  int64_t N = a.shape()[0], C = a.shape()[1];
  int64_t vol = a.shape()[2] * a.shape()[3] * a.shape()[4];
  Tensor<T> out({N, C});
  const T* x = a.values().data();
  T* z = out.raw().data();
  T inv = T(1) / static_cast<T>(vol);
  for (int64_t nc = 0; nc < N * C; ++nc) {
    T s = 0;
    const T* p = x + nc * vol;
    for (int64_t i = 0; i < vol; ++i) s += p[i];
    z[nc] = s * inv;
  }
  if (grad_needed<T>({&a})) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage(), da = a.grad_storage();
    active_tape<T>()->record({&a}, out, [=] {
      for (int64_t nc = 0; nc < N * C; ++nc) {
        T g = (*dz)[nc] * inv;
        T* p = da->data() + nc * vol;
        for (int64_t i = 0; i < vol; ++i) p[i] += g;
      }
    });
  }
  return out;
}

// Last-axis standardization with learned scale/shift; epsilon guards zero
// variance (constant rows normalize to zero).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
  int64_t d = x.shape()[x.rank() - 1];
  if (gamma.numel() != d || beta.numel() != d)
    throw DimensionError("layer_norm: scale/shift length " + std::to_string(gamma.numel()) +
                         " vs last extent " + std::to_string(d));
  int64_t rows = x.numel() / d;
  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  const T* xs = x.values().data();
  const T* g = gamma.values().data();
  const T* b = beta.values().data();
  T* z = out.raw().data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = xs + r * d;
    T mean = 0;
    for (int64_t i = 0; i < d; ++i) mean += row[i];
    mean /= static_cast<T>(d);
    T var = 0;
    for (int64_t i = 0; i < d; ++i) {
      T c = row[i] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    T inv = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (int64_t i = 0; i < d; ++i) {
      T xh = (row[i] - mean) * inv;
      (*xhat)[r * d + i] = xh;
      z[r * d + i] = g[i] * xh + b[i];
    }
  }
  debug_check_finite(out, "layer_norm");
  if (grad_needed<T>({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage();
    auto dx = x.grad_storage(), dg = gamma.grad_storage(), db = beta.grad_storage();
    auto gs = gamma.storage();
    active_tape<T>()->record({&x, &gamma, &beta}, out, [=] {
      for (int64_t r = 0; r < rows; ++r) {
        int64_t base = r * d;
        T m1 = 0, m2 = 0;
        for (int64_t i = 0; i < d; ++i) {
          T dxh = (*dz)[base + i] * (*gs)[i];
          m1 += dxh;
          m2 += dxh * (*xhat)[base + i];
        }
        m1 /= static_cast<T>(d);
        m2 /= static_cast<T>(d);
        if (dx) {
          T inv = (*inv_std)[r];
          for (int64_t i = 0; i < d; ++i) {
            T dxh = (*dz)[base + i] * (*gs)[i];
            (*dx)[base + i] += inv * (dxh - m1 - (*xhat)[base + i] * m2);
          }
        }
        if (dg)
          for (int64_t i = 0; i < d; ++i) (*dg)[i] += (*dz)[base + i] * (*xhat)[base + i];
        if (db)
          for (int64_t i = 0; i < d; ++i) (*db)[i] += (*dz)[base + i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

struct Conv3dSpec {
  std::array<int64_t, 3> stride{1, 1, 1};  // t, h, w
  std::array<int64_t, 3> pad{0, 0, 0};
};

inline int64_t conv_out_extent(int64_t in, int64_t kernel, int64_t stride, int64_t pad) {
  int64_t out = (in + 2 * pad - kernel) / stride + 1;
  if (out < 1)
    throw DimensionError("convolution output extent < 1 (input " + std::to_string(in) +
                         ", kernel " + std::to_string(kernel) + ")");
  return out;
}

// Direct 3-D convolution: x [N,Cin,T,H,W], w [Cout,Cin,kt,kh,kw],
// optional bias [Cout].
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                 const Conv3dSpec& spec) {
  if (x.rank() != 5 || w.rank() != 5)
    throw DimensionError("conv3d: expects x [N,Cin,T,H,W] and w [Cout,Cin,kt,kh,kw]");
  int64_t N = x.shape()[0], Cin = x.shape()[1], Ti = x.shape()[2], Hi = x.shape()[3],
          Wi = x.shape()[4];
  int64_t Cout = w.shape()[0], kt = w.shape()[2], kh = w.shape()[3], kw = w.shape()[4];
  if (w.shape()[1] != Cin)
    throw DimensionError("conv3d: channel mismatch, input " + std::to_string(Cin) + " vs kernel " +
                         std::to_string(w.shape()[1]));
  if (bias && bias->numel() != Cout) throw DimensionError("conv3d: bias length != Cout");
  auto [st, sh, sw] = spec.stride;
  auto [pt, ph, pw] = spec.pad;
  int64_t To = conv_out_extent(Ti, kt, st, pt);
  int64_t Ho = conv_out_extent(Hi, kh, sh, ph);
  int64_t Wo = conv_out_extent(Wi, kw, sw, pw);
  Tensor<T> out({N, Cout, To, Ho, Wo});

  const T* xp = x.values().data();
  const T* wp = w.values().data();
  const T* bp = bias ? bias->values().data() : nullptr;
  T* zp = out.raw().data();
  int64_t x_c = Ti * Hi * Wi, x_n = Cin * x_c;
  int64_t w_c = kt * kh * kw, w_co = Cin * w_c;
  int64_t z_c = To * Ho * Wo, z_n = Cout * z_c;

  for (int64_t n = 0; n < N; ++n)
    for (int64_t co = 0; co < Cout; ++co)
      for (int64_t to = 0; to < To; ++to)
        for (int64_t ho = 0; ho < Ho; ++ho)
          for (int64_t wo = 0; wo < Wo; ++wo) {
            T acc = bp ? bp[co] : T(0);
            int64_t t0 = to * st - pt, h0 = ho * sh - ph, w0 = wo * sw - pw;
            for (int64_t ci = 0; ci < Cin; ++ci) {
              const T* xc = xp + n * x_n + ci * x_c;
              const T* wc = wp + co * w_co + ci * w_c;
              for (int64_t i = 0; i < kt; ++i) {
                int64_t ti = t0 + i;
                if (ti < 0 || ti >= Ti) continue;
                for (int64_t j = 0; j < kh; ++j) {
                  int64_t hi = h0 + j;
                  if (hi < 0 || hi >= Hi) continue;
                  for (int64_t k = 0; k < kw; ++k) {
                    int64_t wi = w0 + k;
                    if (wi < 0 || wi >= Wi) continue;
                    acc += xc[(ti * Hi + hi) * Wi + wi] * wc[(i * kh + j) * kw + k];
                  }
                }
              }
            }
            zp[n * z_n + co * z_c + (to * Ho + ho) * Wo + wo] = acc;
          }
  debug_check_finite(out, "conv3d");

  bool need = bias ? grad_needed<T>({&x, &w, bias}) : grad_needed<T>({&x, &w});
  if (need) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage();
    auto dx = x.grad_storage(), dw = w.grad_storage();
    auto db = bias ? bias->grad_storage() : nullptr;
    auto xs = x.storage(), ws = w.storage();
    auto rule = [=] {
      for (int64_t n = 0; n < N; ++n)
        for (int64_t co = 0; co < Cout; ++co)
          for (int64_t to = 0; to < To; ++to)
            for (int64_t ho = 0; ho < Ho; ++ho)
              for (int64_t wo = 0; wo < Wo; ++wo) {
                T g = (*dz)[n * z_n + co * z_c + (to * Ho + ho) * Wo + wo];
                if (g == T(0)) continue;
                if (db) (*db)[co] += g;
                int64_t t0 = to * st - pt, h0 = ho * sh - ph, w0 = wo * sw - pw;
                for (int64_t ci = 0; ci < Cin; ++ci) {
                  const T* xc = xs->data() + n * x_n + ci * x_c;
                  const T* wc = ws->data() + co * w_co + ci * w_c;
                  T* dxc = dx ? dx->data() + n * x_n + ci * x_c : nullptr;
                  T* dwc = dw ? dw->data() + co * w_co + ci * w_c : nullptr;
                  for (int64_t i = 0; i < kt; ++i) {
                    int64_t ti = t0 + i;
                    if (ti < 0 || ti >= Ti) continue;
                    for (int64_t j = 0; j < kh; ++j) {
                      int64_t hi = h0 + j;
                      if (hi < 0 || hi >= Hi) continue;
                      for (int64_t k = 0; k < kw; ++k) {
                        int64_t wi = w0 + k;
                        if (wi < 0 || wi >= Wi) continue;
                        int64_t xi = (ti * Hi + hi) * Wi + wi;
                        int64_t wi2 = (i * kh + j) * kw + k;
                        if (dxc) dxc[xi] += wc[wi2] * g;
                        if (dwc) dwc[wi2] += xc[xi] * g;
                      }
                    }
                  }
                }
              }
    };
    if (bias)
      active_tape<T>()->record({&x, &w, bias}, out, std::move(rule));
    else
      active_tape<T>()->record({&x, &w}, out, std::move(rule));
  }
  return out;
}

// ---------------------------------------------------------------------------
// stochastic / loss / diagnostics
// ---------------------------------------------------------------------------

// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
// Identity when p == 0 or not training (returns the input tensor itself,
// bit-exact).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0)
    throw ConfigError("dropout probability " + std::to_string(p) + " outside [0, 1)");
  if (!training || p == 0.0) return x;
  Tensor<T> out(x.shape());
  auto mask = std::make_shared<std::vector<uint8_t>>(x.numel());
  const T keep_scale = T(1.0 / (1.0 - p));
  const T* xs = x.values().data();
  T* z = out.raw().data();
  for (int64_t i = 0; i < x.numel(); ++i) {
    bool keep = !rng.bernoulli(p);
    (*mask)[i] = keep;
    z[i] = keep ? xs[i] * keep_scale : T(0);
  }
  if (grad_needed<T>({&x})) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage(), dx = x.grad_storage();
    int64_t n = x.numel();
    active_tape<T>()->record({&x}, out, [=] {
      for (int64_t i = 0; i < n; ++i)
        if ((*mask)[i]) (*dx)[i] += (*dz)[i] * keep_scale;
    });
  }
  return out;
}

// Mean binary cross-entropy over a probability vector; probabilities are
// clamped to [eps_c, 1-eps_c] so exact hits cannot produce ln(0). Labels are
// constants and must be exactly 0 or 1.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& p, const Tensor<T>& y) {
  detail::check_same_shape(p.shape(), y.shape(), "bce_loss");
  const T eps_c = T(1e-7);
  int64_t n = p.numel();
  const T* ps = p.values().data();
  const T* ys = y.values().data();
  for (int64_t i = 0; i < n; ++i)
    if (ys[i] != T(0) && ys[i] != T(1))
      throw ContractError("bce_loss: label at index " + std::to_string(i) + " is " +
                          std::to_string(static_cast<double>(ys[i])) + ", not 0/1");
  T acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    T pc = std::min(std::max(ps[i], eps_c), T(1) - eps_c);
    acc += ys[i] == T(1) ? -std::log(pc) : -std::log(T(1) - pc);
  }
  Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(n));
  debug_check_finite(out, "bce_loss");
  if (grad_needed<T>({&p})) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage(), dp = p.grad_storage();
    auto pst = p.storage(), yst = y.storage();
    active_tape<T>()->record({&p}, out, [=] {
      T g = (*dz)[0] / static_cast<T>(n);
      for (int64_t i = 0; i < n; ++i) {
        T pv = (*pst)[i];
        if (pv <= eps_c || pv >= T(1) - eps_c) continue;  // clamped: flat
        (*dp)[i] += g * (pv - (*yst)[i]) / (pv * (T(1) - pv));
      }
    });
  }
  return out;
}

// Split each frame of [N,T,C,H,W] into non-overlapping P x P patches:
// output [N*T, S, P*P*C] with S = (H/P)*(W/P), patches in row-major grid
// order and features flattened as (c, py, px).
template <typename T>
Tensor<T> extract_patches(const Tensor<T>& frames, int64_t patch) {
  if (frames.rank() != 5) throw DimensionError("extract_patches: expects [N,T,C,H,W]");
  int64_t N = frames.shape()[0], Tn = frames.shape()[1], C = frames.shape()[2],
          H = frames.shape()[3], W = frames.shape()[4];
  if (patch < 1 || H % patch != 0 || W % patch != 0)
    throw ConfigError("patch size " + std::to_string(patch) + " does not divide H=" +
                      std::to_string(H) + ", W=" + std::to_string(W));
  int64_t gh = H / patch, gw = W / patch;
  int64_t S = gh * gw;
  int64_t F = patch * patch * C;
  Tensor<T> out({N * Tn, S, F});
  const T* src = frames.values().data();
  T* dst = out.raw().data();
  int64_t frame_sz = C * H * W;
  for (int64_t f = 0; f < N * Tn; ++f) {
    const T* fp = src + f * frame_sz;
    for (int64_t gy = 0; gy < gh; ++gy)
      for (int64_t gx = 0; gx < gw; ++gx) {
        T* tok = dst + (f * S + gy * gw + gx) * F;
        for (int64_t c = 0; c < C; ++c)
          for (int64_t py = 0; py < patch; ++py)
            for (int64_t px = 0; px < patch; ++px)
              tok[(c * patch + py) * patch + px] =
                  fp[c * H * W + (gy * patch + py) * W + (gx * patch + px)];
      }
  }
  if (grad_needed<T>({&frames})) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage(), dx = frames.grad_storage();
    active_tape<T>()->record({&frames}, out, [=] {
      for (int64_t f = 0; f < N * Tn; ++f) {
        T* fp = dx->data() + f * frame_sz;
        for (int64_t gy = 0; gy < gh; ++gy)
          for (int64_t gx = 0; gx < gw; ++gx) {
            const T* tok = dz->data() + (f * S + gy * gw + gx) * F;
            for (int64_t c = 0; c < C; ++c)
              for (int64_t py = 0; py < patch; ++py)
                for (int64_t px = 0; px < patch; ++px)
                  fp[c * H * W + (gy * patch + py) * W + (gx * patch + px)] +=
                      tok[(c * patch + py) * patch + px];
          }
      }
    });
  }
  return out;
}

namespace testing {
// Fault-injection switch for the gradcheck CLI: when enabled, sign_flip()
// negates the gradient it passes through.
inline bool& sign_flip_enabled() {
  static bool flag = false;
  return flag;
}
}  // namespace testing

// Identity forward; backward negates when the injection switch is on.
template <typename T>
Tensor<T> sign_flip_probe(const Tensor<T>& x) {
  if (!testing::sign_flip_enabled()) return x;
  Tensor<T> out(x.shape());
  std::copy(x.values().begin(), x.values().end(), out.raw().begin());
  if (grad_needed<T>({&x})) {
    out.set_requires_grad(true);
    auto dz = out.grad_storage(), dx = x.grad_storage();
    int64_t n = x.numel();
    active_tape<T>()->record({&x}, out, [=] { detail::axpy(dx->data(), dz->data(), n, T(-1)); });
  }
  return out;
}

}  // namespace vf
