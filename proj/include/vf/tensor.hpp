#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vf/errors.hpp"

namespace vf {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline void check_shape_valid(const Shape& s) {
  for (int64_t e : s)
    if (e <= 0) throw DimensionError("non-positive extent in shape " + shape_str(s));
}

// N-dimensional array with row-major contiguous storage. Value type: copies
// share the underlying buffer and are cheap; buffers are never mutated after
// an op produces them (the optimizer updates parameters in place between
// tapes, which is the one sanctioned exception).
//
// A tensor flagged requires_grad owns a same-shape gradient buffer that the
// tape accumulates into during backward(). The flag is set explicitly on
// leaves (parameters, checked inputs) and propagates to op results while a
// tape is active.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor is float or double");

 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape_valid(shape_);
    data_ = std::make_shared<std::vector<T>>(shape_numel(shape_), T(0));
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)) {
    check_shape_valid(shape_);
    if (shape_numel(shape_) != static_cast<int64_t>(data.size()))
      throw DimensionError("data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape_));
    data_ = std::make_shared<std::vector<T>>(std::move(data));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), value);
    return t;
  }

  static Tensor scalar(T value) { return full({1}, value); }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t numel() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

  int64_t extent(int64_t axis) const {
    if (axis < 0 || axis >= rank())
      throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
    return shape_[axis];
  }

  std::span<const T> values() const { return {data_->data(), data_->size()}; }

  // In-place access; reserved for construction, loaders and the optimizer.
  std::span<T> raw() { return {data_->data(), data_->size()}; }

  T item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape_));
    return (*data_)[0];
  }

  bool requires_grad() const { return requires_grad_; }

  Tensor& set_requires_grad(bool flag) {
    requires_grad_ = flag;
    if (flag && !grad_) grad_ = std::make_shared<std::vector<T>>(data_->size(), T(0));
    return *this;
  }

  bool has_grad() const { return grad_ != nullptr; }

  std::span<const T> grad() const {
    if (!grad_) throw ContractError("grad() on tensor without gradient buffer");
    return {grad_->data(), grad_->size()};
  }

  std::span<T> grad_raw() {
    if (!grad_) throw ContractError("grad_raw() on tensor without gradient buffer");
    return {grad_->data(), grad_->size()};
  }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
  }

  // Storage handles used by the tape for identity and keep-alive.
  const std::shared_ptr<std::vector<T>>& storage() const { return data_; }
  const std::shared_ptr<std::vector<T>>& grad_storage() const { return grad_; }

  bool finite() const {
    for (T v : *data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  std::shared_ptr<std::vector<T>> grad_;
  bool requires_grad_ = false;
};

// Forward-op postcondition check: finite outputs given finite inputs.
// Active in test/debug profiles only; training builds skip it.
#if defined(VF_CHECK_FINITE)
template <typename T>
inline void debug_check_finite(const Tensor<T>& t, const char* op) {
  if (!t.finite()) throw ContractError(std::string("non-finite values produced by ") + op);
}
#else
template <typename T>
inline void debug_check_finite(const Tensor<T>&, const char*) {}
#endif

}  // namespace vf
