#pragma once

#include <cstdint>
#include <functional>
#include <iostream>
#include <memory>
#include <unordered_map>
#include <vector>

#include "vf/tensor.hpp"

namespace vf {

// Reverse-mode tape. One tape per forward pass, confined to the thread that
// builds it, discarded after backward().
//
// Node ids increase monotonically and every input of node k is recorded
// before k, so running the rules in reverse id order visits each node exactly
// once with its output gradient fully accumulated beforehand.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Id of `t` on this tape, registering it as a leaf if unseen. Buffer
  // identity keys the lookup; node records keep buffers alive, so an address
  // cannot be reused by a different tensor while the tape exists.
  int64_t leaf_id(const Tensor<T>& t) {
    auto it = index_.find(t.storage().get());
    if (it != index_.end()) return it->second;
    if (!t.has_grad())
      throw ContractError("tensor participates in autodiff without a gradient buffer");
    Node node;
    node.value = t.storage();
    node.grad = t.grad_storage();
    int64_t id = static_cast<int64_t>(nodes_.size());
    nodes_.push_back(std::move(node));
    index_.emplace(t.storage().get(), id);
    return id;
  }

  // Record `out = op(inputs...)` with its backward rule. `grad_inputs` lists
  // the inputs that require grad; constants are simply not registered.
  void record(std::initializer_list<const Tensor<T>*> grad_inputs, Tensor<T>& out,
              std::function<void()> backward_rule) {
    record(std::vector<const Tensor<T>*>(grad_inputs), out, std::move(backward_rule));
  }

  void record(const std::vector<const Tensor<T>*>& grad_inputs, Tensor<T>& out,
              std::function<void()> backward_rule) {
    Node node;
    node.inputs.reserve(grad_inputs.size());
    for (const Tensor<T>* in : grad_inputs)
      if (in->requires_grad()) node.inputs.push_back(leaf_id(*in));
    out.set_requires_grad(true);
    node.value = out.storage();
    node.grad = out.grad_storage();
    node.backward = std::move(backward_rule);
    int64_t id = static_cast<int64_t>(nodes_.size());
#ifndef NDEBUG
    for (int64_t in : node.inputs)
      if (in >= id) throw ContractError("tape topological order violated");
#endif
    nodes_.push_back(std::move(node));
    index_.emplace(out.storage().get(), id);
  }

  bool contains(const Tensor<T>& t) const {
    return index_.count(t.storage().get()) > 0;
  }

  int64_t size() const { return static_cast<int64_t>(nodes_.size()); }

  // Propagate d(loss)/d(node) through the tape; leaf gradients accumulate
  // additively into the leaves' own buffers. Single-shot.
  void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1)
      throw ContractError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    if (consumed_) throw ContractError("backward() called twice on one tape");
    consumed_ = true;
    auto it = index_.find(loss.storage().get());
    if (it == index_.end()) {
      std::cerr << "vf: warning: loss is detached from the tape; all gradients stay zero\n";
      return;
    }
    (*nodes_[it->second].grad)[0] = T(1);
    for (int64_t k = static_cast<int64_t>(nodes_.size()) - 1; k >= 0; --k) {
      if (nodes_[k].backward) nodes_[k].backward();
    }
  }

 private:
  struct Node {
    std::vector<int64_t> inputs;
    std::function<void()> backward;  // empty for leaves
    std::shared_ptr<std::vector<T>> value;
    std::shared_ptr<std::vector<T>> grad;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const void*, int64_t> index_;
  bool consumed_ = false;
};

template <typename T>
inline Tape<T>*& active_tape() {
  thread_local Tape<T>* current = nullptr;
  return current;
}

// RAII activation of a tape on the current thread.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(active_tape<T>()) { active_tape<T>() = &tape; }
  ~TapeScope() { active_tape<T>() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

template <typename T>
inline void backward(Tape<T>& tape, const Tensor<T>& loss) {
  tape.backward(loss);
}

// True when the result of an op over these inputs must be recorded.
template <typename T>
inline bool grad_needed(std::initializer_list<const Tensor<T>*> inputs) {
  if (active_tape<T>() == nullptr) return false;
  for (const Tensor<T>* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

}  // namespace vf
