#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "homsurro/ndcore/tape.hpp"

namespace homsurro::ndcore {

/// Named handle to a persistent model tensor. Non-trainable entries
/// (running statistics) are serialized but excluded from optimization.
struct ParamRef {
  std::string name;
  Tensor* tensor = nullptr;
  bool trainable = true;
};

/// Binds persistent parameter tensors to nodes of one tape. Repeated use of
/// the same tensor returns the same node, so its gradient accumulates in one
/// place. With track_grads = false the forward is recorded without any
/// backward bookkeeping (evaluation mode).
class Binder {
 public:
  explicit Binder(Tape& tape, bool track_grads = true)
      : tape_(&tape), track_(track_grads) {}

  Tape& tape() { return *tape_; }

  Var use(const Tensor& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return it->second;
    Var v = tape_->shared_leaf(&p, track_);
    bound_.emplace(&p, v);
    return v;
  }

  Var constant(Tensor v) { return tape_->leaf(std::move(v), false); }

  Var input(Tensor v, bool needs_grad) {
    return tape_->leaf(std::move(v), needs_grad);
  }

  /// Gradient accumulated for `p` after backward; nullptr when the tensor
  /// was never used or backward did not reach it.
  const Tensor* grad(const Tensor& p) const {
    auto it = bound_.find(&p);
    if (it == bound_.end()) return nullptr;
    const Tensor& g = tape_->grad(it->second);
    return g.numel() > 0 ? &g : nullptr;
  }

 private:
  Tape* tape_;
  bool track_;
  std::unordered_map<const Tensor*, Var> bound_;
};

}  // namespace homsurro::ndcore
