#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "homsurro/ndcore/tensor.hpp"

namespace homsurro::ndcore {

class Tape;

/// Handle to a node on a tape. Default-constructed handles are invalid and
/// stand for "absent" optional inputs (no bias, no context).
struct Var {
  std::uint32_t id = 0;
  Tape* tape = nullptr;
  bool valid() const { return tape != nullptr; }
};

/// Record of a forward computation. Node values are immutable once written;
/// backward() replays the records in reverse, visiting each exactly once.
/// A tape is single-threaded; data parallelism uses independent tapes.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// New node owning `value`.
  Var leaf(Tensor value, bool needs_grad = false);

  /// New node referencing externally owned storage (model parameters).
  /// The pointee must stay alive and unmodified for the tape's lifetime.
  Var shared_leaf(const Tensor* value, bool needs_grad = true);

  const Tensor& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.external ? *n.external : n.owned;
  }

  /// Gradient accumulated for `v`; empty tensor if backward never reached it.
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }

  bool wants_grad(Var v) const { return nodes_[v.id].needs_grad; }

  /// Reverse pass from a scalar `loss`. `seed` scales the root gradient
  /// (per-record weight when a batch loss is averaged outside the tape).
  void backward(Var loss, double seed = 1.0);

  std::size_t size() const { return nodes_.size(); }

  // -- recording interface used by the op library --------------------------

  /// Emit an op output node. `fn` receives the output gradient and must
  /// accumulate into the inputs via grad_buffer(). The record is dropped
  /// when no input wants a gradient.
  Var emit(Tensor value, std::span<const Var> inputs, BackwardFn fn);

  /// Zero-initialized gradient accumulator for `v`.
  Tensor& grad_buffer(Var v);

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    bool needs_grad = false;
    bool touched = false;
  };
  struct Record {
    std::uint32_t out;
    BackwardFn fn;
  };

  Var push(Node n);

  std::vector<Node> nodes_;
  std::vector<Record> records_;
  bool ran_backward_ = false;
};

}  // namespace homsurro::ndcore
