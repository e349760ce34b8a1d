#include "homsurro/ndcore/tape.hpp"

#include <cassert>
#include <stdexcept>

namespace homsurro::ndcore {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) {
    if (e == 0) throw std::invalid_argument("zero extent in shape");
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1), this};
}

Var Tape::leaf(Tensor value, bool needs_grad) {
  Node n;
  n.owned = std::move(value);
  n.needs_grad = needs_grad;
  return push(std::move(n));
}

Var Tape::shared_leaf(const Tensor* value, bool needs_grad) {
  Node n;
  n.external = value;
  n.needs_grad = needs_grad;
  return push(std::move(n));
}

Var Tape::emit(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (const Var& in : inputs) {
    assert(!in.valid() || in.tape == this);
    if (in.valid() && nodes_[in.id].needs_grad) needs = true;
  }
  Node n;
  n.owned = std::move(value);
  n.needs_grad = needs;
  Var out = push(std::move(n));
  if (needs) records_.push_back({out.id, std::move(fn)});
  return out;
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id];
  if (!n.touched) {
    n.grad = Tensor(value(v).shape());
    n.touched = true;
  }
  return n.grad;
}

void Tape::backward(Var loss, double seed) {
  if (ran_backward_) throw std::logic_error("tape backward ran twice");
  if (value(loss).numel() != 1)
    throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                shape_str(value(loss).shape()));
  ran_backward_ = true;
  grad_buffer(loss)[0] = seed;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    const Node& out = nodes_[it->out];
    if (!out.touched) continue;  // nothing downstream consumed this node
    it->fn(*this, out.grad);
  }
}

}  // namespace homsurro::ndcore
