#include "attrcenter/autodiff/tape.hpp"

#include <stdexcept>

namespace attrcenter::ad {

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("use of unbound Var");
  return tape_->value(id_);
}

const Tensor& Var::grad() const {
  if (!tape_) throw std::logic_error("use of unbound Var");
  return tape_->grad(id_);
}

bool Var::has_grad() const { return tape_ && tape_->has_grad(id_); }
bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NumericError("leaf tensor " + shape_str(value.shape()) + " has non-finite values");
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return make_var(nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (auto id : inputs) {
    if (id >= nodes_.size()) throw std::logic_error("op operand is not on this tape");
    node.requires_grad = node.requires_grad || nodes_[id].requires_grad;
  }
  node.inputs = std::move(inputs);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return make_var(nodes_.size() - 1);
}

const Tensor& Tape::grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  if (!n.requires_grad) throw std::logic_error("grad requested for a tensor that does not require grad");
  if (!n.has_grad) throw std::logic_error("grad requested before backward()");
  return n.grad;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (nodes_.empty()) throw std::logic_error("backward() on an empty tape");
  if (&loss.tape() != this) throw std::logic_error("loss was recorded on a different tape");
  const Tensor& lv = nodes_.at(loss.id()).value;
  if (lv.numel() != 1) throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(lv.shape()));
  if (backward_done_) throw std::logic_error("backward() already ran on this tape; clear() it first");
  backward_done_ = true;

  if (nodes_[loss.id()].requires_grad) {
    grad_buffer(loss.id())[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.has_grad && n.backward) n.backward(*this, i);
    }
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].requires_grad) grad_buffer(i);
  }
}

void Tape::clear() {
  nodes_.clear();
  kink_hash_ = 1469598103934665603ULL;
  backward_done_ = false;
}

void Tape::mix_kink(std::uint64_t bits) {
  // FNV-1a over the 8 bytes of `bits`.
  for (int b = 0; b < 8; ++b) {
    kink_hash_ ^= (bits >> (8 * b)) & 0xffU;
    kink_hash_ *= 1099511628211ULL;
  }
}

}  // namespace attrcenter::ad
