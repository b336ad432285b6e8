#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "attrcenter/autodiff/tensor.hpp"

namespace attrcenter::ad {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid until the
/// owning tape is cleared or destroyed.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor& grad() const;
  bool has_grad() const;
  bool requires_grad() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Eager reverse-mode tape. Each primitive appends a node holding its output
/// value and a closure that propagates the node's gradient to its inputs.
/// A tape is single-threaded; independent tapes share no state.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Populates grad for every node with requires_grad, reachable or not.
  void backward(Var loss);

  void clear();
  std::size_t size() const { return nodes_.size(); }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const Tensor& grad(std::size_t id) const;
  bool has_grad(std::size_t id) const { return nodes_.at(id).has_grad; }

  /// Gradient buffer for `id`, zero-initialised on first access. Only
  /// meaningful for nodes with requires_grad; used by backward closures.
  Tensor& grad_buffer(std::size_t id);

  /// Appends an op output. `inputs` are the operand ids; the closure is kept
  /// only when some operand requires a gradient.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  /// Running hash of the branch pattern taken by piecewise ops (ReLU, hinge,
  /// max-pool). Two evaluations with equal signatures took the same branches.
  std::uint64_t kink_signature() const { return kink_hash_; }
  void mix_kink(std::uint64_t bits);
  bool tracks_kinks() const { return track_kinks_; }
  void set_track_kinks(bool on) { track_kinks_ = on; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  Var make_var(std::size_t id) { return Var(this, id); }

  std::vector<Node> nodes_;
  std::uint64_t kink_hash_ = 1469598103934665603ULL;
  bool backward_done_ = false;
  bool track_kinks_ = false;
};

/// Packs per-element branch bits 64 at a time into a tape's kink signature.
class KinkRecorder {
 public:
  explicit KinkRecorder(Tape& tape) : tape_(tape.tracks_kinks() ? &tape : nullptr) {}
  ~KinkRecorder() { flush(); }
  KinkRecorder(const KinkRecorder&) = delete;
  KinkRecorder& operator=(const KinkRecorder&) = delete;

  bool active() const { return tape_ != nullptr; }
  void push(bool bit) {
    if (!tape_) return;
    word_ |= static_cast<std::uint64_t>(bit) << count_;
    if (++count_ == 64) flush();
  }
  void push_value(std::uint64_t v) {
    if (tape_) tape_->mix_kink(v);
  }

 private:
  void flush() {
    if (tape_ && count_) tape_->mix_kink(word_);
    word_ = 0;
    count_ = 0;
  }
  Tape* tape_;
  std::uint64_t word_ = 0;
  unsigned count_ = 0;
};

}  // namespace attrcenter::ad
