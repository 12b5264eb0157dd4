#pragma once

#include "cosparse/tensor.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace cosparse {

class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Shared handle to a value buffer plus a lazily allocated gradient buffer.
/// Copies alias the same node, which is how parameters flow through the tape.
template <typename Scalar>
class DiffTensor {
 public:
  DiffTensor() = default;

  static DiffTensor constant(Tensor<Scalar> value) { return DiffTensor(std::move(value), false); }
  static DiffTensor parameter(Tensor<Scalar> value) { return DiffTensor(std::move(value), true); }

  explicit operator bool() const { return node_ != nullptr; }
  bool same_node(const DiffTensor& other) const { return node_ == other.node_; }

  const Tensor<Scalar>& value() const { return node().value; }
  Tensor<Scalar>& mutable_value() { return node().value; }
  const Shape& shape() const { return node().value.shape(); }
  Index size() const { return node().value.size(); }

  bool requires_grad() const { return node().requires_grad; }
  bool has_grad() const { return node().grad_allocated; }

  const Tensor<Scalar>& grad() const {
    if (!has_grad()) throw AutodiffError("grad read before any backward pass reached this tensor");
    return node().grad;
  }

  /// Allocates the gradient on first use; only legal for requires_grad tensors.
  Tensor<Scalar>& grad_buffer() const {
    auto& n = node();
    if (!n.requires_grad) throw AutodiffError("gradient requested for a non-differentiable tensor");
    if (!n.grad_allocated) {
      n.grad = Tensor<Scalar>::zeros(n.value.shape());
      n.grad_allocated = true;
    }
    return n.grad;
  }

  void zero_grad() {
    if (node().grad_allocated) node().grad.set_zero();
  }

  DiffTensor detached_copy() const {
    return DiffTensor(node().value, node().requires_grad);
  }

 private:
  struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    bool requires_grad = false;
    bool grad_allocated = false;
  };

  DiffTensor(Tensor<Scalar> value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  Node& node() const {
    if (!node_) throw AutodiffError("use of an empty DiffTensor handle");
    return *node_;
  }

  std::shared_ptr<Node> node_;

  template <typename>
  friend class Tape;
};

/// Ordered record of executed differentiable ops. A non-recording tape is
/// used for inference: ops still compute values but nothing is retained.
template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor<Scalar>& grad_out)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape inference() { return Tape(false); }

  bool recording() const { return recording_; }
  bool consumed() const { return consumed_; }
  std::size_t size() const { return entries_.size(); }

  /// Output tensor for an op over `inputs`: differentiable iff recording and
  /// any input is differentiable.
  DiffTensor<Scalar> make_output(Tensor<Scalar> value,
                                 std::initializer_list<const DiffTensor<Scalar>*> inputs) const {
    return DiffTensor<Scalar>(std::move(value), needs_grad(inputs));
  }

  bool needs_grad(std::initializer_list<const DiffTensor<Scalar>*> inputs) const {
    if (!recording_) return false;
    for (const auto* in : inputs) {
      if (in != nullptr && *in && in->requires_grad()) return true;
    }
    return false;
  }

  void record(std::string op, std::vector<DiffTensor<Scalar>> inputs, DiffTensor<Scalar> output,
              BackwardFn fn) {
    if (!recording_ || !output.requires_grad()) return;
    if (consumed_) throw AutodiffError("record on a consumed tape; clear() it first");
    std::erase_if(inputs, [](const DiffTensor<Scalar>& t) { return !t || !t.requires_grad(); });
    entries_.push_back({std::move(op), std::move(inputs), std::move(output), std::move(fn)});
  }

  /// Differentiable tensors read by recorded ops but produced by none of them.
  std::vector<DiffTensor<Scalar>> leaves() const;

  void clear() {
    entries_.clear();
    consumed_ = false;
    nonsmooth_digest_ = kDigestSeed;
  }

  /// Hash of every branch decision (rectifier signs, pool argmaxes) taken
  /// while recording or evaluating. Finite-difference checks compare it to
  /// detect perturbations that straddle a kink.
  std::uint64_t nonsmooth_digest() const { return nonsmooth_digest_; }
  void mix_nonsmooth(const void* bytes, std::size_t n);

 private:
  static constexpr std::uint64_t kDigestSeed = 1469598103934665603ULL;

  struct Entry {
    std::string op;
    std::vector<DiffTensor<Scalar>> inputs;
    DiffTensor<Scalar> output;
    BackwardFn fn;
  };

  bool recording_;
  bool consumed_ = false;
  std::vector<Entry> entries_;
  std::uint64_t nonsmooth_digest_ = kDigestSeed;

  template <typename S>
  friend void backward(Tape<S>& tape, const DiffTensor<S>& loss);
};

/// Reverse sweep from a scalar loss. Gradients accumulate into leaves; the
/// tape is consumed and must be cleared before reuse.
template <typename Scalar>
void backward(Tape<Scalar>& tape, const DiffTensor<Scalar>& loss);

template <typename Scalar>
std::vector<DiffTensor<Scalar>> Tape<Scalar>::leaves() const {
  std::vector<DiffTensor<Scalar>> out;
  auto contains = [](const std::vector<DiffTensor<Scalar>>& v, const DiffTensor<Scalar>& t) {
    for (const auto& x : v) {
      if (x.same_node(t)) return true;
    }
    return false;
  };
  std::vector<DiffTensor<Scalar>> produced;
  produced.reserve(entries_.size());
  for (const auto& e : entries_) produced.push_back(e.output);
  for (const auto& e : entries_) {
    for (const auto& in : e.inputs) {
      if (!contains(produced, in) && !contains(out, in)) out.push_back(in);
    }
  }
  return out;
}

template <typename Scalar>
void Tape<Scalar>::mix_nonsmooth(const void* bytes, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    nonsmooth_digest_ ^= p[i];
    nonsmooth_digest_ *= 1099511628211ULL;
  }
}

template <typename Scalar>
void backward(Tape<Scalar>& tape, const DiffTensor<Scalar>& loss) {
  if (tape.consumed_) throw AutodiffError("backward: tape already consumed");
  if (!loss || loss.size() != 1) {
    throw AutodiffError("backward: loss must be a scalar, got shape " +
                        (loss ? to_string(loss.shape()) : std::string("<empty>")));
  }
  bool produced = false;
  for (const auto& e : tape.entries_) {
    if (e.output.same_node(loss)) {
      produced = true;
      break;
    }
  }
  if (!produced) throw AutodiffError("backward: loss was not produced under this tape");

  DiffTensor<Scalar> seed = loss;
  seed.grad_buffer()[0] += Scalar(1);
  for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->fn(it->output.grad());
  }
  tape.consumed_ = true;
}

}  // namespace cosparse
