#pragma once

// Dense row-major tensors and the reverse-mode tape.
//
// A Tensor is a shared handle to a node holding shape, values and an
// optional gradient buffer. Ops (ops.hpp) record a backward closure on the
// thread's active Tape whenever any input requires a gradient.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "kinform/error.hpp"

namespace kinform {

#ifdef KINFORM_FLOAT32
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
  }
};

using NodePtr = std::shared_ptr<TensorNode>;

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false)
      : node_(std::make_shared<detail::TensorNode>()) {
    for (std::size_t d : shape) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("shape " + shape_str(shape) + " holds " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor full(Shape shape, Real value, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<Real>(n, value), requires_grad);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), Real(0), requires_grad);
  }
  static Tensor ones(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), Real(1), requires_grad);
  }
  static Tensor scalar(Real value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }
  static Tensor vector(std::vector<Real> values, bool requires_grad = false) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<Real> data() { return node_->data; }
  std::span<const Real> data() const { return node_->data; }
  Real operator[](std::size_t i) const { return node_->data[i]; }
  Real& operator[](std::size_t i) { return node_->data[i]; }

  Real item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }

  /// Gradient view; a zero buffer is allocated on first access.
  std::span<const Real> grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  std::span<Real> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  void zero_grad() { node_->grad.assign(node_->data.size(), Real(0)); }

  /// Deep copy of the values; the copy carries no gradient state.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }
  Tensor clone() const { return Tensor(shape(), node_->data, requires_grad()); }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  const detail::NodePtr& node_ptr() const { return node_; }

 private:
  detail::NodePtr node_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Records op backward rules in execution order. One tape per training step.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(std::vector<detail::NodePtr> inputs, detail::NodePtr output, BackwardFn fn) {
    if (consumed_) throw TapeError("cannot record on a tape that already ran backward");
    entries_.push_back({std::move(inputs), std::move(output), std::move(fn)});
  }

  /// Assigns d(loss)/d(node) to every tensor that participated in the tape.
  void backward(const Tensor& loss) {
    if (!loss.defined()) throw TapeError("backward on an undefined tensor");
    if (loss.numel() != 1) {
      throw ShapeError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (consumed_) throw TapeError("backward already ran on this tape; re-run the forward pass");
    const detail::TensorNode* target = loss.node_ptr().get();
    bool found = false;
    for (const auto& e : entries_) found = found || e.output.get() == target;
    if (!found) throw TapeError("loss was not produced under this tape");

    std::unordered_set<detail::TensorNode*> seen;
    for (auto& e : entries_) {
      for (auto& in : e.inputs) {
        if (in->requires_grad && seen.insert(in.get()).second) {
          in->grad.assign(in->data.size(), Real(0));
        }
      }
      if (seen.insert(e.output.get()).second) e.output->grad.assign(e.output->data.size(), Real(0));
    }
    loss.node_ptr()->grad[0] = Real(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
    consumed_ = true;
  }

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Entry {
    std::vector<detail::NodePtr> inputs;
    detail::NodePtr output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

namespace detail {
inline Tape*& active_tape_slot() {
  thread_local Tape* tape = nullptr;
  return tape;
}
}  // namespace detail

inline Tape* active_tape() { return detail::active_tape_slot(); }

/// Makes `tape` the active tape of this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(detail::active_tape_slot()) {
    detail::active_tape_slot() = &tape;
  }
  ~TapeScope() { detail::active_tape_slot() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording (inference, evaluation).
class NoGradScope {
 public:
  NoGradScope() : previous_(detail::active_tape_slot()) { detail::active_tape_slot() = nullptr; }
  ~NoGradScope() { detail::active_tape_slot() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

namespace detail {

/// Piecewise ops (ReLU, clamps, margin branches) fold their branch choices
/// into the active probe. The gradient checker uses it to tell whether a
/// finite-difference stencil straddles a kink.
class BranchProbe {
 public:
  void mix(std::uint64_t v) { hash_ = (hash_ ^ v) * 1099511628211ULL; }
  std::uint64_t value() const { return hash_; }

 private:
  std::uint64_t hash_ = 14695981039346656037ULL;
};

inline BranchProbe*& active_probe_slot() {
  thread_local BranchProbe* probe = nullptr;
  return probe;
}

}  // namespace detail

}  // namespace kinform
