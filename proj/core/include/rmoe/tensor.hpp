#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace rmoe {

class Tape;

// Dense row-major f64 tensor. A Tensor is a cheap shared handle: copying it
// aliases the same storage. Tensors are either constants (no tape, no grad)
// or recorded on exactly one Tape, in which case grad storage exists and is
// filled by Tape::backward.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(std::vector<std::size_t> shape,
                         std::vector<double> values);
  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<std::size_t>& shape() const;
  std::size_t size() const;
  std::size_t rank() const;
  // Rank-2 accessors; throw on other ranks.
  std::size_t rows() const;
  std::size_t cols() const;

  bool requires_grad() const;
  Tape* tape() const;

  std::span<const double> values() const;
  // In-place mutation is allowed only off-tape (model parameters between
  // optimizer steps). Taped tensors are immutable once created.
  std::span<double> mutable_values();
  std::span<const double> grad() const;
  double item() const;  // value of a size-1 tensor

 private:
  friend class Tape;
  friend struct OpAccess;

  struct Impl {
    std::vector<std::size_t> shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized iff requires_grad
    bool requires_grad = false;
    Tape* tape = nullptr;
  };

  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<Impl> impl_;
};

// Records the forward graph and replays it in reverse. Nodes are stored in
// creation order, which is a topological order by construction, so the
// backward sweep visits each node exactly once. Single-threaded.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // New leaf with requires_grad set; values are copied.
  Tensor var(std::vector<std::size_t> shape, std::vector<double> values);
  Tensor var_like(const Tensor& source);  // leaf copy of source's values

  // Seeds d(root)/d(root) = 1 and accumulates gradients into every
  // requires_grad tensor on this tape. Root must be a size-1 tensor recorded
  // here. Grads are zeroed first, so repeated calls do not accumulate across
  // calls, and leaves off the path end with zero grad.
  void backward(const Tensor& root);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  friend struct OpAccess;

  struct Node {
    std::function<void()> pull;  // propagate output grad into parents
  };

  std::vector<Node> nodes_;
  // Everything with grad storage on this tape (leaves + op outputs).
  std::vector<std::shared_ptr<Tensor::Impl>> tracked_;
};

}  // namespace rmoe
