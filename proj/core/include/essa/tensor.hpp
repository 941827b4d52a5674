#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace essa {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

/// Shared storage behind a Tensor handle. Gradients are allocated lazily:
/// an empty grad vector means "no contribution yet" and is treated as zero.
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
};

/// Dense 64-bit tensor with value-handle semantics: copying a Tensor copies
/// the handle, not the buffer. clone() makes an independent deep copy.
class Tensor {
 public:
  Tensor() : node_(std::make_shared<TensorNode>()) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  /// 1-element convenience constructor.
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t rank() const { return node_->shape.size(); }
  /// Rows/cols treat rank-1 tensors as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() { return node_->data; }
  std::span<const double> data() const { return node_->data; }
  double item() const;

  double& at(std::size_t i) { return node_->data[i]; }
  double at(std::size_t i) const { return node_->data[i]; }
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Grad as a span; empty when no gradient has been accumulated.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> grad_mut() { return node_->grad; }
  /// Drops the gradient buffer (treated as all-zero afterwards).
  void zero_grad() { node_->grad.clear(); }
  /// Ensures the grad buffer exists (zero-filled).
  std::vector<double>& ensure_grad();

  Tensor clone() const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<TensorNode> node_;
};

/// Reverse-mode tape. Operations append themselves during the forward pass,
/// so the list is topologically ordered by construction; backward() replays
/// it once, in reverse, accumulating gradients by plain summation in tape
/// order (no reordering, which keeps trajectories bit-reproducible).
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    entries_.push_back(std::move(backward_fn));
  }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  /// Seeds loss.grad = 1 and replays every entry exactly once in reverse.
  /// loss must be a scalar.
  void backward(Tensor& loss);

 private:
  std::vector<std::function<void()>> entries_;
};

/// The tape ops record onto, if any. Null means gradients are not tracked.
Tape* active_tape();

/// Makes a tape active for the current scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Disables gradient recording for the current scope (teacher forward,
/// pure evaluation).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

/// Free-function form used by module-level code; equivalent to
/// tape.backward(loss).
void backward(Tensor& loss, Tape& tape);

}  // namespace essa
