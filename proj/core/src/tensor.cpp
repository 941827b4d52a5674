#include "essa/tensor.hpp"

#include <sstream>

#include "essa/errors.hpp"

namespace essa {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  node->data.assign(shape_numel(shape), 0.0);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& x : t.node_->data) x = value;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("from_data: shape " + shape_str(shape) + " wants " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

std::size_t Tensor::rows() const {
  return rank() <= 1 ? 1 : node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() == 0) return numel();
  return node_->shape[rank() - 1];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item(): tensor has " + std::to_string(numel()) +
                        " elements, expected 1");
  }
  return node_->data[0];
}

double& Tensor::at(std::size_t r, std::size_t c) {
  return node_->data[r * cols() + c];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->data[r * cols() + c];
}

std::vector<double>& Tensor::ensure_grad() {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

Tensor Tensor::clone() const {
  auto node = std::make_shared<TensorNode>(*node_);
  return Tensor(std::move(node));
}

void Tape::backward(Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(loss.shape()));
  }
  loss.ensure_grad()[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) {
  g_active_tape = &tape;
}
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) {
  g_active_tape = nullptr;
}
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

void backward(Tensor& loss, Tape& tape) { tape.backward(loss); }

}  // namespace essa
