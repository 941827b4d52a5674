#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "essa/tensor.hpp"

namespace essa {

/// Named parameter tree with stable dotted paths ("block.3.attn.proj.weight").
/// Iteration order is insertion order and is identical across runs, which the
/// optimizer, EMA updates, and checkpoint layout all rely on.
class ParamTree {
 public:
  void add(const std::string& name, Tensor t);
  bool has(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }
  bool empty() const { return order_.empty(); }
  std::size_t total_elements() const;

  /// Deep copy (fresh buffers, same names and order).
  ParamTree clone() const;

  void set_requires_grad(bool value);
  void zero_grad();

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor> map_;
};

/// Elementwise equality of two trees (same names, shapes, and bits).
bool trees_bitwise_equal(const ParamTree& a, const ParamTree& b);

}  // namespace essa
