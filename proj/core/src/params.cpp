#include "essa/params.hpp"

#include <cstring>

#include "essa/errors.hpp"

namespace essa {

void ParamTree::add(const std::string& name, Tensor t) {
  if (map_.count(name)) {
    throw ContractError("ParamTree: duplicate parameter '" + name + "'");
  }
  order_.push_back(name);
  map_.emplace(name, std::move(t));
}

bool ParamTree::has(const std::string& name) const {
  return map_.count(name) > 0;
}

Tensor& ParamTree::at(const std::string& name) {
  auto it = map_.find(name);
  if (it == map_.end()) {
    throw ContractError("ParamTree: unknown parameter '" + name + "'");
  }
  return it->second;
}

const Tensor& ParamTree::at(const std::string& name) const {
  auto it = map_.find(name);
  if (it == map_.end()) {
    throw ContractError("ParamTree: unknown parameter '" + name + "'");
  }
  return it->second;
}

std::size_t ParamTree::total_elements() const {
  std::size_t n = 0;
  for (const auto& name : order_) n += map_.at(name).numel();
  return n;
}

ParamTree ParamTree::clone() const {
  ParamTree copy;
  for (const auto& name : order_) copy.add(name, map_.at(name).clone());
  return copy;
}

void ParamTree::set_requires_grad(bool value) {
  for (const auto& name : order_) map_.at(name).set_requires_grad(value);
}

void ParamTree::zero_grad() {
  for (const auto& name : order_) map_.at(name).zero_grad();
}

bool trees_bitwise_equal(const ParamTree& a, const ParamTree& b) {
  if (a.names() != b.names()) return false;
  for (const auto& name : a.names()) {
    const auto& ta = a.at(name);
    const auto& tb = b.at(name);
    if (ta.shape() != tb.shape()) return false;
    if (std::memcmp(ta.data().data(), tb.data().data(),
                    ta.numel() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace essa
