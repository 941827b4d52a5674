#include "essa/mask.hpp"

#include <algorithm>

#include "essa/errors.hpp"

namespace essa {

TrainabilityMask::Entry TrainabilityMask::Entry::column_set(
    std::vector<std::size_t> cols) {
  std::sort(cols.begin(), cols.end());
  if (std::adjacent_find(cols.begin(), cols.end()) != cols.end()) {
    throw ContractError("TrainabilityMask: duplicate column index");
  }
  Entry e;
  e.whole = false;
  e.trainable = false;
  e.columns = std::move(cols);
  return e;
}

const TrainabilityMask::Entry& TrainabilityMask::at(
    const std::string& name) const {
  auto it = entries.find(name);
  if (it == entries.end()) {
    throw ContractError("TrainabilityMask: no entry for parameter '" + name +
                        "'");
  }
  return it->second;
}

std::size_t TrainabilityMask::trainable_elements(const std::string& name,
                                                 const Shape& shape) const {
  const Entry& e = at(name);
  const std::size_t n = shape_numel(shape);
  if (e.whole) return e.trainable ? n : 0;
  const std::size_t cols = shape.empty() ? n : shape.back();
  const std::size_t rows = cols == 0 ? 0 : n / cols;
  return rows * e.columns.size();
}

}  // namespace essa
