#pragma once

#include <map>
#include <string>
#include <vector>

#include "essa/tensor.hpp"

namespace essa {

/// Which parameters (or parameter columns) are tunable under a PEFT regime.
/// Each entry is either a whole-tensor boolean or, for partially trainable
/// matrices, a sorted set of trainable column indices into the last axis
/// (all rows of a listed column are trainable).
struct TrainabilityMask {
  struct Entry {
    bool whole = true;
    bool trainable = false;
    std::vector<std::size_t> columns;  // sorted, used when !whole

    static Entry all(bool trainable_flag) {
      Entry e;
      e.whole = true;
      e.trainable = trainable_flag;
      return e;
    }
    static Entry column_set(std::vector<std::size_t> cols);

    bool any_trainable() const {
      return whole ? trainable : !columns.empty();
    }
  };

  // std::map keeps deterministic iteration for serialization and counting.
  std::map<std::string, Entry> entries;

  bool defined_for(const std::string& name) const {
    return entries.count(name) > 0;
  }
  /// Throws ContractError for unknown names.
  const Entry& at(const std::string& name) const;

  void set(const std::string& name, Entry e) { entries[name] = std::move(e); }

  /// Number of trainable scalar values in a tensor of the given shape.
  std::size_t trainable_elements(const std::string& name,
                                 const Shape& shape) const;
};

}  // namespace essa
