#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "essa/mask.hpp"
#include "essa/params.hpp"
#include "essa/tensor.hpp"

namespace essa {

/// Hyperparameters of the decoupled-weight-decay Adam update plus the
/// epoch-granular learning-rate schedule (linear warm-up, cosine decay
/// to zero).
struct AdamWConfig {
  double base_lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.04;
  int warmup_epochs = 0;
  int total_epochs = 1;
};

/// lr(epoch): linear ramp base_lr*(epoch+1)/warmup during warm-up, then
/// cosine from base_lr down to zero at total_epochs.
double warmup_cosine_lr(const AdamWConfig& cfg, int epoch);

/// Weight decay applies to weight matrices only; biases, gains, prompts,
/// low-rank factors, and the prototype center are exempt.
bool weight_decay_applies(const std::string& name);

/// AdamW over an explicit trainable subset. Parameters are registered with
/// their mask entry; fully frozen tensors are simply never registered, and
/// partially trainable ones update only their listed columns (weight decay
/// included), so frozen values stay bit-identical.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  /// Registers one parameter. Entries with no trainable elements are
  /// ignored. Moment buffers are zero-initialized, full tensor shape.
  void add_param(const std::string& name, const Tensor& param,
                 const TrainabilityMask::Entry& entry);

  /// Registers every tree entry covered by the mask (skipping fully frozen
  /// ones), in tree order.
  void add_tree(ParamTree& tree, const TrainabilityMask& mask);

  /// One update at the given epoch's learning rate. Throws ContractError if
  /// a registered parameter has no gradient.
  void step(int epoch);

  void zero_grad();

  std::size_t trainable_values() const;
  long step_count() const { return step_count_; }
  double learning_rate(int epoch) const { return warmup_cosine_lr(cfg_, epoch); }
  const AdamWConfig& config() const { return cfg_; }

  /// Serializable snapshot of the moment buffers and step counter.
  struct Snapshot {
    AdamWConfig config;
    long step_count = 0;
    std::vector<std::string> names;
    std::vector<std::vector<double>> first_moments;
    std::vector<std::vector<double>> second_moments;
  };
  Snapshot snapshot() const;
  /// Restores moments/step from a snapshot. Names and sizes must match the
  /// registered parameters exactly.
  void restore(const Snapshot& snap);

 private:
  struct Slot {
    std::string name;
    Tensor param;
    TrainabilityMask::Entry entry;
    bool decay;
    std::vector<double> m;
    std::vector<double> v;
  };

  void update_element(Slot& slot, std::size_t i, double lr,
                      double bias_c1, double bias_c2);

  AdamWConfig cfg_;
  std::vector<Slot> slots_;
  long step_count_ = 0;
};

}  // namespace essa
