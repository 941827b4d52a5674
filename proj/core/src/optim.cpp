#include "essa/optim.hpp"

#include <cmath>
#include <numbers>

#include "essa/errors.hpp"

namespace essa {

double warmup_cosine_lr(const AdamWConfig& cfg, int epoch) {
  if (cfg.warmup_epochs > 0 && epoch < cfg.warmup_epochs) {
    return cfg.base_lr * static_cast<double>(epoch + 1) /
           static_cast<double>(cfg.warmup_epochs);
  }
  if (cfg.total_epochs <= cfg.warmup_epochs) return cfg.base_lr;
  const double t = static_cast<double>(epoch - cfg.warmup_epochs) /
                   static_cast<double>(cfg.total_epochs - cfg.warmup_epochs);
  return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

bool weight_decay_applies(const std::string& name) {
  const std::string suffix = ".weight";
  return name.size() > suffix.size() &&
         name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void AdamW::add_param(const std::string& name, const Tensor& param,
                      const TrainabilityMask::Entry& entry) {
  if (!entry.any_trainable()) return;
  Slot slot;
  slot.name = name;
  slot.param = param;
  slot.entry = entry;
  slot.decay = weight_decay_applies(name);
  slot.m.assign(param.numel(), 0.0);
  slot.v.assign(param.numel(), 0.0);
  slots_.push_back(std::move(slot));
}

void AdamW::add_tree(ParamTree& tree, const TrainabilityMask& mask) {
  for (const auto& name : tree.names()) {
    add_param(name, tree.at(name), mask.at(name));
  }
}

void AdamW::update_element(Slot& slot, std::size_t i, double lr,
                           double bias_c1, double bias_c2) {
  const double g = slot.param.node()->grad[i];
  double& m = slot.m[i];
  double& v = slot.v[i];
  m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
  v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
  const double m_hat = m / bias_c1;
  const double v_hat = v / bias_c2;
  double& w = slot.param.node()->data[i];
  w -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
  if (slot.decay) w -= lr * cfg_.weight_decay * w;
}

void AdamW::step(int epoch) {
  const double lr = warmup_cosine_lr(cfg_, epoch);
  ++step_count_;
  const double bias_c1 =
      1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  const double bias_c2 =
      1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
  for (Slot& slot : slots_) {
    if (!slot.param.has_grad()) {
      throw ContractError("adamw_step: missing gradient for trainable '" +
                          slot.name + "'");
    }
    if (slot.entry.whole) {
      const std::size_t n = slot.param.numel();
      for (std::size_t i = 0; i < n; ++i)
        update_element(slot, i, lr, bias_c1, bias_c2);
    } else {
      const std::size_t cols = slot.param.cols();
      const std::size_t rows = slot.param.numel() / cols;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c : slot.entry.columns)
          update_element(slot, r * cols + c, lr, bias_c1, bias_c2);
    }
  }
}

void AdamW::zero_grad() {
  for (Slot& slot : slots_) slot.param.zero_grad();
}

std::size_t AdamW::trainable_values() const {
  std::size_t n = 0;
  for (const Slot& slot : slots_) {
    if (slot.entry.whole) {
      n += slot.param.numel();
    } else {
      const std::size_t cols = slot.param.cols();
      n += (slot.param.numel() / cols) * slot.entry.columns.size();
    }
  }
  return n;
}

AdamW::Snapshot AdamW::snapshot() const {
  Snapshot snap;
  snap.config = cfg_;
  snap.step_count = step_count_;
  for (const Slot& slot : slots_) {
    snap.names.push_back(slot.name);
    snap.first_moments.push_back(slot.m);
    snap.second_moments.push_back(slot.v);
  }
  return snap;
}

void AdamW::restore(const Snapshot& snap) {
  if (snap.names.size() != slots_.size()) {
    throw ContractError("AdamW::restore: snapshot has " +
                        std::to_string(snap.names.size()) + " slots, expected " +
                        std::to_string(slots_.size()));
  }
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (snap.names[i] != slots_[i].name ||
        snap.first_moments[i].size() != slots_[i].m.size()) {
      throw ContractError("AdamW::restore: slot mismatch at '" +
                          snap.names[i] + "'");
    }
    slots_[i].m = snap.first_moments[i];
    slots_[i].v = snap.second_moments[i];
  }
  cfg_ = snap.config;
  step_count_ = snap.step_count;
}

}  // namespace essa
