#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "essa/mask.hpp"
#include "essa/params.hpp"
#include "essa/vit.hpp"

namespace essa {

enum class AdapterKind { full, lora, vpt, bitfit, apla };

enum class LoraTarget { q, k, v, o };

enum class VptMode { shallow, deep };

/// Which parameters form the tunable set: everything (full), injected
/// low-rank factors (lora), injected prompt tokens (vpt), existing bias
/// terms (bitfit), or a random column subset of each block's post-attention
/// projection (apla).
struct AdapterSpec {
  AdapterKind kind = AdapterKind::full;

  // lora
  std::size_t lora_rank = 4;
  double lora_alpha = 8.0;
  std::set<LoraTarget> lora_targets = {LoraTarget::q, LoraTarget::v};

  // vpt
  std::size_t vpt_prompts = 8;
  VptMode vpt_mode = VptMode::shallow;

  // apla
  double apla_fraction = 0.1;
  std::uint64_t apla_seed = 0;

  static AdapterSpec full();
  static AdapterSpec lora(std::size_t rank, double alpha,
                          std::set<LoraTarget> targets);
  static AdapterSpec vpt(std::size_t prompts, VptMode mode);
  static AdapterSpec bitfit();
  static AdapterSpec apla(double fraction, std::uint64_t seed);

  /// Throws ConfigError on out-of-range fields.
  void validate() const;

  /// Lower-case tag used in logs and serialized forms.
  std::string name() const;

  bool operator==(const AdapterSpec&) const = default;
};

std::string lora_target_name(LoraTarget t);

/// Forward-behavior hook handed to the backbone: which spec is active and
/// where its injected parameters live.
struct AdapterContext {
  const AdapterSpec* spec = nullptr;
  const ParamTree* injected = nullptr;
};

/// Builds the trainability mask over the backbone and creates any injected
/// parameters (LoRA A/B factors, VPT prompts). Injected parameters are
/// always trainable. Seeds: LoRA/VPT init from init_seed; APLA column
/// sampling from spec.apla_seed (per-path streams, so the same seed and
/// path always select the same columns).
std::pair<TrainabilityMask, ParamTree> build_mask(const AdapterSpec& spec,
                                                  const Backbone& backbone,
                                                  std::uint64_t init_seed);

/// Mask over the backbone paths only (no injected entries).
TrainabilityMask build_backbone_mask(const AdapterSpec& spec,
                                     const ViTConfig& config,
                                     const ParamTree& backbone_params);

/// Fresh injected parameters for an additive spec (empty tree otherwise).
ParamTree inject_adapter_params(const AdapterSpec& spec,
                                const ViTConfig& config,
                                std::uint64_t init_seed);

/// True when two specs describe structurally identical injected parameters
/// (so a later stage can keep tuning the same ones).
bool injection_compatible(const AdapterSpec& a, const AdapterSpec& b);

/// y = x W^T + (alpha/r) * (x A^T) B^T. W is frozen by construction of the
/// mask; A and B carry the gradient.
Tensor lora_forward(const Tensor& w, const Tensor& x, const Tensor& a,
                    const Tensor& b, double alpha, std::size_t rank);

/// Shallow: insert prompts after the class token at layer 0 only.
/// Deep: layer 0 inserts, layer l >= 1 overwrites the prompt rows with that
/// layer's prompts. The class token stays at row 0.
Tensor prepend_prompts(const Tensor& tokens, const Tensor& prompts,
                       std::size_t layer_index, VptMode mode);

/// Zeroes gradients outside the trainable set (whole-tensor or per-column).
/// Tensors without gradients are left untouched.
void apply_grad_mask(ParamTree& params, const TrainabilityMask& mask);

struct TrainableCount {
  std::size_t count = 0;
  double fraction_of_backbone = 0.0;
};

/// Trainable value count by enumeration over mask + injected parameters;
/// fraction is relative to the backbone parameter total.
TrainableCount trainable_count(const TrainabilityMask& mask,
                               const ParamTree& backbone_params,
                               const ParamTree& injected);

/// The sorted APLA column set for one parameter path.
std::vector<std::size_t> apla_columns(std::uint64_t seed,
                                      const std::string& path,
                                      std::size_t dim, double fraction);

/// Marks backbone tensors' requires_grad from the mask (any trainable
/// element -> true) and injected tensors as trainable.
void apply_requires_grad(ParamTree& backbone_params, ParamTree& injected,
                         const TrainabilityMask& mask);

}  // namespace essa
