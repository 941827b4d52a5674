#include "essa/adapters.hpp"

#include <algorithm>
#include <cmath>

#include "essa/errors.hpp"
#include "essa/ops.hpp"
#include "essa/rng.hpp"

namespace essa {

AdapterSpec AdapterSpec::full() {
  AdapterSpec s;
  s.kind = AdapterKind::full;
  return s;
}

AdapterSpec AdapterSpec::lora(std::size_t rank, double alpha,
                              std::set<LoraTarget> targets) {
  AdapterSpec s;
  s.kind = AdapterKind::lora;
  s.lora_rank = rank;
  s.lora_alpha = alpha;
  s.lora_targets = std::move(targets);
  s.validate();
  return s;
}

AdapterSpec AdapterSpec::vpt(std::size_t prompts, VptMode mode) {
  AdapterSpec s;
  s.kind = AdapterKind::vpt;
  s.vpt_prompts = prompts;
  s.vpt_mode = mode;
  s.validate();
  return s;
}

AdapterSpec AdapterSpec::bitfit() {
  AdapterSpec s;
  s.kind = AdapterKind::bitfit;
  return s;
}

AdapterSpec AdapterSpec::apla(double fraction, std::uint64_t seed) {
  AdapterSpec s;
  s.kind = AdapterKind::apla;
  s.apla_fraction = fraction;
  s.apla_seed = seed;
  s.validate();
  return s;
}

void AdapterSpec::validate() const {
  switch (kind) {
    case AdapterKind::lora:
      if (lora_rank < 1) throw ConfigError("lora: rank must be >= 1");
      if (lora_targets.empty())
        throw ConfigError("lora: target set must be non-empty");
      break;
    case AdapterKind::vpt:
      if (vpt_prompts < 1) throw ConfigError("vpt: prompt count must be >= 1");
      break;
    case AdapterKind::apla:
      if (!(apla_fraction > 0.0 && apla_fraction <= 1.0))
        throw ConfigError("apla: fraction must be in (0, 1], got " +
                          std::to_string(apla_fraction));
      break;
    case AdapterKind::full:
    case AdapterKind::bitfit:
      break;
  }
}

std::string AdapterSpec::name() const {
  switch (kind) {
    case AdapterKind::full:
      return "full";
    case AdapterKind::lora:
      return "lora";
    case AdapterKind::vpt:
      return "vpt";
    case AdapterKind::bitfit:
      return "bitfit";
    case AdapterKind::apla:
      return "apla";
  }
  return "unknown";
}

std::string lora_target_name(LoraTarget t) {
  switch (t) {
    case LoraTarget::q:
      return "q";
    case LoraTarget::k:
      return "k";
    case LoraTarget::v:
      return "v";
    case LoraTarget::o:
      return "proj";
  }
  return "?";
}

std::vector<std::size_t> apla_columns(std::uint64_t seed,
                                      const std::string& path,
                                      std::size_t dim, double fraction) {
  const std::size_t take = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(dim)));
  RngStream stream(derive_seed(seed, path));
  // Partial Fisher-Yates: the first `take` entries of a shuffle.
  std::vector<std::size_t> pool(dim);
  for (std::size_t i = 0; i < dim; ++i) pool[i] = i;
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j =
        i + static_cast<std::size_t>(stream.uniform_index(dim - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(take);
  std::sort(pool.begin(), pool.end());
  return pool;
}

TrainabilityMask build_backbone_mask(const AdapterSpec& spec,
                                     const ViTConfig& config,
                                     const ParamTree& backbone_params) {
  spec.validate();
  TrainabilityMask mask;
  for (const auto& name : backbone_params.names()) {
    bool trainable = false;
    switch (spec.kind) {
      case AdapterKind::full:
        trainable = true;
        break;
      case AdapterKind::bitfit:
        trainable = name.ends_with(".bias");
        break;
      case AdapterKind::lora:
      case AdapterKind::vpt:
      case AdapterKind::apla:
        trainable = false;
        break;
    }
    mask.set(name, TrainabilityMask::Entry::all(trainable));
  }
  if (spec.kind == AdapterKind::apla) {
    for (std::size_t l = 0; l < config.depth; ++l) {
      const std::string path =
          "block." + std::to_string(l) + ".attn.proj.weight";
      if (!backbone_params.has(path)) {
        throw ContractError("build_mask: missing parameter path '" + path +
                            "'");
      }
      mask.set(path,
               TrainabilityMask::Entry::column_set(
                   apla_columns(spec.apla_seed, path, config.embed_dim,
                                spec.apla_fraction)));
    }
  }
  return mask;
}

ParamTree inject_adapter_params(const AdapterSpec& spec,
                                const ViTConfig& config,
                                std::uint64_t init_seed) {
  spec.validate();
  const std::size_t d = config.embed_dim;
  ParamTree injected;
  RngStream init(derive_seed(init_seed, "adapter_init"));

  if (spec.kind == AdapterKind::lora) {
    if (spec.lora_rank > d) {
      throw ConfigError("lora: rank " + std::to_string(spec.lora_rank) +
                        " exceeds embed_dim " + std::to_string(d));
    }
    for (std::size_t l = 0; l < config.depth; ++l) {
      for (LoraTarget t :
           {LoraTarget::q, LoraTarget::k, LoraTarget::v, LoraTarget::o}) {
        if (!spec.lora_targets.count(t)) continue;
        const std::string prefix =
            "block." + std::to_string(l) + ".attn." + lora_target_name(t);
        Tensor a = Tensor::zeros({spec.lora_rank, d});
        for (auto& v : a.data()) v = init.truncated_normal(0.0, 0.02);
        Tensor b = Tensor::zeros({d, spec.lora_rank});  // zero: identity at init
        injected.add(prefix + ".lora.a", std::move(a));
        injected.add(prefix + ".lora.b", std::move(b));
      }
    }
  }

  if (spec.kind == AdapterKind::vpt) {
    const std::size_t layers = spec.vpt_mode == VptMode::deep ? config.depth : 1;
    for (std::size_t l = 0; l < layers; ++l) {
      Tensor prompts = Tensor::zeros({spec.vpt_prompts, d});
      for (auto& v : prompts.data()) v = init.truncated_normal(0.0, 0.02);
      injected.add(spec.vpt_mode == VptMode::deep
                       ? "prompts." + std::to_string(l)
                       : "prompts",
                   std::move(prompts));
    }
  }
  return injected;
}

bool injection_compatible(const AdapterSpec& a, const AdapterSpec& b) {
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case AdapterKind::lora:
      return a.lora_rank == b.lora_rank && a.lora_alpha == b.lora_alpha &&
             a.lora_targets == b.lora_targets;
    case AdapterKind::vpt:
      return a.vpt_prompts == b.vpt_prompts && a.vpt_mode == b.vpt_mode;
    default:
      return true;
  }
}

std::pair<TrainabilityMask, ParamTree> build_mask(const AdapterSpec& spec,
                                                  const Backbone& backbone,
                                                  std::uint64_t init_seed) {
  TrainabilityMask mask =
      build_backbone_mask(spec, backbone.config, backbone.params);
  ParamTree injected = inject_adapter_params(spec, backbone.config, init_seed);
  for (const auto& name : injected.names()) {
    mask.set(name, TrainabilityMask::Entry::all(true));
  }
  return {std::move(mask), std::move(injected)};
}

Tensor lora_forward(const Tensor& w, const Tensor& x, const Tensor& a,
                    const Tensor& b, double alpha, std::size_t rank) {
  if (rank < 1 || rank > std::min(w.rows(), w.cols())) {
    throw ConfigError("lora_forward: rank " + std::to_string(rank) +
                      " out of range for weight " + shape_str(w.shape()));
  }
  if (a.rows() != rank || b.cols() != rank || a.cols() != w.cols() ||
      b.rows() != w.rows()) {
    throw ShapeError("lora_forward: factor shapes " + shape_str(a.shape()) +
                     ", " + shape_str(b.shape()) + " do not match weight " +
                     shape_str(w.shape()));
  }
  Tensor base = linear(x, w);
  Tensor low_rank = linear(linear(x, a), b);
  return add(base, scale(low_rank, alpha / static_cast<double>(rank)));
}

Tensor prepend_prompts(const Tensor& tokens, const Tensor& prompts,
                       std::size_t layer_index, VptMode mode) {
  if (prompts.cols() != tokens.cols()) {
    throw ShapeError("prepend_prompts: prompt width " +
                     shape_str(prompts.shape()) + " != token width " +
                     shape_str(tokens.shape()));
  }
  const std::size_t p = prompts.rows();
  if (layer_index == 0) {
    return concat_rows({slice_rows(tokens, 0, 1), prompts,
                        slice_rows(tokens, 1, tokens.rows())});
  }
  if (mode == VptMode::shallow) return tokens;
  if (tokens.rows() < 1 + p) {
    throw ContractError("prepend_prompts: deep mode expects " +
                        std::to_string(1 + p) + "+ tokens, got " +
                        std::to_string(tokens.rows()));
  }
  return concat_rows({slice_rows(tokens, 0, 1), prompts,
                      slice_rows(tokens, 1 + p, tokens.rows())});
}

void apply_grad_mask(ParamTree& params, const TrainabilityMask& mask) {
  for (const auto& name : params.names()) {
    if (!mask.defined_for(name)) continue;
    Tensor& t = params.at(name);
    if (!t.has_grad()) continue;
    const auto& entry = mask.at(name);
    auto grad = t.grad_mut();
    if (entry.whole) {
      if (!entry.trainable) std::fill(grad.begin(), grad.end(), 0.0);
      continue;
    }
    const std::size_t cols = t.cols();
    const std::size_t rows = t.numel() / cols;
    std::vector<char> keep(cols, 0);
    for (std::size_t c : entry.columns) keep[c] = 1;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        if (!keep[c]) grad[r * cols + c] = 0.0;
  }
}

TrainableCount trainable_count(const TrainabilityMask& mask,
                               const ParamTree& backbone_params,
                               const ParamTree& injected) {
  TrainableCount result;
  for (const auto& name : backbone_params.names()) {
    result.count +=
        mask.trainable_elements(name, backbone_params.at(name).shape());
  }
  for (const auto& name : injected.names()) {
    result.count += mask.trainable_elements(name, injected.at(name).shape());
  }
  const std::size_t backbone_total = backbone_params.total_elements();
  result.fraction_of_backbone =
      backbone_total == 0
          ? 0.0
          : static_cast<double>(result.count) /
                static_cast<double>(backbone_total);
  return result;
}

void apply_requires_grad(ParamTree& backbone_params, ParamTree& injected,
                         const TrainabilityMask& mask) {
  for (const auto& name : backbone_params.names()) {
    backbone_params.at(name).set_requires_grad(
        mask.at(name).any_trainable());
  }
  for (const auto& name : injected.names()) {
    injected.at(name).set_requires_grad(true);
  }
}

}  // namespace essa
