#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "essa/params.hpp"
#include "essa/tensor.hpp"

namespace essa {

struct AdapterContext;  // adapters.hpp

struct ViTConfig {
  std::size_t image_size = 16;
  std::size_t patch_size = 4;
  std::size_t channels = 3;
  std::size_t embed_dim = 32;
  std::size_t depth = 2;
  std::size_t num_heads = 2;
  std::size_t mlp_ratio = 2;
  std::size_t num_registers = 0;

  /// Throws ConfigError on divisibility violations.
  void validate() const;

  std::size_t num_patches() const {
    const std::size_t side = image_size / patch_size;
    return side * side;
  }
  std::size_t base_tokens() const { return 1 + num_patches(); }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t patch_dim() const {
    return channels * patch_size * patch_size;
  }

  /// "tiny": 16px/patch4/d32/L2/H2/mlp2. "small": 32px/patch4/d64/L4/H4/mlp4.
  static ViTConfig preset(const std::string& name);

  bool operator==(const ViTConfig&) const = default;
};

/// The full name -> shape map of the backbone parameter tree, in tree order.
std::vector<std::pair<std::string, Shape>> backbone_schema(
    const ViTConfig& config);

struct Backbone {
  ViTConfig config;
  ParamTree params;
};

/// Truncated-normal (sigma 0.02) weights, zero biases, unit LayerNorm gains.
/// Bit-identical trees for identical (config, seed).
Backbone init_backbone(const ViTConfig& config, std::uint64_t seed);
ParamTree init_backbone_params(const ViTConfig& config, std::uint64_t seed);

/// Flattens an image [C,H,W] into per-patch rows [N, patch_dim], scanning
/// patches row-major and each patch channel-major. No gradient flows into
/// the image.
Tensor patchify(const ViTConfig& config, const Tensor& image);

/// Patch tokens via linear projection, class token prepended, positional
/// embeddings added -> [1+N, d].
Tensor patch_embed(const ViTConfig& config, const ParamTree& params,
                   const Tensor& image);

/// One pre-norm transformer block (attention + MLP, both residual).
/// adapter_ctx may reroute the q/k/v/o projections through LoRA factors.
Tensor attention_block(const ViTConfig& config, const ParamTree& params,
                       std::size_t block_index, const Tensor& tokens,
                       const AdapterContext* adapter_ctx);

struct Features {
  Tensor cls_embedding;  // [1, d], post final LayerNorm
  Tensor tokens;         // [T, d], post final LayerNorm
};

/// Full forward pass: patch_embed, optional prompt handling, depth blocks,
/// final LayerNorm. The class token (row 0) is the representation.
Features forward_features(const ViTConfig& config, const ParamTree& params,
                          const Tensor& image,
                          const AdapterContext* adapter_ctx);

Features forward_features(const Backbone& backbone, const Tensor& image,
                          const AdapterContext* adapter_ctx);

/// LayerNorm epsilon used throughout the backbone and heads.
inline constexpr double kLayerNormEps = 1e-5;

}  // namespace essa
