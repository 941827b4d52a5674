#include "essa/vit.hpp"

#include <cmath>

#include "essa/adapters.hpp"
#include "essa/errors.hpp"
#include "essa/ops.hpp"
#include "essa/rng.hpp"

namespace essa {

void ViTConfig::validate() const {
  if (image_size == 0 || patch_size == 0 || channels == 0 || embed_dim == 0 ||
      depth == 0 || num_heads == 0 || mlp_ratio == 0) {
    throw ConfigError("ViTConfig: all dimensions must be positive");
  }
  if (image_size % patch_size != 0) {
    throw ConfigError("ViTConfig: image_size " + std::to_string(image_size) +
                      " not divisible by patch_size " +
                      std::to_string(patch_size));
  }
  if (embed_dim % num_heads != 0) {
    throw ConfigError("ViTConfig: embed_dim " + std::to_string(embed_dim) +
                      " not divisible by num_heads " +
                      std::to_string(num_heads));
  }
}

ViTConfig ViTConfig::preset(const std::string& name) {
  ViTConfig cfg;
  if (name == "tiny") {
    cfg = {.image_size = 16,
           .patch_size = 4,
           .channels = 3,
           .embed_dim = 32,
           .depth = 2,
           .num_heads = 2,
           .mlp_ratio = 2};
  } else if (name == "small") {
    cfg = {.image_size = 32,
           .patch_size = 4,
           .channels = 3,
           .embed_dim = 64,
           .depth = 4,
           .num_heads = 4,
           .mlp_ratio = 4};
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected tiny|small)");
  }
  return cfg;
}

std::vector<std::pair<std::string, Shape>> backbone_schema(
    const ViTConfig& config) {
  config.validate();
  const std::size_t d = config.embed_dim;
  std::vector<std::pair<std::string, Shape>> schema;
  schema.emplace_back("patch_embed.weight", Shape{d, config.patch_dim()});
  schema.emplace_back("patch_embed.bias", Shape{d});
  schema.emplace_back("cls_token", Shape{1, d});
  schema.emplace_back("pos_embed", Shape{config.base_tokens(), d});
  for (std::size_t l = 0; l < config.depth; ++l) {
    const std::string p = "block." + std::to_string(l) + ".";
    schema.emplace_back(p + "ln1.gain", Shape{d});
    schema.emplace_back(p + "ln1.bias", Shape{d});
    for (const char* t : {"q", "k", "v"}) {
      schema.emplace_back(p + "attn." + t + ".weight", Shape{d, d});
      schema.emplace_back(p + "attn." + t + ".bias", Shape{d});
    }
    schema.emplace_back(p + "attn.proj.weight", Shape{d, d});
    schema.emplace_back(p + "attn.proj.bias", Shape{d});
    schema.emplace_back(p + "ln2.gain", Shape{d});
    schema.emplace_back(p + "ln2.bias", Shape{d});
    schema.emplace_back(p + "mlp.fc1.weight", Shape{config.mlp_ratio * d, d});
    schema.emplace_back(p + "mlp.fc1.bias", Shape{config.mlp_ratio * d});
    schema.emplace_back(p + "mlp.fc2.weight", Shape{d, config.mlp_ratio * d});
    schema.emplace_back(p + "mlp.fc2.bias", Shape{d});
  }
  schema.emplace_back("norm.gain", Shape{d});
  schema.emplace_back("norm.bias", Shape{d});
  return schema;
}

namespace {

bool is_gain(const std::string& name) {
  return name.size() >= 5 && name.ends_with(".gain");
}

bool is_bias(const std::string& name) { return name.ends_with(".bias"); }

}  // namespace

ParamTree init_backbone_params(const ViTConfig& config, std::uint64_t seed) {
  RngStream init(derive_seed(seed, "backbone_init"));
  ParamTree params;
  for (const auto& [name, shape] : backbone_schema(config)) {
    Tensor t = Tensor::zeros(shape);
    if (is_gain(name)) {
      for (auto& v : t.data()) v = 1.0;
    } else if (!is_bias(name)) {
      for (auto& v : t.data()) v = init.truncated_normal(0.0, 0.02);
    }
    params.add(name, std::move(t));
  }
  return params;
}

Backbone init_backbone(const ViTConfig& config, std::uint64_t seed) {
  return Backbone{config, init_backbone_params(config, seed)};
}

Tensor patchify(const ViTConfig& config, const Tensor& image) {
  const std::size_t c = config.channels, s = config.image_size,
                    p = config.patch_size;
  if (image.shape() != Shape{c, s, s}) {
    throw ShapeError("patchify: image shape " + shape_str(image.shape()) +
                     " does not match config " + shape_str({c, s, s}));
  }
  const std::size_t side = s / p;
  Tensor patches = Tensor::zeros({side * side, config.patch_dim()});
  const auto img = image.data();
  std::size_t row = 0;
  for (std::size_t py = 0; py < side; ++py) {
    for (std::size_t px = 0; px < side; ++px, ++row) {
      std::size_t col = 0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < p; ++y) {
          for (std::size_t x = 0; x < p; ++x, ++col) {
            patches.at(row, col) =
                img[(ch * s + py * p + y) * s + px * p + x];
          }
        }
      }
    }
  }
  return patches;
}

Tensor patch_embed(const ViTConfig& config, const ParamTree& params,
                   const Tensor& image) {
  Tensor patches = patchify(config, image);
  Tensor tokens = linear(patches, params.at("patch_embed.weight"),
                         params.at("patch_embed.bias"));
  Tensor with_cls = concat_rows({params.at("cls_token"), tokens});
  return add(with_cls, params.at("pos_embed"));
}

namespace {

/// q/k/v/o projection, optionally rerouted through LoRA factors.
Tensor adapted_linear(const ParamTree& params, const std::string& prefix,
                      LoraTarget target, const Tensor& x,
                      const AdapterContext* ctx) {
  const Tensor& w = params.at(prefix + ".weight");
  const Tensor& b = params.at(prefix + ".bias");
  if (ctx && ctx->spec && ctx->spec->kind == AdapterKind::lora &&
      ctx->spec->lora_targets.count(target)) {
    const Tensor& a_mat = ctx->injected->at(prefix + ".lora.a");
    const Tensor& b_mat = ctx->injected->at(prefix + ".lora.b");
    Tensor y = lora_forward(w, x, a_mat, b_mat, ctx->spec->lora_alpha,
                            ctx->spec->lora_rank);
    return add_rowvec(y, b);
  }
  return linear(x, w, b);
}

}  // namespace

Tensor attention_block(const ViTConfig& config, const ParamTree& params,
                       std::size_t block_index, const Tensor& tokens,
                       const AdapterContext* adapter_ctx) {
  const std::size_t d = config.embed_dim, heads = config.num_heads,
                    dh = config.head_dim();
  const std::string p = "block." + std::to_string(block_index) + ".";
  if (tokens.cols() != d) {
    throw ShapeError("attention_block: token width " +
                     shape_str(tokens.shape()) + " != embed_dim " +
                     std::to_string(d));
  }

  Tensor h = layer_norm(tokens, params.at(p + "ln1.gain"),
                        params.at(p + "ln1.bias"), kLayerNormEps);
  Tensor q = adapted_linear(params, p + "attn.q", LoraTarget::q, h, adapter_ctx);
  Tensor k = adapted_linear(params, p + "attn.k", LoraTarget::k, h, adapter_ctx);
  Tensor v = adapted_linear(params, p + "attn.v", LoraTarget::v, h, adapter_ctx);

  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> head_outputs;
  head_outputs.reserve(heads);
  for (std::size_t i = 0; i < heads; ++i) {
    Tensor qi = slice_cols(q, i * dh, (i + 1) * dh);
    Tensor ki = slice_cols(k, i * dh, (i + 1) * dh);
    Tensor vi = slice_cols(v, i * dh, (i + 1) * dh);
    Tensor scores = scale(matmul_nt(qi, ki), inv_sqrt_dh);
    Tensor attn = softmax(scores, 1, 1.0);
    head_outputs.push_back(matmul(attn, vi));
  }
  Tensor merged = concat_cols(head_outputs);
  Tensor projected =
      adapted_linear(params, p + "attn.proj", LoraTarget::o, merged, adapter_ctx);
  Tensor x = add(tokens, projected);

  Tensor g = layer_norm(x, params.at(p + "ln2.gain"), params.at(p + "ln2.bias"),
                        kLayerNormEps);
  Tensor m1 = linear(g, params.at(p + "mlp.fc1.weight"),
                     params.at(p + "mlp.fc1.bias"));
  Tensor m2 = linear(gelu(m1), params.at(p + "mlp.fc2.weight"),
                     params.at(p + "mlp.fc2.bias"));
  return add(x, m2);
}

Features forward_features(const ViTConfig& config, const ParamTree& params,
                          const Tensor& image,
                          const AdapterContext* adapter_ctx) {
  Tensor tokens = patch_embed(config, params, image);
  const bool vpt = adapter_ctx && adapter_ctx->spec &&
                   adapter_ctx->spec->kind == AdapterKind::vpt;
  for (std::size_t l = 0; l < config.depth; ++l) {
    if (vpt) {
      const std::string key = adapter_ctx->spec->vpt_mode == VptMode::deep
                                  ? "prompts." + std::to_string(l)
                                  : "prompts";
      tokens = prepend_prompts(tokens, adapter_ctx->injected->at(key), l,
                               adapter_ctx->spec->vpt_mode);
    }
    tokens = attention_block(config, params, l, tokens, adapter_ctx);
  }
  Tensor normed = layer_norm(tokens, params.at("norm.gain"),
                             params.at("norm.bias"), kLayerNormEps);
  return Features{slice_rows(normed, 0, 1), normed};
}

Features forward_features(const Backbone& backbone, const Tensor& image,
                          const AdapterContext* adapter_ctx) {
  return forward_features(backbone.config, backbone.params, image,
                          adapter_ctx);
}

}  // namespace essa
