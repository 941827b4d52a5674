#include "essa/ssl.hpp"

#include <algorithm>
#include <cmath>

#include "essa/errors.hpp"
#include "essa/ops.hpp"

namespace essa {

DinoHeadConfig DinoHeadConfig::for_backbone(const ViTConfig& config) {
  DinoHeadConfig h;
  h.in_dim = config.embed_dim;
  h.hidden = 4 * config.embed_dim;
  h.bottleneck = config.embed_dim;
  h.num_prototypes = config.embed_dim <= 32 ? 64 : 256;
  return h;
}

DinoHead init_dino_head(const DinoHeadConfig& config, std::uint64_t seed) {
  RngStream init(derive_seed(seed, "dino_head_init"));
  ParamTree params;
  auto add_matrix = [&](const std::string& name, std::size_t rows,
                        std::size_t cols) {
    Tensor t = Tensor::zeros({rows, cols});
    for (auto& v : t.data()) v = init.truncated_normal(0.0, 0.02);
    params.add(name, std::move(t));
  };
  add_matrix("dino_head.fc1.weight", config.hidden, config.in_dim);
  params.add("dino_head.fc1.bias", Tensor::zeros({config.hidden}));
  add_matrix("dino_head.fc2.weight", config.bottleneck, config.hidden);
  params.add("dino_head.fc2.bias", Tensor::zeros({config.bottleneck}));
  add_matrix("dino_head.proto.weight", config.num_prototypes,
             config.bottleneck);
  return DinoHead{config, std::move(params)};
}

Tensor dino_head_forward(const DinoHeadConfig& config, const ParamTree& params,
                         const Tensor& embedding) {
  if (embedding.cols() != config.in_dim) {
    throw ShapeError("dino_head_forward: embedding " +
                     shape_str(embedding.shape()) + " != in_dim " +
                     std::to_string(config.in_dim));
  }
  Tensor h = gelu(linear(embedding, params.at("dino_head.fc1.weight"),
                         params.at("dino_head.fc1.bias")));
  Tensor z = linear(h, params.at("dino_head.fc2.weight"),
                    params.at("dino_head.fc2.bias"));
  Tensor z_unit = l2_normalize_rows(z);
  // Prototype rows normalized at each use; gradient flows into the raw
  // prototype weights through the normalization.
  Tensor prototypes = l2_normalize_rows(params.at("dino_head.proto.weight"));
  return matmul_nt(z_unit, prototypes);
}

TeacherState init_teacher(const ParamTree& student_backbone,
                          const ParamTree& student_injected,
                          const ParamTree& student_head,
                          std::size_t num_prototypes, double momentum,
                          double center_momentum, double tau_student,
                          double tau_teacher) {
  if (!(tau_teacher > 0.0) || tau_teacher > tau_student) {
    throw ContractError(
        "init_teacher: temperatures must satisfy 0 < tau_teacher <= "
        "tau_student");
  }
  TeacherState t;
  t.backbone = student_backbone.clone();
  t.injected = student_injected.clone();
  t.head = student_head.clone();
  t.backbone.set_requires_grad(false);
  t.injected.set_requires_grad(false);
  t.head.set_requires_grad(false);
  t.center = Tensor::zeros({num_prototypes});
  t.momentum = momentum;
  t.center_momentum = center_momentum;
  t.tau_student = tau_student;
  t.tau_teacher = tau_teacher;
  return t;
}

AugConfig AugConfig::all_off() {
  AugConfig c;
  c.crop = false;
  c.hflip = false;
  c.jitter = false;
  c.noise = false;
  return c;
}

namespace {

/// Bilinear sample of channel plane `ch` at fractional source coords.
double bilinear(const Tensor& image, std::size_t ch, std::size_t size,
                double sy, double sx) {
  sy = std::clamp(sy, 0.0, static_cast<double>(size - 1));
  sx = std::clamp(sx, 0.0, static_cast<double>(size - 1));
  const std::size_t y0 = static_cast<std::size_t>(sy);
  const std::size_t x0 = static_cast<std::size_t>(sx);
  const std::size_t y1 = std::min(y0 + 1, size - 1);
  const std::size_t x1 = std::min(x0 + 1, size - 1);
  const double fy = sy - static_cast<double>(y0);
  const double fx = sx - static_cast<double>(x0);
  auto px = [&](std::size_t y, std::size_t x) {
    return image.data()[(ch * size + y) * size + x];
  };
  return (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x1)) +
         fy * ((1 - fx) * px(y1, x0) + fx * px(y1, x1));
}

Tensor augment_once(const Tensor& image, RngStream& rng,
                    const AugConfig& cfg) {
  const std::size_t c = image.shape()[0];
  const std::size_t s = image.shape()[1];
  Tensor out = Tensor::zeros(image.shape());

  // Random resized crop back to full size.
  double crop_size = static_cast<double>(s);
  double top = 0.0, left = 0.0;
  if (cfg.crop) {
    const double scale = rng.uniform(cfg.crop_min_scale, cfg.crop_max_scale);
    crop_size = std::max(1.0, std::round(scale * static_cast<double>(s)));
    top = rng.uniform(0.0, static_cast<double>(s) - crop_size);
    left = rng.uniform(0.0, static_cast<double>(s) - crop_size);
  }
  const bool flip = cfg.hflip && rng.bernoulli(0.5);
  const double ratio = crop_size / static_cast<double>(s);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < s; ++y) {
      for (std::size_t x = 0; x < s; ++x) {
        const std::size_t xs = flip ? s - 1 - x : x;
        const double sy = top + (static_cast<double>(y) + 0.5) * ratio - 0.5;
        const double sx = left + (static_cast<double>(xs) + 0.5) * ratio - 0.5;
        out.at((ch * s + y) * s + x) = bilinear(image, ch, s, sy, sx);
      }
    }
  }

  if (cfg.jitter) {
    const double brightness = rng.uniform(-cfg.jitter_strength,
                                          cfg.jitter_strength);
    const double contrast = rng.uniform(-cfg.jitter_strength,
                                        cfg.jitter_strength);
    double mean = 0.0;
    for (double v : out.data()) mean += v;
    mean /= static_cast<double>(out.numel());
    for (auto& v : out.data())
      v = (v + brightness - mean) * (1.0 + contrast) + mean;
  }
  if (cfg.noise) {
    for (auto& v : out.data()) v += rng.normal(0.0, cfg.noise_sigma);
  }
  if (cfg.jitter || cfg.noise) {
    for (auto& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

}  // namespace

ViewPair make_views(const Tensor& image, RngStream& rng,
                    const AugConfig& config) {
  if (image.rank() != 3) {
    throw ShapeError("make_views: expected [C,H,W] image, got " +
                     shape_str(image.shape()));
  }
  Tensor a = augment_once(image, rng, config);
  Tensor b = augment_once(image, rng, config);
  return ViewPair{std::move(a), std::move(b)};
}

namespace {

std::vector<double> sharpen_teacher(const std::vector<double>& logits,
                                    std::span<const double> center,
                                    double tau) {
  std::vector<double> t(logits.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    t[i] = (logits[i] - center[i]) / tau;
    mx = std::max(mx, t[i]);
  }
  double denom = 0.0;
  for (double& v : t) {
    v = std::exp(v - mx);
    denom += v;
  }
  for (double& v : t) v /= denom;
  return t;
}

}  // namespace

Tensor dino_loss(const std::array<Tensor, 2>& student_logits,
                 const std::array<std::vector<double>, 2>& teacher_logits,
                 std::span<const double> center, double tau_student,
                 double tau_teacher) {
  if (!(tau_student > 0.0) || !(tau_teacher > 0.0)) {
    throw ContractError("dino_loss: temperatures must be > 0");
  }
  const std::size_t k = teacher_logits[0].size();
  for (int v = 0; v < 2; ++v) {
    if (student_logits[v].numel() != k || teacher_logits[v].size() != k ||
        center.size() != k) {
      throw ShapeError("dino_loss: prototype dimension mismatch");
    }
  }
  std::vector<Tensor> terms;
  for (int v = 0; v < 2; ++v) {
    const int w = 1 - v;
    std::vector<double> target =
        sharpen_teacher(teacher_logits[v], center, tau_teacher);
    Tensor log_p = log_softmax(student_logits[w], tau_student);
    terms.push_back(scale(dot_const(log_p, target), -1.0));
  }
  return scale(add_n(terms), 0.5);
}

void update_teacher(ParamTree& teacher_tree, const ParamTree& student_tree,
                    double momentum) {
  if (teacher_tree.names() != student_tree.names()) {
    throw ContractError("update_teacher: tree structure mismatch");
  }
  for (const auto& name : teacher_tree.names()) {
    Tensor& t = teacher_tree.at(name);
    const Tensor& s = student_tree.at(name);
    if (t.shape() != s.shape()) {
      throw ContractError("update_teacher: shape mismatch at '" + name + "'");
    }
    auto td = t.data();
    auto sd = s.data();
    for (std::size_t i = 0; i < td.size(); ++i)
      td[i] = momentum * td[i] + (1.0 - momentum) * sd[i];
  }
}

void update_center(Tensor& center,
                   const std::vector<std::vector<double>>& teacher_batch_logits,
                   double center_momentum) {
  if (teacher_batch_logits.empty()) {
    throw ContractError("update_center: empty batch");
  }
  const std::size_t k = center.numel();
  std::vector<double> mean(k, 0.0);
  for (const auto& logits : teacher_batch_logits) {
    if (logits.size() != k) {
      throw ContractError("update_center: logit width mismatch");
    }
    for (std::size_t i = 0; i < k; ++i) mean[i] += logits[i];
  }
  const double inv = 1.0 / static_cast<double>(teacher_batch_logits.size());
  auto cd = center.data();
  for (std::size_t i = 0; i < k; ++i) {
    cd[i] = center_momentum * cd[i] + (1.0 - center_momentum) * mean[i] * inv;
  }
}

double ssl_step(const ViTConfig& config, ParamTree& student_backbone,
                ParamTree& student_injected, const AdapterSpec& spec,
                DinoHead& student_head, TeacherState& teacher,
                const TrainabilityMask& mask, AdamW& optimizer, int epoch,
                const std::vector<ViewPair>& batch) {
  if (batch.empty()) throw ContractError("ssl_step: empty batch");

  const AdapterContext student_ctx{&spec, &student_injected};
  const AdapterContext teacher_ctx{&spec, &teacher.injected};

  Tape tape;
  double loss_value = 0.0;
  std::vector<std::vector<double>> teacher_logit_rows;
  teacher_logit_rows.reserve(batch.size() * 2);
  {
    TapeScope scope(tape);
    std::vector<Tensor> losses;
    losses.reserve(batch.size());
    for (const ViewPair& views : batch) {
      std::array<Tensor, 2> student_logits;
      std::array<std::vector<double>, 2> teacher_logits;
      const Tensor* images[2] = {&views.first, &views.second};
      for (int v = 0; v < 2; ++v) {
        Features f = forward_features(config, student_backbone, *images[v],
                                      &student_ctx);
        student_logits[v] = dino_head_forward(student_head.config,
                                              student_head.params,
                                              f.cls_embedding);
        NoGradScope no_grad;
        Features tf = forward_features(config, teacher.backbone, *images[v],
                                       &teacher_ctx);
        Tensor tl = dino_head_forward(student_head.config, teacher.head,
                                      tf.cls_embedding);
        teacher_logits[v].assign(tl.data().begin(), tl.data().end());
        teacher_logit_rows.push_back(teacher_logits[v]);
      }
      losses.push_back(dino_loss(student_logits, teacher_logits,
                                 teacher.center.data(), teacher.tau_student,
                                 teacher.tau_teacher));
    }
    Tensor loss = scale(add_n(losses), 1.0 / static_cast<double>(batch.size()));
    loss_value = loss.item();
    tape.backward(loss);
  }

  apply_grad_mask(student_backbone, mask);
  optimizer.step(epoch);
  optimizer.zero_grad();
  student_backbone.zero_grad();
  student_injected.zero_grad();
  student_head.params.zero_grad();

  update_teacher(teacher.backbone, student_backbone, teacher.momentum);
  update_teacher(teacher.injected, student_injected, teacher.momentum);
  update_teacher(teacher.head, student_head.params, teacher.momentum);
  update_center(teacher.center, teacher_logit_rows, teacher.center_momentum);
  return loss_value;
}

}  // namespace essa
