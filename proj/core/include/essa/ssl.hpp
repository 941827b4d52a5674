#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "essa/adapters.hpp"
#include "essa/optim.hpp"
#include "essa/params.hpp"
#include "essa/rng.hpp"
#include "essa/tensor.hpp"
#include "essa/vit.hpp"

namespace essa {

/// Projection head for self-distillation: 2-layer MLP (d -> hidden ->
/// bottleneck, GELU), then an L2-normalized bottleneck embedding scored
/// against K row-normalized prototypes.
struct DinoHeadConfig {
  std::size_t in_dim = 32;
  std::size_t hidden = 128;      // 4 * d by default
  std::size_t bottleneck = 32;   // d by default
  std::size_t num_prototypes = 64;

  static DinoHeadConfig for_backbone(const ViTConfig& config);
};

struct DinoHead {
  DinoHeadConfig config;
  ParamTree params;
};

DinoHead init_dino_head(const DinoHeadConfig& config, std::uint64_t seed);

/// embedding [1, d] -> prototype logits [1, K].
Tensor dino_head_forward(const DinoHeadConfig& config, const ParamTree& params,
                         const Tensor& embedding);

/// EMA copy of the student (backbone + injected + head) plus the prototype
/// center and the distillation temperatures.
struct TeacherState {
  ParamTree backbone;
  ParamTree injected;
  ParamTree head;
  Tensor center;               // [K]
  double momentum = 0.996;     // lambda
  double center_momentum = 0.9;
  double tau_student = 0.1;
  double tau_teacher = 0.04;
};

/// Deep-copies the student trees; requires 0 < tau_teacher <= tau_student.
TeacherState init_teacher(const ParamTree& student_backbone,
                          const ParamTree& student_injected,
                          const ParamTree& student_head,
                          std::size_t num_prototypes, double momentum,
                          double center_momentum, double tau_student,
                          double tau_teacher);

/// Two augmented renderings of one source image, identical shapes.
struct ViewPair {
  Tensor first;
  Tensor second;
};

struct AugConfig {
  bool crop = true;
  double crop_min_scale = 0.5;
  double crop_max_scale = 1.0;
  bool hflip = true;
  bool jitter = true;
  double jitter_strength = 0.2;
  bool noise = true;
  double noise_sigma = 0.02;

  static AugConfig all_off();
};

/// Random resized crop (bilinear), horizontal flip, brightness/contrast
/// jitter, Gaussian pixel noise; output clamped to [0, 1]. Deterministic
/// given the rng stream state.
ViewPair make_views(const Tensor& image, RngStream& rng,
                    const AugConfig& config);

/// Cross-view self-distillation loss. Teacher logits are plain values
/// (already detached); the gradient flows only through the student logits.
/// loss = mean over the two cross pairs (v != w) of
///   -sum_k softmax((teacher_v - c)/tau_t)[k] * log_softmax(student_w/tau_s)[k]
Tensor dino_loss(const std::array<Tensor, 2>& student_logits,
                 const std::array<std::vector<double>, 2>& teacher_logits,
                 std::span<const double> center, double tau_student,
                 double tau_teacher);

/// theta_t <- lambda * theta_t + (1 - lambda) * theta_s, elementwise over
/// the whole tree (frozen entries are equal in both trees, so including
/// them is a no-op that keeps the rule uniform).
void update_teacher(ParamTree& teacher_tree, const ParamTree& student_tree,
                    double momentum);

/// c <- m * c + (1 - m) * mean over batch and views of raw teacher logits.
void update_center(Tensor& center,
                   const std::vector<std::vector<double>>& teacher_batch_logits,
                   double center_momentum);

/// One self-distillation step, in fixed order: student/teacher forwards,
/// loss, backward, gradient mask, optimizer step, teacher EMA, center
/// update. Returns the batch loss.
double ssl_step(const ViTConfig& config, ParamTree& student_backbone,
                ParamTree& student_injected, const AdapterSpec& spec,
                DinoHead& student_head, TeacherState& teacher,
                const TrainabilityMask& mask, AdamW& optimizer, int epoch,
                const std::vector<ViewPair>& batch);

}  // namespace essa
