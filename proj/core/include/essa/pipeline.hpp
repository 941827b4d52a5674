#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include "essa/adapters.hpp"
#include "essa/data.hpp"
#include "essa/optim.hpp"
#include "essa/ssl.hpp"
#include "essa/vit.hpp"

namespace essa {

enum class Stage { none, essa, sa, ttt };

std::string stage_name(Stage s);

enum class SaMode { full, peft };

/// Declarative description of one adaptation stage.
struct StageConfig {
  Stage stage = Stage::essa;
  int epochs = 100;
  std::size_t batch_size = 64;
  double base_lr = 5e-4;
  int warmup_epochs = 10;
  AdapterSpec adapter;
  std::uint64_t seed = 42;
  std::string dataset_path;
  SaMode sa_mode = SaMode::full;

  void validate() const;
};

/// Linear classifier over the class-token embedding.
struct PredictionHead {
  std::size_t in_dim = 0;
  std::size_t num_classes = 0;
  ParamTree params;  // head.weight [C x d], head.bias [C]
};

PredictionHead init_prediction_head(std::size_t in_dim,
                                    std::size_t num_classes,
                                    std::uint64_t seed);

Tensor prediction_head_forward(const PredictionHead& head,
                               const Tensor& embedding);

/// Everything a run carries between stages and into checkpoints. The model
/// artifact is (backbone, injected, injection_spec); heads, teacher,
/// optimizer moments, and rng streams exist for training and resumption.
struct RunState {
  std::string preset = "tiny";
  ViTConfig config;
  ParamTree backbone;
  ParamTree injected;
  /// Forward-behavior spec of the injected parameters (kind full = none).
  AdapterSpec injection_spec;

  std::optional<DinoHead> dino_head;
  std::optional<TeacherState> teacher;
  std::optional<PredictionHead> head;

  Stage stage = Stage::none;
  int epoch = 0;  // next epoch to run
  bool completed = true;
  std::string stage_adapter;  // last stage's adapter tag, for reporting
  std::optional<AdamW::Snapshot> optimizer;
  std::map<std::string, std::uint64_t> rng_state;

  AdapterContext forward_ctx() const {
    return AdapterContext{&injection_spec, &injected};
  }
};

/// Fresh random-init model (the stand-in for a pretrained foundation model;
/// chain self-supervised runs to simulate pretraining).
RunState init_run_state(const std::string& preset, std::uint64_t seed);

struct EpochRecord {
  std::string stage;
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double steps_per_sec = 0.0;
  std::size_t trainable_count = 0;
  double trainable_fraction = 0.0;
  std::string adapter;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Self-supervised adaptation under config.adapter. Labels in the dataset,
/// if any, are ignored. stop_after > 0 ends the run early after that many
/// total epochs (checkpointable mid-stage).
void run_essa(RunState& state, const Dataset& unlabeled_data,
              const StageConfig& config, const EpochCallback& on_epoch = {},
              int stop_after = 0);

/// Supervised fine-tuning with a prediction head. sa_mode=full trains
/// everything; sa_mode=peft trains config.adapter's subset plus the head.
void run_sa(RunState& state, const Dataset& labeled_data,
            const StageConfig& config, const EpochCallback& on_epoch = {},
            int stop_after = 0);

/// Test-time training: self-supervised adaptation on unlabeled test data
/// with the prediction head bitwise frozen.
void run_ttt(RunState& state, const Dataset& unlabeled_test_data,
             const StageConfig& config, const EpochCallback& on_epoch = {},
             int stop_after = 0);

struct ResourceReport {
  std::size_t trainable_count = 0;
  double trainable_fraction = 0.0;
  std::size_t optimizer_state_bytes = 0;
  std::size_t grads_bytes = 0;
  double measured_steps_per_sec = 0.0;
};

/// Exact parameter/memory accounting for a spec (head excluded: it is
/// common to every regime), plus wall-clock ssl_step throughput measured
/// over 50 steps after 10 warm-up steps on synthetic inputs at
/// config.batch_size. Set measure_throughput=false to skip the timing.
ResourceReport account_resources(const AdapterSpec& spec,
                                 const Backbone& backbone,
                                 const StageConfig& config,
                                 bool measure_throughput = true);

}  // namespace essa
