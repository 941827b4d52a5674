#include "essa/pipeline.hpp"

#include <chrono>
#include <cmath>

#include "essa/errors.hpp"
#include "essa/ops.hpp"
#include "essa/rng.hpp"

namespace essa {

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::none:
      return "none";
    case Stage::essa:
      return "essa";
    case Stage::sa:
      return "sa";
    case Stage::ttt:
      return "ttt";
  }
  return "?";
}

void StageConfig::validate() const {
  if (epochs < 1) throw ConfigError("stage config: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("stage config: batch_size must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs >= epochs) {
    throw ConfigError("stage config: warmup_epochs must be in [0, epochs)");
  }
  adapter.validate();
}

PredictionHead init_prediction_head(std::size_t in_dim,
                                    std::size_t num_classes,
                                    std::uint64_t seed) {
  if (num_classes < 2) {
    throw ConfigError("prediction head: need >= 2 classes");
  }
  RngStream init(derive_seed(seed, "prediction_head_init"));
  PredictionHead head;
  head.in_dim = in_dim;
  head.num_classes = num_classes;
  Tensor w = Tensor::zeros({num_classes, in_dim});
  for (auto& v : w.data()) v = init.truncated_normal(0.0, 0.02);
  head.params.add("head.weight", std::move(w));
  head.params.add("head.bias", Tensor::zeros({num_classes}));
  return head;
}

Tensor prediction_head_forward(const PredictionHead& head,
                               const Tensor& embedding) {
  return linear(embedding, head.params.at("head.weight"),
                head.params.at("head.bias"));
}

RunState init_run_state(const std::string& preset, std::uint64_t seed) {
  RunState state;
  state.preset = preset;
  state.config = ViTConfig::preset(preset);
  state.backbone = init_backbone_params(state.config, seed);
  state.injection_spec = AdapterSpec::full();
  return state;
}

namespace {

constexpr double kTeacherMomentum = 0.996;
constexpr double kCenterMomentum = 0.9;
constexpr double kTauStudent = 0.1;
constexpr double kTauTeacher = 0.04;

/// Creates or reuses injected parameters for an additive stage spec.
/// Stacking two different additive adapters is not supported.
void prepare_injection(RunState& state, const AdapterSpec& spec,
                       std::uint64_t seed) {
  const bool additive =
      spec.kind == AdapterKind::lora || spec.kind == AdapterKind::vpt;
  if (!additive) return;
  if (state.injected.empty()) {
    state.injected = inject_adapter_params(spec, state.config, seed);
    state.injection_spec = spec;
    return;
  }
  if (!injection_compatible(state.injection_spec, spec)) {
    throw ConfigError(
        "adapter '" + spec.name() + "' conflicts with the '" +
        state.injection_spec.name() +
        "' parameters already injected in an earlier stage; stacking "
        "different additive adapters is not supported");
  }
  // Same structure: keep tuning the existing injected parameters.
}

/// Backbone mask from the spec plus always-trainable injected entries; the
/// accounting domain of trainable_count.
TrainabilityMask model_mask(const RunState& state, const AdapterSpec& spec) {
  TrainabilityMask mask =
      build_backbone_mask(spec, state.config, state.backbone);
  for (const auto& name : state.injected.names()) {
    mask.set(name, TrainabilityMask::Entry::all(true));
  }
  return mask;
}

/// Full mask for a stage: backbone entries from the spec, injected and head
/// entries always trainable (the prediction head is excluded during TTT by
/// simply not appearing here).
TrainabilityMask stage_mask(const RunState& state, const AdapterSpec& spec,
                            bool dino_head_trainable,
                            bool prediction_head_trainable) {
  TrainabilityMask mask =
      build_backbone_mask(spec, state.config, state.backbone);
  for (const auto& name : state.injected.names()) {
    mask.set(name, TrainabilityMask::Entry::all(true));
  }
  if (state.dino_head) {
    for (const auto& name : state.dino_head->params.names()) {
      mask.set(name, TrainabilityMask::Entry::all(dino_head_trainable));
    }
  }
  if (state.head) {
    for (const auto& name : state.head->params.names()) {
      mask.set(name, TrainabilityMask::Entry::all(prediction_head_trainable));
    }
  }
  return mask;
}

void set_model_requires_grad(RunState& state, const TrainabilityMask& mask,
                             bool dino_head_trainable,
                             bool prediction_head_trainable) {
  for (const auto& name : state.backbone.names()) {
    state.backbone.at(name).set_requires_grad(mask.at(name).any_trainable());
  }
  for (const auto& name : state.injected.names()) {
    state.injected.at(name).set_requires_grad(true);
  }
  if (state.dino_head)
    state.dino_head->params.set_requires_grad(dino_head_trainable);
  if (state.head) state.head->params.set_requires_grad(prediction_head_trainable);
}

AdamW build_optimizer(RunState& state, const TrainabilityMask& mask,
                      const StageConfig& config, bool with_dino_head,
                      bool with_prediction_head) {
  AdamWConfig opt_cfg;
  opt_cfg.base_lr = config.base_lr;
  opt_cfg.warmup_epochs = config.warmup_epochs;
  opt_cfg.total_epochs = config.epochs;
  AdamW optimizer(opt_cfg);
  optimizer.add_tree(state.backbone, mask);
  optimizer.add_tree(state.injected, mask);
  if (with_dino_head && state.dino_head)
    optimizer.add_tree(state.dino_head->params, mask);
  if (with_prediction_head && state.head)
    optimizer.add_tree(state.head->params, mask);
  return optimizer;
}

bool resuming_stage(const RunState& state, const StageConfig& config) {
  return state.stage == config.stage && !state.completed && state.epoch > 0 &&
         state.epoch < config.epochs && state.optimizer.has_value();
}

struct StageStreams {
  RngStream data;
  RngStream augment;
};

StageStreams open_streams(RunState& state, const StageConfig& config,
                          bool fresh) {
  const std::string tag = stage_name(config.stage);
  if (fresh) {
    state.rng_state[tag + ".data"] = derive_seed(config.seed, tag + ".data");
    state.rng_state[tag + ".augment"] =
        derive_seed(config.seed, tag + ".augment");
  }
  return StageStreams{RngStream(state.rng_state.at(tag + ".data")),
                      RngStream(state.rng_state.at(tag + ".augment"))};
}

void store_streams(RunState& state, const StageConfig& config,
                   const StageStreams& streams) {
  const std::string tag = stage_name(config.stage);
  state.rng_state[tag + ".data"] = streams.data.state();
  state.rng_state[tag + ".augment"] = streams.augment.state();
}

/// Shared epoch loop for the self-distillation stages (essa and ttt).
void run_ssl_stage(RunState& state, const Dataset& data,
                   const StageConfig& config, const EpochCallback& on_epoch,
                   int stop_after, bool prediction_head_trainable) {
  config.validate();
  if (data.count() == 0) {
    throw DataError(stage_name(config.stage) + ": empty dataset");
  }

  const bool resume = resuming_stage(state, config);
  if (!resume) {
    prepare_injection(state, config.adapter,
                      derive_seed(config.seed, "inject"));
    DinoHeadConfig head_cfg = DinoHeadConfig::for_backbone(state.config);
    state.dino_head = init_dino_head(
        head_cfg, derive_seed(config.seed, stage_name(config.stage) + ".head"));
    state.teacher = init_teacher(state.backbone, state.injected,
                                 state.dino_head->params,
                                 head_cfg.num_prototypes, kTeacherMomentum,
                                 kCenterMomentum, kTauStudent, kTauTeacher);
    state.stage = config.stage;
    state.epoch = 0;
    state.completed = false;
    state.optimizer.reset();
  }
  if (!state.dino_head || !state.teacher) {
    throw ContractError(stage_name(config.stage) +
                        ": resume state lacks SSL components");
  }

  TrainabilityMask mask = stage_mask(state, config.adapter,
                                     /*dino_head_trainable=*/true,
                                     prediction_head_trainable);
  set_model_requires_grad(state, mask, true, prediction_head_trainable);
  AdamW optimizer = build_optimizer(state, mask, config,
                                    /*with_dino_head=*/true,
                                    prediction_head_trainable);
  if (resume) optimizer.restore(*state.optimizer);

  const TrainableCount accounting = trainable_count(
      model_mask(state, config.adapter), state.backbone, state.injected);
  StageStreams streams = open_streams(state, config, !resume);
  const AugConfig aug;
  const int last_epoch =
      stop_after > 0 ? std::min(stop_after, config.epochs) : config.epochs;

  for (int epoch = state.epoch; epoch < last_epoch; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = streams.data.permutation(data.count());
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += config.batch_size) {
      const std::size_t end =
          std::min(order.size(), begin + config.batch_size);
      std::vector<ViewPair> batch;
      batch.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        batch.push_back(make_views(data.image(order[i]), streams.augment, aug));
      }
      loss_sum += ssl_step(state.config, state.backbone, state.injected,
                           state.injection_spec, *state.dino_head,
                           *state.teacher, mask, optimizer, epoch, batch);
      ++steps;
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();

    state.epoch = epoch + 1;
    state.optimizer = optimizer.snapshot();
    store_streams(state, config, streams);
    if (on_epoch) {
      on_epoch(EpochRecord{stage_name(config.stage), epoch,
                           loss_sum / static_cast<double>(steps),
                           optimizer.learning_rate(epoch),
                           secs > 0 ? static_cast<double>(steps) / secs : 0.0,
                           accounting.count, accounting.fraction_of_backbone,
                           config.adapter.name()});
    }
  }
  state.stage_adapter = config.adapter.name();
  if (state.epoch >= config.epochs) state.completed = true;
}

}  // namespace

void run_essa(RunState& state, const Dataset& unlabeled_data,
              const StageConfig& config, const EpochCallback& on_epoch,
              int stop_after) {
  if (config.stage != Stage::essa) {
    throw ContractError("run_essa: config.stage must be essa");
  }
  run_ssl_stage(state, unlabeled_data, config, on_epoch, stop_after,
                /*prediction_head_trainable=*/false);
}

void run_ttt(RunState& state, const Dataset& unlabeled_test_data,
             const StageConfig& config, const EpochCallback& on_epoch,
             int stop_after) {
  if (config.stage != Stage::ttt) {
    throw ContractError("run_ttt: config.stage must be ttt");
  }
  if (!state.head) {
    throw ContractError("run_ttt: no trained prediction head in the model");
  }
  run_ssl_stage(state, unlabeled_test_data, config, on_epoch, stop_after,
                /*prediction_head_trainable=*/false);
}

void run_sa(RunState& state, const Dataset& labeled_data,
            const StageConfig& config, const EpochCallback& on_epoch,
            int stop_after) {
  if (config.stage != Stage::sa) {
    throw ContractError("run_sa: config.stage must be sa");
  }
  config.validate();
  if (labeled_data.count() == 0) throw DataError("sa: empty dataset");
  if (!labeled_data.labeled) {
    throw DataError("sa: labels required but the dataset is unlabeled");
  }
  const std::size_t num_classes = labeled_data.num_classes();
  if (num_classes < 2) throw DataError("sa: need >= 2 classes");

  const bool resume = resuming_stage(state, config);
  if (!resume) {
    // Supervised stage: distillation state is dropped from the artifact.
    state.dino_head.reset();
    state.teacher.reset();
    if (config.sa_mode == SaMode::peft) {
      prepare_injection(state, config.adapter,
                        derive_seed(config.seed, "inject"));
    }
    if (!state.head || state.head->num_classes != num_classes) {
      state.head = init_prediction_head(state.config.embed_dim, num_classes,
                                        derive_seed(config.seed, "sa.head"));
    }
    state.stage = Stage::sa;
    state.epoch = 0;
    state.completed = false;
    state.optimizer.reset();
  }
  if (!state.head) throw ContractError("sa: resume state lacks a head");
  if (state.head->num_classes < num_classes) {
    throw DataError("sa: dataset has " + std::to_string(num_classes) +
                    " classes but the head expects " +
                    std::to_string(state.head->num_classes));
  }

  const AdapterSpec mask_spec = config.sa_mode == SaMode::full
                                    ? AdapterSpec::full()
                                    : config.adapter;
  TrainabilityMask mask = stage_mask(state, mask_spec,
                                     /*dino_head_trainable=*/false,
                                     /*prediction_head_trainable=*/true);
  set_model_requires_grad(state, mask, false, true);
  AdamW optimizer =
      build_optimizer(state, mask, config, false, /*with_prediction_head=*/true);
  if (resume) optimizer.restore(*state.optimizer);

  const TrainableCount accounting = trainable_count(
      model_mask(state, mask_spec), state.backbone, state.injected);
  StageStreams streams = open_streams(state, config, !resume);
  const AdapterContext ctx = state.forward_ctx();
  const int last_epoch =
      stop_after > 0 ? std::min(stop_after, config.epochs) : config.epochs;

  for (int epoch = state.epoch; epoch < last_epoch; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = streams.data.permutation(labeled_data.count());
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += config.batch_size) {
      const std::size_t end =
          std::min(order.size(), begin + config.batch_size);
      Tape tape;
      TapeScope scope(tape);
      std::vector<Tensor> embeddings;
      std::vector<std::size_t> labels;
      embeddings.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        Features f = forward_features(state.config, state.backbone,
                                      labeled_data.image(order[i]), &ctx);
        embeddings.push_back(f.cls_embedding);
        labels.push_back(labeled_data.label(order[i]));
      }
      Tensor logits =
          prediction_head_forward(*state.head, concat_rows(embeddings));
      Tensor loss = cross_entropy_mean(logits, labels);
      loss_sum += loss.item();
      tape.backward(loss);
      apply_grad_mask(state.backbone, mask);
      optimizer.step(epoch);
      optimizer.zero_grad();
      state.backbone.zero_grad();
      state.injected.zero_grad();
      state.head->params.zero_grad();
      ++steps;
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();

    state.epoch = epoch + 1;
    state.optimizer = optimizer.snapshot();
    store_streams(state, config, streams);
    if (on_epoch) {
      on_epoch(EpochRecord{"sa", epoch,
                           loss_sum / static_cast<double>(steps),
                           optimizer.learning_rate(epoch),
                           secs > 0 ? static_cast<double>(steps) / secs : 0.0,
                           accounting.count, accounting.fraction_of_backbone,
                           config.sa_mode == SaMode::full
                               ? "full"
                               : config.adapter.name()});
    }
  }
  state.stage_adapter =
      config.sa_mode == SaMode::full ? "full" : config.adapter.name();
  if (state.epoch >= config.epochs) state.completed = true;
}

ResourceReport account_resources(const AdapterSpec& spec,
                                 const Backbone& backbone,
                                 const StageConfig& config,
                                 bool measure_throughput) {
  ResourceReport report;
  TrainabilityMask accounting_mask =
      build_backbone_mask(spec, backbone.config, backbone.params);
  ParamTree injected = inject_adapter_params(spec, backbone.config,
                                             derive_seed(config.seed, "inject"));
  for (const auto& name : injected.names()) {
    accounting_mask.set(name, TrainabilityMask::Entry::all(true));
  }
  const TrainableCount counts =
      trainable_count(accounting_mask, backbone.params, injected);
  report.trainable_count = counts.count;
  report.trainable_fraction = counts.fraction_of_backbone;
  // Two 64-bit moment buffers per trainable value; one 64-bit gradient per
  // trainable value in subset-optimizer mode.
  report.optimizer_state_bytes = counts.count * 2 * sizeof(double);
  report.grads_bytes = counts.count * sizeof(double);

  if (!measure_throughput) return report;

  RunState state;
  state.preset = "bench";
  state.config = backbone.config;
  state.backbone = backbone.params.clone();
  state.injected = std::move(injected);
  state.injection_spec =
      (spec.kind == AdapterKind::lora || spec.kind == AdapterKind::vpt)
          ? spec
          : AdapterSpec::full();
  DinoHeadConfig head_cfg = DinoHeadConfig::for_backbone(state.config);
  state.dino_head =
      init_dino_head(head_cfg, derive_seed(config.seed, "bench.head"));
  state.teacher = init_teacher(state.backbone, state.injected,
                               state.dino_head->params,
                               head_cfg.num_prototypes, kTeacherMomentum,
                               kCenterMomentum, kTauStudent, kTauTeacher);

  TrainabilityMask mask = stage_mask(state, spec, true, false);
  set_model_requires_grad(state, mask, true, false);
  StageConfig bench_cfg = config;
  bench_cfg.epochs = std::max(config.epochs, 1);
  AdamW optimizer = build_optimizer(state, mask, bench_cfg, true, false);

  RngStream pixel_stream(derive_seed(config.seed, "bench.pixels"));
  const std::size_t s = state.config.image_size, c = state.config.channels;
  std::vector<ViewPair> batch;
  for (std::size_t i = 0; i < config.batch_size; ++i) {
    Tensor a = Tensor::zeros({c, s, s});
    Tensor b = Tensor::zeros({c, s, s});
    for (auto& v : a.data()) v = pixel_stream.uniform();
    for (auto& v : b.data()) v = pixel_stream.uniform();
    batch.push_back(ViewPair{std::move(a), std::move(b)});
  }

  constexpr int kWarmupSteps = 10;
  constexpr int kMeasuredSteps = 50;
  for (int i = 0; i < kWarmupSteps; ++i) {
    ssl_step(state.config, state.backbone, state.injected,
             state.injection_spec, *state.dino_head, *state.teacher, mask,
             optimizer, 0, batch);
  }
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < kMeasuredSteps; ++i) {
    ssl_step(state.config, state.backbone, state.injected,
             state.injection_spec, *state.dino_head, *state.teacher, mask,
             optimizer, 0, batch);
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  report.measured_steps_per_sec =
      secs > 0 ? static_cast<double>(kMeasuredSteps) / secs : 0.0;
  return report;
}

}  // namespace essa
