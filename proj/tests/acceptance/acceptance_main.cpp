// Acceptance suite: runs every criterion at its stated tolerance and prints
// one PASS/FAIL line per criterion. Exit code 0 iff all pass.
//
// Usage: acceptance [criterion-number ...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <vector>

#include "essa/adapters.hpp"
#include "essa/checkpoint.hpp"
#include "essa/data.hpp"
#include "essa/eval.hpp"
#include "essa/ops.hpp"
#include "essa/optim.hpp"
#include "essa/pipeline.hpp"
#include "essa/rng.hpp"
#include "essa/ssl.hpp"
#include "essa/vit.hpp"

using namespace essa;
namespace fs = std::filesystem;

namespace {

// ---- shared helpers --------------------------------------------------------

struct Outcome {
  bool pass = false;
  std::string detail;
};

double median3(double a, double b, double c) {
  std::vector<double> v = {a, b, c};
  std::sort(v.begin(), v.end());
  return v[1];
}

double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         (std::abs(analytic) + std::abs(numeric) + 1e-3);
}

Tensor random_image(const ViTConfig& cfg, RngStream& rng) {
  Tensor img = Tensor::zeros({cfg.channels, cfg.image_size, cfg.image_size});
  for (auto& v : img.data()) v = rng.uniform();
  return img;
}

bool tensors_bit_identical(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(),
                     a.numel() * sizeof(double)) == 0;
}

// The synthetic benchmark used by criteria 7 and 8.
SynthSpec benchmark_data_spec(std::uint64_t seed) {
  SynthSpec spec;
  spec.num_classes = 4;
  spec.image_size = 16;
  spec.train_count = 256;
  spec.val_count = 32;
  spec.test_count = 192;
  spec.shift_strength = 1.0;
  spec.seed = seed;
  return spec;
}

StageConfig stage_config(Stage stage, const AdapterSpec& adapter, int epochs,
                         double lr, std::uint64_t seed) {
  StageConfig cfg;
  cfg.stage = stage;
  cfg.epochs = epochs;
  cfg.batch_size = 32;
  cfg.base_lr = lr;
  cfg.warmup_epochs = std::max(1, epochs / 10);
  cfg.adapter = adapter;
  cfg.seed = seed;
  return cfg;
}

double knn_accuracy(const RunState& state, const Dataset& gallery,
                    const Dataset& queries) {
  const AdapterContext ctx = state.forward_ctx();
  return evaluate_knn_protocol(state.config, state.backbone, &ctx, gallery,
                               queries, 20, 0.07, EvalMetric::accuracy);
}

double head_accuracy(const RunState& state, const Dataset& data) {
  const AdapterContext ctx = state.forward_ctx();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.count(); ++i) {
    auto e = embed_image(state.config, state.backbone, &ctx, data.image(i));
    NoGradScope no_grad;
    Tensor logits = prediction_head_forward(
        *state.head, Tensor::from_data({1, e.size()}, e));
    std::size_t best = 0;
    for (std::size_t c = 1; c < state.head->num_classes; ++c) {
      if (logits.at(c) > logits.at(best)) best = c;
    }
    if (best == data.label(i)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.count());
}

// ---- criterion 1: gradient soundness ---------------------------------------

Outcome criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  const ViTConfig cfg = ViTConfig::preset("tiny");
  Backbone backbone = init_backbone(cfg, 171);
  backbone.params.set_requires_grad(true);
  DinoHeadConfig head_cfg = DinoHeadConfig::for_backbone(cfg);
  DinoHead head = init_dino_head(head_cfg, 172);
  head.params.set_requires_grad(true);

  // Fixed teacher targets and center; fixed pair of views.
  RngStream rng(173);
  const Tensor view_a = random_image(cfg, rng);
  const Tensor view_b = random_image(cfg, rng);
  std::array<std::vector<double>, 2> teacher_logits;
  for (auto& t : teacher_logits) {
    t.resize(head_cfg.num_prototypes);
    for (auto& v : t) v = rng.normal(0.0, 0.5);
  }
  std::vector<double> center(head_cfg.num_prototypes);
  for (auto& v : center) v = rng.normal(0.0, 0.1);

  auto loss_value = [&]() {
    std::array<Tensor, 2> student;
    const Tensor* views[2] = {&view_a, &view_b};
    for (int v = 0; v < 2; ++v) {
      Features f = forward_features(backbone, *views[v], nullptr);
      student[v] = dino_head_forward(head_cfg, head.params, f.cls_embedding);
    }
    return dino_loss(student, teacher_logits, center, 0.1, 0.04);
  };

  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = loss_value();
    tape.backward(loss);
  }
  auto eval = [&] {
    NoGradScope no_grad;
    return loss_value().item();
  };

  double max_err = 0.0;
  std::string worst;
  std::size_t checked = 0;
  auto check_tree = [&](ParamTree& tree) {
    for (const auto& name : tree.names()) {
      Tensor& param = tree.at(name);
      auto grad = param.grad();
      for (std::size_t i = 0; i < param.numel(); ++i) {
        const double analytic = grad.empty() ? 0.0 : grad[i];
        const double saved = param.data()[i];
        param.data()[i] = saved + 1e-5;
        const double up = eval();
        param.data()[i] = saved - 1e-5;
        const double down = eval();
        param.data()[i] = saved;
        const double numeric = (up - down) / 2e-5;
        const double err = rel_err(analytic, numeric);
        if (err > max_err) {
          max_err = err;
          worst = name + "[" + std::to_string(i) + "]";
        }
        ++checked;
      }
    }
  };
  check_tree(backbone.params);
  check_tree(head.params);

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  std::ostringstream detail;
  detail << checked << " params, max rel err " << max_err << " at " << worst
         << ", " << secs << " s";
  return {max_err < 1e-4 && secs < 60.0, detail.str()};
}

// ---- criterion 2: freeze invariants ----------------------------------------

Outcome criterion2() {
  const auto t0 = std::chrono::steady_clock::now();
  SynthSpec data_spec;
  data_spec.num_classes = 2;
  data_spec.image_size = 16;
  data_spec.train_count = 16;
  data_spec.seed = 21;
  Dataset labeled = generate(data_spec, Split::train, Domain::source);
  Dataset unlabeled = without_labels(labeled);

  bool all_ok = true;
  std::string failure;
  for (const AdapterSpec& spec :
       {AdapterSpec::lora(4, 8.0, {LoraTarget::q, LoraTarget::v}),
        AdapterSpec::vpt(4, VptMode::shallow), AdapterSpec::bitfit(),
        AdapterSpec::apla(0.25, 9)}) {
    RunState state = init_run_state("tiny", 211);
    ParamTree initial = state.backbone.clone();

    // 10 ssl steps (batch=data so one step per epoch), then 10 SA steps.
    StageConfig essa_cfg = stage_config(Stage::essa, spec, 10, 5e-3, 77);
    essa_cfg.batch_size = 16;
    essa_cfg.warmup_epochs = 0;
    run_essa(state, unlabeled, essa_cfg);
    StageConfig sa_cfg = stage_config(Stage::sa, spec, 10, 5e-3, 78);
    sa_cfg.batch_size = 16;
    sa_cfg.warmup_epochs = 0;
    sa_cfg.sa_mode = SaMode::peft;
    run_sa(state, labeled, sa_cfg);

    TrainabilityMask mask =
        build_backbone_mask(spec, state.config, state.backbone);
    for (const auto& name : state.backbone.names()) {
      const auto& entry = mask.at(name);
      const auto now = state.backbone.at(name).data();
      const auto was = initial.at(name).data();
      if (entry.whole && !entry.trainable) {
        if (std::memcmp(now.data(), was.data(),
                        now.size() * sizeof(double)) != 0) {
          all_ok = false;
          failure = spec.name() + ":" + name;
        }
      } else if (!entry.whole) {
        std::set<std::size_t> cols(entry.columns.begin(),
                                   entry.columns.end());
        const std::size_t width = state.backbone.at(name).cols();
        for (std::size_t i = 0; i < now.size(); ++i) {
          if (!cols.count(i % width) && now[i] != was[i]) {
            all_ok = false;
            failure = spec.name() + ":" + name + " frozen column";
            break;
          }
        }
      }
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  std::ostringstream detail;
  detail << "lora/vpt/bitfit/apla after 10 ssl + 10 sa steps, " << secs
         << " s";
  if (!all_ok) detail << ", first violation: " << failure;
  return {all_ok && secs < 60.0, detail.str()};
}

// ---- criterion 3: LoRA identity at init ------------------------------------

Outcome criterion3() {
  const ViTConfig cfg = ViTConfig::preset("tiny");
  Backbone backbone = init_backbone(cfg, 31);
  AdapterSpec spec = AdapterSpec::lora(4, 8.0, {LoraTarget::q, LoraTarget::v});
  auto [mask, injected] = build_mask(spec, backbone, 32);
  AdapterContext ctx{&spec, &injected};

  RngStream rng(33);
  double max_diff = 0.0;
  for (int i = 0; i < 4; ++i) {
    Tensor image = random_image(cfg, rng);
    Features base = forward_features(backbone, image, nullptr);
    Features adapted = forward_features(backbone, image, &ctx);
    for (std::size_t j = 0; j < base.tokens.numel(); ++j) {
      max_diff = std::max(max_diff, std::abs(base.tokens.data()[j] -
                                             adapted.tokens.data()[j]));
    }
  }
  std::ostringstream detail;
  detail << "max abs diff " << max_diff << " over 4 images (B=0)";
  return {max_diff == 0.0, detail.str()};
}

// ---- criterion 4: trainable counts -----------------------------------------

Outcome criterion4() {
  bool ok = true;
  std::ostringstream detail;

  for (const char* preset : {"tiny", "small"}) {
    const ViTConfig cfg = ViTConfig::preset(preset);
    Backbone backbone = init_backbone(cfg, 41);
    const std::size_t d = cfg.embed_dim;
    const std::size_t depth = cfg.depth;

    std::size_t bias_total = 0;
    for (const auto& [name, shape] : backbone_schema(cfg)) {
      if (name.ends_with(".bias")) bias_total += shape_numel(shape);
    }
    struct Case {
      AdapterSpec spec;
      std::size_t closed_form;
    };
    const std::vector<Case> cases = {
        {AdapterSpec::full(), backbone.params.total_elements()},
        {AdapterSpec::lora(2, 4.0, {LoraTarget::q, LoraTarget::v}),
         depth * 2 * 2 * (d + d)},
        {AdapterSpec::lora(4, 8.0, {LoraTarget::q, LoraTarget::v}),
         depth * 2 * 4 * (d + d)},
        {AdapterSpec::vpt(4, VptMode::shallow), 4 * d},
        {AdapterSpec::vpt(8, VptMode::shallow), 8 * d},
        {AdapterSpec::bitfit(), bias_total},
        {AdapterSpec::apla(0.25, 3),
         depth * static_cast<std::size_t>(std::ceil(0.25 * d)) * d},
        {AdapterSpec::apla(0.1, 3),
         depth * static_cast<std::size_t>(std::ceil(0.1 * d)) * d},
    };
    for (const auto& c : cases) {
      auto [mask, injected] = build_mask(c.spec, backbone, 42);
      const std::size_t enumerated =
          trainable_count(mask, backbone.params, injected).count;
      if (enumerated != c.closed_form) {
        ok = false;
        detail << preset << "/" << c.spec.name() << " enumerated "
               << enumerated << " != closed form " << c.closed_form << "; ";
      }
    }
  }

  // The three pinned tiny-preset values.
  const ViTConfig tiny = ViTConfig::preset("tiny");
  Backbone backbone = init_backbone(tiny, 43);
  auto count_of = [&](const AdapterSpec& spec) {
    auto [mask, injected] = build_mask(spec, backbone, 44);
    return trainable_count(mask, backbone.params, injected).count;
  };
  const std::size_t lora_count =
      count_of(AdapterSpec::lora(2, 4.0, {LoraTarget::q, LoraTarget::v}));
  const std::size_t apla_count = count_of(AdapterSpec::apla(0.25, 5));
  const std::size_t vpt_count =
      count_of(AdapterSpec::vpt(4, VptMode::shallow));
  if (lora_count != 512 || apla_count != 512 || vpt_count != 128) {
    ok = false;
  }
  detail << "tiny lora r=2 {q,v}=" << lora_count << ", apla 0.25=" << apla_count
         << ", vpt p=4=" << vpt_count;
  return {ok, detail.str()};
}

// ---- criterion 5: oracle equivalence ---------------------------------------

Outcome criterion5() {
  RngStream rng(51);
  bool ok = true;
  std::ostringstream detail;

  // knn vs brute force, 100 random cases.
  double max_knn_diff = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t g = 20 + rng.uniform_index(60);
    const std::size_t d = 4 + rng.uniform_index(12);
    const std::size_t classes = 2 + rng.uniform_index(4);
    std::vector<double> rows(g * d);
    for (auto& v : rows) v = rng.normal();
    std::vector<std::uint16_t> labels(g);
    for (auto& l : labels)
      l = static_cast<std::uint16_t>(rng.uniform_index(classes));
    EmbeddingIndex index = build_index(rows, d, labels);
    std::vector<double> query(d);
    for (auto& v : query) v = rng.normal();
    const std::size_t k = 1 + rng.uniform_index(g);

    KnnResult fast = knn_predict(index, query, k, 0.07);

    // Brute force: normalize, full sort, exhaustive weighting.
    std::vector<double> qn = query;
    double norm = 0.0;
    for (double v : qn) norm += v * v;
    norm = std::max(std::sqrt(norm), 1e-12);
    for (auto& v : qn) v /= norm;
    std::vector<std::pair<double, std::size_t>> sims(g);
    for (std::size_t r = 0; r < g; ++r) {
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i)
        s += index.embeddings[r * d + i] * qn[i];
      sims[r] = {s, r};
    }
    std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    std::vector<double> scores(classes, 0.0);
    for (std::size_t i = 0; i < k; ++i)
      scores[labels[sims[i].second]] += std::exp(sims[i].first / 0.07);
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (scores[c] > scores[best]) best = c;
    if (fast.label != best) ok = false;
    for (std::size_t c = 0; c < classes; ++c) {
      max_knn_diff =
          std::max(max_knn_diff, std::abs(fast.class_scores[c] - scores[c]));
    }
  }
  if (max_knn_diff > 1e-12) ok = false;
  detail << "knn max score diff " << max_knn_diff;

  // kappa vs direct formula, 100 random confusion matrices.
  double max_kappa_diff = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 2 + rng.uniform_index(5);
    ConfusionMatrix cm(k);
    for (auto& c : cm.counts) c = rng.uniform_index(12);
    cm.at(0, 0) += 1;
    cm.at(k - 1, 0) += 1;  // keep margins non-degenerate
    const double total = static_cast<double>(cm.total());
    std::vector<double> row(k, 0.0), col(k, 0.0);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        row[i] += static_cast<double>(cm.at(i, j));
        col[j] += static_cast<double>(cm.at(i, j));
      }
    double wo = 0.0, we = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const double w = static_cast<double>((static_cast<long>(i) -
                                              static_cast<long>(j)) *
                                             (static_cast<long>(i) -
                                              static_cast<long>(j))) /
                         static_cast<double>((k - 1) * (k - 1));
        wo += w * static_cast<double>(cm.at(i, j)) / total;
        we += w * (row[i] / total) * (col[j] / total);
      }
    }
    const double expected = 1.0 - wo / we;
    max_kappa_diff =
        std::max(max_kappa_diff, std::abs(quadratic_kappa(cm).value - expected));
  }
  if (max_kappa_diff > 1e-12) ok = false;
  detail << ", kappa max diff " << max_kappa_diff;

  // auc vs pairwise oracle, 100 random cases with ties.
  double max_auc_diff = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 10 + rng.uniform_index(30);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (auto& s : scores) s = 0.1 * static_cast<double>(rng.uniform_index(10));
    labels[0] = 1;
    labels[1] = 0;
    for (std::size_t i = 2; i < n; ++i) labels[i] = rng.bernoulli(0.5);
    double wins = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (labels[i] == 1 && labels[j] == 0) {
          ++pairs;
          wins += scores[i] > scores[j] ? 1.0
                                        : (scores[i] == scores[j] ? 0.5 : 0.0);
        }
    max_auc_diff = std::max(
        max_auc_diff, std::abs(roc_auc(scores, labels) - wins / pairs));
  }
  if (max_auc_diff > 1e-12) ok = false;
  detail << ", auc max diff " << max_auc_diff;
  return {ok, detail.str()};
}

// ---- criterion 6: SSL sanity -----------------------------------------------

Outcome criterion6() {
  bool ok = true;
  std::ostringstream detail;

  // Uniform-logit loss = ln K to 1e-12.
  const std::size_t k = 64;
  std::array<Tensor, 2> student = {Tensor::full({k}, 0.25),
                                   Tensor::full({k}, 0.25)};
  std::array<std::vector<double>, 2> teacher = {std::vector<double>(k, 1.5),
                                                std::vector<double>(k, 1.5)};
  std::vector<double> center(k, 0.0);
  const double uniform_loss =
      dino_loss(student, teacher, center, 0.1, 0.04).item();
  if (std::abs(uniform_loss - std::log(k)) > 1e-12) ok = false;
  detail << "uniform loss " << uniform_loss << " vs ln K " << std::log(k);

  // Teacher gradient identically zero: teacher values bit-identical across
  // a backward pass; EMA and centering are the only mutators.
  {
    SynthSpec data_spec;
    data_spec.num_classes = 2;
    data_spec.image_size = 16;
    data_spec.train_count = 8;
    Dataset data = generate(data_spec, Split::train, Domain::source);

    RunState state = init_run_state("tiny", 61);
    DinoHeadConfig hc = DinoHeadConfig::for_backbone(state.config);
    state.dino_head = init_dino_head(hc, 62);
    state.teacher = init_teacher(state.backbone, state.injected,
                                 state.dino_head->params, hc.num_prototypes,
                                 1.0, 1.0, 0.1, 0.04);  // EMA frozen: λ=m=1
    TrainabilityMask mask = build_backbone_mask(
        AdapterSpec::full(), state.config, state.backbone);
    for (const auto& name : state.dino_head->params.names())
      mask.set(name, TrainabilityMask::Entry::all(true));
    apply_requires_grad(state.backbone, state.injected, mask);
    state.dino_head->params.set_requires_grad(true);
    AdamWConfig ocfg;
    ocfg.base_lr = 1e-3;
    ocfg.total_epochs = 10;
    AdamW opt(ocfg);
    opt.add_tree(state.backbone, mask);
    opt.add_tree(state.dino_head->params, mask);

    ParamTree teacher_backbone_before = state.teacher->backbone.clone();
    Tensor center_before = state.teacher->center.clone();
    RngStream rng(63);
    std::vector<ViewPair> batch;
    AugConfig aug;
    for (int i = 0; i < 4; ++i)
      batch.push_back(make_views(data.image(i), rng, aug));
    ssl_step(state.config, state.backbone, state.injected,
             state.injection_spec, *state.dino_head, *state.teacher, mask, opt,
             0, batch);
    // λ = 1 and m = 1: nothing may move the teacher, and no gradient may
    // have reached it.
    if (!trees_bitwise_equal(state.teacher->backbone,
                             teacher_backbone_before)) {
      ok = false;
      detail << "; teacher moved under λ=1";
    }
    if (!tensors_bit_identical(state.teacher->center, center_before)) {
      ok = false;
      detail << "; center moved under m=1";
    }
    for (const auto& name : state.teacher->backbone.names()) {
      if (state.teacher->backbone.at(name).has_grad()) {
        ok = false;
        detail << "; teacher gradient allocated";
        break;
      }
    }
  }

  // EMA endpoint cases, exact.
  {
    ParamTree teacher, student_tree;
    teacher.add("w.weight", Tensor::full({2, 2}, 2.0));
    student_tree.add("w.weight", Tensor::full({2, 2}, 4.0));
    ParamTree t1 = teacher.clone();
    update_teacher(t1, student_tree, 1.0);
    ParamTree t0 = teacher.clone();
    update_teacher(t0, student_tree, 0.0);
    ParamTree th = teacher.clone();
    update_teacher(th, student_tree, 0.5);
    if (!trees_bitwise_equal(t1, teacher) ||
        !trees_bitwise_equal(t0, student_tree) ||
        th.at("w.weight").data()[0] != 3.0) {
      ok = false;
      detail << "; EMA endpoints wrong";
    }
  }
  return {ok, detail.str()};
}

// ---- criterion 7: directional ordering on synthetic shift ------------------

struct OrderingRun {
  double transfer_acc = 0.0;
  double full_acc = 0.0;
  double apla_acc = 0.0;
};

OrderingRun ordering_run(std::uint64_t seed) {
  const SynthSpec data_spec = benchmark_data_spec(1000 + seed);
  Dataset source_train = generate(data_spec, Split::train, Domain::source);
  Dataset target_train = generate(data_spec, Split::train, Domain::target);
  Dataset target_test = generate(data_spec, Split::test, Domain::target);
  Dataset target_unlabeled = without_labels(target_train);

  // "Foundation model": brief self-supervised warm-up on the source domain.
  RunState warm = init_run_state("tiny", 7100 + seed);
  run_essa(warm, without_labels(source_train),
           stage_config(Stage::essa, AdapterSpec::full(), 30, 1e-3,
                        7200 + seed));

  OrderingRun result;
  result.transfer_acc = knn_accuracy(warm, target_train, target_test);

  RunState full_state = warm;
  full_state.backbone = warm.backbone.clone();
  full_state.injected = warm.injected.clone();
  run_essa(full_state, target_unlabeled,
           stage_config(Stage::essa, AdapterSpec::full(), 60, 1e-3,
                        7300 + seed));
  result.full_acc = knn_accuracy(full_state, target_train, target_test);

  RunState apla_state = warm;
  apla_state.backbone = warm.backbone.clone();
  apla_state.injected = warm.injected.clone();
  run_essa(apla_state, target_unlabeled,
           stage_config(Stage::essa, AdapterSpec::apla(0.25, 7400 + seed), 60,
                        1e-3, 7300 + seed));
  result.apla_acc = knn_accuracy(apla_state, target_train, target_test);
  return result;
}

Outcome criterion7() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<OrderingRun> runs;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) runs.push_back(ordering_run(seed));

  const double gain_median =
      median3(runs[0].full_acc - runs[0].transfer_acc,
              runs[1].full_acc - runs[1].transfer_acc,
              runs[2].full_acc - runs[2].transfer_acc);
  const double apla_vs_full =
      median3(runs[0].apla_acc - runs[0].full_acc,
              runs[1].apla_acc - runs[1].full_acc,
              runs[2].apla_acc - runs[2].full_acc);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  std::ostringstream detail;
  detail << "transfer/full/apla acc per seed:";
  for (const auto& r : runs) {
    detail << " [" << r.transfer_acc << "/" << r.full_acc << "/" << r.apla_acc
           << "]";
  }
  detail << ", median full-transfer gain " << gain_median * 100
         << " pts, median apla-full " << apla_vs_full * 100 << " pts, "
         << secs << " s";
  const bool ok =
      gain_median >= 0.05 && apla_vs_full >= -0.01 && secs < 1800.0;
  return {ok, detail.str()};
}

// ---- criterion 8: test-time training ---------------------------------------

struct TttRun {
  double before = 0.0;
  double after = 0.0;
  bool head_frozen = false;
};

TttRun ttt_run(std::uint64_t seed) {
  const SynthSpec data_spec = benchmark_data_spec(2000 + seed);
  Dataset source_train = generate(data_spec, Split::train, Domain::source);
  Dataset target_test = generate(data_spec, Split::test, Domain::target);

  RunState state = init_run_state("tiny", 8100 + seed);
  run_essa(state, without_labels(source_train),
           stage_config(Stage::essa, AdapterSpec::full(), 30, 1e-3,
                        8200 + seed));
  run_sa(state, source_train,
         stage_config(Stage::sa, AdapterSpec::full(), 30, 1e-3, 8300 + seed));

  TttRun result;
  result.before = head_accuracy(state, target_test);
  ParamTree head_before = state.head->params.clone();

  run_ttt(state, without_labels(target_test),
          stage_config(Stage::ttt, AdapterSpec::apla(0.25, 8400 + seed), 15,
                       5e-4, 8500 + seed));
  result.after = head_accuracy(state, target_test);
  result.head_frozen = trees_bitwise_equal(state.head->params, head_before);
  return result;
}

Outcome criterion8() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<TttRun> runs;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) runs.push_back(ttt_run(seed));
  const double improvement = median3(runs[0].after - runs[0].before,
                                     runs[1].after - runs[1].before,
                                     runs[2].after - runs[2].before);
  const bool heads_frozen =
      runs[0].head_frozen && runs[1].head_frozen && runs[2].head_frozen;
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  std::ostringstream detail;
  detail << "before/after per seed:";
  for (const auto& r : runs)
    detail << " [" << r.before << "/" << r.after << "]";
  detail << ", median improvement " << improvement * 100 << " pts, heads "
         << (heads_frozen ? "bit-identical" : "MODIFIED") << ", " << secs
         << " s";
  return {improvement >= 0.02 && heads_frozen && secs < 600.0, detail.str()};
}

// ---- criterion 9: resource accounting --------------------------------------

Outcome criterion9() {
  const ViTConfig cfg = ViTConfig::preset("small");
  Backbone backbone = init_backbone(cfg, 91);
  StageConfig bench = stage_config(Stage::essa, AdapterSpec::full(), 1, 1e-3,
                                   92);
  bench.batch_size = 4;

  ResourceReport full =
      account_resources(AdapterSpec::full(), backbone, bench, true);
  bool ok = full.trainable_fraction == 1.0;
  std::ostringstream detail;
  detail << "full " << full.trainable_count << " values, "
         << full.measured_steps_per_sec << " steps/s";

  const std::vector<AdapterSpec> peft_specs = {
      AdapterSpec::lora(4, 8.0, {LoraTarget::q, LoraTarget::v}),
      AdapterSpec::vpt(8, VptMode::shallow), AdapterSpec::bitfit(),
      AdapterSpec::apla(0.1, 93)};
  for (const AdapterSpec& spec : peft_specs) {
    const bool measure =
        spec.kind == AdapterKind::bitfit || spec.kind == AdapterKind::apla;
    ResourceReport r = account_resources(spec, backbone, bench, measure);
    detail << "; " << spec.name() << " fraction " << r.trainable_fraction;
    if (!(r.trainable_fraction < 0.1)) ok = false;
    if (!(r.optimizer_state_bytes <
          full.optimizer_state_bytes / 10)) {
      ok = false;
      detail << " (bytes " << r.optimizer_state_bytes << " not < 10% of "
             << full.optimizer_state_bytes << ")";
    }
    if (measure) {
      detail << ", " << r.measured_steps_per_sec << " steps/s";
      if (!(r.measured_steps_per_sec >= full.measured_steps_per_sec)) {
        ok = false;
        detail << " (slower than full)";
      }
    }
  }
  return {ok, detail.str()};
}

// ---- criterion 10: determinism & persistence --------------------------------

Outcome criterion10() {
  bool ok = true;
  std::ostringstream detail;
  const fs::path dir = fs::temp_directory_path() / "essa_acceptance10";
  fs::remove_all(dir);
  fs::create_directories(dir);

  // Dataset generation byte-identical.
  {
    SynthSpec spec;
    spec.train_count = 32;
    Dataset a = generate(spec, Split::train, Domain::target);
    Dataset b = generate(spec, Split::train, Domain::target);
    if (a.pixels != b.pixels || a.labels != b.labels) {
      ok = false;
      detail << "dataset regeneration differs; ";
    }
  }

  SynthSpec data_spec;
  data_spec.num_classes = 2;
  data_spec.image_size = 16;
  data_spec.train_count = 24;
  data_spec.seed = 101;
  Dataset data = without_labels(generate(data_spec, Split::train,
                                         Domain::target));
  StageConfig cfg = stage_config(Stage::essa, AdapterSpec::bitfit(), 6, 1e-3,
                                 102);
  cfg.batch_size = 8;
  cfg.warmup_epochs = 0;

  // Straight run vs stop-at-3 + resume: bit-exact parameters.
  RunState straight = init_run_state("tiny", 103);
  run_essa(straight, data, cfg);

  RunState stopped = init_run_state("tiny", 103);
  run_essa(stopped, data, cfg, {}, 3);
  const fs::path mid = dir / "mid.ckpt";
  save_checkpoint(stopped, mid);
  RunState resumed = load_checkpoint(mid);
  run_essa(resumed, data, cfg);

  const fs::path a_path = dir / "straight.ckpt";
  const fs::path b_path = dir / "resumed.ckpt";
  save_checkpoint(straight, a_path);
  save_checkpoint(resumed, b_path);
  auto read_all = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  };
  if (read_all(a_path) != read_all(b_path)) {
    ok = false;
    detail << "resume differs from uninterrupted run; ";
  }

  // save -> load -> save byte identity.
  const fs::path c_path = dir / "resave.ckpt";
  save_checkpoint(load_checkpoint(a_path), c_path);
  if (read_all(a_path) != read_all(c_path)) {
    ok = false;
    detail << "save/load/save differs; ";
  }
  fs::remove_all(dir);
  detail << "resume bit-exact, save/load/save byte-identical, datasets "
            "deterministic";
  return {ok, detail.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>>
      criteria = {
          {"1 gradient soundness", criterion1},
          {"2 freeze invariants", criterion2},
          {"3 lora identity at init", criterion3},
          {"4 trainable counts", criterion4},
          {"5 oracle equivalence", criterion5},
          {"6 ssl sanity", criterion6},
          {"7 essa ordering on synthetic shift", criterion7},
          {"8 test-time training gain", criterion8},
          {"9 resource accounting", criterion9},
          {"10 determinism & persistence", criterion10},
      };

  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  bool all_pass = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(static_cast<int>(i + 1)))
      continue;
    Outcome outcome;
    try {
      outcome = criteria[i].second();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (outcome.pass ? "PASS" : "FAIL") << " criterion "
              << criteria[i].first << " — " << outcome.detail << "\n";
    std::cout.flush();
    all_pass = all_pass && outcome.pass;
  }
  return all_pass ? 0 : 1;
}
