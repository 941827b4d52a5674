#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "essa/adapters.hpp"
#include "essa/data.hpp"
#include "essa/vit.hpp"

namespace essa {

/// Gallery of L2-normalized embeddings with parallel labels.
struct EmbeddingIndex {
  std::size_t dim = 0;
  std::vector<double> embeddings;  // G x dim, rows unit-norm
  std::vector<std::uint16_t> labels;
  std::string source_stage;
  std::string preset;

  std::size_t size() const { return dim == 0 ? 0 : embeddings.size() / dim; }
};

/// Normalizes every row and stores it. Rows with near-zero norm stay zero.
EmbeddingIndex build_index(std::span<const double> rows, std::size_t dim,
                           std::vector<std::uint16_t> labels,
                           std::string source_stage = {},
                           std::string preset = {});

struct KnnResult {
  std::uint16_t label = 0;
  std::vector<double> class_scores;
};

/// Cosine-similarity weighted k-NN: top-k by similarity (ties by smaller
/// gallery index), class scores sum exp(sim / tau), argmax with smallest
/// class id winning ties.
KnnResult knn_predict(const EmbeddingIndex& index,
                      std::span<const double> query_embedding, std::size_t k,
                      double tau);

/// K x K counts, rows = true label, cols = predicted label.
struct ConfusionMatrix {
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(std::size_t k)
      : num_classes(k), counts(k * k, 0) {}
  std::uint64_t& at(std::size_t truth, std::size_t pred) {
    return counts[truth * num_classes + pred];
  }
  std::uint64_t at(std::size_t truth, std::size_t pred) const {
    return counts[truth * num_classes + pred];
  }
  std::uint64_t total() const;
};

struct KappaResult {
  double value = 0.0;       // NaN when undefined
  std::string diagnostic;   // non-empty explains an undefined outcome
};

/// Quadratic-weighted Cohen's kappa. Degenerate marginals (all expected
/// disagreement weight zero) yield NaN plus a diagnostic rather than a
/// division blow-up.
KappaResult quadratic_kappa(const ConfusionMatrix& cm);

double accuracy(const ConfusionMatrix& cm);

/// Mann-Whitney rank statistic; ties contribute 1/2. Labels must contain
/// both classes.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

enum class EvalMetric { accuracy, kappa, auc };

EvalMetric parse_metric(const std::string& name);
std::string metric_name(EvalMetric m);

/// Embeds the train set into an index, k-NN predicts the test set, and
/// computes the configured metric over the predictions. k is clamped to the
/// gallery size. The backbone is read-only.
double evaluate_knn_protocol(const ViTConfig& config,
                             const ParamTree& backbone_params,
                             const AdapterContext* adapter_ctx,
                             const Dataset& train_set, const Dataset& test_set,
                             std::size_t k, double tau, EvalMetric metric);

/// Class-token embedding (post final LayerNorm) for one image.
std::vector<double> embed_image(const ViTConfig& config,
                                const ParamTree& backbone_params,
                                const AdapterContext* adapter_ctx,
                                const Tensor& image);

}  // namespace essa
