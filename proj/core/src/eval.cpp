#include "essa/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "essa/errors.hpp"
#include "essa/tensor.hpp"

namespace essa {

namespace {

void normalize_row(double* row, std::size_t dim) {
  double s = 0.0;
  for (std::size_t i = 0; i < dim; ++i) s += row[i] * row[i];
  const double n = std::sqrt(s);
  if (n < 1e-12) return;
  for (std::size_t i = 0; i < dim; ++i) row[i] /= n;
}

}  // namespace

EmbeddingIndex build_index(std::span<const double> rows, std::size_t dim,
                           std::vector<std::uint16_t> labels,
                           std::string source_stage, std::string preset) {
  if (dim == 0 || rows.size() % dim != 0) {
    throw ContractError("build_index: row data not a multiple of dim");
  }
  const std::size_t g = rows.size() / dim;
  if (labels.size() != g) {
    throw ContractError("build_index: " + std::to_string(labels.size()) +
                        " labels for " + std::to_string(g) + " rows");
  }
  EmbeddingIndex index;
  index.dim = dim;
  index.embeddings.assign(rows.begin(), rows.end());
  index.labels = std::move(labels);
  index.source_stage = std::move(source_stage);
  index.preset = std::move(preset);
  for (std::size_t r = 0; r < g; ++r)
    normalize_row(index.embeddings.data() + r * dim, dim);
  return index;
}

KnnResult knn_predict(const EmbeddingIndex& index,
                      std::span<const double> query_embedding, std::size_t k,
                      double tau) {
  const std::size_t g = index.size();
  if (g == 0) throw ContractError("knn_predict: empty index");
  if (k < 1 || k > g) {
    throw ContractError("knn_predict: k=" + std::to_string(k) +
                        " out of range [1, " + std::to_string(g) + "]");
  }
  if (query_embedding.size() != index.dim) {
    throw ShapeError("knn_predict: query dim " +
                     std::to_string(query_embedding.size()) + " != index dim " +
                     std::to_string(index.dim));
  }
  std::vector<double> query(query_embedding.begin(), query_embedding.end());
  normalize_row(query.data(), index.dim);

  std::vector<std::pair<double, std::size_t>> sims(g);
  for (std::size_t r = 0; r < g; ++r) {
    double s = 0.0;
    const double* row = index.embeddings.data() + r * index.dim;
    for (std::size_t i = 0; i < index.dim; ++i) s += row[i] * query[i];
    sims[r] = {s, r};
  }
  std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(k),
                    sims.end(), [](const auto& a, const auto& b) {
                      if (a.first != b.first) return a.first > b.first;
                      return a.second < b.second;
                    });

  std::size_t num_classes = 0;
  for (std::uint16_t l : index.labels)
    num_classes = std::max<std::size_t>(num_classes, l + 1);
  KnnResult result;
  result.class_scores.assign(num_classes, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    const auto& [sim, row] = sims[i];
    result.class_scores[index.labels[row]] += std::exp(sim / tau);
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < num_classes; ++c) {
    if (result.class_scores[c] > result.class_scores[best]) best = c;
  }
  result.label = static_cast<std::uint16_t>(best);
  return result;
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

KappaResult quadratic_kappa(const ConfusionMatrix& cm) {
  const std::size_t k = cm.num_classes;
  if (k < 2) throw ContractError("quadratic_kappa: need >= 2 classes");
  const double total = static_cast<double>(cm.total());
  if (total == 0.0) throw ContractError("quadratic_kappa: empty matrix");

  std::vector<double> row_marginal(k, 0.0), col_marginal(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double o = static_cast<double>(cm.at(i, j)) / total;
      row_marginal[i] += o;
      col_marginal[j] += o;
    }
  }
  const double denom_w =
      static_cast<double>((k - 1) * (k - 1));
  double weighted_observed = 0.0, weighted_expected = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double diff = static_cast<double>(i) - static_cast<double>(j);
      const double w = diff * diff / denom_w;
      weighted_observed += w * static_cast<double>(cm.at(i, j)) / total;
      weighted_expected += w * row_marginal[i] * col_marginal[j];
    }
  }
  if (weighted_expected == 0.0) {
    return {std::numeric_limits<double>::quiet_NaN(),
            "undefined: expected disagreement is zero (all mass in one class "
            "in both margins)"};
  }
  return {1.0 - weighted_observed / weighted_expected, {}};
}

double accuracy(const ConfusionMatrix& cm) {
  const double total = static_cast<double>(cm.total());
  if (total == 0.0) throw ContractError("accuracy: empty matrix");
  double diag = 0.0;
  for (std::size_t i = 0; i < cm.num_classes; ++i)
    diag += static_cast<double>(cm.at(i, i));
  return diag / total;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ContractError("roc_auc: scores/labels size mismatch");
  }
  std::size_t n_pos = 0, n_neg = 0;
  for (int l : labels) (l != 0 ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0) {
    throw ContractError("roc_auc: both classes must be present");
  }

  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  // Average ranks over tied score groups (1-based ranks).
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]] != 0) rank_sum_pos += avg_rank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

EvalMetric parse_metric(const std::string& name) {
  if (name == "accuracy") return EvalMetric::accuracy;
  if (name == "kappa") return EvalMetric::kappa;
  if (name == "auc") return EvalMetric::auc;
  throw ConfigError("unknown metric '" + name +
                    "' (expected accuracy|kappa|auc)");
}

std::string metric_name(EvalMetric m) {
  switch (m) {
    case EvalMetric::accuracy:
      return "accuracy";
    case EvalMetric::kappa:
      return "kappa";
    case EvalMetric::auc:
      return "auc";
  }
  return "?";
}

std::vector<double> embed_image(const ViTConfig& config,
                                const ParamTree& backbone_params,
                                const AdapterContext* adapter_ctx,
                                const Tensor& image) {
  NoGradScope no_grad;
  Features f = forward_features(config, backbone_params, image, adapter_ctx);
  return {f.cls_embedding.data().begin(), f.cls_embedding.data().end()};
}

double evaluate_knn_protocol(const ViTConfig& config,
                             const ParamTree& backbone_params,
                             const AdapterContext* adapter_ctx,
                             const Dataset& train_set, const Dataset& test_set,
                             std::size_t k, double tau, EvalMetric metric) {
  if (!train_set.labeled || !test_set.labeled) {
    throw DataError("evaluate_knn_protocol: labels required on both splits");
  }
  if (train_set.count() == 0 || test_set.count() == 0) {
    throw DataError("evaluate_knn_protocol: empty split");
  }
  const std::size_t d = config.embed_dim;
  std::vector<double> gallery;
  gallery.reserve(train_set.count() * d);
  for (std::size_t i = 0; i < train_set.count(); ++i) {
    auto e = embed_image(config, backbone_params, adapter_ctx,
                         train_set.image(i));
    gallery.insert(gallery.end(), e.begin(), e.end());
  }
  EmbeddingIndex index =
      build_index(gallery, d, train_set.labels, "knn_protocol");

  const std::size_t k_eff = std::min(k, index.size());
  const std::size_t num_classes =
      std::max(train_set.num_classes(), test_set.num_classes());

  ConfusionMatrix cm(num_classes);
  std::vector<double> auc_scores;
  std::vector<int> auc_labels;
  for (std::size_t i = 0; i < test_set.count(); ++i) {
    auto e =
        embed_image(config, backbone_params, adapter_ctx, test_set.image(i));
    KnnResult r = knn_predict(index, e, k_eff, tau);
    cm.at(test_set.label(i), r.label)++;
    if (metric == EvalMetric::auc) {
      if (num_classes != 2) {
        throw ConfigError("evaluate_knn_protocol: auc requires 2 classes");
      }
      const double s0 = r.class_scores.size() > 0 ? r.class_scores[0] : 0.0;
      const double s1 = r.class_scores.size() > 1 ? r.class_scores[1] : 0.0;
      auc_scores.push_back(s1 - s0);
      auc_labels.push_back(test_set.label(i) != 0 ? 1 : 0);
    }
  }
  switch (metric) {
    case EvalMetric::accuracy:
      return accuracy(cm);
    case EvalMetric::kappa:
      return quadratic_kappa(cm).value;
    case EvalMetric::auc:
      return roc_auc(auc_scores, auc_labels);
  }
  throw ContractError("evaluate_knn_protocol: unreachable metric");
}

}  // namespace essa
