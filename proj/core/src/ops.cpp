#include "essa/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "essa/errors.hpp"

namespace essa {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap map2d(const std::vector<double>& v, std::size_t r, std::size_t c) {
  return ConstMap(v.data(), static_cast<Eigen::Index>(r),
                  static_cast<Eigen::Index>(c));
}

MutMap map2d(std::vector<double>& v, std::size_t r, std::size_t c) {
  return MutMap(v.data(), static_cast<Eigen::Index>(r),
                static_cast<Eigen::Index>(c));
}

bool tracking(const Tensor& a) { return active_tape() && a.requires_grad(); }

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 1 && t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank 1 or 2, got shape " +
                     shape_str(t.shape()));
  }
}

const double kGeluC = std::sqrt(2.0 / std::numbers::pi);

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions disagree, " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  map2d(out.node()->data, m, n).noalias() =
      map2d(a.node()->data, m, k) * map2d(b.node()->data, k, n);

  if (tracking(a) || tracking(b)) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    active_tape()->record([an, bn, on, ga, gb, m, k, n] {
      if (on->grad.empty()) return;
      auto g = map2d(on->grad, m, n);
      if (ga) {
        if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0);
        map2d(an->grad, m, k).noalias() += g * map2d(bn->data, k, n).transpose();
      }
      if (gb) {
        if (bn->grad.empty()) bn->grad.assign(bn->data.size(), 0.0);
        map2d(bn->grad, k, n).noalias() += map2d(an->data, m, k).transpose() * g;
      }
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (k != b.cols()) {
    throw ShapeError("matmul_nt: inner dimensions disagree, " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()) +
                     "^T");
  }
  Tensor out = Tensor::zeros({m, n});
  map2d(out.node()->data, m, n).noalias() =
      map2d(a.node()->data, m, k) * map2d(b.node()->data, n, k).transpose();

  if (tracking(a) || tracking(b)) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    active_tape()->record([an, bn, on, ga, gb, m, k, n] {
      if (on->grad.empty()) return;
      auto g = map2d(on->grad, m, n);
      if (ga) {
        if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0);
        map2d(an->grad, m, k).noalias() += g * map2d(bn->data, n, k);
      }
      if (gb) {
        if (bn->grad.empty()) bn->grad.assign(bn->data.size(), 0.0);
        map2d(bn->grad, n, k).noalias() += g.transpose() * map2d(an->data, m, k);
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_matrix(x, "linear");
  const std::size_t t = x.rows(), in = x.cols(), out_dim = w.rows();
  if (w.cols() != in) {
    throw ShapeError("linear: input width " + shape_str(x.shape()) +
                     " does not match weight " + shape_str(w.shape()));
  }
  const bool with_bias = bias.numel() > 0;
  if (with_bias && bias.numel() != out_dim) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) +
                     " does not match weight " + shape_str(w.shape()));
  }
  Tensor out = Tensor::zeros({t, out_dim});
  auto y = map2d(out.node()->data, t, out_dim);
  y.noalias() = map2d(x.node()->data, t, in) *
                map2d(w.node()->data, out_dim, in).transpose();
  if (with_bias) {
    auto b = Eigen::Map<const Eigen::RowVectorXd>(bias.node()->data.data(),
                                                  out_dim);
    y.rowwise() += b;
  }

  if (tracking(x) || tracking(w) || (with_bias && tracking(bias))) {
    out.set_requires_grad(true);
    auto xn = x.node(), wn = w.node(), on = out.node();
    auto bn = with_bias ? bias.node() : nullptr;
    const bool gx = x.requires_grad(), gw = w.requires_grad();
    const bool gb = with_bias && bias.requires_grad();
    active_tape()->record([xn, wn, bn, on, gx, gw, gb, t, in, out_dim] {
      if (on->grad.empty()) return;
      auto g = map2d(on->grad, t, out_dim);
      if (gx) {
        if (xn->grad.empty()) xn->grad.assign(xn->data.size(), 0.0);
        map2d(xn->grad, t, in).noalias() += g * map2d(wn->data, out_dim, in);
      }
      if (gw) {
        if (wn->grad.empty()) wn->grad.assign(wn->data.size(), 0.0);
        map2d(wn->grad, out_dim, in).noalias() +=
            g.transpose() * map2d(xn->data, t, in);
      }
      if (gb) {
        if (bn->grad.empty()) bn->grad.assign(bn->data.size(), 0.0);
        Eigen::Map<Eigen::RowVectorXd>(bn->grad.data(), out_dim) +=
            g.colwise().sum();
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w) {
  return linear(x, w, Tensor());
}

namespace {

template <typename Fwd, typename Bwd>
Tensor elementwise_binary(const Tensor& a, const Tensor& b, const char* op,
                          Fwd fwd, Bwd bwd) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i)
    out.at(i) = fwd(a.node()->data[i], b.node()->data[i]);

  if (tracking(a) || tracking(b)) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    active_tape()->record([an, bn, on, ga, gb, n, bwd] {
      if (on->grad.empty()) return;
      if (ga && an->grad.empty()) an->grad.assign(n, 0.0);
      if (gb && bn->grad.empty()) bn->grad.assign(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double g = on->grad[i];
        double da = 0.0, db = 0.0;
        bwd(an->data[i], bn->data[i], g, da, db);
        if (ga) an->grad[i] += da;
        if (gb) bn->grad[i] += db;
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& da, double& db) {
        da = g * y;
        db = g * x;
      });
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = c * a.node()->data[i];
  if (tracking(a)) {
    out.set_requires_grad(true);
    auto an = a.node(), on = out.node();
    active_tape()->record([an, on, c, n] {
      if (on->grad.empty()) return;
      if (an->grad.empty()) an->grad.assign(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += c * on->grad[i];
    });
  }
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  require_matrix(x, "add_rowvec");
  const std::size_t rows = x.rows(), c = x.cols();
  if (v.numel() != c) {
    throw ShapeError("add_rowvec: vector " + shape_str(v.shape()) +
                     " does not match row width of " + shape_str(x.shape()));
  }
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < c; ++i)
      out.at(r * c + i) = x.node()->data[r * c + i] + v.node()->data[i];
  if (tracking(x) || tracking(v)) {
    out.set_requires_grad(true);
    auto xn = x.node(), vn = v.node(), on = out.node();
    const bool gx = x.requires_grad(), gv = v.requires_grad();
    active_tape()->record([xn, vn, on, gx, gv, rows, c] {
      if (on->grad.empty()) return;
      if (gx) {
        if (xn->grad.empty()) xn->grad.assign(xn->data.size(), 0.0);
        for (std::size_t i = 0; i < rows * c; ++i) xn->grad[i] += on->grad[i];
      }
      if (gv) {
        if (vn->grad.empty()) vn->grad.assign(c, 0.0);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < c; ++i)
            vn->grad[i] += on->grad[r * c + i];
      }
    });
  }
  return out;
}

Tensor add_n(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("add_n: no inputs");
  Tensor out = Tensor::zeros(parts[0].shape());
  const std::size_t n = out.numel();
  bool any_grad = false;
  for (const Tensor& p : parts) {
    if (p.shape() != parts[0].shape()) {
      throw ShapeError("add_n: shape mismatch " + shape_str(parts[0].shape()) +
                       " vs " + shape_str(p.shape()));
    }
    for (std::size_t i = 0; i < n; ++i) out.at(i) += p.node()->data[i];
    any_grad = any_grad || tracking(p);
  }
  if (any_grad) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorNode>> nodes;
    nodes.reserve(parts.size());
    for (const Tensor& p : parts) nodes.push_back(p.node());
    auto on = out.node();
    active_tape()->record([nodes, on, n] {
      if (on->grad.empty()) return;
      for (const auto& pn : nodes) {
        if (!pn->requires_grad) continue;
        if (pn->grad.empty()) pn->grad.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) pn->grad[i] += on->grad[i];
      }
    });
  }
  return out;
}

namespace {

// Shared softmax kernel over contiguous lanes. For axis=1 a lane is a row
// (stride 1); for axis=0 a lane is a column (stride = cols).
struct LaneView {
  std::size_t lanes, lane_len, stride, step;
};

LaneView lane_view(const Tensor& x, int axis, const char* op) {
  require_matrix(x, op);
  if (x.rank() == 1) {
    if (axis != 0 && axis != -1) {
      throw ContractError(std::string(op) + ": axis " + std::to_string(axis) +
                          " out of range for rank-1 tensor");
    }
    return {1, x.numel(), 0, 1};
  }
  const std::size_t r = x.rows(), c = x.cols();
  if (axis == 1 || axis == -1) return {r, c, c, 1};
  if (axis == 0) return {c, r, 1, c};
  throw ContractError(std::string(op) + ": axis " + std::to_string(axis) +
                      " out of range for rank-2 tensor");
}

}  // namespace

Tensor softmax(const Tensor& x, int axis, double temperature) {
  if (!(temperature > 0.0)) {
    throw ContractError("softmax: temperature must be > 0, got " +
                        std::to_string(temperature));
  }
  const LaneView v = lane_view(x, axis, "softmax");
  Tensor out = Tensor::zeros(x.shape());
  const auto& xd = x.node()->data;
  auto& yd = out.node()->data;
  for (std::size_t l = 0; l < v.lanes; ++l) {
    const std::size_t base = l * v.stride;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < v.lane_len; ++i)
      mx = std::max(mx, xd[base + i * v.step]);
    double denom = 0.0;
    for (std::size_t i = 0; i < v.lane_len; ++i) {
      const double e = std::exp((xd[base + i * v.step] - mx) / temperature);
      yd[base + i * v.step] = e;
      denom += e;
    }
    for (std::size_t i = 0; i < v.lane_len; ++i) yd[base + i * v.step] /= denom;
  }

  if (tracking(x)) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    active_tape()->record([xn, on, v, temperature] {
      if (on->grad.empty()) return;
      if (xn->grad.empty()) xn->grad.assign(xn->data.size(), 0.0);
      for (std::size_t l = 0; l < v.lanes; ++l) {
        const std::size_t base = l * v.stride;
        double dot = 0.0;
        for (std::size_t i = 0; i < v.lane_len; ++i) {
          const std::size_t k = base + i * v.step;
          dot += on->grad[k] * on->data[k];
        }
        for (std::size_t i = 0; i < v.lane_len; ++i) {
          const std::size_t k = base + i * v.step;
          xn->grad[k] += on->data[k] * (on->grad[k] - dot) / temperature;
        }
      }
    });
  }
  return out;
}

Tensor log_softmax(const Tensor& x, double temperature) {
  if (!(temperature > 0.0)) {
    throw ContractError("log_softmax: temperature must be > 0, got " +
                        std::to_string(temperature));
  }
  const LaneView v = lane_view(x, -1, "log_softmax");
  Tensor out = Tensor::zeros(x.shape());
  const auto& xd = x.node()->data;
  auto& yd = out.node()->data;
  for (std::size_t l = 0; l < v.lanes; ++l) {
    const std::size_t base = l * v.stride;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < v.lane_len; ++i)
      mx = std::max(mx, xd[base + i] / temperature);
    double denom = 0.0;
    for (std::size_t i = 0; i < v.lane_len; ++i)
      denom += std::exp(xd[base + i] / temperature - mx);
    const double lse = mx + std::log(denom);
    for (std::size_t i = 0; i < v.lane_len; ++i)
      yd[base + i] = xd[base + i] / temperature - lse;
  }

  if (tracking(x)) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    active_tape()->record([xn, on, v, temperature] {
      if (on->grad.empty()) return;
      if (xn->grad.empty()) xn->grad.assign(xn->data.size(), 0.0);
      for (std::size_t l = 0; l < v.lanes; ++l) {
        const std::size_t base = l * v.stride;
        double gsum = 0.0;
        for (std::size_t i = 0; i < v.lane_len; ++i) gsum += on->grad[base + i];
        for (std::size_t i = 0; i < v.lane_len; ++i) {
          const double p = std::exp(on->data[base + i]);
          xn->grad[base + i] +=
              (on->grad[base + i] - p * gsum) / temperature;
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  require_matrix(x, "layer_norm");
  const std::size_t rows = x.rows(), d = x.cols();
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) +
                     " / bias " + shape_str(bias.shape()) +
                     " do not match last axis of " + shape_str(x.shape()));
  }
  Tensor out = Tensor::zeros(x.shape());
  // xhat and inv_std are needed by the backward rule.
  auto xhat = std::make_shared<std::vector<double>>(rows * d);
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const auto& xd = x.node()->data;
  const auto& gd = gain.node()->data;
  const auto& bd = bias.node()->data;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * d;
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += xd[base + i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double c = xd[base + i] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t i = 0; i < d; ++i) {
      const double h = (xd[base + i] - mean) * inv;
      (*xhat)[base + i] = h;
      out.at(base + i) = gd[i] * h + bd[i];
    }
  }

  if (tracking(x) || tracking(gain) || tracking(bias)) {
    out.set_requires_grad(true);
    auto xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
    const bool gx = x.requires_grad(), gg = gain.requires_grad(),
               gb = bias.requires_grad();
    active_tape()->record([xn, gn, bn, on, xhat, inv_std, gx, gg, gb, rows,
                           d] {
      if (on->grad.empty()) return;
      if (gx && xn->grad.empty()) xn->grad.assign(xn->data.size(), 0.0);
      if (gg && gn->grad.empty()) gn->grad.assign(d, 0.0);
      if (gb && bn->grad.empty()) bn->grad.assign(d, 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * d;
        if (gx) {
          double m1 = 0.0, m2 = 0.0;  // mean(ghat), mean(ghat * xhat)
          for (std::size_t i = 0; i < d; ++i) {
            const double ghat = on->grad[base + i] * gn->data[i];
            m1 += ghat;
            m2 += ghat * (*xhat)[base + i];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          for (std::size_t i = 0; i < d; ++i) {
            const double ghat = on->grad[base + i] * gn->data[i];
            xn->grad[base + i] +=
                (*inv_std)[r] * (ghat - m1 - (*xhat)[base + i] * m2);
          }
        }
        for (std::size_t i = 0; i < d; ++i) {
          if (gg) gn->grad[i] += on->grad[base + i] * (*xhat)[base + i];
          if (gb) bn->grad[i] += on->grad[base + i];
        }
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const std::size_t n = x.numel();
  const auto& xd = x.node()->data;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = xd[i];
    const double u = kGeluC * (v + 0.044715 * v * v * v);
    out.at(i) = 0.5 * v * (1.0 + std::tanh(u));
  }
  if (tracking(x)) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    active_tape()->record([xn, on, n] {
      if (on->grad.empty()) return;
      if (xn->grad.empty()) xn->grad.assign(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double v = xn->data[i];
        const double u = kGeluC * (v + 0.044715 * v * v * v);
        const double t = std::tanh(u);
        const double du = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
        const double dy = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
        xn->grad[i] += on->grad[i] * dy;
      }
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  const std::size_t k = logits.numel();
  if (logits.rank() == 2 && logits.rows() != 1) {
    throw ShapeError("cross_entropy: expected a single logit vector, got " +
                     shape_str(logits.shape()));
  }
  if (label >= k) {
    throw ContractError("cross_entropy: label " + std::to_string(label) +
                        " out of range [0, " + std::to_string(k) + ")");
  }
  const auto& zd = logits.node()->data;
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i) mx = std::max(mx, zd[i]);
  double denom = 0.0;
  for (std::size_t i = 0; i < k; ++i) denom += std::exp(zd[i] - mx);
  const double lse = mx + std::log(denom);
  Tensor out = Tensor::scalar(lse - zd[label]);

  if (tracking(logits)) {
    out.set_requires_grad(true);
    auto zn = logits.node(), on = out.node();
    active_tape()->record([zn, on, label, k, mx, denom] {
      if (on->grad.empty()) return;
      if (zn->grad.empty()) zn->grad.assign(k, 0.0);
      const double g = on->grad[0];
      for (std::size_t i = 0; i < k; ++i) {
        const double p = std::exp(zn->data[i] - mx) / denom;
        zn->grad[i] += g * (p - (i == label ? 1.0 : 0.0));
      }
    });
  }
  return out;
}

Tensor cross_entropy_mean(const Tensor& logits,
                          const std::vector<std::size_t>& labels) {
  require_matrix(logits, "cross_entropy_mean");
  const std::size_t b = logits.rows(), k = logits.cols();
  if (labels.size() != b) {
    throw ShapeError("cross_entropy_mean: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(b) + " rows");
  }
  const auto& zd = logits.node()->data;
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    if (labels[r] >= k) {
      throw ContractError("cross_entropy_mean: label " +
                          std::to_string(labels[r]) + " out of range [0, " +
                          std::to_string(k) + ")");
    }
    const std::size_t base = r * k;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i) mx = std::max(mx, zd[base + i]);
    double denom = 0.0;
    for (std::size_t i = 0; i < k; ++i) denom += std::exp(zd[base + i] - mx);
    total += mx + std::log(denom) - zd[base + labels[r]];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(b));

  if (tracking(logits)) {
    out.set_requires_grad(true);
    auto zn = logits.node(), on = out.node();
    auto lab = labels;
    active_tape()->record([zn, on, lab, b, k] {
      if (on->grad.empty()) return;
      if (zn->grad.empty()) zn->grad.assign(b * k, 0.0);
      const double g = on->grad[0] / static_cast<double>(b);
      for (std::size_t r = 0; r < b; ++r) {
        const std::size_t base = r * k;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < k; ++i) mx = std::max(mx, zn->data[base + i]);
        double denom = 0.0;
        for (std::size_t i = 0; i < k; ++i)
          denom += std::exp(zn->data[base + i] - mx);
        for (std::size_t i = 0; i < k; ++i) {
          const double p = std::exp(zn->data[base + i] - mx) / denom;
          zn->grad[base + i] += g * (p - (i == lab[r] ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1) {
  require_matrix(x, "slice_rows");
  const std::size_t rows = x.rows(), c = x.cols();
  if (r0 > r1 || r1 > rows) {
    throw ShapeError("slice_rows: range [" + std::to_string(r0) + ", " +
                     std::to_string(r1) + ") out of " + shape_str(x.shape()));
  }
  const std::size_t m = r1 - r0;
  Tensor out = Tensor::zeros({m, c});
  std::copy_n(x.node()->data.begin() + static_cast<std::ptrdiff_t>(r0 * c),
              m * c, out.node()->data.begin());
  if (tracking(x)) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    active_tape()->record([xn, on, r0, m, c] {
      if (on->grad.empty()) return;
      if (xn->grad.empty()) xn->grad.assign(xn->data.size(), 0.0);
      for (std::size_t i = 0; i < m * c; ++i)
        xn->grad[r0 * c + i] += on->grad[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
  require_matrix(x, "slice_cols");
  const std::size_t rows = x.rows(), c = x.cols();
  if (c0 > c1 || c1 > c) {
    throw ShapeError("slice_cols: range [" + std::to_string(c0) + ", " +
                     std::to_string(c1) + ") out of " + shape_str(x.shape()));
  }
  const std::size_t w = c1 - c0;
  Tensor out = Tensor::zeros({rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.node()->data.begin() +
                    static_cast<std::ptrdiff_t>(r * c + c0),
                w, out.node()->data.begin() + static_cast<std::ptrdiff_t>(r * w));
  if (tracking(x)) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    active_tape()->record([xn, on, rows, c, c0, w] {
      if (on->grad.empty()) return;
      if (xn->grad.empty()) xn->grad.assign(xn->data.size(), 0.0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < w; ++i)
          xn->grad[r * c + c0 + i] += on->grad[r * w + i];
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t rows = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    if (p.cols() != c) {
      throw ShapeError("concat_rows: width mismatch " +
                       shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    rows += p.rows();
    any_grad = any_grad || tracking(p);
  }
  Tensor out = Tensor::zeros({rows, c});
  std::size_t at = 0;
  for (const Tensor& p : parts) {
    std::copy_n(p.node()->data.begin(), p.numel(),
                out.node()->data.begin() + static_cast<std::ptrdiff_t>(at));
    at += p.numel();
  }
  if (any_grad) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorNode>> nodes;
    for (const Tensor& p : parts) nodes.push_back(p.node());
    auto on = out.node();
    active_tape()->record([nodes, on] {
      if (on->grad.empty()) return;
      std::size_t at = 0;
      for (const auto& pn : nodes) {
        const std::size_t n = pn->data.size();
        if (pn->requires_grad) {
          if (pn->grad.empty()) pn->grad.assign(n, 0.0);
          for (std::size_t i = 0; i < n; ++i) pn->grad[i] += on->grad[at + i];
        }
        at += n;
      }
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t c = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    if (p.rows() != rows) {
      throw ShapeError("concat_cols: height mismatch " +
                       shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    c += p.cols();
    any_grad = any_grad || tracking(p);
  }
  Tensor out = Tensor::zeros({rows, c});
  std::size_t col_at = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(
          p.node()->data.begin() + static_cast<std::ptrdiff_t>(r * w), w,
          out.node()->data.begin() + static_cast<std::ptrdiff_t>(r * c + col_at));
    col_at += w;
  }
  if (any_grad) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorNode>> nodes;
    std::vector<std::size_t> widths;
    for (const Tensor& p : parts) {
      nodes.push_back(p.node());
      widths.push_back(p.cols());
    }
    auto on = out.node();
    active_tape()->record([nodes, widths, on, rows, c] {
      if (on->grad.empty()) return;
      std::size_t col_at = 0;
      for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
        const auto& pn = nodes[pi];
        const std::size_t w = widths[pi];
        if (pn->requires_grad) {
          if (pn->grad.empty()) pn->grad.assign(pn->data.size(), 0.0);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < w; ++i)
              pn->grad[r * w + i] += on->grad[r * c + col_at + i];
        }
        col_at += w;
      }
    });
  }
  return out;
}

Tensor l2_normalize_rows(const Tensor& x) {
  require_matrix(x, "l2_normalize_rows");
  const std::size_t rows = x.rows(), c = x.cols();
  Tensor out = Tensor::zeros(x.shape());
  auto norms = std::make_shared<std::vector<double>>(rows);
  auto floored = std::make_shared<std::vector<char>>(rows);
  const auto& xd = x.node()->data;
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < c; ++i) s += xd[r * c + i] * xd[r * c + i];
    double n = std::sqrt(s);
    (*floored)[r] = n < 1e-12 ? 1 : 0;
    n = std::max(n, 1e-12);
    (*norms)[r] = n;
    for (std::size_t i = 0; i < c; ++i) out.at(r * c + i) = xd[r * c + i] / n;
  }
  if (tracking(x)) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    active_tape()->record([xn, on, norms, floored, rows, c] {
      if (on->grad.empty()) return;
      if (xn->grad.empty()) xn->grad.assign(xn->data.size(), 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * c;
        const double n = (*norms)[r];
        if ((*floored)[r]) {
          for (std::size_t i = 0; i < c; ++i)
            xn->grad[base + i] += on->grad[base + i] / n;
          continue;
        }
        double dot = 0.0;
        for (std::size_t i = 0; i < c; ++i)
          dot += on->grad[base + i] * on->data[base + i];
        for (std::size_t i = 0; i < c; ++i)
          xn->grad[base + i] +=
              (on->grad[base + i] - on->data[base + i] * dot) / n;
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (tracking(x)) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    active_tape()->record([xn, on] {
      if (on->grad.empty()) return;
      if (xn->grad.empty()) xn->grad.assign(xn->data.size(), 0.0);
      for (double& g : xn->grad) g += on->grad[0];
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  if (x.numel() == 0) throw ContractError("mean_all: empty tensor");
  return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor dot_const(const Tensor& x, const std::vector<double>& weights) {
  if (x.numel() != weights.size()) {
    throw ShapeError("dot_const: " + shape_str(x.shape()) + " vs " +
                     std::to_string(weights.size()) + " weights");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i)
    s += x.node()->data[i] * weights[i];
  Tensor out = Tensor::scalar(s);
  if (tracking(x)) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    auto w = weights;
    active_tape()->record([xn, on, w] {
      if (on->grad.empty()) return;
      if (xn->grad.empty()) xn->grad.assign(xn->data.size(), 0.0);
      for (std::size_t i = 0; i < w.size(); ++i)
        xn->grad[i] += on->grad[0] * w[i];
    });
  }
  return out;
}

}  // namespace essa
