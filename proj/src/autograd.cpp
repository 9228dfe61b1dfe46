#include "mccot/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <unordered_set>

#include "mccot/error.hpp"

namespace mccot {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

ConstMatMap as_matrix(const Tensor& t) {
  return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

MatMap grad_matrix(Tensor& t) {
  auto g = t.ensure_grad();
  return MatMap(g.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

void require_matrix(const Var& a, const char* op) {
  if (a.shape().size() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " + shape_to_string(a.shape()));
  }
}

Tensor& parent(detail::Node& n, std::size_t i) { return n.parents[i]->value; }
bool wants_grad(detail::Node& n, std::size_t i) { return n.parents[i]->value.requires_grad(); }

}  // namespace

Var::Var(Tensor value) : node_(std::make_shared<detail::Node>()) { node_->value = std::move(value); }

Var Var::parameter(Tensor value) {
  value.set_requires_grad(true);
  return Var(std::move(value));
}

Var Var::constant(Tensor value) {
  value.set_requires_grad(false);
  return Var(std::move(value));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() noexcept { return g_grad_enabled; }

Var make_result(Tensor value, std::vector<Var> parents, std::function<void(detail::Node&)> backward_fn) {
  bool track = false;
  if (g_grad_enabled) {
    for (const Var& p : parents) track = track || p.requires_grad();
  }
  value.set_requires_grad(track);
  Var out(std::move(value));
  auto& node = *out.node();
  node.leaf = false;
  if (track) {
    node.parents.reserve(parents.size());
    for (const Var& p : parents) node.parents.push_back(p.node());
    node.backward = std::move(backward_fn);
  }
  return out;
}

void backward(const Var& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw DimensionError("backward: loss must be a scalar, got " +
                         (loss.defined() ? shape_to_string(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->value.requires_grad() && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* n : order) {
    if (!n->leaf) {
      n->value.ensure_grad();
      n->value.zero_grad();
    }
  }
  loss.node()->value.ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->leaf && n->backward) n->backward(*n);
  }
}

Var matmul(const Var& a, const Var& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], n = b.shape()[1];
  Tensor out(Shape{m, n});
  MatMap(out.data().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)).noalias() =
      as_matrix(a.value()) * as_matrix(b.value());
  return make_result(std::move(out), {a, b}, [](detail::Node& node) {
    const Tensor& self = node.value;
    ConstMatMap g(self.grad().data(), static_cast<Eigen::Index>(self.rows()), static_cast<Eigen::Index>(self.cols()));
    if (wants_grad(node, 0)) grad_matrix(parent(node, 0)).noalias() += g * as_matrix(parent(node, 1)).transpose();
    if (wants_grad(node, 1)) grad_matrix(parent(node, 1)).noalias() += as_matrix(parent(node, 0)).transpose() * g;
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result(std::move(out), {a, b}, [](detail::Node& node) {
    auto g = node.value.grad();
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants_grad(node, p)) continue;
      auto pg = parent(node, p).ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_result(std::move(out), {a, b}, [](detail::Node& node) {
    auto g = node.value.grad();
    if (wants_grad(node, 0)) {
      auto pg = parent(node, 0).ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
    }
    if (wants_grad(node, 1)) {
      auto pg = parent(node, 1).ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result(std::move(out), {a, b}, [](detail::Node& node) {
    auto g = node.value.grad();
    if (wants_grad(node, 0)) {
      auto pg = parent(node, 0).ensure_grad();
      const Tensor& other = parent(node, 1);
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * other[i];
    }
    if (wants_grad(node, 1)) {
      auto pg = parent(node, 1).ensure_grad();
      const Tensor& other = parent(node, 0);
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * other[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
  return make_result(std::move(out), {a}, [s](detail::Node& node) {
    auto g = node.value.grad();
    auto pg = parent(node, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * s;
  });
}

Var add_row(const Var& a, const Var& b) {
  require_matrix(a, "add_row");
  if (b.shape().size() != 1 || b.shape()[0] != a.shape()[1]) {
    throw DimensionError("add_row: cannot add " + shape_to_string(b.shape()) + " to rows of " +
                         shape_to_string(a.shape()));
  }
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out(a.shape());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = a.value()[r * n + c] + b.value()[c];
  return make_result(std::move(out), {a, b}, [m, n](detail::Node& node) {
    auto g = node.value.grad();
    if (wants_grad(node, 0)) {
      auto pg = parent(node, 0).ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
    }
    if (wants_grad(node, 1)) {
      auto pg = parent(node, 1).ensure_grad();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) pg[c] += g[r * n + c];
    }
  });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double x : a.value().data()) total += x;
  return make_result(Tensor::scalar(total), {a}, [](detail::Node& node) {
    const double g = node.value.grad()[0];
    for (double& x : parent(node, 0).ensure_grad()) x += g;
  });
}

Var gelu(const Var& a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.value()[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(k * (x + c * x * x * x)));
  }
  return make_result(std::move(out), {a}, [](detail::Node& node) {
    auto g = node.value.grad();
    const Tensor& x = parent(node, 0);
    auto pg = parent(node, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = x[i];
      const double t = std::tanh(k * (v + c * v * v * v));
      const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * k * (1.0 + 3.0 * c * v * v);
      pg[i] += g[i] * d;
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_matrix(x, "layer_norm");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) {
    throw DimensionError("layer_norm: gain/bias " + shape_to_string(gamma.shape()) + "/" +
                         shape_to_string(beta.shape()) + " do not match " + shape_to_string(x.shape()));
  }
  Tensor out(x.shape());
  std::vector<double> xhat(m * n), rstd(m);
  const auto xv = x.value().data();
  for (std::size_t r = 0; r < m; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += xv[r * n + c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (xv[r * n + c] - mu) * (xv[r * n + c] - mu);
    var /= static_cast<double>(n);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat[r * n + c] = (xv[r * n + c] - mu) * rstd[r];
      out[r * n + c] = xhat[r * n + c] * gamma.value()[c] + beta.value()[c];
    }
  }
  return make_result(std::move(out), {x, gamma, beta},
                     [m, n, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node& node) {
    auto g = node.value.grad();
    const Tensor& gam = parent(node, 1);
    if (wants_grad(node, 1)) {
      auto gg = parent(node, 1).ensure_grad();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) gg[c] += g[r * n + c] * xhat[r * n + c];
    }
    if (wants_grad(node, 2)) {
      auto gb = parent(node, 2).ensure_grad();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
    }
    if (wants_grad(node, 0)) {
      auto gx = parent(node, 0).ensure_grad();
      for (std::size_t r = 0; r < m; ++r) {
        double mean_g = 0.0, mean_gx = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          const double gh = g[r * n + c] * gam[c];
          mean_g += gh;
          mean_gx += gh * xhat[r * n + c];
        }
        mean_g /= static_cast<double>(n);
        mean_gx /= static_cast<double>(n);
        for (std::size_t c = 0; c < n; ++c) {
          const double gh = g[r * n + c] * gam[c];
          gx[r * n + c] += rstd[r] * (gh - mean_g - xhat[r * n + c] * mean_gx);
        }
      }
    }
  });
}

Var embedding(const Var& table, std::span<const int> ids) {
  require_matrix(table, "embedding");
  const std::size_t vocab = table.shape()[0], d = table.shape()[1];
  std::vector<int> rows(ids.begin(), ids.end());
  Tensor out(Shape{rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= vocab) {
      throw IndexError("embedding: id " + std::to_string(rows[i]) + " outside table of " + std::to_string(vocab) +
                       " rows");
    }
    const auto src = table.value().data().subspan(static_cast<std::size_t>(rows[i]) * d, d);
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return make_result(std::move(out), {table}, [rows = std::move(rows), d](detail::Node& node) {
    auto g = node.value.grad();
    auto pg = parent(node, 0).ensure_grad();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) pg[static_cast<std::size_t>(rows[i]) * d + c] += g[i * d + c];
  });
}

Var dropout(const Var& x, double p, RngStream& rng, bool training) {
  RngStream* const streams[] = {&rng};
  return dropout(x, p, streams, training);
}

Var dropout(const Var& x, double p, std::span<RngStream* const> streams, bool training) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: p must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  if (streams.empty() || x.size() % streams.size() != 0) {
    throw DimensionError("dropout: " + std::to_string(x.size()) + " values do not split into " +
                         std::to_string(streams.size()) + " blocks");
  }
  const double keep_scale = 1.0 / (1.0 - p);
  const std::size_t block = x.size() / streams.size();
  std::vector<double> mask(x.size());
  Tensor out(x.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = streams[i / block]->uniform() >= p ? keep_scale : 0.0;
    out[i] = x.value()[i] * mask[i];
  }
  return make_result(std::move(out), {x}, [mask = std::move(mask)](detail::Node& node) {
    auto g = node.value.grad();
    auto pg = parent(node, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * mask[i];
  });
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t n_heads, bool causal, std::size_t blocks) {
  require_matrix(q, "attention");
  require_matrix(k, "attention");
  require_matrix(v, "attention");
  const std::size_t D = q.shape()[1];
  if (k.shape()[1] != D || v.shape() != k.shape()) {
    throw DimensionError("attention: incompatible q/k/v shapes " + shape_to_string(q.shape()) + ", " +
                         shape_to_string(k.shape()) + ", " + shape_to_string(v.shape()));
  }
  if (n_heads == 0 || D % n_heads != 0) {
    throw DimensionError("attention: width " + std::to_string(D) + " not divisible into " + std::to_string(n_heads) +
                         " heads");
  }
  if (blocks == 0 || q.shape()[0] % blocks != 0 || k.shape()[0] % blocks != 0) {
    throw DimensionError("attention: rows of " + shape_to_string(q.shape()) + " and " + shape_to_string(k.shape()) +
                         " do not split into " + std::to_string(blocks) + " blocks");
  }
  const std::size_t m = q.shape()[0] / blocks, n = k.shape()[0] / blocks;
  if (causal && m != n) throw DimensionError("attention: causal mask needs square scores");
  const auto hd = static_cast<Eigen::Index>(D / n_heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  const auto M = static_cast<Eigen::Index>(m), Nn = static_cast<Eigen::Index>(n);

  ConstMatMap Q = as_matrix(q.value()), K = as_matrix(k.value()), V = as_matrix(v.value());
  Tensor out(Shape{m * blocks, D});
  MatMap O(out.data().data(), M * static_cast<Eigen::Index>(blocks), static_cast<Eigen::Index>(D));
  // probs[b * n_heads + h]: softmax weights of block b, head h.
  std::vector<RowMat> probs(blocks * n_heads);
  for (std::size_t b = 0; b < blocks; ++b) {
    const Eigen::Index qr = static_cast<Eigen::Index>(b) * M, kr = static_cast<Eigen::Index>(b) * Nn;
    for (std::size_t h = 0; h < n_heads; ++h) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * hd;
      RowMat s = (Q.block(qr, c0, M, hd) * K.block(kr, c0, Nn, hd).transpose()) * inv_sqrt;
      for (Eigen::Index i = 0; i < M; ++i) {
        const Eigen::Index limit = causal ? i + 1 : Nn;
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < limit; ++j) mx = std::max(mx, s(i, j));
        double z = 0.0;
        for (Eigen::Index j = 0; j < limit; ++j) {
          s(i, j) = std::exp(s(i, j) - mx);
          z += s(i, j);
        }
        for (Eigen::Index j = 0; j < limit; ++j) s(i, j) /= z;
        for (Eigen::Index j = limit; j < Nn; ++j) s(i, j) = 0.0;
      }
      O.block(qr, c0, M, hd).noalias() = s * V.block(kr, c0, Nn, hd);
      probs[b * n_heads + h] = std::move(s);
    }
  }
  return make_result(std::move(out), {q, k, v},
                     [probs = std::move(probs), blocks, n_heads, hd, inv_sqrt, M, Nn, D](detail::Node& node) {
    ConstMatMap G(node.value.grad().data(), M * static_cast<Eigen::Index>(blocks), static_cast<Eigen::Index>(D));
    ConstMatMap Qv = as_matrix(parent(node, 0)), Kv = as_matrix(parent(node, 1)), Vv = as_matrix(parent(node, 2));
    const bool gq = wants_grad(node, 0), gk = wants_grad(node, 1), gv = wants_grad(node, 2);
    RowMat dS(M, Nn);
    for (std::size_t b = 0; b < blocks; ++b) {
      const Eigen::Index qr = static_cast<Eigen::Index>(b) * M, kr = static_cast<Eigen::Index>(b) * Nn;
      for (std::size_t h = 0; h < n_heads; ++h) {
        const Eigen::Index c0 = static_cast<Eigen::Index>(h) * hd;
        const RowMat& P = probs[b * n_heads + h];
        const auto Gb = G.block(qr, c0, M, hd);
        if (gv) grad_matrix(parent(node, 2)).block(kr, c0, Nn, hd).noalias() += P.transpose() * Gb;
        if (!gq && !gk) continue;
        const RowMat dP = Gb * Vv.block(kr, c0, Nn, hd).transpose();
        for (Eigen::Index i = 0; i < M; ++i) {
          const double dot = P.row(i).dot(dP.row(i));
          for (Eigen::Index j = 0; j < Nn; ++j) dS(i, j) = P(i, j) * (dP(i, j) - dot) * inv_sqrt;
        }
        if (gq) grad_matrix(parent(node, 0)).block(qr, c0, M, hd).noalias() += dS * Kv.block(kr, c0, Nn, hd);
        if (gk) grad_matrix(parent(node, 1)).block(kr, c0, Nn, hd).noalias() += dS.transpose() * Qv.block(qr, c0, M, hd);
      }
    }
  });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_rows");
  const std::size_t cols = x.shape()[1];
  if (begin + count > x.shape()[0]) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_to_string(x.shape()));
  }
  const auto src = x.value().data().subspan(begin * cols, count * cols);
  Tensor out(Shape{count, cols}, std::vector<double>(src.begin(), src.end()));
  return make_result(std::move(out), {x}, [begin, cols](detail::Node& node) {
    auto g = node.value.grad();
    auto pg = parent(node, 0).ensure_grad().subspan(begin * cols, g.size());
    for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
  });
}

double cross_entropy(std::span<const double> logits, int target) {
  if (logits.size() < 2) throw DimensionError("cross_entropy: need at least 2 classes");
  if (target < 0 || static_cast<std::size_t>(target) >= logits.size()) {
    throw IndexError("cross_entropy: target " + std::to_string(target) + " outside " + std::to_string(logits.size()) +
                     " classes");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double x : logits) z += std::exp(x - mx);
  return -(logits[static_cast<std::size_t>(target)] - mx) + std::log(z);
}

Var softmax_cross_entropy(const Var& logits, int target) {
  if (logits.shape().size() != 1) {
    throw DimensionError("softmax_cross_entropy: expected logits of shape [V], got " + shape_to_string(logits.shape()));
  }
  const int targets[] = {target};
  return sequence_cross_entropy(logits, targets);
}

Var sequence_cross_entropy(const Var& logits, std::span<const int> targets, std::span<const double> row_weights) {
  const Tensor& lv = logits.value();
  const std::size_t rows = lv.rows(), V = lv.cols();
  if (targets.size() != rows) {
    throw InputError("sequence_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(rows) + " logit rows");
  }
  if (!row_weights.empty() && row_weights.size() != rows) {
    throw InputError("sequence_cross_entropy: weight count does not match rows");
  }
  std::vector<double> w(rows, 1.0);
  if (!row_weights.empty()) w.assign(row_weights.begin(), row_weights.end());
  double wsum = 0.0;
  for (double x : w) wsum += x;
  if (wsum <= 0.0) throw InputError("sequence_cross_entropy: no valid positions");

  std::vector<double> probs(rows * V);
  std::vector<int> tgt(targets.begin(), targets.end());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = lv.data().subspan(r * V, V);
    const double ce = cross_entropy(row, tgt[r]);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t c = 0; c < V; ++c) z += (probs[r * V + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < V; ++c) probs[r * V + c] /= z;
    total += w[r] * ce;
  }
  return make_result(Tensor::scalar(total / wsum), {logits},
                     [probs = std::move(probs), tgt = std::move(tgt), w = std::move(w), wsum, rows, V](detail::Node& node) {
    const double g = node.value.grad()[0];
    auto pg = parent(node, 0).ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double f = g * w[r] / wsum;
      if (f == 0.0) continue;
      for (std::size_t c = 0; c < V; ++c) pg[r * V + c] += f * probs[r * V + c];
      pg[r * V + static_cast<std::size_t>(tgt[r])] -= f;
    }
  });
}

}  // namespace mccot
