#include "gtp/transformer_block.hpp"

#include <algorithm>
#include <cmath>

#include "gtp/error.hpp"

namespace gtp {

namespace {

// Sum that does not depend on the order the terms were produced in. Neighbor
// reductions go through this so that permuting the batch permutes outputs
// bit-exactly.
double order_free_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double total = 0.0;
  for (double t : terms) total += t;
  return total;
}

Tensor uniform_init(Dims dims, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(dims));
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

void check_params(const BatchGraph& graph, const GtpBlockParams& p) {
  const Tensor& c = graph.node_features.value();
  const std::size_t d_in = c.dim(1);
  const Dims& q = p.w_q.dims();
  if (q.size() != 2 || q[0] != d_in) {
    throw ShapeError("block W_q " + dims_to_string(q) + " does not accept features " + dims_to_string(c.dims()));
  }
  const std::size_t d_out = q[1];
  for (const Var* w : {&p.w_k, &p.w_v, &p.w_r}) {
    if (w->dims() != q) throw ShapeError("block weight " + dims_to_string(w->dims()) + " vs W_q " + dims_to_string(q));
  }
  if (p.w_g.dims() != Dims{3 * d_out, 1}) {
    throw ShapeError("block W_g must be [" + std::to_string(3 * d_out) + "x1], got " + dims_to_string(p.w_g.dims()));
  }
  if (p.heads == 0 || d_out % p.heads != 0) {
    throw ConfigError("d_out " + std::to_string(d_out) + " is not divisible by " + std::to_string(p.heads) + " heads");
  }
  if (graph.has_edges()) {
    if (!p.w_e) throw ConfigError("graph has edge embeddings but the block has no W_e");
    const std::size_t d_e = graph.edge_embeddings.value().dim(1);
    if (p.w_e.dims() != Dims{d_e, d_out}) {
      throw ShapeError("block W_e " + dims_to_string(p.w_e.dims()) + " does not match edge dim " +
                       std::to_string(d_e) + " and d_out " + std::to_string(d_out));
    }
  }
}

}  // namespace

void BlockShape::validate() const {
  if (d_in == 0 || d_out == 0) throw ConfigError("block dimensions must be positive");
  if (heads == 0) throw ConfigError("block needs at least one head");
  if (d_out % heads != 0) {
    throw ConfigError("d_out " + std::to_string(d_out) + " is not divisible by " + std::to_string(heads) + " heads");
  }
}

void init_block(ParameterStore& store, const std::string& prefix, const BlockShape& shape, Rng& rng) {
  shape.validate();
  store.add(prefix + ".w_q", uniform_init({shape.d_in, shape.d_out}, shape.d_in, rng));
  store.add(prefix + ".w_k", uniform_init({shape.d_in, shape.d_out}, shape.d_in, rng));
  store.add(prefix + ".w_v", uniform_init({shape.d_in, shape.d_out}, shape.d_in, rng));
  if (shape.d_edge > 0) store.add(prefix + ".w_e", uniform_init({shape.d_edge, shape.d_out}, shape.d_edge, rng));
  store.add(prefix + ".w_r", uniform_init({shape.d_in, shape.d_out}, shape.d_in, rng));
  store.add(prefix + ".w_g", uniform_init({3 * shape.d_out, 1}, 3 * shape.d_out, rng));
}

GtpBlockParams bind_block(const ParamBinder& bind, const std::string& prefix, const BlockShape& shape) {
  GtpBlockParams p;
  p.w_q = bind(prefix + ".w_q");
  p.w_k = bind(prefix + ".w_k");
  p.w_v = bind(prefix + ".w_v");
  if (shape.d_edge > 0) p.w_e = bind(prefix + ".w_e");
  p.w_r = bind(prefix + ".w_r");
  p.w_g = bind(prefix + ".w_g");
  p.heads = shape.heads;
  p.full_dim_scaling = shape.full_dim_scaling;
  return p;
}

Var project_edges(const BatchGraph& graph, const GtpBlockParams& params) {
  if (!graph.has_edges()) return {};
  const std::size_t b = graph.batch_size;
  std::vector<std::size_t> rows;
  rows.reserve(b * b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) rows.push_back(graph.edge_row(i, j));
  return matmul(gather_rows(graph.edge_embeddings, std::move(rows)), params.w_e);
}

Var edge_attention(Var queries, Var keys, Var edges, std::size_t heads, bool full_dim_scaling) {
  const Tensor& q = queries.value();
  const Tensor& k = keys.value();
  require_same_dims(q, k, "edge_attention");
  const std::size_t b = q.dim(0), d = q.dim(1);
  if (heads == 0 || d % heads != 0) throw ConfigError("feature dim not divisible by head count");
  const bool has_edges = static_cast<bool>(edges);
  if (has_edges && edges.dims() != Dims{b * b, d}) {
    throw ShapeError("edge_attention: edges " + dims_to_string(edges.dims()) + " vs queries " + dims_to_string(q.dims()));
  }
  const std::size_t dh = d / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(full_dim_scaling ? d : dh));

  Tensor alpha({heads, b, b});
  std::vector<double> terms;
  if (b > 1) {
    const double* e = has_edges ? edges.value().data() : nullptr;
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < b; ++i) {
        double* row = alpha.data() + (h * b + i) * b;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < b; ++j) {
          if (j == i) continue;
          double dot = 0.0;
          for (std::size_t f = h * dh; f < (h + 1) * dh; ++f) {
            const double key = has_edges ? k[j * d + f] + e[(i * b + j) * d + f] : k[j * d + f];
            dot += q[i * d + f] * key;
          }
          row[j] = dot * inv_scale;
          mx = std::max(mx, row[j]);
        }
        terms.clear();
        for (std::size_t j = 0; j < b; ++j) {
          if (j == i) continue;
          row[j] = std::exp(row[j] - mx);
          terms.push_back(row[j]);
        }
        const double denom = order_free_sum(terms);
        for (std::size_t j = 0; j < b; ++j) row[j] = j == i ? 0.0 : row[j] / denom;
      }
    }
  }

  std::vector<Var> inputs{queries, keys};
  if (has_edges) inputs.push_back(edges);
  return queries.tape->record(
      std::move(alpha), inputs,
      [queries, keys, edges, has_edges, b, d, dh, heads, inv_scale](Tape& t, std::span<const double> g,
                                                                    const Tensor& alpha) {
        if (b < 2) return;
        const Tensor& q = t.value(queries);
        const Tensor& k = t.value(keys);
        const double* e = has_edges ? t.value(edges).data() : nullptr;
        std::span<double> gq, gk, ge;
        if (t.requires_grad(queries)) gq = t.grad(queries);
        if (t.requires_grad(keys)) gk = t.grad(keys);
        if (has_edges && t.requires_grad(edges)) ge = t.grad(edges);
        for (std::size_t h = 0; h < heads; ++h) {
          for (std::size_t i = 0; i < b; ++i) {
            const std::size_t base = (h * b + i) * b;
            double dot = 0.0;
            for (std::size_t j = 0; j < b; ++j) dot += g[base + j] * alpha[base + j];
            for (std::size_t j = 0; j < b; ++j) {
              if (j == i) continue;
              const double dscore = alpha[base + j] * (g[base + j] - dot) * inv_scale;
              for (std::size_t f = h * dh; f < (h + 1) * dh; ++f) {
                const double qv = q[i * d + f];
                if (!gq.empty()) gq[i * d + f] += dscore * (has_edges ? k[j * d + f] + e[(i * b + j) * d + f] : k[j * d + f]);
                if (!gk.empty()) gk[j * d + f] += dscore * qv;
                if (!ge.empty()) ge[(i * b + j) * d + f] += dscore * qv;
              }
            }
          }
        }
      });
}

Var edge_aggregate(Var alpha, Var values, Var edges, std::size_t heads) {
  const Tensor& a = alpha.value();
  const Tensor& v = values.value();
  if (v.rank() != 2) throw ShapeError("edge_aggregate: values must be [b x d], got " + dims_to_string(v.dims()));
  const std::size_t b = v.dim(0), d = v.dim(1);
  if (a.dims() != Dims{heads, b, b}) {
    throw ShapeError("edge_aggregate: alpha " + dims_to_string(a.dims()) + " does not match values " +
                     dims_to_string(v.dims()) + " with " + std::to_string(heads) + " heads");
  }
  if (d % heads != 0) throw ConfigError("feature dim not divisible by head count");
  const bool has_edges = static_cast<bool>(edges);
  if (has_edges && edges.dims() != Dims{b * b, d}) {
    throw ShapeError("edge_aggregate: edges " + dims_to_string(edges.dims()) + " vs values " + dims_to_string(v.dims()));
  }
  const std::size_t dh = d / heads;
  const double* e = has_edges ? edges.value().data() : nullptr;

  Tensor out({b, d});
  std::vector<double> terms;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t f = 0; f < d; ++f) {
      const std::size_t h = f / dh;
      terms.clear();
      for (std::size_t j = 0; j < b; ++j) {
        if (j == i) continue;
        const double msg = has_edges ? v[j * d + f] + e[(i * b + j) * d + f] : v[j * d + f];
        terms.push_back(a[(h * b + i) * b + j] * msg);
      }
      out[i * d + f] = order_free_sum(terms);
    }
  }

  std::vector<Var> inputs{alpha, values};
  if (has_edges) inputs.push_back(edges);
  return alpha.tape->record(
      std::move(out), inputs,
      [alpha, values, edges, has_edges, b, d, dh](Tape& t, std::span<const double> g, const Tensor&) {
        const Tensor& a = t.value(alpha);
        const Tensor& v = t.value(values);
        const double* e = has_edges ? t.value(edges).data() : nullptr;
        std::span<double> ga, gv, ge;
        if (t.requires_grad(alpha)) ga = t.grad(alpha);
        if (t.requires_grad(values)) gv = t.grad(values);
        if (has_edges && t.requires_grad(edges)) ge = t.grad(edges);
        for (std::size_t i = 0; i < b; ++i) {
          for (std::size_t j = 0; j < b; ++j) {
            if (j == i) continue;
            for (std::size_t f = 0; f < d; ++f) {
              const std::size_t aidx = ((f / dh) * b + i) * b + j;
              const double gi = g[i * d + f];
              if (!ga.empty()) ga[aidx] += gi * (has_edges ? v[j * d + f] + e[(i * b + j) * d + f] : v[j * d + f]);
              if (!gv.empty()) gv[j * d + f] += a[aidx] * gi;
              if (!ge.empty()) ge[(i * b + j) * d + f] += a[aidx] * gi;
            }
          }
        }
      });
}

Var attention_coefficients(const BatchGraph& graph, const GtpBlockParams& params) {
  check_params(graph, params);
  Var q = matmul(graph.node_features, params.w_q);
  Var k = matmul(graph.node_features, params.w_k);
  return edge_attention(q, k, project_edges(graph, params), params.heads, params.full_dim_scaling);
}

Var message_aggregate(const BatchGraph& graph, Var alpha, const GtpBlockParams& params) {
  check_params(graph, params);
  Var v = matmul(graph.node_features, params.w_v);
  return edge_aggregate(alpha, v, project_edges(graph, params), params.heads);
}

Var gated_residual(Var c, Var c_hat, const GtpBlockParams& params) {
  Var r = matmul(c, params.w_r);
  require_same_dims(r.value(), c_hat.value(), "gated_residual");
  Var gate_in = concat_cols({c_hat, r, sub(c_hat, r)});
  Var beta = sigmoid(matmul(gate_in, params.w_g));
  return add(row_scale(r, beta), row_scale(c_hat, affine(beta, -1.0, 1.0)));
}

Var apply_block(const BatchGraph& graph, const GtpBlockParams& params) {
  check_params(graph, params);
  const Var& c = graph.node_features;
  Var q = matmul(c, params.w_q);
  Var k = matmul(c, params.w_k);
  Var v = matmul(c, params.w_v);
  Var edges = project_edges(graph, params);
  Var alpha = edge_attention(q, k, edges, params.heads, params.full_dim_scaling);
  Var c_hat = edge_aggregate(alpha, v, edges, params.heads);
  return gated_residual(c, c_hat, params);
}

}  // namespace gtp
