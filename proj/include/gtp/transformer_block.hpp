#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "gtp/autodiff.hpp"
#include "gtp/graph.hpp"
#include "gtp/rng.hpp"

namespace gtp {

/// Dimensions of one graph transformer block.
struct BlockShape {
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  std::size_t d_edge = 0;  // 0 when the graph carries no edge embeddings
  std::size_t heads = 1;
  /// Scale attention scores by sqrt(d_out) instead of sqrt(d_out / heads).
  bool full_dim_scaling = false;

  void validate() const;
  std::size_t head_dim() const { return d_out / heads; }
};

/// Weights of one block bound to a tape. Matrices act on row vectors:
/// query_i = c_i W_q with W_q of shape [d_in x d_out].
struct GtpBlockParams {
  Var w_q, w_k, w_v;  // [d_in x d_out]
  Var w_e;            // [d_e x d_out]; unset when the graph has no edges
  Var w_r;            // [d_in x d_out]
  Var w_g;            // [3 d_out x 1]
  std::size_t heads = 1;
  bool full_dim_scaling = false;
};

/// Adds W_q, W_k, W_v, W_e (if d_edge > 0), W_r, W_g under `prefix`, each
/// uniform in +-sqrt(1 / fan_in).
void init_block(ParameterStore& store, const std::string& prefix, const BlockShape& shape, Rng& rng);
GtpBlockParams bind_block(const ParamBinder& bind, const std::string& prefix, const BlockShape& shape);

/// W_e e_ij for every ordered pair (i, j) of the batch, row i * b + j of a
/// [b^2 x d_out] matrix. Unset when the graph has no edges.
Var project_edges(const BatchGraph& graph, const GtpBlockParams& params);

/// Multi-head dot-product attention restricted to N(i).
/// alpha[h, i, j] = softmax_j (q_i . (k_j + E_ij)) / sqrt(scale) within head h,
/// alpha[h, i, i] = 0. Rows of a single-node graph are all zero.
/// `edges` is the output of project_edges (or unset).
Var edge_attention(Var queries, Var keys, Var edges, std::size_t heads, bool full_dim_scaling);

/// out[i, f] = sum over j in N(i) of alpha[h(f), i, j] (v_j + E_ij)[f].
Var edge_aggregate(Var alpha, Var values, Var edges, std::size_t heads);

/// [heads x b x b] attention coefficients for the block on `graph`.
Var attention_coefficients(const BatchGraph& graph, const GtpBlockParams& params);
/// [b x d_out] aggregated messages c_hat given coefficients from the same graph.
Var message_aggregate(const BatchGraph& graph, Var alpha, const GtpBlockParams& params);
/// r_i = c_i W_r, beta_i = sigmoid([c_hat_i; r_i; c_hat_i - r_i] W_g),
/// c'_i = beta_i r_i + (1 - beta_i) c_hat_i.
Var gated_residual(Var c, Var c_hat, const GtpBlockParams& params);

/// Full block: attention, aggregation and gated residual, sharing the edge
/// projection between attention and messages.
Var apply_block(const BatchGraph& graph, const GtpBlockParams& params);

}  // namespace gtp
