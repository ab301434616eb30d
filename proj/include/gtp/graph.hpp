#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "gtp/autodiff.hpp"

namespace gtp {

/// How edge embeddings e_ij are parameterized.
///  - None: e_ij is the zero vector.
///  - Shared: every edge uses one learnable vector ([1 x d_e]).
///  - Positional: edge (i, j) uses row i * max_batch + j of a learnable
///    table ([max_batch^2 x d_e]), keyed by batch slot.
enum class EdgeMode { None, Shared, Positional };

std::string to_string(EdgeMode mode);
EdgeMode parse_edge_mode(const std::string& text);

/// Complete directed graph without self-loops over the samples of one batch.
struct BatchGraph {
  Var node_features;  // [b x d_c]
  std::size_t batch_size = 0;
  EdgeMode edge_mode = EdgeMode::None;
  Var edge_embeddings;  // unset for None
  std::size_t max_batch = 0;

  /// N(i): every node except i, ascending.
  std::vector<std::size_t> neighbors(std::size_t i) const;
  std::size_t edge_count() const noexcept { return batch_size * (batch_size - 1); }
  /// Row of edge_embeddings used by edge (i, j).
  std::size_t edge_row(std::size_t i, std::size_t j) const;
  bool has_edges() const noexcept { return edge_mode != EdgeMode::None; }
};

/// Throws ConfigError for Positional graphs larger than `max_batch` or when
/// the embedding table does not match the mode.
BatchGraph build_batch_graph(Var features, EdgeMode mode, Var edge_embeddings = {}, std::size_t max_batch = 0);

}  // namespace gtp
