#include "gtp/graph.hpp"

#include <algorithm>
#include <cctype>

#include "gtp/error.hpp"

namespace gtp {

std::string to_string(EdgeMode mode) {
  switch (mode) {
    case EdgeMode::None:
      return "none";
    case EdgeMode::Shared:
      return "shared";
    case EdgeMode::Positional:
      return "positional";
  }
  return "unknown";
}

EdgeMode parse_edge_mode(const std::string& text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "none") return EdgeMode::None;
  if (lower == "shared") return EdgeMode::Shared;
  if (lower == "positional") return EdgeMode::Positional;
  throw ConfigError("unknown edge mode '" + text + "' (expected none, shared or positional)");
}

std::vector<std::size_t> BatchGraph::neighbors(std::size_t i) const {
  std::vector<std::size_t> out;
  out.reserve(batch_size ? batch_size - 1 : 0);
  for (std::size_t j = 0; j < batch_size; ++j)
    if (j != i) out.push_back(j);
  return out;
}

std::size_t BatchGraph::edge_row(std::size_t i, std::size_t j) const {
  switch (edge_mode) {
    case EdgeMode::Shared:
      return 0;
    case EdgeMode::Positional:
      return i * max_batch + j;
    case EdgeMode::None:
      break;
  }
  throw UsageError("edge_row on a graph without edge embeddings");
}

BatchGraph build_batch_graph(Var features, EdgeMode mode, Var edge_embeddings, std::size_t max_batch) {
  const Tensor& f = features.value();
  if (f.rank() != 2) throw ShapeError("batch graph node features must be [b x d], got " + dims_to_string(f.dims()));
  BatchGraph g;
  g.node_features = features;
  g.batch_size = f.dim(0);
  g.edge_mode = mode;
  g.max_batch = max_batch;
  switch (mode) {
    case EdgeMode::None:
      break;
    case EdgeMode::Shared:
      if (!edge_embeddings || edge_embeddings.value().rank() != 2 || edge_embeddings.value().dim(0) != 1) {
        throw ConfigError("shared edge mode needs a [1 x d_e] embedding");
      }
      g.edge_embeddings = edge_embeddings;
      break;
    case EdgeMode::Positional:
      if (g.batch_size > max_batch) {
        throw ConfigError("positional edge mode supports batches up to " + std::to_string(max_batch) +
                          " samples, got " + std::to_string(g.batch_size));
      }
      if (!edge_embeddings || edge_embeddings.value().rank() != 2 ||
          edge_embeddings.value().dim(0) != max_batch * max_batch) {
        throw ConfigError("positional edge mode needs a [" + std::to_string(max_batch * max_batch) +
                          " x d_e] embedding table");
      }
      g.edge_embeddings = edge_embeddings;
      break;
  }
  return g;
}

}  // namespace gtp
