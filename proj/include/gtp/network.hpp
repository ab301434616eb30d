#pragma once

#include <cstddef>
#include <cstdint>

#include "json.hpp"

#include "gtp/autodiff.hpp"
#include "gtp/encoder.hpp"
#include "gtp/graph.hpp"
#include "gtp/head.hpp"
#include "gtp/transformer_block.hpp"

namespace gtp {

inline constexpr std::size_t kNumClasses = 4;

struct NetworkConfig {
  /// false: plain DNN baseline (encoder -> classifier), every row independent.
  bool use_gtp = true;
  std::size_t image_size = 32;
  std::array<std::size_t, 3> encoder_channels{8, 16, 32};
  std::size_t feature_dim = 32;  // encoder output d_c
  std::size_t model_dim = 64;    // d, width of every graph block
  std::size_t blocks = 4;
  std::size_t heads = 4;
  EdgeMode edge_mode = EdgeMode::Shared;
  std::size_t edge_dim = 8;
  std::size_t max_batch = 32;  // table size for Positional edges
  bool full_dim_scaling = false;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
  BlockShape block_shape(std::size_t index) const;
  std::size_t classifier_input_dim() const { return use_gtp ? model_dim : feature_dim; }

  nlohmann::json to_json() const;
  static NetworkConfig from_json(const nlohmann::json& j);
};

/// f = classifier(head(blocks(graph(encoder(x))))) with the learned state.
class GtpNetwork {
 public:
  GtpNetwork(const NetworkConfig& config, std::uint64_t seed);

  const NetworkConfig& config() const noexcept { return config_; }
  ParameterStore& params() noexcept { return params_; }
  const ParameterStore& params() const noexcept { return params_; }
  BatchNormState& batch_norm() noexcept { return bn_; }
  const BatchNormState& batch_norm() const noexcept { return bn_; }

  /// Records the forward pass with trainable parameters. Train mode needs
  /// b >= 2 when graph blocks are enabled and updates the running statistics.
  Var forward(Tape& tape, const Tensor& images, Mode mode);
  /// Eval-mode forward with constant parameters; safe on a shared network.
  Var forward(Tape& tape, const Tensor& images) const;
  /// Eval-mode logits [b x 4].
  Tensor logits(const Tensor& images) const;

  /// Encoder output [b x d_c].
  Var encode(const ParamBinder& bind, Var images) const;

 private:
  Var forward_impl(const ParamBinder& bind, const Tensor& images, BatchNormState* train_state) const;

  NetworkConfig config_;
  ParameterStore params_;
  BatchNormState bn_;
};

Var forward_network(Tape& tape, const Tensor& images, GtpNetwork& net, Mode mode);

}  // namespace gtp
