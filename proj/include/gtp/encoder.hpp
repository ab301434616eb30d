#pragma once

#include <array>
#include <cstddef>

#include "gtp/autodiff.hpp"
#include "gtp/rng.hpp"

namespace gtp {

/// Smallest image side the three pooling stages accept.
inline constexpr std::size_t kMinImageSize = 8;

/// Compact trainable CNN: three {3x3 conv, ReLU, 2x2 average pool} stages,
/// global average pool, then a linear map to `feature_dim`.
struct EncoderShape {
  std::size_t in_channels = 3;
  std::array<std::size_t, 3> channels{8, 16, 32};
  std::size_t feature_dim = 32;

  void validate() const;
};

struct EncoderParams {
  std::array<Var, 3> conv_weight;
  std::array<Var, 3> conv_bias;
  Var fc_weight;  // [channels[2] x feature_dim]
  Var fc_bias;    // [feature_dim]
};

/// Parameters "encoder.conv{1,2,3}.{weight,bias}" and "encoder.fc.{weight,bias}".
/// Weights uniform in +-sqrt(1 / fan_in), biases zero.
void init_encoder(ParameterStore& store, const EncoderShape& shape, Rng& rng);
EncoderParams bind_encoder(const ParamBinder& bind);

/// images [b x 3 x h x w] -> features [b x feature_dim]. Throws ShapeError
/// for fewer than 3 channels or sides below kMinImageSize.
Var cnn_encode(Var images, const EncoderParams& params);

}  // namespace gtp
