#include "gtp/encoder.hpp"

#include <cmath>
#include <string>

#include "gtp/error.hpp"

namespace gtp {

void EncoderShape::validate() const {
  if (in_channels == 0 || feature_dim == 0) throw ConfigError("encoder dimensions must be positive");
  for (auto c : channels)
    if (c == 0) throw ConfigError("encoder channel counts must be positive");
}

void init_encoder(ParameterStore& store, const EncoderShape& shape, Rng& rng) {
  shape.validate();
  std::size_t in = shape.in_channels;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t out = shape.channels[s];
    const std::string prefix = "encoder.conv" + std::to_string(s + 1);
    Tensor w({out, in, 3, 3});
    const double bound = std::sqrt(6.0 / static_cast<double>(in * 9));
    for (auto& v : w.values()) v = rng.uniform(-bound, bound);
    store.add(prefix + ".weight", std::move(w));
    store.add(prefix + ".bias", Tensor({out}));
    in = out;
  }
  Tensor fc({in, shape.feature_dim});
  const double bound = std::sqrt(1.0 / static_cast<double>(in));
  for (auto& v : fc.values()) v = rng.uniform(-bound, bound);
  store.add("encoder.fc.weight", std::move(fc));
  store.add("encoder.fc.bias", Tensor({shape.feature_dim}));
}

EncoderParams bind_encoder(const ParamBinder& bind) {
  EncoderParams p;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string prefix = "encoder.conv" + std::to_string(s + 1);
    p.conv_weight[s] = bind(prefix + ".weight");
    p.conv_bias[s] = bind(prefix + ".bias");
  }
  p.fc_weight = bind("encoder.fc.weight");
  p.fc_bias = bind("encoder.fc.bias");
  return p;
}

Var cnn_encode(Var images, const EncoderParams& params) {
  const Tensor& x = images.value();
  if (x.rank() != 4 || x.dim(1) != 3) {
    throw ShapeError("cnn_encode expects [b x 3 x h x w] images, got " + dims_to_string(x.dims()));
  }
  if (x.dim(2) < kMinImageSize || x.dim(3) < kMinImageSize) {
    throw ShapeError("cnn_encode needs images of at least " + std::to_string(kMinImageSize) + "x" +
                     std::to_string(kMinImageSize) + ", got " + dims_to_string(x.dims()));
  }
  Var h = images;
  for (std::size_t s = 0; s < 3; ++s) {
    h = avg_pool_2x2(relu(conv2d_3x3(h, params.conv_weight[s], params.conv_bias[s])));
  }
  return add_bias(matmul(global_avg_pool(h), params.fc_weight), params.fc_bias);
}

}  // namespace gtp
