#include "gtp/network.hpp"

#include <cmath>
#include <string>

#include "gtp/error.hpp"

namespace gtp {

void NetworkConfig::validate() const {
  if (image_size < kMinImageSize) {
    throw ConfigError("image_size must be at least " + std::to_string(kMinImageSize));
  }
  EncoderShape{3, encoder_channels, feature_dim}.validate();
  if (!use_gtp) return;
  if (blocks == 0) throw ConfigError("graph mode needs at least one block");
  if (model_dim == 0) throw ConfigError("model_dim must be positive");
  if (heads == 0 || model_dim % heads != 0) {
    throw ConfigError("model_dim " + std::to_string(model_dim) + " must be divisible by heads " + std::to_string(heads));
  }
  if (edge_mode != EdgeMode::None && edge_dim == 0) throw ConfigError("edge_dim must be positive");
  if (edge_mode == EdgeMode::Positional && max_batch == 0) throw ConfigError("max_batch must be positive");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ConfigError("bn_momentum must lie in (0, 1]");
  if (!(bn_epsilon > 0.0)) throw ConfigError("bn_epsilon must be positive");
}

BlockShape NetworkConfig::block_shape(std::size_t index) const {
  BlockShape s;
  s.d_in = index == 0 ? feature_dim : model_dim;
  s.d_out = model_dim;
  s.d_edge = edge_mode == EdgeMode::None ? 0 : edge_dim;
  s.heads = heads;
  s.full_dim_scaling = full_dim_scaling;
  return s;
}

nlohmann::json NetworkConfig::to_json() const {
  return {
      {"use_gtp", use_gtp},
      {"image_size", image_size},
      {"encoder_channels", encoder_channels},
      {"feature_dim", feature_dim},
      {"model_dim", model_dim},
      {"blocks", blocks},
      {"heads", heads},
      {"edge_mode", to_string(edge_mode)},
      {"edge_dim", edge_dim},
      {"max_batch", max_batch},
      {"full_dim_scaling", full_dim_scaling},
      {"bn_momentum", bn_momentum},
      {"bn_epsilon", bn_epsilon},
  };
}

NetworkConfig NetworkConfig::from_json(const nlohmann::json& j) {
  NetworkConfig c;
  try {
    c.use_gtp = j.value("use_gtp", c.use_gtp);
    c.image_size = j.value("image_size", c.image_size);
    c.encoder_channels = j.value("encoder_channels", c.encoder_channels);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.model_dim = j.value("model_dim", c.model_dim);
    c.blocks = j.value("blocks", c.blocks);
    c.heads = j.value("heads", c.heads);
    c.edge_mode = parse_edge_mode(j.value("edge_mode", to_string(c.edge_mode)));
    c.edge_dim = j.value("edge_dim", c.edge_dim);
    c.max_batch = j.value("max_batch", c.max_batch);
    c.full_dim_scaling = j.value("full_dim_scaling", c.full_dim_scaling);
    c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
    c.bn_epsilon = j.value("bn_epsilon", c.bn_epsilon);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid network configuration: ") + e.what());
  }
  c.validate();
  return c;
}

GtpNetwork::GtpNetwork(const NetworkConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng = Rng::derive(seed, /*stream=*/0x1417);
  init_encoder(params_, EncoderShape{3, config_.encoder_channels, config_.feature_dim}, rng);
  if (config_.use_gtp) {
    switch (config_.edge_mode) {
      case EdgeMode::None:
        break;
      case EdgeMode::Shared:
        params_.add("graph.edge_embedding", Tensor({1, config_.edge_dim}));
        break;
      case EdgeMode::Positional:
        params_.add("graph.edge_embedding", Tensor({config_.max_batch * config_.max_batch, config_.edge_dim}));
        break;
    }
    for (std::size_t i = 0; i < config_.blocks; ++i) {
      init_block(params_, "block" + std::to_string(i + 1), config_.block_shape(i), rng);
    }
    init_head(params_, config_.model_dim, config_.model_dim, rng);
    bn_ = BatchNormState::identity(config_.model_dim);
    bn_.momentum = config_.bn_momentum;
    bn_.epsilon = config_.bn_epsilon;
  }
  const std::size_t d = config_.classifier_input_dim();
  Tensor w({d, kNumClasses});
  const double bound = std::sqrt(1.0 / static_cast<double>(d));
  for (auto& v : w.values()) v = rng.uniform(-bound, bound);
  params_.add("classifier.weight", std::move(w));
  params_.add("classifier.bias", Tensor({kNumClasses}));
}

Var GtpNetwork::encode(const ParamBinder& bind, Var images) const { return cnn_encode(images, bind_encoder(bind)); }

Var GtpNetwork::forward_impl(const ParamBinder& bind, const Tensor& images, BatchNormState* train_state) const {
  Tape& tape = bind.tape();
  Var features = encode(bind, tape.constant(images));
  if (config_.use_gtp) {
    Var edges;
    if (config_.edge_mode != EdgeMode::None) edges = bind("graph.edge_embedding");
    Var c = features;
    for (std::size_t i = 0; i < config_.blocks; ++i) {
      const BatchGraph graph = build_batch_graph(c, config_.edge_mode, edges, config_.max_batch);
      c = apply_block(graph, bind_block(bind, "block" + std::to_string(i + 1), config_.block_shape(i)));
      if (i + 1 < config_.blocks) c = relu(c);
    }
    const HeadParams head = bind_head(bind);
    features = train_state ? project_normalize(c, head, *train_state, Mode::Train) : project_normalize(c, head, bn_);
  }
  return add_bias(matmul(features, bind("classifier.weight")), bind("classifier.bias"));
}

Var GtpNetwork::forward(Tape& tape, const Tensor& images, Mode mode) {
  return forward_impl(ParamBinder(tape, params_), images, mode == Mode::Train ? &bn_ : nullptr);
}

Var GtpNetwork::forward(Tape& tape, const Tensor& images) const {
  return forward_impl(ParamBinder(tape, params_), images, nullptr);
}

Tensor GtpNetwork::logits(const Tensor& images) const {
  Tape tape;
  return forward(tape, images).value();
}

Var forward_network(Tape& tape, const Tensor& images, GtpNetwork& net, Mode mode) {
  return net.forward(tape, images, mode);
}

}  // namespace gtp
