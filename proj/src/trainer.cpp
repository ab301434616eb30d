#include "gtp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "gtp/error.hpp"
#include "gtp/image.hpp"
#include "gtp/rng.hpp"

namespace gtp {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5a1f;
constexpr std::uint64_t kAugmentStream = 0xa06;

Tensor batch_images(const LabeledDataset& data, std::span<const std::size_t> idx) {
  std::vector<const Tensor*> images;
  images.reserve(idx.size());
  for (auto i : idx) images.push_back(&data.items[i].image);
  return stack_images(images);
}

LabeledDataset at_size(const LabeledDataset& data, std::size_t size) {
  for (const auto& s : data.items) {
    if (s.image.dim(1) != size || s.image.dim(2) != size) return resized(data, size);
  }
  return data;
}

std::vector<std::vector<std::size_t>> train_batches(std::vector<std::size_t> order, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    // Train-mode BatchNorm needs two samples.
    if (end - start < 2) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  network.validate();
  optimizer.validate();
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (batch_size < 2) {
    throw ConfigError("batch size must be at least 2 (train-mode BatchNorm needs a batch variance), got " +
                      std::to_string(batch_size));
  }
  if (eval_batch_size == 0) throw ConfigError("eval batch size must be at least 1");
  if (network.use_gtp && network.edge_mode == EdgeMode::Positional &&
      std::max(batch_size, eval_batch_size) > network.max_batch) {
    throw ConfigError("positional edges support batches up to max_batch " + std::to_string(network.max_batch));
  }
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) throw ConfigError("flip probability must lie in [0, 1]");
  if (!(rotation_degrees >= 0.0 && rotation_degrees <= 180.0)) throw ConfigError("rotation must lie in [0, 180]");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"network", network.to_json()},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"eval_batch_size", eval_batch_size},
          {"loss", to_string(loss)},
          {"lr", optimizer.lr},
          {"beta1", optimizer.beta1},
          {"beta2", optimizer.beta2},
          {"epsilon", optimizer.epsilon},
          {"flip_probability", flip_probability},
          {"rotation_degrees", rotation_degrees},
          {"seed", seed},
          {"bn_recalibration", bn_recalibration}};
}

std::string format_epoch_log(const std::vector<EpochRecord>& log) {
  std::string out = "epoch,train_loss,test_macro_f1\n";
  char buf[96];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", r.epoch, r.train_loss, r.test_macro_f1);
    out += buf;
  }
  return out;
}

void recalibrate_batch_norm(GtpNetwork& net, const LabeledDataset& data, std::size_t batch_size) {
  if (!net.config().use_gtp) return;
  const LabeledDataset sized = at_size(data, net.config().image_size);
  std::vector<std::size_t> order(sized.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batches = train_batches(std::move(order), batch_size);
  if (batches.empty()) throw ValidationError("BatchNorm recalibration needs at least 2 samples");

  BatchNormState& bn = net.batch_norm();
  const double momentum = bn.momentum;
  const std::size_t d = bn.running_mean.size();
  std::vector<double> mean_sum(d, 0.0), var_sum(d, 0.0);
  // With momentum 1 a train-mode pass leaves exactly the batch statistics in
  // the running slots.
  bn.momentum = 1.0;
  for (const auto& idx : batches) {
    Tape tape;
    net.forward(tape, batch_images(sized, idx), Mode::Train);
    for (std::size_t j = 0; j < d; ++j) {
      mean_sum[j] += bn.running_mean[j];
      var_sum[j] += bn.running_var[j];
    }
  }
  bn.momentum = momentum;
  const double n = static_cast<double>(batches.size());
  for (std::size_t j = 0; j < d; ++j) {
    bn.running_mean[j] = mean_sum[j] / n;
    bn.running_var[j] = var_sum[j] / n;
  }
}

std::vector<Probs> predict(const GtpNetwork& net, const LabeledDataset& data, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("eval batch size must be at least 1");
  const LabeledDataset sized = at_size(data, net.config().image_size);
  std::vector<Probs> out;
  out.reserve(sized.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < sized.size(); start += batch_size) {
    idx.resize(std::min(sized.size(), start + batch_size) - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor probs = softmax(net.logits(batch_images(sized, idx)), 1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      Probs p;
      for (std::size_t k = 0; k < 4; ++k) p[k] = probs.at(i, k);
      out.push_back(p);
    }
  }
  return out;
}

Evaluation evaluate(const GtpNetwork& net, const LabeledDataset& data, std::size_t batch_size,
                    const std::string& model_id) {
  if (data.size() == 0) throw ValidationError("cannot evaluate on an empty dataset");
  const auto probs = predict(net, data, batch_size);
  Evaluation ev;
  ev.predictions.model_id = model_id;
  for (std::size_t i = 0; i < data.size(); ++i) {
    ev.predictions.rows.push_back({data.items[i].sample_id, probs[i], data.items[i].label});
  }
  ev.report = compute_report(probs, data.labels());
  ev.report.model = model_id;
  return ev;
}

TrainResult train(const TrainConfig& config, const LabeledDataset& train_set, const LabeledDataset& test,
                  std::ostream* progress) {
  config.validate();
  if (train_set.size() < 2) throw ValidationError("training set needs at least 2 samples");
  if (test.size() == 0) throw ValidationError("test set is empty");
  train_set.validate();
  test.validate();
  const std::size_t size = config.network.image_size;
  const LabeledDataset train_data = at_size(train_set, size);
  const LabeledDataset test_data = at_size(test, size);

  // Class counts always come from the training split.
  const ClassCounts counts = train_data.counts();
  if (config.loss == LossKind::Balanced) counts.validate();
  if (progress) {
    *progress << "class counts (train): silicosis=" << counts.n[0] << " normal=" << counts.n[1]
              << " bacterial=" << counts.n[2] << " viral=" << counts.n[3] << "\n";
  }

  GtpNetwork net(config.network, config.seed);
  RAdam optimizer(config.optimizer);
  const std::vector<std::size_t> labels = train_data.labels();

  auto batch_loss = [&](const std::vector<std::size_t>& idx, const Tensor& images, Tape& tape) {
    std::vector<std::size_t> targets;
    targets.reserve(idx.size());
    for (auto i : idx) targets.push_back(labels[i]);
    Var logits = net.forward(tape, images, Mode::Train);
    return classification_loss(config.loss, logits, targets, counts);
  };
  auto test_f1 = [&] { return macro_f1(evaluate(net, test_data, config.eval_batch_size).report.confusion); };

  TrainResult result{Checkpoint{net, counts, config.loss, config.seed}, Checkpoint{net, counts, config.loss, config.seed},
                     0, {}};

  {
    // Epoch 0: loss of the untrained network in train mode, without letting
    // these batches move the running statistics.
    const BatchNormState saved = net.batch_norm();
    std::vector<std::size_t> order(train_data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    double total = 0.0;
    const auto batches = train_batches(order, config.batch_size);
    for (const auto& idx : batches) {
      Tape tape;
      total += batch_loss(idx, batch_images(train_data, idx), tape).value()[0];
    }
    net.batch_norm() = saved;
    result.log.push_back({0, total / static_cast<double>(batches.size()), test_f1()});
  }
  if (progress) *progress << "epoch 0 train_loss " << result.log.back().train_loss << " test_macro_f1 "
                          << result.log.back().test_macro_f1 << "\n";

  double best_f1 = -1.0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order(train_data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng::derive(config.seed, kShuffleStream, epoch).shuffle(order);
    const auto batches = train_batches(std::move(order), config.batch_size);

    double total = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& idx = batches[b];
      Rng aug = Rng::derive(config.seed, kAugmentStream, (static_cast<std::uint64_t>(epoch) << 32) | b);
      std::vector<Tensor> images;
      images.reserve(idx.size());
      for (auto i : idx) {
        Tensor img = random_horizontal_flip(train_data.items[i].image, config.flip_probability, aug);
        images.push_back(random_rotation(img, config.rotation_degrees, aug));
      }
      std::vector<const Tensor*> ptrs;
      for (const auto& img : images) ptrs.push_back(&img);

      Tape tape;
      Var loss = batch_loss(idx, stack_images(ptrs), tape);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1));
      }
      net.params().zero_grads();
      tape.backward(loss);
      optimizer.step(net.params());
      total += value;
    }
    if (config.bn_recalibration) recalibrate_batch_norm(net, train_data, config.batch_size);
    const double f1 = test_f1();
    result.log.push_back({epoch, total / static_cast<double>(batches.size()), f1});
    if (progress) *progress << "epoch " << epoch << " train_loss " << result.log.back().train_loss << " test_macro_f1 "
                            << f1 << "\n";
    if (f1 > best_f1) {
      best_f1 = f1;
      result.best_epoch = epoch;
      result.best.network = net;
    }
  }
  result.final.network = net;
  return result;
}

}  // namespace gtp
