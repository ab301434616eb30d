#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gtp/checkpoint.hpp"
#include "gtp/dataset.hpp"
#include "gtp/ensemble.hpp"
#include "gtp/losses.hpp"
#include "gtp/metrics.hpp"
#include "gtp/network.hpp"
#include "gtp/radam.hpp"

namespace gtp {

struct TrainConfig {
  NetworkConfig network;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::size_t eval_batch_size = 32;
  LossKind loss = LossKind::Balanced;
  RAdamConfig optimizer;
  double flip_probability = 0.5;
  double rotation_degrees = 15.0;
  std::uint64_t seed = 0;
  /// Re-estimate the BatchNorm running statistics with frozen weights after
  /// every epoch (see recalibrate_batch_norm).
  bool bn_recalibration = true;

  /// Throws ConfigError; batch_size < 2 is rejected (train-mode BatchNorm).
  void validate() const;
  nlohmann::json to_json() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 0 is the untrained network
  double train_loss = 0.0;
  double test_macro_f1 = 0.0;
};

struct TrainResult {
  Checkpoint final;
  Checkpoint best;  // highest test macro-F1, earliest epoch on ties
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> log;
};

/// Replaces the running statistics by the average over consecutive train-mode
/// batches of `data` (dataset order, no augmentation) of the batch mean and
/// the unbiased batch variance. Parameters are not touched. No-op without
/// graph blocks.
void recalibrate_batch_norm(GtpNetwork& net, const LabeledDataset& data, std::size_t batch_size);

/// CSV epoch,train_loss,test_macro_f1.
std::string format_epoch_log(const std::vector<EpochRecord>& log);

/// Mini-batch training with RAdam. Each epoch visits the training set in a
/// permutation derived from (seed, epoch); each batch is augmented with a
/// generator derived from (seed, epoch, batch). A final batch of one sample
/// is dropped. After every epoch the network is evaluated on `test`; the
/// epoch-0 row is measured before any update. Images are resized to the
/// network's image size first. Throws NumericError with epoch/batch
/// coordinates on a non-finite loss. Progress goes to `progress` if set.
TrainResult train(const TrainConfig& config, const LabeledDataset& train_set, const LabeledDataset& test,
                  std::ostream* progress = nullptr);

struct Evaluation {
  PredictionSet predictions;
  MetricsReport report;
};

/// Softmax probabilities [b x 4] for consecutive eval-mode batches of
/// `batch_size` samples in dataset order (the last may be smaller).
std::vector<Probs> predict(const GtpNetwork& net, const LabeledDataset& data, std::size_t batch_size);
Evaluation evaluate(const GtpNetwork& net, const LabeledDataset& data, std::size_t batch_size,
                    const std::string& model_id = "model");

}  // namespace gtp
