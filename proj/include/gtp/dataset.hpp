#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gtp/losses.hpp"
#include "gtp/tensor.hpp"

namespace gtp {

struct Sample {
  std::string sample_id;
  Tensor image;  // [3 x h x w], values in [0, 1]
  std::size_t label = 0;
};

struct LabeledDataset {
  std::vector<Sample> items;

  std::size_t size() const noexcept { return items.size(); }
  /// Instances per class (zeros allowed; ClassCounts::validate rejects them).
  ClassCounts counts() const;
  std::vector<std::size_t> labels() const;
  /// Throws ValidationError for bad labels, non-finite or out-of-range
  /// pixels, mixed image sizes or duplicate ids.
  void validate() const;
};

/// 8-bit binary PGM (P5, maxval 255) as a [3 x h x w] tensor, the gray
/// channel replicated and scaled by 1/255.
Tensor decode_pgm(const std::string& bytes, const std::string& name = "image");
Tensor read_pgm(const std::string& path);
/// Channel mean quantized to 8 bits.
std::string encode_pgm(const Tensor& image);
void write_pgm(const Tensor& image, const std::string& path);

/// Reads `labels_csv` (header filename,class; class names case-insensitive)
/// and every listed PGM relative to `directory`, in file order. The sample id
/// is the file name without extension.
LabeledDataset load_image_dataset(const std::string& directory, const std::string& labels_csv);
/// Writes <id>.pgm per sample plus labels.csv into `directory`.
void save_image_dataset(const LabeledDataset& data, const std::string& directory);

/// Resizes every image to target x target (no-op when already that size).
LabeledDataset resized(const LabeledDataset& data, std::size_t target);

inline constexpr std::size_t kMinSamplesPerClass = 5;

/// Training share of a class with n samples: round(fraction * n), halves up.
std::size_t split_train_count(std::size_t n, double train_fraction = 0.8);

/// Per class, shuffles with a generator derived from (seed, class) and sends
/// split_train_count(n) samples to train and the rest to test. Both halves
/// keep the original dataset order. Throws ConfigError when a class has fewer
/// than kMinSamplesPerClass samples.
std::pair<LabeledDataset, LabeledDataset> stratified_split(const LabeledDataset& data, std::uint64_t seed,
                                                           double train_fraction = 0.8);

}  // namespace gtp
