#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

#include "json.hpp"

#include "gtp/dataset.hpp"

namespace gtp {

/// Imbalanced four-class image set. Every image is a smooth random field
/// plus Gaussian pixel noise; classes differ in what is drawn on top:
///   silicosis  many small bright nodules
///   normal     nothing
///   bacterial  one large diffuse blob
///   viral      an oriented streak texture
struct SynthConfig {
  /// Totals per class (silicosis, normal, bacterial, viral); a 4:1 split of
  /// the defaults gives train 86/249/444/239 and test 21/62/111/60.
  std::array<std::size_t, 4> counts{107, 311, 555, 299};
  std::size_t image_size = 32;
  double noise = 0.08;         // pixel noise standard deviation
  double signal = 0.35;        // peak amplitude of the class pattern
  std::size_t nodules_min = 6;
  std::size_t nodules_max = 12;
  double nodule_radius = 1.2;  // in pixels
  double blob_sigma = 0.18;    // fraction of the image side
  double streak_frequency = 0.18;  // cycles per pixel
  std::uint64_t seed = 0;

  /// Throws ConfigError for zero counts, size < 16 or invalid ranges.
  void validate() const;
  nlohmann::json to_json() const;
  /// Accepts the keys of to_json(); only counts, image_size, noise and seed
  /// are needed, the rest keep their defaults. Unknown keys are rejected.
  static SynthConfig from_json(const nlohmann::json& j);
};

/// Deterministic in the config: image i only depends on (seed, i). Ids are
/// "<class>_<nnnnn>" numbered by class; the returned order is a seeded
/// shuffle so classes are interleaved.
LabeledDataset generate_synthetic(const SynthConfig& config);

}  // namespace gtp
