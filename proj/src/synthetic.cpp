#include "gtp/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>

#include "gtp/classes.hpp"
#include "gtp/error.hpp"
#include "gtp/rng.hpp"

namespace gtp {

void SynthConfig::validate() const {
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] == 0) throw ConfigError("synthetic count for " + class_name(k) + " must be at least 1");
  }
  if (image_size < 16) throw ConfigError("synthetic image_size must be at least 16");
  if (!(noise >= 0.0) || !(signal > 0.0)) throw ConfigError("synthetic noise must be >= 0 and signal > 0");
  if (nodules_min == 0 || nodules_min > nodules_max) throw ConfigError("synthetic nodule range must satisfy 1 <= min <= max");
  if (!(nodule_radius > 0.0) || !(blob_sigma > 0.0) || !(streak_frequency > 0.0)) {
    throw ConfigError("synthetic shape parameters must be positive");
  }
}

nlohmann::json SynthConfig::to_json() const {
  return {{"counts", counts},
          {"image_size", image_size},
          {"noise", noise},
          {"signal", signal},
          {"nodules", {nodules_min, nodules_max}},
          {"nodule_radius", nodule_radius},
          {"blob_sigma", blob_sigma},
          {"streak_frequency", streak_frequency},
          {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"counts",        "image_size", "noise",      "signal",          "nodules",
                                           "nodule_radius", "blob_sigma", "seed",       "streak_frequency"};
  if (!j.is_object()) throw ConfigError("synthetic config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown synthetic config key '" + key + "'");
  }
  SynthConfig c;
  try {
    c.counts = j.value("counts", c.counts);
    c.image_size = j.value("image_size", c.image_size);
    c.noise = j.value("noise", c.noise);
    c.signal = j.value("signal", c.signal);
    if (j.contains("nodules")) {
      const auto range = j.at("nodules").get<std::array<std::size_t, 2>>();
      c.nodules_min = range[0];
      c.nodules_max = range[1];
    }
    c.nodule_radius = j.value("nodule_radius", c.nodule_radius);
    c.blob_sigma = j.value("blob_sigma", c.blob_sigma);
    c.streak_frequency = j.value("streak_frequency", c.streak_frequency);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid synthetic config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Smooth background shared by every class: a base level plus two random
// low-frequency plane waves.
void draw_background(std::vector<double>& px, std::size_t n, Rng& rng) {
  const double base = rng.uniform(0.25, 0.45);
  std::fill(px.begin(), px.end(), base);
  for (int wave = 0; wave < 2; ++wave) {
    const double amp = rng.uniform(0.03, 0.08);
    const double angle = rng.uniform(0.0, kTwoPi);
    const double freq = rng.uniform(0.5, 1.5) / static_cast<double>(n);
    const double phase = rng.uniform(0.0, kTwoPi);
    const double fx = std::cos(angle) * freq, fy = std::sin(angle) * freq;
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x)
        px[y * n + x] += amp * std::sin(kTwoPi * (fx * static_cast<double>(x) + fy * static_cast<double>(y)) + phase);
  }
}

void add_gaussian(std::vector<double>& px, std::size_t n, double cx, double cy, double sigma, double amp) {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      px[y * n + x] += amp * std::exp(-(dx * dx + dy * dy) * inv);
    }
}

void draw_class(std::vector<double>& px, std::size_t n, std::size_t label, const SynthConfig& c, Rng& rng) {
  const double size = static_cast<double>(n);
  switch (label) {
    case 0: {  // silicosis
      const auto count = c.nodules_min + static_cast<std::size_t>(rng.below(c.nodules_max - c.nodules_min + 1));
      for (std::size_t k = 0; k < count; ++k) {
        const double cx = rng.uniform(0.15, 0.85) * size, cy = rng.uniform(0.15, 0.85) * size;
        add_gaussian(px, n, cx, cy, c.nodule_radius * rng.uniform(0.8, 1.2), c.signal * rng.uniform(0.8, 1.2));
      }
      break;
    }
    case 1:  // normal
      break;
    case 2: {  // bacterial
      const double cx = rng.uniform(0.3, 0.7) * size, cy = rng.uniform(0.3, 0.7) * size;
      add_gaussian(px, n, cx, cy, c.blob_sigma * size * rng.uniform(0.8, 1.25), c.signal * rng.uniform(0.8, 1.2));
      break;
    }
    case 3: {  // viral
      const double angle = rng.uniform(0.0, std::numbers::pi);
      const double freq = c.streak_frequency * rng.uniform(0.85, 1.15);
      const double phase = rng.uniform(0.0, kTwoPi);
      const double amp = 0.5 * c.signal * rng.uniform(0.8, 1.2);
      const double fx = std::cos(angle) * freq, fy = std::sin(angle) * freq;
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
          const double s = std::sin(kTwoPi * (fx * static_cast<double>(x) + fy * static_cast<double>(y)) + phase);
          px[y * n + x] += amp * (s + 1.0) * 0.5;
        }
      break;
    }
    default:
      throw IndexError("class index out of range");
  }
}

}  // namespace

LabeledDataset generate_synthetic(const SynthConfig& config) {
  config.validate();
  const std::size_t n = config.image_size;
  LabeledDataset data;
  std::size_t index = 0;
  std::vector<double> px(n * n);
  for (std::size_t label = 0; label < config.counts.size(); ++label) {
    for (std::size_t k = 0; k < config.counts[label]; ++k, ++index) {
      Rng rng = Rng::derive(config.seed, /*stream=*/0x5e7, index);
      draw_background(px, n, rng);
      draw_class(px, n, label, config, rng);
      Tensor image({3, n, n});
      for (std::size_t i = 0; i < n * n; ++i) {
        const double v = std::clamp(px[i] + config.noise * rng.normal(), 0.0, 1.0);
        image[i] = image[n * n + i] = image[2 * n * n + i] = v;
      }
      char id[64];
      std::snprintf(id, sizeof id, "%s_%05zu", std::string(kClassNames[label]).c_str(), index);
      data.items.push_back({id, std::move(image), label});
    }
  }
  // Interleave the classes: evaluation batches follow file order, and a
  // class-sorted file would give single-class batch graphs at test time.
  Rng::derive(config.seed, /*stream=*/0x0de7).shuffle(data.items);
  return data;
}

}  // namespace gtp
