#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "gtp/tensor.hpp"

namespace gtp {

struct RAdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

/// Length of the approximated simple moving average after t steps,
/// rho_inf - 2 t beta2^t / (1 - beta2^t).
double radam_rho(std::uint64_t t, double beta2);
/// Variance rectification term r_t, or nullopt while rho_t <= 4 (the
/// un-adapted momentum step is used then).
std::optional<double> radam_rectification(std::uint64_t t, double beta2);

/// Rectified Adam with zero-initialized moments keyed by parameter name.
class RAdam {
 public:
  explicit RAdam(RAdamConfig config = {});

  /// One update from the gradients stored in `params`, which are zeroed
  /// afterwards. Parameters without a gradient buffer count as zero
  /// gradient; throws UsageError if no parameter has one.
  void step(ParameterStore& params);

  std::uint64_t steps() const noexcept { return t_; }
  const RAdamConfig& config() const noexcept { return config_; }
  /// Whether the last step used the rectified (adaptive) branch.
  bool last_step_rectified() const noexcept { return last_rectified_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };

  RAdamConfig config_;
  std::uint64_t t_ = 0;
  bool last_rectified_ = false;
  std::unordered_map<std::string, Moments> moments_;
};

}  // namespace gtp
