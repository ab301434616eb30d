#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "gtp/autodiff.hpp"

namespace gtp {

/// Per-class instance counts n_k of the training split.
struct ClassCounts {
  std::array<std::uint64_t, 4> n{};

  /// Throws ConfigError if any count is zero.
  void validate() const;
  std::uint64_t total() const noexcept;
  /// [4] tensor of log n_k.
  Tensor log_counts() const;
};

enum class LossKind { CrossEntropy, Balanced };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& text);

/// Mean over the batch of -log softmax(z)_target, via max-shifted
/// log-sum-exp. logits [b x C], targets in [0, C).
Var cross_entropy(Var logits, std::span<const std::size_t> targets);

/// Mean over the batch of -log(n_k e^{z_k} / sum_j n_j e^{z_j}), computed as
/// cross_entropy(z + log n, target).
Var balanced_cross_entropy(Var logits, std::span<const std::size_t> targets, const ClassCounts& counts);

Var classification_loss(LossKind kind, Var logits, std::span<const std::size_t> targets, const ClassCounts& counts);

}  // namespace gtp
