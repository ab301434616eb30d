#pragma once

#include <cstdint>
#include <string>

#include "gtp/losses.hpp"
#include "gtp/network.hpp"

namespace gtp {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to rebuild a trained network for inference.
struct Checkpoint {
  GtpNetwork network;
  ClassCounts counts;
  LossKind loss = LossKind::CrossEntropy;
  std::uint64_t seed = 0;
};

/// "GTPC", u32 version, u32 length + JSON header (network config, class
/// counts, loss, seed, tensor count), then per tensor: u32 name length, name,
/// u8 rank, u32 dims, little-endian f32 values. BatchNorm running statistics
/// are stored as the tensors head.bn.running_mean / head.bn.running_var.
std::string encode_checkpoint(const Checkpoint& ckpt);
/// Validates every tensor name and shape against the network the header
/// describes; throws ParseError for malformed input.
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Rounds every parameter and running statistic to float precision, which is
/// what a save/load cycle does.
void round_to_float(GtpNetwork& net);

}  // namespace gtp
