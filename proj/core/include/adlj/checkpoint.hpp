#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "adlj/adam.hpp"
#include "adlj/config.hpp"
#include "adlj/model.hpp"

namespace adlj {

inline constexpr char kCheckpointMagic[8] = {'A', 'D', 'L', 'J', 'E', 'P', 'A', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to continue a run: the step counter together with the
/// config seed is the whole RNG state, since every stream is keyed by
/// (seed, epoch, scene).
struct Checkpoint {
  TrainConfig config;
  std::uint64_t step = 0;
  ModelState state;
  Adam optimizer;
};

std::vector<std::byte> encode_checkpoint(const Checkpoint& checkpoint);
/// Throws FormatError (with byte offset) on bad magic, version, truncation,
/// or a tensor directory that does not match the config's model shapes.
Checkpoint decode_checkpoint(std::span<const std::byte> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Adam configured from the run's config and attached to the trainable tensors.
Adam make_optimizer(const TrainConfig& config, ModelState& state);

}  // namespace adlj
