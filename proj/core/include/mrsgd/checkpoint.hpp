#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "mrsgd/network.hpp"
#include "mrsgd/optimizer.hpp"
#include "mrsgd/partition.hpp"

namespace mrsgd {

inline constexpr std::uint32_t checkpoint_version = 1;

struct Checkpoint {
  Network network;
  std::optional<OptState> state;
  std::optional<Partition> partition;
};

/// Writes a versioned little-endian binary checkpoint (see docs/checkpoint_format.md).
void save_checkpoint(const std::filesystem::path& path, const Network& net, const OptState* state = nullptr,
                     const Partition* partition = nullptr);

/// Reads a checkpoint; restored values are bit-identical to the saved ones.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mrsgd
