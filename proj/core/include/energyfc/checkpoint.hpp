#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "energyfc/dataset.hpp"
#include "energyfc/nn.hpp"

namespace energyfc {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  NetworkConfig config;
  NetworkParams params;
  NormStats norm;
};

/// Versioned JSON document: header, per-layer arrays in fixed order
/// (W_ix .. W_oh, b_i .. b_o, W_hr), optional head, then normalisation.
/// Doubles use shortest round-trip decimal, so load(save(x)) is bit-exact.
std::string save_checkpoint(const Checkpoint& checkpoint);

/// Throws LoadError naming the offending field path.
Checkpoint load_checkpoint(std::string_view document);

void write_checkpoint_file(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint_file(const std::filesystem::path& path);

}  // namespace energyfc
