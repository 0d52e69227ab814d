#pragma once

// Model checkpoints: a line-oriented text manifest followed by little-endian
// float32 parameter blobs. Layout in docs/FORMATS.md.

#include "lccnn/nncore.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace lccnn {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  std::string stage = "baseline";
  std::uint64_t seed = 0;
  std::string provenance;
  /// Per layer: clusters of pre-sharing column indices.
  std::map<int, std::vector<std::vector<int>>> clusters;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c);
/// Throws FormatError on a malformed manifest or version mismatch and
/// ChecksumError when the parameter blob is short, long or corrupted.
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace lccnn
