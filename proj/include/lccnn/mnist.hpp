#pragma once

#include "lccnn/nncore.hpp"

#include <string>

namespace lccnn {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Reads an IDX image/label pair (big-endian headers). Pixels are scaled to
/// [0, 1] and flattened row-major; limit > 0 keeps only the first records.
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path, int limit = 0);

struct MnistPaths {
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
};

/// Standard file names under root.
MnistPaths mnist_paths(const std::string& root);

/// Resolves the dataset root: the explicit argument if non-empty, else $LCCNN_DATA.
std::string resolve_data_root(const std::string& explicit_root);

}  // namespace lccnn
