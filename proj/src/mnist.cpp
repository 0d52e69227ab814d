#include "lccnn/mnist.hpp"

#include "lccnn/byte_io.hpp"

#include <cstdlib>

namespace lccnn {

namespace {

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  if (b.size() < at + 4) throw FormatError("IDX: truncated header");
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

}  // namespace

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path, int limit) {
  const auto img = bytes::read_file(images_path);
  const auto lab = bytes::read_file(labels_path);
  if (be32(img, 0) != kIdxImageMagic) throw FormatError("IDX: bad image magic in '" + images_path + "'");
  if (be32(lab, 0) != kIdxLabelMagic) throw FormatError("IDX: bad label magic in '" + labels_path + "'");
  const std::uint32_t count = be32(img, 4);
  const std::uint32_t rows = be32(img, 8);
  const std::uint32_t cols = be32(img, 12);
  const std::uint32_t label_count = be32(lab, 4);
  if (count != label_count) throw FormatError("IDX: image and label counts differ");
  const std::size_t pixels = std::size_t{rows} * cols;
  if (img.size() != 16 + pixels * count) throw FormatError("IDX: image file length does not match header");
  if (lab.size() != 8 + std::size_t{count}) throw FormatError("IDX: label file length does not match header");

  const std::size_t n = limit > 0 ? std::min<std::size_t>(count, static_cast<std::size_t>(limit)) : count;
  Dataset d;
  d.features.resize(static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(n));
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < pixels; ++p) {
      d.features(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i)) = img[16 + i * pixels + p] / 255.0;
    }
    const int label = lab[8 + i];
    if (label > 9) throw FormatError("IDX: label out of range");
    d.labels[i] = label;
  }
  return d;
}

MnistPaths mnist_paths(const std::string& root) {
  const std::string r = root.empty() || root.back() == '/' ? root : root + "/";
  return {r + "train-images-idx3-ubyte", r + "train-labels-idx1-ubyte", r + "t10k-images-idx3-ubyte",
          r + "t10k-labels-idx1-ubyte"};
}

std::string resolve_data_root(const std::string& explicit_root) {
  if (!explicit_root.empty()) return explicit_root;
  if (const char* env = std::getenv("LCCNN_DATA")) return env;
  return {};
}

}  // namespace lccnn
