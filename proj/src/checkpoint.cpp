#include "lccnn/checkpoint.hpp"

#include "lccnn/byte_io.hpp"

#include <zlib.h>

#include <cstdio>
#include <sstream>

namespace lccnn {

namespace {

constexpr const char* kMagic = "lccnn-checkpoint";

void put_floats(bytes::Writer& w, const Matrix& m) {
  // row-major
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.f32(static_cast<float>(m(r, c)));
}

std::uint32_t crc(const std::vector<std::uint8_t>& b) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), b.data(), static_cast<uInt>(b.size())));
}

bool one_line(const std::string& s) { return s.find('\n') == std::string::npos && s.find('\r') == std::string::npos; }

void write_list(std::ostream& os, const std::vector<int>& v) {
  os << v.size();
  for (int i : v) os << ' ' << i;
  os << '\n';
}

class Manifest {
 public:
  explicit Manifest(std::string text) : in_(std::move(text)) {}

  std::istringstream& line(const std::string& key) {
    std::string l;
    if (!std::getline(in_, l)) throw FormatError("checkpoint: missing '" + key + "' line");
    cur_.clear();
    cur_.str(l);
    std::string k;
    cur_ >> k;
    if (k != key) throw FormatError("checkpoint: expected '" + key + "', found '" + k + "'");
    return cur_;
  }
  std::string rest(const std::string& key) {
    auto& s = line(key);
    std::string r;
    std::getline(s, r);
    if (!r.empty() && r.front() == ' ') r.erase(0, 1);
    return r;
  }
  std::vector<int> list(const std::string& key) {
    auto& s = line(key);
    std::size_t n = 0;
    if (!(s >> n)) throw FormatError("checkpoint: bad list length in '" + key + "'");
    std::vector<int> v(n);
    for (auto& x : v)
      if (!(s >> x)) throw FormatError("checkpoint: short list in '" + key + "'");
    return v;
  }
  bool peek(const std::string& key) {
    const auto pos = in_.tellg();
    std::string l;
    const bool ok = static_cast<bool>(std::getline(in_, l)) && l.rfind(key + " ", 0) == 0;
    in_.clear();
    in_.seekg(pos);
    return ok;
  }

 private:
  std::istringstream in_;
  std::istringstream cur_;
};

template <class T>
T need(std::istringstream& s, const char* what) {
  T v{};
  if (!(s >> v)) throw FormatError(std::string("checkpoint: bad ") + what);
  return v;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  if (!one_line(c.stage) || !one_line(c.provenance) || c.stage.empty() || c.stage.find(' ') != std::string::npos) {
    throw FormatError("checkpoint: stage must be one word and provenance a single line");
  }
  c.model.validate();
  bytes::Writer blob;
  for (const auto& l : c.model.layers) {
    put_floats(blob, l.weight);
    put_floats(blob, l.bias.transpose());
  }
  const auto payload = blob.take();

  std::ostringstream os;
  os << kMagic << ' ' << kCheckpointVersion << '\n';
  os << "stage " << c.stage << '\n';
  os << "seed " << c.seed << '\n';
  os << "provenance " << c.provenance << '\n';
  os << "layers " << c.model.layers.size() << '\n';
  for (const auto& l : c.model.layers) {
    os << "layer " << to_string(l.kind) << ' ' << to_string(l.activation) << ' ' << l.input_dim << ' ' << l.weight.rows()
       << ' ' << l.weight.cols() << '\n';
    if (l.kind == LayerKind::Conv) {
      os << "conv " << l.conv.in_maps << ' ' << l.conv.out_maps << ' ' << l.conv.kernel << ' ' << l.conv.input_size << '\n';
    }
    os << "pools " << l.pools.size() << '\n';
    for (const auto& p : l.pools) {
      os << "pool ";
      write_list(os, p);
    }
  }
  os << "clusters " << c.clusters.size() << '\n';
  for (const auto& [layer, members] : c.clusters) {
    os << "cluster_layer " << layer << ' ' << members.size() << '\n';
    for (const auto& m : members) {
      os << "members ";
      write_list(os, m);
    }
  }
  char hex[9];
  std::snprintf(hex, sizeof hex, "%08x", crc(payload));
  os << "blob " << payload.size() << ' ' << hex << '\n';
  os << "end\n";

  const std::string text = os.str();
  std::vector<std::uint8_t> out(text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& data) {
  const std::string marker = "\nend\n";
  const std::string head(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(data.size(), 1 << 26)));
  const auto end = head.find(marker);
  if (end == std::string::npos) throw FormatError("checkpoint: manifest terminator not found");
  const std::size_t blob_at = end + marker.size();
  Manifest m(head.substr(0, blob_at));

  auto& magic = m.line(kMagic);
  const int version = need<int>(magic, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  c.stage = m.rest("stage");
  c.seed = need<std::uint64_t>(m.line("seed"), "seed");
  c.provenance = m.rest("provenance");
  const auto n_layers = need<std::size_t>(m.line("layers"), "layer count");

  struct Shape {
    Eigen::Index rows, cols;
  };
  std::vector<Shape> shapes;
  for (std::size_t i = 0; i < n_layers; ++i) {
    auto& s = m.line("layer");
    const auto kind = need<std::string>(s, "layer kind");
    const auto act = need<std::string>(s, "activation");
    Layer l;
    l.kind = kind == "conv" ? LayerKind::Conv : LayerKind::Dense;
    if (kind != "conv" && kind != "dense") throw FormatError("checkpoint: unknown layer kind '" + kind + "'");
    if (act != "relu" && act != "identity") throw FormatError("checkpoint: unknown activation '" + act + "'");
    l.activation = act == "relu" ? Activation::ReLU : Activation::Identity;
    l.input_dim = need<int>(s, "input dim");
    const auto rows = need<Eigen::Index>(s, "rows");
    const auto cols = need<Eigen::Index>(s, "cols");
    if (rows < 0 || cols < 0) throw FormatError("checkpoint: negative shape");
    shapes.push_back({rows, cols});
    if (l.kind == LayerKind::Conv) {
      auto& cs = m.line("conv");
      l.conv.in_maps = need<int>(cs, "conv shape");
      l.conv.out_maps = need<int>(cs, "conv shape");
      l.conv.kernel = need<int>(cs, "conv shape");
      l.conv.input_size = need<int>(cs, "conv shape");
    }
    const auto n_pools = need<std::size_t>(m.line("pools"), "pool count");
    for (std::size_t p = 0; p < n_pools; ++p) l.pools.push_back(m.list("pool"));
    c.model.layers.push_back(std::move(l));
  }
  const auto n_clusters = need<std::size_t>(m.line("clusters"), "cluster count");
  for (std::size_t i = 0; i < n_clusters; ++i) {
    auto& s = m.line("cluster_layer");
    const int layer = need<int>(s, "cluster layer");
    const auto count = need<std::size_t>(s, "cluster size");
    auto& members = c.clusters[layer];
    for (std::size_t k = 0; k < count; ++k) members.push_back(m.list("members"));
  }
  auto& b = m.line("blob");
  const auto blob_size = need<std::size_t>(b, "blob size");
  const auto hex = need<std::string>(b, "blob checksum");
  m.line("end");

  std::size_t expected = 0;
  for (const auto& s : shapes) expected += 4 * static_cast<std::size_t>(s.rows * s.cols + s.rows);
  if (blob_size != expected) throw FormatError("checkpoint: blob size does not match the layer shapes");
  const std::vector<std::uint8_t> payload(data.begin() + static_cast<std::ptrdiff_t>(blob_at), data.end());
  char actual[9];
  std::snprintf(actual, sizeof actual, "%08x", crc(payload));
  if (payload.size() != blob_size || hex != actual) {
    throw ChecksumError("checkpoint: parameter blob checksum mismatch (expected " + hex + ", " +
                        std::to_string(blob_size) + " bytes; found " + actual + ", " + std::to_string(payload.size()) +
                        " bytes)");
  }
  bytes::Reader r(payload);
  for (std::size_t i = 0; i < n_layers; ++i) {
    auto& l = c.model.layers[i];
    l.weight.resize(shapes[i].rows, shapes[i].cols);
    for (Eigen::Index row = 0; row < shapes[i].rows; ++row)
      for (Eigen::Index col = 0; col < shapes[i].cols; ++col) l.weight(row, col) = r.f32();
    l.bias.resize(shapes[i].rows);
    for (Eigen::Index row = 0; row < shapes[i].rows; ++row) l.bias(row) = r.f32();
  }
  try {
    c.model.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint: inconsistent model: ") + e.what());
  }
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) { bytes::write_file(path, serialize_checkpoint(c)); }

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(bytes::read_file(path)); }

}  // namespace lccnn
