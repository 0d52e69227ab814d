#include "lccnn/lcc_io.hpp"

#include "lccnn/byte_io.hpp"

#include <fstream>
#include <iterator>

namespace lccnn {

namespace bytes {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error("write to '" + path + "' failed");
}

}  // namespace bytes

namespace {
constexpr char kMagic[4] = {'L', 'C', 'C', 'D'};
}

std::vector<std::uint8_t> serialize_decomposition(const LccDecomposition& d) {
  bytes::Writer w;
  w.raw(kMagic, 4);
  w.u32(kDecompositionVersion);
  w.u32(static_cast<std::uint32_t>(d.rows));
  w.u32(static_cast<std::uint32_t>(d.cols));
  w.u32(static_cast<std::uint32_t>(d.slice_width));
  w.u8(static_cast<std::uint8_t>(d.algorithm));
  w.u32(static_cast<std::uint32_t>(d.terms_per_row));
  w.f64(d.achieved_sqnr);
  w.u32(static_cast<std::uint32_t>(d.slices.size()));
  for (const auto& s : d.slices) {
    w.u32(static_cast<std::uint32_t>(s.col_begin));
    w.u32(static_cast<std::uint32_t>(s.col_end));
    w.u32(static_cast<std::uint32_t>(s.factors.size()));
    for (const auto& f : s.factors) {
      w.u32(static_cast<std::uint32_t>(f.out_dim));
      w.u32(static_cast<std::uint32_t>(f.in_dim));
      for (const auto& row : f.rows) {
        w.u32(static_cast<std::uint32_t>(row.size()));
        for (const auto& t : row) {
          w.i32(t.source);
          w.i32(t.exponent);
          w.i32(t.sign);
        }
      }
    }
  }
  return w.take();
}

LccDecomposition deserialize_decomposition(const std::vector<std::uint8_t>& data) {
  bytes::Reader r(data);
  char magic[4];
  r.raw(magic, 4);
  if (!std::equal(magic, magic + 4, kMagic)) throw FormatError("not an LCC decomposition (bad magic)");
  const auto version = r.u32();
  if (version != kDecompositionVersion) {
    throw FormatError("unsupported decomposition version " + std::to_string(version));
  }
  LccDecomposition d;
  d.rows = static_cast<int>(r.u32());
  d.cols = static_cast<int>(r.u32());
  d.slice_width = static_cast<int>(r.u32());
  const auto algo = r.u8();
  if (algo > 1) throw FormatError("unknown algorithm tag");
  d.algorithm = static_cast<LccAlgorithm>(algo);
  d.terms_per_row = static_cast<int>(r.u32());
  d.achieved_sqnr = r.f64();
  const auto n_slices = r.u32();
  for (std::uint32_t i = 0; i < n_slices; ++i) {
    SliceDecomposition s;
    s.rows = d.rows;
    s.col_begin = static_cast<int>(r.u32());
    s.col_end = static_cast<int>(r.u32());
    const auto n_factors = r.u32();
    for (std::uint32_t p = 0; p < n_factors; ++p) {
      FactorMatrix f;
      f.out_dim = static_cast<int>(r.u32());
      f.in_dim = static_cast<int>(r.u32());
      if (static_cast<std::size_t>(f.out_dim) > r.remaining() / 4) throw FormatError("factor row count exceeds data");
      f.rows.resize(static_cast<std::size_t>(f.out_dim));
      for (auto& row : f.rows) {
        const auto n_terms = r.u32();
        if (n_terms > r.remaining() / 12) throw FormatError("term count exceeds data");
        row.reserve(n_terms);
        for (std::uint32_t t = 0; t < n_terms; ++t) {
          PowTerm term;
          term.source = r.i32();
          term.exponent = r.i32();
          term.sign = r.i32();
          row.push_back(term);
        }
      }
      s.factors.push_back(std::move(f));
    }
    d.slices.push_back(std::move(s));
  }
  if (!r.done()) throw FormatError("trailing bytes after decomposition");
  d.validate();
  return d;
}

void save_decomposition(const LccDecomposition& d, const std::string& path) {
  bytes::write_file(path, serialize_decomposition(d));
}

LccDecomposition load_decomposition(const std::string& path) {
  return deserialize_decomposition(bytes::read_file(path));
}

}  // namespace lccnn
