#pragma once

// Binary serialization of LccDecomposition. Layout (all little-endian):
//
//   magic      "LCCD" (4 bytes)
//   version    u32 = 1
//   rows, cols, slice_width                  u32 each
//   algorithm  u8 (0 = FP, 1 = FS)
//   terms_per_row                            u32
//   achieved_sqnr                            f64 (IEEE-754 bits, +inf allowed)
//   slice_count                              u32
//   per slice:   col_begin, col_end, factor_count          u32 each
//     per factor: out_dim, in_dim                          u32 each
//       per row: term_count u32, then term_count x (source i32, exponent i32, sign i32)

#include "lccnn/lcc.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace lccnn {

inline constexpr std::uint32_t kDecompositionVersion = 1;

std::vector<std::uint8_t> serialize_decomposition(const LccDecomposition& d);
LccDecomposition deserialize_decomposition(const std::vector<std::uint8_t>& bytes);

void save_decomposition(const LccDecomposition& d, const std::string& path);
LccDecomposition load_decomposition(const std::string& path);

}  // namespace lccnn
