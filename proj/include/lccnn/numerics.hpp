#pragma once

// Fixed-point quantization, canonically-signed-digit (CSD) encoding and the
// addition/shift cost model used as the uncompressed baseline.

#include "lccnn/types.hpp"

#include <cstdint>
#include <vector>

namespace lccnn {

struct FixedPointConfig {
  int frac_bits = 10;
  int int_bits = 6;

  /// Throws ConfigError unless frac_bits >= 0, int_bits >= 1 and the total fits in 62 bits.
  void validate() const;
  double step() const;
  /// Largest representable magnitude, 2^int_bits - 2^-frac_bits.
  double max_magnitude() const;
};

struct QuantizeResult {
  double value = 0.0;
  bool saturated = false;
};

/// Nearest multiple of 2^-frac_bits, ties away from zero. Values with
/// |v| >= 2^int_bits saturate to +-max_magnitude() and set the flag.
QuantizeResult quantize_fixed_checked(double v, const FixedPointConfig& cfg);

inline double quantize_fixed(double v, const FixedPointConfig& cfg) {
  return quantize_fixed_checked(v, cfg).value;
}

Matrix quantize_matrix(const Matrix& w, const FixedPointConfig& cfg);

struct CsdDigit {
  int exponent = 0;
  int sign = 1;  // +1 or -1

  friend bool operator==(const CsdDigit&, const CsdDigit&) = default;
};

/// Digits ordered by strictly decreasing exponent, no two adjacent.
struct CsdForm {
  std::vector<CsdDigit> digits;

  double decode() const;
  std::size_t weight() const { return digits.size(); }
  bool non_adjacent() const;
};

/// Non-adjacent form of an on-grid value. Off-grid inputs are quantized first.
CsdForm csd_encode(double v, const FixedPointConfig& cfg);

/// Same, for the integer mantissa v * 2^frac_bits.
CsdForm csd_encode_integer(std::int64_t mantissa, int frac_bits);

struct CostReport {
  std::int64_t adds = 0;    // additions and subtractions
  std::int64_t shifts = 0;  // nonzero signed-power-of-two terms

  CostReport& operator+=(const CostReport& o) {
    adds += o.adds;
    shifts += o.shifts;
    return *this;
  }
  friend bool operator==(const CostReport&, const CostReport&) = default;
};

/// Baseline cost of y = W x with every weight in CSD form: each row needs
/// (nonzero digits - 1) additions, every digit is one shift.
CostReport csd_matrix_cost(const Matrix& w, const FixedPointConfig& cfg);

/// Per-row addition counts of csd_matrix_cost.
std::vector<std::int64_t> csd_row_adds(const Matrix& w, const FixedPointConfig& cfg);

/// 10 log10(|W|_F^2 / |W - What|_F^2). Returns kInfDb when the two are equal,
/// throws Error when W is all zero.
double sqnr_db(const Matrix& w, const Matrix& approx);

}  // namespace lccnn
