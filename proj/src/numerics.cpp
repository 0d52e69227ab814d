#include "lccnn/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace lccnn {

void FixedPointConfig::validate() const {
  if (frac_bits < 0 || int_bits < 1 || frac_bits + int_bits > 62) {
    throw ConfigError("invalid fixed-point config: frac_bits=" + std::to_string(frac_bits) +
                      " int_bits=" + std::to_string(int_bits));
  }
}

double FixedPointConfig::step() const { return std::ldexp(1.0, -frac_bits); }

double FixedPointConfig::max_magnitude() const {
  return std::ldexp(1.0, int_bits) - step();
}

QuantizeResult quantize_fixed_checked(double v, const FixedPointConfig& cfg) {
  if (std::abs(v) >= std::ldexp(1.0, cfg.int_bits)) {
    return {std::copysign(cfg.max_magnitude(), v), true};
  }
  // std::round rounds half away from zero.
  const double scaled = std::round(std::ldexp(v, cfg.frac_bits));
  return {std::ldexp(scaled, -cfg.frac_bits), false};
}

Matrix quantize_matrix(const Matrix& w, const FixedPointConfig& cfg) {
  return w.unaryExpr([&cfg](double v) { return quantize_fixed(v, cfg); });
}

double CsdForm::decode() const {
  double v = 0.0;
  for (const auto& d : digits) v += d.sign * std::ldexp(1.0, d.exponent);
  return v;
}

bool CsdForm::non_adjacent() const {
  for (std::size_t i = 1; i < digits.size(); ++i) {
    if (digits[i - 1].exponent - digits[i].exponent < 2) return false;
  }
  return true;
}

CsdForm csd_encode_integer(std::int64_t mantissa, int frac_bits) {
  // Non-adjacent form: consume the integer from the least significant end,
  // choosing digit 2 - (n mod 4) whenever n is odd.
  CsdForm out;
  std::int64_t n = mantissa;
  int position = 0;
  while (n != 0) {
    if (n & 1) {
      const std::int64_t mod4 = ((n % 4) + 4) % 4;
      const int digit = mod4 == 1 ? 1 : -1;
      out.digits.push_back({position - frac_bits, digit});
      n -= digit;
    }
    n /= 2;
    ++position;
  }
  std::reverse(out.digits.begin(), out.digits.end());
  return out;
}

CsdForm csd_encode(double v, const FixedPointConfig& cfg) {
  const double q = quantize_fixed(v, cfg);
  const auto mantissa = static_cast<std::int64_t>(std::llround(std::ldexp(q, cfg.frac_bits)));
  return csd_encode_integer(mantissa, cfg.frac_bits);
}

std::vector<std::int64_t> csd_row_adds(const Matrix& w, const FixedPointConfig& cfg) {
  std::vector<std::int64_t> adds(static_cast<std::size_t>(w.rows()), 0);
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    std::int64_t digits = 0;
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      digits += static_cast<std::int64_t>(csd_encode(w(r, c), cfg).weight());
    }
    adds[static_cast<std::size_t>(r)] = std::max<std::int64_t>(0, digits - 1);
  }
  return adds;
}

CostReport csd_matrix_cost(const Matrix& w, const FixedPointConfig& cfg) {
  CostReport cost;
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    std::int64_t digits = 0;
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      digits += static_cast<std::int64_t>(csd_encode(w(r, c), cfg).weight());
    }
    cost.shifts += digits;
    cost.adds += std::max<std::int64_t>(0, digits - 1);
  }
  return cost;
}

double sqnr_db(const Matrix& w, const Matrix& approx) {
  if (w.rows() != approx.rows() || w.cols() != approx.cols()) {
    throw ShapeError("sqnr_db: shape mismatch");
  }
  const double signal = w.squaredNorm();
  if (signal == 0.0) throw Error("sqnr_db: reference matrix is zero");
  const double noise = (w - approx).squaredNorm();
  if (noise == 0.0) return kInfDb;
  return 10.0 * std::log10(signal / noise);
}

}  // namespace lccnn
