#include "lccnn/numerics.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace lccnn;

namespace {
FixedPointConfig fp(int frac, int intb = 6) { return FixedPointConfig{frac, intb}; }

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}
}  // namespace

TEST_CASE("quantize_fixed rounds to the grid") {
  CHECK(quantize_fixed(0.375, fp(3)) == 0.375);
  CHECK(quantize_fixed(0.0, fp(3)) == 0.0);
  CHECK(quantize_fixed(0.0, fp(0, 1)) == 0.0);

  // Nearest grid point found by scanning every multiple of 2^-2 in range.
  double nearest = 0.0;
  for (int m = -256; m <= 256; ++m) {
    const double g = m * 0.25;
    if (std::abs(g - 0.3) < std::abs(nearest - 0.3)) nearest = g;
  }
  CHECK(nearest == 0.25);
  CHECK(quantize_fixed(0.3, fp(2)) == nearest);
}

TEST_CASE("quantize_fixed ties round away from zero") {
  CHECK(quantize_fixed(0.125, fp(2)) == 0.25);
  CHECK(quantize_fixed(-0.125, fp(2)) == -0.25);
  CHECK(quantize_fixed(0.375, fp(2)) == 0.5);
}

TEST_CASE("quantize_fixed saturates on overflow") {
  const auto cfg = fp(2, 3);
  auto r = quantize_fixed_checked(9.0, cfg);
  CHECK(r.saturated);
  CHECK(r.value == 7.75);
  r = quantize_fixed_checked(-8.0, cfg);
  CHECK(r.saturated);
  CHECK(r.value == -7.75);
  CHECK_FALSE(quantize_fixed_checked(7.8, cfg).saturated);
}

TEST_CASE("quantize_fixed is idempotent and monotone") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  const auto cfg = fp(5, 5);
  for (int i = 0; i < 2000; ++i) {
    const double a = u(rng);
    const double b = u(rng);
    const double qa = quantize_fixed(a, cfg);
    CHECK(quantize_fixed(qa, cfg) == qa);
    if (a <= b) CHECK(qa <= quantize_fixed(b, cfg));
  }
}

TEST_CASE("FixedPointConfig validation") {
  CHECK_THROWS_AS(fp(-1).validate(), ConfigError);
  CHECK_THROWS_AS(fp(2, 0).validate(), ConfigError);
  CHECK_THROWS_AS(fp(40, 23).validate(), ConfigError);
  CHECK_NOTHROW(fp(10, 6).validate());
}

TEST_CASE("csd_encode examples") {
  CHECK(csd_encode(0.0, fp(4)).digits.empty());

  const auto seven = csd_encode(7.0, fp(0));
  REQUIRE(seven.digits.size() == 2);
  CHECK(seven.digits[0] == CsdDigit{3, 1});
  CHECK(seven.digits[1] == CsdDigit{0, -1});
  // Exhaustive search over signed-digit strings with exponents in [-4, 4].
  CHECK(oracle::min_signed_digits(7 * 16, 9) == 2);

  const auto w = csd_encode(0.375, fp(3));
  REQUIRE(w.digits.size() == 2);
  CHECK(w.digits[0] == CsdDigit{-1, 1});
  CHECK(w.digits[1] == CsdDigit{-3, -1});
}

TEST_CASE("csd_encode decodes exactly with minimal non-adjacent digits") {
  const auto cfg = fp(4, 5);
  const auto table = oracle::min_signed_digit_table(cfg.frac_bits + cfg.int_bits);
  const std::int64_t offset = std::int64_t{1} << (cfg.frac_bits + cfg.int_bits + 1);
  const std::int64_t limit = (std::int64_t{1} << (cfg.frac_bits + cfg.int_bits)) - 1;
  for (std::int64_t m = -limit; m <= limit; ++m) {
    const double v = std::ldexp(static_cast<double>(m), -cfg.frac_bits);
    const auto form = csd_encode(v, cfg);
    REQUIRE(form.decode() == v);
    REQUIRE(form.non_adjacent());
    REQUIRE(static_cast<int>(form.weight()) == table[static_cast<std::size_t>(m + offset)]);
  }
}

TEST_CASE("csd_matrix_cost") {
  auto c = csd_matrix_cost(mat({{2, 0.375}, {3.75, 1}}), fp(10));
  CHECK(c.adds == 4);
  CHECK(c.shifts == 6);

  c = csd_matrix_cost(Matrix::Zero(3, 4), fp(10));
  CHECK(c.adds == 0);
  CHECK(c.shifts == 0);

  c = csd_matrix_cost(Matrix::Identity(2, 2), fp(10));
  CHECK(c.adds == 0);
  CHECK(c.shifts == 2);
}

TEST_CASE("csd_matrix_cost is row separable") {
  const Matrix a = oracle::gaussian(5, 7, 11);
  const Matrix b = oracle::gaussian(3, 7, 12);
  Matrix stacked(8, 7);
  stacked << a, b;
  auto sum = csd_matrix_cost(a, fp(10));
  sum += csd_matrix_cost(b, fp(10));
  CHECK(csd_matrix_cost(stacked, fp(10)) == sum);
}

TEST_CASE("csd cost invariants") {
  const Matrix w = oracle::gaussian(6, 6, 3);
  const auto c = csd_matrix_cost(w, fp(10));
  CHECK(c.adds <= c.shifts);
  const auto rows = csd_row_adds(w, fp(10));
  std::int64_t total = 0;
  for (auto r : rows) total += r;
  CHECK(total == c.adds);
}

TEST_CASE("sqnr_db") {
  const Matrix w = mat({{1, 1}});
  CHECK(std::isinf(sqnr_db(w, w)));
  CHECK(sqnr_db(w, Matrix::Zero(1, 2)) == doctest::Approx(0.0));
  const double expected = 10.0 * std::log10(2.0 / 0.01);
  CHECK(sqnr_db(w, mat({{1, 0.9}})) == doctest::Approx(expected).epsilon(1e-9));
  CHECK(expected == doctest::Approx(23.0103).epsilon(1e-5));
  CHECK_THROWS_AS(sqnr_db(Matrix::Zero(2, 2), Matrix::Zero(2, 2)), Error);
  CHECK_THROWS_AS(sqnr_db(w, Matrix::Zero(2, 1)), ShapeError);
}
