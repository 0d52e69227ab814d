#include "lccnn/adder_program.hpp"
#include "lccnn/lcc.hpp"
#include "lccnn/lcc_io.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace lccnn;

namespace {

Matrix eq2() {
  Matrix w(2, 2);
  w << 2, 0.375, 3.75, 1;
  return w;
}

LccDecomposition identity_decomposition(int n) {
  LccDecomposition d;
  d.rows = n;
  d.cols = n;
  d.slice_width = n;
  d.algorithm = LccAlgorithm::FP;
  d.terms_per_row = 2;
  SliceDecomposition s;
  s.rows = n;
  s.col_end = n;
  s.factors.push_back(FactorMatrix::identity(n));
  d.slices.push_back(s);
  return d;
}

FpOptions fp_exact(int s = 2) {
  FpOptions o;
  o.terms_per_row = s;
  return o;
}

FpOptions fp_fixed(int s, int p) {
  FpOptions o;
  o.terms_per_row = s;
  o.max_factors = p;
  return o;
}

FsOptions fs_target(double db) {
  FsOptions o;
  o.target.target_db = db;
  return o;
}

FsOptions fs_match(int frac_bits) {
  FsOptions o;
  o.target.match_baseline = FixedPointConfig{frac_bits, 6};
  return o;
}

// Counts additions by walking factor rows, independently of count_additions().
std::int64_t bookkeeping_adds(const LccDecomposition& d) {
  std::int64_t adds = 0;
  std::vector<int> live_slices(static_cast<std::size_t>(d.rows), 0);
  for (const auto& s : d.slices) {
    for (const auto& f : s.factors) {
      for (const auto& row : f.rows) {
        if (row.size() > 1) adds += static_cast<std::int64_t>(row.size()) - 1;
      }
    }
    if (s.factors.empty()) continue;
    for (int r = 0; r < d.rows; ++r) live_slices[static_cast<std::size_t>(r)] += !s.factors.back().rows[static_cast<std::size_t>(r)].empty();
  }
  for (int c : live_slices) adds += c > 1 ? c - 1 : 0;
  return adds;
}

}  // namespace

TEST_CASE("slice_matrix") {
  const Matrix w784 = Matrix::Zero(3, 784);
  CHECK(slice_matrix(w784, 4).size() == (784 + 3) / 4);
  CHECK(slice_matrix(w784, 4).size() == 196);

  const Matrix w2 = oracle::gaussian(3, 2, 1);
  auto s = slice_matrix(w2, 8);
  REQUIRE(s.size() == 1);
  CHECK(s[0].block == w2);

  const Matrix w9 = oracle::gaussian(2, 9, 2);
  s = slice_matrix(w9, 4);
  REQUIRE(s.size() == 3);
  CHECK(s[0].block.cols() == 4);
  CHECK(s[1].block.cols() == 4);
  CHECK(s[2].block.cols() == 1);
  Matrix joined(2, 9);
  joined << s[0].block, s[1].block, s[2].block;
  CHECK(joined == w9);
  CHECK_THROWS_AS(slice_matrix(w9, 0), ConfigError);
}

TEST_CASE("default_slice_width") {
  CHECK(default_slice_width(300) == 8);
  CHECK(static_cast<int>(std::floor(std::log2(300.0))) == 8);
  CHECK(default_slice_width(1) == 1);
  CHECK(default_slice_width(2) == 1);
  CHECK(default_slice_width(1024) == 10);
  CHECK(default_slice_width(1023) == 9);
}

TEST_CASE("round_pow2 rounds in the log domain") {
  std::int64_t clamped = 0;
  CHECK(detail::round_pow2(0.375, {}, &clamped)->exponent == -1);
  CHECK(detail::round_pow2(-3.75, {}, &clamped)->exponent == 2);
  CHECK(detail::round_pow2(-3.75, {}, &clamped)->sign == -1);
  // log2(2^-1.5) sits exactly between -2 and -1: the smaller exponent wins.
  CHECK(detail::round_pow2(std::ldexp(std::sqrt(0.5), -1), {}, &clamped)->exponent == -2);
  CHECK_FALSE(detail::round_pow2(0.0, {}, &clamped).has_value());
  CHECK(clamped == 0);
  CHECK(detail::round_pow2(1e9, {}, &clamped)->exponent == 15);
  CHECK(clamped == 1);
}

TEST_CASE("FP: rows that are powers of two need no additions") {
  Matrix w(3, 1);
  w << 1, 2, 4;
  const auto d = decompose_fp(w, 1, fp_exact());
  CHECK(std::isinf(d.achieved_sqnr));
  CHECK(count_additions(d) == 0);
  CHECK(reconstruct(d) == w);
}

TEST_CASE("FP reproduces the worked example with three additions") {
  const auto d = decompose_fp(eq2(), 2, fp_exact());
  CHECK_NOTHROW(d.validate());
  CHECK(std::isinf(d.achieved_sqnr));
  CHECK(reconstruct(d) == eq2());
  CHECK(count_additions(d) == 3);
  CHECK(d.converged);
}

TEST_CASE("FP respects the per-row term bound") {
  const Matrix w = oracle::gaussian(256, 8, 5);
  const auto d = decompose_fp(w, 8, fp_fixed(2, 3));
  CHECK_NOTHROW(d.validate());
  const auto& s = d.slices.at(0);
  CHECK(static_cast<int>(s.factors.size()) <= 1 + 3);
  for (std::size_t p = 1; p < s.factors.size(); ++p) {
    for (const auto& row : s.factors[p].rows) CHECK(row.size() <= 2);
  }
  CHECK(count_additions(d) <= 3 * 256);
  CHECK(count_additions(d) == bookkeeping_adds(d));
}

TEST_CASE("FP SQNR is non-decreasing in the number of factors") {
  const Matrix w = oracle::gaussian(64, 6, 9);
  double prev = -1e300;
  for (int p = 1; p <= 6; ++p) {
    const auto d = decompose_fp(w, 6, fp_fixed(2, p));
    CHECK(d.achieved_sqnr >= prev);
    prev = d.achieved_sqnr;
  }
}

TEST_CASE("FS: scaled copies of existing codewords are free") {
  Matrix w(1, 2);
  w << 0.125, 0;
  auto d = decompose_fs(w, 2, fs_target(kInfDb));
  CHECK(count_additions(d) == 0);
  CHECK(reconstruct(d) == w);

  Matrix w2(2, 2);
  w2 << 1, 1, 0.125, 0.125;
  d = decompose_fs(w2, 2, fs_target(kInfDb));
  CHECK(count_additions(d) == 1);
  CHECK(reconstruct(d) == w2);
}

TEST_CASE("FS reproduces the worked example with at most three additions") {
  const auto d = decompose_fs(eq2(), 2, fs_target(kInfDb));
  CHECK_NOTHROW(d.validate());
  CHECK(std::isinf(d.achieved_sqnr));
  CHECK(reconstruct(d) == eq2());
  CHECK(count_additions(d) <= 3);
}

TEST_CASE("FS beats the CSD baseline on a tall Gaussian slice at matched fidelity") {
  const Matrix w = oracle::gaussian(300, 8, 2024);
  const FixedPointConfig base{10, 6};
  const auto d = decompose_fs(w, 8, fs_match(10));
  const double baseline_sqnr = sqnr_db(w, quantize_matrix(w, base));
  CHECK(d.converged);
  CHECK(d.achieved_sqnr >= baseline_sqnr);
  const auto csd = csd_matrix_cost(quantize_matrix(w, base), base);
  MESSAGE("FS adds " << count_additions(d) << " vs CSD " << csd.adds);
  CHECK(count_additions(d) < csd.adds);
}

TEST_CASE("FS reports budget exhaustion with the best decomposition so far") {
  const Matrix w = oracle::gaussian(32, 4, 3);
  FsOptions o = fs_target(80.0);
  o.max_additions = 10;
  const auto d = decompose_fs(w, 4, o);
  CHECK_FALSE(d.converged);
  CHECK(count_additions(d) <= 10);
  CHECK(d.achieved_sqnr < 80.0);
  CHECK_NOTHROW(d.validate());
}

TEST_CASE("zero rows and zero slices") {
  Matrix w = oracle::gaussian(4, 6, 8);
  w.row(1).setZero();
  w.middleCols(3, 3).setZero();
  for (auto algo : {LccAlgorithm::FP, LccAlgorithm::FS}) {
    const auto d = algo == LccAlgorithm::FP ? decompose_fp(w, 3, fp_fixed(2, 4)) : decompose_fs(w, 3, fs_target(40));
    REQUIRE(d.slices.size() == 2);
    CHECK(d.slices[1].factors.empty());
    const Matrix r = reconstruct(d);
    CHECK(r.row(1).isZero());
    CHECK(r.middleCols(3, 3).isZero());
  }
}

TEST_CASE("reconstruct") {
  CHECK(reconstruct(identity_decomposition(3)) == Matrix::Identity(3, 3));
  const Matrix w = oracle::gaussian(40, 13, 77);
  const auto d = decompose_fs(w, 5, fs_target(35.0));
  CHECK(std::abs(sqnr_db(w, reconstruct(d)) - d.achieved_sqnr) <= 1e-9);
  const auto f = decompose_fp(w, 5, fp_fixed(3, 2));
  CHECK(std::abs(sqnr_db(w, reconstruct(f)) - f.achieved_sqnr) <= 1e-9);
}

TEST_CASE("slice reconstructions concatenate to the whole") {
  const Matrix w = oracle::gaussian(20, 10, 4);
  const auto d = decompose_fs(w, 4, fs_target(30.0));
  Matrix joined(20, 10);
  for (const auto& cs : slice_matrix(w, 4)) {
    const auto part = decompose_fs(cs.block, 4, fs_target(30.0));
    joined.middleCols(cs.begin, cs.end - cs.begin) = reconstruct(part);
  }
  CHECK(joined == reconstruct(d));
}

TEST_CASE("adder program for the worked example") {
  const auto d = decompose_fs(eq2(), 2, fs_target(kInfDb));
  const auto p = to_adder_program(d);
  CHECK(p.nodes.size() == 3);
  CHECK(p.additions() == 3);
  CHECK(p.outputs.size() == 2);
  const auto y = execute_program(p, std::vector<double>{1.0, 1.0});
  CHECK(y[0] == 2.375);
  CHECK(y[1] == 4.75);
  CHECK(oracle::dense_matvec(eq2(), Vector::Ones(2))(1) == 4.75);

  const auto pf = to_adder_program(decompose_fp(eq2(), 2, fp_exact()));
  CHECK(pf.additions() == 3);
  CHECK(execute_program(pf, std::vector<double>{1.0, 1.0}) == y);
}

TEST_CASE("identity program is pure wiring") {
  const auto p = to_adder_program(identity_decomposition(4));
  CHECK(p.nodes.empty());
  for (int i = 0; i < 4; ++i) {
    REQUIRE(p.outputs[static_cast<std::size_t>(i)].has_value());
    CHECK(*p.outputs[static_cast<std::size_t>(i)] == Operand{i, 0, 1});
  }
  const std::vector<double> x{1.5, -2, 3, 0.25};
  CHECK(execute_program(p, x) == x);
  CHECK(count_additions(identity_decomposition(4)) == 0);
  CHECK_THROWS_AS(execute_program(p, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("program node count matches factor bookkeeping") {
  const Matrix w = oracle::gaussian(64, 8, 31);
  const auto d = decompose_fp(w, 8, fp_fixed(2, 2));
  const auto p = to_adder_program(d);
  CHECK(static_cast<std::int64_t>(p.nodes.size()) == bookkeeping_adds(d));
  CHECK(p.additions() == count_additions(d));
}

TEST_CASE("programs agree with the dense product") {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 64);
    const int k = 1 + static_cast<int>(rng() % 8);
    const Matrix w = oracle::gaussian(n, k, rng());
    const auto d = trial % 2 ? decompose_fp(w, 1 + static_cast<int>(rng() % 8), fp_fixed(2 + trial % 3, 1 + trial % 4))
                             : decompose_fs(w, 1 + static_cast<int>(rng() % 8), fs_target(20.0 + trial % 30));
    const auto p = to_adder_program(d);
    REQUIRE(p.additions() == count_additions(d));
    const Matrix r = reconstruct(d);
    Vector x(k);
    for (int i = 0; i < k; ++i) x(i) = nd(rng);
    const Vector y = execute_program(p, x);
    const Vector ref = oracle::dense_matvec(r, x);
    for (int i = 0; i < n; ++i) CHECK(std::abs(y(i) - ref(i)) <= 1e-9 * (1 + std::abs(ref(i))));
  }
}

TEST_CASE("FP output rows are computed independently") {
  const Matrix w = oracle::gaussian(16, 6, 21);
  const auto d = decompose_fp(w, 6, fp_fixed(2, 3));
  const Matrix full = reconstruct(d);
  auto cut = d;
  cut.slices[0].factors.back().rows[5].clear();
  const Matrix r = reconstruct(cut);
  for (int i = 0; i < 16; ++i) {
    if (i == 5) {
      CHECK(r.row(i).isZero());
    } else {
      CHECK(r.row(i) == full.row(i));
    }
  }
}

TEST_CASE("decompositions are deterministic") {
  const Matrix w = oracle::gaussian(50, 8, 5);
  CHECK(serialize_decomposition(decompose_fs(w, 8, fs_target(40))) ==
        serialize_decomposition(decompose_fs(w, 8, fs_target(40))));
  CHECK(serialize_decomposition(decompose_fp(w, 4, fp_fixed(2, 3))) ==
        serialize_decomposition(decompose_fp(w, 4, fp_fixed(2, 3))));
}

TEST_CASE("decomposition serialization") {
  const Matrix w = oracle::gaussian(30, 11, 6);
  for (const auto& d : {decompose_fs(w, 3, fs_target(30)), decompose_fp(w, 5, fp_fixed(2, 2)), identity_decomposition(2)}) {
    const auto bytes = serialize_decomposition(d);
    const auto back = deserialize_decomposition(bytes);
    CHECK(serialize_decomposition(back) == bytes);
    CHECK(back.slices == d.slices);
    CHECK(reconstruct(back) == reconstruct(d));
  }
  auto bytes = serialize_decomposition(identity_decomposition(2));
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_decomposition(bad), FormatError);
  bad = bytes;
  bad[4] = 2;
  CHECK_THROWS_AS(deserialize_decomposition(bad), FormatError);
  bad = bytes;
  bad.resize(bytes.size() - 3);
  CHECK_THROWS_AS(deserialize_decomposition(bad), FormatError);
}

TEST_CASE("validate rejects malformed chains") {
  auto d = identity_decomposition(3);
  d.slices[0].factors[0].rows[1].push_back({1, 0, 1});
  CHECK_THROWS_AS(d.validate(), Error);
  d = identity_decomposition(3);
  d.slices[0].col_end = 2;
  CHECK_THROWS_AS(d.validate(), Error);
}
