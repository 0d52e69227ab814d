#pragma once

// Linear computation coding: approximate a constant matrix by a chain of
// sparse factors whose entries are signed powers of two, so that W x costs
// only shifts and additions.

#include "lccnn/numerics.hpp"
#include "lccnn/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace lccnn {

/// One nonzero entry of a factor row: sign * 2^exponent * (source output of the previous factor).
struct PowTerm {
  int source = 0;
  int exponent = 0;
  int sign = 1;

  double value() const;
  friend bool operator==(const PowTerm&, const PowTerm&) = default;
};

struct ExponentRange {
  int min = -16;
  int max = 15;
};

struct FactorMatrix {
  int out_dim = 0;
  int in_dim = 0;
  std::vector<std::vector<PowTerm>> rows;

  static FactorMatrix identity(int n);
  Matrix dense() const;
  /// Sum over rows of max(0, terms - 1).
  std::int64_t additions() const;

  friend bool operator==(const FactorMatrix&, const FactorMatrix&) = default;
};

enum class LccAlgorithm : std::uint8_t { FP = 0, FS = 1 };

std::string to_string(LccAlgorithm a);
LccAlgorithm parse_algorithm(const std::string& s);

/// Factor chain for the column block [col_begin, col_end). factors[0] is the
/// seed factor applied first; an empty chain means the block is all zero.
struct SliceDecomposition {
  int col_begin = 0;
  int col_end = 0;
  int rows = 0;
  std::vector<FactorMatrix> factors;

  int width() const { return col_end - col_begin; }
  /// Dense product F_P ... F_1 F_0 (rows x width).
  Matrix product() const;
  std::int64_t additions() const;
  /// True for every output row that receives at least one term.
  std::vector<bool> nonzero_outputs() const;

  friend bool operator==(const SliceDecomposition&, const SliceDecomposition&) = default;
};

struct LccDecomposition {
  int rows = 0;
  int cols = 0;
  int slice_width = 1;
  LccAlgorithm algorithm = LccAlgorithm::FS;
  int terms_per_row = 0;  // S for FP, 0 for FS
  double achieved_sqnr = kInfDb;
  std::vector<SliceDecomposition> slices;

  // Diagnostics, not serialized.
  bool converged = true;
  std::int64_t clamped_exponents = 0;

  /// Throws Error describing the first violated structural invariant.
  void validate() const;
};

struct ColumnSlice {
  int begin = 0;
  int end = 0;
  Matrix block;
};

std::vector<ColumnSlice> slice_matrix(const Matrix& w, int width);

/// max(1, floor(log2 n)): the widest slice keeping the block's aspect ratio exponential.
int default_slice_width(int n);

/// Per-slice fidelity target. With match_baseline set, each slice must reach
/// the SQNR its own fixed-point quantization achieves; otherwise target_db applies.
struct SqnrTarget {
  double target_db = kInfDb;
  std::optional<FixedPointConfig> match_baseline;

  double for_slice(const Matrix& block) const;
};

struct FpOptions {
  int terms_per_row = 2;
  /// Number of factors after the seed. 0 means "until the SQNR target", capped at factor_cap.
  int max_factors = 0;
  int factor_cap = 32;
  SqnrTarget target;
  ExponentRange range;
};

struct FsOptions {
  SqnrTarget target;
  std::int64_t max_additions = 1'000'000;  // per slice
  int candidate_pool = 64;
  ExponentRange range;
};

struct SliceOutcome {
  SliceDecomposition slice;
  bool converged = true;
  std::int64_t clamped_exponents = 0;
};

SliceOutcome decompose_fp_slice(const Matrix& block, double target_db, const FpOptions& opts);
SliceOutcome decompose_fs_slice(const Matrix& block, double target_db, const FsOptions& opts);

LccDecomposition decompose_fp(const Matrix& w, int slice_width, const FpOptions& opts);
LccDecomposition decompose_fs(const Matrix& w, int slice_width, const FsOptions& opts);

/// Horizontal concatenation of the slice products.
Matrix reconstruct(const LccDecomposition& d);

/// Factor additions plus the additions that merge slice partial sums per output row.
std::int64_t count_additions(const LccDecomposition& d);

/// Shift count: terms with a nonzero exponent, plus exponent-0 terms in multi-term rows.
std::int64_t count_shifts(const LccDecomposition& d);

namespace detail {

/// Nearest signed power of two to alpha in the log2 domain (ties toward the
/// smaller exponent), clamped to range. nullopt for alpha == 0.
std::optional<PowTerm> round_pow2(double alpha, const ExponentRange& range, std::int64_t* clamped);

/// Row-wise noise budget so that meeting it on every row meets target_db on the block.
double row_noise_budget(const Matrix& block, double target_db);

}  // namespace detail

}  // namespace lccnn
