#include "lccnn/lcc.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace lccnn {

double PowTerm::value() const { return sign * std::ldexp(1.0, exponent); }

FactorMatrix FactorMatrix::identity(int n) {
  FactorMatrix f;
  f.out_dim = n;
  f.in_dim = n;
  f.rows.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) f.rows[static_cast<std::size_t>(i)].push_back({i, 0, 1});
  return f;
}

Matrix FactorMatrix::dense() const {
  Matrix m = Matrix::Zero(out_dim, in_dim);
  for (int r = 0; r < out_dim; ++r) {
    for (const auto& t : rows[static_cast<std::size_t>(r)]) m(r, t.source) += t.value();
  }
  return m;
}

std::int64_t FactorMatrix::additions() const {
  std::int64_t adds = 0;
  for (const auto& row : rows) adds += std::max<std::int64_t>(0, static_cast<std::int64_t>(row.size()) - 1);
  return adds;
}

std::string to_string(LccAlgorithm a) { return a == LccAlgorithm::FP ? "FP" : "FS"; }

LccAlgorithm parse_algorithm(const std::string& s) {
  if (s == "FP" || s == "fp") return LccAlgorithm::FP;
  if (s == "FS" || s == "fs") return LccAlgorithm::FS;
  throw ConfigError("unknown LCC algorithm '" + s + "'");
}

Matrix SliceDecomposition::product() const {
  if (factors.empty()) return Matrix::Zero(rows, width());
  Matrix acc = factors.front().dense();
  for (std::size_t p = 1; p < factors.size(); ++p) acc = factors[p].dense() * acc;
  return acc;
}

std::int64_t SliceDecomposition::additions() const {
  std::int64_t adds = 0;
  for (const auto& f : factors) adds += f.additions();
  return adds;
}

std::vector<bool> SliceDecomposition::nonzero_outputs() const {
  std::vector<bool> out(static_cast<std::size_t>(rows), false);
  if (factors.empty()) return out;
  const auto& last = factors.back();
  for (int r = 0; r < rows; ++r) out[static_cast<std::size_t>(r)] = !last.rows[static_cast<std::size_t>(r)].empty();
  return out;
}

void LccDecomposition::validate() const {
  if (rows < 0 || cols < 0 || slice_width < 1) throw Error("decomposition: bad header");
  int expected_begin = 0;
  for (const auto& s : slices) {
    if (s.col_begin != expected_begin || s.col_end <= s.col_begin || s.col_end > cols) {
      throw Error("decomposition: column ranges do not partition [0, cols)");
    }
    expected_begin = s.col_end;
    if (s.rows != rows) throw Error("decomposition: slice row count mismatch");
    if (s.factors.empty()) continue;
    if (s.factors.front().in_dim != s.width()) throw Error("decomposition: seed factor width mismatch");
    if (s.factors.back().out_dim != rows) throw Error("decomposition: last factor height mismatch");
    for (std::size_t p = 0; p < s.factors.size(); ++p) {
      const auto& f = s.factors[p];
      if (static_cast<int>(f.rows.size()) != f.out_dim) throw Error("decomposition: factor row count mismatch");
      if (p > 0 && f.in_dim != s.factors[p - 1].out_dim) {
        throw Error("decomposition: adjacent factors have incompatible dimensions");
      }
      for (const auto& row : f.rows) {
        if (algorithm == LccAlgorithm::FP && p > 0 && static_cast<int>(row.size()) > terms_per_row) {
          throw Error("decomposition: FP row exceeds terms_per_row");
        }
        std::set<int> seen;
        for (const auto& t : row) {
          if (t.source < 0 || t.source >= f.in_dim) throw Error("decomposition: term source out of range");
          if (!seen.insert(t.source).second) throw Error("decomposition: duplicate source in a row");
          if (t.sign != 1 && t.sign != -1) throw Error("decomposition: bad sign");
          if (p > 0 && s.factors[p - 1].rows[static_cast<std::size_t>(t.source)].empty()) {
            throw Error("decomposition: term references an empty row");
          }
        }
      }
    }
  }
  if (expected_begin != cols) throw Error("decomposition: column ranges do not cover all columns");
}

std::vector<ColumnSlice> slice_matrix(const Matrix& w, int width) {
  if (width < 1) throw ConfigError("slice width must be >= 1");
  std::vector<ColumnSlice> out;
  const auto cols = static_cast<int>(w.cols());
  for (int begin = 0; begin < cols; begin += width) {
    const int end = std::min(cols, begin + width);
    out.push_back({begin, end, w.middleCols(begin, end - begin)});
  }
  return out;
}

int default_slice_width(int n) {
  if (n < 1) throw ConfigError("default_slice_width: n must be >= 1");
  int w = 0;
  while ((2 << w) <= n) ++w;  // w = floor(log2 n)
  return std::max(1, w);
}

double SqnrTarget::for_slice(const Matrix& block) const {
  if (!match_baseline) return target_db;
  if (block.squaredNorm() == 0.0) return kInfDb;
  return sqnr_db(block, quantize_matrix(block, *match_baseline));
}

namespace {

template <class SliceFn>
LccDecomposition decompose_all(const Matrix& w, int slice_width, LccAlgorithm algo, int terms,
                               const SqnrTarget& target, SliceFn&& fn) {
  LccDecomposition d;
  d.rows = static_cast<int>(w.rows());
  d.cols = static_cast<int>(w.cols());
  d.slice_width = slice_width;
  d.algorithm = algo;
  d.terms_per_row = terms;
  for (auto& cs : slice_matrix(w, slice_width)) {
    SliceOutcome out = fn(cs.block, target.for_slice(cs.block));
    out.slice.col_begin = cs.begin;
    out.slice.col_end = cs.end;
    d.converged = d.converged && out.converged;
    d.clamped_exponents += out.clamped_exponents;
    d.slices.push_back(std::move(out.slice));
  }
  d.achieved_sqnr = w.squaredNorm() == 0.0 ? kInfDb : sqnr_db(w, reconstruct(d));
  return d;
}

}  // namespace

LccDecomposition decompose_fp(const Matrix& w, int slice_width, const FpOptions& opts) {
  return decompose_all(w, slice_width, LccAlgorithm::FP, opts.terms_per_row, opts.target,
                       [&](const Matrix& b, double t) { return decompose_fp_slice(b, t, opts); });
}

LccDecomposition decompose_fs(const Matrix& w, int slice_width, const FsOptions& opts) {
  return decompose_all(w, slice_width, LccAlgorithm::FS, 0, opts.target,
                       [&](const Matrix& b, double t) { return decompose_fs_slice(b, t, opts); });
}

Matrix reconstruct(const LccDecomposition& d) {
  Matrix out = Matrix::Zero(d.rows, d.cols);
  for (const auto& s : d.slices) out.middleCols(s.col_begin, s.width()) = s.product();
  return out;
}

std::int64_t count_additions(const LccDecomposition& d) {
  std::int64_t adds = 0;
  std::vector<int> partials(static_cast<std::size_t>(d.rows), 0);
  for (const auto& s : d.slices) {
    adds += s.additions();
    const auto nz = s.nonzero_outputs();
    for (std::size_t r = 0; r < nz.size(); ++r) partials[r] += nz[r] ? 1 : 0;
  }
  for (int p : partials) adds += std::max(0, p - 1);
  return adds;
}

std::int64_t count_shifts(const LccDecomposition& d) {
  std::int64_t shifts = 0;
  for (const auto& s : d.slices) {
    for (const auto& f : s.factors) {
      for (const auto& row : f.rows) {
        for (const auto& t : row) {
          if (row.size() > 1 || t.exponent != 0) ++shifts;
        }
      }
    }
  }
  return shifts;
}

namespace detail {

std::optional<PowTerm> round_pow2(double alpha, const ExponentRange& range, std::int64_t* clamped) {
  if (alpha == 0.0 || !std::isfinite(alpha)) return std::nullopt;
  int e = static_cast<int>(std::ceil(std::log2(std::abs(alpha)) - 0.5));
  if (e < range.min || e > range.max) {
    if (clamped) ++*clamped;
    e = std::clamp(e, range.min, range.max);
  }
  return PowTerm{0, e, alpha < 0 ? -1 : 1};
}

double row_noise_budget(const Matrix& block, double target_db) {
  if (std::isinf(target_db) || block.rows() == 0) return 0.0;
  return block.squaredNorm() * std::pow(10.0, -target_db / 10.0) / static_cast<double>(block.rows());
}

}  // namespace detail

}  // namespace lccnn
