// Fully parallel decomposition: every stage rebuilds each target row from at
// most S signed powers of two applied to the previous stage's outputs, with
// rows handled independently of each other.

#include "lccnn/lcc.hpp"

#include <algorithm>
#include <cmath>

namespace lccnn {

namespace {

struct RowState {
  int position = -1;  // row index in the most recent factor, -1 while the row is zero
  Vector approx;
  double residual = 0.0;
};

// Greedy matching pursuit over the codebook with power-of-two coefficients.
// Each round takes the codeword whose rounded coefficient reduces the residual most.
std::vector<PowTerm> pursue_row(const Vector& target, const std::vector<Vector>& codebook,
                                const std::vector<double>& norms2, int terms, const ExponentRange& range,
                                std::int64_t* clamped) {
  std::vector<PowTerm> chosen;
  Vector residual = target;
  std::vector<bool> used(codebook.size(), false);
  for (int round = 0; round < terms; ++round) {
    int best = -1;
    double best_gain = 0.0;
    PowTerm best_term;
    std::int64_t best_clamped = 0;
    for (std::size_t j = 0; j < codebook.size(); ++j) {
      if (used[j] || norms2[j] == 0.0) continue;
      const double dot = residual.dot(codebook[j]);
      std::int64_t c = 0;
      const auto term = detail::round_pow2(dot / norms2[j], range, &c);
      if (!term) continue;
      const double q = term->value();
      const double gain = 2.0 * q * dot - q * q * norms2[j];
      if (gain > best_gain) {
        best = static_cast<int>(j);
        best_gain = gain;
        best_term = *term;
        best_clamped = c;
      }
    }
    if (best < 0) break;
    best_term.source = best;
    used[static_cast<std::size_t>(best)] = true;
    residual -= best_term.value() * codebook[static_cast<std::size_t>(best)];
    if (clamped) *clamped += best_clamped;
    chosen.push_back(best_term);
  }
  return chosen;
}

// Clears intermediate rows that no later factor reads. The seed factor is left intact.
void drop_dead_rows(std::vector<FactorMatrix>& factors) {
  if (factors.size() < 3) return;
  std::vector<bool> live(static_cast<std::size_t>(factors.back().out_dim), true);
  for (std::size_t p = factors.size() - 1; p >= 2; --p) {
    const auto& f = factors[p];
    std::vector<bool> needed(static_cast<std::size_t>(f.in_dim), false);
    for (int r = 0; r < f.out_dim; ++r) {
      if (!live[static_cast<std::size_t>(r)]) continue;
      for (const auto& t : f.rows[static_cast<std::size_t>(r)]) needed[static_cast<std::size_t>(t.source)] = true;
    }
    auto& prev = factors[p - 1];
    for (int r = 0; r < prev.out_dim; ++r) {
      if (!needed[static_cast<std::size_t>(r)]) prev.rows[static_cast<std::size_t>(r)].clear();
    }
    live = std::move(needed);
  }
}

}  // namespace

SliceOutcome decompose_fp_slice(const Matrix& block, double target_db, const FpOptions& opts) {
  if (opts.terms_per_row < 2) throw ConfigError("FP: terms_per_row must be >= 2");
  const int n = static_cast<int>(block.rows());
  const int k = static_cast<int>(block.cols());
  if (k < 1) throw ShapeError("FP: slice must have at least one column");

  SliceOutcome out;
  out.slice.rows = n;
  out.slice.col_end = k;
  const double signal = block.squaredNorm();
  if (signal == 0.0) return out;

  const bool fixed_factors = opts.max_factors > 0;
  const int limit = fixed_factors ? opts.max_factors : opts.factor_cap;
  const double budget = detail::row_noise_budget(block, target_db);

  auto& factors = out.slice.factors;
  factors.push_back(FactorMatrix::identity(k));

  std::vector<Vector> codebook;
  for (int j = 0; j < k; ++j) codebook.push_back(Vector::Unit(k, j));

  std::vector<RowState> state(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& s = state[static_cast<std::size_t>(i)];
    s.approx = Vector::Zero(k);
    s.residual = block.row(i).squaredNorm();
  }

  double achieved = 0.0;
  for (int stage = 1; stage <= limit; ++stage) {
    std::vector<double> norms2(codebook.size());
    for (std::size_t j = 0; j < codebook.size(); ++j) norms2[j] = codebook[j].squaredNorm();

    FactorMatrix f;
    f.in_dim = static_cast<int>(codebook.size());
    f.out_dim = n + k;
    f.rows.resize(static_cast<std::size_t>(n + k));
    bool progress = false;

    for (int i = 0; i < n; ++i) {
      auto& s = state[static_cast<std::size_t>(i)];
      auto& row = f.rows[static_cast<std::size_t>(i)];
      const Vector target = block.row(i).transpose();
      const PowTerm keep{s.position, 0, 1};
      if (s.residual <= budget) {
        if (s.position >= 0) row.push_back(keep);
        continue;
      }
      std::int64_t clamped = 0;
      auto terms = pursue_row(target, codebook, norms2, opts.terms_per_row, opts.range, &clamped);
      Vector approx = Vector::Zero(k);
      for (const auto& t : terms) approx += t.value() * codebook[static_cast<std::size_t>(t.source)];
      const double residual = (target - approx).squaredNorm();
      if (terms.empty() || residual >= s.residual) {
        // Never let a stage make a row worse; carrying the old value costs nothing.
        if (s.position >= 0) row.push_back(keep);
        continue;
      }
      out.clamped_exponents += clamped;
      row = std::move(terms);
      s.approx = std::move(approx);
      s.residual = residual;
      progress = true;
    }
    for (int j = 0; j < k; ++j) {
      f.rows[static_cast<std::size_t>(n + j)].push_back({stage == 1 ? j : n + j, 0, 1});
    }

    double noise = 0.0;
    for (const auto& s : state) noise += s.residual;
    achieved = noise == 0.0 ? kInfDb : 10.0 * std::log10(signal / noise);

    const bool done = achieved >= target_db || stage == limit || !progress;
    if (done) {
      f.rows.resize(static_cast<std::size_t>(n));
      f.out_dim = n;
    }
    // A stage that changed nothing is pure pass-through; leave it out of the chain.
    if (progress || factors.size() == 1) factors.push_back(std::move(f));
    if (done) {
      if (!progress && factors.back().out_dim != n) {
        auto& last = factors.back();
        last.rows.resize(static_cast<std::size_t>(n));
        last.out_dim = n;
      }
      break;
    }

    codebook.clear();
    for (int i = 0; i < n; ++i) {
      auto& s = state[static_cast<std::size_t>(i)];
      codebook.push_back(s.approx);
      s.position = factors.back().rows[static_cast<std::size_t>(i)].empty() ? -1 : i;
    }
    for (int j = 0; j < k; ++j) codebook.push_back(Vector::Unit(k, j));
  }

  drop_dead_rows(factors);
  out.converged = achieved >= target_db || (fixed_factors && std::isinf(target_db));
  return out;
}

}  // namespace lccnn
