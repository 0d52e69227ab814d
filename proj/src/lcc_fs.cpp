// Fully sequential decomposition: a codebook that starts from the canonical
// basis and grows by one two-term codeword (one addition) per step. Every
// target row is read out as a signed power of two times its best codeword.

#include "lccnn/lcc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lccnn {

namespace {

struct Codeword {
  Vector v;
  double norm2 = 0.0;
  int level = 0;
  int a = -1;
  int b = -1;
  PowTerm ta;
  PowTerm tb;
};

struct RowBest {
  int codeword = -1;
  PowTerm coef;
  double residual = 0.0;
};

struct Pow2Choice {
  PowTerm term;
  bool clamped = false;
};

// Floor and ceil exponents of |alpha|; together they bracket the best power of two.
int pow2_brackets(double alpha, const ExponentRange& range, Pow2Choice out[2]) {
  if (alpha == 0.0 || !std::isfinite(alpha)) return 0;
  const int sign = alpha < 0 ? -1 : 1;
  const double l = std::log2(std::abs(alpha));
  const int lo = static_cast<int>(std::floor(l));
  const int hi = lo + 1;
  int count = 0;
  for (int e : {lo, hi}) {
    const int c = std::clamp(e, range.min, range.max);
    if (count == 1 && out[0].term.exponent == c) continue;
    out[count++] = {PowTerm{0, c, sign}, c != e};
  }
  return count;
}

class FsBuilder {
 public:
  FsBuilder(const Matrix& block, double target_db, const FsOptions& opts)
      : block_(block), opts_(opts), n_(static_cast<int>(block.rows())), k_(static_cast<int>(block.cols())) {
    budget_ = detail::row_noise_budget(block, target_db);
    for (int j = 0; j < k_; ++j) {
      Codeword c;
      c.v = Vector::Unit(k_, j);
      c.norm2 = 1.0;
      codewords_.push_back(std::move(c));
    }
    best_.resize(static_cast<std::size_t>(n_));
    for (int i = 0; i < n_; ++i) {
      best_[static_cast<std::size_t>(i)].residual = block.row(i).squaredNorm();
      for (int j = 0; j < k_; ++j) consider(i, j);
    }
  }

  SliceOutcome run() {
    SliceOutcome out;
    std::vector<bool> stalled(static_cast<std::size_t>(n_), false);
    std::int64_t adds = 0;
    for (;;) {
      int worst = -1;
      for (int i = 0; i < n_; ++i) {
        const auto& b = best_[static_cast<std::size_t>(i)];
        if (b.residual <= budget_ || stalled[static_cast<std::size_t>(i)]) continue;
        if (worst < 0 || b.residual > best_[static_cast<std::size_t>(worst)].residual) worst = i;
      }
      if (worst < 0) break;
      if (adds >= opts_.max_additions) break;

      Codeword u;
      if (!extend_for(worst, u)) {
        stalled[static_cast<std::size_t>(worst)] = true;
        continue;
      }
      codewords_.push_back(std::move(u));
      ++adds;
      const int id = static_cast<int>(codewords_.size()) - 1;
      for (int i = 0; i < n_; ++i) {
        if (consider(i, id)) stalled[static_cast<std::size_t>(i)] = false;
      }
    }
    out.converged = std::all_of(best_.begin(), best_.end(), [&](const RowBest& b) { return b.residual <= budget_; });
    out.clamped_exponents = clamped_;
    out.slice = build_chain();
    return out;
  }

 private:
  // Re-evaluates row i against codeword j; true when it became the row's best.
  bool consider(int i, int j) {
    const auto& c = codewords_[static_cast<std::size_t>(j)];
    if (c.norm2 == 0.0) return false;
    const Vector w = block_.row(i).transpose();
    Pow2Choice choices[2];
    const int m = pow2_brackets(w.dot(c.v) / c.norm2, opts_.range, choices);
    auto& b = best_[static_cast<std::size_t>(i)];
    bool improved = false;
    for (int t = 0; t < m; ++t) {
      const double r = (w - choices[t].term.value() * c.v).squaredNorm();
      if (r < b.residual) {
        b = {j, choices[t].term, r};
        b.coef.source = j;
        improved = true;
        if (choices[t].clamped) ++clamped_;
      }
    }
    return improved;
  }

  // Searches codeword pairs for the one-addition codeword that best fits row r.
  bool extend_for(int r, Codeword& out) {
    const Vector w = block_.row(r).transpose();
    const auto& cur = best_[static_cast<std::size_t>(r)];
    Vector residual = w;
    if (cur.codeword >= 0) residual -= cur.coef.value() * codewords_[static_cast<std::size_t>(cur.codeword)].v;

    const int total = static_cast<int>(codewords_.size());
    std::vector<double> score(static_cast<std::size_t>(total), 0.0);
    for (int j = 0; j < total; ++j) {
      const auto& c = codewords_[static_cast<std::size_t>(j)];
      score[static_cast<std::size_t>(j)] = c.norm2 > 0 ? std::abs(residual.dot(c.v)) / std::sqrt(c.norm2) : -1.0;
    }
    std::vector<int> pool(static_cast<std::size_t>(total));
    std::iota(pool.begin(), pool.end(), 0);
    const int keep = std::min(total, opts_.candidate_pool);
    std::partial_sort(pool.begin(), pool.begin() + keep, pool.end(), [&](int x, int y) {
      const double sx = score[static_cast<std::size_t>(x)];
      const double sy = score[static_cast<std::size_t>(y)];
      return sx != sy ? sx > sy : x < y;
    });
    pool.resize(static_cast<std::size_t>(keep));
    if (cur.codeword >= 0 && std::find(pool.begin(), pool.end(), cur.codeword) == pool.end()) {
      pool.push_back(cur.codeword);
    }
    pool.erase(std::remove_if(pool.begin(), pool.end(),
                              [&](int j) { return codewords_[static_cast<std::size_t>(j)].norm2 == 0.0; }),
               pool.end());

    const auto p = pool.size();
    std::vector<double> wd(p);
    Matrix gram(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    for (std::size_t x = 0; x < p; ++x) {
      const auto& cx = codewords_[static_cast<std::size_t>(pool[x])].v;
      wd[x] = w.dot(cx);
      for (std::size_t y = x; y < p; ++y) {
        gram(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)) =
            gram(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)) =
                cx.dot(codewords_[static_cast<std::size_t>(pool[y])].v);
      }
    }
    const double w2 = w.squaredNorm();

    double best_est = cur.residual;
    int best_x = -1;
    int best_y = -1;
    Pow2Choice best_qx;
    Pow2Choice best_qy;
    auto try_pair = [&](std::size_t x, std::size_t y, const Pow2Choice& qx, const Pow2Choice& qy) {
      const double a = qx.term.value();
      const double b = qy.term.value();
      const auto X = static_cast<Eigen::Index>(x);
      const auto Y = static_cast<Eigen::Index>(y);
      const double est = w2 - 2 * a * wd[x] - 2 * b * wd[y] + a * a * gram(X, X) + 2 * a * b * gram(X, Y) +
                         b * b * gram(Y, Y);
      if (est < best_est) {
        best_est = est;
        best_x = static_cast<int>(x);
        best_y = static_cast<int>(y);
        best_qx = qx;
        best_qy = qy;
      }
    };

    for (std::size_t x = 0; x < p; ++x) {
      for (std::size_t y = x + 1; y < p; ++y) {
        const auto X = static_cast<Eigen::Index>(x);
        const auto Y = static_cast<Eigen::Index>(y);
        const double det = gram(X, X) * gram(Y, Y) - gram(X, Y) * gram(X, Y);
        if (!(det > 1e-12 * gram(X, X) * gram(Y, Y))) continue;
        const double alpha = (gram(Y, Y) * wd[x] - gram(X, Y) * wd[y]) / det;
        const double beta = (gram(X, X) * wd[y] - gram(X, Y) * wd[x]) / det;
        Pow2Choice qa[2];
        Pow2Choice qb[2];
        const int na = pow2_brackets(alpha, opts_.range, qa);
        const int nb = pow2_brackets(beta, opts_.range, qb);
        for (int s = 0; s < na; ++s) {
          for (int t = 0; t < nb; ++t) try_pair(x, y, qa[s], qb[t]);
        }
      }
    }

    // Refinements of the current best: keep its coefficient and add one term fitted to the residual.
    if (cur.codeword >= 0) {
      const auto at = static_cast<std::size_t>(std::find(pool.begin(), pool.end(), cur.codeword) - pool.begin());
      const Pow2Choice keepq{cur.coef, false};
      for (std::size_t y = 0; y < p; ++y) {
        if (y == at) continue;
        const auto Y = static_cast<Eigen::Index>(y);
        const double beta = (wd[y] - cur.coef.value() * gram(static_cast<Eigen::Index>(at), Y)) / gram(Y, Y);
        Pow2Choice qb[2];
        const int nb = pow2_brackets(beta, opts_.range, qb);
        for (int t = 0; t < nb; ++t) {
          if (at < y) {
            try_pair(at, y, keepq, qb[t]);
          } else {
            try_pair(y, at, qb[t], keepq);
          }
        }
      }
    }

    if (best_x < 0) return false;
    const auto& ca = codewords_[static_cast<std::size_t>(pool[static_cast<std::size_t>(best_x)])];
    const auto& cb = codewords_[static_cast<std::size_t>(pool[static_cast<std::size_t>(best_y)])];
    out.v = best_qx.term.value() * ca.v + best_qy.term.value() * cb.v;
    out.norm2 = out.v.squaredNorm();
    if (out.norm2 == 0.0) return false;
    // The estimate may carry rounding error; only accept a real improvement.
    Pow2Choice c[2];
    const int m = pow2_brackets(w.dot(out.v) / out.norm2, opts_.range, c);
    bool helps = false;
    for (int t = 0; t < m; ++t) helps = helps || (w - c[t].term.value() * out.v).squaredNorm() < cur.residual;
    if (!helps) return false;
    out.a = pool[static_cast<std::size_t>(best_x)];
    out.b = pool[static_cast<std::size_t>(best_y)];
    out.ta = best_qx.term;
    out.tb = best_qy.term;
    out.ta.source = out.a;
    out.tb.source = out.b;
    out.level = std::max(ca.level, cb.level) + 1;
    clamped_ += (best_qx.clamped ? 1 : 0) + (best_qy.clamped ? 1 : 0);
    return true;
  }

  // Schedules codewords by dependency depth into a factor chain. Each factor
  // carries forward the codewords that a later factor or an output still reads.
  SliceDecomposition build_chain() const {
    SliceDecomposition s;
    s.rows = n_;
    s.col_end = k_;
    const int total = static_cast<int>(codewords_.size());

    std::vector<bool> live(static_cast<std::size_t>(total), false);
    for (const auto& b : best_) {
      if (b.codeword >= 0) live[static_cast<std::size_t>(b.codeword)] = true;
    }
    for (int j = total - 1; j >= k_; --j) {
      const auto& c = codewords_[static_cast<std::size_t>(j)];
      if (!live[static_cast<std::size_t>(j)]) continue;
      live[static_cast<std::size_t>(c.a)] = true;
      live[static_cast<std::size_t>(c.b)] = true;
    }
    int depth = 0;
    for (int j = 0; j < total; ++j) {
      if (live[static_cast<std::size_t>(j)]) depth = std::max(depth, codewords_[static_cast<std::size_t>(j)].level);
    }
    std::vector<int> last_use(static_cast<std::size_t>(total), -1);
    for (const auto& b : best_) {
      if (b.codeword >= 0) last_use[static_cast<std::size_t>(b.codeword)] = depth + 1;
    }
    for (int j = k_; j < total; ++j) {
      const auto& c = codewords_[static_cast<std::size_t>(j)];
      if (!live[static_cast<std::size_t>(j)]) continue;
      last_use[static_cast<std::size_t>(c.a)] = std::max(last_use[static_cast<std::size_t>(c.a)], c.level);
      last_use[static_cast<std::size_t>(c.b)] = std::max(last_use[static_cast<std::size_t>(c.b)], c.level);
    }

    s.factors.push_back(FactorMatrix::identity(k_));
    std::vector<int> pos_prev(static_cast<std::size_t>(total), -1);
    for (int j = 0; j < k_; ++j) pos_prev[static_cast<std::size_t>(j)] = j;

    for (int level = 1; level <= depth; ++level) {
      FactorMatrix f;
      f.in_dim = s.factors.back().out_dim;
      std::vector<int> pos(static_cast<std::size_t>(total), -1);
      for (int j = 0; j < total; ++j) {
        const auto& c = codewords_[static_cast<std::size_t>(j)];
        if (!live[static_cast<std::size_t>(j)] || c.level > level || last_use[static_cast<std::size_t>(j)] <= level) {
          continue;
        }
        pos[static_cast<std::size_t>(j)] = static_cast<int>(f.rows.size());
        if (c.level < level) {
          f.rows.push_back({PowTerm{pos_prev[static_cast<std::size_t>(j)], 0, 1}});
        } else {
          PowTerm ta = c.ta;
          PowTerm tb = c.tb;
          ta.source = pos_prev[static_cast<std::size_t>(c.a)];
          tb.source = pos_prev[static_cast<std::size_t>(c.b)];
          f.rows.push_back({ta, tb});
        }
      }
      f.out_dim = static_cast<int>(f.rows.size());
      s.factors.push_back(std::move(f));
      pos_prev = std::move(pos);
    }

    FactorMatrix outf;
    outf.in_dim = s.factors.back().out_dim;
    outf.out_dim = n_;
    outf.rows.resize(static_cast<std::size_t>(n_));
    for (int i = 0; i < n_; ++i) {
      const auto& b = best_[static_cast<std::size_t>(i)];
      if (b.codeword < 0) continue;
      PowTerm t = b.coef;
      t.source = pos_prev[static_cast<std::size_t>(b.codeword)];
      outf.rows[static_cast<std::size_t>(i)].push_back(t);
    }
    s.factors.push_back(std::move(outf));
    return s;
  }

  const Matrix& block_;
  const FsOptions& opts_;
  int n_;
  int k_;
  double budget_ = 0.0;
  std::vector<Codeword> codewords_;
  std::vector<RowBest> best_;
  std::int64_t clamped_ = 0;
};

}  // namespace

SliceOutcome decompose_fs_slice(const Matrix& block, double target_db, const FsOptions& opts) {
  if (block.cols() < 1) throw ShapeError("FS: slice must have at least one column");
  if (block.squaredNorm() == 0.0) {
    SliceOutcome out;
    out.slice.rows = static_cast<int>(block.rows());
    out.slice.col_end = static_cast<int>(block.cols());
    return out;
  }
  return FsBuilder(block, target_db, opts).run();
}

}  // namespace lccnn
