#include "lccnn/pruning.hpp"

#include "oracles.hpp"
#include "prox_oracle.hpp"

#include <doctest.h>

#include <random>

using namespace lccnn;

TEST_CASE("group lasso penalty") {
  CHECK(group_lasso_penalty(Matrix::Zero(3, 4), 0.7) == 0.0);
  Matrix g(2, 2);
  g << 3, 4, 0, 0;
  CHECK(group_lasso_penalty(g, 0.1) == doctest::Approx(0.5).epsilon(1e-15));
  const Matrix r = oracle::gaussian(5, 3, 1);
  CHECK(group_lasso_penalty(2.5 * r, 0.3) == doctest::Approx(2.5 * group_lasso_penalty(r, 0.3)));
  CHECK_THROWS_AS(group_lasso_penalty(r, -1.0), ConfigError);
}

TEST_CASE("block soft thresholding examples") {
  Matrix g(3, 2);
  g << 3, 4, 0.3, 0.4, 0, 0;
  const Matrix out = block_soft_threshold(g, 1.0);
  CHECK(out(0, 0) == doctest::Approx(2.4).epsilon(1e-15));
  CHECK(out(0, 1) == doctest::Approx(3.2).epsilon(1e-15));
  CHECK(out.row(1).isZero(0.0));
  CHECK(out.row(2).isZero(0.0));
  CHECK(block_soft_threshold(g, 0.0) == g);

  // [3,4] at t = 1 against the numerical minimizer
  const Vector v = g.row(0).transpose();
  const Vector ref = oracle::prox_minimizer(v, 1.0);
  CHECK((ref - out.row(0).transpose()).norm() < 1e-6);
}

TEST_CASE("block soft thresholding is the group prox") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ut(0.0, 3.0);
  std::uniform_int_distribution<int> ud(1, 9);
  for (int trial = 0; trial < 200; ++trial) {
    const int d = ud(rng);
    const Matrix v = oracle::gaussian(1, d, 100 + trial);
    const double t = ut(rng);
    const Vector got = block_soft_threshold(v, t).row(0).transpose();
    const Vector ref = oracle::prox_minimizer(v.row(0).transpose(), t);
    CHECK((got - ref).norm() < 1e-6);
    CHECK(oracle::prox_objective(got, v.row(0).transpose(), t) <=
          oracle::prox_objective(ref, v.row(0).transpose(), t) + 1e-12);
  }
}

TEST_CASE("block soft thresholding is non-expansive") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> ut(0.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix a = oracle::gaussian(1, 6, 300 + trial);
    const Matrix b = oracle::gaussian(1, 6, 600 + trial);
    const double t = ut(rng);
    CHECK((block_soft_threshold(a, t) - block_soft_threshold(b, t)).norm() <= (a - b).norm() + 1e-15);
  }
}

TEST_CASE("proximal step in one dimension") {
  Layer l = make_dense(1, 1, Activation::Identity);
  l.weight(0, 0) = 1.0;
  proximal_step(l, Matrix::Constant(1, 1, 0.5), Vector::Zero(1), {2.0, 0.1}, GroupStructure{});
  CHECK(l.weight(0, 0) == doctest::Approx(0.75).epsilon(1e-15));

  // lambda = 0 is a gradient step
  Layer a = make_dense(3, 2, Activation::Identity);
  a.weight = oracle::gaussian(2, 3, 2);
  a.bias << 1.0, -1.0;
  const Matrix g = oracle::gaussian(2, 3, 3);
  const Vector gb = Vector::Constant(2, 0.5);
  Layer b = a;
  proximal_step(a, g, gb, {0.0, 0.05}, GroupStructure{});
  CHECK(a.weight == b.weight - 0.05 * g);
  CHECK(a.bias == b.bias - 0.05 * gb);
  CHECK_THROWS_AS(proximal_step(a, Matrix::Zero(3, 2), gb, {0.0, 0.05}, GroupStructure{}), ShapeError);
  CHECK_THROWS_AS(proximal_step(a, g, gb, {0.0, 0.0}, GroupStructure{}), ConfigError);
}

TEST_CASE("noise feature group is pruned to exactly zero") {
  // y = 2 x0 - x1; x2 is independent noise
  const int n = 256;
  Matrix x = oracle::gaussian(3, n, 11);
  Matrix y = 2.0 * x.row(0) - x.row(1);
  Layer l = make_dense(3, 1, Activation::Identity);
  l.weight << 0.3, 0.3, 0.3;
  const RegConfig cfg{0.05, 0.1};
  bool zero = false;
  for (int step = 0; step < 200 && !zero; ++step) {
    const Matrix err = l.weight * x - y;
    const Matrix grad = err * x.transpose() / n;
    proximal_step(l, grad, Vector::Zero(1), cfg, GroupStructure{});
    zero = l.weight(0, 2) == 0.0;
  }
  CHECK(zero);
  CHECK(l.weight(0, 0) > 1.5);
  CHECK(l.weight(0, 1) < -0.5);
}

TEST_CASE("group mapping round trips for every kind") {
  const Matrix dense = oracle::gaussian(4, 7, 21);
  const GroupStructure gd;
  CHECK(gd.map(dense) == dense.transpose());
  CHECK(gd.unmap(gd.map(dense), 4, 7) == dense);

  const ConvShape s{3, 2, 3, 8};
  Layer conv = make_conv(s, Activation::ReLU);
  conv.weight = oracle::gaussian(2, 27, 22);
  for (GroupKind k : {GroupKind::ConvFK, GroupKind::ConvPK}) {
    const auto gs = GroupStructure::for_layer(conv, k);
    const Matrix g = gs.map(conv.weight);
    CHECK(g.rows() == gs.group_count(conv.weight));
    CHECK(gs.unmap(g, 2, 27) == conv.weight);
  }
  const auto fk = GroupStructure::for_layer(conv, GroupKind::ConvFK);
  CHECK(fk.map(conv.weight).rows() == 6);
  CHECK(fk.map(conv.weight).cols() == 9);
  CHECK_THROWS_AS(GroupStructure::for_layer(conv, GroupKind::Dense), ConfigError);
}

TEST_CASE("zeroing a group zeroes the matching kernel entries") {
  const ConvShape s{2, 3, 2, 5};
  Layer conv = make_conv(s, Activation::ReLU);
  conv.weight = oracle::gaussian(3, 8, 31);
  // FK group (k=1, n=2) is the whole kernel (2,1)
  auto fk = GroupStructure::for_layer(conv, GroupKind::ConvFK);
  Matrix g = fk.map(conv.weight);
  g.row(1 * 3 + 2).setZero();
  Matrix w = fk.unmap(g, 3, 8);
  CHECK(w.row(2).segment(4, 4).isZero(0.0));
  CHECK(w.row(2).segment(0, 4) == conv.weight.row(2).segment(0, 4));
  CHECK(count_zero_groups(w, fk) == 1);
  // PK group (k=0, n=1, t=1) is column 1 of kernel (1,0): entries (i, 1)
  auto pk = GroupStructure::for_layer(conv, GroupKind::ConvPK);
  g = pk.map(conv.weight);
  g.row(0 * 6 + 1 * 2 + 1).setZero();
  w = pk.unmap(g, 3, 8);
  CHECK(w(1, 1) == 0.0);
  CHECK(w(1, 3) == 0.0);
  CHECK(w(1, 0) == conv.weight(1, 0));
  CHECK(w(1, 2) == conv.weight(1, 2));
  CHECK((w - conv.weight).cwiseAbs().sum() == doctest::Approx(std::abs(conv.weight(1, 1)) + std::abs(conv.weight(1, 3))));
}

TEST_CASE("compaction") {
  const Matrix w = oracle::gaussian(5, 6, 41);
  auto full = compact_pruned(w, GroupStructure{}, 1e-12);
  CHECK(full.reduced == w);
  CHECK(full.retained == std::vector<int>{0, 1, 2, 3, 4, 5});

  Matrix z = w;
  z.col(2).setZero();
  auto one = compact_pruned(z, GroupStructure{}, 0.0);
  CHECK(one.reduced.cols() == 5);
  CHECK(one.retained == std::vector<int>{0, 1, 3, 4, 5});

  CHECK_THROWS_AS(compact_pruned(Matrix::Zero(3, 3), GroupStructure{}), Error);
  CHECK_THROWS_AS(compact_pruned(w, GroupStructure{}, -1.0), ConfigError);
}

TEST_CASE("300x784 with 770 zero columns compacts to 300x14") {
  Matrix w = oracle::gaussian(300, 784, 51);
  std::vector<int> keep;
  for (int c = 0; c < 784; c += 56) keep.push_back(c);
  REQUIRE(keep.size() == 14);
  Matrix z = Matrix::Zero(300, 784);
  for (int c : keep) z.col(c) = w.col(c);
  const auto r = compact_pruned(z, GroupStructure{});
  CHECK(r.reduced.rows() == 300);
  CHECK(r.reduced.cols() == 14);
  CHECK(r.retained == keep);

  // gathering the retained inputs reproduces the full product exactly
  const Matrix x = oracle::gaussian(784, 3, 52);
  const Vector gathered = x.col(0)(r.retained);
  CHECK(oracle::dense_matvec(r.reduced, gathered) == oracle::dense_matvec(z, x.col(0)));

  Layer l = make_dense(784, 300, Activation::ReLU);
  l.weight = z;
  const auto raw = prune_dense_layer(l);
  CHECK(raw == keep);
  CHECK(l.weight.cols() == 14);
  CHECK(l.pooled());
  CHECK((l.weight * l.pool(x) - z * x).cwiseAbs().maxCoeff() < 1e-12);
}
