#include "lccnn/sharing.hpp"

#include "ap_oracle.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <numeric>
#include <random>
#include <set>

using namespace lccnn;

namespace {

void check_partition(const ApResult& r, int n) {
  REQUIRE(static_cast<int>(r.labels.size()) == n);
  for (int l : r.labels) {
    CHECK(l >= 0);
    CHECK(l < static_cast<int>(r.exemplars.size()));
  }
  for (std::size_t k = 0; k < r.exemplars.size(); ++k) CHECK(r.labels[static_cast<std::size_t>(r.exemplars[k])] == static_cast<int>(k));
}

}  // namespace

TEST_CASE("column similarity") {
  Matrix w(3, 3);
  w << 1, 0, 1, 0, 1, 0, 0, 0, 0;
  const Matrix s = column_similarity(w);
  CHECK(s(0, 2) == 0.0);
  CHECK(s(0, 1) == -2.0);
  CHECK(s.diagonal().isZero(0.0));
  const Matrix r = column_similarity(oracle::gaussian(5, 6, 1));
  CHECK(r == r.transpose());
  Matrix scaled = w;
  scaled.col(2) *= 3.0;
  CHECK(column_similarity(scaled, true)(0, 2) == 0.0);
}

TEST_CASE("affinity propagation small cases") {
  const ApResult one = affinity_propagation(Matrix::Zero(1, 1));
  CHECK(one.exemplars == std::vector<int>{0});
  CHECK(one.labels == std::vector<int>{0});

  // two tight pairs far apart
  Matrix pts(1, 4);
  pts << 0.0, 0.01, 10.0, 10.02;
  const ApResult pairs = affinity_propagation(column_similarity(pts));
  CHECK(pairs.exemplars.size() == 2);
  CHECK(pairs.labels[0] == pairs.labels[1]);
  CHECK(pairs.labels[2] == pairs.labels[3]);
  CHECK(pairs.labels[0] != pairs.labels[2]);
  CHECK(pairs.converged);

  // identical points form one cluster with the lowest index as exemplar
  const ApResult same = affinity_propagation(column_similarity(Matrix::Ones(3, 5)));
  CHECK(same.exemplars == std::vector<int>{0});
  CHECK(same.labels == std::vector<int>(5, 0));
}

TEST_CASE("affinity propagation matches the exhaustive exemplar oracle") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> un(3, 8);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = un(rng);
    const Matrix s = oracle::blob_similarity(n, 1000 + trial);
    ApOptions o;
    o.keep_diagonal = true;
    const ApResult r = affinity_propagation(s, o);
    check_partition(r, n);
    CAPTURE(trial);
    CHECK(r.exemplars == oracle::best_exemplars(s));
  }
}

TEST_CASE("affinity propagation partitions larger instances") {
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix pts = oracle::gaussian(3, 100, 2000 + trial);
    const ApResult r = affinity_propagation(column_similarity(pts));
    check_partition(r, 100);
    CHECK(!r.exemplars.empty());
  }
}

TEST_CASE("cluster count grows with the preference") {
  const Matrix s = column_similarity(oracle::gaussian(2, 40, 77));
  const double med = median_off_diagonal(s);
  std::size_t prev = 0;
  for (double scale : {10.0, 1.0, 0.1}) {
    ApOptions o;
    o.preference = med * scale;  // similarities are negative: larger scale, lower preference
    const auto r = affinity_propagation(s, o);
    CHECK(r.exemplars.size() >= prev);
    prev = r.exemplars.size();
  }
}

TEST_CASE("AP option validation") {
  ApOptions o;
  o.damping = 0.4;
  CHECK_THROWS_AS(affinity_propagation(Matrix::Zero(2, 2), o), ConfigError);
  CHECK_THROWS_AS(affinity_propagation(Matrix::Zero(2, 3)), ShapeError);
}

TEST_CASE("centroid gradient") {
  Vector g(2);
  g << 0.5, -1.0;
  CHECK(centroid_gradient({g, -g}).isZero(0.0));
  CHECK(centroid_gradient({g}) == g);
  Vector a(2), b(2), c(2);
  a << 1, 0;
  b << 0, 1;
  c << 2, 2;
  CHECK(centroid_gradient({a, b, c}) == Vector::Ones(2));
  CHECK_THROWS(centroid_gradient({}));
}

TEST_CASE("tied layer gradient is the member sum and the averaged update is its mean") {
  Model m = make_mlp({6, 4, 3}, 5);
  ClusterModel cm;
  cm.members = {{0, 2, 5}, {1}, {3, 4}};
  cm.centroids = oracle::gaussian(4, 3, 6);
  Layer untied = m.layers[0];
  tie_layer(m.layers[0], cm);

  const Matrix x = oracle::gaussian(6, 5, 7);
  const std::vector<int> labels{0, 1, 2, 1, 0};
  const auto tied = backward(m, x, labels).grads;

  // untied model with every member column set to its centroid
  Model u = m;
  u.layers[0] = untied;
  for (int c = 0; c < 3; ++c)
    for (int j : cm.members[static_cast<std::size_t>(c)]) u.layers[0].weight.col(j) = cm.centroids.col(c);
  const auto free = backward(u, x, labels).grads;
  for (int c = 0; c < 3; ++c) {
    std::vector<Vector> members;
    Vector sum = Vector::Zero(4);
    for (int j : cm.members[static_cast<std::size_t>(c)]) {
      members.push_back(free[0].weight.col(j));
      sum += members.back();
    }
    CHECK((tied[0].weight.col(c) - sum).norm() < 1e-12);
    const double size = static_cast<double>(members.size());
    CHECK((centroid_gradient(members) - tied[0].weight.col(c) / size).norm() < 1e-12);
  }

  // central differences on a centroid (moves every member together)
  const double eps = 1e-4;
  Matrix numeric(4, 3);
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 4; ++r) {
      Model p = m;
      p.layers[0].weight(r, c) += eps;
      Model q = m;
      q.layers[0].weight(r, c) -= eps;
      numeric(r, c) = (batch_loss(p, x, labels) - batch_loss(q, x, labels)) / (2 * eps);
    }
  CHECK((numeric - tied[0].weight).norm() / tied[0].weight.norm() <= 1e-4);
}

TEST_CASE("tied retraining matches a re-parameterized single-column model") {
  // y = 1.5 (x0 + x1) - x2 with x0, x1 tied
  Dataset d;
  d.features = oracle::gaussian(3, 128, 11);
  Dataset summed;
  summed.features.resize(2, 128);
  summed.features.row(0) = d.features.row(0) + d.features.row(1);
  summed.features.row(1) = d.features.row(2);
  for (int i = 0; i < 128; ++i) {
    const double y = 1.5 * summed.features(0, i) - summed.features(1, i);
    d.labels.push_back(y > 0.0 ? 1 : 0);
  }
  summed.labels = d.labels;

  Model tied;
  tied.layers.push_back(make_dense(3, 2, Activation::Identity));
  tied.layers[0].weight = oracle::gaussian(2, 3, 12);
  ClusterModel cm;
  cm.members = {{0, 1}, {2}};
  cm.centroids.resize(2, 2);
  cm.centroids.col(0) = 0.5 * (tied.layers[0].weight.col(0) + tied.layers[0].weight.col(1));
  cm.centroids.col(1) = tied.layers[0].weight.col(2);
  tie_layer(tied.layers[0], cm);

  Model ref;
  ref.layers.push_back(make_dense(2, 2, Activation::Identity));
  ref.layers[0].weight = cm.centroids;

  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.lr = 0.05;
  cfg.batch_size = 16;
  SUBCASE("zero epochs keep the centroids") {
    cfg.epochs = 0;
    retrain_shared(tied, {0}, {{2, 1}}, d, cfg);
    CHECK(tied.layers[0].weight == cm.centroids);
  }
  SUBCASE("averaged gradient equals training the summed feature at lr / |C|") {
    retrain_shared(tied, {0}, {{2, 1}}, d, cfg);
    // column 0 of the reference gets half the step
    TrainHooks half;
    half.adjust_gradients = [](Gradients& g) { g[0].weight.col(0) *= 0.5; };
    train(ref, summed, cfg, half);
    CHECK(tied.layers[0].weight == ref.layers[0].weight);
    const SharedLayer sl = shared_from_layer(tied.layers[0]);
    const Vector x = d.features.col(3);
    Matrix untied(2, 3);
    untied << sl.centroids.col(0), sl.centroids.col(0), sl.centroids.col(1);
    CHECK(untied.col(0) == untied.col(1));
    CHECK((sl.matvec(x) - untied * x).norm() < 1e-12);
  }
  SUBCASE("all singletons is ordinary training") {
    Model plain;
    plain.layers.push_back(make_dense(3, 2, Activation::Identity));
    plain.layers[0].weight = oracle::gaussian(2, 3, 13);
    Model single = plain;
    ClusterModel s;
    s.members = {{0}, {1}, {2}};
    s.centroids = plain.layers[0].weight;
    tie_layer(single.layers[0], s);
    retrain_shared(single, {0}, {{1, 1, 1}}, d, cfg);
    train(plain, d, cfg);
    CHECK(single.layers[0].weight == plain.layers[0].weight);
  }
}

TEST_CASE("equivalent shared layer") {
  const Matrix w = oracle::gaussian(5, 4, 21);
  ClusterModel singles;
  singles.members = {{0}, {1}, {2}, {3}};
  singles.centroids = w;
  const SharedLayer s1 = build_equivalent(w, singles);
  CHECK(s1.centroids == w);
  CHECK(pooling_adds(s1.index_sets) == 0);

  // {a, a, b, b}
  Matrix ab(5, 4);
  ab << w.col(0), w.col(0), w.col(1), w.col(1);
  ClusterModel two;
  two.members = {{0, 1}, {2, 3}};
  two.centroids.resize(5, 2);
  two.centroids << w.col(0), w.col(1);
  const SharedLayer s2 = build_equivalent(ab, two);
  CHECK(s2.centroids.cols() == 2);
  for (int t = 0; t < 10; ++t) {
    const Vector x = oracle::gaussian(4, 1, 30 + t).col(0);
    CHECK((s2.matvec(x) - ab * x).cwiseAbs().maxCoeff() <= 1e-12);
  }

  // one cluster of equal columns
  Matrix eq(5, 4);
  eq << w.col(2), w.col(2), w.col(2), w.col(2);
  ClusterModel all;
  all.members = {{0, 1, 2, 3}};
  all.centroids = w.col(2);
  const SharedLayer s3 = build_equivalent(eq, all);
  const Vector x = Vector::LinSpaced(4, 1.0, 4.0);
  CHECK((s3.matvec(x) - w.col(2) * 10.0).norm() < 1e-12);
  CHECK(pooling_adds(s3.index_sets) == 3);

  Matrix off = ab;
  off(0, 1) += 1e-6;
  CHECK_THROWS(build_equivalent(off, two));
}

TEST_CASE("shared cost") {
  CHECK(pooling_adds({{0, 1, 2}, {3, 4}, {5}}) == 3);
  SharedLayer s;
  s.centroids.resize(2, 2);
  s.centroids << 2, 0.375, 3.75, 1;
  s.index_sets = {{0, 1, 2}, {3}};
  const CostReport c = shared_cost(s, FixedPointConfig{});
  CHECK(c.adds == 4 + 2);
  CHECK(c.shifts == 6);
}

TEST_CASE("clustering the columns of a layer") {
  // three distinct prototypes, each duplicated with tiny perturbations
  const Matrix proto = oracle::gaussian(6, 3, 41);
  Matrix w(6, 9);
  const Matrix noise = oracle::gaussian(6, 9, 42) * 1e-3;
  for (int j = 0; j < 9; ++j) w.col(j) = proto.col(j % 3) + noise.col(j);
  ApResult info;
  const ClusterModel cm = cluster_columns(w, {}, false, &info);
  CHECK(cm.clusters() == 3);
  cm.validate(9);
  for (const auto& m : cm.members) {
    for (int j : m) CHECK(j % 3 == m.front() % 3);
  }
  Layer l = make_dense(9, 6, Activation::ReLU);
  l.weight = w;
  tie_layer(l, cm);
  CHECK(l.weight.cols() == 3);
  int covered = 0;
  for (const auto& p : l.pools) covered += static_cast<int>(p.size());
  CHECK(covered == 9);
}
