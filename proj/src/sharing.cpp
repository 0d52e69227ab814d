#include "lccnn/sharing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace lccnn {

Matrix column_similarity(const Matrix& w, bool normalize) {
  Matrix cols = w;
  if (normalize) {
    for (Eigen::Index c = 0; c < cols.cols(); ++c) {
      const double n = cols.col(c).norm();
      if (n > 0.0) cols.col(c) /= n;
    }
  }
  const Eigen::Index k = cols.cols();
  Matrix s(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    s(a, a) = 0.0;
    for (Eigen::Index b = a + 1; b < k; ++b) {
      const double d = -(cols.col(a) - cols.col(b)).squaredNorm();
      s(a, b) = d;
      s(b, a) = d;
    }
  }
  return s;
}

void ApOptions::validate() const {
  if (!(damping >= 0.5 && damping < 1.0)) throw ConfigError("damping must be in [0.5, 1)");
  if (max_iter < 1 || convergence_iter < 1) throw ConfigError("iteration limits must be >= 1");
  if (!(noise >= 0.0)) throw ConfigError("noise scale must be >= 0");
}

double median_off_diagonal(const Matrix& s) {
  std::vector<double> v;
  for (Eigen::Index i = 0; i < s.rows(); ++i)
    for (Eigen::Index j = 0; j < s.cols(); ++j)
      if (i != j) v.push_back(s(i, j));
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

namespace {

// labels from exemplar set by nearest similarity, exemplars to themselves
std::vector<int> assign(const Matrix& s, const std::vector<int>& ex) {
  const auto n = s.rows();
  std::vector<int> c(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    int best = 0;
    for (std::size_t k = 1; k < ex.size(); ++k) {
      if (s(i, ex[k]) > s(i, ex[static_cast<std::size_t>(best)])) best = static_cast<int>(k);
    }
    c[static_cast<std::size_t>(i)] = best;
  }
  for (std::size_t k = 0; k < ex.size(); ++k) c[static_cast<std::size_t>(ex[k])] = static_cast<int>(k);
  return c;
}

}  // namespace

ApResult affinity_propagation(const Matrix& s_in, const ApOptions& opts) {
  opts.validate();
  if (s_in.rows() != s_in.cols()) throw ShapeError("affinity propagation needs a square similarity matrix");
  const Eigen::Index n = s_in.rows();
  ApResult out;
  if (n == 0) return out;

  Matrix s = s_in;
  if (!opts.keep_diagonal) s.diagonal().setConstant(opts.preference.value_or(median_off_diagonal(s_in)));

  bool all_equal = true;
  for (Eigen::Index i = 0; i < n && all_equal; ++i)
    for (Eigen::Index j = 0; j < n && all_equal; ++j) all_equal = s(i, j) == s(0, 0);
  if (n == 1 || all_equal) {
    out.exemplars = {0};
    out.labels.assign(static_cast<std::size_t>(n), 0);
    return out;
  }

  if (opts.noise > 0.0) {
    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> g(0.0, 1.0);
    const double scale = opts.noise * std::max(s.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i; j < n; ++j) {
        const double e = scale * g(rng);
        s(i, j) += e;
        if (j != i) s(j, i) += e;
      }
    }
  }

  Matrix a = Matrix::Zero(n, n);
  Matrix r = Matrix::Zero(n, n);
  Matrix tmp(n, n);
  const double d = opts.damping;
  const int window = opts.convergence_iter;
  std::vector<std::vector<char>> history(static_cast<std::size_t>(n), std::vector<char>(static_cast<std::size_t>(window), 0));
  std::vector<char> e(static_cast<std::size_t>(n), 0);
  bool converged = false;
  int it = 0;
  for (; it < opts.max_iter; ++it) {
    // responsibilities
    tmp = a + s;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      double y = tmp(i, 0);
      for (Eigen::Index k = 1; k < n; ++k) {
        if (tmp(i, k) > y) {
          y = tmp(i, k);
          best = k;
        }
      }
      double y2 = -std::numeric_limits<double>::infinity();
      for (Eigen::Index k = 0; k < n; ++k) {
        if (k != best) y2 = std::max(y2, tmp(i, k));
      }
      for (Eigen::Index k = 0; k < n; ++k) {
        const double rn = k == best ? s(i, k) - y2 : s(i, k) - y;
        r(i, k) = d * r(i, k) + (1.0 - d) * rn;
      }
    }
    // availabilities
    tmp = r.cwiseMax(0.0);
    tmp.diagonal() = r.diagonal();
    const Eigen::RowVectorXd colsum = tmp.colwise().sum();
    for (Eigen::Index k = 0; k < n; ++k) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double neg = tmp(i, k) - colsum(k);  // -A_new
        const double an = i == k ? -neg : -std::max(neg, 0.0);
        a(i, k) = d * a(i, k) + (1.0 - d) * an;
      }
    }
    // convergence window
    int count = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      e[static_cast<std::size_t>(i)] = a(i, i) + r(i, i) > 0.0;
      history[static_cast<std::size_t>(i)][static_cast<std::size_t>(it % window)] = e[static_cast<std::size_t>(i)];
      count += e[static_cast<std::size_t>(i)];
    }
    if (it >= window) {
      bool stable = true;
      for (const auto& h : history) {
        const int sum = std::accumulate(h.begin(), h.end(), 0);
        if (sum != 0 && sum != window) {
          stable = false;
          break;
        }
      }
      if (stable && count > 0) {
        converged = true;
        break;
      }
    }
  }
  out.iterations = std::min(it + 1, opts.max_iter);
  out.converged = converged;

  std::vector<int> ex;
  for (Eigen::Index i = 0; i < n; ++i)
    if (e[static_cast<std::size_t>(i)]) ex.push_back(static_cast<int>(i));
  if (ex.empty()) {
    out.fallback = true;
    out.converged = false;
    out.exemplars.resize(static_cast<std::size_t>(n));
    std::iota(out.exemplars.begin(), out.exemplars.end(), 0);
    out.labels = out.exemplars;
    return out;
  }

  // refinement: each cluster's exemplar becomes its most central member
  std::vector<int> c = assign(s, ex);
  for (std::size_t k = 0; k < ex.size(); ++k) {
    std::vector<int> members;
    for (Eigen::Index i = 0; i < n; ++i)
      if (c[static_cast<std::size_t>(i)] == static_cast<int>(k)) members.push_back(static_cast<int>(i));
    int best = members.front();
    double best_sum = -std::numeric_limits<double>::infinity();
    for (int j : members) {
      double sum = 0.0;
      for (int i : members) sum += s(i, j);
      if (sum > best_sum) {
        best_sum = sum;
        best = j;
      }
    }
    ex[k] = best;
  }
  c = assign(s, ex);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = ex[static_cast<std::size_t>(c[static_cast<std::size_t>(i)])];
  std::vector<int> centers = labels;
  std::sort(centers.begin(), centers.end());
  centers.erase(std::unique(centers.begin(), centers.end()), centers.end());
  out.exemplars = centers;
  out.labels.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    out.labels[static_cast<std::size_t>(i)] = static_cast<int>(
        std::lower_bound(centers.begin(), centers.end(), labels[static_cast<std::size_t>(i)]) - centers.begin());
  }
  return out;
}

Vector centroid_gradient(const std::vector<Vector>& member_grads) {
  if (member_grads.empty()) throw Error("centroid_gradient: empty cluster");
  Vector sum = Vector::Zero(member_grads.front().size());
  for (const auto& g : member_grads) {
    if (g.size() != sum.size()) throw ShapeError("centroid_gradient: member gradients differ in length");
    sum += g;
  }
  return sum / static_cast<double>(member_grads.size());
}

void ClusterModel::validate(Eigen::Index columns) const {
  std::vector<int> seen(static_cast<std::size_t>(columns), 0);
  for (const auto& m : members) {
    if (m.empty()) throw Error("cluster model: empty cluster");
    for (int j : m) {
      if (j < 0 || j >= columns) throw Error("cluster model: member index out of range");
      if (seen[static_cast<std::size_t>(j)]++) throw Error("cluster model: column in two clusters");
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) throw Error("cluster model: clusters do not cover all columns");
  if (centroids.cols() != clusters()) throw ShapeError("cluster model: centroid count mismatch");
}

ClusterModel cluster_columns(const Matrix& w, const ApOptions& opts, bool normalize, ApResult* info) {
  const ApResult ap = affinity_propagation(column_similarity(w, normalize), opts);
  ClusterModel cm;
  cm.members.resize(ap.exemplars.size());
  for (std::size_t j = 0; j < ap.labels.size(); ++j) cm.members[static_cast<std::size_t>(ap.labels[j])].push_back(static_cast<int>(j));
  cm.centroids = Matrix::Zero(w.rows(), cm.clusters());
  for (int c = 0; c < cm.clusters(); ++c) {
    for (int j : cm.members[static_cast<std::size_t>(c)]) cm.centroids.col(c) += w.col(j);
    cm.centroids.col(c) /= static_cast<double>(cm.members[static_cast<std::size_t>(c)].size());
  }
  if (info) *info = ap;
  return cm;
}

void tie_layer(Layer& layer, const ClusterModel& clusters) {
  if (layer.kind != LayerKind::Dense) throw ConfigError("weight sharing applies to dense layers only");
  clusters.validate(layer.weight.cols());
  if (clusters.centroids.rows() != layer.weight.rows()) throw ShapeError("tie_layer: centroid length mismatch");
  std::vector<std::vector<int>> pools;
  for (const auto& m : clusters.members) {
    std::vector<int> pool;
    for (int j : m) {
      if (layer.pooled()) {
        const auto& p = layer.pools[static_cast<std::size_t>(j)];
        pool.insert(pool.end(), p.begin(), p.end());
      } else {
        pool.push_back(j);
      }
    }
    std::sort(pool.begin(), pool.end());
    pools.push_back(std::move(pool));
  }
  layer.weight = clusters.centroids;
  layer.pools = std::move(pools);
  layer.validate();
}

TrainStats retrain_shared(Model& model, const std::vector<int>& tied_layers,
                          const std::vector<std::vector<int>>& cluster_sizes, const Dataset& data,
                          const TrainConfig& cfg) {
  if (tied_layers.size() != cluster_sizes.size()) throw ConfigError("retrain_shared: one size list per tied layer");
  for (std::size_t t = 0; t < tied_layers.size(); ++t) {
    const auto l = static_cast<std::size_t>(tied_layers[t]);
    if (l >= model.layers.size() || static_cast<Eigen::Index>(cluster_sizes[t].size()) != model.layers[l].weight.cols()) {
      throw ShapeError("retrain_shared: cluster sizes do not match layer " + std::to_string(l));
    }
  }
  TrainHooks hooks;
  hooks.adjust_gradients = [&](Gradients& g) {
    for (std::size_t t = 0; t < tied_layers.size(); ++t) {
      auto& gw = g[static_cast<std::size_t>(tied_layers[t])].weight;
      for (Eigen::Index c = 0; c < gw.cols(); ++c) gw.col(c) /= static_cast<double>(cluster_sizes[t][static_cast<std::size_t>(c)]);
    }
  };
  return train(model, data, cfg, hooks);
}

Vector SharedLayer::matvec(const Vector& x) const {
  Vector pooled = Vector::Zero(static_cast<Eigen::Index>(index_sets.size()));
  for (std::size_t i = 0; i < index_sets.size(); ++i)
    for (int j : index_sets[i]) pooled(static_cast<Eigen::Index>(i)) += x(j);
  return centroids * pooled;
}

int SharedLayer::original_columns() const {
  int n = 0;
  for (const auto& s : index_sets) n += static_cast<int>(s.size());
  return n;
}

SharedLayer build_equivalent(const Matrix& w, const ClusterModel& clusters) {
  clusters.validate(w.cols());
  SharedLayer out;
  out.centroids = clusters.centroids;
  for (int c = 0; c < clusters.clusters(); ++c) {
    for (int j : clusters.members[static_cast<std::size_t>(c)]) {
      if ((w.col(j) - clusters.centroids.col(c)).cwiseAbs().maxCoeff() > 1e-9) {
        throw Error("build_equivalent: column " + std::to_string(j) + " deviates from its centroid");
      }
    }
    out.index_sets.push_back(clusters.members[static_cast<std::size_t>(c)]);
  }
  return out;
}

SharedLayer shared_from_layer(const Layer& layer) {
  if (layer.kind != LayerKind::Dense) throw ConfigError("shared_from_layer: dense layers only");
  SharedLayer out;
  out.centroids = layer.weight;
  if (layer.pooled()) {
    out.index_sets = layer.pools;
  } else {
    for (int j = 0; j < layer.weight.cols(); ++j) out.index_sets.push_back({j});
  }
  return out;
}

std::int64_t pooling_adds(const std::vector<std::vector<int>>& index_sets) {
  std::int64_t adds = 0;
  for (const auto& s : index_sets) adds += std::max<std::int64_t>(0, static_cast<std::int64_t>(s.size()) - 1);
  return adds;
}

CostReport shared_cost(const SharedLayer& layer, const FixedPointConfig& cfg) {
  CostReport r = csd_matrix_cost(layer.centroids, cfg);
  r.adds += pooling_adds(layer.index_sets);
  return r;
}

}  // namespace lccnn
