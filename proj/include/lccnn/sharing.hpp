#pragma once

// Weight sharing: affinity propagation over weight columns, tied retraining
// with averaged centroid gradients, and the pooled equivalent layer.

#include "lccnn/nncore.hpp"
#include "lccnn/numerics.hpp"

#include <optional>
#include <vector>

namespace lccnn {

/// s(a, b) = -||w_a - w_b||^2, optionally on unit-normalized columns.
Matrix column_similarity(const Matrix& w, bool normalize = false);

struct ApOptions {
  double damping = 0.5;
  int max_iter = 200;
  int convergence_iter = 15;
  /// Diagonal preference; the median off-diagonal similarity when unset.
  std::optional<double> preference;
  /// Use the input diagonal as per-point preferences instead.
  bool keep_diagonal = false;
  double noise = 1e-12;  // relative to the largest |similarity|
  std::uint64_t seed = 0;

  void validate() const;
};

struct ApResult {
  std::vector<int> exemplars;  // sorted point indices
  std::vector<int> labels;     // cluster index per point, into exemplars
  int iterations = 0;
  bool converged = true;
  bool fallback = false;  // no exemplar emerged; every point is its own cluster
};

/// Responsibility/availability message passing with damping, followed by
/// the usual exemplar refinement. The diagonal of s is replaced by the preference
/// unless keep_diagonal is set.
ApResult affinity_propagation(const Matrix& s, const ApOptions& opts = {});

double median_off_diagonal(const Matrix& s);

/// Arithmetic mean of member gradients. Throws Error on an empty list.
Vector centroid_gradient(const std::vector<Vector>& member_grads);

/// Partition of a layer's columns with one centroid per cluster.
struct ClusterModel {
  std::vector<std::vector<int>> members;  // column indices, each sorted
  Matrix centroids;                       // N x C

  int clusters() const { return static_cast<int>(members.size()); }
  void validate(Eigen::Index columns) const;
};

/// Clusters the columns of w and sets each centroid to its members' mean.
ClusterModel cluster_columns(const Matrix& w, const ApOptions& opts = {}, bool normalize = false,
                             ApResult* info = nullptr);

/// Replaces the layer weight by the centroids; each pool becomes the union of
/// its members' pools, so forward(x) uses W_tied = centroid per member column.
void tie_layer(Layer& layer, const ClusterModel& clusters);

/// Tied retraining: gradients of tied layers are divided by the cluster size,
/// which turns the summed member gradient into the mean of the members.
TrainStats retrain_shared(Model& model, const std::vector<int>& tied_layers,
                          const std::vector<std::vector<int>>& cluster_sizes, const Dataset& data,
                          const TrainConfig& cfg);

/// Centroids G (N x C) and the raw input indices pooled per centroid.
struct SharedLayer {
  Matrix centroids;
  std::vector<std::vector<int>> index_sets;

  Vector matvec(const Vector& x) const;
  int original_columns() const;
};

/// Builds the shared layer from an untied weight whose member columns already
/// equal their centroids. Throws Error beyond 1e-9 deviation.
SharedLayer build_equivalent(const Matrix& w, const ClusterModel& clusters);
/// Reads a tied dense layer directly.
SharedLayer shared_from_layer(const Layer& layer);

std::int64_t pooling_adds(const std::vector<std::vector<int>>& index_sets);
CostReport shared_cost(const SharedLayer& layer, const FixedPointConfig& cfg);

}  // namespace lccnn
