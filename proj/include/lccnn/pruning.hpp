#pragma once

// Group lasso: penalty, block soft thresholding, proximal updates and
// compaction of pruned weight matrices.

#include "lccnn/nncore.hpp"

#include <vector>

namespace lccnn {

enum class GroupKind : std::uint8_t { Dense = 0, ConvFK = 1, ConvPK = 2 };

std::string to_string(GroupKind k);
GroupKind parse_group_kind(const std::string& s);

/// Maps a layer weight to the group matrix whose rows are the groups.
///  Dense: W^T (one group per input column).
///  ConvFK: row k*N + n is kernel (n, k) flattened row-major.
///  ConvPK: row k*N*O + n*O + t is column t of kernel (n, k).
struct GroupStructure {
  GroupKind kind = GroupKind::Dense;
  ConvShape conv;

  static GroupStructure for_layer(const Layer& layer, GroupKind conv_kind = GroupKind::ConvFK);

  Matrix map(const Matrix& w) const;
  Matrix unmap(const Matrix& groups, Eigen::Index rows, Eigen::Index cols) const;
  Eigen::Index group_count(const Matrix& w) const;
};

struct RegConfig {
  double lambda = 0.0;
  double lr = 0.001;

  void validate() const;
};

double group_lasso_penalty(const Matrix& groups, double lambda);

/// Rows with norm <= t become exactly zero, others shrink by (1 - t/norm).
Matrix block_soft_threshold(const Matrix& groups, double t);

/// Gradient step on W followed by the group prox with threshold lr*lambda;
/// the bias takes a plain gradient step.
void proximal_step(Layer& layer, const Matrix& grad_w, const Vector& grad_b, const RegConfig& cfg,
                   const GroupStructure& gs);

/// Prox only, used after an optimizer step.
void apply_prox(Layer& layer, const GroupStructure& gs, double t);

std::vector<double> group_norms(const Matrix& w, const GroupStructure& gs);
int count_zero_groups(const Matrix& w, const GroupStructure& gs, double tol = 1e-12);

struct CompactResult {
  Matrix reduced;  // dense: N x kept columns; conv: kept group rows
  std::vector<int> retained;
};

/// Drops groups whose norm is <= tol. Throws Error when nothing is left.
CompactResult compact_pruned(const Matrix& w, const GroupStructure& gs, double tol = 1e-12);

/// Removes zero input columns from a dense layer; the layer's pools then
/// gather the retained raw inputs. Returns the retained raw indices.
std::vector<int> prune_dense_layer(Layer& layer, double tol = 1e-12);

}  // namespace lccnn
