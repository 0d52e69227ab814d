#include "lccnn/pruning.hpp"

#include <cmath>

namespace lccnn {

std::string to_string(GroupKind k) {
  switch (k) {
    case GroupKind::Dense: return "dense";
    case GroupKind::ConvFK: return "fk";
    case GroupKind::ConvPK: return "pk";
  }
  return "?";
}

GroupKind parse_group_kind(const std::string& s) {
  if (s == "dense") return GroupKind::Dense;
  if (s == "fk" || s == "FK") return GroupKind::ConvFK;
  if (s == "pk" || s == "PK") return GroupKind::ConvPK;
  throw ConfigError("unknown group kind '" + s + "'");
}

GroupStructure GroupStructure::for_layer(const Layer& layer, GroupKind conv_kind) {
  GroupStructure gs;
  if (layer.kind == LayerKind::Conv) {
    if (conv_kind == GroupKind::Dense) throw ConfigError("conv layers need an FK or PK group structure");
    gs.kind = conv_kind;
    gs.conv = layer.conv;
  }
  return gs;
}

Eigen::Index GroupStructure::group_count(const Matrix& w) const {
  switch (kind) {
    case GroupKind::Dense: return w.cols();
    case GroupKind::ConvFK: return static_cast<Eigen::Index>(conv.in_maps) * conv.out_maps;
    case GroupKind::ConvPK: return static_cast<Eigen::Index>(conv.in_maps) * conv.out_maps * conv.kernel;
  }
  return 0;
}

Matrix GroupStructure::map(const Matrix& w) const {
  if (kind == GroupKind::Dense) return w.transpose();
  const int n_maps = conv.out_maps;
  const int k_maps = conv.in_maps;
  const int o = conv.kernel;
  if (w.rows() != n_maps || w.cols() != k_maps * o * o) throw ShapeError("group map: conv weight shape mismatch");
  if (kind == GroupKind::ConvFK) {
    Matrix g(k_maps * n_maps, o * o);
    for (int k = 0; k < k_maps; ++k)
      for (int n = 0; n < n_maps; ++n) g.row(k * n_maps + n) = w.row(n).segment(k * o * o, o * o);
    return g;
  }
  Matrix g(k_maps * n_maps * o, o);
  for (int k = 0; k < k_maps; ++k)
    for (int n = 0; n < n_maps; ++n)
      for (int t = 0; t < o; ++t)
        for (int i = 0; i < o; ++i) g(k * n_maps * o + n * o + t, i) = w(n, k * o * o + i * o + t);
  return g;
}

Matrix GroupStructure::unmap(const Matrix& groups, Eigen::Index rows, Eigen::Index cols) const {
  if (kind == GroupKind::Dense) {
    if (groups.rows() != cols || groups.cols() != rows) throw ShapeError("group unmap: shape mismatch");
    return groups.transpose();
  }
  const int n_maps = conv.out_maps;
  const int k_maps = conv.in_maps;
  const int o = conv.kernel;
  if (rows != n_maps || cols != k_maps * o * o) throw ShapeError("group unmap: conv weight shape mismatch");
  Matrix w(rows, cols);
  if (kind == GroupKind::ConvFK) {
    if (groups.rows() != k_maps * n_maps || groups.cols() != o * o) throw ShapeError("group unmap: shape mismatch");
    for (int k = 0; k < k_maps; ++k)
      for (int n = 0; n < n_maps; ++n) w.row(n).segment(k * o * o, o * o) = groups.row(k * n_maps + n);
    return w;
  }
  if (groups.rows() != k_maps * n_maps * o || groups.cols() != o) throw ShapeError("group unmap: shape mismatch");
  for (int k = 0; k < k_maps; ++k)
    for (int n = 0; n < n_maps; ++n)
      for (int t = 0; t < o; ++t)
        for (int i = 0; i < o; ++i) w(n, k * o * o + i * o + t) = groups(k * n_maps * o + n * o + t, i);
  return w;
}

void RegConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be finite and >= 0");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
}

double group_lasso_penalty(const Matrix& groups, double lambda) {
  if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
  return lambda * groups.rowwise().norm().sum();
}

Matrix block_soft_threshold(const Matrix& groups, double t) {
  if (t < 0.0) throw ConfigError("threshold must be >= 0");
  Matrix out = groups;
  if (t == 0.0) return out;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double norm = out.row(r).norm();
    if (norm <= t) {
      out.row(r).setZero();
    } else {
      out.row(r) *= 1.0 - t / norm;
    }
  }
  return out;
}

void apply_prox(Layer& layer, const GroupStructure& gs, double t) {
  if (t == 0.0) return;
  layer.weight = gs.unmap(block_soft_threshold(gs.map(layer.weight), t), layer.weight.rows(), layer.weight.cols());
}

void proximal_step(Layer& layer, const Matrix& grad_w, const Vector& grad_b, const RegConfig& cfg,
                   const GroupStructure& gs) {
  cfg.validate();
  if (grad_w.rows() != layer.weight.rows() || grad_w.cols() != layer.weight.cols() || grad_b.size() != layer.bias.size()) {
    throw ShapeError("proximal_step: gradient shape mismatch");
  }
  layer.weight -= cfg.lr * grad_w;
  layer.bias -= cfg.lr * grad_b;
  apply_prox(layer, gs, cfg.lr * cfg.lambda);
}

std::vector<double> group_norms(const Matrix& w, const GroupStructure& gs) {
  const Vector norms = gs.map(w).rowwise().norm();
  return {norms.data(), norms.data() + norms.size()};
}

int count_zero_groups(const Matrix& w, const GroupStructure& gs, double tol) {
  int zeros = 0;
  for (double n : group_norms(w, gs)) zeros += n <= tol;
  return zeros;
}

CompactResult compact_pruned(const Matrix& w, const GroupStructure& gs, double tol) {
  if (tol < 0.0) throw ConfigError("tolerance must be >= 0");
  const Matrix groups = gs.map(w);
  CompactResult out;
  for (Eigen::Index r = 0; r < groups.rows(); ++r) {
    if (groups.row(r).norm() > tol) out.retained.push_back(static_cast<int>(r));
  }
  if (out.retained.empty()) throw Error("every group was pruned; the layer is degenerate");
  if (gs.kind == GroupKind::Dense) {
    out.reduced = w(Eigen::all, out.retained);
  } else {
    out.reduced = groups(out.retained, Eigen::all);
  }
  return out;
}

std::vector<int> prune_dense_layer(Layer& layer, double tol) {
  if (layer.kind != LayerKind::Dense) throw ConfigError("prune_dense_layer: not a dense layer");
  const auto compact = compact_pruned(layer.weight, GroupStructure{}, tol);
  std::vector<std::vector<int>> pools;
  std::vector<int> raw;
  for (int c : compact.retained) {
    if (layer.pooled()) {
      pools.push_back(layer.pools[static_cast<std::size_t>(c)]);
    } else {
      pools.push_back({c});
    }
    raw.insert(raw.end(), pools.back().begin(), pools.back().end());
  }
  layer.weight = compact.reduced;
  layer.pools = std::move(pools);
  return raw;
}

}  // namespace lccnn
