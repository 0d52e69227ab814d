#pragma once

// Convolution as matrix-vector products: FK (whole flattened kernels) and PK
// (kernel columns) lowerings, one matrix per input map.

#include "lccnn/nncore.hpp"

#include <functional>
#include <vector>

namespace lccnn {

enum class ConvMethod : std::uint8_t { FK = 0, PK = 1 };

std::string to_string(ConvMethod m);
ConvMethod parse_conv_method(const std::string& s);

/// Kernels use the conv layer layout: N x (K*O*O), entry (n, k*O*O + i*O + j).
/// FK: K matrices N x O^2, row n = kernel (n, k) flattened row-major.
std::vector<Matrix> fk_matrices(const Matrix& kernels, const ConvShape& shape);
/// PK: K matrices N*O x O, row n*O + t = column t of kernel (n, k).
std::vector<Matrix> pk_matrices(const Matrix& kernels, const ConvShape& shape);

struct LoweredConv {
  ConvMethod method = ConvMethod::FK;
  ConvShape shape;
  std::vector<Matrix> mats;

  /// Matrix-vector products per input map for one input (FK: P^2, PK: P*Z).
  std::int64_t positions() const;
};

LoweredConv lower_conv(const Matrix& kernels, const ConvShape& shape, ConvMethod method);

/// Runs matrix k on a vector; lets compiled adder programs replace W_k x.
using MapMatvec = std::function<Vector(int, const Vector&)>;

struct ConvTally {
  std::vector<std::int64_t> matvecs;  // per input map
  std::int64_t accumulation_adds = 0;
};

/// Output (n, r, c) flattened, without bias. Cross-correlation, stride 1, valid.
Vector conv_forward(const LoweredConv& lc, const Vector& x, const MapMatvec& matvec, ConvTally* tally = nullptr);
Vector conv_forward(const LoweredConv& lc, const Vector& x);

/// Vertical stack of the per-map matrices; its rows are the pruning groups.
Matrix conv_group_matrix(const LoweredConv& lc);

/// Layer additions for one input given the additions of each W_k.
///  FK: P^2 (sum_k adds_k + (K-1) N)
///  PK: sum_k adds_k P Z + K (O-1) N P^2 + (K-1) N P^2
/// The PK partial sums take O-1 additions per output element and input map.
std::int64_t conv_addition_cost(const LoweredConv& lc, const std::vector<std::int64_t>& per_matrix_adds);

}  // namespace lccnn
