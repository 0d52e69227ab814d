#include "lccnn/convlower.hpp"

namespace lccnn {

std::string to_string(ConvMethod m) { return m == ConvMethod::PK ? "pk" : "fk"; }

ConvMethod parse_conv_method(const std::string& s) {
  if (s == "fk" || s == "FK") return ConvMethod::FK;
  if (s == "pk" || s == "PK") return ConvMethod::PK;
  throw ConfigError("unknown convolution lowering '" + s + "' (expected fk or pk)");
}

namespace {

void check_kernels(const Matrix& kernels, const ConvShape& s) {
  s.validate();
  if (kernels.rows() != s.out_maps || kernels.cols() != s.in_maps * s.kernel * s.kernel) {
    throw ShapeError("kernel tensor does not match the convolution shape");
  }
}

}  // namespace

std::vector<Matrix> fk_matrices(const Matrix& kernels, const ConvShape& s) {
  check_kernels(kernels, s);
  const int oo = s.kernel * s.kernel;
  std::vector<Matrix> out;
  for (int k = 0; k < s.in_maps; ++k) out.push_back(kernels.middleCols(k * oo, oo));
  return out;
}

std::vector<Matrix> pk_matrices(const Matrix& kernels, const ConvShape& s) {
  check_kernels(kernels, s);
  const int o = s.kernel;
  std::vector<Matrix> out;
  for (int k = 0; k < s.in_maps; ++k) {
    Matrix w(s.out_maps * o, o);
    for (int n = 0; n < s.out_maps; ++n)
      for (int t = 0; t < o; ++t)
        for (int i = 0; i < o; ++i) w(n * o + t, i) = kernels(n, k * o * o + i * o + t);
    out.push_back(std::move(w));
  }
  return out;
}

std::int64_t LoweredConv::positions() const {
  const std::int64_t p = shape.out_size();
  return method == ConvMethod::FK ? p * p : p * shape.input_size;
}

LoweredConv lower_conv(const Matrix& kernels, const ConvShape& shape, ConvMethod method) {
  LoweredConv lc;
  lc.method = method;
  lc.shape = shape;
  lc.mats = method == ConvMethod::FK ? fk_matrices(kernels, shape) : pk_matrices(kernels, shape);
  return lc;
}

Vector conv_forward(const LoweredConv& lc, const Vector& x, const MapMatvec& matvec, ConvTally* tally) {
  const ConvShape& s = lc.shape;
  const int z = s.input_size;
  const int o = s.kernel;
  const int p = s.out_size();
  const int n_maps = s.out_maps;
  if (x.size() != s.in_maps * z * z) throw ShapeError("conv_forward: input length mismatch");
  if (static_cast<int>(lc.mats.size()) != s.in_maps) throw ShapeError("conv_forward: one matrix per input map expected");
  if (tally) *tally = ConvTally{std::vector<std::int64_t>(static_cast<std::size_t>(s.in_maps), 0), 0};

  Vector y = Vector::Zero(static_cast<Eigen::Index>(n_maps) * p * p);
  std::vector<char> touched(static_cast<std::size_t>(y.size()), 0);
  auto accumulate = [&](Eigen::Index idx, double v) {
    if (touched[static_cast<std::size_t>(idx)]) {
      y(idx) += v;
      if (tally) ++tally->accumulation_adds;
    } else {
      y(idx) = v;
      touched[static_cast<std::size_t>(idx)] = 1;
    }
  };

  for (int k = 0; k < s.in_maps; ++k) {
    const auto map = x.segment(static_cast<Eigen::Index>(k) * z * z, z * z);
    if (lc.method == ConvMethod::FK) {
      Vector patch(o * o);
      for (int r = 0; r < p; ++r)
        for (int c = 0; c < p; ++c) {
          for (int i = 0; i < o; ++i)
            for (int j = 0; j < o; ++j) patch(i * o + j) = map((r + i) * z + c + j);
          const Vector part = matvec(k, patch);
          if (tally) ++tally->matvecs[static_cast<std::size_t>(k)];
          for (int n = 0; n < n_maps; ++n) accumulate(static_cast<Eigen::Index>(n) * p * p + r * p + c, part(n));
        }
    } else {
      Vector seg(o);
      for (int r = 0; r < p; ++r)
        for (int col = 0; col < z; ++col) {
          for (int i = 0; i < o; ++i) seg(i) = map((r + i) * z + col);
          const Vector part = matvec(k, seg);
          if (tally) ++tally->matvecs[static_cast<std::size_t>(k)];
          // segment at column col feeds output column c = col - t through kernel column t
          for (int t = 0; t < o; ++t) {
            const int c = col - t;
            if (c < 0 || c >= p) continue;
            for (int n = 0; n < n_maps; ++n) accumulate(static_cast<Eigen::Index>(n) * p * p + r * p + c, part(n * o + t));
          }
        }
    }
  }
  return y;
}

Vector conv_forward(const LoweredConv& lc, const Vector& x) {
  return conv_forward(lc, x, [&](int k, const Vector& v) { return Vector(lc.mats[static_cast<std::size_t>(k)] * v); });
}

Matrix conv_group_matrix(const LoweredConv& lc) {
  Eigen::Index rows = 0;
  for (const auto& m : lc.mats) rows += m.rows();
  if (lc.mats.empty()) return {};
  Matrix g(rows, lc.mats.front().cols());
  Eigen::Index at = 0;
  for (const auto& m : lc.mats) {
    g.middleRows(at, m.rows()) = m;
    at += m.rows();
  }
  return g;
}

std::int64_t conv_addition_cost(const LoweredConv& lc, const std::vector<std::int64_t>& per_matrix_adds) {
  const ConvShape& s = lc.shape;
  if (static_cast<int>(per_matrix_adds.size()) != s.in_maps) throw ShapeError("conv_addition_cost: one count per input map");
  std::int64_t sum = 0;
  for (auto a : per_matrix_adds) sum += a;
  const std::int64_t p2 = static_cast<std::int64_t>(s.out_size()) * s.out_size();
  const std::int64_t n = s.out_maps;
  const std::int64_t cross = static_cast<std::int64_t>(s.in_maps - 1) * n * p2;
  if (lc.method == ConvMethod::FK) return sum * p2 + cross;
  return sum * lc.positions() + static_cast<std::int64_t>(s.in_maps) * (s.kernel - 1) * n * p2 + cross;
}

}  // namespace lccnn
