#include "lccnn/adder_program.hpp"

#include <cmath>

namespace lccnn {

std::int64_t AdderProgram::additions() const {
  std::int64_t adds = 0;
  for (const auto& n : nodes) adds += n.right ? 1 : 0;
  return adds;
}

namespace {

using Handle = std::optional<Operand>;

Handle scale(const Handle& h, const PowTerm& t) {
  if (!h) return std::nullopt;
  return Operand{h->index, h->exponent + t.exponent, h->sign * t.sign};
}

// Folds a list of operands into a chain of add nodes; returns the handle of the sum.
Handle sum_into(AdderProgram& p, const std::vector<Operand>& terms) {
  if (terms.empty()) return std::nullopt;
  Operand acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) {
    p.nodes.push_back({acc, terms[i]});
    acc = Operand{p.n_inputs + static_cast<int>(p.nodes.size()) - 1, 0, 1};
  }
  return acc;
}

}  // namespace

AdderProgram to_adder_program(const LccDecomposition& d) {
  AdderProgram p;
  p.n_inputs = d.cols;
  std::vector<std::vector<Operand>> partials(static_cast<std::size_t>(d.rows));

  for (const auto& s : d.slices) {
    std::vector<Handle> prev(static_cast<std::size_t>(s.width()));
    for (int j = 0; j < s.width(); ++j) prev[static_cast<std::size_t>(j)] = Operand{s.col_begin + j, 0, 1};
    for (const auto& f : s.factors) {
      std::vector<Handle> cur(static_cast<std::size_t>(f.out_dim));
      for (int r = 0; r < f.out_dim; ++r) {
        std::vector<Operand> terms;
        for (const auto& t : f.rows[static_cast<std::size_t>(r)]) {
          if (auto h = scale(prev[static_cast<std::size_t>(t.source)], t)) terms.push_back(*h);
        }
        cur[static_cast<std::size_t>(r)] = sum_into(p, terms);
      }
      prev = std::move(cur);
    }
    if (s.factors.empty()) continue;
    for (int r = 0; r < d.rows; ++r) {
      if (const auto& h = prev[static_cast<std::size_t>(r)]) partials[static_cast<std::size_t>(r)].push_back(*h);
    }
  }

  p.outputs.resize(static_cast<std::size_t>(d.rows));
  for (int r = 0; r < d.rows; ++r) p.outputs[static_cast<std::size_t>(r)] = sum_into(p, partials[static_cast<std::size_t>(r)]);
  return p;
}

std::vector<double> execute_program(const AdderProgram& p, std::span<const double> x) {
  if (static_cast<int>(x.size()) != p.n_inputs) throw ShapeError("execute_program: input length mismatch");
  std::vector<double> values(x.begin(), x.end());
  values.reserve(x.size() + p.nodes.size());
  auto read = [&values](const Operand& o) {
    return o.sign * std::ldexp(values[static_cast<std::size_t>(o.index)], o.exponent);
  };
  for (const auto& n : p.nodes) {
    double v = read(n.left);
    if (n.right) v += read(*n.right);
    values.push_back(v);
  }
  std::vector<double> y(p.outputs.size(), 0.0);
  for (std::size_t r = 0; r < p.outputs.size(); ++r) {
    if (p.outputs[r]) y[r] = read(*p.outputs[r]);
  }
  return y;
}

Vector execute_program(const AdderProgram& p, const Vector& x) {
  const auto y = execute_program(p, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
  return Eigen::Map<const Vector>(y.data(), static_cast<Eigen::Index>(y.size()));
}

}  // namespace lccnn
