#pragma once

// Executable shift-add form of an LCC decomposition.

#include "lccnn/lcc.hpp"

#include <optional>
#include <span>
#include <vector>

namespace lccnn {

/// sign * 2^exponent * value[index], where indices [0, n_inputs) are program
/// inputs and index n_inputs + j is node j.
struct Operand {
  int index = 0;
  int exponent = 0;
  int sign = 1;

  friend bool operator==(const Operand&, const Operand&) = default;
};

struct AdderNode {
  Operand left;
  std::optional<Operand> right;
};

/// Nodes only reference inputs and earlier nodes, so the list order is a
/// valid evaluation order. An empty output is the constant 0.
struct AdderProgram {
  int n_inputs = 0;
  std::vector<AdderNode> nodes;
  std::vector<std::optional<Operand>> outputs;

  std::int64_t additions() const;
};

AdderProgram to_adder_program(const LccDecomposition& d);

std::vector<double> execute_program(const AdderProgram& p, std::span<const double> x);
Vector execute_program(const AdderProgram& p, const Vector& x);

inline std::int64_t count_additions(const AdderProgram& p) { return p.additions(); }

}  // namespace lccnn
