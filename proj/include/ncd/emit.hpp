#pragma once

#include <string>
#include <vector>

#include "ncd/diagram.hpp"

namespace ncd {

/// One plan step in SSA form. Values 0..n-1 are the domain segments; each
/// step defines fresh values.
struct PlanStep {
  enum class Kind { Contract, Apply };
  Kind kind = Kind::Contract;
  std::vector<int> inputs;
  std::vector<int> outputs;
  std::vector<TensorShape> in_shapes;
  std::vector<TensorShape> out_shapes;
  std::string index;  // Contract: "ab,bc->ac"
  Cell cell;          // Apply: the cell run as is
  std::string op;     // "contract" or the cell's display name
};

struct Plan {
  int num_inputs = 0;
  std::vector<PlanStep> steps;
  std::vector<int> outputs;  // value ids of the codomain segments
};

/// Lowers a diagram to steps. Runs of transposes, diagonals, cups, sums and
/// outer products (broadcasts included) fuse into one contraction.
Plan to_plan(const Diagram& d, const Bindings& bindings);

/// One JSON object per line; the last line returns the output values.
std::string plan_jsonl(const Plan& plan);

/// Standalone SVG, one column per section and one row per wire.
std::string to_svg(const Diagram& d, const Bindings& bindings);

}  // namespace ncd
