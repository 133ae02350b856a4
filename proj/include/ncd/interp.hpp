#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "ncd/diagram.hpp"
#include "ncd/tensor.hpp"

namespace ncd {

/// Learned weights by LinearParam name. A weight has shape in ++ out.
struct ParamStore {
  std::map<std::string, Tensor> weights;
  std::map<std::string, Tensor> biases;
};

struct Env {
  std::vector<Tensor> inputs;  // one per domain segment
  ParamStore params;
  Bindings bindings;
};

/// Runs the diagram section by section. Reductions sum in ascending index
/// order, so identical inputs give bit-identical outputs.
std::vector<Tensor> eval(const Diagram& d, const Env& env);
std::vector<Tensor> eval(const Diagram& d, const std::vector<Tensor>& inputs,
                         const ParamStore& params, const Bindings& bindings);

/// Matrix [out elements, in elements] of a linear diagram, column j being the
/// image of the j-th basis vector of the flattened domain.
Tensor materialize_linear(const Diagram& d, const ParamStore& params, const Bindings& bindings);

/// Largest domain or codomain element count materialize_linear accepts.
inline constexpr int64_t kMaterializeLimit = 10000;

/// Every LinearParam reachable from `d`, by name.
std::map<std::string, LinearParam> collect_params(const Diagram& d);
/// Random weights (and biases) for every LinearParam in `d`.
ParamStore random_params(const Diagram& d, const Bindings& bindings, std::mt19937_64& rng);
std::vector<Tensor> random_inputs(const DataShape& domain, const Bindings& bindings,
                                  std::mt19937_64& rng, double lo = -1.0, double hi = 1.0);

/// Concrete extents of every domain segment, after shape inference.
std::vector<std::vector<int64_t>> concrete_shapes(const DataShape& shape,
                                                  const Bindings& bindings);

/// Bindings completed by shape inference over `d`.
Bindings resolve_bindings(const Diagram& d, const Bindings& bindings);

}  // namespace ncd
