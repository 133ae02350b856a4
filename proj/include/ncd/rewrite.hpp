#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ncd/diagram.hpp"

namespace ncd {

struct RewriteResult {
  Diagram diagram;
  bool matched = false;
};

/// Axes of the associated tensor (base input ++ base output) that the
/// transposed map reads and writes. Both empty: full transpose.
struct AxisMoves {
  std::vector<int> in_axes;
  std::vector<int> out_axes;
  bool full() const { return in_axes.empty() && out_axes.empty(); }
};

/// "full", or "1,2->0" (input axes -> output axes). Throws BadAxisMove.
AxisMoves parse_axis_moves(const std::string& text);

/// Replaces the first unit whose fresh pair is immediately consumed by a cup
/// against an original axis. No match leaves `d` unchanged.
RewriteResult snake_reduce(const Diagram& d, const Bindings& bindings);
/// Same, at the unit cell "S.C".
RewriteResult snake_reduce_at(const Diagram& d, const CellAddress& unit, const Bindings& bindings);

/// Exchanges sections `section` and `section + 1`. Either they act on
/// disjoint segments, or one is a broadcast linear map and the other a
/// positional linear primitive confined to the broadcast axes.
Diagram naturality_swap(const Diagram& d, int section, const Bindings& bindings);

/// The associated transpose of a single-segment linear primitive with input
/// `in`, in its most direct form.
Primitive transpose_primitive(const Primitive& p, const TensorShape& in, const AxisMoves& moves,
                              Bindings& bindings);
/// Replaces the addressed cell by its associated transpose.
Diagram transpose_linear(const Diagram& d, const CellAddress& at, const AxisMoves& moves,
                         const Bindings& bindings);
/// Same map as transpose_linear, spelled with units, the original cell and cups.
Diagram transpose_plumbing(const Diagram& d, const CellAddress& at, const AxisMoves& moves,
                           const Bindings& bindings);

/// Splits a two-segment multilinear cell into an outer product followed by a
/// single-segment linear map.
Diagram factor_multilinear(const Diagram& d, const CellAddress& at, const Bindings& bindings);

/// Removes length-1 axes from every boundary. Primitives whose layout depends
/// on them are wrapped in views.
Diagram drop_unit_axes(const Diagram& d, const Bindings& bindings);

/// drop_unit_axes, then snake_reduce to a fixpoint, then identity sections removed.
Diagram normalize(const Diagram& d, const Bindings& bindings);

struct RewriteRule {
  std::string name;
  /// Locations where the rule applies.
  std::function<std::vector<std::string>(const Diagram&, const Bindings&)> sites;
  std::function<Diagram(const Diagram&, const std::string& site, const Bindings&)> apply;
};

/// snake, naturality, transpose, factor, drop_units, normalize.
const std::vector<RewriteRule>& rewrite_rules();
const RewriteRule& rewrite_rule(const std::string& name);

}  // namespace ncd
