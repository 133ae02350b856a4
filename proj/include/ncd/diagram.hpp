#pragma once

#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "ncd/primitive.hpp"
#include "ncd/shape.hpp"

namespace ncd {

/// One broadcast level on a cell. Outer scopes add the axis to every input
/// segment; inner scopes add it only to the `targets` segments and share the
/// rest. Either way every output segment gains the leading axis.
struct BroadcastScope {
  Axis axis;
  bool inner = false;
  std::vector<int> targets;  // inner only, relative to the cell's inputs

  bool operator==(const BroadcastScope&) const = default;
};

struct Diagram;

struct Cell {
  using Body = std::variant<Primitive, std::shared_ptr<const Diagram>>;

  Body body;
  std::vector<BroadcastScope> broadcasts;  // outermost first

  const Primitive* primitive() const { return std::get_if<Primitive>(&body); }
  const Diagram* nested() const;

  bool operator==(const Cell& o) const;
};

struct Section {
  std::vector<Cell> cells;
  bool operator==(const Section&) const = default;
};

struct Diagram {
  std::string name;       // empty for anonymous nested blocks
  std::string arg = "x";  // signature argument name, kept for printing
  DataShape domain;
  DataShape codomain;
  std::vector<Section> sections;

  bool operator==(const Diagram& o) const;
};

Cell make_cell(Primitive p, std::vector<BroadcastScope> broadcasts = {});
Cell make_cell(Diagram d, std::vector<BroadcastScope> broadcasts = {});
Cell identity_cell();

bool is_identity(const Cell& c);
/// Segments consumed / produced.
int input_arity(const Cell& c);
int output_arity(const Cell& c);
/// Every primitive in the cell (recursively) is linear.
bool is_linear(const Cell& c);

/// Local typing of one cell, broadcasts included.
std::vector<TensorShape> cell_outputs(const Cell& c, const std::vector<TensorShape>& in,
                                      Bindings& bindings);
/// Input shapes as the cell body sees them, broadcast axes removed.
std::vector<TensorShape> body_inputs(const Cell& c, std::vector<TensorShape> in);
/// A diagram as one cell: a lone cell is hoisted (scopes prepended), an empty
/// diagram is the identity, anything else nests anonymously.
Cell as_cell(Diagram body, std::vector<BroadcastScope> scopes = {});

/// Typing of one section against an input boundary.
DataShape section_output(const Section& s, const DataShape& in, Bindings& bindings);
/// First segment index consumed by cell `idx` of `s`.
int cell_offset(const Section& s, size_t idx);

/// Every section boundary (sections.size() + 1 shapes); checks the codomain.
/// Errors name the failing section and cell.
std::vector<DataShape> infer_shapes(const Diagram& d, Bindings& bindings);

Diagram identity_diagram(DataShape shape);
/// A one-section diagram applying `c` to the whole of `domain`.
Diagram single_cell(Cell c, DataShape domain, Bindings& bindings);

Diagram compose_seq(const Diagram& f, const Diagram& g, Bindings& bindings);
Diagram compose_seq(const Diagram& f, const Diagram& g);
Diagram stack(const Diagram& f, const Diagram& g);
Diagram broadcast(const Diagram& f, const Axis& axis);
Diagram inner_broadcast(const Diagram& f, const Axis& axis, std::vector<int> targets);
Diagram inner_broadcast(const Diagram& f, const Axis& axis, int target);

/// "S.C": section S, cell C (0-based).
struct CellAddress {
  int section = 0;
  int cell = 0;
};
CellAddress parse_address(const std::string& text);
std::string to_string(const CellAddress& a);
const Cell& cell_at(const Diagram& d, const CellAddress& a);

/// Incremental construction: each applied cell becomes one section, with
/// identity cells filling the untouched segments.
class Builder {
 public:
  Builder(DataShape domain, Bindings& bindings, std::string name = "", std::string arg = "x");

  const DataShape& state() const { return state_; }
  /// Applies `c` starting at segment `at`.
  Builder& apply(Cell c, int at = 0);
  /// Appends a full section (cells must tile the current state).
  Builder& section(Section s);
  /// Moves segment `from` to position `to` using adjacent swaps.
  Builder& move_segment(int from, int to);
  /// Checks the declared codomain (if any) and returns the diagram.
  Diagram finish(const DataShape* codomain = nullptr);

 private:
  Diagram d_;
  DataShape state_;
  Bindings& bindings_;
};

}  // namespace ncd
