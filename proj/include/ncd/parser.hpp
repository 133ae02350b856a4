#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ncd/ast.hpp"
#include "ncd/diagram.hpp"

namespace ncd {

/// Parses `.ncd` text. Throws SyntaxError carrying the offending span.
ast::File parse(std::string_view text);

/// Canonical source text for an AST (one step per line).
std::string print(const ast::File& file);

/// A lowered compilation unit.
struct Program {
  std::vector<std::pair<std::string, int64_t>> axes;  // as declared (after overrides)
  std::vector<LinearParam> params;
  std::vector<Diagram> diagrams;  // definition order
  Bindings bindings;              // declared, overridden and inferred lengths

  const Diagram* find(const std::string& name) const;
  /// Throws UndefinedName.
  const Diagram& get(const std::string& name) const;
};

/// Lowers and type-checks every diagram. `overrides` replace declared axis
/// lengths. Errors carry the span of the step that failed.
Program lower(const ast::File& file, const Bindings& overrides = {});
Program compile(std::string_view text, const Bindings& overrides = {});

/// Canonical DSL for a whole program; parse + lower gives back the same IR.
std::string format(const Program& program);
/// One diagram definition, as it would appear inside `program`.
std::string format(const Diagram& d, const Program& program);

/// The AST a diagram prints as.
ast::DiagramDecl unlower(const Diagram& d, const Bindings& bindings);

}  // namespace ncd
