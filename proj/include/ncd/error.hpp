#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ncd {

enum class ErrorKind {
  ShapeMismatch,
  UnboundAxis,
  ConvArithmeticError,
  SegmentOutOfRange,
  SyntaxError,
  UndefinedName,
  NoMatch,
  NotLinear,
  BadAxisMove,
  NotMultilinear,
  NotDifferentiable,
  NotScalarLoss,
  TooLarge,
  EnvMismatch,
  Io,
};

std::string_view to_string(ErrorKind kind);

/// Source location, 1-based.
struct Span {
  int line = 0;
  int column = 0;
  int length = 1;
};

/// Every user-facing failure in the toolchain is one of these.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message, std::optional<Span> span = std::nullopt)
      : std::runtime_error(std::move(message)), kind_(kind), span_(span) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::optional<Span>& span() const noexcept { return span_; }

  /// Attaches a span if the error does not already carry one.
  Error with_span(Span span) const {
    Error copy = *this;
    if (!copy.span_) copy.span_ = span;
    return copy;
  }

 private:
  ErrorKind kind_;
  std::optional<Span> span_;
};

[[noreturn]] inline void fail(ErrorKind kind, std::string message) {
  throw Error(kind, std::move(message));
}

}  // namespace ncd
