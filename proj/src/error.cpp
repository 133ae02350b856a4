#include "ncd/error.hpp"

namespace ncd {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::UnboundAxis: return "UnboundAxis";
    case ErrorKind::ConvArithmeticError: return "ConvArithmeticError";
    case ErrorKind::SegmentOutOfRange: return "SegmentOutOfRange";
    case ErrorKind::SyntaxError: return "SyntaxError";
    case ErrorKind::UndefinedName: return "UndefinedName";
    case ErrorKind::NoMatch: return "NoMatch";
    case ErrorKind::NotLinear: return "NotLinear";
    case ErrorKind::BadAxisMove: return "BadAxisMove";
    case ErrorKind::NotMultilinear: return "NotMultilinear";
    case ErrorKind::NotDifferentiable: return "NotDifferentiable";
    case ErrorKind::NotScalarLoss: return "NotScalarLoss";
    case ErrorKind::TooLarge: return "TooLarge";
    case ErrorKind::EnvMismatch: return "EnvMismatch";
    case ErrorKind::Io: return "Io";
  }
  return "Error";
}

}  // namespace ncd
