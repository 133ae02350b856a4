#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ncd/error.hpp"

namespace ncd::ast {

struct AxisLit {
  bool width = false;
  std::string name;   // empty for integer literals
  int64_t value = 0;  // integer literal
  Span span;
};

struct Shape {
  std::vector<AxisLit> axes;
  Span span;
};

/// segment:position
struct AxisRef {
  int segment = 0;
  int position = 0;
  Span span;
};

/// map a: (outer) or map a@i,j: (inner, targeting the listed segments).
struct MapPrefix {
  AxisLit axis;
  bool inner = false;
  std::vector<int> targets;
  Span span;
};

enum class OpKind {
  Linear, Ew, Softmax, Copy, Delete, Swap, Transpose, Diag, View, Index, Outer, Cup,
  Unit, Sum, Add, Conv, Pool, Const, Call, Par, Adjoint,
};

struct Step;

struct Branch {
  std::optional<int> arity;  // "(n)" prefix; default one segment
  std::vector<Step> steps;
  Span span;
};

struct Op {
  OpKind kind = OpKind::Softmax;
  Span span;
  std::string name;                 // linear / ew / call / pool kind
  std::optional<double> param;      // ew scale(c) / addc(c)
  std::vector<int> segments;        // copy, delete, swap, outer, add, transpose
  std::vector<int> perm;            // transpose
  std::vector<AxisRef> refs;        // diag, cup, index, sum
  int64_t index = 0;                // index
  Shape in, out;                    // view; adjoint base input in `in`
  AxisLit axis;                     // unit
  int conv_rank = 0;
  std::vector<int64_t> kernel, stride, dilation, pad, out_extent;  // conv
  double value = 0.0;               // const
  std::vector<Branch> branches;     // par
  std::vector<int> in_axes, out_axes;  // adjoint
  std::vector<Step> base;           // adjoint: exactly one step
};

struct Step {
  std::vector<MapPrefix> maps;  // outermost first
  Op op;
  Span span;
};

struct AxesDecl {
  struct Entry {
    std::string name;
    int64_t value = 0;
    Span span;
  };
  std::vector<Entry> entries;
  Span span;
};

struct ParamDecl {
  std::string name;
  Shape in, out;
  bool bias = false;
  Span span;
};

struct DiagramDecl {
  std::string name;
  std::string arg;
  std::vector<Shape> domain;
  std::vector<Shape> codomain;
  std::vector<Step> steps;
  Span span;
};

using Item = std::variant<AxesDecl, ParamDecl, DiagramDecl>;

struct File {
  std::vector<Item> items;
};

}  // namespace ncd::ast
