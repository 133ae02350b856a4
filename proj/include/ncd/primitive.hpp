#pragma once

#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ncd/shape.hpp"

namespace ncd {

// The closed kernel set. Positional parameters (axis indices) are relative to
// the single tensor segment the primitive acts on.

struct Identity {
  bool operator==(const Identity&) const = default;
};
struct Copy {
  bool operator==(const Copy&) const = default;
};
struct Delete {
  bool operator==(const Delete&) const = default;
};
/// Exchanges the first and last of `span` consecutive segments.
struct SegmentSwap {
  int span = 2;
  bool operator==(const SegmentSwap&) const = default;
};
/// Output axis i is input axis perm[i].
struct AxisTranspose {
  std::vector<int> perm;
  bool operator==(const AxisTranspose&) const = default;
};
/// Merges two equal-length axes; the merged axis sits at min(first, second).
struct Diag {
  int first = 0;
  int second = 1;
  bool operator==(const Diag&) const = default;
};
struct View {
  TensorShape in;
  TensorShape out;
  bool operator==(const View&) const = default;
};
struct IndexKet {
  int axis = 0;
  int64_t index = 0;
  bool operator==(const IndexKet&) const = default;
};
struct OuterProduct {
  bool operator==(const OuterProduct&) const = default;
};
/// Contracts two equal-length axes (trace).
struct Cup {
  int first = 0;
  int second = 1;
  bool operator==(const Cup&) const = default;
};
/// x -> x (x) I_a : appends two axes of length a.
struct Unit {
  Axis axis;
  bool operator==(const Unit&) const = default;
};

enum class EwFn { Relu, Gelu, Exp, Neg, Scale, AddConst, Recip, Sqrt, Step, DGelu, DRecip, DSqrt };

struct ElementWise {
  EwFn fn = EwFn::Relu;
  double param = 0.0;  // scale(c) / addc(c)
  bool operator==(const ElementWise&) const = default;
};
/// SoftMax over a rank-1 segment; lifted to other axes by broadcasting.
struct SoftMax {
  bool operator==(const SoftMax&) const = default;
};
struct Add {
  bool operator==(const Add&) const = default;
};
struct SumAxis {
  int axis = 0;
  bool operator==(const SumAxis&) const = default;
};
/// Learned map with weight tensor of shape in ++ out (and bias of shape out).
struct LinearParam {
  std::string name;
  TensorShape in;
  TensorShape out;
  bool bias = false;
  bool operator==(const LinearParam&) const = default;
};
/// The 0/1 convolution tensor: [x_0..x_{r-1}] -> [y_0..y_{r-1}, k_0..k_{r-1}],
/// entry 1 iff x_i = s*y_i + d*k_i - pad on every dimension.
struct ConvTensor {
  std::vector<ConvDim> dims;
  int rank() const { return static_cast<int>(dims.size()); }
  bool operator==(const ConvTensor&) const = default;
};

enum class PoolKind { Max, Mean, ArgMax };

/// Reduces a whole segment to a scalar (max / mean); ArgMax yields the
/// one-hot mask of the lowest-index maximum, same shape as the input.
struct Pool {
  PoolKind kind = PoolKind::Max;
  bool operator==(const Pool&) const = default;
};
/// Takes no segments and produces the scalar `value`.
struct ConstScalar {
  double value = 0.0;
  bool operator==(const ConstScalar&) const = default;
};

struct Primitive;

/// Associated transpose of a single-segment linear primitive. The associated
/// tensor of `base` has axes (base input axes ++ base output axes); this map
/// reads its input along `in_axes` and writes its output along `out_axes`.
struct AssocTranspose {
  std::shared_ptr<const Primitive> base;
  TensorShape base_in;
  std::vector<int> in_axes;
  std::vector<int> out_axes;
  bool operator==(const AssocTranspose& o) const;
};

struct Primitive {
  using Op = std::variant<Identity, Copy, Delete, SegmentSwap, AxisTranspose, Diag, View,
                          IndexKet, OuterProduct, Cup, Unit, ElementWise, SoftMax, Add, SumAxis,
                          LinearParam, ConvTensor, Pool, ConstScalar, AssocTranspose>;
  Op op;

  template <typename T>
  const T* as() const {
    return std::get_if<T>(&op);
  }
  template <typename T>
  bool is() const {
    return std::holds_alternative<T>(op);
  }

  bool operator==(const Primitive&) const = default;
};

template <typename T>
Primitive prim(T op) {
  return Primitive{Primitive::Op{std::move(op)}};
}

/// Number of tensor segments consumed.
int input_arity(const Primitive& p);

/// Local typing rule. Throws ShapeMismatch / SegmentOutOfRange /
/// ConvArithmeticError.
std::vector<TensorShape> output_shapes(const Primitive& p, const std::vector<TensorShape>& in,
                                       Bindings& bindings);

/// Static linearity table: no biased LinearParam, no non-scale ElementWise,
/// no SoftMax / Pool max / ArgMax, no constants, no outer products.
bool is_linear(const Primitive& p);

/// Short display name ("linear W", "softmax", "ew relu" ...).
std::string display_name(const Primitive& p);

std::string ew_name(const ElementWise& e);
std::optional<EwFn> ew_from_name(const std::string& name);
double ew_apply(const ElementWise& e, double x);

}  // namespace ncd
