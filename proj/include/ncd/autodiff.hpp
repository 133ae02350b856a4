#pragma once

#include <vector>

#include "ncd/diagram.hpp"
#include "ncd/interp.hpp"

namespace ncd {

/// Forward rule for one primitive: a diagram on (x0, u0, x1, u1, ...) giving
/// (y0, v0, ...), value before tangent. Linear in the tangents.
Diagram forward_rule(const Primitive& p, const std::vector<TensorShape>& in, Bindings& bindings);
/// Reverse rule: a diagram on (x..., g...) giving the input cotangents.
Diagram reverse_rule(const Primitive& p, const std::vector<TensorShape>& in, Bindings& bindings);

/// Section-wise (_,D_) transform: every segment becomes a value and a
/// tangent segment. Throws NotDifferentiable naming the cell.
Diagram forward_transform(const Diagram& d, const Bindings& bindings);

/// (x..., w...) -> (dx...), with w the cotangent of the codomain. Values of
/// every boundary are kept on the way forward and consumed on the way back.
Diagram reverse_transform(const Diagram& d, const Bindings& bindings);

enum class GradMode { Forward, Reverse };

/// Gradient of a scalar-valued diagram, domain -> domain. Forward mode probes
/// every input direction at once by broadcasting the tangent map over a unit;
/// reverse mode seeds the cotangent 1. Throws NotScalarLoss.
Diagram grad_pipeline(const Diagram& d, GradMode mode, const Bindings& bindings);

/// Diagram (x...) -> (dy_0, ..., dy_{m-1}) where dy_o has a leading axis over
/// the flattened directions of input segment `segment`.
Diagram jacobian_probe(const Diagram& d, int segment, const Bindings& bindings);

/// Jacobian at `point`: rows are the flattened outputs (all segments in
/// order), columns the flattened inputs. Throws TooLarge past 10^4 entries.
Tensor jacobian_materialize(const Diagram& d, const std::vector<Tensor>& point,
                            const ParamStore& params, const Bindings& bindings);

inline constexpr int64_t kJacobianLimit = 10000;

}  // namespace ncd
