#include "ncd/autodiff.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "ncd/error.hpp"
#include "ncd/rewrite.hpp"

namespace ncd {

namespace {

Cell cell_of(Primitive p) { return make_cell(std::move(p)); }

std::vector<TensorShape> slice(const DataShape& d, int off, int n) {
  return {d.segments.begin() + off, d.segments.begin() + off + n};
}

// x (.) y for two equally shaped segments at `at`, `at + 1`: the scalar
// product broadcast over every axis.
void hadamard(Builder& bl, int at) {
  std::vector<BroadcastScope> scopes;
  for (const auto& axis : bl.state()[at].axes) scopes.push_back(BroadcastScope{axis});
  bl.apply(make_cell(prim(OuterProduct{}), std::move(scopes)), at);
}

// Reorders segments from `at` on so they read `want` (labels of the region).
void arrange(Builder& bl, int at, std::vector<int> labels, const std::vector<int>& want) {
  for (size_t t = 0; t < want.size(); ++t) {
    const auto it = std::find(labels.begin() + t, labels.end(), want[t]);
    const int from = static_cast<int>(it - labels.begin());
    if (from == static_cast<int>(t)) continue;
    bl.move_segment(at + from, at + static_cast<int>(t));
    const int v = labels[from];
    labels.erase(labels.begin() + from);
    labels.insert(labels.begin() + t, v);
  }
}

// [b0..bn) at `at` -> [b0..bn, b0..bn).
void duplicate(Builder& bl, int at, int n) {
  for (int i = 0; i < n; ++i) bl.apply(cell_of(prim(Copy{})), at + 2 * i);
  std::vector<int> labels, want;
  for (int i = 0; i < n; ++i) {
    labels.push_back(i);
    labels.push_back(n + i);
  }
  for (int i = 0; i < 2 * n; ++i) want.push_back(i);
  arrange(bl, at, labels, want);
}

std::optional<ElementWise> derivative(const ElementWise& e) {
  switch (e.fn) {
    case EwFn::Relu: return ElementWise{EwFn::Step};
    case EwFn::Gelu: return ElementWise{EwFn::DGelu};
    case EwFn::Exp: return ElementWise{EwFn::Exp};
    case EwFn::Recip: return ElementWise{EwFn::DRecip};
    case EwFn::Sqrt: return ElementWise{EwFn::DSqrt};
    case EwFn::Step: return ElementWise{EwFn::Scale, 0.0};
    default: return std::nullopt;
  }
}

[[noreturn]] void not_differentiable(const Primitive& p) {
  fail(ErrorKind::NotDifferentiable, fmt::format("{} has no derivative rule", display_name(p)));
}

// [s, g] at `at`, s = softmax(x) -> [s (.) g - s (s . g)].
void softmax_tangent(Builder& bl, int at) {
  bl.apply(cell_of(prim(Copy{})), at);           // s s g
  hadamard(bl, at + 1);                          // s t
  bl.apply(cell_of(prim(Copy{})), at + 1);       // s t t
  bl.apply(cell_of(prim(SumAxis{0})), at + 2);   // s t c
  bl.move_segment(at + 1, at);                   // t s c
  bl.apply(cell_of(prim(OuterProduct{})), at + 1);
  bl.apply(cell_of(prim(ElementWise{EwFn::Neg})), at + 1);
  bl.apply(cell_of(prim(Add{})), at);
}

LinearParam without_bias(LinearParam l) {
  l.bias = false;
  return l;
}

std::vector<BroadcastScope> doubled_scopes(std::vector<BroadcastScope> scopes) {
  for (auto& s : scopes) {
    std::vector<int> t;
    for (int i : s.targets) {
      t.push_back(2 * i);
      t.push_back(2 * i + 1);
    }
    s.targets = std::move(t);
  }
  return scopes;
}

// Cells covering exactly the segments `body` acts on.
std::vector<Cell> splice(Diagram body, const std::vector<BroadcastScope>& scopes) {
  const bool outer_only = std::none_of(scopes.begin(), scopes.end(),
                                       [](const BroadcastScope& s) { return s.inner; });
  if (body.sections.size() == 1 && outer_only) {
    std::vector<Cell> cells = body.sections[0].cells;
    for (auto& c : cells) {
      if (!is_identity(c)) c.broadcasts.insert(c.broadcasts.begin(), scopes.begin(), scopes.end());
    }
    return cells;
  }
  const int n_in = static_cast<int>(body.domain.size());
  Cell c = as_cell(std::move(body), scopes);
  if (is_identity(c) && n_in != 1) {
    return std::vector<Cell>(n_in, identity_cell());
  }
  return {c};
}

DataShape interleaved(const DataShape& d) {
  DataShape out;
  for (const auto& s : d.segments) {
    out.segments.push_back(s);
    out.segments.push_back(s);
  }
  return out;
}

class Forward {
 public:
  explicit Forward(Bindings& b) : b_(b) {}

  Diagram diagram(const Diagram& d, std::string name) {
    const auto bounds = infer_shapes(d, b_);
    Diagram out;
    out.name = std::move(name);
    out.arg = d.arg;
    out.domain = interleaved(d.domain);
    out.codomain = interleaved(d.codomain);
    for (size_t k = 0; k < d.sections.size(); ++k) {
      const Section& s = d.sections[k];
      Section t;
      for (size_t i = 0; i < s.cells.size(); ++i) {
        const Cell& c = s.cells[i];
        try {
          auto cells = cell(c, slice(bounds[k], cell_offset(s, i), input_arity(c)));
          t.cells.insert(t.cells.end(), cells.begin(), cells.end());
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::NotDifferentiable) throw;
          const std::string where = d.name.empty() ? "" : d.name + ": ";
          throw Error(e.kind(), fmt::format("{}cell {}.{}: {}", where, k, i, e.what()));
        }
      }
      out.sections.push_back(std::move(t));
    }
    return out;
  }

 private:
  std::vector<Cell> cell(const Cell& c, const std::vector<TensorShape>& in) {
    if (is_identity(c)) return {c, c};
    if (const Primitive* p = c.primitive()) {
      if (is_linear(*p) && input_arity(*p) == 1 && output_arity(c) == 1) return {c, c};
      if (auto l = p->as<LinearParam>()) {
        return {c, make_cell(prim(without_bias(*l)), c.broadcasts)};
      }
      return splice(forward_rule(*p, body_inputs(c, in), b_), doubled_scopes(c.broadcasts));
    }
    return splice(diagram(*c.nested(), ""), doubled_scopes(c.broadcasts));
  }

  Bindings& b_;
};

class Reverse {
 public:
  explicit Reverse(Bindings& b) : b_(b) {}

  Diagram diagram(const Diagram& d, std::string name) {
    const auto bounds = infer_shapes(d, b_);
    DataShape dom = d.domain;
    dom.segments.insert(dom.segments.end(), d.codomain.segments.begin(),
                        d.codomain.segments.end());
    Builder bl(dom, b_, std::move(name), d.arg);

    // Forward sweep keeping a copy of every boundary.
    int base = 0;
    for (size_t k = 0; k < d.sections.size(); ++k) {
      const int nk = static_cast<int>(bounds[k].size());
      duplicate(bl, base, nk);
      base += nk;
      Section s;
      for (int i = 0; i < base; ++i) s.cells.push_back(identity_cell());
      s.cells.insert(s.cells.end(), d.sections[k].cells.begin(), d.sections[k].cells.end());
      for (size_t i = 0; i < d.codomain.size(); ++i) s.cells.push_back(identity_cell());
      bl.section(std::move(s));
    }
    for (size_t i = 0; i < d.codomain.size(); ++i) bl.apply(cell_of(prim(Delete{})), base);

    for (int k = static_cast<int>(d.sections.size()) - 1; k >= 0; --k) {
      base -= static_cast<int>(bounds[k].size());
      try {
        section(bl, d.sections[k], bounds[k], base);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::NotDifferentiable) throw;
        const std::string where = d.name.empty() ? "" : d.name + ": ";
        throw Error(e.kind(), fmt::format("{}section {}: {}", where, k, e.what()));
      }
    }
    return bl.finish(&d.domain);
  }

 private:
  // State from `base`: [x (section input), g (section output cotangent)].
  void section(Builder& bl, const Section& s, const DataShape& in, int base) {
    const int n = static_cast<int>(in.size());
    std::vector<int> labels, want;
    const int total = static_cast<int>(bl.state().size()) - base;
    for (int i = 0; i < total; ++i) labels.push_back(i);
    int xi = 0, gi = n;
    for (const auto& c : s.cells) {
      for (int i = 0; i < input_arity(c); ++i) want.push_back(xi++);
      for (int i = 0; i < output_arity(c); ++i) want.push_back(gi++);
    }
    arrange(bl, base, labels, want);

    Section t;
    for (int i = 0; i < base; ++i) t.cells.push_back(identity_cell());
    for (size_t i = 0; i < s.cells.size(); ++i) {
      const Cell& c = s.cells[i];
      try {
        auto cells = cell(c, slice(in, cell_offset(s, i), input_arity(c)));
        t.cells.insert(t.cells.end(), cells.begin(), cells.end());
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::NotDifferentiable) throw;
        throw Error(e.kind(), fmt::format("cell {}: {}", i, e.what()));
      }
    }
    bl.section(std::move(t));
  }

  std::vector<Cell> cell(const Cell& c, const std::vector<TensorShape>& in) {
    if (is_identity(c)) return {cell_of(prim(Delete{})), identity_cell()};
    // Shapes at each broadcast level, outermost first.
    std::vector<std::vector<TensorShape>> levels{in};
    for (const auto& scope : c.broadcasts) {
      Cell one = identity_cell();
      one.broadcasts = {scope};
      auto next = levels.back();
      levels.push_back(body_inputs(one, next));
    }
    Diagram r = c.primitive() ? reverse_rule(*c.primitive(), levels.back(), b_)
                              : diagram(*c.nested(), "");
    const int n = static_cast<int>(in.size());
    const int m = output_arity(c);
    for (int i = static_cast<int>(c.broadcasts.size()) - 1; i >= 0; --i) {
      const BroadcastScope& scope = c.broadcasts[i];
      if (!scope.inner) {
        r = broadcast(r, scope.axis);
        continue;
      }
      std::vector<int> targets = scope.targets;
      for (int o = 0; o < m; ++o) targets.push_back(n + o);
      r = inner_broadcast(r, scope.axis, targets);
      Section sums;
      bool any = false;
      for (int s = 0; s < n; ++s) {
        const bool hit = std::find(scope.targets.begin(), scope.targets.end(), s) !=
                         scope.targets.end();
        sums.cells.push_back(hit ? identity_cell() : cell_of(prim(SumAxis{0})));
        any = any || !hit;
      }
      if (any) {
        Diagram reduce = identity_diagram(r.codomain);
        reduce.sections.push_back(sums);
        reduce.codomain = section_output(sums, r.codomain, b_);
        r = compose_seq(r, reduce, b_);
      }
    }
    return splice(std::move(r), {});
  }

  Bindings& b_;
};

// Identity tensor over `a` viewed as [N, a...] with N the flattened extent,
// appended at the end of the state.
Axis append_identity(Builder& bl, const TensorShape& a) {
  const int at = static_cast<int>(bl.state().size());
  bl.apply(cell_of(prim(ConstScalar{1.0})), at);
  const int r = static_cast<int>(a.rank());
  if (r == 0) {
    const Axis n = Axis::of(1);
    bl.apply(cell_of(prim(View{TensorShape{}, shape_of({n})})), at);
    return n;
  }
  for (const auto& axis : a.axes) bl.apply(cell_of(prim(Unit{axis})), at);
  if (r == 1) return a.axes[0];
  std::vector<int> perm;
  for (int i = 0; i < r; ++i) perm.push_back(2 * i);
  for (int i = 0; i < r; ++i) perm.push_back(2 * i + 1);
  bl.apply(cell_of(prim(AxisTranspose{perm})), at);
  const Axis n{a.elements()};
  TensorShape from = a, to = shape_of({n});
  from.axes.insert(from.axes.end(), a.axes.begin(), a.axes.end());
  to.axes.insert(to.axes.end(), a.axes.begin(), a.axes.end());
  bl.apply(cell_of(prim(View{from, to})), at);
  return n;
}

// Region [x...] from `at` (the end of the state) -> [dy_0..dy_{m-1}], each
// with a leading axis over the directions of segment i.
Axis probe(Builder& bl, int at, const Diagram& d, const Diagram& fwd, int i) {
  const int n = static_cast<int>(d.domain.size());
  const int m = static_cast<int>(d.codomain.size());
  for (int j = n - 1; j >= 0; --j) {
    if (j == i) continue;
    bl.apply(cell_of(prim(Copy{})), at + j);
    bl.apply(cell_of(prim(ElementWise{EwFn::Scale, 0.0})), at + j + 1);
  }
  // [x0 z0 .. xi .. x_{n-1} z_{n-1}]; the tangent of segment i goes after xi.
  const Axis axis = append_identity(bl, d.domain[i]);
  bl.move_segment(static_cast<int>(bl.state().size()) - 1, at + 2 * i + 1);
  bl.apply(make_cell(fwd, {BroadcastScope{axis, true, {2 * i + 1}}}), at);
  for (int o = 0; o < m; ++o) bl.apply(cell_of(prim(Delete{})), at + o);
  return axis;
}

}  // namespace

Diagram forward_rule(const Primitive& p, const std::vector<TensorShape>& in, Bindings& b) {
  Builder bl(interleaved(data_of(in)), b);
  auto one = [&](Primitive q, int at) { bl.apply(cell_of(std::move(q)), at); };
  if (auto e = p.as<ElementWise>(); e && !is_linear(p)) {
    if (e->fn == EwFn::AddConst) {
      one(p, 0);
      return bl.finish();
    }
    const auto de = derivative(*e);
    if (!de) not_differentiable(p);
    one(prim(Copy{}), 0);
    one(p, 0);
    one(prim(*de), 1);
    hadamard(bl, 1);
    return bl.finish();
  }
  if (p.is<SoftMax>()) {
    one(p, 0);
    one(prim(Copy{}), 0);
    softmax_tangent(bl, 1);
    return bl.finish();
  }
  if (p.is<OuterProduct>()) {
    one(prim(Copy{}), 0);  // x x u y v
    one(prim(Copy{}), 3);  // x x u y y v
    arrange(bl, 0, {0, 1, 2, 3, 4, 5}, {0, 3, 2, 4, 1, 5});
    one(prim(OuterProduct{}), 0);
    one(prim(OuterProduct{}), 1);
    one(prim(OuterProduct{}), 2);
    one(prim(Add{}), 1);
    return bl.finish();
  }
  if (auto l = p.as<LinearParam>()) {
    one(p, 0);
    one(prim(without_bias(*l)), 1);
    return bl.finish();
  }
  if (auto pl = p.as<Pool>(); pl && pl->kind != PoolKind::Mean) {
    if (pl->kind == PoolKind::ArgMax) {
      one(p, 0);
      one(prim(ElementWise{EwFn::Scale, 0.0}), 1);
      return bl.finish();
    }
    const int r = static_cast<int>(in[0].rank());
    one(prim(Copy{}), 0);
    one(p, 0);
    one(prim(Pool{PoolKind::ArgMax}), 1);
    hadamard(bl, 1);
    for (int i = 0; i < r; ++i) one(prim(SumAxis{0}), 1);
    return bl.finish();
  }
  if (p.is<ConstScalar>()) {
    one(p, 0);
    one(prim(ConstScalar{0.0}), 1);
    return bl.finish();
  }
  if (!is_linear(p)) not_differentiable(p);
  if (p.is<Copy>()) {
    one(p, 0);
    one(p, 2);
    bl.move_segment(2, 1);
  } else if (p.is<Delete>()) {
    one(p, 0);
    one(p, 0);
  } else if (auto s = p.as<SegmentSwap>()) {
    one(prim(SegmentSwap{2 * s->span - 1}), 0);
    one(prim(SegmentSwap{2 * s->span - 1}), 1);
  } else if (p.is<Add>()) {
    bl.move_segment(2, 1);
    one(p, 0);
    one(p, 1);
  } else {
    one(p, 0);
    one(p, 1);
  }
  return bl.finish();
}

Diagram reverse_rule(const Primitive& p, const std::vector<TensorShape>& in, Bindings& b) {
  DataShape dom = data_of(in);
  for (const auto& s : output_shapes(p, in, b)) dom.segments.push_back(s);
  Builder bl(dom, b);
  auto one = [&](Primitive q, int at) { bl.apply(cell_of(std::move(q)), at); };
  const int n = static_cast<int>(in.size());
  if (auto e = p.as<ElementWise>(); e && !is_linear(p)) {
    if (e->fn == EwFn::AddConst) {
      one(prim(Delete{}), 0);
      return bl.finish();
    }
    const auto de = derivative(*e);
    if (!de) not_differentiable(p);
    one(prim(*de), 0);
    hadamard(bl, 0);
    return bl.finish();
  }
  if (p.is<SoftMax>()) {
    one(p, 0);
    softmax_tangent(bl, 0);
    return bl.finish();
  }
  if (p.is<OuterProduct>()) {
    const int rs = static_cast<int>(in[0].rank()), rt = static_cast<int>(in[1].rank());
    one(prim(Copy{}), 2);                            // x y g g
    arrange(bl, 0, {0, 1, 2, 3}, {2, 1, 0, 3});     // g y x g
    one(prim(OuterProduct{}), 0);                    // [S,T,T] x g
    for (int j = 0; j < rt; ++j) one(prim(Cup{rs, rs + rt - j}), 0);
    one(prim(OuterProduct{}), 1);                    // dx [S,S,T]
    for (int j = 0; j < rs; ++j) one(prim(Cup{0, rs - j}), 1);
    return bl.finish();
  }
  if (auto pl = p.as<Pool>(); pl && pl->kind != PoolKind::Mean) {
    if (pl->kind == PoolKind::ArgMax) {
      one(prim(Delete{}), 1);
      one(prim(ElementWise{EwFn::Scale, 0.0}), 0);
      return bl.finish();
    }
    one(prim(Pool{PoolKind::ArgMax}), 0);
    one(prim(OuterProduct{}), 0);
    return bl.finish();
  }
  if (p.is<ConstScalar>()) {
    one(prim(Delete{}), 0);
    return bl.finish();
  }
  if (auto l = p.as<LinearParam>(); l && l->bias) {
    one(prim(Delete{}), 0);
    one(transpose_primitive(prim(without_bias(*l)), in[0], {}, b), 0);
    return bl.finish();
  }
  if (!is_linear(p)) not_differentiable(p);
  if (p.is<Identity>()) {
    one(prim(Delete{}), 0);
  } else if (p.is<Copy>()) {
    one(prim(Delete{}), 0);
    one(prim(Add{}), 0);
  } else if (p.is<Delete>()) {
    one(prim(ElementWise{EwFn::Scale, 0.0}), 0);
  } else if (auto s = p.as<SegmentSwap>()) {
    for (int i = 0; i < n; ++i) one(prim(Delete{}), 0);
    one(prim(SegmentSwap{s->span}), 0);
  } else if (p.is<Add>()) {
    one(prim(Delete{}), 0);
    one(prim(Delete{}), 0);
    one(prim(Copy{}), 0);
  } else {
    one(prim(Delete{}), 0);
    one(transpose_primitive(p, in[0], {}, b), 0);
  }
  return bl.finish();
}

Diagram forward_transform(const Diagram& d, const Bindings& bindings) {
  Bindings b = bindings;
  return Forward(b).diagram(d, d.name.empty() ? "" : d.name + "_fwd");
}

Diagram reverse_transform(const Diagram& d, const Bindings& bindings) {
  Bindings b = bindings;
  return Reverse(b).diagram(d, d.name.empty() ? "" : d.name + "_rev");
}

Diagram grad_pipeline(const Diagram& d, GradMode mode, const Bindings& bindings) {
  Bindings b = bindings;
  infer_shapes(d, b);
  if (d.codomain.size() != 1 || d.codomain[0].element_count(b) != 1) {
    fail(ErrorKind::NotScalarLoss,
         fmt::format("{}: gradient needs a scalar codomain, found {}", d.name,
                     to_string(d.codomain, b)));
  }
  const std::string name = d.name.empty() ? "" : d.name + "_grad";
  const int n = static_cast<int>(d.domain.size());
  Builder bl(d.domain, b, name, d.arg);
  if (mode == GradMode::Reverse) {
    Diagram r = Reverse(b).diagram(d, "");
    bl.apply(cell_of(prim(ConstScalar{1.0})), n);
    if (d.codomain[0].rank() > 0) {
      bl.apply(cell_of(prim(View{TensorShape{}, d.codomain[0]})), n);
    }
    for (const auto& s : r.sections) bl.section(s);
    return bl.finish(&d.domain);
  }
  Diagram fwd = Forward(b).diagram(d, "");
  // State [g_0..g_{i-1}, x...]; each direction block probes a fresh copy.
  for (int i = 0; i < n; ++i) {
    const int at = static_cast<int>(bl.state().size()) - n;
    if (i + 1 < n) duplicate(bl, at, n);
    const int region = static_cast<int>(bl.state().size()) - n;
    probe(bl, region, d, fwd, i);
    const TensorShape& dy = bl.state()[region];
    bl.apply(cell_of(prim(View{dy, d.domain[i]})), region);
    bl.move_segment(region, i);
  }
  return bl.finish(&d.domain);
}

Diagram jacobian_probe(const Diagram& d, int segment, const Bindings& bindings) {
  Bindings b = bindings;
  infer_shapes(d, b);
  if (segment < 0 || segment >= static_cast<int>(d.domain.size())) {
    fail(ErrorKind::SegmentOutOfRange, fmt::format("no input segment {}", segment));
  }
  Diagram fwd = Forward(b).diagram(d, "");
  Builder bl(d.domain, b, d.name.empty() ? "" : d.name + "_jac", d.arg);
  probe(bl, 0, d, fwd, segment);
  return bl.finish();
}

Tensor jacobian_materialize(const Diagram& d, const std::vector<Tensor>& point,
                            const ParamStore& params, const Bindings& bindings) {
  const Bindings b = resolve_bindings(d, bindings);
  int64_t rows = 0, cols = 0;
  for (const auto& s : d.domain.segments) cols += s.element_count(b);
  for (const auto& s : d.codomain.segments) rows += s.element_count(b);
  if (rows * cols > kJacobianLimit) {
    fail(ErrorKind::TooLarge,
         fmt::format("jacobian of {} is {}x{}, above the {} entry limit", d.name, rows, cols,
                     kJacobianLimit));
  }
  Tensor j = Tensor::zeros({rows, cols});
  int64_t col = 0;
  for (int i = 0; i < static_cast<int>(d.domain.size()); ++i) {
    const int64_t ni = d.domain[i].element_count(b);
    const auto dy = eval(jacobian_probe(d, i, b), point, params, b);
    int64_t row = 0;
    for (const auto& t : dy) {
      const int64_t no = static_cast<int64_t>(t.size()) / std::max<int64_t>(ni, 1);
      for (int64_t p = 0; p < ni; ++p) {
        for (int64_t q = 0; q < no; ++q) j.data[(row + q) * cols + col + p] = t.data[p * no + q];
      }
      row += no;
    }
    col += ni;
  }
  return j;
}

}  // namespace ncd
