#include <map>
#include <memory>

#include <fmt/format.h>

#include "ncd/parser.hpp"

namespace ncd {

const Diagram* Program::find(const std::string& name) const {
  for (const auto& d : diagrams) {
    if (d.name == name) return &d;
  }
  return nullptr;
}

const Diagram& Program::get(const std::string& name) const {
  if (auto d = find(name)) return *d;
  std::string known;
  for (const auto& d : diagrams) known += (known.empty() ? "" : ", ") + d.name;
  fail(ErrorKind::UndefinedName,
       fmt::format("no diagram named '{}' (defined: {})", name, known.empty() ? "none" : known));
}

namespace {

Axis to_axis(const ast::AxisLit& a) {
  Axis axis = a.name.empty() ? Axis::of(a.value) : Axis::named(a.name);
  axis.width = a.width;
  return axis;
}

TensorShape to_shape(const ast::Shape& s) {
  TensorShape t;
  for (const auto& a : s.axes) t.axes.push_back(to_axis(a));
  return t;
}

DataShape to_data(const std::vector<ast::Shape>& v) {
  DataShape d;
  for (const auto& s : v) d.segments.push_back(to_shape(s));
  return d;
}

[[noreturn]] void fail_at(ErrorKind kind, std::string msg, Span span) {
  throw Error(kind, std::move(msg), span);
}

class Lowerer {
 public:
  explicit Lowerer(Program& prog) : prog_(prog) {}

  void param(const ast::ParamDecl& p) {
    if (params_.count(p.name)) {
      fail_at(ErrorKind::SyntaxError, fmt::format("parameter '{}' defined twice", p.name),
              p.span);
    }
    LinearParam l{p.name, to_shape(p.in), to_shape(p.out), p.bias};
    params_[p.name] = l;
    prog_.params.push_back(l);
  }

  void diagram(const ast::DiagramDecl& decl) {
    if (defs_.count(decl.name)) {
      fail_at(ErrorKind::SyntaxError, fmt::format("diagram '{}' defined twice", decl.name),
              decl.span);
    }
    Builder b(to_data(decl.domain), prog_.bindings, decl.name, decl.arg);
    for (const auto& step : decl.steps) apply(b, step);
    const DataShape codomain = to_data(decl.codomain);
    Diagram d;
    try {
      d = b.finish(&codomain);
    } catch (const Error& e) {
      throw e.with_span(decl.codomain.front().span);
    }
    defs_[decl.name] = std::make_shared<const Diagram>(d);
    prog_.diagrams.push_back(std::move(d));
  }

 private:
  void apply(Builder& b, const ast::Step& step) {
    Section s = lower_step(step, b.state());
    try {
      b.section(std::move(s));
    } catch (const Error& e) {
      throw e.with_span(step.op.span);
    }
  }

  // Segments [at, at + n) of the current state consumed by the op.
  std::pair<int, int> range_of(const ast::Op& op, int n_state) {
    using ast::OpKind;
    auto seg_ok = [&](int s) {
      if (s < 0 || s >= n_state) {
        fail_at(ErrorKind::SegmentOutOfRange,
                fmt::format("segment {} out of range ({} segment(s))", s, n_state), op.span);
      }
    };
    switch (op.kind) {
      case OpKind::Copy:
      case OpKind::Delete:
      case OpKind::Transpose:
        seg_ok(op.segments[0]);
        return {op.segments[0], 1};
      case OpKind::Diag:
      case OpKind::Cup:
      case OpKind::Sum:
      case OpKind::Index:
        for (const auto& r : op.refs) {
          seg_ok(r.segment);
          if (r.segment != op.refs[0].segment) {
            fail_at(ErrorKind::SegmentOutOfRange, "both axes must be in the same segment",
                    r.span);
          }
        }
        return {op.refs[0].segment, 1};
      case OpKind::Swap: {
        const int lo = std::min(op.segments[0], op.segments[1]);
        const int hi = std::max(op.segments[0], op.segments[1]);
        seg_ok(lo);
        seg_ok(hi);
        if (lo == hi) fail_at(ErrorKind::SegmentOutOfRange, "swap needs two segments", op.span);
        return {lo, hi - lo + 1};
      }
      case OpKind::Outer:
        seg_ok(op.segments[0]);
        seg_ok(op.segments[1]);
        if (op.segments[1] != op.segments[0] + 1) {
          fail_at(ErrorKind::SegmentOutOfRange, "outer takes adjacent segments i, i+1", op.span);
        }
        return {op.segments[0], 2};
      case OpKind::Add: {
        seg_ok(op.segments[0]);
        seg_ok(op.segments[1]);
        if (std::abs(op.segments[0] - op.segments[1]) != 1) {
          fail_at(ErrorKind::SegmentOutOfRange, "add takes adjacent segments", op.span);
        }
        return {std::min(op.segments[0], op.segments[1]), 2};
      }
      case OpKind::Const: return {n_state, 0};
      case OpKind::Call:
      case OpKind::Par: return {0, n_state};
      default:
        if (n_state != 1) {
          fail_at(ErrorKind::SegmentOutOfRange,
                  fmt::format("this operation acts on a single segment but the state has {}; "
                              "select one with par",
                              n_state),
                  op.span);
        }
        return {0, 1};
    }
  }

  Section lower_step(const ast::Step& step, const DataShape& state) {
    const int n_state = static_cast<int>(state.size());
    const auto [at, n] = range_of(step.op, n_state);
    std::vector<TensorShape> in(state.segments.begin() + at, state.segments.begin() + at + n);

    std::vector<BroadcastScope> scopes;
    for (const auto& m : step.maps) {
      BroadcastScope scope{to_axis(m.axis), m.inner, m.targets};
      std::vector<bool> hit(in.size(), !m.inner);
      for (int t : m.targets) {
        if (t < 0 || t >= n) {
          fail_at(ErrorKind::SegmentOutOfRange,
                  fmt::format("inner broadcast target {} out of range ({} segment(s))", t, n),
                  m.span);
        }
        hit[t] = true;
      }
      for (size_t i = 0; i < in.size(); ++i) {
        if (!hit[i]) continue;
        if (in[i].rank() == 0 || !unify(scope.axis.len, in[i].axes[0].len, prog_.bindings)) {
          fail_at(ErrorKind::ShapeMismatch,
                  fmt::format("map {} needs a leading {} axis on segment {}, found {}",
                              to_string(scope.axis), to_string(scope.axis), at + i,
                              to_string(in[i], prog_.bindings)),
                  m.span);
        }
        in[i].axes.erase(in[i].axes.begin());
      }
      scopes.push_back(std::move(scope));
    }

    std::vector<Cell> cells;
    try {
      cells = lower_op(step.op, in, at);
    } catch (const Error& e) {
      throw e.with_span(step.op.span);
    }
    if (!scopes.empty()) {
      if (cells.size() == 1) {
        cells[0].broadcasts.insert(cells[0].broadcasts.begin(), scopes.begin(), scopes.end());
      } else {
        Diagram body;
        body.domain = data_of(in);
        body.sections.push_back(Section{cells});
        try {
          body.codomain = section_output(body.sections[0], body.domain, prog_.bindings);
        } catch (const Error& e) {
          throw e.with_span(step.op.span);
        }
        cells = {make_cell(std::move(body), scopes)};
      }
    }
    Section s;
    for (int i = 0; i < at; ++i) s.cells.push_back(identity_cell());
    s.cells.insert(s.cells.end(), cells.begin(), cells.end());
    for (int i = at + n; i < n_state; ++i) s.cells.push_back(identity_cell());
    return s;
  }

  std::vector<Cell> lower_op(const ast::Op& op, const std::vector<TensorShape>& in, int at) {
    using ast::OpKind;
    auto one = [](Primitive p) { return std::vector<Cell>{make_cell(std::move(p))}; };
    switch (op.kind) {
      case OpKind::Linear: {
        auto it = params_.find(op.name);
        if (it == params_.end()) {
          fail(ErrorKind::UndefinedName, fmt::format("no parameter named '{}'", op.name));
        }
        return one(prim(it->second));
      }
      case OpKind::Ew: {
        auto fn = ew_from_name(op.name);
        if (!fn) {
          fail(ErrorKind::UndefinedName,
               fmt::format("unknown element-wise function '{}' (builtins: relu, gelu, exp, neg, "
                           "scale(c), addc(c), recip, sqrt)",
                           op.name));
        }
        const bool wants = *fn == EwFn::Scale || *fn == EwFn::AddConst;
        if (wants != op.param.has_value()) {
          fail(ErrorKind::SyntaxError,
               wants ? fmt::format("ew {} needs a constant, as in {}(0.5)", op.name, op.name)
                     : fmt::format("ew {} takes no constant", op.name));
        }
        return one(prim(ElementWise{*fn, op.param.value_or(0.0)}));
      }
      case OpKind::Softmax: return one(prim(SoftMax{}));
      case OpKind::Copy: return one(prim(Copy{}));
      case OpKind::Delete: return one(prim(Delete{}));
      case OpKind::Swap:
        return one(prim(SegmentSwap{std::abs(op.segments[0] - op.segments[1]) + 1}));
      case OpKind::Outer: return one(prim(OuterProduct{}));
      case OpKind::Add: return one(prim(Add{}));
      case OpKind::Transpose: return one(prim(AxisTranspose{op.perm}));
      case OpKind::Diag: return one(prim(Diag{op.refs[0].position, op.refs[1].position}));
      case OpKind::Cup: return one(prim(Cup{op.refs[0].position, op.refs[1].position}));
      case OpKind::Sum: return one(prim(SumAxis{op.refs[0].position}));
      case OpKind::Index: return one(prim(IndexKet{op.refs[0].position, op.index}));
      case OpKind::View: return one(prim(View{to_shape(op.in), to_shape(op.out)}));
      case OpKind::Unit: return one(prim(Unit{to_axis(op.axis)}));
      case OpKind::Conv: return one(prim(conv(op, in[0])));
      case OpKind::Pool: {
        const PoolKind k = op.name == "max"    ? PoolKind::Max
                           : op.name == "mean" ? PoolKind::Mean
                                               : PoolKind::ArgMax;
        return one(prim(Pool{k}));
      }
      case OpKind::Const: return one(prim(ConstScalar{op.value}));
      case OpKind::Call: {
        auto it = defs_.find(op.name);
        if (it == defs_.end()) {
          fail(ErrorKind::UndefinedName, fmt::format("no diagram named '{}'", op.name));
        }
        return {Cell{it->second, {}}};
      }
      case OpKind::Par: return par(op, in, at);
      case OpKind::Adjoint: return one(prim(adjoint(op)));
    }
    fail(ErrorKind::SyntaxError, "unknown operation");
  }

  ConvTensor conv(const ast::Op& op, const TensorShape& in) {
    const int r = op.conv_rank;
    auto check = [&](const std::vector<int64_t>& v, const char* what) {
      if (static_cast<int>(v.size()) != r) {
        fail(ErrorKind::ConvArithmeticError,
             fmt::format("conv of rank {} needs {} value(s) for {}, got {}", r, r, what,
                         v.size()));
      }
    };
    if (r < 1) fail(ErrorKind::ConvArithmeticError, "conv rank must be at least 1");
    check(op.kernel, "k");
    check(op.stride, "s");
    check(op.dilation, "d");
    if (static_cast<int>(in.rank()) != r) {
      fail(ErrorKind::ShapeMismatch, fmt::format("conv of rank {} applied to {}", r,
                                                 to_string(in, prog_.bindings)));
    }
    ConvTensor c;
    for (int i = 0; i < r; ++i) {
      ConvDim dim{op.kernel[i], op.stride[i], op.dilation[i], 0};
      if (!op.out_extent.empty()) {
        check(op.out_extent, "out");
        const int64_t x = in.axes[i].len.value(prog_.bindings);
        const int64_t want = op.out_extent[i];
        bool found = false;
        // Implicit padding: the smallest pad giving the declared extent.
        for (int64_t pad = 0; pad <= x + dim.dilation * dim.kernel && !found; ++pad) {
          dim.pad = pad;
          try {
            found = conv_out_extent(x, dim) == want;
          } catch (const Error&) {
          }
        }
        if (!found) {
          fail(ErrorKind::ConvArithmeticError,
               fmt::format("no padding gives output extent {} from {} (k={} s={} d={})", want,
                           x, dim.kernel, dim.stride, dim.dilation));
        }
      } else {
        check(op.pad, "pad");
        dim.pad = op.pad[i];
      }
      if (dim.kernel < 1 || dim.stride < 1 || dim.dilation < 1 || dim.pad < 0) {
        fail(ErrorKind::ConvArithmeticError,
             fmt::format("conv parameters must be >= 1 (pad >= 0), got k={} s={} d={} pad={}",
                         dim.kernel, dim.stride, dim.dilation, dim.pad));
      }
      c.dims.push_back(dim);
    }
    return c;
  }

  std::vector<Cell> par(const ast::Op& op, const std::vector<TensorShape>& in, int at) {
    std::vector<Cell> cells;
    int pos = 0;
    for (const auto& br : op.branches) {
      const int k = br.arity.value_or(1);
      if (k < 0 || pos + k > static_cast<int>(in.size())) {
        fail_at(ErrorKind::SegmentOutOfRange,
                fmt::format("par branch needs segment(s) {}..{} but only {} exist", at + pos,
                            at + pos + k - 1, at + in.size()),
                br.span);
      }
      std::vector<TensorShape> sub(in.begin() + pos, in.begin() + pos + k);
      if (br.steps.empty()) {
        for (int i = 0; i < k; ++i) cells.push_back(identity_cell());
      } else {
        Builder b(data_of(sub), prog_.bindings);
        for (const auto& step : br.steps) apply(b, step);
        Diagram d = b.finish();
        if (d.sections.size() == 1) {
          cells.insert(cells.end(), d.sections[0].cells.begin(), d.sections[0].cells.end());
        } else {
          cells.push_back(make_cell(std::move(d)));
        }
      }
      pos += k;
    }
    if (pos != static_cast<int>(in.size())) {
      fail(ErrorKind::SegmentOutOfRange,
           fmt::format("par branches cover {} of {} segment(s)", pos, in.size()));
    }
    return cells;
  }

  AssocTranspose adjoint(const ast::Op& op) {
    const auto& base_step = op.base.at(0);
    if (!base_step.maps.empty()) {
      fail_at(ErrorKind::NotLinear, "adjoint base cannot carry map prefixes", base_step.span);
    }
    const TensorShape base_in = to_shape(op.in);
    auto cells = lower_op(base_step.op, {base_in}, 0);
    if (cells.size() != 1 || !cells[0].primitive() || input_arity(cells[0]) != 1 ||
        output_arity(cells[0]) != 1) {
      fail_at(ErrorKind::NotLinear, "adjoint base must be a single-segment primitive",
              base_step.span);
    }
    if (!is_linear(*cells[0].primitive())) {
      fail_at(ErrorKind::NotLinear,
              fmt::format("'{}' is not linear", display_name(*cells[0].primitive())),
              base_step.span);
    }
    return AssocTranspose{std::make_shared<const Primitive>(*cells[0].primitive()), base_in,
                          op.in_axes, op.out_axes};
  }

  Program& prog_;
  std::map<std::string, LinearParam> params_;
  std::map<std::string, std::shared_ptr<const Diagram>> defs_;
};

}  // namespace

Program lower(const ast::File& file, const Bindings& overrides) {
  Program prog;
  for (const auto& item : file.items) {
    if (auto a = std::get_if<ast::AxesDecl>(&item)) {
      for (const auto& e : a->entries) {
        if (prog.bindings.count(e.name)) {
          fail_at(ErrorKind::SyntaxError, fmt::format("axis '{}' declared twice", e.name),
                  e.span);
        }
        if (e.value < 1) fail_at(ErrorKind::SyntaxError, "axis length must be >= 1", e.span);
        const auto o = overrides.find(e.name);
        const int64_t v = o == overrides.end() ? e.value : o->second;
        prog.axes.emplace_back(e.name, v);
        prog.bindings[e.name] = v;
      }
    }
  }
  for (const auto& [name, v] : overrides) prog.bindings[name] = v;

  Lowerer lw(prog);
  for (const auto& item : file.items) {
    if (auto p = std::get_if<ast::ParamDecl>(&item)) {
      lw.param(*p);
    } else if (auto d = std::get_if<ast::DiagramDecl>(&item)) {
      lw.diagram(*d);
    }
  }
  return prog;
}

Program compile(std::string_view text, const Bindings& overrides) {
  return lower(parse(text), overrides);
}

}  // namespace ncd
