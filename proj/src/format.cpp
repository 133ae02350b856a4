#include <fmt/format.h>

#include "ncd/parser.hpp"

namespace ncd {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

ast::AxisLit lit(const Axis& a, const Bindings& bindings) {
  ast::AxisLit l;
  l.width = a.width;
  if (auto s = a.len.lone_symbol()) {
    l.name = *s;
  } else if (a.len.is_constant()) {
    l.value = a.len.coefficient();
  } else {
    l.value = a.len.value(bindings);
  }
  return l;
}

ast::Shape lit(const TensorShape& s, const Bindings& bindings) {
  ast::Shape out;
  for (const auto& a : s.axes) out.axes.push_back(lit(a, bindings));
  return out;
}

std::vector<ast::Shape> lit(const DataShape& d, const Bindings& bindings) {
  std::vector<ast::Shape> out;
  for (const auto& s : d.segments) out.push_back(lit(s, bindings));
  return out;
}

ast::AxisRef ref(int segment, int position) { return ast::AxisRef{segment, position, {}}; }

bool is_implicit(const Primitive& p) {
  return p.is<LinearParam>() || p.is<ElementWise>() || p.is<SoftMax>() || p.is<View>() ||
         p.is<Unit>() || p.is<ConvTensor>() || p.is<Pool>() || p.is<AssocTranspose>();
}

class Unlowerer {
 public:
  explicit Unlowerer(const Bindings& b) : b_(b) {}

  std::vector<ast::Step> sections(const Diagram& d) {
    std::vector<ast::Step> out;
    int n = static_cast<int>(d.domain.size());
    for (const auto& s : d.sections) {
      out.push_back(section(s, n));
      n = 0;
      for (const auto& c : s.cells) n += output_arity(c);
    }
    return out;
  }

 private:
  ast::Step section(const Section& s, int n_state) {
    int found = -1, count = 0;
    for (size_t i = 0; i < s.cells.size(); ++i) {
      if (!is_identity(s.cells[i])) {
        found = static_cast<int>(i);
        ++count;
      }
    }
    if (count == 1) {
      const Cell& c = s.cells[found];
      const int off = cell_offset(s, found);
      if (auto p = c.primitive()) {
        const bool last = found == static_cast<int>(s.cells.size()) - 1;
        if ((!is_implicit(*p) || n_state == 1) && (!p->is<ConstScalar>() || last)) {
          return with_maps(c, primitive_op(*p, off));
        }
      } else if (!c.nested()->name.empty() && off == 0 && input_arity(c) == n_state) {
        ast::Op op;
        op.kind = ast::OpKind::Call;
        op.name = c.nested()->name;
        return with_maps(c, op);
      }
    }
    ast::Step st;
    st.op = par_of(s);
    return st;
  }

  ast::Op par_of(const Section& s) {
    ast::Op op;
    op.kind = ast::OpKind::Par;
    for (const auto& c : s.cells) op.branches.push_back(branch_of(c));
    if (op.branches.empty()) {
      ast::Branch b;
      b.arity = 0;
      op.branches.push_back(b);
    }
    return op;
  }

  ast::Branch branch_of(const Cell& c) {
    ast::Branch b;
    const int k = input_arity(c);
    if (k != 1) b.arity = k;
    if (is_identity(c)) return b;
    if (auto p = c.primitive()) {
      b.steps.push_back(with_maps(c, primitive_op(*p, 0)));
      return b;
    }
    const Diagram& d = *c.nested();
    if (!d.name.empty()) {
      ast::Op op;
      op.kind = ast::OpKind::Call;
      op.name = d.name;
      b.steps.push_back(with_maps(c, op));
    } else if (c.broadcasts.empty()) {
      b.steps = sections(d);
    } else if (d.sections.size() == 1) {
      b.steps.push_back(with_maps(c, par_of(d.sections[0])));
    } else {
      ast::Op op;
      op.kind = ast::OpKind::Par;
      ast::Branch inner;
      if (d.domain.size() != 1) inner.arity = static_cast<int>(d.domain.size());
      inner.steps = sections(d);
      op.branches.push_back(std::move(inner));
      b.steps.push_back(with_maps(c, op));
    }
    return b;
  }

  ast::Step with_maps(const Cell& c, ast::Op op) {
    ast::Step st;
    for (const auto& scope : c.broadcasts) {
      ast::MapPrefix m;
      m.axis = lit(scope.axis, b_);
      m.inner = scope.inner;
      m.targets = scope.targets;
      st.maps.push_back(std::move(m));
    }
    st.op = std::move(op);
    return st;
  }

  ast::Op primitive_op(const Primitive& p, int off) {
    using ast::OpKind;
    ast::Op o;
    std::visit(
        overloaded{
            [&](const Identity&) {
              o.kind = OpKind::Par;
              o.branches.emplace_back();
            },
            [&](const Copy&) {
              o.kind = OpKind::Copy;
              o.segments = {off};
            },
            [&](const Delete&) {
              o.kind = OpKind::Delete;
              o.segments = {off};
            },
            [&](const SegmentSwap& s) {
              o.kind = OpKind::Swap;
              o.segments = {off, off + s.span - 1};
            },
            [&](const AxisTranspose& t) {
              o.kind = OpKind::Transpose;
              o.segments = {off};
              o.perm = t.perm;
            },
            [&](const Diag& d) {
              o.kind = OpKind::Diag;
              o.refs = {ref(off, d.first), ref(off, d.second)};
            },
            [&](const View& v) {
              o.kind = OpKind::View;
              o.in = lit(v.in, b_);
              o.out = lit(v.out, b_);
            },
            [&](const IndexKet& k) {
              o.kind = OpKind::Index;
              o.refs = {ref(off, k.axis)};
              o.index = k.index;
            },
            [&](const OuterProduct&) {
              o.kind = OpKind::Outer;
              o.segments = {off, off + 1};
            },
            [&](const Cup& c) {
              o.kind = OpKind::Cup;
              o.refs = {ref(off, c.first), ref(off, c.second)};
            },
            [&](const Unit& u) {
              o.kind = OpKind::Unit;
              o.axis = lit(u.axis, b_);
            },
            [&](const ElementWise& e) {
              o.kind = OpKind::Ew;
              o.name = ew_name(ElementWise{e.fn, 0.0});
              if (e.fn == EwFn::Scale || e.fn == EwFn::AddConst) {
                o.name = o.name.substr(0, o.name.find('('));
                o.param = e.param;
              }
            },
            [&](const SoftMax&) { o.kind = OpKind::Softmax; },
            [&](const Add&) {
              o.kind = OpKind::Add;
              o.segments = {off, off + 1};
            },
            [&](const SumAxis& s) {
              o.kind = OpKind::Sum;
              o.refs = {ref(off, s.axis)};
            },
            [&](const LinearParam& l) {
              o.kind = OpKind::Linear;
              o.name = l.name;
            },
            [&](const ConvTensor& c) {
              o.kind = OpKind::Conv;
              o.conv_rank = c.rank();
              for (const auto& d : c.dims) {
                o.kernel.push_back(d.kernel);
                o.stride.push_back(d.stride);
                o.dilation.push_back(d.dilation);
                o.pad.push_back(d.pad);
              }
            },
            [&](const Pool& pl) {
              o.kind = OpKind::Pool;
              o.name = pl.kind == PoolKind::Max    ? "max"
                       : pl.kind == PoolKind::Mean ? "mean"
                                                   : "argmax";
            },
            [&](const ConstScalar& c) {
              o.kind = OpKind::Const;
              o.value = c.value;
            },
            [&](const AssocTranspose& t) {
              o.kind = OpKind::Adjoint;
              o.in = lit(t.base_in, b_);
              o.in_axes = t.in_axes;
              o.out_axes = t.out_axes;
              ast::Step base;
              base.op = primitive_op(*t.base, 0);
              o.base.push_back(std::move(base));
            },
        },
        p.op);
    return o;
  }

  const Bindings& b_;
};

ast::AxesDecl axes_of(const Program& p) {
  ast::AxesDecl a;
  for (const auto& [name, v] : p.axes) a.entries.push_back({name, v, {}});
  return a;
}

ast::ParamDecl param_of(const LinearParam& l, const Bindings& b) {
  ast::ParamDecl p;
  p.name = l.name;
  p.in = lit(l.in, b);
  p.out = lit(l.out, b);
  p.bias = l.bias;
  return p;
}

}  // namespace

ast::DiagramDecl unlower(const Diagram& d, const Bindings& bindings) {
  ast::DiagramDecl decl;
  decl.name = d.name;
  decl.arg = d.arg.empty() ? "x" : d.arg;
  decl.domain = lit(d.domain, bindings);
  decl.codomain = lit(d.codomain, bindings);
  decl.steps = Unlowerer(bindings).sections(d);
  return decl;
}

std::string format(const Program& program) {
  ast::File f;
  if (!program.axes.empty()) f.items.emplace_back(axes_of(program));
  for (const auto& l : program.params) f.items.emplace_back(param_of(l, program.bindings));
  for (const auto& d : program.diagrams) f.items.emplace_back(unlower(d, program.bindings));
  return print(f);
}

std::string format(const Diagram& d, const Program& program) {
  ast::File f;
  f.items.emplace_back(unlower(d, program.bindings));
  return print(f);
}

}  // namespace ncd
