#include "ncd/rewrite.hpp"

#include <algorithm>
#include <optional>
#include <sstream>

#include <fmt/format.h>

#include "ncd/error.hpp"

namespace ncd {

namespace {

std::vector<int> range(int a, int b) {
  std::vector<int> v;
  for (int i = a; i < b; ++i) v.push_back(i);
  return v;
}

std::vector<TensorShape> slice(const DataShape& d, int off, int n) {
  return {d.segments.begin() + off, d.segments.begin() + off + n};
}

int output_offset(const Section& s, size_t idx) {
  int pos = 0;
  for (size_t i = 0; i < idx; ++i) pos += output_arity(s.cells[i]);
  return pos;
}

std::optional<size_t> cell_starting_at(const Section& s, int seg) {
  int pos = 0;
  for (size_t i = 0; i < s.cells.size(); ++i) {
    const int n = input_arity(s.cells[i]);
    if (pos == seg && n > 0) return i;
    pos += n;
    if (pos > seg) break;
  }
  return std::nullopt;
}

Section place(Cell c, int at, int n_state) {
  Section s;
  for (int i = 0; i < at; ++i) s.cells.push_back(identity_cell());
  const int n = input_arity(c);
  s.cells.push_back(std::move(c));
  for (int i = at + n; i < n_state; ++i) s.cells.push_back(identity_cell());
  return s;
}

bool all_identity(const Section& s) {
  return std::all_of(s.cells.begin(), s.cells.end(), [](const Cell& c) { return is_identity(c); });
}

void drop_identity_sections(Diagram& d) {
  std::erase_if(d.sections, all_identity);
}

std::string describe(const Cell& c) {
  if (auto p = c.primitive()) return display_name(*p);
  return c.nested()->name.empty() ? std::string("block") : "call " + c.nested()->name;
}

// Retypes `d` from its domain, taking the codomain from the last boundary.
Diagram retyped(Diagram d, Bindings& b) {
  DataShape state = d.domain;
  for (size_t k = 0; k < d.sections.size(); ++k) {
    try {
      state = section_output(d.sections[k], state, b);
    } catch (const Error& e) {
      throw Error(e.kind(), fmt::format("section {}: {}", k, e.what()));
    }
  }
  d.codomain = state;
  return d;
}

// ---- snake ----

struct SnakeMatch {
  size_t cup = 0;
  std::vector<int> perm;
};

std::optional<SnakeMatch> snake_match(const Diagram& d, const std::vector<DataShape>& bounds,
                                      size_t k, size_t u) {
  if (k + 1 >= d.sections.size()) return std::nullopt;
  const Section& s = d.sections[k];
  const Cell& uc = s.cells[u];
  const Primitive* p = uc.primitive();
  if (!p || !p->is<Unit>()) return std::nullopt;
  const int r =
      static_cast<int>(body_inputs(uc, slice(bounds[k], cell_offset(s, u), 1))[0].rank());
  const Section& t = d.sections[k + 1];
  const auto ci = cell_starting_at(t, output_offset(s, u));
  if (!ci) return std::nullopt;
  const Cell& cc = t.cells[*ci];
  const Primitive* q = cc.primitive();
  if (!q || !q->is<Cup>() || cc.broadcasts != uc.broadcasts) return std::nullopt;
  int a = q->as<Cup>()->first, c = q->as<Cup>()->second;
  if (a > c) std::swap(a, c);
  if (a >= r || (c != r && c != r + 1)) return std::nullopt;
  SnakeMatch m{*ci, {}};
  for (int i = 0; i < r; ++i) {
    if (i != a) m.perm.push_back(i);
  }
  m.perm.push_back(a);
  return m;
}

Diagram snake_apply(const Diagram& d, size_t k, size_t u, const SnakeMatch& m) {
  Diagram out = d;
  const Cell unit = d.sections[k].cells[u];
  out.sections[k].cells[u] = identity_cell();
  if (m.perm == range(0, static_cast<int>(m.perm.size()))) {
    out.sections[k + 1].cells[m.cup] = identity_cell();
  } else {
    out.sections[k + 1].cells[m.cup] = make_cell(prim(AxisTranspose{m.perm}), unit.broadcasts);
  }
  drop_identity_sections(out);
  return out;
}

RewriteResult snake_in(const Diagram& d, Bindings& b) {
  const auto bounds = infer_shapes(d, b);
  for (size_t k = 0; k < d.sections.size(); ++k) {
    for (size_t u = 0; u < d.sections[k].cells.size(); ++u) {
      if (auto m = snake_match(d, bounds, k, u)) return {snake_apply(d, k, u, *m), true};
    }
  }
  for (size_t k = 0; k < d.sections.size(); ++k) {
    for (size_t i = 0; i < d.sections[k].cells.size(); ++i) {
      const Cell& c = d.sections[k].cells[i];
      if (!c.nested() || !c.nested()->name.empty()) continue;
      auto r = snake_in(*c.nested(), b);
      if (!r.matched) continue;
      Diagram out = d;
      out.sections[k].cells[i] = make_cell(std::move(r.diagram), c.broadcasts);
      return {out, true};
    }
  }
  return {d, false};
}

// ---- naturality ----

// Broadcast scopes left after `p` acts on the leading `scopes.size()` axes.
std::optional<std::vector<BroadcastScope>> scopes_after(const Primitive& p,
                                                        std::vector<BroadcastScope> scopes) {
  const int n = static_cast<int>(scopes.size());
  if (auto s = p.as<SumAxis>(); s && s->axis < n) {
    scopes.erase(scopes.begin() + s->axis);
    return scopes;
  }
  if (auto s = p.as<IndexKet>(); s && s->axis < n) {
    scopes.erase(scopes.begin() + s->axis);
    return scopes;
  }
  if (auto c = p.as<Cup>(); c && c->first < n && c->second < n) {
    scopes.erase(scopes.begin() + std::max(c->first, c->second));
    scopes.erase(scopes.begin() + std::min(c->first, c->second));
    return scopes;
  }
  if (auto g = p.as<Diag>(); g && g->first < n && g->second < n) {
    scopes.erase(scopes.begin() + std::max(g->first, g->second));
    return scopes;
  }
  if (auto t = p.as<AxisTranspose>(); t && static_cast<int>(t->perm.size()) >= n) {
    for (int i = n; i < static_cast<int>(t->perm.size()); ++i) {
      if (t->perm[i] != i) return std::nullopt;
    }
    std::vector<BroadcastScope> out;
    for (int i = 0; i < n; ++i) out.push_back(scopes[t->perm[i]]);
    return out;
  }
  return std::nullopt;
}

// Leading input axes of `p` that become `n_after` leading output axes.
std::optional<int> block_before(const Primitive& p, int n_after) {
  if (auto s = p.as<SumAxis>(); s && s->axis <= n_after) return n_after + 1;
  if (auto s = p.as<IndexKet>(); s && s->axis <= n_after) return n_after + 1;
  if (auto c = p.as<Cup>(); c && std::max(c->first, c->second) < n_after + 2) {
    return n_after + 2;
  }
  if (auto g = p.as<Diag>(); g && std::max(g->first, g->second) < n_after + 1) {
    return n_after + 1;
  }
  if (auto t = p.as<AxisTranspose>(); t && static_cast<int>(t->perm.size()) >= n_after) {
    for (int i = n_after; i < static_cast<int>(t->perm.size()); ++i) {
      if (t->perm[i] != i) return std::nullopt;
    }
    return n_after;
  }
  return std::nullopt;
}

std::optional<std::pair<Cell, Cell>> broadcast_swap(const Cell& c1, const Cell& c2,
                                                    const TensorShape& x) {
  const Primitive* p2 = c2.primitive();
  if (!c1.broadcasts.empty() && p2 && c2.broadcasts.empty()) {
    if (auto scopes = scopes_after(*p2, c1.broadcasts)) {
      Cell f = c1;
      f.broadcasts = *scopes;
      return std::pair{c2, f};
    }
  }
  const Primitive* p1 = c1.primitive();
  if (p1 && c1.broadcasts.empty()) {
    auto n = block_before(*p1, static_cast<int>(c2.broadcasts.size()));
    if (n && *n <= static_cast<int>(x.rank())) {
      Cell f = c2;
      f.broadcasts.clear();
      for (int i = 0; i < *n; ++i) f.broadcasts.push_back(BroadcastScope{x.axes[i], false, {}});
      return std::pair{f, c1};
    }
  }
  return std::nullopt;
}

// ---- transpose ----

AxisMoves resolve(const AxisMoves& moves, int na, int nb) {
  AxisMoves m = moves;
  if (m.full()) {
    m.in_axes = range(na, na + nb);
    m.out_axes = range(0, na);
  }
  std::vector<int> seen(na + nb, 0);
  bool ok = static_cast<int>(m.in_axes.size() + m.out_axes.size()) == na + nb;
  for (const auto* v : {&m.in_axes, &m.out_axes}) {
    for (int a : *v) {
      if (a < 0 || a >= na + nb || seen[a]++) ok = false;
    }
  }
  if (!ok) {
    fail(ErrorKind::BadAxisMove,
         fmt::format("axis moves ({}) -> ({}) do not partition the {} associated axes",
                     fmt::join(m.in_axes, ","), fmt::join(m.out_axes, ","), na + nb));
  }
  return m;
}

void check_transposable(const Primitive& p) {
  if (!is_linear(p) || input_arity(p) != 1 || p.is<Copy>() || p.is<Delete>() ||
      p.is<SegmentSwap>()) {
    fail(ErrorKind::NotLinear,
         fmt::format("transpose: {} is not a single-segment linear primitive", display_name(p)));
  }
}

struct Located {
  const Cell* cell;
  int offset;
  TensorShape in;   // body input
  TensorShape out;  // body output
};

Located locate_linear(const Diagram& d, const CellAddress& at, Bindings& b) {
  const auto bounds = infer_shapes(d, b);
  const Cell& c = cell_at(d, at);
  const Primitive* p = c.primitive();
  if (!p) fail(ErrorKind::NotLinear, fmt::format("transpose: cell {} is a block", to_string(at)));
  check_transposable(*p);
  const int off = cell_offset(d.sections[at.section], at.cell);
  Located l{&c, off, body_inputs(c, slice(bounds[at.section], off, 1))[0], {}};
  l.out = output_shapes(*p, {l.in}, b)[0];
  return l;
}

Diagram replace_transposed(const Diagram& d, const CellAddress& at, const Located& l,
                           const AxisMoves& m, Cell replacement, Bindings& b) {
  Diagram out = d;
  out.sections[at.section].cells[at.cell] = std::move(replacement);
  if (at.section == 0) {
    std::vector<Axis> assoc = l.in.axes;
    assoc.insert(assoc.end(), l.out.axes.begin(), l.out.axes.end());
    TensorShape x;
    for (const auto& s : l.cell->broadcasts) x.axes.push_back(s.axis);
    for (int a : m.in_axes) x.axes.push_back(assoc[a]);
    out.domain.segments[l.offset] = x;
  }
  return retyped(std::move(out), b);
}

// F^T spelled as: a unit per input axis of F, F broadcast over everything
// else, then cups joining the incoming axes to their partners.
Diagram plumbing_body(const Primitive& f, const TensorShape& A, const TensorShape& B,
                      const AxisMoves& m, Bindings& b) {
  const int na = static_cast<int>(A.rank());
  std::vector<Axis> assoc = A.axes;
  assoc.insert(assoc.end(), B.axes.begin(), B.axes.end());
  TensorShape x;
  for (int a : m.in_axes) x.axes.push_back(assoc[a]);

  // Labels: 0 = incoming (assoc index), 1 = kept copy of A e, 2 = fed copy of A e, 3 = B f.
  struct Label {
    int kind;
    int idx;
    bool operator==(const Label&) const = default;
  };
  std::vector<Label> labels;
  for (int a : m.in_axes) labels.push_back({0, a});

  Builder bl(data_of({x}), b);
  for (int e = 0; e < na; ++e) {
    bl.apply(make_cell(prim(Unit{A.axes[e]})));
    labels.push_back({1, e});
    labels.push_back({2, e});
  }
  auto reorder = [&](std::vector<int> perm) {
    if (perm == range(0, static_cast<int>(perm.size()))) return;
    bl.apply(make_cell(prim(AxisTranspose{perm})));
    std::vector<Label> next;
    for (int i : perm) next.push_back(labels[i]);
    labels = next;
  };
  auto pos = [&](Label l) {
    return static_cast<int>(std::find(labels.begin(), labels.end(), l) - labels.begin());
  };
  std::vector<int> perm;
  for (int kind : {0, 1, 2}) {
    for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
      if (labels[i].kind == kind) perm.push_back(i);
    }
  }
  reorder(perm);

  std::vector<BroadcastScope> scopes;
  const auto& state = bl.state()[0];
  for (size_t i = 0; i + na < state.rank(); ++i) {
    scopes.push_back(BroadcastScope{state.axes[i], false, {}});
  }
  bl.apply(make_cell(f, scopes));
  std::erase_if(labels, [](const Label& l) { return l.kind == 2; });
  for (int i = 0; i < static_cast<int>(B.rank()); ++i) labels.push_back({3, i});

  for (int a : m.in_axes) {
    const Label partner = a < na ? Label{1, a} : Label{3, a - na};
    const int p = pos({0, a}), q = pos(partner);
    bl.apply(make_cell(prim(Cup{p, q})));
    labels.erase(labels.begin() + std::max(p, q));
    labels.erase(labels.begin() + std::min(p, q));
  }
  perm.clear();
  for (int a : m.out_axes) perm.push_back(pos(a < na ? Label{1, a} : Label{3, a - na}));
  reorder(perm);
  return bl.finish();
}

// ---- factor ----

std::vector<TensorShape> strip_one(const BroadcastScope& scope, std::vector<TensorShape> in,
                                   std::vector<bool>& hit) {
  hit.assign(in.size(), false);
  for (size_t i = 0; i < in.size(); ++i) {
    hit[i] = !scope.inner || std::find(scope.targets.begin(), scope.targets.end(),
                                       static_cast<int>(i)) != scope.targets.end();
    if (hit[i]) in[i].axes.erase(in[i].axes.begin());
  }
  return in;
}

TensorShape joined(const std::vector<TensorShape>& in) {
  TensorShape z = in[0];
  z.axes.insert(z.axes.end(), in[1].axes.begin(), in[1].axes.end());
  return z;
}

// The linear map M with cell = outer ; M, on the joined input axes.
Diagram factor_body(const Cell& c, const std::vector<TensorShape>& in, Bindings& b) {
  if (input_arity(c) != 2 || output_arity(c) != 1) {
    fail(ErrorKind::NotMultilinear,
         fmt::format("factor: {} does not take two segments to one", describe(c)));
  }
  std::vector<std::vector<TensorShape>> levels{in};
  std::vector<std::vector<bool>> hits;
  for (const auto& scope : c.broadcasts) {
    hits.emplace_back();
    levels.push_back(strip_one(scope, levels.back(), hits.back()));
  }

  Diagram m;
  const auto& core = levels.back();
  if (auto p = c.primitive()) {
    if (!p->is<OuterProduct>()) {
      fail(ErrorKind::NotMultilinear,
           fmt::format("factor: {} is not multilinear", display_name(*p)));
    }
    m = identity_diagram(data_of({joined(core)}));
  } else {
    const Diagram& body = *c.nested();
    if (body.sections.empty() || body.sections[0].cells.size() != 1) {
      fail(ErrorKind::NotMultilinear, "factor: block does not start with a two-segment product");
    }
    m = factor_body(body.sections[0].cells[0], body.domain.segments, b);
    for (size_t k = 1; k < body.sections.size(); ++k) {
      const Section& s = body.sections[k];
      if (s.cells.size() != 1 || !is_linear(s.cells[0])) {
        fail(ErrorKind::NotMultilinear,
             fmt::format("factor: section {} of the block is not a linear map", k));
      }
      m.sections.push_back(s);
    }
    m = retyped(std::move(m), b);
  }

  for (int i = static_cast<int>(c.broadcasts.size()) - 1; i >= 0; --i) {
    const Axis& a = c.broadcasts[i].axis;
    const auto& lv = levels[i];
    const int rs = static_cast<int>(levels[i + 1][0].rank());
    Diagram pre = identity_diagram(data_of({joined(lv)}));
    if (hits[i][0] && hits[i][1]) {
      pre = single_cell(make_cell(prim(Diag{0, rs + 1})), pre.domain, b);
    } else if (hits[i][1]) {
      std::vector<int> perm{rs};
      for (int j = 0; j < static_cast<int>(joined(lv).rank()); ++j) {
        if (j != rs) perm.push_back(j);
      }
      pre = single_cell(make_cell(prim(AxisTranspose{perm})), pre.domain, b);
    } else if (!hits[i][0]) {
      fail(ErrorKind::NotMultilinear, "factor: broadcast scope targets neither segment");
    }
    m = compose_seq(pre, broadcast(m, a), b);
  }
  return m;
}

// ---- unit axes ----

class UnitDropper {
 public:
  explicit UnitDropper(Bindings& b) : b_(b) {}

  Diagram diagram(const Diagram& d) {
    const auto bounds = infer_shapes(d, b_);
    Diagram out = d;
    for (auto& s : out.domain.segments) s = squeeze(s);
    for (auto& s : out.codomain.segments) s = squeeze(s);
    for (size_t k = 0; k < d.sections.size(); ++k) {
      const Section& s = d.sections[k];
      for (size_t i = 0; i < s.cells.size(); ++i) {
        const Cell& c = s.cells[i];
        out.sections[k].cells[i] =
            cell(c, slice(bounds[k], cell_offset(s, i), input_arity(c)));
      }
    }
    drop_identity_sections(out);
    return out;
  }

 private:
  bool unit(const Axis& a) const {
    auto v = a.len.eval(b_);
    return v && *v == 1;
  }

  TensorShape squeeze(const TensorShape& s) const {
    TensorShape out;
    for (const auto& a : s.axes) {
      if (!unit(a)) out.axes.push_back(a);
    }
    return out;
  }

  std::vector<int> positions(const TensorShape& s) const {
    std::vector<int> pos;
    int n = 0;
    for (const auto& a : s.axes) pos.push_back(unit(a) ? -1 : n++);
    return pos;
  }

  Cell cell(const Cell& c, const std::vector<TensorShape>& in) {
    if (is_identity(c)) return c;
    std::vector<BroadcastScope> keep;
    for (const auto& s : c.broadcasts) {
      if (!unit(s.axis)) keep.push_back(s);
    }
    const auto stripped = body_inputs(c, in);
    if (const Diagram* n = c.nested()) {
      Diagram nd = diagram(*n);
      if (!(nd == *n)) nd.name.clear();
      return make_cell(std::move(nd), std::move(keep));
    }
    const Primitive& p = *c.primitive();
    if (auto q = primitive(p, stripped)) {
      if (q->is<Identity>()) return identity_cell();
      return make_cell(std::move(*q), std::move(keep));
    }
    return make_cell(wrapped(p, stripped), std::move(keep));
  }

  std::optional<Primitive> primitive(const Primitive& p, const std::vector<TensorShape>& in) {
    const Primitive id = prim(Identity{});
    if (p.is<Identity>() || p.is<Copy>() || p.is<Delete>() || p.is<SegmentSwap>() ||
        p.is<Add>() || p.is<ElementWise>() || p.is<Pool>() || p.is<ConstScalar>() ||
        p.is<OuterProduct>()) {
      return p;
    }
    const auto& x = in[0];
    const auto pos = positions(x);
    if (p.is<SoftMax>()) {
      if (squeeze(x).rank() == 1) return p;
      return std::nullopt;
    }
    if (auto u = p.as<Unit>()) return unit(u->axis) ? id : p;
    if (auto v = p.as<View>()) {
      View w{squeeze(v->in), squeeze(v->out)};
      if (w.in == w.out) return id;
      return prim(w);
    }
    if (auto t = p.as<AxisTranspose>()) {
      std::vector<int> perm;
      for (int src : t->perm) {
        if (pos[src] >= 0) perm.push_back(pos[src]);
      }
      if (perm == range(0, static_cast<int>(perm.size()))) return id;
      return prim(AxisTranspose{perm});
    }
    if (auto g = p.as<Diag>()) {
      if (unit(x.axes[g->first])) return id;
      return prim(Diag{pos[g->first], pos[g->second]});
    }
    if (auto c = p.as<Cup>()) {
      if (unit(x.axes[c->first])) return id;
      return prim(Cup{pos[c->first], pos[c->second]});
    }
    if (auto k = p.as<IndexKet>()) {
      if (unit(x.axes[k->axis])) return id;
      return prim(IndexKet{pos[k->axis], k->index});
    }
    if (auto s = p.as<SumAxis>()) {
      if (unit(x.axes[s->axis])) return id;
      return prim(SumAxis{pos[s->axis]});
    }
    // Weight-carrying primitives keep their declared layout.
    for (const auto& s : in) {
      if (!(squeeze(s) == s)) return std::nullopt;
    }
    for (const auto& s : output_shapes(p, in, b_)) {
      if (!(squeeze(s) == s)) return std::nullopt;
    }
    return p;
  }

  Diagram wrapped(const Primitive& p, const std::vector<TensorShape>& in) {
    const auto outs = output_shapes(p, in, b_);
    DataShape domain;
    for (const auto& s : in) domain.segments.push_back(squeeze(s));
    Builder bl(domain, b_);
    auto views = [&](const std::vector<TensorShape>& from, const std::vector<TensorShape>& to) {
      Section s;
      bool any = false;
      for (size_t i = 0; i < from.size(); ++i) {
        if (from[i] == to[i]) {
          s.cells.push_back(identity_cell());
        } else {
          s.cells.push_back(make_cell(prim(View{from[i], to[i]})));
          any = true;
        }
      }
      if (any) bl.section(std::move(s));
    };
    views(domain.segments, in);
    bl.apply(make_cell(p));
    std::vector<TensorShape> squeezed;
    for (const auto& s : outs) squeezed.push_back(squeeze(s));
    views(outs, squeezed);
    return bl.finish();
  }

  Bindings& b_;
};

std::vector<int> ints_of(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      fail(ErrorKind::BadAxisMove, fmt::format("bad axis index '{}'", item));
    }
  }
  return out;
}

}  // namespace

AxisMoves parse_axis_moves(const std::string& text) {
  if (text.empty() || text == "full") return {};
  const auto arrow = text.find("->");
  if (arrow == std::string::npos) {
    fail(ErrorKind::BadAxisMove, fmt::format("axis moves '{}': expected IN->OUT", text));
  }
  AxisMoves m{ints_of(text.substr(0, arrow)), ints_of(text.substr(arrow + 2))};
  if (m.full()) fail(ErrorKind::BadAxisMove, "axis moves name no axes");
  return m;
}

RewriteResult snake_reduce(const Diagram& d, const Bindings& bindings) {
  Bindings b = bindings;
  return snake_in(d, b);
}

RewriteResult snake_reduce_at(const Diagram& d, const CellAddress& unit, const Bindings& bindings) {
  Bindings b = bindings;
  const auto bounds = infer_shapes(d, b);
  cell_at(d, unit);
  if (auto m = snake_match(d, bounds, unit.section, unit.cell)) {
    return {snake_apply(d, unit.section, unit.cell, *m), true};
  }
  return {d, false};
}

Diagram naturality_swap(const Diagram& d, int k, const Bindings& bindings) {
  if (k < 0 || k + 1 >= static_cast<int>(d.sections.size())) {
    fail(ErrorKind::SegmentOutOfRange,
         fmt::format("naturality: no sections {} and {} ({} sections)", k, k + 1,
                     d.sections.size()));
  }
  Bindings b = bindings;
  const auto bounds = infer_shapes(d, b);
  auto active = [](const Section& s) {
    std::vector<size_t> idx;
    for (size_t i = 0; i < s.cells.size(); ++i) {
      if (!is_identity(s.cells[i])) idx.push_back(i);
    }
    return idx;
  };
  const Section& s1 = d.sections[k];
  const Section& s2 = d.sections[k + 1];
  const auto a1 = active(s1), a2 = active(s2);
  if (a1.empty() || a2.empty()) return d;
  if (a1.size() > 1 || a2.size() > 1) {
    fail(ErrorKind::NoMatch,
         fmt::format("naturality: sections {} and {} must each hold one operation", k, k + 1));
  }
  const Cell& c1 = s1.cells[a1[0]];
  const Cell& c2 = s2.cells[a2[0]];
  for (auto [c, at] : {std::pair{&c1, CellAddress{k, static_cast<int>(a1[0])}},
                       std::pair{&c2, CellAddress{k + 1, static_cast<int>(a2[0])}}}) {
    if (!is_linear(*c)) {
      fail(ErrorKind::NotLinear,
           fmt::format("naturality: cell {} ({}) is not linear", to_string(at), describe(*c)));
    }
  }
  const int i1 = cell_offset(s1, a1[0]), n1 = input_arity(c1), m1 = output_arity(c1);
  const int j = cell_offset(s2, a2[0]), n2 = input_arity(c2), m2 = output_arity(c2);
  const int n0 = static_cast<int>(bounds[k].size());

  Section first, second;
  if (j + n2 <= i1) {
    first = place(c2, j, n0);
    second = place(c1, i1 - n2 + m2, n0 - n2 + m2);
  } else if (j >= i1 + m1) {
    first = place(c2, j - m1 + n1, n0);
    second = place(c1, i1, n0 - n1 + m1);
  } else {
    std::optional<std::pair<Cell, Cell>> swapped;
    if (j == i1 && n1 == 1 && m1 == 1 && n2 == 1 && m2 == 1) {
      swapped = broadcast_swap(c1, c2, bounds[k].segments[i1]);
    }
    if (!swapped) {
      fail(ErrorKind::NoMatch,
           fmt::format("naturality: {} and {} share axes of segment {}", describe(c1),
                       describe(c2), j));
    }
    first = place(swapped->first, i1, n0);
    second = place(swapped->second, i1, n0);
  }
  Diagram out = d;
  out.sections[k] = std::move(first);
  out.sections[k + 1] = std::move(second);
  Bindings check = bindings;
  infer_shapes(out, check);
  return out;
}

Primitive transpose_primitive(const Primitive& p, const TensorShape& in, const AxisMoves& moves,
                              Bindings& bindings) {
  check_transposable(p);
  const TensorShape out = output_shapes(p, {in}, bindings)[0];
  const int na = static_cast<int>(in.rank()), nb = static_cast<int>(out.rank());
  const AxisMoves m = resolve(moves, na, nb);
  if (m.in_axes == range(0, na) && m.out_axes == range(na, na + nb)) return p;
  const bool full = m.in_axes == range(na, na + nb) && m.out_axes == range(0, na);

  if (auto t = p.as<AssocTranspose>()) {
    std::vector<int> comp = t->in_axes;
    comp.insert(comp.end(), t->out_axes.begin(), t->out_axes.end());
    std::vector<int> in2, out2;
    for (int a : m.in_axes) in2.push_back(comp[a]);
    for (int a : m.out_axes) out2.push_back(comp[a]);
    const int nq = static_cast<int>(t->base_in.rank());
    if (in2 == range(0, nq) && out2 == range(nq, static_cast<int>(comp.size()))) return *t->base;
    return prim(AssocTranspose{t->base, t->base_in, in2, out2});
  }
  if (p.is<Unit>() && na == 0 && m.out_axes.empty()) return prim(Cup{0, 1});
  if (p.is<Cup>() && na == 2 && nb == 0 && m.in_axes.empty()) return prim(Unit{in.axes[0]});
  if (full) {
    if (auto t = p.as<AxisTranspose>()) {
      std::vector<int> inv(t->perm.size());
      for (size_t i = 0; i < t->perm.size(); ++i) inv[t->perm[i]] = static_cast<int>(i);
      return prim(AxisTranspose{inv});
    }
    if (auto v = p.as<View>()) return prim(View{v->out, v->in});
    if (p.is<ElementWise>()) return p;
  }
  Primitive t = prim(AssocTranspose{std::make_shared<const Primitive>(p), in, m.in_axes,
                                    m.out_axes});
  std::vector<Axis> assoc = in.axes;
  assoc.insert(assoc.end(), out.axes.begin(), out.axes.end());
  TensorShape x;
  for (int a : m.in_axes) x.axes.push_back(assoc[a]);
  output_shapes(t, {x}, bindings);
  return t;
}

Diagram transpose_linear(const Diagram& d, const CellAddress& at, const AxisMoves& moves,
                         const Bindings& bindings) {
  Bindings b = bindings;
  const Located l = locate_linear(d, at, b);
  const AxisMoves m = resolve(moves, static_cast<int>(l.in.rank()), static_cast<int>(l.out.rank()));
  Primitive t = transpose_primitive(*l.cell->primitive(), l.in, m, b);
  return replace_transposed(d, at, l, m, make_cell(std::move(t), l.cell->broadcasts), b);
}

Diagram transpose_plumbing(const Diagram& d, const CellAddress& at, const AxisMoves& moves,
                           const Bindings& bindings) {
  Bindings b = bindings;
  const Located l = locate_linear(d, at, b);
  const AxisMoves m = resolve(moves, static_cast<int>(l.in.rank()), static_cast<int>(l.out.rank()));
  Diagram body = plumbing_body(*l.cell->primitive(), l.in, l.out, m, b);
  return replace_transposed(d, at, l, m, as_cell(std::move(body), l.cell->broadcasts), b);
}

Diagram factor_multilinear(const Diagram& d, const CellAddress& at, const Bindings& bindings) {
  Bindings b = bindings;
  const auto bounds = infer_shapes(d, b);
  const Cell& c = cell_at(d, at);
  if (c.broadcasts.empty() && c.primitive() && c.primitive()->is<OuterProduct>()) return d;
  const Section& s = d.sections[at.section];
  const int off = cell_offset(s, at.cell);
  if (input_arity(c) != 2) {
    fail(ErrorKind::NotMultilinear,
         fmt::format("factor: {} does not take two segments to one", describe(c)));
  }
  Diagram m = factor_body(c, slice(bounds[at.section], off, 2), b);
  for (const auto& sec : m.sections) {
    for (const auto& cell : sec.cells) {
      if (!is_linear(cell)) {
        fail(ErrorKind::NotMultilinear,
             fmt::format("factor: {} after the product is not linear", describe(cell)));
      }
    }
  }
  Diagram out = d;
  out.sections[at.section].cells[at.cell] = make_cell(prim(OuterProduct{}));
  Section rest = place(as_cell(std::move(m), {}), output_offset(s, at.cell),
                       static_cast<int>(bounds[at.section + 1].size()));
  if (!all_identity(rest)) {
    out.sections.insert(out.sections.begin() + at.section + 1, std::move(rest));
  }
  Bindings check = bindings;
  infer_shapes(out, check);
  return out;
}

Diagram drop_unit_axes(const Diagram& d, const Bindings& bindings) {
  Bindings b = bindings;
  return UnitDropper(b).diagram(d);
}

Diagram normalize(const Diagram& d, const Bindings& bindings) {
  Diagram out = drop_unit_axes(d, bindings);
  for (;;) {
    auto r = snake_reduce(out, bindings);
    if (!r.matched) break;
    out = std::move(r.diagram);
  }
  drop_identity_sections(out);
  return out;
}

namespace {

CellAddress site_address(const std::string& site) { return parse_address(site); }

template <class F>
bool succeeds(F&& f) {
  try {
    f();
    return true;
  } catch (const Error&) {
    return false;
  }
}

std::vector<RewriteRule> make_rules() {
  std::vector<RewriteRule> rules;
  rules.push_back(RewriteRule{
      "snake",
      [](const Diagram& d, const Bindings& bindings) {
        Bindings b = bindings;
        const auto bounds = infer_shapes(d, b);
        std::vector<std::string> sites;
        for (size_t k = 0; k < d.sections.size(); ++k) {
          for (size_t u = 0; u < d.sections[k].cells.size(); ++u) {
            if (snake_match(d, bounds, k, u)) {
              sites.push_back(to_string(CellAddress{static_cast<int>(k), static_cast<int>(u)}));
            }
          }
        }
        return sites;
      },
      [](const Diagram& d, const std::string& site, const Bindings& b) {
        if (site.empty()) return snake_reduce(d, b).diagram;
        auto r = snake_reduce_at(d, site_address(site), b);
        if (!r.matched) fail(ErrorKind::NoMatch, fmt::format("snake: no unit-cup pair at {}", site));
        return r.diagram;
      }});
  rules.push_back(RewriteRule{
      "naturality",
      [](const Diagram& d, const Bindings& b) {
        std::vector<std::string> sites;
        for (int k = 0; k + 1 < static_cast<int>(d.sections.size()); ++k) {
          bool changed = false;
          if (succeeds([&] { changed = !(naturality_swap(d, k, b) == d); }) && changed) {
            sites.push_back(std::to_string(k));
          }
        }
        return sites;
      },
      [](const Diagram& d, const std::string& site, const Bindings& b) {
        int k = 0;
        try {
          k = std::stoi(site);
        } catch (const std::exception&) {
          fail(ErrorKind::SyntaxError, fmt::format("naturality: expected a section index, got '{}'", site));
        }
        return naturality_swap(d, k, b);
      }});
  rules.push_back(RewriteRule{
      "transpose",
      [](const Diagram& d, const Bindings& b) {
        std::vector<std::string> sites;
        for (size_t k = 0; k < d.sections.size(); ++k) {
          for (size_t i = 0; i < d.sections[k].cells.size(); ++i) {
            const Cell& c = d.sections[k].cells[i];
            if (!c.primitive() || is_identity(c)) continue;
            const CellAddress at{static_cast<int>(k), static_cast<int>(i)};
            if (succeeds([&] { transpose_linear(d, at, {}, b); })) sites.push_back(to_string(at));
          }
        }
        return sites;
      },
      [](const Diagram& d, const std::string& site, const Bindings& b) {
        return transpose_linear(d, site_address(site), {}, b);
      }});
  rules.push_back(RewriteRule{
      "factor",
      [](const Diagram& d, const Bindings& b) {
        std::vector<std::string> sites;
        for (size_t k = 0; k < d.sections.size(); ++k) {
          for (size_t i = 0; i < d.sections[k].cells.size(); ++i) {
            const CellAddress at{static_cast<int>(k), static_cast<int>(i)};
            if (input_arity(d.sections[k].cells[i]) != 2) continue;
            bool changed = false;
            if (succeeds([&] { changed = !(factor_multilinear(d, at, b) == d); }) && changed) {
              sites.push_back(to_string(at));
            }
          }
        }
        return sites;
      },
      [](const Diagram& d, const std::string& site, const Bindings& b) {
        return factor_multilinear(d, site_address(site), b);
      }});
  rules.push_back(RewriteRule{
      "drop_units",
      [](const Diagram& d, const Bindings& b) {
        return drop_unit_axes(d, b) == d ? std::vector<std::string>{}
                                         : std::vector<std::string>{""};
      },
      [](const Diagram& d, const std::string&, const Bindings& b) { return drop_unit_axes(d, b); }});
  rules.push_back(RewriteRule{
      "normalize",
      [](const Diagram& d, const Bindings& b) {
        return normalize(d, b) == d ? std::vector<std::string>{} : std::vector<std::string>{""};
      },
      [](const Diagram& d, const std::string&, const Bindings& b) { return normalize(d, b); }});
  return rules;
}

}  // namespace

const std::vector<RewriteRule>& rewrite_rules() {
  static const std::vector<RewriteRule> rules = make_rules();
  return rules;
}

const RewriteRule& rewrite_rule(const std::string& name) {
  for (const auto& r : rewrite_rules()) {
    if (r.name == name) return r;
  }
  std::vector<std::string> names;
  for (const auto& r : rewrite_rules()) names.push_back(r.name);
  fail(ErrorKind::UndefinedName,
       fmt::format("unknown rule '{}', expected one of {}", name, fmt::join(names, ", ")));
}

}  // namespace ncd
