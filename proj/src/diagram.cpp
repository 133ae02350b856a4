#include "ncd/diagram.hpp"

#include <algorithm>
#include <charconv>

#include <fmt/format.h>

#include "ncd/error.hpp"

namespace ncd {

const Diagram* Cell::nested() const {
  auto p = std::get_if<std::shared_ptr<const Diagram>>(&body);
  return p ? p->get() : nullptr;
}

bool Cell::operator==(const Cell& o) const {
  if (broadcasts != o.broadcasts) return false;
  if (primitive() && o.primitive()) return *primitive() == *o.primitive();
  if (nested() && o.nested()) return *nested() == *o.nested();
  return false;
}

bool Diagram::operator==(const Diagram& o) const {
  return name == o.name && domain == o.domain && codomain == o.codomain &&
         sections == o.sections;
}

Cell make_cell(Primitive p, std::vector<BroadcastScope> broadcasts) {
  return Cell{std::move(p), std::move(broadcasts)};
}

Cell make_cell(Diagram d, std::vector<BroadcastScope> broadcasts) {
  return Cell{std::make_shared<const Diagram>(std::move(d)), std::move(broadcasts)};
}

Cell identity_cell() { return make_cell(prim(Identity{})); }

bool is_identity(const Cell& c) { return c.primitive() && c.primitive()->is<Identity>(); }

int input_arity(const Cell& c) {
  if (auto p = c.primitive()) return input_arity(*p);
  return static_cast<int>(c.nested()->domain.size());
}

int output_arity(const Cell& c) {
  if (auto p = c.primitive()) {
    if (p->is<Copy>()) return 2;
    if (p->is<Delete>()) return 0;
    if (auto s = p->as<SegmentSwap>()) return s->span;
    return 1;
  }
  return static_cast<int>(c.nested()->codomain.size());
}

bool is_linear(const Cell& c) {
  if (auto p = c.primitive()) return is_linear(*p);
  for (const auto& s : c.nested()->sections) {
    for (const auto& cell : s.cells) {
      if (!is_linear(cell)) return false;
    }
  }
  return true;
}

std::vector<TensorShape> cell_outputs(const Cell& c, const std::vector<TensorShape>& in,
                                      Bindings& bindings) {
  std::vector<TensorShape> stripped = in;
  for (const auto& scope : c.broadcasts) {
    std::vector<bool> hit(stripped.size(), !scope.inner);
    for (int t : scope.targets) {
      if (t < 0 || t >= static_cast<int>(stripped.size())) {
        fail(ErrorKind::SegmentOutOfRange,
             fmt::format("inner broadcast target {} out of range ({} segments)", t,
                         stripped.size()));
      }
      hit[t] = true;
    }
    for (size_t i = 0; i < stripped.size(); ++i) {
      if (!hit[i]) continue;
      auto& seg = stripped[i];
      if (seg.rank() == 0 || !unify(scope.axis.len, seg.axes.front().len, bindings)) {
        fail(ErrorKind::ShapeMismatch,
             fmt::format("broadcast over {} expects a leading {} axis on segment {}, found {}",
                         to_string(scope.axis), to_string(scope.axis), i,
                         to_string(seg, bindings)));
      }
      seg.axes.erase(seg.axes.begin());
    }
  }

  std::vector<TensorShape> out;
  if (auto p = c.primitive()) {
    out = output_shapes(*p, stripped, bindings);
  } else {
    const Diagram& d = *c.nested();
    expect_data(d.domain, data_of(stripped), bindings,
                d.name.empty() ? std::string("block input") : "call " + d.name);
    infer_shapes(d, bindings);
    out = d.codomain.segments;
  }

  for (auto it = c.broadcasts.rbegin(); it != c.broadcasts.rend(); ++it) {
    for (auto& seg : out) seg.axes.insert(seg.axes.begin(), it->axis);
  }
  return out;
}

std::vector<TensorShape> body_inputs(const Cell& c, std::vector<TensorShape> in) {
  for (const auto& scope : c.broadcasts) {
    for (size_t i = 0; i < in.size(); ++i) {
      const bool hit = !scope.inner || std::find(scope.targets.begin(), scope.targets.end(),
                                                 static_cast<int>(i)) != scope.targets.end();
      if (hit && in[i].rank() > 0) in[i].axes.erase(in[i].axes.begin());
    }
  }
  return in;
}

Cell as_cell(Diagram body, std::vector<BroadcastScope> scopes) {
  std::erase_if(body.sections, [](const Section& s) {
    return std::all_of(s.cells.begin(), s.cells.end(), [](const Cell& c) { return is_identity(c); });
  });
  if (body.sections.empty()) return identity_cell();
  if (body.sections.size() == 1 && body.sections[0].cells.size() == 1) {
    Cell c = body.sections[0].cells[0];
    c.broadcasts.insert(c.broadcasts.begin(), scopes.begin(), scopes.end());
    return c;
  }
  body.name.clear();
  return make_cell(std::move(body), std::move(scopes));
}

DataShape section_output(const Section& s, const DataShape& in, Bindings& bindings) {
  DataShape out;
  size_t pos = 0;
  for (size_t i = 0; i < s.cells.size(); ++i) {
    const Cell& c = s.cells[i];
    const size_t n = static_cast<size_t>(input_arity(c));
    if (pos + n > in.size()) {
      fail(ErrorKind::SegmentOutOfRange,
           fmt::format("cell {} needs {} segment(s) at {}, but only {} exist", i, n, pos,
                       in.size()));
    }
    std::vector<TensorShape> args(in.segments.begin() + pos, in.segments.begin() + pos + n);
    auto res = cell_outputs(c, args, bindings);
    out.segments.insert(out.segments.end(), res.begin(), res.end());
    pos += n;
  }
  if (pos != in.size()) {
    fail(ErrorKind::SegmentOutOfRange,
         fmt::format("section covers {} of {} segments", pos, in.size()));
  }
  return out;
}

int cell_offset(const Section& s, size_t idx) {
  int pos = 0;
  for (size_t i = 0; i < idx && i < s.cells.size(); ++i) pos += input_arity(s.cells[i]);
  return pos;
}

std::vector<DataShape> infer_shapes(const Diagram& d, Bindings& bindings) {
  std::vector<DataShape> bounds{d.domain};
  for (size_t k = 0; k < d.sections.size(); ++k) {
    try {
      bounds.push_back(section_output(d.sections[k], bounds.back(), bindings));
    } catch (const Error& e) {
      const std::string where = d.name.empty() ? "" : d.name + ": ";
      throw Error(e.kind(), fmt::format("{}section {}: {}", where, k, e.what()), e.span());
    }
  }
  if (bounds.back().size() == 0 && d.codomain.size() == 0) return bounds;
  expect_data(d.codomain, bounds.back(), bindings,
              d.name.empty() ? std::string("codomain") : d.name + " codomain");
  return bounds;
}

Diagram identity_diagram(DataShape shape) {
  Diagram d;
  d.domain = shape;
  d.codomain = std::move(shape);
  return d;
}

Diagram single_cell(Cell c, DataShape domain, Bindings& bindings) {
  Diagram d;
  d.domain = domain;
  d.codomain = data_of(cell_outputs(c, domain.segments, bindings));
  d.sections.push_back(Section{{std::move(c)}});
  return d;
}

Diagram compose_seq(const Diagram& f, const Diagram& g, Bindings& bindings) {
  expect_data(g.domain, f.codomain, bindings, "compose");
  Diagram d;
  d.name = f.name;
  d.arg = f.arg;
  d.domain = f.domain;
  d.codomain = g.codomain;
  d.sections = f.sections;
  d.sections.insert(d.sections.end(), g.sections.begin(), g.sections.end());
  return d;
}

Diagram compose_seq(const Diagram& f, const Diagram& g) {
  Bindings scratch;
  return compose_seq(f, g, scratch);
}

namespace {

Section identity_section(size_t segments) {
  Section s;
  s.cells.assign(segments, identity_cell());
  return s;
}

}  // namespace

Diagram stack(const Diagram& f, const Diagram& g) {
  Diagram d;
  d.name = f.name;
  d.arg = f.arg;
  d.domain = f.domain;
  d.domain.segments.insert(d.domain.segments.end(), g.domain.segments.begin(),
                           g.domain.segments.end());
  d.codomain = f.codomain;
  d.codomain.segments.insert(d.codomain.segments.end(), g.codomain.segments.begin(),
                             g.codomain.segments.end());
  const size_t n = std::max(f.sections.size(), g.sections.size());
  for (size_t k = 0; k < n; ++k) {
    Section s = k < f.sections.size() ? f.sections[k] : identity_section(f.codomain.size());
    Section t = k < g.sections.size() ? g.sections[k] : identity_section(g.codomain.size());
    s.cells.insert(s.cells.end(), t.cells.begin(), t.cells.end());
    d.sections.push_back(std::move(s));
  }
  return d;
}

Diagram broadcast(const Diagram& f, const Axis& axis) {
  Diagram d = f;
  for (auto& seg : d.domain.segments) seg.axes.insert(seg.axes.begin(), axis);
  for (auto& seg : d.codomain.segments) seg.axes.insert(seg.axes.begin(), axis);
  for (auto& s : d.sections) {
    for (auto& c : s.cells) {
      if (is_identity(c)) continue;
      c.broadcasts.insert(c.broadcasts.begin(), BroadcastScope{axis, false, {}});
    }
  }
  return d;
}

Diagram inner_broadcast(const Diagram& f, const Axis& axis, std::vector<int> targets) {
  for (int t : targets) {
    if (t < 0 || t >= static_cast<int>(f.domain.size())) {
      fail(ErrorKind::SegmentOutOfRange,
           fmt::format("inner broadcast target {} out of range ({} segments)", t,
                       f.domain.size()));
    }
  }
  Diagram d;
  d.name = f.name;
  d.arg = f.arg;
  d.domain = f.domain;
  for (int t : targets) {
    d.domain.segments[t].axes.insert(d.domain.segments[t].axes.begin(), axis);
  }
  d.codomain = f.codomain;
  for (auto& seg : d.codomain.segments) seg.axes.insert(seg.axes.begin(), axis);

  BroadcastScope scope{axis, true, std::move(targets)};
  const bool hoist = f.sections.size() == 1 && f.sections[0].cells.size() == 1 &&
                     !is_identity(f.sections[0].cells[0]);
  Cell c;
  if (hoist) {
    c = f.sections[0].cells[0];
  } else {
    Diagram body = f;
    body.name.clear();
    c = make_cell(std::move(body));
  }
  c.broadcasts.insert(c.broadcasts.begin(), std::move(scope));
  d.sections.push_back(Section{{std::move(c)}});
  return d;
}

Diagram inner_broadcast(const Diagram& f, const Axis& axis, int target) {
  return inner_broadcast(f, axis, std::vector<int>{target});
}

CellAddress parse_address(const std::string& text) {
  CellAddress a;
  const auto dot = text.find('.');
  auto parse_int = [&](std::string_view sv, int& out) {
    auto [p, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), out);
    return ec == std::errc() && p == sv.data() + sv.size() && out >= 0;
  };
  std::string_view sv(text);
  if (dot == std::string::npos || !parse_int(sv.substr(0, dot), a.section) ||
      !parse_int(sv.substr(dot + 1), a.cell)) {
    fail(ErrorKind::SyntaxError, fmt::format("bad cell address '{}', expected S.C", text));
  }
  return a;
}

std::string to_string(const CellAddress& a) { return fmt::format("{}.{}", a.section, a.cell); }

const Cell& cell_at(const Diagram& d, const CellAddress& a) {
  if (a.section < 0 || a.section >= static_cast<int>(d.sections.size()) || a.cell < 0 ||
      a.cell >= static_cast<int>(d.sections[a.section].cells.size())) {
    fail(ErrorKind::SegmentOutOfRange, fmt::format("no cell at {}", to_string(a)));
  }
  return d.sections[a.section].cells[a.cell];
}

Builder::Builder(DataShape domain, Bindings& bindings, std::string name, std::string arg)
    : state_(domain), bindings_(bindings) {
  d_.name = std::move(name);
  d_.arg = std::move(arg);
  d_.domain = std::move(domain);
}

Builder& Builder::apply(Cell c, int at) {
  const int n = input_arity(c);
  if (at < 0 || at + n > static_cast<int>(state_.size())) {
    fail(ErrorKind::SegmentOutOfRange,
         fmt::format("segment {} out of range for {} ({} segment(s))", at + n - 1,
                     to_string(state_, bindings_), state_.size()));
  }
  Section s;
  for (int i = 0; i < at; ++i) s.cells.push_back(identity_cell());
  s.cells.push_back(std::move(c));
  for (int i = at + n; i < static_cast<int>(state_.size()); ++i) {
    s.cells.push_back(identity_cell());
  }
  return section(std::move(s));
}

Builder& Builder::section(Section s) {
  state_ = section_output(s, state_, bindings_);
  d_.sections.push_back(std::move(s));
  return *this;
}

Builder& Builder::move_segment(int from, int to) {
  while (from < to) {
    apply(make_cell(prim(SegmentSwap{2})), from);
    ++from;
  }
  while (from > to) {
    apply(make_cell(prim(SegmentSwap{2})), from - 1);
    --from;
  }
  return *this;
}

Diagram Builder::finish(const DataShape* codomain) {
  if (codomain) {
    expect_data(*codomain, state_, bindings_,
                d_.name.empty() ? std::string("codomain") : d_.name + " codomain");
    d_.codomain = *codomain;
  } else {
    d_.codomain = state_;
  }
  return d_;
}

}  // namespace ncd
