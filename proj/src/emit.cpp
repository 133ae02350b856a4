#include "ncd/emit.hpp"

#include <algorithm>
#include <map>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "ncd/error.hpp"

namespace ncd {

namespace {

struct Operand {
  int value = 0;
  std::vector<int> letters;
};

// A pending contraction: operands with letter ids, and the output letters.
struct Expr {
  std::vector<Operand> operands;
  std::vector<int> out;
};

void rename(Expr& e, int from, int to) {
  for (auto& o : e.operands) std::replace(o.letters.begin(), o.letters.end(), from, to);
  std::replace(e.out.begin(), e.out.end(), from, to);
}

bool contractible(const Primitive& p) {
  return p.is<Identity>() || p.is<AxisTranspose>() || p.is<Diag>() || p.is<Cup>() ||
         p.is<SumAxis>() || p.is<OuterProduct>();
}

bool contractible(const Cell& c) {
  if (const Primitive* p = c.primitive()) return contractible(*p);
  for (const auto& s : c.nested()->sections) {
    for (const auto& sub : s.cells) {
      if (!is_identity(sub) && !contractible(sub)) return false;
    }
  }
  return true;
}

char letter(int i) {
  if (i < 26) return static_cast<char>('a' + i);
  if (i < 52) return static_cast<char>('A' + i - 26);
  fail(ErrorKind::TooLarge, "contraction needs more than 52 index letters");
}

class Planner {
 public:
  explicit Planner(Bindings& b) : b_(b) {}

  Plan run(const Diagram& d) {
    plan_.num_inputs = static_cast<int>(d.domain.size());
    std::vector<Expr> state;
    for (const auto& s : d.domain.segments) state.push_back(leaf(new_value(s)));
    state = diagram(d, std::move(state));
    for (auto& e : state) plan_.outputs.push_back(materialize(e));
    return std::move(plan_);
  }

 private:
  int new_value(const TensorShape& s) {
    values_.push_back(s);
    return static_cast<int>(values_.size()) - 1;
  }

  int fresh(const Axis& a) {
    axes_.push_back(a);
    return static_cast<int>(axes_.size()) - 1;
  }

  Expr leaf(int v) {
    Expr e;
    Operand o{v, {}};
    for (const auto& axis : values_[v].axes) {
      const int l = fresh(axis);
      o.letters.push_back(l);
      e.out.push_back(l);
    }
    e.operands.push_back(std::move(o));
    return e;
  }

  TensorShape shape(const Expr& e) const {
    TensorShape s;
    for (int l : e.out) s.axes.push_back(axes_[l]);
    return s;
  }

  int materialize(const Expr& e) {
    if (e.operands.size() == 1 && e.operands[0].letters == e.out) return e.operands[0].value;
    std::map<int, int> names;
    auto spell = [&](const std::vector<int>& ls) {
      std::string s;
      for (int l : ls) {
        auto it = names.emplace(l, static_cast<int>(names.size())).first;
        s += letter(it->second);
      }
      return s;
    };
    PlanStep step;
    step.kind = PlanStep::Kind::Contract;
    step.op = "contract";
    std::vector<std::string> ins;
    for (const auto& o : e.operands) {
      ins.push_back(spell(o.letters));
      step.inputs.push_back(o.value);
      step.in_shapes.push_back(values_[o.value]);
    }
    step.index = fmt::format("{}->{}", fmt::join(ins, ","), spell(e.out));
    step.out_shapes = {shape(e)};
    step.outputs = {new_value(step.out_shapes[0])};
    plan_.steps.push_back(std::move(step));
    return plan_.steps.back().outputs[0];
  }

  std::vector<Expr> diagram(const Diagram& d, std::vector<Expr> state) {
    for (const auto& s : d.sections) {
      std::vector<Expr> next;
      int off = 0;
      for (const auto& c : s.cells) {
        const int n = input_arity(c);
        std::vector<Expr> in(state.begin() + off, state.begin() + off + n);
        for (auto& e : cell(c, std::move(in))) next.push_back(std::move(e));
        off += n;
      }
      state = std::move(next);
    }
    return state;
  }

  std::vector<Expr> cell(const Cell& c, std::vector<Expr> in) {
    if (is_identity(c)) return in;
    if (contractible(c)) return symbolic(c, 0, std::move(in));
    const int n = static_cast<int>(in.size());
    const auto full = [n](const BroadcastScope& s) {
      return !s.inner || std::set<int>(s.targets.begin(), s.targets.end()).size() ==
                             static_cast<size_t>(n);
    };
    if (c.nested() && std::all_of(c.broadcasts.begin(), c.broadcasts.end(), full)) {
      // Outer broadcasts distribute over the sections of the body.
      Diagram body = *c.nested();
      std::vector<BroadcastScope> scopes;
      for (const auto& s : c.broadcasts) scopes.push_back(BroadcastScope{s.axis});
      for (auto& s : body.sections) {
        for (auto& sub : s.cells) {
          if (!is_identity(sub)) sub.broadcasts.insert(sub.broadcasts.begin(), scopes.begin(),
                                                       scopes.end());
        }
      }
      return diagram(body, std::move(in));
    }
    PlanStep step;
    step.kind = PlanStep::Kind::Apply;
    step.cell = c;
    step.op = c.primitive() ? display_name(*c.primitive())
                            : (c.nested()->name.empty() ? "block" : "call " + c.nested()->name);
    for (const auto& e : in) {
      step.inputs.push_back(materialize(e));
      step.in_shapes.push_back(values_[step.inputs.back()]);
    }
    step.out_shapes = cell_outputs(c, step.in_shapes, b_);
    std::vector<Expr> out;
    for (const auto& s : step.out_shapes) {
      step.outputs.push_back(new_value(s));
      out.push_back(leaf(step.outputs.back()));
    }
    plan_.steps.push_back(std::move(step));
    return out;
  }

  std::vector<Expr> symbolic(const Cell& c, size_t level, std::vector<Expr> in) {
    if (level == c.broadcasts.size()) {
      if (const Primitive* p = c.primitive()) return primitive(*p, std::move(in));
      return diagram(*c.nested(), std::move(in));
    }
    const BroadcastScope& scope = c.broadcasts[level];
    std::vector<int> targets = scope.targets;
    if (!scope.inner) {
      targets.clear();
      for (size_t i = 0; i < in.size(); ++i) targets.push_back(static_cast<int>(i));
    }
    const int shared = fresh(scope.axis);
    active_.insert(shared);
    for (int t : targets) {
      const int l = in[t].out.front();
      in[t].out.erase(in[t].out.begin());
      for (auto& e : in) rename(e, l, shared);
    }
    auto out = symbolic(c, level + 1, std::move(in));
    for (auto& e : out) e.out.insert(e.out.begin(), shared);
    active_.erase(shared);
    return out;
  }

  std::vector<Expr> primitive(const Primitive& p, std::vector<Expr> in) {
    if (p.is<Identity>()) return in;
    if (p.is<OuterProduct>()) return {merge(std::move(in[0]), std::move(in[1]))};
    Expr e = std::move(in[0]);
    if (auto t = p.as<AxisTranspose>()) {
      std::vector<int> out;
      for (int i : t->perm) out.push_back(e.out[i]);
      e.out = std::move(out);
    } else if (auto d = p.as<Diag>()) {
      rename(e, e.out[d->second], e.out[d->first]);
      e.out.erase(e.out.begin() + std::max(d->first, d->second));
    } else if (auto c = p.as<Cup>()) {
      rename(e, e.out[c->second], e.out[c->first]);
      e.out.erase(e.out.begin() + std::max(c->first, c->second));
      e.out.erase(e.out.begin() + std::min(c->first, c->second));
    } else if (auto s = p.as<SumAxis>()) {
      e.out.erase(e.out.begin() + s->axis);
    }
    return {std::move(e)};
  }

  // Outer product of two pending expressions; letters private to `b` that
  // collide with `a` are renewed.
  Expr merge(Expr a, Expr b) {
    std::set<int> used;
    for (const auto& o : a.operands) used.insert(o.letters.begin(), o.letters.end());
    used.insert(a.out.begin(), a.out.end());
    std::set<int> clash;
    for (const auto& o : b.operands) {
      for (int l : o.letters) {
        if (used.count(l) && !active_.count(l)) clash.insert(l);
      }
    }
    for (int l : clash) rename(b, l, fresh(axes_[l]));
    for (auto& o : b.operands) a.operands.push_back(std::move(o));
    a.out.insert(a.out.end(), b.out.begin(), b.out.end());
    return a;
  }

  Bindings& b_;
  Plan plan_;
  std::vector<TensorShape> values_;
  std::vector<Axis> axes_;
  std::set<int> active_;
};

nlohmann::json axis_labels(const std::vector<TensorShape>& shapes) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& s : shapes) {
    nlohmann::json labels = nlohmann::json::array();
    for (const auto& a : s.axes) labels.push_back(to_string(a));
    out.push_back(labels);
  }
  return out;
}

}  // namespace

Plan to_plan(const Diagram& d, const Bindings& bindings) {
  Bindings b = bindings;
  infer_shapes(d, b);
  return Planner(b).run(d);
}

std::string plan_jsonl(const Plan& plan) {
  std::string out;
  for (size_t i = 0; i < plan.steps.size(); ++i) {
    const PlanStep& s = plan.steps[i];
    nlohmann::ordered_json j;
    j["step"] = i;
    j["op"] = s.op;
    if (s.kind == PlanStep::Kind::Contract) j["index"] = s.index;
    j["inputs"] = s.inputs;
    j["outputs"] = s.outputs;
    j["in_axes"] = axis_labels(s.in_shapes);
    j["out_axes"] = axis_labels(s.out_shapes);
    out += j.dump() + "\n";
  }
  nlohmann::ordered_json r;
  r["step"] = plan.steps.size();
  r["op"] = "return";
  r["inputs"] = plan.outputs;
  out += r.dump() + "\n";
  return out;
}

// ---- SVG -------------------------------------------------------------------

namespace {

constexpr int kMargin = 40;
constexpr int kLink = 48;
constexpr int kStub = 14;
constexpr int kTop = 50;
constexpr int kRow = 20;
constexpr int kGap = 16;
constexpr int kHalfBox = 36;

struct SegmentRows {
  int anchor = 0;  // row of the first wire, or where a scalar sits
  std::vector<int> wires;
  int end = 0;     // first free row below
};

// Segments of one boundary as seen from one side.
struct Side {
  std::vector<SegmentRows> segments;
  int bottom = kTop;

  std::vector<int> separators() const {
    std::vector<int> out;
    for (size_t i = 0; i + 1 < segments.size(); ++i) {
      out.push_back((segments[i].end - kRow + segments[i + 1].anchor) / 2);
    }
    return out;
  }
};

// Lays out `shapes` from row `y`; returns the first free row.
int place(Side& side, const std::vector<TensorShape>& shapes, int y) {
  for (size_t i = 0; i < shapes.size(); ++i) {
    if (i) y += kGap;
    SegmentRows r;
    r.anchor = y;
    for (size_t a = 0; a < shapes[i].rank(); ++a) {
      r.wires.push_back(y);
      y += kRow;
    }
    if (shapes[i].rank() == 0) y += kRow;
    r.end = y;
    side.segments.push_back(std::move(r));
  }
  side.bottom = std::max(side.bottom, y);
  return y;
}

struct SectionLayout {
  Side in, out;
  std::vector<std::pair<int, int>> spans;  // glyph rows per cell
  int half = kHalfBox;
};

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string text(int x, int y, const std::string& s, const std::string& extra = "") {
  return fmt::format("<text x=\"{}\" y=\"{}\"{}>{}</text>\n", x, y, extra, escape(s));
}

std::string scope_label(const std::vector<BroadcastScope>& scopes) {
  std::vector<std::string> parts;
  for (const auto& s : scopes) {
    std::string p = to_string(s.axis);
    if (s.inner) p += fmt::format("@{}", fmt::join(s.targets, ","));
    parts.push_back(p);
  }
  return fmt::format("{}", fmt::join(parts, " "));
}

// Derived extents have long keys; show their value when it is known.
std::string wire_label(const Axis& axis, const Bindings& bindings) {
  std::string label = to_string(axis);
  if (label.size() <= 8) return label;
  if (auto v = axis.len.eval(bindings)) return std::to_string(*v);
  return label.substr(0, 7) + "~";
}

// Text drawn inside the glyph.
std::string caption(const Cell& c) {
  const Primitive* p = c.primitive();
  if (!p) return c.nested()->name.empty() ? "block" : c.nested()->name;
  if (auto l = p->as<LinearParam>()) return "L " + l->name;
  if (auto k = p->as<IndexKet>()) return fmt::format("{}={}", k->axis, k->index);
  if (auto e = p->as<ElementWise>()) return ew_name(*e);
  if (p->is<SoftMax>() || p->is<Copy>() || p->is<Add>() || p->is<Delete>()) return "";
  return display_name(*p);
}

int half_width(const Cell& c) {
  int w = 6 * static_cast<int>(caption(c).size()) + 16;
  if (!c.broadcasts.empty()) {
    w = std::max(w, 5 * static_cast<int>(scope_label(c.broadcasts).size() + 4) + 8);
  }
  return std::max(kHalfBox, (w + 1) / 2);
}

// One glyph element (class "glyph") plus its decorations.
std::string glyph(const Cell& c, int cx, int y0, int y1, int half) {
  const int x0 = cx - half, x1 = cx + half, mid = (y0 + y1) / 2;
  std::string out;
  auto box = [&](const std::string& extra) {
    out += fmt::format(
        "<rect class=\"glyph\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\"{}/>\n", x0, y0,
        x1 - x0, y1 - y0, extra);
  };
  const Primitive* p = c.primitive();
  if (!p) {
    box(" fill=\"none\" stroke-dasharray=\"6 3\"");
    out += text(cx, mid + 4, caption(c), " text-anchor=\"middle\"");
  } else if (auto l = p->as<LinearParam>()) {
    box(" fill=\"#f4f4f4\"");
    out += text(cx, mid + 5, caption(c), " text-anchor=\"middle\" font-weight=\"bold\"");
    if (l->bias) out += text(x1 - 8, y0 + 12, "+", " text-anchor=\"middle\" font-weight=\"bold\"");
  } else if (p->is<SoftMax>()) {
    out += fmt::format(
        "<polygon class=\"glyph\" points=\"{},{} {},{} {},{}\" fill=\"#ffffff\"/>\n", x1 - 12,
        y0, x1 - 12, y1, x0 + 12, mid);
  } else if (auto k = p->as<IndexKet>()) {
    out += fmt::format(
        "<polygon class=\"glyph\" points=\"{},{} {},{} {},{} {},{} {},{}\" fill=\"#ffffff\"/>\n",
        x0 + 10, y0, cx + 14, y0, x1 - 4, mid, cx + 14, y1, x0 + 10, y1);
    out += text(cx, mid + 4, caption(c), " text-anchor=\"middle\"");
  } else if (p->is<Copy>() || p->is<Add>()) {
    out += fmt::format("<circle class=\"glyph\" cx=\"{}\" cy=\"{}\" r=\"7\" fill=\"{}\"/>\n", cx,
                       mid, p->is<Copy>() ? "#000000" : "#ffffff");
    if (p->is<Add>()) out += text(cx, mid + 4, "+", " text-anchor=\"middle\"");
  } else if (p->is<Delete>()) {
    out += fmt::format(
        "<rect class=\"glyph\" x=\"{}\" y=\"{}\" width=\"8\" height=\"8\" fill=\"#000000\"/>\n",
        cx - 4, mid - 4);
  } else if (p->is<Cup>() || p->is<Unit>()) {
    const int side = p->is<Cup>() ? x0 + 10 : x1 - 10;
    const int far = p->is<Cup>() ? x1 - 6 : x0 + 6;
    out += fmt::format(
        "<path class=\"glyph\" d=\"M {} {} C {} {} {} {} {} {}\" fill=\"none\"/>\n", side,
        y0 + 4, far, y0 + 4, far, y1 - 4, side, y1 - 4);
    out += text(cx, y1 + 12, caption(c), " text-anchor=\"middle\" font-size=\"9\"");
  } else if (auto e = p->as<ElementWise>()) {
    box(" rx=\"10\" fill=\"#ffffff\"");
    out += text(cx, mid + 4, caption(c), " text-anchor=\"middle\"");
  } else {
    box(" fill=\"#ffffff\"");
    out += text(cx, mid + 4, caption(c), " text-anchor=\"middle\" font-size=\"10\"");
  }
  if (!c.broadcasts.empty()) {
    out += text(cx, y0 - 5, "map " + scope_label(c.broadcasts),
                " text-anchor=\"middle\" font-size=\"9\" font-style=\"italic\"");
  }
  return out;
}

}  // namespace

std::string to_svg(const Diagram& d, const Bindings& bindings) {
  Bindings b = bindings;
  const auto bounds = infer_shapes(d, b);

  std::vector<SectionLayout> layout;
  for (size_t k = 0; k < d.sections.size(); ++k) {
    SectionLayout L;
    int y = kTop, off = 0, out_off = 0;
    for (size_t i = 0; i < d.sections[k].cells.size(); ++i) {
      const Cell& c = d.sections[k].cells[i];
      const int n = input_arity(c), m = output_arity(c);
      if (i && n + m > 0) y += kGap;
      std::vector<TensorShape> ins(bounds[k].segments.begin() + off,
                                   bounds[k].segments.begin() + off + n);
      std::vector<TensorShape> outs(bounds[k + 1].segments.begin() + out_off,
                                    bounds[k + 1].segments.begin() + out_off + m);
      const int end = std::max({place(L.in, ins, y), place(L.out, outs, y), n + m ? y : y + kRow});
      int top = 1 << 30, low = -(1 << 30);
      for (size_t s = L.in.segments.size() - n; s < L.in.segments.size(); ++s) {
        top = std::min(top, L.in.segments[s].anchor);
        low = std::max(low, L.in.segments[s].end - kRow);
      }
      for (size_t s = L.out.segments.size() - m; s < L.out.segments.size(); ++s) {
        top = std::min(top, L.out.segments[s].anchor);
        low = std::max(low, L.out.segments[s].end - kRow);
      }
      if (n + m == 0) top = low = y;
      L.spans.emplace_back(top - 10, low + 10);
      if (!is_identity(c)) L.half = std::max(L.half, half_width(c));
      y = end;
      off += n;
      out_off += m;
    }
    layout.push_back(std::move(L));
  }

  // Boundary k is drawn in a link zone; `left` is how the previous section
  // left it, `right` how the next one takes it.
  std::vector<Side> left, right;
  for (size_t k = 0; k < bounds.size(); ++k) {
    Side whole;
    place(whole, bounds[k].segments, kTop);
    left.push_back(k == 0 ? whole : layout[k - 1].out);
    right.push_back(k < layout.size() ? layout[k].in : left.back());
  }
  if (d.sections.empty()) right[0] = left[0];

  std::vector<int> link_x;  // left edge of each link zone
  std::vector<int> column_x;
  int x = kMargin;
  for (size_t k = 0; k < bounds.size(); ++k) {
    link_x.push_back(x);
    x += kLink;
    if (k < layout.size()) {
      column_x.push_back(x);
      x += 2 * (layout[k].half + kStub);
    }
  }
  int bottom = kTop;
  for (size_t k = 0; k < bounds.size(); ++k) {
    bottom = std::max({bottom, left[k].bottom, right[k].bottom});
  }
  const int width = x + kMargin;
  const int height = bottom + kMargin;

  std::string body;
  auto line = [&](int x0, int y0, int x1, int y1) {
    body += fmt::format("<line class=\"wire\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\"/>\n", x0,
                        y0, x1, y1);
  };

  for (size_t k = 0; k < bounds.size(); ++k) {
    const int x0 = link_x[k], x1 = x0 + kLink;
    for (size_t i = 0; i < bounds[k].size(); ++i) {
      const auto& from = left[k].segments[i].wires;
      const auto& to = right[k].segments[i].wires;
      for (size_t a = 0; a < from.size(); ++a) {
        if (from[a] == to[a]) {
          line(x0, from[a], x1, to[a]);
        } else {
          body += fmt::format(
              "<polyline class=\"wire\" points=\"{},{} {},{} {},{}\" fill=\"none\"/>\n", x0,
              from[a], x0 + 16, to[a], x1, to[a]);
        }
      }
    }
  }

  for (size_t k = 0; k < d.sections.size(); ++k) {
    const SectionLayout& L = layout[k];
    const int x0 = column_x[k], x1 = x0 + 2 * (L.half + kStub), cx = (x0 + x1) / 2;
    size_t in_off = 0, out_off = 0;
    for (size_t i = 0; i < d.sections[k].cells.size(); ++i) {
      const Cell& c = d.sections[k].cells[i];
      const size_t n = input_arity(c), m = output_arity(c);
      if (is_identity(c)) {
        for (int y : L.in.segments[in_off].wires) line(x0, y, x1, y);
      } else {
        const Primitive* p = c.primitive();
        const bool dot = p && (p->is<Copy>() || p->is<Add>() || p->is<Delete>());
        const int mid = (L.spans[i].first + L.spans[i].second) / 2;
        auto wire = [&](int xa, int ya, int xb, int yb, int xc, int yc) {
          body += fmt::format(
              "<polyline class=\"wire\" points=\"{},{} {},{} {},{}\" fill=\"none\"/>\n", xa, ya,
              xb, yb, xc, yc);
        };
        for (size_t s = in_off; s < in_off + n; ++s) {
          for (int y : L.in.segments[s].wires) {
            if (dot) {
              wire(x0, y, cx - L.half, y, cx, mid);
            } else {
              line(x0, y, cx - L.half, y);
            }
          }
        }
        for (size_t s = out_off; s < out_off + m; ++s) {
          for (int y : L.out.segments[s].wires) {
            if (dot) {
              wire(cx, mid, cx + L.half, y, x1, y);
            } else {
              line(cx + L.half, y, x1, y);
            }
          }
        }
        body += glyph(c, cx, L.spans[i].first, L.spans[i].second, L.half);
      }
      in_off += n;
      out_off += m;
    }
  }

  for (size_t k = 0; k < bounds.size(); ++k) {
    const int x0 = link_x[k];
    for (int y : right[k].separators()) {
      body += fmt::format(
          "<line class=\"sep\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke-dasharray=\"4 3\"/>\n",
          x0 + 18, y, x0 + kLink - 2, y);
    }
    for (size_t i = 0; i < bounds[k].size(); ++i) {
      const auto& axes = bounds[k][i].axes;
      const auto& ys = right[k].segments[i].wires;
      for (size_t a = 0; a < axes.size(); ++a) {
        body += text(x0 + 20, ys[a] - 4, wire_label(axes[a], b), " class=\"label\" font-size=\"9\"");
      }
    }
  }

  std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{0}\" height=\"{1}\" "
      "viewBox=\"0 0 {0} {1}\">\n",
      width, height);
  out += fmt::format("<title>{}</title>\n", escape(d.name));
  out += "<style>text { stroke: none; }</style>\n";
  out += "<g font-family=\"sans-serif\" font-size=\"11\" stroke=\"#000000\" stroke-width=\"1.2\">\n";
  out += text(kMargin, 24, d.name, " font-size=\"13\" stroke=\"none\"");
  out += body;
  out += "</g>\n</svg>\n";
  return out;
}

}  // namespace ncd
