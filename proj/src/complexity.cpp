#include "ncd/complexity.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <json.hpp>

#include "ncd/error.hpp"
#include "ncd/interp.hpp"

namespace ncd {

CostPoly CostPoly::constant(int64_t n) {
  CostPoly p;
  if (n != 0) p.terms_[{}] = n;
  return p;
}

CostPoly CostPoly::of(const Extent& e) {
  CostPoly p;
  if (e.coefficient() == 0) return p;
  Monomial m;
  for (const auto& [atom, exp] : e.factors()) {
    m.emplace_back(atom.key(), exp);
    p.atoms_.emplace(atom.key(), atom);
  }
  std::sort(m.begin(), m.end());
  p.terms_[m] = e.coefficient();
  return p;
}

CostPoly CostPoly::elements(const TensorShape& s) { return of(s.elements()); }

CostPoly& CostPoly::operator+=(const CostPoly& o) {
  for (const auto& [m, c] : o.terms_) terms_[m] += c;
  atoms_.insert(o.atoms_.begin(), o.atoms_.end());
  return *this;
}

CostPoly operator*(const CostPoly& a, const CostPoly& b) {
  CostPoly out;
  for (const auto& [ma, ca] : a.terms_) {
    for (const auto& [mb, cb] : b.terms_) {
      std::map<std::string, int> exps;
      for (const auto& [k, e] : ma) exps[k] += e;
      for (const auto& [k, e] : mb) exps[k] += e;
      out.terms_[CostPoly::Monomial(exps.begin(), exps.end())] += ca * cb;
    }
  }
  if (!out.terms_.empty()) {
    out.atoms_ = a.atoms_;
    out.atoms_.insert(b.atoms_.begin(), b.atoms_.end());
  }
  return out;
}

namespace {

int monomial_degree(const CostPoly::Monomial& m) {
  int d = 0;
  for (const auto& [k, e] : m) d += e;
  return d;
}

}  // namespace

int CostPoly::degree(const std::string& symbol) const {
  int best = 0;
  for (const auto& [m, c] : terms_) {
    for (const auto& [k, e] : m) {
      if (k == symbol) best = std::max(best, e);
    }
  }
  return best;
}

int CostPoly::total_degree() const {
  int best = 0;
  for (const auto& [m, c] : terms_) best = std::max(best, monomial_degree(m));
  return best;
}

CostPoly CostPoly::leading() const {
  CostPoly out;
  const int top = total_degree();
  for (const auto& [m, c] : terms_) {
    if (monomial_degree(m) == top) out.terms_[m] = c;
  }
  out.atoms_ = atoms_;
  return out;
}

std::optional<int64_t> CostPoly::eval(const Bindings& bindings) const {
  int64_t total = 0;
  for (const auto& [m, c] : terms_) {
    int64_t v = c;
    for (const auto& [k, e] : m) {
      auto x = atoms_.at(k).eval(bindings);
      if (!x) return std::nullopt;
      for (int i = 0; i < e; ++i) v *= *x;
    }
    total += v;
  }
  return total;
}

int64_t CostPoly::value(const Bindings& bindings) const {
  if (auto v = eval(bindings)) return *v;
  for (const auto& [k, atom] : atoms_) {
    if (!atom.eval(bindings)) fail(ErrorKind::UnboundAxis, fmt::format("axis {} is unbound", k));
  }
  fail(ErrorKind::UnboundAxis, "cost has unbound axes");
}

std::string CostPoly::str() const {
  if (terms_.empty()) return "0";
  std::vector<std::pair<Monomial, int64_t>> sorted(terms_.begin(), terms_.end());
  const auto spelled = [](const Monomial& m) {
    std::vector<std::string> keys;
    for (const auto& [k, e] : m) keys.insert(keys.end(), e, k);
    return keys;
  };
  std::sort(sorted.begin(), sorted.end(), [&](const auto& x, const auto& y) {
    const int dx = monomial_degree(x.first), dy = monomial_degree(y.first);
    if (dx != dy) return dx > dy;
    return spelled(x.first) < spelled(y.first);
  });
  std::vector<std::string> parts;
  for (const auto& [m, c] : sorted) {
    std::vector<std::string> f;
    if (c != 1 || m.empty()) f.push_back(std::to_string(c));
    for (const auto& [k, e] : m) f.push_back(e == 1 ? k : fmt::format("{}^{}", k, e));
    parts.push_back(fmt::format("{}", fmt::join(f, "*")));
  }
  return fmt::format("{}", fmt::join(parts, " + "));
}

CostPoly primitive_cost(const Primitive& p, const std::vector<TensorShape>& in,
                        Bindings& bindings) {
  const auto all_in = [&] {
    CostPoly c;
    for (const auto& s : in) c += CostPoly::elements(s);
    return c;
  };
  if (auto l = p.as<LinearParam>()) {
    CostPoly c = CostPoly::elements(l->in) * CostPoly::elements(l->out);
    if (l->bias) c += CostPoly::elements(l->out);
    return c;
  }
  if (p.is<ElementWise>() || p.is<Cup>() || p.is<SumAxis>() || p.is<Pool>()) return all_in();
  if (p.is<SoftMax>()) return CostPoly::constant(3) * all_in();
  if (p.is<Add>()) return CostPoly::elements(in[0]);
  if (p.is<OuterProduct>() || p.is<ConvTensor>()) {
    CostPoly c;
    for (const auto& s : output_shapes(p, in, bindings)) c += CostPoly::elements(s);
    return c;
  }
  if (auto t = p.as<AssocTranspose>()) return primitive_cost(*t->base, {t->base_in}, bindings);
  return {};
}

namespace {

CostPoly scope_factor(const Cell& c) {
  CostPoly f = CostPoly::constant(1);
  for (const auto& s : c.broadcasts) f = f * CostPoly::of(s.axis.len);
  return f;
}

std::vector<CostPoly> section_times(const Diagram& d, Bindings& b) {
  const auto bounds = infer_shapes(d, b);
  std::vector<CostPoly> out;
  for (size_t k = 0; k < d.sections.size(); ++k) {
    const Section& s = d.sections[k];
    CostPoly t;
    for (size_t i = 0; i < s.cells.size(); ++i) {
      const Cell& c = s.cells[i];
      if (is_identity(c)) continue;
      const int off = cell_offset(s, i);
      std::vector<TensorShape> in(bounds[k].segments.begin() + off,
                                  bounds[k].segments.begin() + off + input_arity(c));
      CostPoly body = c.primitive() ? primitive_cost(*c.primitive(), body_inputs(c, in), b)
                                    : time_cost(*c.nested(), b);
      t += scope_factor(c) * body;
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

CostPoly time_cost(const Diagram& d, const Bindings& bindings) {
  Bindings b = bindings;
  CostPoly total;
  for (const auto& t : section_times(d, b)) total += t;
  return total;
}

SpaceCost space_cost(const Diagram& d, const Bindings& bindings) {
  Bindings b = bindings;
  SpaceCost out;
  for (const auto& boundary : infer_shapes(d, b)) {
    CostPoly s;
    for (const auto& seg : boundary.segments) s += CostPoly::elements(seg);
    out.boundaries.push_back(std::move(s));
  }
  auto rank = [&](const CostPoly& p) {
    const auto v = p.eval(b);
    return std::make_pair(v ? *v : -1, p.total_degree());
  };
  for (size_t i = 1; i < out.boundaries.size(); ++i) {
    if (rank(out.boundaries[i]) > rank(out.boundaries[out.peak_boundary])) {
      out.peak_boundary = static_cast<int>(i);
    }
  }
  out.peak = out.boundaries[out.peak_boundary];
  return out;
}

CostReport cost_report(const Diagram& d, const Bindings& bindings) {
  Bindings b = bindings;
  CostReport r;
  r.section_time = section_times(d, b);
  for (const auto& t : r.section_time) r.total_time += t;
  r.space = space_cost(d, b);
  return r;
}

namespace {

constexpr const char* kNote =
    "operation counts: multiply-accumulate work per element; softmax counted as 3n and data "
    "movement as 0 by convention";

nlohmann::json poly_value(const CostPoly& p, const Bindings& b) {
  if (auto v = p.eval(b)) return *v;
  return nullptr;
}

nlohmann::json report_object(const Diagram& d, const CostReport& r, const Bindings& b) {
  nlohmann::json j;
  j["diagram"] = d.name;
  j["sections"] = nlohmann::json::array();
  for (const auto& t : r.section_time) j["sections"].push_back({{"time", t.str()}});
  j["boundaries"] = nlohmann::json::array();
  for (const auto& s : r.space.boundaries) j["boundaries"].push_back(s.str());
  j["total_time"] = r.total_time.str();
  j["peak_space"] = r.space.peak.str();
  j["peak_boundary"] = r.space.peak_boundary;
  j["values"] = {{"total_time", poly_value(r.total_time, b)},
                 {"peak_space", poly_value(r.space.peak, b)}};
  j["note"] = kNote;
  return j;
}

}  // namespace

std::string report_json(const Diagram& d, const CostReport& r, const Bindings& bindings) {
  return report_object(d, r, bindings).dump(2);
}

Comparison compare(const Diagram& d1, const Diagram& d2, const Bindings& bindings) {
  Bindings b = resolve_bindings(d1, bindings);
  b = resolve_bindings(d2, b);
  expect_data(d1.domain, d2.domain, b, "compare domain");
  expect_data(d1.codomain, d2.codomain, b, "compare codomain");
  Comparison c;
  c.first = cost_report(d1, b);
  c.second = cost_report(d2, b);
  c.time_first = c.first.total_time.value(b);
  c.time_second = c.second.total_time.value(b);
  c.space_first = c.first.space.peak.value(b);
  c.space_second = c.second.space.peak.value(b);
  auto ratio = [](int64_t x, int64_t y) {
    if (x == y) return 1.0;
    return y == 0 ? HUGE_VAL : static_cast<double>(x) / static_cast<double>(y);
  };
  c.time_ratio = ratio(c.time_first, c.time_second);
  c.space_ratio = ratio(c.space_first, c.space_second);
  return c;
}

std::string comparison_json(const Diagram& d1, const Diagram& d2, const Comparison& c,
                            const Bindings& bindings) {
  nlohmann::json j;
  j["first"] = report_object(d1, c.first, bindings);
  j["second"] = report_object(d2, c.second, bindings);
  j["time"] = {c.time_first, c.time_second};
  j["space"] = {c.space_first, c.space_second};
  j["time_ratio"] = c.time_ratio;
  j["space_ratio"] = c.space_ratio;
  return j.dump(2);
}

}  // namespace ncd
