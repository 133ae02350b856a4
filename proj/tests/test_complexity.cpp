#include <doctest.h>

#include <cmath>

#include <json.hpp>

#include "ncd/autodiff.hpp"
#include "ncd/complexity.hpp"
#include "ncd/rewrite.hpp"
#include "support.hpp"

using namespace ncd;
using namespace ncd::test;

namespace {

// Slope of log(cost) against log(a) between the two ends of `as`.
double fitted_degree(const CostPoly& p, const Bindings& base, const std::vector<int64_t>& as) {
  Bindings lo = base, hi = base;
  lo["a"] = as.front();
  hi["a"] = as.back();
  return std::log(static_cast<double>(p.value(hi)) / static_cast<double>(p.value(lo))) /
         std::log(static_cast<double>(as.back()) / static_cast<double>(as.front()));
}

}  // namespace

TEST_CASE("cost: linear layer, its broadcast and the identity") {
  Program p = compile(
      "axes { a = 5, b = 7 }\nparam W : [a] -> [b]\n"
      "diagram f(x: [a]) -> [b] { linear W; }\n"
      "diagram g(x: [a, a]) -> [a, b] { map a: linear W; }\n"
      "diagram i(x: [a]) -> [a] { }");
  CHECK(time_cost(p.get("f"), p.bindings).str() == "a*b");
  CHECK(time_cost(p.get("g"), p.bindings).str() == "a^2*b");
  CHECK(time_cost(p.get("g"), p.bindings).value(p.bindings) == 175);
  CHECK(time_cost(p.get("i"), p.bindings).is_zero());
  CHECK(time_cost(p.get("i"), p.bindings).str() == "0");
}

TEST_CASE("cost: boundary sizes") {
  Program p = compile(
      "axes { n = 4 }\n"
      "diagram f(x: [4, 3] | [n]) -> [4, 3] | [n] { }\n"
      "diagram s(x: []) -> [] { ew exp; }");
  const SpaceCost s = space_cost(p.get("f"), p.bindings);
  REQUIRE(s.boundaries.size() == 1);
  CHECK(s.peak.value(p.bindings) == 16);
  CHECK(s.peak.str() == "n + 12");
  CHECK(space_cost(p.get("s"), p.bindings).peak.value(p.bindings) == 1);
}

TEST_CASE("cost: canonical polynomial text") {
  CostPoly a = CostPoly::of(Extent::symbol("a"));
  CostPoly b = CostPoly::of(Extent::symbol("b"));
  CostPoly p = b * a + a * a * CostPoly::constant(2) + CostPoly::constant(3) + a;
  CHECK(p.str() == "2*a^2 + a*b + a + 3");
  CHECK(p == a + CostPoly::constant(3) + a * b + CostPoly::constant(2) * a * a);
  CHECK(p.degree("a") == 2);
  CHECK(p.degree("b") == 1);
  CHECK(p.leading().str() == "2*a^2 + a*b");
  CHECK(p.value({{"a", 2}, {"b", 5}}) == 8 + 10 + 2 + 3);
  CHECK_THROWS_AS(p.value({{"a", 2}}), Error);
}

TEST_CASE("cost: forward gradient is quadratic in a, reverse is linear") {
  Program p = corpus_program("chain_loss.ncd");
  const Diagram& d = p.get("chain");
  const Diagram fwd = grad_pipeline(d, GradMode::Forward, p.bindings);
  const Diagram rev = grad_pipeline(d, GradMode::Reverse, p.bindings);
  const CostPoly tf = time_cost(fwd, p.bindings);
  const CostPoly tr = time_cost(rev, p.bindings);
  MESSAGE("forward time " << tf.str() << ", reverse time " << tr.str());
  CHECK(tf.degree("a") == 2);
  CHECK(tr.degree("a") == 1);

  const CostPoly sf = space_cost(fwd, p.bindings).peak;
  const CostPoly sr = space_cost(rev, p.bindings).peak;
  CHECK(sf.degree("a") == 2);
  CHECK(sr.degree("a") == 1);
  const std::vector<int64_t> as{8, 16, 32};
  CHECK(fitted_degree(sf, p.bindings, as) > 1.5);
  CHECK(fitted_degree(sr, p.bindings, as) < 1.2);

  const Comparison c = compare(fwd, rev, p.bindings);
  CHECK(c.time_ratio >= 32.0 / 2);
  const auto j = nlohmann::json::parse(comparison_json(fwd, rev, c, p.bindings));
  CHECK(j["time_ratio"].get<double>() == c.time_ratio);
  CHECK(j["first"]["total_time"] == tf.str());
}

TEST_CASE("cost: compare a diagram with itself and mismatched boundaries") {
  Program p = corpus_program("mlp.ncd");
  const Comparison c = compare(p.get("mlp"), p.get("mlp"), p.bindings);
  CHECK(c.time_ratio == 1.0);
  CHECK(c.space_ratio == 1.0);
  CHECK_THROWS_AS(compare(p.get("mlp"), p.get("mlp_loss"), p.bindings), Error);
}

TEST_CASE("cost: factored attention keeps the leading term") {
  Program p = corpus_program("scaled_attention.ncd");
  const Diagram& d = p.get("attention");
  const Diagram f1 = factor_multilinear(d, {0, 0}, p.bindings);
  const Diagram f = factor_multilinear(f1, {static_cast<int>(f1.sections.size()) - 1, 0},
                                       p.bindings);
  CHECK(f.sections.size() > d.sections.size());
  const CostPoly a = time_cost(d, p.bindings), b = time_cost(f, p.bindings);
  MESSAGE("naive " << a.str() << ", factored " << b.str());
  CHECK(a.leading() == b.leading());
}

TEST_CASE("cost: report json") {
  Program p = corpus_program("mlp.ncd");
  const Diagram& d = p.get("mlp");
  const CostReport r = cost_report(d, p.bindings);
  CHECK(r.section_time.size() == d.sections.size());
  CHECK(r.space.boundaries.size() == d.sections.size() + 1);
  CostPoly sum;
  for (const auto& t : r.section_time) sum += t;
  CHECK(sum == r.total_time);
  const auto j = nlohmann::json::parse(report_json(d, r, p.bindings));
  CHECK(j["sections"].size() == d.sections.size());
  CHECK(j["sections"][1]["time"] == "f*h + h");
  CHECK(j["total_time"] == r.total_time.str());
  CHECK(j["values"]["peak_space"].get<int64_t>() == 784);
  CHECK(j.contains("note"));
}

TEST_CASE("cost laws on the corpus") {
  for (const auto& path : corpus_files()) {
    Program p = corpus_program(path.filename().string());
    for (const auto& d : p.diagrams) {
      CAPTURE(d.name);
      Bindings b = resolve_bindings(d, p.bindings);
      const CostPoly t = time_cost(d, b);

      // Sequential composition adds.
      if (d.sections.size() >= 2) {
        const auto bounds = infer_shapes(d, b);
        const size_t k = d.sections.size() / 2;
        Diagram f = d, g = d;
        f.sections.resize(k);
        f.codomain = bounds[k];
        g.sections.erase(g.sections.begin(), g.sections.begin() + k);
        g.domain = bounds[k];
        CHECK(time_cost(compose_seq(f, g, b), b) == time_cost(f, b) + time_cost(g, b));
      }

      // Broadcasting multiplies, outer or inner.
      const Axis n = Axis::named("bcast");
      Bindings bn = b;
      bn["bcast"] = 3;
      const CostPoly scale = CostPoly::of(n.len);
      CHECK(time_cost(broadcast(d, n), bn) == scale * t);
      if (!d.domain.segments.empty()) {
        CHECK(time_cost(inner_broadcast(d, n, 0), bn) == scale * t);
      }

      // Rewrites that simplify never cost more.
      const int64_t before = t.value(b);
      CHECK(time_cost(drop_unit_axes(d, b), b).value(b) <= before);
      CHECK(time_cost(snake_reduce(d, b).diagram, b).value(b) <= before);
    }
  }
}

TEST_CASE("cost: snake removal saves the cup") {
  Program p = compile("axes { a = 6, b = 2 }\n"
                      "diagram s(x: [a, b]) -> [b, a] { unit a; cup 0:0 0:2; }");
  const Diagram& d = p.get("s");
  const auto r = snake_reduce(d, p.bindings);
  REQUIRE(r.matched);
  CHECK(time_cost(d, p.bindings).value(p.bindings) == 6 * 2 * 6 * 6);
  CHECK(time_cost(r.diagram, p.bindings).is_zero());
}
