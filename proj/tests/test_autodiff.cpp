#include <doctest.h>

#include <cmath>

#include <fmt/format.h>

#include "ncd/autodiff.hpp"
#include "ncd/oracles.hpp"
#include "support.hpp"

using namespace ncd;
using namespace ncd::test;

namespace {

// Desk-scale lengths for the large corpus entries.
Bindings small_for(const std::string& file) {
  if (file == "mlp.ncd") return {{"x", 4}, {"h", 8}, {"c", 5}};
  if (file == "chain_loss.ncd") return {{"a", 8}, {"b", 6}};
  return {};
}

struct Named {
  std::string label;
  Diagram d;
  Bindings b;
};

std::vector<Named> corpus_diagrams() {
  std::vector<Named> out;
  for (const auto& path : corpus_files()) {
    const std::string file = path.filename().string();
    Program p = corpus_program(file, small_for(file));
    for (const auto& d : p.diagrams) out.push_back({file + ":" + d.name, d, p.bindings});
  }
  return out;
}

bool is_loss(const Diagram& d, const Bindings& b) {
  return d.codomain.size() == 1 && d.codomain[0].element_count(b) == 1;
}

bool any_primitive(const Diagram& d, const std::function<bool(const Primitive&)>& pred) {
  for (const auto& s : d.sections) {
    for (const auto& c : s.cells) {
      if (const Primitive* p = c.primitive()) {
        if (pred(*p)) return true;
      } else if (any_primitive(*c.nested(), pred)) {
        return true;
      }
    }
  }
  return false;
}

bool smooth(const Diagram& d) {
  return !any_primitive(d, [](const Primitive& p) {
    if (auto e = p.as<ElementWise>()) return e->fn == EwFn::Relu || e->fn == EwFn::Step;
    if (auto q = p.as<Pool>()) return q->kind != PoolKind::Mean;
    return false;
  });
}

int64_t total_elements(const DataShape& s, const Bindings& b) {
  int64_t n = 0;
  for (const auto& t : s.segments) n += t.element_count(b);
  return n;
}

std::vector<Tensor> interleave(const std::vector<Tensor>& x, const std::vector<Tensor>& u) {
  std::vector<Tensor> out;
  for (size_t i = 0; i < x.size(); ++i) {
    out.push_back(x[i]);
    out.push_back(u[i]);
  }
  return out;
}

// Central differences, columns over the flattened domain.
Tensor fd_jacobian(const Diagram& d, const std::vector<Tensor>& x, const ParamStore& params,
                   const Bindings& b, double h) {
  const auto y = eval(d, x, params, b);
  int64_t rows = 0, cols = 0;
  for (const auto& t : y) rows += static_cast<int64_t>(t.size());
  for (const auto& t : x) cols += static_cast<int64_t>(t.size());
  Tensor j = Tensor::zeros({rows, cols});
  int64_t col = 0;
  for (size_t s = 0; s < x.size(); ++s) {
    for (size_t e = 0; e < x[s].size(); ++e, ++col) {
      auto plus = x, minus = x;
      plus[s].data[e] += h;
      minus[s].data[e] -= h;
      const auto yp = eval(d, plus, params, b);
      const auto ym = eval(d, minus, params, b);
      int64_t row = 0;
      for (size_t o = 0; o < yp.size(); ++o) {
        for (size_t q = 0; q < yp[o].size(); ++q, ++row) {
          j.data[row * cols + col] = (yp[o].data[q] - ym[o].data[q]) / (2 * h);
        }
      }
    }
  }
  return j;
}

double worst_relative(const Tensor& got, const Tensor& want) {
  double worst = 0.0;
  for (size_t i = 0; i < want.size(); ++i) {
    const double err = std::abs(got.data[i] - want.data[i]);
    worst = std::max(worst, err / std::max(std::abs(want.data[i]), 1e-12));
  }
  return worst;
}

Diagram prefix(const Diagram& d, size_t k, Bindings& b) {
  const auto bounds = infer_shapes(d, b);
  Diagram f = d;
  f.name.clear();
  f.sections.resize(k);
  f.codomain = bounds[k];
  return f;
}

Diagram suffix(const Diagram& d, size_t k, Bindings& b) {
  const auto bounds = infer_shapes(d, b);
  Diagram g = d;
  g.name.clear();
  g.sections.erase(g.sections.begin(), g.sections.begin() + k);
  g.domain = bounds[k];
  return g;
}

Program single(const std::string& text) { return compile(text); }

}  // namespace

TEST_CASE("forward: a linear map is its own tangent map") {
  Program p = corpus_program("multihead.ncd");
  Bindings b = p.bindings;
  const Diagram d = prefix(p.get("multihead"), 2, b);
  const Diagram fd = forward_transform(d, p.bindings);
  std::mt19937_64 rng(3);
  const ParamStore params = random_params(d, p.bindings, rng);
  for (int t = 0; t < 10; ++t) {
    const auto x = random_inputs(d.domain, p.bindings, rng);
    const auto u = random_inputs(d.domain, p.bindings, rng);
    const auto out = eval(fd, interleave(x, u), params, p.bindings);
    const auto fu = eval(d, u, params, p.bindings);
    for (size_t i = 0; i < fu.size(); ++i) CHECK(max_abs_diff(out[2 * i + 1], fu[i]) == 0.0);
  }
}

TEST_CASE("forward: exp at 0 with tangent 1") {
  Program p = single("axes { n = 1 }\ndiagram e(x: []) -> [] { ew exp; }");
  const Diagram fd = forward_transform(p.get("e"), p.bindings);
  const auto out = eval(fd, {Tensor::scalar(0.0), Tensor::scalar(1.0)}, {}, p.bindings);
  CHECK(out[0].data[0] == 1.0);
  CHECK(out[1].data[0] == 1.0);
}

TEST_CASE("forward: names the cell without a derivative") {
  Program p = single("axes { n = 3 }\ndiagram e(x: [n]) -> [n] { ew neg; ew dsqrt; }");
  try {
    forward_transform(p.get("e"), p.bindings);
    FAIL("expected NotDifferentiable");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NotDifferentiable);
    CHECK(std::string(e.what()).find("cell 1.0") != std::string::npos);
  }
  CHECK_THROWS_AS(reverse_transform(p.get("e"), p.bindings), Error);
}

TEST_CASE("forward: tangent maps are linear in the tangent") {
  const std::pair<const char*, const char*> cases[] = {
      {"ew relu;", "[n]"},     {"ew gelu;", "[n]"},           {"ew exp;", "[n]"},
      {"ew recip;", "[n]"},    {"ew sqrt;", "[n]"},           {"ew addc(0.3);", "[n]"},
      {"softmax;", "[n]"},     {"copy 0; outer 0 1;", "[n, n]"}, {"pool max;", "[]"},
      {"pool argmax;", "[n]"}, {"linear W;", "[n]"},          {"copy 0; add 0 1;", "[n]"},
      {"unit n; cup 0:0 0:2;", "[n]"},
  };
  std::mt19937_64 rng(11);
  for (const auto& [body, out] : cases) {
    CAPTURE(body);
    Program p = single(fmt::format(
        "axes {{ n = 4 }}\nparam W : [n] -> [n] +bias\n"
        "diagram f(x: [n]) -> {} {{ {} }}",
        out, body));
    const Diagram& d = p.diagrams.back();
    const Diagram fd = forward_transform(d, p.bindings);
    const ParamStore params = random_params(d, p.bindings, rng);
    auto x = random_inputs(d.domain, p.bindings, rng, 0.5, 2.0);
    auto u = random_inputs(d.domain, p.bindings, rng);
    auto v = random_inputs(d.domain, p.bindings, rng);
    Tensor sum = u[0];
    for (size_t i = 0; i < sum.size(); ++i) sum.data[i] += v[0].data[i];
    Tensor scaled = u[0];
    for (auto& e : scaled.data) e *= 2.5;
    const auto du = eval(fd, interleave(x, u), params, p.bindings);
    const auto dv = eval(fd, interleave(x, v), params, p.bindings);
    const auto ds = eval(fd, interleave(x, {sum}), params, p.bindings);
    const auto dl = eval(fd, interleave(x, {scaled}), params, p.bindings);
    for (size_t o = 1; o < du.size(); o += 2) {
      for (size_t i = 0; i < du[o].size(); ++i) {
        CHECK(std::abs(ds[o].data[i] - du[o].data[i] - dv[o].data[i]) <= 1e-10);
        CHECK(std::abs(dl[o].data[i] - 2.5 * du[o].data[i]) <= 1e-10);
      }
    }
  }
}

TEST_CASE("forward: two-layer chain against central differences") {
  Program p = corpus_program("chain_loss.ncd", small_for("chain_loss.ncd"));
  Diagram d = p.get("chain");
  Bindings b = p.bindings;
  d = prefix(d, 2, b);  // linear A; ew gelu
  const Diagram fd = forward_transform(d, p.bindings);
  std::mt19937_64 rng(5);
  const ParamStore params = random_params(d, p.bindings, rng);
  const auto x = random_inputs(d.domain, p.bindings, rng);
  const Tensor fdj = fd_jacobian(d, x, params, p.bindings, 1e-3);
  const int64_t a = x[0].size();
  for (int64_t i = 0; i < a; ++i) {
    Tensor u = Tensor::zeros({a});
    u.data[i] = 1.0;
    const auto out = eval(fd, {x[0], u}, params, p.bindings);
    Tensor col = Tensor::zeros({static_cast<int64_t>(out[1].size())});
    Tensor want = col;
    for (size_t r = 0; r < out[1].size(); ++r) {
      col.data[r] = out[1].data[r];
      want.data[r] = fdj.data[r * a + i];
    }
    CHECK(worst_relative(col, want) <= 1e-4);
  }
}

TEST_CASE("functoriality on every corpus split") {
  int pairs = 0;
  for (const auto& [label, d, bindings] : corpus_diagrams()) {
    if (d.sections.size() < 2) continue;
    Bindings b = bindings;
    const size_t k = d.sections.size() / 2;
    const Diagram f = prefix(d, k, b);
    const Diagram g = suffix(d, k, b);
    CAPTURE(label);
    const Diagram whole = forward_transform(compose_seq(f, g, b), b);
    const Diagram parts = compose_seq(forward_transform(f, b), forward_transform(g, b), b);
    std::mt19937_64 rng(17);
    const ParamStore params = random_params(d, b, rng);
    const DataShape dom = whole.domain;
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
      const auto in = random_inputs(dom, b, rng, 0.1, 1.0);
      worst = std::max(worst, max_diff(eval(whole, in, params, b), eval(parts, in, params, b)));
    }
    CHECK(worst <= 1e-12);
    ++pairs;
  }
  CHECK(pairs >= 10);
}

TEST_CASE("finite differences on smooth corpus diagrams") {
  int checked = 0;
  for (const auto& [label, d, bindings] : corpus_diagrams()) {
    if (!smooth(d)) continue;
    const Bindings b = resolve_bindings(d, bindings);
    if (total_elements(d.domain, b) * total_elements(d.codomain, b) > kJacobianLimit) continue;
    CAPTURE(label);
    std::mt19937_64 rng(23);
    const ParamStore params = random_params(d, b, rng);
    const auto x = random_inputs(d.domain, b, rng, 0.2, 1.0);
    const Tensor j = jacobian_materialize(d, x, params, b);
    const Tensor want = fd_jacobian(d, x, params, b, 1e-3);
    CHECK(worst_relative(j, want) <= 1e-4);
    ++checked;
  }
  CHECK(checked >= 10);
}

TEST_CASE("mode duality on every corpus loss") {
  int losses = 0;
  for (const auto& [label, d, bindings] : corpus_diagrams()) {
    const Bindings b = resolve_bindings(d, bindings);
    if (!is_loss(d, b)) continue;
    CAPTURE(label);
    const Diagram fwd = grad_pipeline(d, GradMode::Forward, b);
    const Diagram rev = grad_pipeline(d, GradMode::Reverse, b);
    CHECK(fwd.domain == d.domain);
    CHECK(rev.codomain == d.domain);
    std::mt19937_64 rng(29);
    const ParamStore params = random_params(d, b, rng);
    for (int t = 0; t < 3; ++t) {
      const auto x = random_inputs(d.domain, b, rng);
      CHECK(max_diff(eval(fwd, x, params, b), eval(rev, x, params, b)) <= 1e-8);
    }
    ++losses;
  }
  CHECK(losses >= 13);
}

TEST_CASE("gradient of half the squared norm") {
  Program p = corpus_program("sumsq.ncd");
  const Tensor x = Tensor::from({3}, {1, 2, 3});
  for (auto mode : {GradMode::Forward, GradMode::Reverse}) {
    const auto g = eval(grad_pipeline(p.get("sumsq"), mode, p.bindings), {x}, {}, p.bindings);
    REQUIRE(g.size() == 1);
    CHECK(g[0] == Tensor::from({3}, {1, 2, 3}));
  }
}

TEST_CASE("gradient: relu kink and a toy mlp") {
  Program p = single(
      "axes { a = 4, h = 3 }\nparam A : [a] -> [h] +bias\nparam B : [h] -> []\n"
      "diagram toy(x: [a]) -> [] { linear A; ew relu; linear B; }\n"
      "diagram kink(x: [a]) -> [] { ew relu; sum 0:0; }");
  const Tensor at = Tensor::from({4}, {-1.0, 0.0, 0.0, 2.0});
  const auto gf = eval(grad_pipeline(p.get("kink"), GradMode::Forward, p.bindings), {at}, {},
                       p.bindings);
  const auto gr = eval(grad_pipeline(p.get("kink"), GradMode::Reverse, p.bindings), {at}, {},
                       p.bindings);
  CHECK(gf[0] == Tensor::from({4}, {0, 0, 0, 1}));
  CHECK(gr[0] == gf[0]);

  std::mt19937_64 rng(31);
  const Diagram& toy = p.get("toy");
  const ParamStore params = random_params(toy, p.bindings, rng);
  const Diagram fwd = grad_pipeline(toy, GradMode::Forward, p.bindings);
  const Diagram rev = grad_pipeline(toy, GradMode::Reverse, p.bindings);
  for (int t = 0; t < 20; ++t) {
    const auto x = random_inputs(toy.domain, p.bindings, rng);
    CHECK(max_diff(eval(fwd, x, params, p.bindings), eval(rev, x, params, p.bindings)) <= 1e-8);
  }
}

TEST_CASE("gradient: non-scalar loss is rejected") {
  Program p = single("axes { a = 3 }\ndiagram f(x: [a]) -> [a] { ew exp; }");
  CHECK_THROWS_WITH_AS(grad_pipeline(p.get("f"), GradMode::Reverse, p.bindings),
                       doctest::Contains("scalar"), Error);
}

TEST_CASE("reverse: linear map gives the transposed matrix") {
  Program p = single(
      "axes { a = 3, b = 4 }\nparam W : [a] -> [b]\n"
      "diagram f(x: [a]) -> [b] { linear W; ew scale(2); }");
  const Diagram& d = p.get("f");
  std::mt19937_64 rng(37);
  const ParamStore params = random_params(d, p.bindings, rng);
  const Tensor m = materialize_linear(d, params, p.bindings);
  const Diagram r = reverse_transform(d, p.bindings);
  const auto x = random_inputs(d.domain, p.bindings, rng);
  // Columns of R(x, .) over the codomain basis.
  Tensor rt = Tensor::zeros({3, 4});
  for (int j = 0; j < 4; ++j) {
    Tensor w = Tensor::zeros({4});
    w.data[j] = 1.0;
    const auto dx = eval(r, {x[0], w}, params, p.bindings);
    for (int i = 0; i < 3; ++i) rt.data[i * 4 + j] = dx[0].data[i];
  }
  CHECK(max_abs_diff(rt, transpose2(m)) <= 1e-12);
}

TEST_CASE("reverse: softmax against central differences") {
  Program p = single("axes { n = 5 }\ndiagram s(x: [n]) -> [n] { softmax; }");
  const Diagram& d = p.get("s");
  const Diagram r = reverse_transform(d, p.bindings);
  std::mt19937_64 rng(41);
  for (int t = 0; t < 5; ++t) {
    const auto x = random_inputs(d.domain, p.bindings, rng);
    const Tensor j = fd_jacobian(d, x, {}, p.bindings, 1e-3);
    const auto w = random_inputs(d.codomain, p.bindings, rng);
    const auto dx = eval(r, {x[0], w[0]}, {}, p.bindings);
    Tensor want = Tensor::zeros({5});
    for (int i = 0; i < 5; ++i) {
      for (int o = 0; o < 5; ++o) want.data[i] += j.data[o * 5 + i] * w[0].data[o];
    }
    CHECK(worst_relative(dx[0], want) <= 1e-4);
  }
}

TEST_CASE("jacobian: identity, exp and the conv band") {
  Program id = single("axes { a = 3 }\ndiagram i(x: [a]) -> [a] { }");
  const Tensor ji = jacobian_materialize(id.get("i"), {Tensor::from({3}, {4, 5, 6})}, {},
                                         id.bindings);
  Tensor eye = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye.data[i * 3 + i] = 1.0;
  CHECK(ji == eye);

  Program ex = single("axes { a = 4 }\ndiagram e(x: [a]) -> [a] { ew exp; }");
  const Tensor x = Tensor::from({4}, {-1.0, 0.0, 0.5, 2.0});
  const Tensor je = jacobian_materialize(ex.get("e"), {x}, {}, ex.bindings);
  for (int i = 0; i < 4; ++i) {
    for (int k = 0; k < 4; ++k) CHECK(je.data[i * 4 + k] == (i == k ? std::exp(x.data[i]) : 0.0));
  }

  // Conv tensor built by definition, contracted with the kernel.
  Program cv = corpus_program("conv1d.ncd");
  const Tensor v = Tensor::from({5}, {0.3, -1.2, 0.8, 2.0, -0.4});
  const Tensor w = Tensor::from({3}, {0.5, -1.5, 2.5});
  const Tensor jc = jacobian_materialize(cv.get("conv1d"), {v, w}, {}, cv.bindings);
  REQUIRE(jc.shape == std::vector<int64_t>{3, 8});
  for (int i = 0; i < 3; ++i) {
    for (int l = 0; l < 5; ++l) {
      double band = 0.0;
      for (int j = 0; j < 3; ++j) band += (l == i + j ? 1.0 : 0.0) * w.data[j];
      CHECK(jc.data[i * 8 + l] == band);
    }
  }
}

TEST_CASE("jacobian: chain rule on corpus splits") {
  int pairs = 0;
  for (const auto& [label, d, bindings] : corpus_diagrams()) {
    if (d.sections.size() < 2 || !smooth(d)) continue;
    Bindings b = resolve_bindings(d, bindings);
    const size_t k = d.sections.size() / 2;
    const Diagram f = prefix(d, k, b);
    const Diagram g = suffix(d, k, b);
    const int64_t nx = total_elements(f.domain, b), nm = total_elements(f.codomain, b),
                  ny = total_elements(g.codomain, b);
    if (nx * nm > kJacobianLimit || nm * ny > kJacobianLimit) continue;
    CAPTURE(label);
    std::mt19937_64 rng(43);
    const ParamStore params = random_params(d, b, rng);
    const auto x = random_inputs(d.domain, b, rng, 0.2, 1.0);
    const Tensor jfg = jacobian_materialize(d, x, params, b);
    const Tensor jf = jacobian_materialize(f, x, params, b);
    const Tensor jg = jacobian_materialize(g, eval(f, x, params, b), params, b);
    CHECK(max_abs_diff(jfg, matmul(jg, jf)) <= 1e-10);
    ++pairs;
  }
  CHECK(pairs >= 5);
}

TEST_CASE("jacobian: too large is refused") {
  Program p = single("axes { a = 101 }\ndiagram e(x: [a]) -> [a] { ew exp; }");
  std::mt19937_64 rng(1);
  const auto x = random_inputs(p.get("e").domain, p.bindings, rng);
  CHECK_THROWS_WITH_AS(jacobian_materialize(p.get("e"), x, {}, p.bindings),
                       doctest::Contains("limit"), Error);
}
