#include <doctest.h>

#include <cmath>

#include "ncd/corpus.hpp"
#include "ncd/oracles.hpp"
#include "support.hpp"

using namespace ncd;
using namespace ncd::test;

namespace {

Diagram only(const std::string& text, Program& p) {
  p = compile(text);
  return p.diagrams.back();
}

Tensor vec(std::vector<double> v) {
  const auto n = static_cast<int64_t>(v.size());
  return Tensor::from({n}, std::move(v));
}

// Direct SoftMax(Q K^T / sqrt(d)) V, written out without the oracle library.
Tensor attention_by_hand(const Tensor& q, const Tensor& k, const Tensor& v) {
  const int64_t y = q.shape[0], x = k.shape[0], d = q.shape[1], dv = v.shape[1];
  Tensor out = Tensor::zeros({y, dv});
  for (int64_t i = 0; i < y; ++i) {
    std::vector<double> s(x);
    double top = -HUGE_VAL;
    for (int64_t j = 0; j < x; ++j) {
      for (int64_t c = 0; c < d; ++c) s[j] += q.data[i * d + c] * k.data[j * d + c];
      s[j] /= std::sqrt(static_cast<double>(d));
      top = std::max(top, s[j]);
    }
    double z = 0.0;
    for (auto& e : s) z += (e = std::exp(e - top));
    for (int64_t j = 0; j < x; ++j) {
      for (int64_t c = 0; c < dv; ++c) out.data[i * dv + c] += s[j] / z * v.data[j * dv + c];
    }
  }
  return out;
}

Bindings small_for(const std::string& file) {
  if (file == "mlp.ncd") return {{"x", 4}, {"h", 8}, {"c", 5}};
  return {};
}

}  // namespace

TEST_CASE("eval: softmax of equal values is uniform") {
  Program p;
  Diagram s = only("axes { n = 2 }\ndiagram s(v: [n]) -> [n] { softmax; }", p);
  CHECK(eval(s, {vec({0, 0})}, {}, p.bindings)[0] == vec({0.5, 0.5}));
  CHECK(eval(s, {vec({800, 800})}, {}, p.bindings)[0] == vec({0.5, 0.5}));
}

TEST_CASE("eval: corpus convolution on a small signal") {
  Program p = corpus_program("conv1d.ncd");
  const auto out = eval(p.get("conv1d"), {vec({1, 2, 3, 4, 5}), vec({1, 0, -1})}, {}, p.bindings);
  CHECK(out[0] == vec({-2, -2, -2}));
}

TEST_CASE("oracle_conv examples") {
  const Tensor v = vec({1, 2, 3, 4, 5});
  CHECK(oracle_conv(v, vec({1, 0, -1}), {1}, {1}, {0}) == vec({-2, -2, -2}));
  CHECK(oracle_conv(v, vec({1, 1}), {2}, {1}, {0}) == vec({3, 7}));
  CHECK(oracle_conv(v, vec({1}), {1}, {1}, {0}) == v);
  CHECK(oracle_conv(v, vec({1, 0, -1}), {1}, {2}, {0}) == vec({-4}));
  CHECK_THROWS_AS(oracle_conv(vec({1, 2}), vec({1, 1, 1}), {1}, {1}, {0}), Error);
}

TEST_CASE("eval: attention on 4x2 queries and 3x2 keys") {
  Program p = corpus_program("scaled_attention.ncd", {{"y", 4}, {"x", 3}, {"k", 2}});
  std::mt19937_64 rng(21);
  for (int t = 0; t < 10; ++t) {
    const auto in = random_inputs(p.get("attention").domain, p.bindings, rng);
    REQUIRE(in[0].shape == std::vector<int64_t>{4, 2});
    REQUIRE(in[1].shape == std::vector<int64_t>{3, 2});
    const Tensor got = eval(p.get("attention"), in, {}, p.bindings)[0];
    CHECK(max_abs_diff(got, attention_by_hand(in[0], in[1], in[2])) <= 1e-12);
    CHECK(max_abs_diff(got, oracle_attention(in[0], in[1], in[2])) <= 1e-12);
  }
}

TEST_CASE("oracle_multihead: one head is attention, widths may differ") {
  std::mt19937_64 rng(22);
  const Tensor q = random_tensor({4, 5}, rng), k = random_tensor({3, 5}, rng),
               v = random_tensor({3, 5}, rng);
  const Tensor wq = random_tensor({5, 1, 2}, rng), wk = random_tensor({5, 1, 2}, rng),
               wv = random_tensor({5, 1, 3}, rng), wo = random_tensor({3, 5}, rng);
  auto flat = [](const Tensor& w) { return Tensor::from({w.shape[0], w.shape[2]}, w.data); };
  const Tensor head = attention_by_hand(matmul(q, flat(wq)), matmul(k, flat(wk)),
                                        matmul(v, flat(wv)));
  const Tensor got = oracle_multihead(q, k, v, wq, wk, wv, wo);
  CHECK(got.shape == std::vector<int64_t>{4, 5});
  CHECK(max_abs_diff(got, matmul(head, wo)) <= 1e-12);
}

TEST_CASE("materialize: unit, conv tensor, transpose") {
  Program p;
  Diagram u = only("axes { a = 2 }\ndiagram u(x: []) -> [a, a] { unit a; }", p);
  CHECK(materialize_linear(u, {}, p.bindings) == Tensor::from({4, 1}, {1, 0, 0, 1}));

  Diagram c = only("axes { x = 5 }\ndiagram c(v: [x]) -> [y, k] { conv 1 k=3 s=1 d=1 pad=0; }",
                   p);
  const Tensor m = materialize_linear(c, {}, p.bindings);
  REQUIRE(m.shape == std::vector<int64_t>{9, 5});
  bool star = true;
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 3; ++j)
      for (int64_t l = 0; l < 5; ++l) star = star && m.data[(i * 3 + j) * 5 + l] == (l == i + j);
  CHECK(star);
  CHECK(m.size() == 45);

  Diagram t = only("diagram t(v: [2, 3]) -> [3, 2] { transpose 0 (1,0); }", p);
  const Tensor pm = materialize_linear(t, {}, p.bindings);
  REQUIRE(pm.shape == std::vector<int64_t>{6, 6});
  for (int64_t r = 0; r < 6; ++r) {
    double row = 0.0, col = 0.0;
    for (int64_t q = 0; q < 6; ++q) {
      CHECK((pm.data[r * 6 + q] == 0.0 || pm.data[r * 6 + q] == 1.0));
      row += pm.data[r * 6 + q];
      col += pm.data[q * 6 + r];
    }
    CHECK(row == 1.0);
    CHECK(col == 1.0);
  }
  // out[j, i] = in[i, j]
  CHECK(pm.data[(1 * 2 + 0) * 6 + (0 * 3 + 1)] == 1.0);

  Diagram s = only("axes { n = 3 }\ndiagram s(v: [n]) -> [n] { softmax; }", p);
  try {
    materialize_linear(s, {}, p.bindings);
    FAIL("expected NotLinear");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NotLinear);
  }
  Diagram big = only("diagram b(v: [101, 100]) -> [101, 100] { ew neg; }", p);
  try {
    materialize_linear(big, {}, p.bindings);
    FAIL("expected TooLarge");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::TooLarge);
  }
}

TEST_CASE("eval: copy is linear, exactly") {
  Program p;
  Diagram d = only("axes { n = 6 }\ndiagram c(v: [n]) -> [n] | [n] { copy 0; }", p);
  std::mt19937_64 rng(23);
  for (int t = 0; t < 50; ++t) {
    const Tensor x = random_tensor({6}, rng), y = random_tensor({6}, rng);
    const double lambda = std::uniform_real_distribution<double>(-3, 3)(rng);
    Tensor sum = x, scaled = x;
    for (size_t i = 0; i < x.size(); ++i) {
      sum.data[i] += y.data[i];
      scaled.data[i] *= lambda;
    }
    const auto cx = eval(d, {x}, {}, p.bindings), cy = eval(d, {y}, {}, p.bindings);
    const auto csum = eval(d, {sum}, {}, p.bindings), cscaled = eval(d, {scaled}, {}, p.bindings);
    for (int s = 0; s < 2; ++s) {
      for (size_t i = 0; i < x.size(); ++i) {
        CHECK(csum[s].data[i] == cx[s].data[i] + cy[s].data[i]);
        CHECK(cscaled[s].data[i] == lambda * cx[s].data[i]);
      }
    }
  }
}

TEST_CASE("eval: errors on a bad environment") {
  Program p = corpus_program("mlp.ncd", small_for("mlp.ncd"));
  const Diagram& d = p.get("mlp");
  std::mt19937_64 rng(24);
  const auto x = random_inputs(d.domain, p.bindings, rng);
  auto kind = [&](const std::vector<Tensor>& in, const ParamStore& w) {
    try {
      eval(d, in, w, p.bindings);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;
  };
  CHECK(kind(x, {}) == ErrorKind::EnvMismatch);
  ParamStore w = random_params(d, p.bindings, rng);
  CHECK(kind({}, w) == ErrorKind::EnvMismatch);
  CHECK(kind({random_tensor({3}, rng)}, w) == ErrorKind::EnvMismatch);
  w.biases.erase("L2");
  CHECK(kind(x, w) == ErrorKind::EnvMismatch);
}

TEST_CASE("eval: broadcast semantics over the corpus, exactly") {
  int outer = 0, inner = 0;
  for (const auto& path : corpus_files()) {
    const std::string file = path.filename().string();
    Program p = corpus_program(file, small_for(file));
    for (const auto& d : p.diagrams) {
      CAPTURE(d.name);
      const Bindings b = resolve_bindings(d, p.bindings);
      std::mt19937_64 rng(25);
      const ParamStore w = random_params(d, b, rng);
      const int64_t n = 3;

      Diagram bd = broadcast(d, Axis::of(n));
      const auto big = random_inputs(bd.domain, b, rng);
      const auto out = eval(bd, big, w, b);
      for (int64_t i = 0; i < n; ++i) {
        std::vector<Tensor> slice;
        for (const auto& t : big) slice.push_back(leading_slice(t, i));
        const auto want = eval(d, slice, w, b);
        for (size_t s = 0; s < want.size(); ++s) CHECK(leading_slice(out[s], i) == want[s]);
      }
      ++outer;

      if (d.domain.size() < 2) continue;
      Diagram id = inner_broadcast(d, Axis::of(n), 0);
      auto mixed = random_inputs(id.domain, b, rng);
      const auto iout = eval(id, mixed, w, b);
      for (int64_t i = 0; i < n; ++i) {
        std::vector<Tensor> slice = mixed;
        slice[0] = leading_slice(mixed[0], i);
        const auto want = eval(d, slice, w, b);
        for (size_t s = 0; s < want.size(); ++s) CHECK(leading_slice(iout[s], i) == want[s]);
      }
      ++inner;
    }
  }
  CHECK(outer > 20);
  CHECK(inner > 10);
}

TEST_CASE("eval: matrix multiply construction") {
  Program p = compile(
      "axes { p = 3, n = 4, q = 5 }\n"
      "diagram mm(a: [p, n] | [n, q]) -> [p, q] {\n"
      "  par { | transpose 0 (1,0); };\n"
      "  map p@0: map q@1: par { (2) outer 0 1; cup 0:0 0:1; };\n"
      "}");
  std::mt19937_64 rng(26);
  for (int t = 0; t < 20; ++t) {
    const auto x = random_inputs(p.get("mm").domain, p.bindings, rng);
    CHECK(max_abs_diff(eval(p.get("mm"), x, {}, p.bindings)[0], matmul(x[0], x[1])) <= 1e-12);
  }
}

TEST_CASE("eval: deterministic") {
  for (const auto& path : corpus_files()) {
    const std::string file = path.filename().string();
    Program p = corpus_program(file, small_for(file));
    for (const auto& d : p.diagrams) {
      const Bindings b = resolve_bindings(d, p.bindings);
      std::mt19937_64 r1(27), r2(27);
      const ParamStore w1 = random_params(d, b, r1), w2 = random_params(d, b, r2);
      const auto x1 = random_inputs(d.domain, b, r1), x2 = random_inputs(d.domain, b, r2);
      CHECK(eval(d, x1, w1, b) == eval(d, x2, w2, b));
    }
  }
}

TEST_CASE("tensor text format") {
  const Tensor t = Tensor::from({2, 3}, {1, -2.5, 3e-7, 0.1, 1e300, -0.0});
  const std::string text = write_tensor(t);
  CHECK(text.rfind("2\n2 3\n", 0) == 0);
  CHECK(read_tensor(text) == t);
  CHECK(read_tensor("0\n\n4.5\n") == Tensor::scalar(4.5));
  CHECK(read_tensor("1\n3\n1 2\n3") == vec({1, 2, 3}));
  CHECK_THROWS_AS(read_tensor("2\n2 2\n1 2 3"), Error);
  CHECK_THROWS_AS(read_tensor("1\n2\n1 x"), Error);
}

TEST_CASE("corpus entries match their oracles") {
  const auto& entries = load_corpus();
  CHECK(entries.size() >= 15);
  for (const auto& e : entries) {
    CAPTURE(e.id);
    const Program p = load_entry(e, NCD_CORPUS_DIR);
    const double err = oracle_error(e, p, 5, 31);
    CHECK(err <= e.tolerance);
  }
}

TEST_CASE("corpus: multihead with one head is attention") {
  Program p = corpus_program("multihead.ncd", {{"h", 1}});
  const Diagram& d = p.get("multihead");
  const Bindings b = resolve_bindings(d, p.bindings);
  std::mt19937_64 rng(32);
  const ParamStore w = random_params(d, b, rng);
  const auto x = random_inputs(d.domain, b, rng);
  auto proj = [&](const std::string& name, const Tensor& in) {
    const Tensor& m = w.weights.at(name);
    return matmul(in, Tensor::from({m.shape[0], m.shape[2]}, m.data));
  };
  const Tensor head = attention_by_hand(proj("WQ", x[0]), proj("WK", x[1]), proj("WV", x[2]));
  CHECK(max_abs_diff(eval(d, x, w, b)[0], matmul(head, w.weights.at("WO"))) <= 1e-12);
}

TEST_CASE("corpus: identity resnet adds its input back exactly") {
  Program p = corpus_program("idresnet_block.ncd");
  const Diagram& d = p.get("idresnet_block");
  const Bindings b = resolve_bindings(d, p.bindings);
  std::mt19937_64 rng(33);
  ParamStore w = random_params(d, b, rng);
  const auto x = random_inputs(d.domain, b, rng);
  for (auto& [name, t] : w.weights) std::fill(t.data.begin(), t.data.end(), 0.0);
  for (auto& [name, t] : w.biases) std::fill(t.data.begin(), t.data.end(), 0.0);
  CHECK(eval(d, x, w, b)[0] == x[0]);
}
