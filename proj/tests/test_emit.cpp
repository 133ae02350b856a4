#include <doctest.h>

#include <map>
#include <regex>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <json.hpp>

#include "ncd/emit.hpp"
#include "support.hpp"

using namespace ncd;
using namespace ncd::test;

namespace {

// Letters renamed by first use, so equal contractions compare equal.
std::string canonical(const std::string& index) {
  std::map<char, char> names;
  std::string out;
  for (char c : index) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      auto it = names.emplace(c, static_cast<char>('a' + names.size())).first;
      out += it->second;
    } else {
      out += c;
    }
  }
  return out;
}

// Sum over every joint assignment of the letters.
Tensor contract(const std::string& index, const std::vector<Tensor>& in,
                const std::vector<int64_t>& out_shape) {
  const auto arrow = index.find("->");
  std::vector<std::string> terms;
  std::stringstream ss(index.substr(0, arrow));
  for (std::string t; std::getline(ss, t, ',');) terms.push_back(t);
  const std::string out = index.substr(arrow + 2);
  std::map<char, int64_t> extent;
  for (size_t i = 0; i < terms.size(); ++i) {
    for (size_t a = 0; a < terms[i].size(); ++a) extent[terms[i][a]] = in[i].shape[a];
  }
  for (size_t a = 0; a < out.size(); ++a) extent[out[a]] = out_shape[a];
  std::vector<char> letters;
  for (const auto& [c, n] : extent) letters.push_back(c);
  Tensor result = Tensor::zeros(out_shape);
  std::map<char, int64_t> at;
  for (char c : letters) at[c] = 0;
  auto offset = [&](const std::string& term, const std::vector<int64_t>& shape) {
    int64_t o = 0;
    for (size_t a = 0; a < term.size(); ++a) o = o * shape[a] + at[term[a]];
    return o;
  };
  while (true) {
    double v = 1.0;
    for (size_t i = 0; i < terms.size(); ++i) v *= in[i].data[offset(terms[i], in[i].shape)];
    result.data[offset(out, out_shape)] += v;
    size_t k = 0;
    for (; k < letters.size(); ++k) {
      if (++at[letters[k]] < extent[letters[k]]) break;
      at[letters[k]] = 0;
    }
    if (k == letters.size()) break;
  }
  return result;
}

std::vector<Tensor> run_plan(const Plan& plan, const std::vector<Tensor>& inputs,
                             const ParamStore& params, const Bindings& b) {
  std::map<int, Tensor> values;
  for (int i = 0; i < plan.num_inputs; ++i) values[i] = inputs[i];
  for (const auto& step : plan.steps) {
    std::vector<Tensor> in;
    for (int v : step.inputs) in.push_back(values.at(v));
    std::vector<Tensor> out;
    if (step.kind == PlanStep::Kind::Contract) {
      out.push_back(contract(step.index, in, step.out_shapes[0].extents(b)));
    } else {
      Bindings local = b;
      out = eval(single_cell(step.cell, data_of(step.in_shapes), local), in, params, b);
    }
    for (size_t i = 0; i < out.size(); ++i) values[step.outputs[i]] = out[i];
  }
  std::vector<Tensor> out;
  for (int v : plan.outputs) out.push_back(values.at(v));
  return out;
}

size_t count(const std::string& text, const std::string& needle) {
  size_t n = 0;
  for (size_t at = text.find(needle); at != std::string::npos; at = text.find(needle, at + 1)) {
    ++n;
  }
  return n;
}

Bindings small_for(const std::string& file) {
  if (file == "mlp.ncd") return {{"x", 4}, {"h", 8}, {"c", 5}};
  if (file == "chain_loss.ncd") return {{"a", 8}, {"b", 6}};
  return {};
}

}  // namespace

TEST_CASE("plan: identity is empty") {
  Program p = compile("axes { a = 3 }\ndiagram i(x: [a] | [a]) -> [a] | [a] { }");
  const Plan plan = to_plan(p.get("i"), p.bindings);
  CHECK(plan.steps.empty());
  CHECK(plan.outputs == std::vector<int>{0, 1});
  CHECK(plan_jsonl(plan) == "{\"step\":0,\"op\":\"return\",\"inputs\":[0,1]}\n");
}

TEST_CASE("plan: attention scores are one contraction") {
  Program p = compile(
      "axes { h = 2, k = 3, y = 4, x = 5 }\n"
      "diagram scores(q: [h, k, y] | [h, k, x]) -> [h, y, x] {\n"
      "  transpose 0 (0,2,1); transpose 1 (0,2,1);\n"
      "  map h: map y@0: map x@1: par { (2) outer 0 1; cup 0:0 0:1; };\n"
      "}");
  const Plan plan = to_plan(p.get("scores"), p.bindings);
  REQUIRE(plan.steps.size() == 1);
  CHECK(plan.steps[0].kind == PlanStep::Kind::Contract);
  CHECK(canonical(plan.steps[0].index) == canonical("hky,hkx->hyx"));
  CHECK(plan.steps[0].index == "abc,abd->acd");
}

TEST_CASE("plan: matrix multiply") {
  Program p = compile(
      "axes { p = 2, n = 3, q = 4 }\n"
      "diagram mm(a: [p, n] | [n, q]) -> [p, q] {\n"
      "  par { | transpose 0 (1,0); };\n"
      "  map p@0: map q@1: par { (2) outer 0 1; cup 0:0 0:1; };\n"
      "}");
  const Plan plan = to_plan(p.get("mm"), p.bindings);
  REQUIRE(plan.steps.size() == 1);
  CHECK(canonical(plan.steps[0].index) == canonical("pn,nq->pq"));
  std::mt19937_64 rng(2);
  const auto x = random_inputs(p.get("mm").domain, p.bindings, rng);
  CHECK(max_diff(run_plan(plan, x, {}, p.bindings), eval(p.get("mm"), x, {}, p.bindings)) <=
        1e-12);
}

TEST_CASE("plan: json lines with first-use letters") {
  Program p = corpus_program("multihead.ncd");
  const Plan plan = to_plan(p.get("multihead"), p.bindings);
  std::stringstream ss(plan_jsonl(plan));
  size_t lines = 0;
  for (std::string line; std::getline(ss, line); ++lines) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j["step"] == lines);
    if (j["op"] != "contract") continue;
    const std::string index = j["index"];
    CHECK(index == canonical(index));
    CHECK(j["in_axes"].size() == j["inputs"].size());
  }
  CHECK(lines == plan.steps.size() + 1);
}

TEST_CASE("plan soundness on the corpus") {
  int diagrams = 0;
  for (const auto& path : corpus_files()) {
    const std::string file = path.filename().string();
    Program p = corpus_program(file, small_for(file));
    for (const auto& d : p.diagrams) {
      CAPTURE(d.name);
      const Bindings b = resolve_bindings(d, p.bindings);
      const Plan plan = to_plan(d, b);
      std::mt19937_64 rng(7);
      const ParamStore params = random_params(d, b, rng);
      for (int t = 0; t < 3; ++t) {
        const auto x = random_inputs(d.domain, b, rng);
        CHECK(max_diff(run_plan(plan, x, params, b), eval(d, x, params, b)) <= 1e-12);
      }
      ++diagrams;
    }
  }
  CHECK(diagrams > 20);
}

TEST_CASE("svg: identity is one labelled line") {
  Program p = compile("axes { a = 3 }\ndiagram i(x: [a]) -> [a] { }");
  const std::string svg = to_svg(p.get("i"), p.bindings);
  CHECK(count(svg, "class=\"wire\"") == 1);
  CHECK(count(svg, "class=\"label\"") == 1);
  CHECK(svg.find(">a</text>") != std::string::npos);
}

TEST_CASE("svg: well formed, one glyph per cell, separators per boundary") {
  for (const auto& path : corpus_files()) {
    Program p = corpus_program(path.filename().string());
    for (const auto& d : p.diagrams) {
      CAPTURE(d.name);
      const std::string svg = to_svg(d, p.bindings);
      CHECK(svg == to_svg(d, p.bindings));
      std::stringstream in(svg);
      boost::property_tree::ptree tree;
      CHECK_NOTHROW(boost::property_tree::read_xml(in, tree));
      size_t cells = 0;
      for (const auto& s : d.sections) {
        for (const auto& c : s.cells) cells += is_identity(c) ? 0 : 1;
      }
      CHECK(count(svg, "class=\"glyph\"") == cells);
      Bindings b = p.bindings;
      size_t seps = 0;
      for (const auto& boundary : infer_shapes(d, b)) seps += boundary.size() - 1;
      CHECK(count(svg, "class=\"sep\"") == seps);
    }
  }
}
