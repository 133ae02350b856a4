#include <doctest.h>

#include <filesystem>
#include <regex>
#include <sstream>

#include "cli.hpp"
#include "ncd/complexity.hpp"
#include "ncd/corpus.hpp"
#include "ncd/emit.hpp"
#include "support.hpp"

using namespace ncd;
using namespace ncd::test;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result ncdc(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string corpus(const std::string& file) {
  return (std::filesystem::path(NCD_CORPUS_DIR) / file).string();
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "ncdc_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void put(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

}  // namespace

TEST_CASE("cli: check prints the mlp boundaries") {
  const Result r = ncdc({"check", corpus("mlp.ncd"), "-d", "mlp"});
  CHECK(r.code == 0);
  std::stringstream ss(r.out);
  std::string line;
  std::getline(ss, line);
  CHECK(line == "mlp: [x, x] -> [c]");
  int boundaries = 0;
  while (std::getline(ss, line)) ++boundaries;
  CHECK(boundaries == 8);
  CHECK(r.out.find("[f=784]") != std::string::npos);
}

TEST_CASE("cli: run conv1d from tensor files") {
  const auto v = scratch("v.t"), w = scratch("w.t"), o = scratch("out.t");
  put(v, "1\n5\n1 2 3 4 5\n");
  put(w, "1\n3\n1 0 -1\n");
  const Result r = ncdc({"run", corpus("conv1d.ncd"), "-d", "conv1d", "-i", "0=" + v.string(),
                         "-i", "1=" + w.string(), "-o", o.string()});
  CHECK(r.code == 0);
  CHECK(load_tensor(o.string()) == Tensor::from({3}, {-2, -2, -2}));

  const Result positional =
      ncdc({"run", corpus("conv1d.ncd"), "-d", "conv1d", "-i", v.string(), "-i", w.string()});
  CHECK(positional.out == "1\n3\n-2 -2 -2\n");
}

TEST_CASE("cli: user errors exit 1 with a located diagnostic") {
  const auto bad = scratch("bad.ncd");
  put(bad, "diagram c(x: [3, 4]) -> [] {\n  cup 0:0 0:1;\n}\n");
  Result r = ncdc({"check", bad.string()});
  CHECK(r.code == 1);
  const std::string first = r.err.substr(0, r.err.find('\n'));
  CHECK(std::regex_search(first, std::regex(":2:3: error\\[ShapeMismatch\\]: ")));
  CHECK(first.find('3') != std::string::npos);
  CHECK(first.find('4') != std::string::npos);

  CHECK(ncdc({"check", scratch("missing.ncd").string()}).code == 1);
  CHECK(ncdc({"run", corpus("conv1d.ncd"), "-d", "conv1d"}).code == 1);
  CHECK(ncdc({"run", corpus("conv1d.ncd"), "-d", "nope", "--seed", "1"}).code == 1);
  CHECK(ncdc({"grad", corpus("mlp.ncd"), "-d", "mlp", "--seed", "1"}).code == 1);
  CHECK(ncdc({"frobnicate"}).code == 1);
  CHECK(ncdc({"check", corpus("mlp.ncd"), "-a", "x=zero"}).code == 1);
  CHECK(ncdc({"rewrite", corpus("mlp.ncd"), "-d", "mlp", "--rule", "nope"}).code == 1);
}

TEST_CASE("cli: axis overrides replace declared lengths") {
  const Result r = ncdc({"check", corpus("mlp.ncd"), "-d", "mlp", "-a", "x=4", "-a", "h=8"});
  CHECK(r.code == 0);
  CHECK(r.out.find("[f=16]") != std::string::npos);
  CHECK(r.out.find("[h=8]") != std::string::npos);
}

TEST_CASE("cli: help lists every flag of every subcommand") {
  const std::map<std::string, std::vector<std::string>> flags = {
      {"check", {"--axis", "--diagram"}},
      {"run", {"--axis", "--diagram", "--input", "--param", "--seed", "--output"}},
      {"grad", {"--axis", "--diagram", "--input", "--param", "--seed", "--mode", "--show", "--output"}},
      {"jacobian", {"--axis", "--diagram", "--input", "--param", "--seed", "--output"}},
      {"cost", {"--axis", "--diagram", "--compare", "--output"}},
      {"rewrite", {"--axis", "--diagram", "--rule", "--at", "--moves", "--list", "--output"}},
      {"plan", {"--axis", "--diagram", "--output"}},
      {"render", {"--axis", "--diagram", "--output"}},
  };
  for (const auto& [sub, names] : flags) {
    CAPTURE(sub);
    const Result r = ncdc({sub, "--help"});
    CHECK(r.code == 0);
    for (const auto& f : names) CHECK(r.out.find(f) != std::string::npos);
  }
}

TEST_CASE("cli: grad in both modes agrees") {
  const Result rev = ncdc({"grad", corpus("chain_loss.ncd"), "-d", "chain", "--seed", "3"});
  const Result fwd =
      ncdc({"grad", corpus("chain_loss.ncd"), "-d", "chain", "--seed", "3", "--mode", "forward"});
  REQUIRE(rev.code == 0);
  REQUIRE(fwd.code == 0);
  CHECK(max_abs_diff(read_tensor(rev.out), read_tensor(fwd.out)) <= 1e-8);
  const Result show = ncdc({"grad", corpus("sumsq.ncd"), "-d", "sumsq", "--show"});
  CHECK(show.code == 0);
  CHECK_NOTHROW(compile(show.out, {{"n", 3}}));
}

TEST_CASE("cli: rewrite lists and applies sites") {
  const Result list = ncdc({"rewrite", corpus("conv1d.ncd"), "-d", "conv1d", "--rule", "factor",
                            "--list"});
  CHECK(list.code == 0);
  const Result none = ncdc({"rewrite", corpus("mlp.ncd"), "-d", "mlp", "--rule", "snake"});
  CHECK(none.code == 1);
  CHECK(none.err.find("error[NoMatch]") != std::string::npos);
  const Result t = ncdc({"rewrite", corpus("conv_transposed.ncd"), "-d", "conv_transposed",
                         "--rule", "transpose", "--list"});
  CHECK(t.code == 0);
}

TEST_CASE("cli: repeated invocations are byte-identical") {
  for (const auto& e : load_corpus()) {
    CAPTURE(e.id);
    for (const std::vector<std::string>& args :
         {std::vector<std::string>{"run", corpus(e.file), "-d", e.diagram, "--seed", "5"},
          std::vector<std::string>{"render", corpus(e.file), "-d", e.diagram},
          std::vector<std::string>{"cost", corpus(e.file), "-d", e.diagram},
          std::vector<std::string>{"plan", corpus(e.file), "-d", e.diagram}}) {
      const Result a = ncdc(args), b = ncdc(args);
      CHECK(a.code == 0);
      CHECK(a.out == b.out);
      CHECK(a.err == b.err);
    }
  }
}

TEST_CASE("corpus goldens: svg and cost report") {
  const auto golden = std::filesystem::path(NCD_CORPUS_DIR) / "golden";
  for (const auto& e : load_corpus()) {
    CAPTURE(e.id);
    const Program p = load_entry(e, NCD_CORPUS_DIR);
    const Diagram& d = p.get(e.diagram);
    const auto svg = golden / (e.id + ".svg");
    const auto json = golden / (e.id + ".json");
    REQUIRE(std::filesystem::exists(svg));
    REQUIRE(std::filesystem::exists(json));
    CHECK(to_svg(d, p.bindings) == slurp(svg));
    CHECK(report_json(d, cost_report(d, p.bindings), p.bindings) + "\n" == slurp(json));
  }
}
