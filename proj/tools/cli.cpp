#include "cli.hpp"

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "ncd/autodiff.hpp"
#include "ncd/complexity.hpp"
#include "ncd/emit.hpp"
#include "ncd/interp.hpp"
#include "ncd/parser.hpp"
#include "ncd/rewrite.hpp"

namespace ncd::cli {

namespace {

struct Options {
  std::string file;
  std::string diagram;
  std::vector<std::string> axes;
  std::vector<std::string> inputs;
  std::vector<std::string> params;
  std::string output;
  std::optional<uint64_t> seed;
  std::string mode = "reverse";
  std::string compare;
  std::string rule;
  std::string at;
  std::string moves;
  bool list = false;
  bool show = false;
};

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorKind::Io, fmt::format("cannot read '{}'", path));
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int64_t parse_int(const std::string& text, const std::string& what) {
  try {
    size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::SyntaxError, fmt::format("{}: expected an integer, got '{}'", what, text));
}

std::pair<std::string, std::string> split_eq(const std::string& s, const std::string& flag) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
    fail(ErrorKind::SyntaxError, fmt::format("{}: expected NAME=VALUE, got '{}'", flag, s));
  }
  return {s.substr(0, eq), s.substr(eq + 1)};
}

Bindings axis_overrides(const Options& o) {
  Bindings b;
  for (const auto& a : o.axes) {
    auto [name, value] = split_eq(a, "-a");
    const int64_t n = parse_int(value, "-a " + name);
    if (n < 1) fail(ErrorKind::SyntaxError, fmt::format("-a {}: length must be positive", name));
    b[name] = n;
  }
  return b;
}

class Session {
 public:
  Session(const Options& o, std::ostream& out) : o_(o), out_(out) {
    source_ = slurp(o.file);
    program_ = compile(source_, axis_overrides(o));
  }

  const std::string& source() const { return source_; }

  const Diagram& diagram() const {
    if (!o_.diagram.empty()) return program_.get(o_.diagram);
    if (program_.diagrams.size() == 1) return program_.diagrams[0];
    if (program_.diagrams.empty()) fail(ErrorKind::UndefinedName, "the file defines no diagram");
    fail(ErrorKind::UndefinedName,
         fmt::format("the file defines {} diagrams; choose one with -d", program_.diagrams.size()));
  }

  int check() {
    for (const auto& d : program_.diagrams) {
      if (!o_.diagram.empty() && d.name != o_.diagram) continue;
      Bindings b = program_.bindings;
      const auto shapes = infer_shapes(d, b);
      out_ << fmt::format("{}: {} -> {}\n", d.name, to_string(d.domain), to_string(d.codomain));
      for (size_t k = 0; k < shapes.size(); ++k) {
        out_ << fmt::format("  {:>2}  {}\n", k, to_string(shapes[k], b));
      }
    }
    if (!o_.diagram.empty()) program_.get(o_.diagram);
    return 0;
  }

  int run() {
    const Diagram& d = diagram();
    const Bindings b = resolve_bindings(d, program_.bindings);
    std::mt19937_64 rng(o_.seed.value_or(0));
    const ParamStore params = load_params(d, b, rng);
    const auto x = load_inputs(d, b, rng);
    write(eval(d, x, params, b));
    return 0;
  }

  int grad() {
    const Diagram& d = diagram();
    const Bindings b = resolve_bindings(d, program_.bindings);
    GradMode mode = GradMode::Reverse;
    if (o_.mode == "forward") {
      mode = GradMode::Forward;
    } else if (o_.mode != "reverse") {
      fail(ErrorKind::SyntaxError, fmt::format("--mode: expected reverse or forward, got '{}'", o_.mode));
    }
    const Diagram g = grad_pipeline(d, mode, b);
    if (o_.show) {
      out_ << format(g, program_);
      return 0;
    }
    std::mt19937_64 rng(o_.seed.value_or(0));
    const ParamStore params = load_params(d, b, rng);
    const auto x = load_inputs(d, b, rng);
    write(eval(g, x, params, b));
    return 0;
  }

  int jacobian() {
    const Diagram& d = diagram();
    const Bindings b = resolve_bindings(d, program_.bindings);
    std::mt19937_64 rng(o_.seed.value_or(0));
    const ParamStore params = load_params(d, b, rng);
    const auto x = load_inputs(d, b, rng);
    write({jacobian_materialize(d, x, params, b)});
    return 0;
  }

  int cost() {
    const Diagram& d = diagram();
    std::string json;
    if (!o_.compare.empty()) {
      const Diagram& other = program_.get(o_.compare);
      json = comparison_json(d, other, compare(d, other, program_.bindings), program_.bindings);
    } else {
      json = report_json(d, cost_report(d, program_.bindings), program_.bindings);
    }
    emit_text(json + "\n");
    return 0;
  }

  int rewrite() {
    const Diagram& d = diagram();
    const RewriteRule& rule = rewrite_rule(o_.rule);
    const auto sites = rule.sites(d, program_.bindings);
    if (o_.list) {
      for (const auto& s : sites) out_ << (s.empty() ? "*" : s) << "\n";
      return 0;
    }
    Diagram r;
    if (!o_.moves.empty()) {
      if (o_.rule != "transpose") fail(ErrorKind::SyntaxError, "--moves applies to the transpose rule only");
      if (o_.at.empty()) fail(ErrorKind::SyntaxError, "--moves needs --at S.C");
      r = transpose_linear(d, parse_address(o_.at), parse_axis_moves(o_.moves), program_.bindings);
    } else if (!o_.at.empty()) {
      r = rule.apply(d, o_.at, program_.bindings);
    } else if (!sites.empty()) {
      r = rule.apply(d, sites.front(), program_.bindings);
    } else {
      fail(ErrorKind::NoMatch, fmt::format("{}: no site in '{}'", o_.rule, d.name));
    }
    emit_text(format(r, program_));
    return 0;
  }

  int plan() {
    const Diagram& d = diagram();
    emit_text(plan_jsonl(to_plan(d, resolve_bindings(d, program_.bindings))));
    return 0;
  }

  int render() {
    const Diagram& d = diagram();
    emit_text(to_svg(d, program_.bindings));
    return 0;
  }

 private:
  std::vector<Tensor> load_inputs(const Diagram& d, const Bindings& b, std::mt19937_64& rng) {
    const size_t n = d.domain.size();
    std::vector<std::optional<Tensor>> slots(n);
    size_t next = 0;
    for (const auto& spec : o_.inputs) {
      size_t at = next;
      std::string path = spec;
      if (const auto eq = spec.find('='); eq != std::string::npos) {
        auto [key, value] = split_eq(spec, "-i");
        path = value;
        at = key == d.arg ? 0 : static_cast<size_t>(parse_int(key, "-i"));
      }
      if (at >= n) {
        fail(ErrorKind::SegmentOutOfRange,
             fmt::format("-i: {} has {} input segment(s), got segment {}", d.name, n, at));
      }
      slots[at] = load_tensor(path);
      next = at + 1;
    }
    const auto shapes = concrete_shapes(d.domain, b);
    std::vector<Tensor> x;
    for (size_t i = 0; i < n; ++i) {
      if (slots[i]) {
        x.push_back(*slots[i]);
      } else if (o_.seed) {
        x.push_back(random_tensor(shapes[i], rng));
      } else {
        fail(ErrorKind::EnvMismatch,
             fmt::format("no tensor for input segment {}; pass -i {}=FILE or --seed N", i, i));
      }
    }
    return x;
  }

  ParamStore load_params(const Diagram& d, const Bindings& b, std::mt19937_64& rng) {
    ParamStore store;
    const auto wanted = collect_params(d);
    for (const auto& spec : o_.params) {
      auto [key, path] = split_eq(spec, "-p");
      const bool bias = key.size() > 5 && key.compare(key.size() - 5, 5, ".bias") == 0;
      const std::string name = bias ? key.substr(0, key.size() - 5) : key;
      if (!wanted.count(name)) {
        fail(ErrorKind::UndefinedName, fmt::format("-p: {} has no parameter '{}'", d.name, name));
      }
      (bias ? store.biases : store.weights)[name] = load_tensor(path);
    }
    const bool complete = std::all_of(wanted.begin(), wanted.end(), [&](const auto& kv) {
      return store.weights.count(kv.first) && (!kv.second.bias || store.biases.count(kv.first));
    });
    if (complete) return store;
    if (!o_.seed) {
      for (const auto& [name, l] : wanted) {
        if (!store.weights.count(name)) {
          fail(ErrorKind::EnvMismatch,
               fmt::format("no weights for parameter '{}'; pass -p {}=FILE or --seed N", name, name));
        }
        if (l.bias && !store.biases.count(name)) {
          fail(ErrorKind::EnvMismatch,
               fmt::format("no bias for parameter '{}'; pass -p {}.bias=FILE or --seed N", name, name));
        }
      }
    }
    ParamStore random = random_params(d, b, rng);
    for (auto& [name, t] : store.weights) random.weights[name] = t;
    for (auto& [name, t] : store.biases) random.biases[name] = t;
    return random;
  }

  void write(const std::vector<Tensor>& ts) {
    if (o_.output.empty()) {
      for (size_t i = 0; i < ts.size(); ++i) out_ << (i ? "\n" : "") << write_tensor(ts[i]);
      return;
    }
    const std::filesystem::path base(o_.output);
    for (size_t i = 0; i < ts.size(); ++i) {
      std::filesystem::path p = base;
      if (i > 0) {
        p = base.parent_path() /
            fmt::format("{}.{}{}", base.stem().string(), i, base.extension().string());
      }
      save_tensor(p.string(), ts[i]);
    }
  }

  void emit_text(const std::string& text) {
    if (o_.output.empty()) {
      out_ << text;
      return;
    }
    std::ofstream f(o_.output);
    if (!f) fail(ErrorKind::Io, fmt::format("cannot write '{}'", o_.output));
    f << text;
  }

  const Options& o_;
  std::ostream& out_;
  std::string source_;
  Program program_;
};

bool use_color() {
  if (const char* v = std::getenv("NCDC_COLOR")) return std::string(v) == "1";
  return false;
}

std::string line_at(const std::string& text, int line) {
  std::stringstream ss(text);
  std::string l;
  for (int i = 0; i < line && std::getline(ss, l); ++i) {
  }
  return l;
}

void report(const Error& e, const std::string& file, const std::string& source,
            std::ostream& err) {
  const bool color = use_color();
  const std::string label = color ? "\x1b[1;31merror\x1b[0m" : "error";
  std::string where = file.empty() ? "ncdc" : file;
  if (e.span()) where += fmt::format(":{}:{}", e.span()->line, e.span()->column);
  err << fmt::format("{}: {}[{}]: {}\n", where, label, to_string(e.kind()), e.what());
  if (!e.span() || source.empty()) return;
  const std::string line = line_at(source, e.span()->line);
  const int col = std::max(1, e.span()->column);
  err << fmt::format("  {}\n  {}{}\n", line, std::string(static_cast<size_t>(col - 1), ' '),
                     std::string(static_cast<size_t>(std::max(1, e.span()->length)), '^'));
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Neural circuit diagram compiler", "ncdc"};
  app.require_subcommand(1);
  Options o;

  auto file_arg = [&](CLI::App* sub) {
    sub->add_option("file", o.file, "Source .ncd file")->required();
    sub->add_option("-a,--axis", o.axes, "Axis length override NAME=INT (repeatable)");
  };
  auto name_arg = [&](CLI::App* sub) {
    sub->add_option("-d,--diagram", o.diagram, "Diagram name (optional if the file has one)");
  };
  auto env_args = [&](CLI::App* sub) {
    sub->add_option("-i,--input", o.inputs,
                    "Input tensor [SEG=]FILE; SEG is a segment index or the argument name");
    sub->add_option("-p,--param", o.params, "Parameter tensor NAME=FILE or NAME.bias=FILE");
    sub->add_option("--seed", o.seed, "Fill missing inputs and parameters with uniform [-1, 1) values");
  };
  auto out_arg = [&](CLI::App* sub, const char* what) {
    sub->add_option("-o,--output", o.output, what);
  };

  auto* check = app.add_subcommand("check", "Parse, type-check and print boundary shapes");
  file_arg(check);
  check->add_option("-d,--diagram", o.diagram, "Only this diagram");

  auto* runc = app.add_subcommand("run", "Evaluate a diagram");
  file_arg(runc);
  name_arg(runc);
  env_args(runc);
  out_arg(runc, "Output tensor file; segment k > 0 goes to STEM.k.EXT");

  auto* grad = app.add_subcommand("grad", "Gradient of a scalar-valued diagram");
  file_arg(grad);
  name_arg(grad);
  env_args(grad);
  grad->add_option("--mode", o.mode, "reverse or forward")->check(CLI::IsMember({"reverse", "forward"}));
  grad->add_flag("--show", o.show, "Print the gradient diagram instead of evaluating it");
  out_arg(grad, "Output tensor file; segment k > 0 goes to STEM.k.EXT");

  auto* jac = app.add_subcommand("jacobian", "Materialized Jacobian at a point");
  file_arg(jac);
  name_arg(jac);
  env_args(jac);
  out_arg(jac, "Output tensor file");

  auto* cost = app.add_subcommand("cost", "Time and space polynomials as JSON");
  file_arg(cost);
  name_arg(cost);
  cost->add_option("--compare", o.compare, "Second diagram with the same type");
  out_arg(cost, "Output JSON file");

  auto* rw = app.add_subcommand("rewrite", "Apply one rewrite rule and print the result");
  file_arg(rw);
  name_arg(rw);
  rw->add_option("--rule", o.rule, "snake, naturality, transpose, factor, drop_units or normalize")
      ->required();
  rw->add_option("--at", o.at, "Site: cell S.C, or section S for naturality (default: first site)");
  rw->add_option("--moves", o.moves, "Transpose axis moves, e.g. 0,1->2 (transpose rule)");
  rw->add_flag("--list", o.list, "List the sites where the rule applies");
  out_arg(rw, "Output .ncd file");

  auto* plan = app.add_subcommand("plan", "Contraction plan as JSON lines");
  file_arg(plan);
  name_arg(plan);
  out_arg(plan, "Output file");

  auto* render = app.add_subcommand("render", "Standalone SVG drawing");
  file_arg(render);
  name_arg(render);
  out_arg(render, "Output .svg file");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  std::string source;
  try {
    Session s(o, out);
    source = s.source();
    if (*check) return s.check();
    if (*runc) return s.run();
    if (*grad) return s.grad();
    if (*jac) return s.jacobian();
    if (*cost) return s.cost();
    if (*rw) return s.rewrite();
    if (*plan) return s.plan();
    if (*render) return s.render();
    return 2;
  } catch (const Error& e) {
    if (source.empty()) {
      try {
        source = slurp(o.file);
      } catch (const Error&) {
      }
    }
    report(e, o.file, source, err);
    return 1;
  } catch (const std::exception& e) {
    err << fmt::format("{}: internal error: {}\n", o.file.empty() ? "ncdc" : o.file, e.what());
    return 2;
  }
}

}  // namespace ncd::cli
