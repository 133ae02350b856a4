#include "ncd/parser.hpp"

#include <cctype>
#include <charconv>
#include <initializer_list>

#include <fmt/format.h>

namespace ncd {

namespace {

enum class Tok { Ident, Int, Float, Punct, End };

struct Token {
  Tok kind = Tok::End;
  std::string text;
  Span span;
};

std::string describe(const Token& t) {
  switch (t.kind) {
    case Tok::End: return "end of input";
    case Tok::Ident: return fmt::format("identifier '{}'", t.text);
    case Tok::Int:
    case Tok::Float: return fmt::format("number '{}'", t.text);
    case Tok::Punct: return fmt::format("'{}'", t.text);
  }
  return t.text;
}

std::vector<Token> lex(std::string_view src) {
  std::vector<Token> out;
  int line = 1, col = 1;
  size_t i = 0;
  auto advance = [&](size_t n) {
    for (size_t k = 0; k < n; ++k) {
      if (src[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
      ++i;
    }
  };
  auto is_digit = [&](size_t k) {
    return k < src.size() && std::isdigit(static_cast<unsigned char>(src[k]));
  };
  while (i < src.size()) {
    const char c = src[i];
    if (c == '#') {
      while (i < src.size() && src[i] != '\n') advance(1);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      advance(1);
      continue;
    }
    Token t;
    t.span = Span{line, col, 1};
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      size_t j = i;
      while (j < src.size() &&
             (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_')) {
        ++j;
      }
      t.kind = Tok::Ident;
      t.text = std::string(src.substr(i, j - i));
    } else if (std::isdigit(static_cast<unsigned char>(c)) ||
               ((c == '-' || c == '.') && (is_digit(i + 1) || (c == '-' && src.size() > i + 2 &&
                                                               src[i + 1] == '.' &&
                                                               is_digit(i + 2))))) {
      size_t j = i;
      bool is_float = false;
      if (src[j] == '-') ++j;
      while (is_digit(j)) ++j;
      if (j < src.size() && src[j] == '.') {
        is_float = true;
        ++j;
        while (is_digit(j)) ++j;
      }
      if (j < src.size() && (src[j] == 'e' || src[j] == 'E')) {
        size_t k = j + 1;
        if (k < src.size() && (src[k] == '+' || src[k] == '-')) ++k;
        if (is_digit(k)) {
          is_float = true;
          j = k;
          while (is_digit(j)) ++j;
        }
      }
      t.kind = is_float || src[i] == '-' ? Tok::Float : Tok::Int;
      t.text = std::string(src.substr(i, j - i));
    } else if (c == '-' && i + 1 < src.size() && src[i + 1] == '>') {
      t.kind = Tok::Punct;
      t.text = "->";
    } else if (std::string_view("{}()[],:;|=~@+").find(c) != std::string_view::npos) {
      t.kind = Tok::Punct;
      t.text = std::string(1, c);
    } else {
      throw Error(ErrorKind::SyntaxError,
                  fmt::format("unexpected character '{}'", std::string(1, c)), t.span);
    }
    t.span.length = static_cast<int>(t.text.size());
    advance(t.text.size());
    out.push_back(std::move(t));
  }
  Token end;
  end.span = Span{line, col, 1};
  out.push_back(end);
  return out;
}

class Parser {
 public:
  explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

  ast::File file() {
    ast::File f;
    while (peek().kind != Tok::End) {
      if (at_ident("axes")) {
        f.items.emplace_back(axes());
      } else if (at_ident("param")) {
        f.items.emplace_back(param());
      } else if (at_ident("diagram")) {
        f.items.emplace_back(diagram());
      } else {
        expected({"'axes'", "'param'", "'diagram'"});
      }
    }
    return f;
  }

 private:
  const Token& peek(size_t k = 0) const { return toks_[std::min(pos_ + k, toks_.size() - 1)]; }
  const Token& next() {
    const Token& t = toks_[pos_];
    if (pos_ + 1 < toks_.size()) ++pos_;
    return t;
  }
  bool at_punct(std::string_view p) const {
    return peek().kind == Tok::Punct && peek().text == p;
  }
  bool at_ident(std::string_view w) const {
    return peek().kind == Tok::Ident && peek().text == w;
  }

  [[noreturn]] void expected(std::initializer_list<std::string_view> what) const {
    std::string list;
    for (auto w : what) list += (list.empty() ? "" : ", ") + std::string(w);
    const Token& t = peek();
    throw Error(ErrorKind::SyntaxError,
                fmt::format("expected {}{}, found {}", what.size() > 1 ? "one of " : "", list,
                            describe(t)),
                t.span);
  }

  Span punct(std::string_view p) {
    if (!at_punct(p)) expected({fmt::format("'{}'", p)});
    return next().span;
  }
  Span keyword(std::string_view w) {
    if (!at_ident(w)) expected({fmt::format("'{}'", w)});
    return next().span;
  }
  std::string ident(Span* span = nullptr) {
    if (peek().kind != Tok::Ident) expected({"identifier"});
    if (span) *span = peek().span;
    return next().text;
  }
  int64_t integer(Span* span = nullptr) {
    if (peek().kind != Tok::Int) expected({"integer"});
    const Token& t = next();
    if (span) *span = t.span;
    int64_t v = 0;
    auto [p, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
    if (ec != std::errc() || p != t.text.data() + t.text.size()) {
      throw Error(ErrorKind::SyntaxError, fmt::format("integer '{}' out of range", t.text),
                  t.span);
    }
    return v;
  }
  int small_int() {
    Span s;
    const int64_t v = integer(&s);
    if (v > 1'000'000) throw Error(ErrorKind::SyntaxError, "index too large", s);
    return static_cast<int>(v);
  }
  double number() {
    if (peek().kind != Tok::Int && peek().kind != Tok::Float) expected({"number"});
    const Token& t = next();
    try {
      return std::stod(t.text);
    } catch (const std::exception&) {
      throw Error(ErrorKind::SyntaxError, fmt::format("bad number '{}'", t.text), t.span);
    }
  }
  std::vector<int64_t> ints() {
    std::vector<int64_t> v{integer()};
    while (at_punct(",")) {
      next();
      v.push_back(integer());
    }
    return v;
  }
  std::vector<int> small_ints() {
    std::vector<int> v{small_int()};
    while (at_punct(",")) {
      next();
      v.push_back(small_int());
    }
    return v;
  }
  // "(" [ints] ")"
  std::vector<int> paren_ints() {
    punct("(");
    std::vector<int> v;
    if (!at_punct(")")) v = small_ints();
    punct(")");
    return v;
  }

  ast::AxesDecl axes() {
    ast::AxesDecl d;
    d.span = keyword("axes");
    punct("{");
    if (!at_punct("}")) {
      do {
        if (at_punct(",")) next();
        ast::AxesDecl::Entry e;
        e.name = ident(&e.span);
        punct("=");
        e.value = integer();
        d.entries.push_back(std::move(e));
      } while (at_punct(","));
    }
    punct("}");
    return d;
  }

  ast::ParamDecl param() {
    ast::ParamDecl p;
    p.span = keyword("param");
    p.name = ident();
    punct(":");
    p.in = shape();
    punct("->");
    p.out = shape();
    if (at_punct("+")) {
      next();
      keyword("bias");
      p.bias = true;
    }
    return p;
  }

  ast::DiagramDecl diagram() {
    ast::DiagramDecl d;
    d.span = keyword("diagram");
    d.name = ident();
    punct("(");
    d.arg = ident();
    punct(":");
    d.domain = dshape();
    punct(")");
    punct("->");
    d.codomain = dshape();
    punct("{");
    while (!at_punct("}")) {
      d.steps.push_back(step());
      punct(";");
    }
    punct("}");
    return d;
  }

  std::vector<ast::Shape> dshape() {
    std::vector<ast::Shape> v{shape()};
    while (at_punct("|")) {
      next();
      v.push_back(shape());
    }
    return v;
  }

  ast::Shape shape() {
    ast::Shape s;
    s.span = punct("[");
    if (!at_punct("]")) {
      s.axes.push_back(axis());
      while (at_punct(",")) {
        next();
        s.axes.push_back(axis());
      }
    }
    punct("]");
    return s;
  }

  ast::AxisLit axis() {
    ast::AxisLit a;
    a.span = peek().span;
    if (at_punct("~")) {
      next();
      a.width = true;
    }
    if (peek().kind == Tok::Ident) {
      a.name = next().text;
    } else if (peek().kind == Tok::Int) {
      Span s;
      a.value = integer(&s);
      if (a.value < 1) throw Error(ErrorKind::SyntaxError, "axis length must be >= 1", s);
    } else {
      expected({"axis name", "axis length"});
    }
    return a;
  }

  ast::AxisRef axisref() {
    ast::AxisRef r;
    r.span = peek().span;
    r.segment = small_int();
    punct(":");
    r.position = small_int();
    return r;
  }

  ast::Step step() {
    ast::Step s;
    s.span = peek().span;
    while (at_ident("map")) {
      ast::MapPrefix m;
      m.span = next().span;
      m.axis = axis();
      if (at_punct("@")) {
        next();
        m.inner = true;
        m.targets = small_ints();
      }
      punct(":");
      s.maps.push_back(std::move(m));
    }
    s.op = op();
    return s;
  }

  ast::Op op() {
    using ast::OpKind;
    ast::Op o;
    o.span = peek().span;
    if (peek().kind != Tok::Ident) expected({"operation"});
    const std::string w = next().text;
    if (w == "linear") {
      o.kind = OpKind::Linear;
      o.name = ident();
    } else if (w == "ew") {
      o.kind = OpKind::Ew;
      o.name = ident();
      if (at_punct("(")) {
        next();
        o.param = number();
        punct(")");
      }
    } else if (w == "softmax") {
      o.kind = OpKind::Softmax;
    } else if (w == "copy" || w == "delete") {
      o.kind = w == "copy" ? OpKind::Copy : OpKind::Delete;
      o.segments = {small_int()};
    } else if (w == "swap" || w == "outer" || w == "add") {
      o.kind = w == "swap" ? OpKind::Swap : w == "outer" ? OpKind::Outer : OpKind::Add;
      o.segments = {small_int()};
      o.segments.push_back(small_int());
    } else if (w == "transpose") {
      o.kind = OpKind::Transpose;
      o.segments = {small_int()};
      o.perm = paren_ints();
    } else if (w == "diag" || w == "cup") {
      o.kind = w == "diag" ? OpKind::Diag : OpKind::Cup;
      o.refs = {axisref()};
      o.refs.push_back(axisref());
    } else if (w == "sum") {
      o.kind = OpKind::Sum;
      o.refs = {axisref()};
    } else if (w == "index") {
      o.kind = OpKind::Index;
      o.refs = {axisref()};
      punct("=");
      o.index = integer();
    } else if (w == "view") {
      o.kind = OpKind::View;
      o.in = shape();
      punct("->");
      o.out = shape();
    } else if (w == "unit") {
      o.kind = OpKind::Unit;
      o.axis = axis();
    } else if (w == "conv") {
      o.kind = OpKind::Conv;
      o.conv_rank = small_int();
      keyword("k");
      punct("=");
      o.kernel = ints();
      keyword("s");
      punct("=");
      o.stride = ints();
      keyword("d");
      punct("=");
      o.dilation = ints();
      if (at_ident("pad")) {
        next();
        punct("=");
        o.pad = ints();
      } else if (at_ident("out")) {
        next();
        punct("=");
        o.out_extent = ints();
      } else {
        expected({"'pad'", "'out'"});
      }
    } else if (w == "pool") {
      o.kind = OpKind::Pool;
      if (!at_ident("max") && !at_ident("mean") && !at_ident("argmax")) {
        expected({"'max'", "'mean'", "'argmax'"});
      }
      o.name = next().text;
    } else if (w == "const") {
      o.kind = OpKind::Const;
      o.value = number();
    } else if (w == "call") {
      o.kind = OpKind::Call;
      o.name = ident();
    } else if (w == "par") {
      o.kind = OpKind::Par;
      punct("{");
      o.branches.push_back(branch());
      while (at_punct("|")) {
        next();
        o.branches.push_back(branch());
      }
      punct("}");
    } else if (w == "adjoint") {
      o.kind = OpKind::Adjoint;
      o.in = shape();
      o.in_axes = paren_ints();
      punct("->");
      o.out_axes = paren_ints();
      punct(":");
      o.base.push_back(step());
    } else {
      pos_--;
      expected({"operation"});
    }
    return o;
  }

  ast::Branch branch() {
    ast::Branch b;
    b.span = peek().span;
    if (at_punct("(")) {
      next();
      b.arity = small_int();
      punct(")");
    }
    while (!at_punct("|") && !at_punct("}")) {
      b.steps.push_back(step());
      punct(";");
    }
    return b;
  }

  std::vector<Token> toks_;
  size_t pos_ = 0;
};

// ---- printing ----

std::string num(double v) { return fmt::format("{}", v); }

std::string print_axis(const ast::AxisLit& a) {
  return (a.width ? "~" : "") + (a.name.empty() ? std::to_string(a.value) : a.name);
}

std::string print_shape(const ast::Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.axes.size(); ++i) out += (i ? ", " : "") + print_axis(s.axes[i]);
  return out + "]";
}

std::string print_dshape(const std::vector<ast::Shape>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? " | " : "") + print_shape(v[i]);
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  return fmt::format("{}", fmt::join(v, ","));
}

std::string print_ref(const ast::AxisRef& r) { return fmt::format("{}:{}", r.segment, r.position); }

std::string print_step(const ast::Step& s);

std::string print_op(const ast::Op& o) {
  using ast::OpKind;
  switch (o.kind) {
    case OpKind::Linear: return "linear " + o.name;
    case OpKind::Ew: return "ew " + o.name + (o.param ? "(" + num(*o.param) + ")" : "");
    case OpKind::Softmax: return "softmax";
    case OpKind::Copy: return fmt::format("copy {}", o.segments[0]);
    case OpKind::Delete: return fmt::format("delete {}", o.segments[0]);
    case OpKind::Swap: return fmt::format("swap {} {}", o.segments[0], o.segments[1]);
    case OpKind::Outer: return fmt::format("outer {} {}", o.segments[0], o.segments[1]);
    case OpKind::Add: return fmt::format("add {} {}", o.segments[0], o.segments[1]);
    case OpKind::Transpose: return fmt::format("transpose {} ({})", o.segments[0], join(o.perm));
    case OpKind::Diag: return "diag " + print_ref(o.refs[0]) + " " + print_ref(o.refs[1]);
    case OpKind::Cup: return "cup " + print_ref(o.refs[0]) + " " + print_ref(o.refs[1]);
    case OpKind::Sum: return "sum " + print_ref(o.refs[0]);
    case OpKind::Index: return fmt::format("index {} = {}", print_ref(o.refs[0]), o.index);
    case OpKind::View: return "view " + print_shape(o.in) + " -> " + print_shape(o.out);
    case OpKind::Unit: return "unit " + print_axis(o.axis);
    case OpKind::Conv: {
      std::string s = fmt::format("conv {} k={} s={} d={}", o.conv_rank, join(o.kernel),
                                  join(o.stride), join(o.dilation));
      if (!o.out_extent.empty()) return s + " out=" + join(o.out_extent);
      return s + " pad=" + join(o.pad);
    }
    case OpKind::Pool: return "pool " + o.name;
    case OpKind::Const: return "const " + num(o.value);
    case OpKind::Call: return "call " + o.name;
    case OpKind::Par: {
      std::string s = "par {";
      for (size_t b = 0; b < o.branches.size(); ++b) {
        const auto& br = o.branches[b];
        s += b ? " |" : "";
        if (br.arity) s += fmt::format(" ({})", *br.arity);
        for (const auto& st : br.steps) s += " " + print_step(st) + ";";
      }
      return s + " }";
    }
    case OpKind::Adjoint:
      return fmt::format("adjoint {} ({}) -> ({}) : {}", print_shape(o.in), join(o.in_axes),
                         join(o.out_axes), print_step(o.base.at(0)));
  }
  return "?";
}

std::string print_step(const ast::Step& s) {
  std::string out;
  for (const auto& m : s.maps) {
    out += "map " + print_axis(m.axis);
    if (m.inner) out += "@" + join(m.targets);
    out += ": ";
  }
  return out + print_op(s.op);
}

}  // namespace

ast::File parse(std::string_view text) { return Parser(lex(text)).file(); }

std::string print(const ast::File& file) {
  std::string out;
  for (const auto& item : file.items) {
    if (!out.empty()) out += "\n";
    if (auto a = std::get_if<ast::AxesDecl>(&item)) {
      out += "axes { ";
      for (size_t i = 0; i < a->entries.size(); ++i) {
        out += fmt::format("{}{} = {}", i ? ", " : "", a->entries[i].name, a->entries[i].value);
      }
      out += a->entries.empty() ? "}\n" : " }\n";
    } else if (auto p = std::get_if<ast::ParamDecl>(&item)) {
      out += fmt::format("param {} : {} -> {}{}\n", p->name, print_shape(p->in),
                         print_shape(p->out), p->bias ? " +bias" : "");
    } else if (auto d = std::get_if<ast::DiagramDecl>(&item)) {
      out += fmt::format("diagram {}({}: {}) -> {} {{\n", d->name, d->arg,
                         print_dshape(d->domain), print_dshape(d->codomain));
      for (const auto& s : d->steps) out += "  " + print_step(s) + ";\n";
      out += "}\n";
    }
  }
  return out;
}

}  // namespace ncd
