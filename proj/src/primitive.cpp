#include "ncd/primitive.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "ncd/error.hpp"

namespace ncd {

bool AssocTranspose::operator==(const AssocTranspose& o) const {
  if ((base == nullptr) != (o.base == nullptr)) return false;
  if (base && !(*base == *o.base)) return false;
  return base_in == o.base_in && in_axes == o.in_axes && out_axes == o.out_axes;
}

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void check_axis(int axis, const TensorShape& s, const char* what) {
  if (axis < 0 || axis >= static_cast<int>(s.rank())) {
    fail(ErrorKind::SegmentOutOfRange,
         fmt::format("{}: axis {} out of range for {}", what, axis, to_string(s)));
  }
}

void check_pair(int a, int b, const TensorShape& s, Bindings& bindings, const char* what) {
  check_axis(a, s, what);
  check_axis(b, s, what);
  if (a == b) fail(ErrorKind::ShapeMismatch, fmt::format("{}: axes must differ", what));
  if (!unify(s.axes[a].len, s.axes[b].len, bindings)) {
    fail(ErrorKind::ShapeMismatch,
         fmt::format("{} requires equal lengths, found {} and {}", what,
                     to_string(TensorShape{{s.axes[a]}}, bindings),
                     to_string(TensorShape{{s.axes[b]}}, bindings)));
  }
}

TensorShape without(const TensorShape& s, std::vector<int> drop) {
  std::sort(drop.begin(), drop.end());
  TensorShape out;
  for (int i = 0; i < static_cast<int>(s.rank()); ++i) {
    if (!std::binary_search(drop.begin(), drop.end(), i)) out.axes.push_back(s.axes[i]);
  }
  return out;
}

void expect_segments(const std::vector<TensorShape>& in, size_t n, const char* what) {
  if (in.size() != n) {
    fail(ErrorKind::SegmentOutOfRange,
         fmt::format("{} expects {} segment(s), got {}", what, n, in.size()));
  }
}

bool same_extents(const TensorShape& a, const TensorShape& b, Bindings& bindings) {
  return unify(a, b, bindings);
}

}  // namespace

int input_arity(const Primitive& p) {
  return std::visit(overloaded{
                        [](const SegmentSwap& s) { return s.span; },
                        [](const OuterProduct&) { return 2; },
                        [](const Add&) { return 2; },
                        [](const ConstScalar&) { return 0; },
                        [](const auto&) { return 1; },
                    },
                    p.op);
}

std::vector<TensorShape> output_shapes(const Primitive& p, const std::vector<TensorShape>& in,
                                       Bindings& bindings) {
  expect_segments(in, static_cast<size_t>(input_arity(p)), display_name(p).c_str());
  return std::visit(
      overloaded{
          [&](const Identity&) { return std::vector<TensorShape>{in[0]}; },
          [&](const Copy&) { return std::vector<TensorShape>{in[0], in[0]}; },
          [&](const Delete&) { return std::vector<TensorShape>{}; },
          [&](const SegmentSwap& s) {
            if (s.span < 2) fail(ErrorKind::SegmentOutOfRange, "swap needs two segments");
            auto out = in;
            std::swap(out.front(), out.back());
            return out;
          },
          [&](const AxisTranspose& t) {
            const auto& s = in[0];
            if (t.perm.size() != s.rank()) {
              fail(ErrorKind::ShapeMismatch,
                   fmt::format("transpose of rank {} applied to {}", t.perm.size(), to_string(s)));
            }
            std::vector<int> seen(s.rank(), 0);
            TensorShape out;
            for (int src : t.perm) {
              check_axis(src, s, "transpose");
              if (seen[src]++) fail(ErrorKind::ShapeMismatch, "transpose is not a permutation");
              out.axes.push_back(s.axes[src]);
            }
            return std::vector<TensorShape>{out};
          },
          [&](const Diag& d) {
            check_pair(d.first, d.second, in[0], bindings, "diag");
            return std::vector<TensorShape>{without(in[0], {std::max(d.first, d.second)})};
          },
          [&](const View& v) {
            expect_shape(v.in, in[0], bindings, "view input");
            const auto a_val = v.in.elements().eval(bindings);
            if (!a_val) {
              // Symbolic input: the output must be the same product.
              if (v.in.elements().key() != v.out.elements().key()) {
                fail(ErrorKind::ShapeMismatch,
                     fmt::format("view {} -> {} changes the element count", to_string(v.in),
                                 to_string(v.out)));
              }
              return std::vector<TensorShape>{v.out};
            }
            const int64_t a = *a_val;
            // Output symbols that are still free take the remaining factor.
            int64_t known = 1;
            std::optional<std::string> free_symbol;
            for (const auto& axis : v.out.axes) {
              if (auto val = axis.len.eval(bindings)) {
                known *= *val;
              } else if (auto sym = axis.len.lone_symbol(); sym && !free_symbol) {
                free_symbol = sym;
              } else {
                axis.len.value(bindings);
              }
            }
            if (free_symbol) {
              if (known == 0 || a % known != 0) {
                fail(ErrorKind::ShapeMismatch,
                     fmt::format("view {} -> {}: element counts cannot match",
                                 to_string(v.in, bindings), to_string(v.out)));
              }
              bindings[*free_symbol] = a / known;
            }
            const int64_t b = v.out.element_count(bindings);
            if (a != b) {
              fail(ErrorKind::ShapeMismatch,
                   fmt::format("view {} -> {} changes the element count ({} vs {})",
                               to_string(v.in, bindings), to_string(v.out, bindings), a, b));
            }
            return std::vector<TensorShape>{v.out};
          },
          [&](const IndexKet& k) {
            check_axis(k.axis, in[0], "index");
            const int64_t n = in[0].axes[k.axis].len.value(bindings);
            if (k.index < 0 || k.index >= n) {
              fail(ErrorKind::SegmentOutOfRange,
                   fmt::format("index {} out of range for axis of length {}", k.index, n));
            }
            return std::vector<TensorShape>{without(in[0], {k.axis})};
          },
          [&](const OuterProduct&) {
            TensorShape out = in[0];
            out.axes.insert(out.axes.end(), in[1].axes.begin(), in[1].axes.end());
            return std::vector<TensorShape>{out};
          },
          [&](const Cup& c) {
            check_pair(c.first, c.second, in[0], bindings, "cup");
            return std::vector<TensorShape>{without(in[0], {c.first, c.second})};
          },
          [&](const Unit& u) {
            TensorShape out = in[0];
            out.axes.push_back(u.axis);
            out.axes.push_back(u.axis);
            return std::vector<TensorShape>{out};
          },
          [&](const ElementWise&) { return std::vector<TensorShape>{in[0]}; },
          [&](const SoftMax&) {
            if (in[0].rank() != 1) {
              fail(ErrorKind::ShapeMismatch,
                   fmt::format("softmax acts on one axis, found {}; broadcast the others",
                               to_string(in[0], bindings)));
            }
            return std::vector<TensorShape>{in[0]};
          },
          [&](const Add&) {
            if (!same_extents(in[0], in[1], bindings)) {
              fail(ErrorKind::ShapeMismatch,
                   fmt::format("add of {} and {}", to_string(in[0], bindings),
                               to_string(in[1], bindings)));
            }
            return std::vector<TensorShape>{in[0]};
          },
          [&](const SumAxis& s) {
            check_axis(s.axis, in[0], "sum");
            return std::vector<TensorShape>{without(in[0], {s.axis})};
          },
          [&](const LinearParam& l) {
            expect_shape(l.in, in[0], bindings, fmt::format("linear {} input", l.name));
            return std::vector<TensorShape>{l.out};
          },
          [&](const ConvTensor& c) {
            if (c.rank() < 1 || in[0].rank() != static_cast<size_t>(c.rank())) {
              fail(ErrorKind::ShapeMismatch,
                   fmt::format("conv of rank {} applied to {}", c.rank(),
                               to_string(in[0], bindings)));
            }
            TensorShape out;
            const int group = c.rank() > 1 ? 1 : 0;
            for (int i = 0; i < c.rank(); ++i) {
              const auto& x = in[0].axes[i];
              if (auto v = x.len.eval(bindings)) conv_out_extent(*v, c.dims[i]);
              Axis y{Extent::conv(x.len, c.dims[i]), x.width, group};
              out.axes.push_back(y);
            }
            for (int i = 0; i < c.rank(); ++i) {
              out.axes.push_back(Axis{Extent::constant(c.dims[i].kernel), false, group ? 2 : 0});
            }
            return std::vector<TensorShape>{out};
          },
          [&](const Pool& pl) {
            if (pl.kind == PoolKind::ArgMax) return std::vector<TensorShape>{in[0]};
            return std::vector<TensorShape>{TensorShape{}};
          },
          [&](const ConstScalar&) { return std::vector<TensorShape>{TensorShape{}}; },
          [&](const AssocTranspose& t) {
            if (!t.base || input_arity(*t.base) != 1) {
              fail(ErrorKind::NotLinear, "associated transpose needs a single-segment base");
            }
            auto b = output_shapes(*t.base, {t.base_in}, bindings);
            if (b.size() != 1) fail(ErrorKind::NotLinear, "associated transpose needs one output");
            std::vector<Axis> assoc = t.base_in.axes;
            assoc.insert(assoc.end(), b[0].axes.begin(), b[0].axes.end());
            std::vector<int> seen(assoc.size(), 0);
            auto pick = [&](const std::vector<int>& idx) {
              TensorShape s;
              for (int i : idx) {
                if (i < 0 || i >= static_cast<int>(assoc.size()) || seen[i]++) {
                  fail(ErrorKind::BadAxisMove, "associated transpose axes are not a partition");
                }
                s.axes.push_back(assoc[i]);
              }
              return s;
            };
            TensorShape expected_in = pick(t.in_axes);
            TensorShape out = pick(t.out_axes);
            if (t.in_axes.size() + t.out_axes.size() != assoc.size()) {
              fail(ErrorKind::BadAxisMove, "associated transpose axes are not a partition");
            }
            expect_shape(expected_in, in[0], bindings, "transposed map input");
            return std::vector<TensorShape>{out};
          },
      },
      p.op);
}

bool is_linear(const Primitive& p) {
  return std::visit(overloaded{
                        [](const ElementWise& e) {
                          return e.fn == EwFn::Neg || e.fn == EwFn::Scale;
                        },
                        [](const SoftMax&) { return false; },
                        [](const OuterProduct&) { return false; },
                        [](const LinearParam& l) { return !l.bias; },
                        [](const Pool& pl) { return pl.kind == PoolKind::Mean; },
                        [](const ConstScalar&) { return false; },
                        [](const AssocTranspose& t) { return t.base && is_linear(*t.base); },
                        [](const auto&) { return true; },
                    },
                    p.op);
}

namespace {

std::string ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

std::string display_name(const Primitive& p) {
  return std::visit(
      overloaded{
          [](const Identity&) -> std::string { return "id"; },
          [](const Copy&) -> std::string { return "copy"; },
          [](const Delete&) -> std::string { return "delete"; },
          [](const SegmentSwap&) -> std::string { return "swap"; },
          [](const AxisTranspose& t) -> std::string { return "transpose (" + ints(t.perm) + ")"; },
          [](const Diag& d) -> std::string { return fmt::format("diag {} {}", d.first, d.second); },
          [](const View& v) -> std::string {
            return fmt::format("view {} -> {}", to_string(v.in), to_string(v.out));
          },
          [](const IndexKet& k) -> std::string { return fmt::format("index {}={}", k.axis, k.index); },
          [](const OuterProduct&) -> std::string { return "outer"; },
          [](const Cup& c) -> std::string { return fmt::format("cup {} {}", c.first, c.second); },
          [](const Unit& u) -> std::string { return "unit " + to_string(u.axis); },
          [](const ElementWise& e) -> std::string { return "ew " + ew_name(e); },
          [](const SoftMax&) -> std::string { return "softmax"; },
          [](const Add&) -> std::string { return "add"; },
          [](const SumAxis& s) -> std::string { return fmt::format("sum {}", s.axis); },
          [](const LinearParam& l) -> std::string { return "linear " + l.name; },
          [](const ConvTensor& c) -> std::string { return fmt::format("conv {}", c.rank()); },
          [](const Pool& pl) -> std::string {
            switch (pl.kind) {
              case PoolKind::Max: return "pool max";
              case PoolKind::Mean: return "pool mean";
              case PoolKind::ArgMax: return "pool argmax";
            }
            return "pool";
          },
          [](const ConstScalar& c) -> std::string { return fmt::format("const {}", c.value); },
          [](const AssocTranspose& t) -> std::string {
            return "adjoint " + (t.base ? display_name(*t.base) : std::string("?"));
          },
      },
      p.op);
}

namespace {

struct EwEntry {
  EwFn fn;
  const char* name;
};
constexpr EwEntry kEwNames[] = {
    {EwFn::Relu, "relu"},    {EwFn::Gelu, "gelu"},   {EwFn::Exp, "exp"},
    {EwFn::Neg, "neg"},      {EwFn::Scale, "scale"}, {EwFn::AddConst, "addc"},
    {EwFn::Recip, "recip"},  {EwFn::Sqrt, "sqrt"},   {EwFn::Step, "step"},
    {EwFn::DGelu, "dgelu"},  {EwFn::DRecip, "drecip"}, {EwFn::DSqrt, "dsqrt"},
};

}  // namespace

std::string ew_name(const ElementWise& e) {
  for (const auto& entry : kEwNames) {
    if (entry.fn == e.fn) {
      if (e.fn == EwFn::Scale || e.fn == EwFn::AddConst) {
        return fmt::format("{}({})", entry.name, e.param);
      }
      return entry.name;
    }
  }
  return "?";
}

std::optional<EwFn> ew_from_name(const std::string& name) {
  for (const auto& entry : kEwNames) {
    if (name == entry.name) return entry.fn;
  }
  return std::nullopt;
}

double ew_apply(const ElementWise& e, double x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  switch (e.fn) {
    case EwFn::Relu: return x > 0.0 ? x : 0.0;
    case EwFn::Gelu: return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    case EwFn::Exp: return std::exp(x);
    case EwFn::Neg: return -x;
    case EwFn::Scale: return e.param * x;
    case EwFn::AddConst: return x + e.param;
    case EwFn::Recip: return 1.0 / x;
    case EwFn::Sqrt: return std::sqrt(x);
    // relu'(0) is fixed to 0
    case EwFn::Step: return x > 0.0 ? 1.0 : 0.0;
    case EwFn::DGelu:
      return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) +
             x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    case EwFn::DRecip: return -1.0 / (x * x);
    case EwFn::DSqrt: return 0.5 / std::sqrt(x);
  }
  return x;
}

}  // namespace ncd
