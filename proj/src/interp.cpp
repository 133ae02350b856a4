#include "ncd/interp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "ncd/error.hpp"

namespace ncd {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

struct Ctx {
  const ParamStore& params;
  const Bindings& bindings;
};

std::vector<Tensor> eval_diagram(const Diagram& d, std::vector<Tensor> state, const Ctx& ctx);

// Steps a multi-index (odometer) in row-major order.
bool next_index(std::vector<int64_t>& idx, const std::vector<int64_t>& shape) {
  for (int a = static_cast<int>(idx.size()) - 1; a >= 0; --a) {
    if (++idx[a] < shape[a]) return true;
    idx[a] = 0;
  }
  return false;
}

std::vector<int64_t> without(const std::vector<int64_t>& v, std::vector<int> drop) {
  std::vector<int64_t> out;
  for (int i = 0; i < static_cast<int>(v.size()); ++i) {
    if (std::find(drop.begin(), drop.end(), i) == drop.end()) out.push_back(v[i]);
  }
  return out;
}

Tensor diag(const Tensor& x, int a, int b) {
  const int keep = std::min(a, b), gone = std::max(a, b);
  Tensor out = Tensor::zeros(without(x.shape, {gone}));
  const auto st = strides_of(x.shape);
  std::vector<int64_t> idx(out.rank(), 0);
  for (size_t f = 0; f < out.size(); ++f) {
    int64_t src = 0;
    for (int i = 0, o = 0; i < static_cast<int>(x.rank()); ++i) {
      if (i == gone) {
        src += idx[keep] * st[i];
      } else {
        src += idx[o++] * st[i];
      }
    }
    out.data[f] = x.data[src];
    next_index(idx, out.shape);
  }
  return out;
}

Tensor cup(const Tensor& x, int a, int b) {
  Tensor out = Tensor::zeros(without(x.shape, {a, b}));
  const auto st = strides_of(x.shape);
  const int64_t n = x.shape[a];
  const int64_t step = st[a] + st[b];
  std::vector<int64_t> idx(out.rank(), 0);
  for (size_t f = 0; f < out.size(); ++f) {
    int64_t base = 0;
    for (int i = 0, o = 0; i < static_cast<int>(x.rank()); ++i) {
      if (i == a || i == b) continue;
      base += idx[o++] * st[i];
    }
    double acc = 0.0;
    for (int64_t t = 0; t < n; ++t) acc += x.data[base + t * step];
    out.data[f] = acc;
    next_index(idx, out.shape);
  }
  return out;
}

Tensor sum_axis(const Tensor& x, int a) {
  Tensor out = Tensor::zeros(without(x.shape, {a}));
  const auto st = strides_of(x.shape);
  std::vector<int64_t> idx(out.rank(), 0);
  for (size_t f = 0; f < out.size(); ++f) {
    int64_t base = 0;
    for (int i = 0, o = 0; i < static_cast<int>(x.rank()); ++i) {
      if (i == a) continue;
      base += idx[o++] * st[i];
    }
    double acc = 0.0;
    for (int64_t t = 0; t < x.shape[a]; ++t) acc += x.data[base + t * st[a]];
    out.data[f] = acc;
    next_index(idx, out.shape);
  }
  return out;
}

Tensor index_ket(const Tensor& x, int a, int64_t k) {
  Tensor out = Tensor::zeros(without(x.shape, {a}));
  const auto st = strides_of(x.shape);
  std::vector<int64_t> idx(out.rank(), 0);
  for (size_t f = 0; f < out.size(); ++f) {
    int64_t src = k * st[a];
    for (int i = 0, o = 0; i < static_cast<int>(x.rank()); ++i) {
      if (i == a) continue;
      src += idx[o++] * st[i];
    }
    out.data[f] = x.data[src];
    next_index(idx, out.shape);
  }
  return out;
}

Tensor unit(const Tensor& x, int64_t n) {
  auto shape = x.shape;
  shape.push_back(n);
  shape.push_back(n);
  Tensor out = Tensor::zeros(shape);
  for (size_t f = 0; f < x.size(); ++f) {
    for (int64_t i = 0; i < n; ++i) out.data[f * n * n + i * n + i] = x.data[f];
  }
  return out;
}

Tensor outer(const Tensor& x, const Tensor& y) {
  auto shape = x.shape;
  shape.insert(shape.end(), y.shape.begin(), y.shape.end());
  Tensor out = Tensor::zeros(shape);
  for (size_t i = 0; i < x.size(); ++i) {
    for (size_t j = 0; j < y.size(); ++j) out.data[i * y.size() + j] = x.data[i] * y.data[j];
  }
  return out;
}

Tensor softmax(const Tensor& x) {
  Tensor out = x;
  double m = -std::numeric_limits<double>::infinity();
  for (double v : x.data) m = std::max(m, v);
  double z = 0.0;
  for (auto& v : out.data) {
    v = std::exp(v - m);
    z += v;
  }
  for (auto& v : out.data) v /= z;
  return out;
}

Tensor linear(const LinearParam& l, const Tensor& x, const Ctx& ctx) {
  auto w = ctx.params.weights.find(l.name);
  if (w == ctx.params.weights.end()) {
    fail(ErrorKind::EnvMismatch, fmt::format("no weights for parameter '{}'", l.name));
  }
  const auto in_shape = l.in.extents(ctx.bindings);
  const auto out_shape = l.out.extents(ctx.bindings);
  auto w_shape = in_shape;
  w_shape.insert(w_shape.end(), out_shape.begin(), out_shape.end());
  if (w->second.shape != w_shape) {
    fail(ErrorKind::EnvMismatch,
         fmt::format("weights for '{}' have shape [{}], expected [{}]", l.name,
                     fmt::join(w->second.shape, ", "), fmt::join(w_shape, ", ")));
  }
  const int64_t ni = element_count(in_shape), no = element_count(out_shape);
  Tensor y = Tensor::zeros(out_shape);
  for (int64_t o = 0; o < no; ++o) {
    double acc = 0.0;
    for (int64_t i = 0; i < ni; ++i) acc += x.data[i] * w->second.data[i * no + o];
    y.data[o] = acc;
  }
  if (l.bias) {
    auto b = ctx.params.biases.find(l.name);
    if (b == ctx.params.biases.end()) {
      fail(ErrorKind::EnvMismatch, fmt::format("no bias for parameter '{}'", l.name));
    }
    if (b->second.shape != out_shape) {
      fail(ErrorKind::EnvMismatch, fmt::format("bias for '{}' has the wrong shape", l.name));
    }
    for (int64_t o = 0; o < no; ++o) y.data[o] += b->second.data[o];
  }
  return y;
}

// Calls f(x_flat, out_flat) for every nonzero of the conv tensor.
template <class F>
void for_each_conv_entry(const ConvTensor& c, const std::vector<int64_t>& x_shape, F&& f) {
  const int r = c.rank();
  std::vector<int64_t> y_shape, k_shape;
  for (int i = 0; i < r; ++i) {
    y_shape.push_back(conv_out_extent(x_shape[i], c.dims[i]));
    k_shape.push_back(c.dims[i].kernel);
  }
  auto out_shape = y_shape;
  out_shape.insert(out_shape.end(), k_shape.begin(), k_shape.end());
  const auto xs = strides_of(x_shape);
  std::vector<int64_t> idx(out_shape.size(), 0);
  const int64_t total = element_count(out_shape);
  for (int64_t flat = 0; flat < total; ++flat) {
    int64_t src = 0;
    bool inside = true;
    for (int i = 0; i < r; ++i) {
      const auto& dm = c.dims[i];
      const int64_t pos = dm.stride * idx[i] + dm.dilation * idx[r + i] - dm.pad;
      if (pos < 0 || pos >= x_shape[i]) {
        inside = false;
        break;
      }
      src += pos * xs[i];
    }
    if (inside) f(src, flat);
    next_index(idx, out_shape);
  }
}

Tensor conv_tensor(const ConvTensor& c, const Tensor& x) {
  std::vector<int64_t> out_shape;
  for (int i = 0; i < c.rank(); ++i) out_shape.push_back(conv_out_extent(x.shape[i], c.dims[i]));
  for (int i = 0; i < c.rank(); ++i) out_shape.push_back(c.dims[i].kernel);
  Tensor out = Tensor::zeros(out_shape);
  for_each_conv_entry(c, x.shape, [&](int64_t src, int64_t dst) { out.data[dst] = x.data[src]; });
  return out;
}

Tensor pool(PoolKind kind, const Tensor& x) {
  if (kind == PoolKind::Mean) {
    double acc = 0.0;
    for (double v : x.data) acc += v;
    return Tensor::scalar(acc / static_cast<double>(x.size()));
  }
  size_t best = 0;
  for (size_t i = 1; i < x.size(); ++i) {
    if (x.data[i] > x.data[best]) best = i;
  }
  if (kind == PoolKind::Max) return Tensor::scalar(x.data[best]);
  Tensor mask = Tensor::zeros(x.shape);
  mask.data[best] = 1.0;
  return mask;
}

struct Entry {
  int64_t in;
  int64_t out;
  double value;
};

std::vector<Tensor> eval_primitive(const Primitive& p, std::vector<Tensor> in, const Ctx& ctx);

// Nonzeros of the associated tensor of a single-segment linear primitive.
std::vector<Entry> associated_entries(const Primitive& base, const std::vector<int64_t>& in_shape,
                                      const Ctx& ctx) {
  std::vector<Entry> out;
  if (auto l = base.as<LinearParam>()) {
    const auto it = ctx.params.weights.find(l->name);
    if (it == ctx.params.weights.end()) {
      fail(ErrorKind::EnvMismatch, fmt::format("no weights for parameter '{}'", l->name));
    }
    const int64_t ni = element_count(in_shape);
    const int64_t no = static_cast<int64_t>(it->second.size()) / std::max<int64_t>(ni, 1);
    for (int64_t i = 0; i < ni; ++i) {
      for (int64_t o = 0; o < no; ++o) out.push_back({i, o, it->second.data[i * no + o]});
    }
    return out;
  }
  if (auto c = base.as<ConvTensor>()) {
    for_each_conv_entry(*c, in_shape,
                        [&](int64_t src, int64_t dst) { out.push_back({src, dst, 1.0}); });
    return out;
  }
  const int64_t ni = element_count(in_shape);
  for (int64_t i = 0; i < ni; ++i) {
    Tensor e = Tensor::zeros(in_shape);
    e.data[i] = 1.0;
    auto y = eval_primitive(base, {e}, ctx);
    for (size_t o = 0; o < y[0].size(); ++o) {
      if (y[0].data[o] != 0.0) out.push_back({i, static_cast<int64_t>(o), y[0].data[o]});
    }
  }
  return out;
}

Tensor assoc_transpose(const AssocTranspose& t, const Tensor& x, const Ctx& ctx) {
  const auto a_shape = t.base_in.extents(ctx.bindings);
  Bindings b = ctx.bindings;
  const auto b_shape = output_shapes(*t.base, {t.base_in}, b)[0].extents(b);
  std::vector<int64_t> assoc = a_shape;
  assoc.insert(assoc.end(), b_shape.begin(), b_shape.end());
  std::vector<int64_t> out_shape;
  for (int i : t.out_axes) out_shape.push_back(assoc[i]);
  std::vector<int64_t> in_shape;
  for (int i : t.in_axes) in_shape.push_back(assoc[i]);

  const auto as = strides_of(a_shape), bs = strides_of(b_shape);
  const auto is = strides_of(in_shape), os = strides_of(out_shape);
  // Stride of each associated axis inside the transposed input / output.
  std::vector<int64_t> to_in(assoc.size(), 0), to_out(assoc.size(), 0);
  for (size_t k = 0; k < t.in_axes.size(); ++k) to_in[t.in_axes[k]] = is[k];
  for (size_t k = 0; k < t.out_axes.size(); ++k) to_out[t.out_axes[k]] = os[k];

  Tensor y = Tensor::zeros(out_shape);
  const size_t na = a_shape.size();
  std::vector<Entry> entries = associated_entries(*t.base, a_shape, ctx);
  for (const auto& e : entries) {
    int64_t src = 0, dst = 0;
    int64_t rest = e.in;
    for (size_t k = 0; k < na; ++k) {
      const int64_t v = rest / as[k];
      rest %= as[k];
      src += v * to_in[k];
      dst += v * to_out[k];
    }
    rest = e.out;
    for (size_t k = 0; k < b_shape.size(); ++k) {
      const int64_t v = rest / bs[k];
      rest %= bs[k];
      src += v * to_in[na + k];
      dst += v * to_out[na + k];
    }
    y.data[dst] += e.value * x.data[src];
  }
  return y;
}

std::vector<Tensor> eval_primitive(const Primitive& p, std::vector<Tensor> in, const Ctx& ctx) {
  using V = std::vector<Tensor>;
  return std::visit(
      overloaded{
          [&](const Identity&) { return in; },
          [&](const Copy&) { return V{in[0], in[0]}; },
          [&](const Delete&) { return V{}; },
          [&](const SegmentSwap&) {
            std::swap(in.front(), in.back());
            return in;
          },
          [&](const AxisTranspose& t) { return V{permute(in[0], t.perm)}; },
          [&](const Diag& d) { return V{diag(in[0], d.first, d.second)}; },
          [&](const View& v) {
            Tensor t = std::move(in[0]);
            t.shape = v.out.extents(ctx.bindings);
            return V{std::move(t)};
          },
          [&](const IndexKet& k) { return V{index_ket(in[0], k.axis, k.index)}; },
          [&](const OuterProduct&) { return V{outer(in[0], in[1])}; },
          [&](const Cup& c) { return V{cup(in[0], c.first, c.second)}; },
          [&](const Unit& u) { return V{unit(in[0], u.axis.len.value(ctx.bindings))}; },
          [&](const ElementWise& e) {
            for (auto& v : in[0].data) v = ew_apply(e, v);
            return V{std::move(in[0])};
          },
          [&](const SoftMax&) { return V{softmax(in[0])}; },
          [&](const Add&) {
            for (size_t i = 0; i < in[0].size(); ++i) in[0].data[i] += in[1].data[i];
            return V{std::move(in[0])};
          },
          [&](const SumAxis& s) { return V{sum_axis(in[0], s.axis)}; },
          [&](const LinearParam& l) { return V{linear(l, in[0], ctx)}; },
          [&](const ConvTensor& c) { return V{conv_tensor(c, in[0])}; },
          [&](const Pool& pl) { return V{pool(pl.kind, in[0])}; },
          [&](const ConstScalar& c) { return V{Tensor::scalar(c.value)}; },
          [&](const AssocTranspose& t) { return V{assoc_transpose(t, in[0], ctx)}; },
      },
      p.op);
}

std::vector<Tensor> eval_cell(const Cell& c, const std::vector<Tensor>& in, size_t level,
                              const Ctx& ctx) {
  if (level == c.broadcasts.size()) {
    if (auto p = c.primitive()) return eval_primitive(*p, in, ctx);
    return eval_diagram(*c.nested(), in, ctx);
  }
  const auto& scope = c.broadcasts[level];
  const int64_t n = scope.axis.len.value(ctx.bindings);
  std::vector<bool> hit(in.size(), !scope.inner);
  for (int t : scope.targets) hit[t] = true;

  std::vector<std::vector<Tensor>> per_output;
  for (int64_t i = 0; i < n; ++i) {
    std::vector<Tensor> args;
    args.reserve(in.size());
    for (size_t s = 0; s < in.size(); ++s) {
      args.push_back(hit[s] ? leading_slice(in[s], i) : in[s]);
    }
    auto res = eval_cell(c, args, level + 1, ctx);
    if (per_output.empty()) per_output.resize(res.size());
    for (size_t o = 0; o < res.size(); ++o) per_output[o].push_back(std::move(res[o]));
  }
  std::vector<Tensor> out;
  for (auto& parts : per_output) out.push_back(stack_leading(parts));
  return out;
}

std::vector<Tensor> eval_diagram(const Diagram& d, std::vector<Tensor> state, const Ctx& ctx) {
  for (const auto& s : d.sections) {
    std::vector<Tensor> next;
    size_t pos = 0;
    for (const auto& c : s.cells) {
      const size_t n = static_cast<size_t>(input_arity(c));
      if (is_identity(c)) {
        next.push_back(std::move(state[pos]));
      } else {
        std::vector<Tensor> args(std::make_move_iterator(state.begin() + pos),
                                 std::make_move_iterator(state.begin() + pos + n));
        auto res = eval_cell(c, args, 0, ctx);
        next.insert(next.end(), std::make_move_iterator(res.begin()),
                    std::make_move_iterator(res.end()));
      }
      pos += n;
    }
    state = std::move(next);
  }
  return state;
}

void collect(const Diagram& d, std::map<std::string, LinearParam>& out) {
  auto visit_prim = [&](const Primitive& p, auto&& self) -> void {
    if (auto l = p.as<LinearParam>()) out.emplace(l->name, *l);
    if (auto t = p.as<AssocTranspose>(); t && t->base) self(*t->base, self);
  };
  for (const auto& s : d.sections) {
    for (const auto& c : s.cells) {
      if (auto p = c.primitive()) {
        visit_prim(*p, visit_prim);
      } else {
        collect(*c.nested(), out);
      }
    }
  }
}

}  // namespace

Bindings resolve_bindings(const Diagram& d, const Bindings& bindings) {
  Bindings b = bindings;
  infer_shapes(d, b);
  return b;
}

std::vector<std::vector<int64_t>> concrete_shapes(const DataShape& shape,
                                                  const Bindings& bindings) {
  std::vector<std::vector<int64_t>> out;
  for (const auto& seg : shape.segments) out.push_back(seg.extents(bindings));
  return out;
}

std::vector<Tensor> eval(const Diagram& d, const std::vector<Tensor>& inputs,
                         const ParamStore& params, const Bindings& bindings) {
  const Bindings b = resolve_bindings(d, bindings);
  const auto expected = concrete_shapes(d.domain, b);
  if (inputs.size() != expected.size()) {
    fail(ErrorKind::EnvMismatch, fmt::format("{} expects {} input(s), got {}", d.name,
                                             expected.size(), inputs.size()));
  }
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].shape != expected[i]) {
      fail(ErrorKind::EnvMismatch,
           fmt::format("input {} has shape [{}], expected [{}]", i,
                       fmt::join(inputs[i].shape, ", "), fmt::join(expected[i], ", ")));
    }
  }
  for (const auto& [name, l] : collect_params(d)) {
    if (!params.weights.count(name)) {
      fail(ErrorKind::EnvMismatch, fmt::format("no weights for parameter '{}'", name));
    }
  }
  Ctx ctx{params, b};
  return eval_diagram(d, inputs, ctx);
}

std::vector<Tensor> eval(const Diagram& d, const Env& env) {
  return eval(d, env.inputs, env.params, env.bindings);
}

Tensor materialize_linear(const Diagram& d, const ParamStore& params, const Bindings& bindings) {
  for (size_t k = 0; k < d.sections.size(); ++k) {
    for (size_t c = 0; c < d.sections[k].cells.size(); ++c) {
      if (!is_linear(d.sections[k].cells[c])) {
        fail(ErrorKind::NotLinear, fmt::format("cell {}.{} is not linear", k, c));
      }
    }
  }
  const Bindings b = resolve_bindings(d, bindings);
  const auto in_shapes = concrete_shapes(d.domain, b);
  const auto out_shapes = concrete_shapes(d.codomain, b);
  int64_t n_in = 0, n_out = 0;
  for (const auto& s : in_shapes) n_in += element_count(s);
  for (const auto& s : out_shapes) n_out += element_count(s);
  if (n_in > kMaterializeLimit || n_out > kMaterializeLimit) {
    fail(ErrorKind::TooLarge, fmt::format("linear map {} -> {} elements exceeds the limit of {}",
                                          n_in, n_out, kMaterializeLimit));
  }
  Tensor m = Tensor::zeros({n_out, n_in});
  for (int64_t j = 0; j < n_in; ++j) {
    std::vector<Tensor> inputs;
    int64_t offset = 0;
    for (const auto& s : in_shapes) {
      Tensor t = Tensor::zeros(s);
      const int64_t n = element_count(s);
      if (j >= offset && j < offset + n) t.data[j - offset] = 1.0;
      offset += n;
      inputs.push_back(std::move(t));
    }
    auto out = eval(d, inputs, params, b);
    int64_t row = 0;
    for (const auto& t : out) {
      for (double v : t.data) m.data[row++ * n_in + j] = v;
    }
  }
  return m;
}

std::map<std::string, LinearParam> collect_params(const Diagram& d) {
  std::map<std::string, LinearParam> out;
  collect(d, out);
  return out;
}

ParamStore random_params(const Diagram& d, const Bindings& bindings, std::mt19937_64& rng) {
  const Bindings b = resolve_bindings(d, bindings);
  ParamStore ps;
  for (const auto& [name, l] : collect_params(d)) {
    auto in = l.in.extents(b);
    auto out = l.out.extents(b);
    auto shape = in;
    shape.insert(shape.end(), out.begin(), out.end());
    // Keep activations O(1) regardless of fan-in.
    const double scale = 1.0 / std::sqrt(static_cast<double>(element_count(in)));
    ps.weights[name] = random_tensor(shape, rng, -scale, scale);
    if (l.bias) ps.biases[name] = random_tensor(out, rng, -0.5, 0.5);
  }
  return ps;
}

std::vector<Tensor> random_inputs(const DataShape& domain, const Bindings& bindings,
                                  std::mt19937_64& rng, double lo, double hi) {
  std::vector<Tensor> out;
  for (const auto& s : concrete_shapes(domain, bindings)) {
    out.push_back(random_tensor(s, rng, lo, hi));
  }
  return out;
}

}  // namespace ncd
