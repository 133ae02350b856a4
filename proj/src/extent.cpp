#include "ncd/extent.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "ncd/error.hpp"

namespace ncd {

int64_t conv_out_extent(int64_t x, int64_t kernel, int64_t stride, int64_t dilation,
                        int64_t pad) {
  if (x < 1 || kernel < 1 || stride < 1 || dilation < 1 || pad < 0) {
    fail(ErrorKind::ConvArithmeticError,
         fmt::format("invalid convolution parameters x={} k={} s={} d={} pad={}", x, kernel,
                     stride, dilation, pad));
  }
  const int64_t span = x + 2 * pad - dilation * (kernel - 1) - 1;
  if (span < 0) {
    fail(ErrorKind::ConvArithmeticError,
         fmt::format("convolution output extent < 1 (x={} k={} s={} d={} pad={})", x, kernel,
                     stride, dilation, pad));
  }
  return span / stride + 1;
}

std::string Atom::key() const {
  if (!conv) return symbol;
  return fmt::format("conv({};k{},s{},d{},p{})", conv->input.key(), conv->dim.kernel,
                     conv->dim.stride, conv->dim.dilation, conv->dim.pad);
}

std::optional<int64_t> Atom::eval(const Bindings& bindings) const {
  if (!conv) {
    auto it = bindings.find(symbol);
    if (it == bindings.end()) return std::nullopt;
    return it->second;
  }
  auto x = conv->input.eval(bindings);
  if (!x) return std::nullopt;
  return conv_out_extent(*x, conv->dim);
}

Extent Extent::constant(int64_t n) {
  Extent e;
  e.coeff_ = n;
  e.rebuild_key();
  return e;
}

Extent Extent::symbol(std::string name) {
  Extent e;
  e.factors_.push_back({Atom{std::move(name), nullptr}, 1});
  e.rebuild_key();
  return e;
}

Extent Extent::conv(const Extent& input, const ConvDim& dim) {
  if (input.is_constant()) return constant(conv_out_extent(input.coeff_, dim));
  Extent e;
  e.factors_.push_back({Atom{"", std::make_shared<ConvAtom>(ConvAtom{input, dim})}, 1});
  e.rebuild_key();
  return e;
}

Extent operator*(const Extent& a, const Extent& b) {
  Extent r;
  r.coeff_ = a.coeff_ * b.coeff_;
  r.factors_ = a.factors_;
  for (const auto& [atom, power] : b.factors_) {
    auto it = std::find_if(r.factors_.begin(), r.factors_.end(),
                           [&](const auto& f) { return f.first.key() == atom.key(); });
    if (it == r.factors_.end()) {
      r.factors_.push_back({atom, power});
    } else {
      it->second += power;
    }
  }
  std::sort(r.factors_.begin(), r.factors_.end(),
            [](const auto& x, const auto& y) { return x.first.key() < y.first.key(); });
  r.rebuild_key();
  return r;
}

std::optional<int64_t> Extent::eval(const Bindings& bindings) const {
  int64_t v = coeff_;
  for (const auto& [atom, power] : factors_) {
    auto a = atom.eval(bindings);
    if (!a) return std::nullopt;
    for (int i = 0; i < power; ++i) v *= *a;
  }
  return v;
}

int64_t Extent::value(const Bindings& bindings) const {
  if (auto v = eval(bindings)) return *v;
  for (const auto& [atom, power] : factors_) {
    if (!atom.eval(bindings)) {
      const std::string name = atom.conv ? atom.conv->input.key() : atom.symbol;
      fail(ErrorKind::UnboundAxis, fmt::format("unbound axis '{}'", name));
    }
  }
  fail(ErrorKind::UnboundAxis, fmt::format("cannot evaluate extent '{}'", key_));
}

std::optional<std::string> Extent::lone_symbol() const {
  if (coeff_ != 1 || factors_.size() != 1) return std::nullopt;
  const auto& [atom, power] = factors_.front();
  if (atom.conv || power != 1) return std::nullopt;
  return atom.symbol;
}

void Extent::rebuild_key() {
  std::string k;
  if (coeff_ != 1 || factors_.empty()) k = std::to_string(coeff_);
  for (const auto& [atom, power] : factors_) {
    if (!k.empty()) k += '*';
    k += atom.key();
    if (power != 1) k += fmt::format("^{}", power);
  }
  key_ = std::move(k);
}

bool unify(const Extent& expected, const Extent& found, Bindings& bindings) {
  auto ve = expected.eval(bindings);
  auto vf = found.eval(bindings);
  if (ve && vf) return *ve == *vf;
  if (ve && !vf) {
    if (auto s = found.lone_symbol()) {
      bindings[*s] = *ve;
      return true;
    }
  }
  if (vf && !ve) {
    if (auto s = expected.lone_symbol()) {
      bindings[*s] = *vf;
      return true;
    }
  }
  return expected.key() == found.key();
}

}  // namespace ncd
