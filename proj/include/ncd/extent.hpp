#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ncd {

/// Symbol name -> concrete length. One per compilation environment.
using Bindings = std::map<std::string, int64_t>;

/// Per-dimension convolution parameters.
struct ConvDim {
  int64_t kernel = 1;
  int64_t stride = 1;
  int64_t dilation = 1;
  int64_t pad = 0;

  bool operator==(const ConvDim&) const = default;
};

/// floor((x + 2*pad - d*(k-1) - 1) / s) + 1. Throws ConvArithmeticError when
/// the parameters are out of range or the result is below 1.
int64_t conv_out_extent(int64_t x, int64_t kernel, int64_t stride, int64_t dilation,
                        int64_t pad);
inline int64_t conv_out_extent(int64_t x, const ConvDim& dim) {
  return conv_out_extent(x, dim.kernel, dim.stride, dim.dilation, dim.pad);
}

class Extent;
struct ConvAtom;

/// An irreducible factor of an extent: a named symbol, or the output length
/// of a convolution over a symbolic input.
struct Atom {
  std::string symbol;
  std::shared_ptr<const ConvAtom> conv;

  std::string key() const;
  std::optional<int64_t> eval(const Bindings& bindings) const;
};

/// Axis length: an integer coefficient times a product of atoms. Covers
/// literal lengths, symbols, products and the convolution formula.
class Extent {
 public:
  Extent() = default;

  static Extent constant(int64_t n);
  static Extent symbol(std::string name);
  /// Output length of a convolution; folds to a constant when `input` is.
  static Extent conv(const Extent& input, const ConvDim& dim);

  friend Extent operator*(const Extent& a, const Extent& b);

  std::optional<int64_t> eval(const Bindings& bindings) const;
  /// Evaluates or throws UnboundAxis naming the first free symbol.
  int64_t value(const Bindings& bindings) const;

  bool is_constant() const { return factors_.empty(); }
  /// A single symbol with unit coefficient.
  std::optional<std::string> lone_symbol() const;

  int64_t coefficient() const { return coeff_; }
  const std::vector<std::pair<Atom, int>>& factors() const { return factors_; }

  /// Canonical text: "3", "a", "2*a*b^2", "conv(x;k3,s1,d1,p0)".
  const std::string& key() const { return key_; }

  bool operator==(const Extent& o) const { return key_ == o.key_; }

 private:
  void rebuild_key();

  int64_t coeff_ = 1;
  std::vector<std::pair<Atom, int>> factors_;  // sorted by atom key
  std::string key_ = "1";
};

struct ConvAtom {
  Extent input;
  ConvDim dim;
};

/// Unifies two extents under `bindings`: equal values, structural equality,
/// or binding a free lone symbol to the other side's value.
bool unify(const Extent& expected, const Extent& found, Bindings& bindings);

}  // namespace ncd
