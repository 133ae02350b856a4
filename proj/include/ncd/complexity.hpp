#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ncd/diagram.hpp"

namespace ncd {

/// Polynomial over axis atoms with nonnegative integer coefficients.
class CostPoly {
 public:
  /// Atom keys with exponents, sorted by key.
  using Monomial = std::vector<std::pair<std::string, int>>;

  CostPoly() = default;
  static CostPoly constant(int64_t n);
  static CostPoly of(const Extent& e);
  /// Element count of a shape; 1 for a scalar.
  static CostPoly elements(const TensorShape& s);

  CostPoly& operator+=(const CostPoly& o);
  friend CostPoly operator+(CostPoly a, const CostPoly& b) { return a += b; }
  friend CostPoly operator*(const CostPoly& a, const CostPoly& b);

  bool is_zero() const { return terms_.empty(); }
  /// Largest exponent of `symbol` over all monomials.
  int degree(const std::string& symbol) const;
  int total_degree() const;
  /// Monomials of the highest total degree.
  CostPoly leading() const;

  std::optional<int64_t> eval(const Bindings& bindings) const;
  /// Throws UnboundAxis.
  int64_t value(const Bindings& bindings) const;

  /// Canonical text: monomials by descending degree, then by key; "0" if empty.
  std::string str() const;
  const std::map<Monomial, int64_t>& terms() const { return terms_; }

  bool operator==(const CostPoly& o) const { return terms_ == o.terms_; }

 private:
  std::map<Monomial, int64_t> terms_;
  std::map<std::string, Atom> atoms_;
};

/// Work of one primitive on inputs `in`, broadcasts excluded.
CostPoly primitive_cost(const Primitive& p, const std::vector<TensorShape>& in,
                        Bindings& bindings);

CostPoly time_cost(const Diagram& d, const Bindings& bindings);

struct SpaceCost {
  std::vector<CostPoly> boundaries;  // sections.size() + 1
  CostPoly peak;
  int peak_boundary = 0;
};

/// Peak is the boundary with the largest value at `bindings`; unbound
/// boundaries are ranked by total degree.
SpaceCost space_cost(const Diagram& d, const Bindings& bindings);

struct CostReport {
  std::vector<CostPoly> section_time;
  SpaceCost space;
  CostPoly total_time;
};

CostReport cost_report(const Diagram& d, const Bindings& bindings);
/// { "sections": [{"time": ..}], "boundaries": [..], "total_time", "peak_space",
///   "values": {..} when bound, "note": .. }.
std::string report_json(const Diagram& d, const CostReport& r, const Bindings& bindings);

struct Comparison {
  CostReport first;
  CostReport second;
  int64_t time_first = 0, time_second = 0;
  int64_t space_first = 0, space_second = 0;
  double time_ratio = 1.0;   // first / second
  double space_ratio = 1.0;
};

/// Both diagrams must share domain and codomain; throws ShapeMismatch.
Comparison compare(const Diagram& d1, const Diagram& d2, const Bindings& bindings);
std::string comparison_json(const Diagram& d1, const Diagram& d2, const Comparison& c,
                            const Bindings& bindings);

}  // namespace ncd
