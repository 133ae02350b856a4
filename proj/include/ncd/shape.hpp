#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ncd/extent.hpp"

namespace ncd {

struct Axis {
  Extent len;
  bool width = false;  // drawn with an overline; metadata only
  int tandem = 0;      // nonzero: member of a bold tandem group with this id

  static Axis of(int64_t n) { return Axis{Extent::constant(n)}; }
  static Axis named(std::string name, bool width = false) {
    return Axis{Extent::symbol(std::move(name)), width};
  }

  bool operator==(const Axis&) const = default;
};

struct TensorShape {
  std::vector<Axis> axes;  // empty: scalar

  size_t rank() const { return axes.size(); }
  Extent elements() const;
  int64_t element_count(const Bindings& bindings) const;
  std::vector<int64_t> extents(const Bindings& bindings) const;

  bool operator==(const TensorShape&) const = default;
};

struct DataShape {
  std::vector<TensorShape> segments;

  size_t size() const { return segments.size(); }
  const TensorShape& operator[](size_t i) const { return segments[i]; }

  bool operator==(const DataShape&) const = default;
};

TensorShape shape_of(std::vector<Axis> axes);
DataShape data_of(std::vector<TensorShape> segments);

/// "[~x, k]" using extent keys.
std::string to_string(const Axis& axis);
std::string to_string(const TensorShape& shape);
/// Segments joined with " | ".
std::string to_string(const DataShape& shape);
/// Like to_string but annotates symbols with their bound values: "[x=28, 3]".
std::string to_string(const TensorShape& shape, const Bindings& bindings);
std::string to_string(const DataShape& shape, const Bindings& bindings);

/// Type-level equality: axis lengths unify; width/tandem metadata ignored.
bool unify(const TensorShape& expected, const TensorShape& found, Bindings& bindings);

/// Throws ShapeMismatch describing the first differing position.
void expect_shape(const TensorShape& expected, const TensorShape& found, Bindings& bindings,
                  const std::string& where);
void expect_data(const DataShape& expected, const DataShape& found, Bindings& bindings,
                 const std::string& where);

}  // namespace ncd
