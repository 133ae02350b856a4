#include "ncd/shape.hpp"

#include <fmt/format.h>

#include "ncd/error.hpp"

namespace ncd {

Extent TensorShape::elements() const {
  Extent e = Extent::constant(1);
  for (const auto& a : axes) e = e * a.len;
  return e;
}

int64_t TensorShape::element_count(const Bindings& bindings) const {
  int64_t n = 1;
  for (const auto& a : axes) n *= a.len.value(bindings);
  return n;
}

std::vector<int64_t> TensorShape::extents(const Bindings& bindings) const {
  std::vector<int64_t> out;
  out.reserve(axes.size());
  for (const auto& a : axes) out.push_back(a.len.value(bindings));
  return out;
}

TensorShape shape_of(std::vector<Axis> axes) { return TensorShape{std::move(axes)}; }
DataShape data_of(std::vector<TensorShape> segments) { return DataShape{std::move(segments)}; }

std::string to_string(const Axis& axis) {
  return (axis.width ? "~" : "") + axis.len.key();
}

std::string to_string(const TensorShape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.axes.size(); ++i) {
    if (i) s += ", ";
    s += to_string(shape.axes[i]);
  }
  return s + "]";
}

std::string to_string(const DataShape& shape) {
  std::string s;
  for (size_t i = 0; i < shape.segments.size(); ++i) {
    if (i) s += " | ";
    s += to_string(shape.segments[i]);
  }
  return s;
}

std::string to_string(const TensorShape& shape, const Bindings& bindings) {
  std::string s = "[";
  for (size_t i = 0; i < shape.axes.size(); ++i) {
    if (i) s += ", ";
    const auto& a = shape.axes[i];
    s += to_string(a);
    if (!a.len.is_constant()) {
      if (auto v = a.len.eval(bindings)) s += fmt::format("={}", *v);
    }
  }
  return s + "]";
}

std::string to_string(const DataShape& shape, const Bindings& bindings) {
  std::string s;
  for (size_t i = 0; i < shape.segments.size(); ++i) {
    if (i) s += " | ";
    s += to_string(shape.segments[i], bindings);
  }
  return s;
}

bool unify(const TensorShape& expected, const TensorShape& found, Bindings& bindings) {
  if (expected.rank() != found.rank()) return false;
  for (size_t i = 0; i < expected.rank(); ++i) {
    if (!unify(expected.axes[i].len, found.axes[i].len, bindings)) return false;
  }
  return true;
}

void expect_shape(const TensorShape& expected, const TensorShape& found, Bindings& bindings,
                  const std::string& where) {
  if (expected.rank() != found.rank()) {
    fail(ErrorKind::ShapeMismatch,
         fmt::format("{}: expected {} (rank {}), found {} (rank {})", where,
                     to_string(expected, bindings), expected.rank(), to_string(found, bindings),
                     found.rank()));
  }
  for (size_t i = 0; i < expected.rank(); ++i) {
    if (!unify(expected.axes[i].len, found.axes[i].len, bindings)) {
      fail(ErrorKind::ShapeMismatch,
           fmt::format("{}: axis {}: expected {}, found {}", where, i,
                       to_string(expected, bindings), to_string(found, bindings)));
    }
  }
}

void expect_data(const DataShape& expected, const DataShape& found, Bindings& bindings,
                 const std::string& where) {
  if (expected.size() != found.size()) {
    fail(ErrorKind::ShapeMismatch,
         fmt::format("{}: expected {} segment(s) {}, found {} segment(s) {}", where,
                     expected.size(), to_string(expected, bindings), found.size(),
                     to_string(found, bindings)));
  }
  for (size_t s = 0; s < expected.size(); ++s) {
    expect_shape(expected[s], found[s], bindings, fmt::format("{}, segment {}", where, s));
  }
}

}  // namespace ncd
