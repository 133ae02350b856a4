#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace ncd {

/// Dense row-major tensor of doubles. An empty extent list is a scalar.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  static Tensor zeros(std::vector<int64_t> shape);
  static Tensor scalar(double v);
  static Tensor from(std::vector<int64_t> shape, std::vector<double> data);

  size_t rank() const { return shape.size(); }
  size_t size() const { return data.size(); }

  bool operator==(const Tensor&) const = default;
};

int64_t element_count(const std::vector<int64_t>& shape);
/// Row-major strides.
std::vector<int64_t> strides_of(const std::vector<int64_t>& shape);

/// Slice along the leading axis.
Tensor leading_slice(const Tensor& t, int64_t i);
/// Stack equally shaped tensors along a new leading axis.
Tensor stack_leading(const std::vector<Tensor>& parts);

/// Output axis i is input axis perm[i].
Tensor permute(const Tensor& t, const std::vector<int>& perm);

/// Text format: rank, extents, then row-major values.
std::string write_tensor(const Tensor& t);
Tensor read_tensor(std::string_view text);
Tensor load_tensor(const std::string& path);
void save_tensor(const std::string& path, const Tensor& t);

/// Uniform values in [lo, hi).
Tensor random_tensor(std::vector<int64_t> shape, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0);

/// Max |a - b| over elements; infinity when shapes differ.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace ncd
