#include "ncd/tensor.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>

#include "ncd/error.hpp"

namespace ncd {

int64_t element_count(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::vector<int64_t> strides_of(const std::vector<int64_t>& shape) {
  std::vector<int64_t> s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) s[i] = s[i + 1] * shape[i + 1];
  return s;
}

Tensor Tensor::zeros(std::vector<int64_t> shape) {
  Tensor t;
  t.data.assign(static_cast<size_t>(element_count(shape)), 0.0);
  t.shape = std::move(shape);
  return t;
}

Tensor Tensor::scalar(double v) { return Tensor{{}, {v}}; }

Tensor Tensor::from(std::vector<int64_t> shape, std::vector<double> data) {
  if (element_count(shape) != static_cast<int64_t>(data.size())) {
    fail(ErrorKind::EnvMismatch, fmt::format("tensor data has {} values, shape needs {}",
                                             data.size(), element_count(shape)));
  }
  return Tensor{std::move(shape), std::move(data)};
}

Tensor leading_slice(const Tensor& t, int64_t i) {
  Tensor out;
  out.shape.assign(t.shape.begin() + 1, t.shape.end());
  const int64_t n = element_count(out.shape);
  out.data.assign(t.data.begin() + i * n, t.data.begin() + (i + 1) * n);
  return out;
}

Tensor stack_leading(const std::vector<Tensor>& parts) {
  Tensor out;
  out.shape = parts.front().shape;
  out.shape.insert(out.shape.begin(), static_cast<int64_t>(parts.size()));
  out.data.reserve(parts.size() * parts.front().size());
  for (const auto& p : parts) out.data.insert(out.data.end(), p.data.begin(), p.data.end());
  return out;
}

Tensor permute(const Tensor& t, const std::vector<int>& perm) {
  std::vector<int64_t> shape;
  for (int p : perm) shape.push_back(t.shape[p]);
  Tensor out = Tensor::zeros(shape);
  const auto in_strides = strides_of(t.shape);
  std::vector<int64_t> src_stride;
  for (int p : perm) src_stride.push_back(in_strides[p]);
  std::vector<int64_t> idx(shape.size(), 0);
  for (size_t flat = 0; flat < out.data.size(); ++flat) {
    int64_t src = 0;
    for (size_t a = 0; a < idx.size(); ++a) src += idx[a] * src_stride[a];
    out.data[flat] = t.data[src];
    for (int a = static_cast<int>(idx.size()) - 1; a >= 0; --a) {
      if (++idx[a] < shape[a]) break;
      idx[a] = 0;
    }
  }
  return out;
}

std::string write_tensor(const Tensor& t) {
  std::string s = fmt::format("{}\n", t.rank());
  for (size_t i = 0; i < t.shape.size(); ++i) s += fmt::format("{}{}", i ? " " : "", t.shape[i]);
  s += "\n";
  const int64_t row = t.shape.empty() ? 1 : t.shape.back();
  for (size_t i = 0; i < t.data.size(); ++i) {
    s += fmt::format("{:.17g}", t.data[i]);
    s += (static_cast<int64_t>(i + 1) % row == 0) ? "\n" : " ";
  }
  return s;
}

Tensor read_tensor(std::string_view text) {
  std::istringstream in{std::string(text)};
  int64_t rank = -1;
  if (!(in >> rank) || rank < 0) fail(ErrorKind::EnvMismatch, "tensor file: bad rank");
  std::vector<int64_t> shape(static_cast<size_t>(rank));
  for (auto& e : shape) {
    if (!(in >> e) || e < 1) fail(ErrorKind::EnvMismatch, "tensor file: bad extent");
  }
  Tensor t = Tensor::zeros(shape);
  for (auto& v : t.data) {
    std::string tok;
    if (!(in >> tok)) {
      fail(ErrorKind::EnvMismatch,
           fmt::format("tensor file: expected {} values", t.data.size()));
    }
    try {
      size_t used = 0;
      v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      fail(ErrorKind::EnvMismatch, fmt::format("tensor file: bad value '{}'", tok));
    }
  }
  std::string extra;
  if (in >> extra) fail(ErrorKind::EnvMismatch, "tensor file: trailing values");
  return t;
}

Tensor load_tensor(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorKind::Io, fmt::format("cannot read '{}'", path));
  std::stringstream ss;
  ss << f.rdbuf();
  return read_tensor(ss.str());
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream f(path);
  if (!f) fail(ErrorKind::Io, fmt::format("cannot write '{}'", path));
  f << write_tensor(t);
}

Tensor random_tensor(std::vector<int64_t> shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor t = Tensor::zeros(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = std::abs(a.data[i] - b.data[i]);
    if (std::isnan(d)) return std::numeric_limits<double>::infinity();
    m = std::max(m, d);
  }
  return m;
}

}  // namespace ncd
