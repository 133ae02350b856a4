#include "ncd/oracles.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "ncd/error.hpp"

namespace ncd {

Tensor oracle_conv(const Tensor& v, const Tensor& w, const std::vector<int64_t>& stride,
                   const std::vector<int64_t>& dilation, const std::vector<int64_t>& pad) {
  const size_t r = v.rank();
  if (w.rank() != r || stride.size() != r || dilation.size() != r || pad.size() != r) {
    fail(ErrorKind::ConvArithmeticError, "oracle_conv: rank mismatch");
  }
  std::vector<int64_t> out_shape;
  for (size_t i = 0; i < r; ++i) {
    out_shape.push_back(conv_out_extent(v.shape[i], w.shape[i], stride[i], dilation[i], pad[i]));
  }
  Tensor out = Tensor::zeros(out_shape);
  const auto vs = strides_of(v.shape);
  std::vector<int64_t> i(r, 0);
  for (size_t f = 0; f < out.size(); ++f) {
    double acc = 0.0;
    std::vector<int64_t> j(r, 0);
    for (size_t g = 0; g < w.size(); ++g) {
      int64_t src = 0;
      bool inside = true;
      for (size_t a = 0; a < r; ++a) {
        const int64_t pos = stride[a] * i[a] + dilation[a] * j[a] - pad[a];
        if (pos < 0 || pos >= v.shape[a]) inside = false;
        src += pos * vs[a];
      }
      if (inside) acc += v.data[src] * w.data[g];
      for (int a = static_cast<int>(r) - 1; a >= 0; --a) {
        if (++j[a] < w.shape[a]) break;
        j[a] = 0;
      }
    }
    out.data[f] = acc;
    for (int a = static_cast<int>(r) - 1; a >= 0; --a) {
      if (++i[a] < out_shape[a]) break;
      i[a] = 0;
    }
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const int64_t n = a.shape[0], m = a.shape[1], p = b.shape[1];
  if (b.shape[0] != m) fail(ErrorKind::EnvMismatch, "matmul: inner extents differ");
  Tensor c = Tensor::zeros({n, p});
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t k = 0; k < p; ++k) {
      double acc = 0.0;
      for (int64_t j = 0; j < m; ++j) acc += a.data[i * m + j] * b.data[j * p + k];
      c.data[i * p + k] = acc;
    }
  }
  return c;
}

Tensor transpose2(const Tensor& a) {
  Tensor t = Tensor::zeros({a.shape[1], a.shape[0]});
  for (int64_t i = 0; i < a.shape[0]; ++i) {
    for (int64_t j = 0; j < a.shape[1]; ++j) t.data[j * a.shape[0] + i] = a.data[i * a.shape[1] + j];
  }
  return t;
}

Tensor oracle_conv_transpose(const Tensor& u, const Tensor& w, int64_t stride, int64_t dilation,
                             int64_t pad, int64_t out_len) {
  Tensor out = Tensor::zeros({out_len});
  for (int64_t i = 0; i < u.shape[0]; ++i) {
    for (int64_t j = 0; j < w.shape[0]; ++j) {
      const int64_t pos = stride * i + dilation * j - pad;
      if (pos >= 0 && pos < out_len) out.data[pos] += u.data[i] * w.data[j];
    }
  }
  return out;
}

Tensor oracle_pool(const Tensor& v, int64_t size, bool max) {
  const int64_t rows = v.shape[0] / size, cols = v.shape[1] / size;
  Tensor out = Tensor::zeros({rows, cols});
  for (int64_t i = 0; i < rows; ++i) {
    for (int64_t j = 0; j < cols; ++j) {
      double acc = max ? -HUGE_VAL : 0.0;
      for (int64_t a = 0; a < size; ++a) {
        for (int64_t b = 0; b < size; ++b) {
          const double x = v.data[(i * size + a) * v.shape[1] + j * size + b];
          acc = max ? std::max(acc, x) : acc + x;
        }
      }
      out.data[i * cols + j] = max ? acc : acc / static_cast<double>(size * size);
    }
  }
  return out;
}

Tensor oracle_softmax(const Tensor& x) {
  Tensor out = x;
  double z = 0.0;
  for (double v : x.data) z += std::exp(v);
  for (auto& v : out.data) v = std::exp(v) / z;
  return out;
}

Tensor oracle_dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  const int64_t n = w.shape[0], m = w.shape[1];
  Tensor out = Tensor::zeros({m});
  for (int64_t o = 0; o < m; ++o) {
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += x.data[i] * w.data[i * m + o];
    out.data[o] = acc + (b.data.empty() ? 0.0 : b.data[o]);
  }
  return out;
}

Tensor oracle_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.shape[1]));
  Tensor s = matmul(q, transpose2(k));
  const int64_t rows = s.shape[0], cols = s.shape[1];
  for (int64_t i = 0; i < rows; ++i) {
    double z = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
      double& e = s.data[i * cols + j];
      e = std::exp(e * scale + (mask.data.empty() ? 0.0 : mask.data[i * cols + j]));
      z += e;
    }
    for (int64_t j = 0; j < cols; ++j) s.data[i * cols + j] /= z;
  }
  return matmul(s, v);
}

Tensor oracle_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  return oracle_attention(q, k, v, Tensor{});
}

namespace {

// Slice head h out of a [m, heads, d] projection tensor.
Tensor head_weights(const Tensor& w, int64_t h) {
  const int64_t m = w.shape[0], heads = w.shape[1], d = w.shape[2];
  Tensor out = Tensor::zeros({m, d});
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < d; ++j) out.data[i * d + j] = w.data[(i * heads + h) * d + j];
  }
  return out;
}

}  // namespace

Tensor oracle_multihead(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& wq,
                        const Tensor& wk, const Tensor& wv, const Tensor& wo) {
  const int64_t heads = wq.shape[1];
  const int64_t y = q.shape[0];
  const int64_t dv = wv.shape[2];
  Tensor concat = Tensor::zeros({y, heads * dv});
  for (int64_t h = 0; h < heads; ++h) {
    Tensor head = oracle_attention(matmul(q, head_weights(wq, h)), matmul(k, head_weights(wk, h)),
                                   matmul(v, head_weights(wv, h)));
    for (int64_t i = 0; i < y; ++i) {
      for (int64_t j = 0; j < dv; ++j) concat.data[i * heads * dv + h * dv + j] = head.data[i * dv + j];
    }
  }
  return matmul(concat, wo);
}

}  // namespace ncd
