#pragma once

#include <vector>

#include "ncd/extent.hpp"
#include "ncd/tensor.hpp"

namespace ncd {

/// Definitional convolution out[i] = sum_j v_padded[s*i + d*j] * w[j], per
/// dimension, with zero padding. Ranks of v and w must match.
Tensor oracle_conv(const Tensor& v, const Tensor& w, const std::vector<int64_t>& stride,
                   const std::vector<int64_t>& dilation, const std::vector<int64_t>& pad);

/// Transposed 1-D convolution: out[s*i + d*j - pad] += u[i] * w[j] over an
/// output of length `out_len`.
Tensor oracle_conv_transpose(const Tensor& u, const Tensor& w, int64_t stride, int64_t dilation,
                             int64_t pad, int64_t out_len);

/// Non-overlapping 2-D pooling over `size` x `size` blocks (max or mean).
Tensor oracle_pool(const Tensor& v, int64_t size, bool max);

/// SoftMax of a vector.
Tensor oracle_softmax(const Tensor& x);

/// x W + b for a vector x and a [in, out] matrix; `b` may be empty.
Tensor oracle_dense(const Tensor& x, const Tensor& w, const Tensor& b);

/// SoftMax(Q K^T / sqrt(d_k)) V with Q: [y, d_k], K: [x, d_k], V: [x, d_v].
Tensor oracle_attention(const Tensor& q, const Tensor& k, const Tensor& v);
/// Same, with an additive [y, x] mask on the scaled scores.
Tensor oracle_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask);

/// Concat(head_1..head_h) W^O with head_i = Attention(Q W_i^Q, K W_i^K, V W_i^V).
/// Projection weights are stacked over heads: wq, wk: [m, h, d_k], wv: [m, h, d_v],
/// wo: [h * d_v, m_out]. Q: [y, m], K and V: [x, m].
Tensor oracle_multihead(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& wq,
                        const Tensor& wk, const Tensor& wv, const Tensor& wo);

/// Dense matrix product of [n, m] and [m, p].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2(const Tensor& a);

}  // namespace ncd
