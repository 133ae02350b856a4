#include "ncd/corpus.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "ncd/error.hpp"
#include "ncd/oracles.hpp"

namespace ncd {

namespace {

using Inputs = std::vector<Tensor>;

Tensor relu(Tensor t) {
  for (auto& v : t.data) v = v > 0.0 ? v : 0.0;
  return t;
}

Tensor flat(const Tensor& t) { return Tensor::from({static_cast<int64_t>(t.size())}, t.data); }

// [c, X0, X1] with kernel [c, kh, kw, o], stride 1, padding `pad`.
Tensor conv_mix(const Tensor& x, const Tensor& k, int64_t pad) {
  const int64_t channels = x.shape[0], kh = k.shape[1], kw = k.shape[2], outs = k.shape[3];
  std::vector<Tensor> planes;
  for (int64_t o = 0; o < outs; ++o) {
    Tensor acc;
    for (int64_t c = 0; c < channels; ++c) {
      Tensor w = Tensor::zeros({kh, kw});
      for (int64_t i = 0; i < kh * kw; ++i) w.data[i] = k.data[(c * kh * kw + i) * outs + o];
      Tensor part = oracle_conv(leading_slice(x, c), w, {1, 1}, {1, 1}, {pad, pad});
      if (c == 0) {
        acc = part;
      } else {
        for (size_t i = 0; i < acc.size(); ++i) acc.data[i] += part.data[i];
      }
    }
    planes.push_back(acc);
  }
  return stack_leading(planes);
}

// [c, n] -> [n, c]
Tensor pixels_last(const Tensor& t) {
  return transpose2(Tensor::from({t.shape[0], static_cast<int64_t>(t.size()) / t.shape[0]}, t.data));
}

Oracle conv(std::vector<int64_t> s, std::vector<int64_t> d, std::vector<int64_t> pad) {
  return [=](const Inputs& in, const ParamStore&) {
    return Inputs{oracle_conv(in[0], in[1], s, d, pad)};
  };
}

Inputs mlp(const Inputs& in, const ParamStore& p) {
  Tensor h = flat(in[0]);
  h = relu(oracle_dense(h, p.weights.at("L1"), p.biases.at("L1")));
  h = relu(oracle_dense(h, p.weights.at("L2"), p.biases.at("L2")));
  h = oracle_dense(h, p.weights.at("L3"), p.biases.at("L3"));
  return {oracle_softmax(h)};
}

Inputs idresnet(const Inputs& in, const ParamStore& p) {
  const Tensor& x = in[0];
  Tensor r = conv_mix(relu(x), p.weights.at("K1"), 1);
  r = conv_mix(relu(r), p.weights.at("K2"), 1);
  for (size_t i = 0; i < r.size(); ++i) r.data[i] += x.data[i];
  return {r};
}

Inputs unet(const Inputs& in, const ParamStore& p) {
  const Tensor& sig = in[0];
  const int64_t c = sig.shape[0], x = sig.shape[1], y = x / 2;
  const Tensor& d1 = p.weights.at("D1");  // [c, 2, d]
  const Tensor& u1 = p.weights.at("U1");  // [d, c, 2]
  const Tensor& m1 = p.weights.at("M1");
  const Tensor& m2 = p.weights.at("M2");
  const int64_t d = d1.shape[2];
  Tensor up = Tensor::zeros({c, x});
  for (int64_t i = 0; i < y; ++i) {
    std::vector<double> hidden(d, 0.0);
    for (int64_t o = 0; o < d; ++o) {
      for (int64_t ch = 0; ch < c; ++ch) {
        for (int64_t j = 0; j < 2; ++j) {
          hidden[o] += sig.data[ch * x + 2 * i + j] * d1.data[(ch * 2 + j) * d + o];
        }
      }
      hidden[o] = std::max(hidden[o], 0.0);
    }
    for (int64_t ch = 0; ch < c; ++ch) {
      for (int64_t j = 0; j < 2; ++j) {
        double v = 0.0;
        for (int64_t o = 0; o < d; ++o) v += hidden[o] * u1.data[(o * c + ch) * 2 + j];
        up.data[ch * x + 2 * i + j] += v;
      }
    }
  }
  Tensor out = Tensor::zeros({x, c});
  for (int64_t i = 0; i < x; ++i) {
    for (int64_t o = 0; o < c; ++o) {
      double a = 0.0, b = 0.0;
      for (int64_t ch = 0; ch < c; ++ch) {
        a += sig.data[ch * x + i] * m1.data[ch * c + o];
        b += up.data[ch * x + i] * m2.data[ch * c + o];
      }
      out.data[i * c + o] = a + b;
    }
  }
  return {out};
}

Inputs multihead(const Inputs& in, const ParamStore& p) {
  return {oracle_multihead(in[0], in[1], in[2], p.weights.at("WQ"), p.weights.at("WK"),
                           p.weights.at("WV"), p.weights.at("WO"))};
}

Inputs visual(const Inputs& in, const ParamStore& p) {
  return multihead({pixels_last(in[0]), pixels_last(in[1]), pixels_last(in[2])}, p);
}

Inputs chain(const Inputs& in, const ParamStore& p) {
  Tensor h = oracle_dense(in[0], p.weights.at("A"), {});
  for (auto& v : h.data) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  const Tensor& b = p.weights.at("B");
  return {oracle_dense(h, Tensor::from({b.shape[0], 1}, b.data), {})};
}

Inputs sumsq(const Inputs& in, const ParamStore&) {
  double s = 0.0;
  for (double v : in[0].data) s += v * v;
  return {Tensor::scalar(0.5 * s)};
}

std::vector<CorpusEntry> build() {
  auto attention = [](const Inputs& in, const ParamStore&) {
    return Inputs{oracle_attention(in[0], in[1], in[2])};
  };
  return {
      {"mlp", "mlp.ncd", "mlp", {}, "dense layers with relu and softmax", 1e-12, mlp},
      {"scaled_attention", "scaled_attention.ncd", "attention", {},
       "SoftMax(QK^T/sqrt(d_k))V", 1e-12, attention},
      {"masked_attention", "scaled_attention.ncd", "masked_attention", {},
       "SoftMax(QK^T/sqrt(d_k) + M)V", 1e-12,
       [](const Inputs& in, const ParamStore&) {
         return Inputs{oracle_attention(in[0], in[1], in[2], in[3])};
       }},
      {"multihead", "multihead.ncd", "multihead", {}, "Concat(head_i) W^O", 1e-12, multihead},
      {"multihead_attention", "multihead.ncd", "attention", {}, "SoftMax(QK^T/sqrt(d_k))V",
       1e-12, attention},
      {"conv1d", "conv1d.ncd", "conv1d", {}, "definitional convolution", 1e-12,
       conv({1}, {1}, {0})},
      {"conv1d_same", "conv1d.ncd", "conv1d_same", {}, "definitional convolution, pad 1",
       1e-12, conv({1}, {1}, {1})},
      {"conv2d", "conv2d.ncd", "conv2d", {}, "definitional 2-D convolution", 1e-12,
       conv({1, 1}, {1, 1}, {0, 0})},
      {"conv_stride", "conv_stride.ncd", "conv_stride", {}, "convolution, stride 2", 1e-12,
       conv({2}, {1}, {0})},
      {"conv_dilation", "conv_dilation.ncd", "conv_dilation", {}, "convolution, dilation 2",
       1e-12, conv({1}, {2}, {0})},
      {"conv_padding", "conv_padding.ncd", "conv_padding", {}, "convolution, pad 2", 1e-12,
       conv({1}, {1}, {2})},
      {"conv_transposed", "conv_transposed.ncd", "conv_transposed", {},
       "scatter u[i] w[j] to 2i + j", 1e-12,
       [](const Inputs& in, const ParamStore&) {
         return Inputs{oracle_conv_transpose(in[0], in[1], 2, 1, 0, 7)};
       }},
      {"max_pool", "pool.ncd", "max_pool", {}, "2x2 max pooling", 1e-12,
       [](const Inputs& in, const ParamStore&) { return Inputs{oracle_pool(in[0], 2, true)}; }},
      {"mean_pool", "pool.ncd", "mean_pool", {}, "2x2 mean pooling", 1e-12,
       [](const Inputs& in, const ParamStore&) { return Inputs{oracle_pool(in[0], 2, false)}; }},
      {"idresnet_block", "idresnet_block.ncd", "idresnet_block", {},
       "x + conv(relu(conv(relu(x))))", 1e-12, idresnet},
      {"visual_attention", "visual_attention.ncd", "visual_attention", {},
       "multi-head attention, h = 1, on flattened pixels", 1e-12, visual},
      {"unet_block", "unet_block.ncd", "unet_block", {}, "strided down, transposed up, skip",
       1e-12, unet},
      {"sumsq", "sumsq.ncd", "sumsq", {}, "sum(x^2)/2", 1e-12, sumsq},
      {"chain", "chain_loss.ncd", "chain", {}, "B gelu(A x)", 1e-12, chain},
  };
}

}  // namespace

const std::vector<CorpusEntry>& load_corpus() {
  static const std::vector<CorpusEntry> entries = build();
  return entries;
}

Program load_entry(const CorpusEntry& e, const std::string& corpus_dir) {
  const auto path = std::filesystem::path(corpus_dir) / e.file;
  std::ifstream f(path);
  if (!f) fail(ErrorKind::Io, fmt::format("cannot read {}", path.string()));
  std::stringstream ss;
  ss << f.rdbuf();
  return compile(ss.str(), e.bindings);
}

double oracle_error(const CorpusEntry& e, const Program& p, int trials, uint64_t seed) {
  const Diagram& d = p.get(e.diagram);
  const Bindings b = resolve_bindings(d, p.bindings);
  std::mt19937_64 rng(seed);
  const ParamStore params = random_params(d, b, rng);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const auto x = random_inputs(d.domain, b, rng);
    const auto got = eval(d, x, params, b);
    const auto want = e.run(x, params);
    if (got.size() != want.size()) return HUGE_VAL;
    for (size_t i = 0; i < got.size(); ++i) {
      if (got[i].size() != want[i].size()) return HUGE_VAL;
      for (size_t k = 0; k < got[i].size(); ++k) {
        worst = std::max(worst, std::abs(got[i].data[k] - want[i].data[k]));
      }
    }
  }
  return worst;
}

}  // namespace ncd
