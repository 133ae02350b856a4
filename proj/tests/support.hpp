#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ncd/interp.hpp"
#include "ncd/parser.hpp"

namespace ncd::test {

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline Program corpus_program(const std::string& file, const Bindings& overrides = {}) {
  return compile(slurp(std::filesystem::path(NCD_CORPUS_DIR) / file), overrides);
}

inline std::vector<std::filesystem::path> corpus_files() {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(NCD_CORPUS_DIR)) {
    if (e.path().extension() == ".ncd") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline double max_diff(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return 1e300;
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, max_abs_diff(a[i], b[i]));
  return m;
}

/// Same data, extents taken from `shape`.
inline std::vector<Tensor> reshaped(const std::vector<Tensor>& in, const DataShape& shape,
                                    const Bindings& bindings) {
  auto extents = concrete_shapes(shape, bindings);
  std::vector<Tensor> out;
  for (size_t i = 0; i < in.size(); ++i) out.push_back(Tensor::from(extents[i], in[i].data));
  return out;
}

}  // namespace ncd::test
