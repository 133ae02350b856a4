#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ncd/interp.hpp"
#include "ncd/parser.hpp"

namespace ncd {

using Oracle = std::function<std::vector<Tensor>(const std::vector<Tensor>& inputs,
                                                 const ParamStore& params)>;

struct CorpusEntry {
  std::string id;       // golden file stem
  std::string file;     // relative to the corpus directory
  std::string diagram;
  Bindings bindings;    // desk-scale overrides
  std::string oracle;   // what the oracle computes
  double tolerance = 1e-12;
  Oracle run;
};

const std::vector<CorpusEntry>& load_corpus();

/// Compiles the entry's file with its bindings.
Program load_entry(const CorpusEntry& e, const std::string& corpus_dir);

/// Largest |diagram - oracle| over `trials` random environments.
double oracle_error(const CorpusEntry& e, const Program& p, int trials, uint64_t seed);

}  // namespace ncd
