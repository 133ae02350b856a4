// Rewrites corpus/golden/<id>.svg and <id>.json from the current renderer and
// cost model. Review the diff before committing.
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ncd/complexity.hpp"
#include "ncd/corpus.hpp"
#include "ncd/emit.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: ncd_goldens CORPUS_DIR\n";
    return 1;
  }
  const std::filesystem::path dir(argv[1]);
  std::filesystem::create_directories(dir / "golden");
  try {
    for (const auto& e : ncd::load_corpus()) {
      const ncd::Program p = ncd::load_entry(e, dir.string());
      const ncd::Diagram& d = p.get(e.diagram);
      std::ofstream(dir / "golden" / (e.id + ".svg")) << ncd::to_svg(d, p.bindings);
      std::ofstream(dir / "golden" / (e.id + ".json"))
          << ncd::report_json(d, ncd::cost_report(d, p.bindings), p.bindings) << "\n";
      std::cout << e.id << "\n";
    }
  } catch (const ncd::Error& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 0;
}
