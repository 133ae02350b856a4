#pragma once

#include <random>
#include <string>
#include <vector>

namespace ncd::test {

/// Random file that follows the grammar but need not type-check. `noisy`
/// spells the same tokens with extra whitespace and comments.
struct FuzzFile {
  std::string plain;
  std::string noisy;
};

class FuzzWriter {
 public:
  explicit FuzzWriter(uint64_t seed) : rng_(seed) {}

  FuzzFile file() {
    plain_.clear();
    noisy_.clear();
    const int items = pick(1, 5);
    for (int i = 0; i < items; ++i) {
      switch (pick(0, 2)) {
        case 0: axes(); break;
        case 1: param(); break;
        default: diagram(); break;
      }
      tok("\n");
    }
    return {plain_, noisy_};
  }

 private:
  int pick(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  void tok(const std::string& t) {
    plain_ += t;
    noisy_ += t;
    switch (pick(0, 9)) {
      case 0: noisy_ += "  "; break;
      case 1: noisy_ += "\t"; break;
      case 2: noisy_ += " # note\n"; break;
      default: break;
    }
  }
  void gap() {
    plain_ += ' ';
    noisy_ += pick(0, 4) == 0 ? "\n " : " ";
  }

  std::string ident() {
    static const char* names[] = {"a", "b", "n", "x", "y", "k", "h", "W", "G", "f1", "m_2"};
    return names[pick(0, 10)];
  }
  std::string integer(int lo, int hi) { return std::to_string(pick(lo, hi)); }

  void axis() {
    if (pick(0, 4) == 0) tok("~");
    tok(pick(0, 3) == 0 ? integer(1, 9) : ident());
  }
  void shape() {
    tok("[");
    const int n = pick(0, 3);
    for (int i = 0; i < n; ++i) {
      if (i) tok(", ");
      axis();
    }
    tok("]");
  }
  void dshape() {
    shape();
    const int extra = pick(0, 2);
    for (int i = 0; i < extra; ++i) {
      tok(" | ");
      shape();
    }
  }
  void ref() { tok(integer(0, 2) + ":" + integer(0, 3)); }
  void ints(const std::string& key, int rank, int lo) {
    tok(key);
    for (int i = 0; i < rank; ++i) {
      if (i) tok(",");
      tok(integer(lo, 3));
    }
  }

  void axes() {
    tok("axes");
    gap();
    tok("{");
    const int n = pick(0, 3);
    for (int i = 0; i < n; ++i) {
      tok(i ? ", " : " ");
      tok(ident());
      tok(" = ");
      tok(integer(1, 12));
    }
    tok(" }");
  }

  void param() {
    tok("param");
    gap();
    tok(ident());
    tok(" : ");
    shape();
    tok(" -> ");
    shape();
    if (pick(0, 1)) tok(" +bias");
  }

  void diagram() {
    tok("diagram");
    gap();
    tok(ident());
    tok("(");
    tok(ident());
    tok(": ");
    dshape();
    tok(") -> ");
    dshape();
    tok(" {");
    const int n = pick(0, 4);
    for (int i = 0; i < n; ++i) {
      gap();
      step(0);
      tok(";");
    }
    tok(" }");
  }

  void step(int depth) {
    const int maps = pick(0, 3) == 0 ? pick(1, 2) : 0;
    for (int i = 0; i < maps; ++i) {
      tok("map ");
      axis();
      if (pick(0, 1)) tok("@" + integer(0, 2));
      tok(": ");
    }
    op(depth);
  }

  void op(int depth) {
    switch (pick(0, depth < 2 ? 21 : 20)) {
      case 0: tok("linear "); tok(ident()); break;
      case 1: tok("ew relu"); break;
      case 2: tok("ew scale(" + integer(1, 9) + ".5)"); break;
      case 3: tok("softmax"); break;
      case 4: tok("copy " + integer(0, 2)); break;
      case 5: tok("delete " + integer(0, 2)); break;
      case 6: tok("swap " + integer(0, 2) + " " + integer(0, 2)); break;
      case 7: tok("transpose " + integer(0, 1) + " (1,0)"); break;
      case 8: tok("diag "); ref(); gap(); ref(); break;
      case 9: tok("view "); shape(); tok(" -> "); shape(); break;
      case 10: tok("index "); ref(); tok(" = " + integer(0, 4)); break;
      case 11: tok("outer " + integer(0, 2) + " " + integer(0, 2)); break;
      case 12: tok("cup "); ref(); gap(); ref(); break;
      case 13: tok("unit "); axis(); break;
      case 14: tok("sum "); ref(); break;
      case 15: tok("add " + integer(0, 2) + " " + integer(0, 2)); break;
      case 16: {
        const int rank = pick(1, 2);
        tok("conv " + std::to_string(rank));
        gap();
        ints("k=", rank, 1);
        gap();
        ints("s=", rank, 1);
        gap();
        ints("d=", rank, 1);
        gap();
        ints("pad=", rank, 0);
        break;
      }
      case 17: tok(pick(0, 1) ? "pool max" : "pool mean"); break;
      case 18: tok("const " + integer(0, 9) + ".25"); break;
      case 19: tok("call "); tok(ident()); break;
      case 20: tok("ew gelu"); break;
      default: {
        tok("par {");
        const int branches = pick(1, 3);
        for (int b = 0; b < branches; ++b) {
          if (b) tok(" |");
          if (pick(0, 2) == 0) tok(" (" + integer(1, 2) + ")");
          const int steps = pick(0, 2);
          for (int s = 0; s < steps; ++s) {
            gap();
            step(depth + 1);
            tok(";");
          }
        }
        tok(" }");
        break;
      }
    }
  }

  std::mt19937_64 rng_;
  std::string plain_;
  std::string noisy_;
};

}  // namespace ncd::test
