#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "cms/smiles.hpp"

namespace cms::smiles {

struct WidthMismatch : std::runtime_error {
  WidthMismatch() : std::runtime_error("fingerprint width/radius mismatch") {}
};

// Circular (Morgan-style) fingerprint over the pinned 64-bit hash. Spelling
// sensitive: different SMILES of the same molecule may hash differently.
struct Fingerprint {
  std::vector<std::uint64_t> words;
  int nbits = 0;
  int radius = 0;

  bool test(int bit) const {
    return (words[static_cast<std::size_t>(bit) >> 6] >>
            (static_cast<std::size_t>(bit) & 63)) & 1u;
  }
  void set(int bit) {
    words[static_cast<std::size_t>(bit) >> 6] |= std::uint64_t{1}
                                                 << (static_cast<std::size_t>(bit) & 63);
  }
  int popcount() const;
};

Fingerprint fingerprint(const MolecularGraph& graph, int radius = 2, int nbits = 2048);

double tanimoto(const Fingerprint& a, const Fingerprint& b);

}  // namespace cms::smiles
