#include "cms/fingerprint.hpp"

#include <algorithm>
#include <bit>

#include "cms/hash.hpp"

namespace cms::smiles {

namespace {

std::uint64_t initial_atom_hash(const MolecularGraph& graph, int atom) {
  const Atom& a = graph.atoms[atom];
  std::uint64_t h = hash64(a.element);
  h = hash_combine(h, a.aromatic ? 1 : 0);
  h = hash_combine(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(a.charge) + 16));
  h = hash_combine(h, static_cast<std::uint64_t>(graph.degree(atom)));
  h = hash_combine(h, static_cast<std::uint64_t>(graph.hydrogen_count(atom)));
  return h;
}

int bond_code(BondOrder order) {
  switch (order) {
    case BondOrder::Single: return 1;
    case BondOrder::Double: return 2;
    case BondOrder::Triple: return 3;
    case BondOrder::Aromatic: return 4;
  }
  return 1;
}

}  // namespace

int Fingerprint::popcount() const {
  int total = 0;
  for (std::uint64_t w : words) total += std::popcount(w);
  return total;
}

Fingerprint fingerprint(const MolecularGraph& graph, int radius, int nbits) {
  if (radius < 0) throw std::invalid_argument("fingerprint radius must be >= 0");
  if (nbits < 64 || (nbits & (nbits - 1)) != 0)
    throw std::invalid_argument("fingerprint nbits must be a power of two >= 64");

  Fingerprint fp;
  fp.nbits = nbits;
  fp.radius = radius;
  fp.words.assign(static_cast<std::size_t>(nbits) / 64, 0);

  const int n = static_cast<int>(graph.atoms.size());
  std::vector<std::vector<std::pair<int, int>>> neighbors(n);  // (neighbor, bond code)
  for (const Bond& bond : graph.bonds) {
    neighbors[bond.a].emplace_back(bond.b, bond_code(bond.order));
    neighbors[bond.b].emplace_back(bond.a, bond_code(bond.order));
  }

  std::vector<std::uint64_t> current(n);
  for (int i = 0; i < n; ++i) current[i] = initial_atom_hash(graph, i);
  for (int i = 0; i < n; ++i)
    fp.set(static_cast<int>(current[i] % static_cast<std::uint64_t>(nbits)));

  std::vector<std::uint64_t> next(n);
  for (int round = 1; round <= radius; ++round) {
    for (int i = 0; i < n; ++i) {
      std::vector<std::pair<int, std::uint64_t>> env;
      env.reserve(neighbors[i].size());
      for (const auto& [j, code] : neighbors[i]) env.emplace_back(code, current[j]);
      std::sort(env.begin(), env.end());
      std::uint64_t h = hash_combine(current[i], static_cast<std::uint64_t>(round));
      for (const auto& [code, nh] : env) {
        h = hash_combine(h, static_cast<std::uint64_t>(code));
        h = hash_combine(h, nh);
      }
      next[i] = h;
    }
    current.swap(next);
    for (int i = 0; i < n; ++i)
      fp.set(static_cast<int>(current[i] % static_cast<std::uint64_t>(nbits)));
  }
  return fp;
}

double tanimoto(const Fingerprint& a, const Fingerprint& b) {
  if (a.nbits != b.nbits || a.radius != b.radius) throw WidthMismatch();
  int inter = 0;
  int uni = 0;
  for (std::size_t w = 0; w < a.words.size(); ++w) {
    inter += std::popcount(a.words[w] & b.words[w]);
    uni += std::popcount(a.words[w] | b.words[w]);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace cms::smiles
