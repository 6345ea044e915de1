#include "cms/score.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cms/hash.hpp"

namespace cms::score {

namespace {

double clamp01(double x) { return std::min(1.0, std::max(0.0, x)); }

bool is_hetero(const std::string& element) {
  return element != "C" && element != "H";
}

double atomic_mass(const std::string& element) {
  if (element == "H") return 1.008;
  if (element == "B") return 10.81;
  if (element == "C") return 12.011;
  if (element == "N") return 14.007;
  if (element == "O") return 15.999;
  if (element == "F") return 18.998;
  if (element == "P") return 30.974;
  if (element == "S") return 32.06;
  if (element == "Cl") return 35.45;
  if (element == "Br") return 79.904;
  if (element == "I") return 126.904;
  return 0.0;
}

// Trapezoid desirability: 0 outside [zero_lo, zero_hi], 1 inside
// [one_lo, one_hi], linear in between.
double ramp(double x, double zero_lo, double one_lo, double one_hi, double zero_hi) {
  if (x <= zero_lo || x >= zero_hi) return 0.0;
  if (x < one_lo) return (x - zero_lo) / (one_lo - zero_lo);
  if (x <= one_hi) return 1.0;
  return (zero_hi - x) / (zero_hi - one_hi);
}

double count_ramp(double x, double one_hi, double zero_hi) {
  if (x <= one_hi) return 1.0;
  if (x >= zero_hi) return 0.0;
  return (zero_hi - x) / (zero_hi - one_hi);
}

struct BondInfo {
  std::vector<std::vector<int>> adjacency;      // neighbor atom ids
  std::vector<std::vector<int>> incident_bond;  // bond index per neighbor slot
};

BondInfo adjacency_of(const smiles::MolecularGraph& graph) {
  BondInfo info;
  info.adjacency.resize(graph.atoms.size());
  info.incident_bond.resize(graph.atoms.size());
  for (std::size_t b = 0; b < graph.bonds.size(); ++b) {
    const auto& bond = graph.bonds[b];
    info.adjacency[static_cast<std::size_t>(bond.a)].push_back(bond.b);
    info.adjacency[static_cast<std::size_t>(bond.b)].push_back(bond.a);
    info.incident_bond[static_cast<std::size_t>(bond.a)].push_back(static_cast<int>(b));
    info.incident_bond[static_cast<std::size_t>(bond.b)].push_back(static_cast<int>(b));
  }
  return info;
}

// Bridge detection (iterative DFS lowlink); non-bridge edges lie on cycles.
std::vector<bool> ring_edges(const smiles::MolecularGraph& graph) {
  const int n = static_cast<int>(graph.atoms.size());
  const BondInfo info = adjacency_of(graph);
  std::vector<bool> is_ring(graph.bonds.size(), false);
  std::vector<int> disc(static_cast<std::size_t>(n), -1), low(static_cast<std::size_t>(n), 0);
  int timer = 0;

  struct Frame {
    int node;
    int parent_edge;
    std::size_t next = 0;
  };
  for (int start = 0; start < n; ++start) {
    if (disc[static_cast<std::size_t>(start)] != -1) continue;
    std::vector<Frame> stack{{start, -1}};
    disc[static_cast<std::size_t>(start)] = low[static_cast<std::size_t>(start)] = timer++;
    while (!stack.empty()) {
      Frame& frame = stack.back();
      const auto u = static_cast<std::size_t>(frame.node);
      if (frame.next < info.adjacency[u].size()) {
        const int v = info.adjacency[u][frame.next];
        const int edge = info.incident_bond[u][frame.next];
        ++frame.next;
        if (edge == frame.parent_edge) continue;
        if (disc[static_cast<std::size_t>(v)] == -1) {
          disc[static_cast<std::size_t>(v)] = low[static_cast<std::size_t>(v)] = timer++;
          stack.push_back({v, edge});
        } else {
          low[u] = std::min(low[u], disc[static_cast<std::size_t>(v)]);
          is_ring[static_cast<std::size_t>(edge)] = true;  // back edge
        }
      } else {
        stack.pop_back();
        if (!stack.empty()) {
          const auto p = static_cast<std::size_t>(stack.back().node);
          low[p] = std::min(low[p], low[u]);
          if (low[u] > disc[p]) {
            // bridge: stays non-ring
          } else {
            is_ring[static_cast<std::size_t>(frame.parent_edge)] = true;
          }
        }
      }
    }
  }
  return is_ring;
}

}  // namespace

void NormBounds::validate() const {
  if (!(docking_lo < docking_hi) || !(solubility_lo < solubility_hi))
    throw std::invalid_argument("normalization bounds need lo < hi");
  double sum = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] < 0.0) throw std::invalid_argument("weights must be non-negative");
    if (!include_similarity && i == 4 && weights[i] != 0.0)
      throw std::invalid_argument("similarity excluded but weighted");
    sum += weights[i];
  }
  if (std::fabs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("weights must sum to 1");
}

NormBounds NormBounds::without_similarity() {
  NormBounds b;
  b.include_similarity = false;
  b.weights = {0.25, 0.25, 0.25, 0.25, 0.0};
  return b;
}

const std::vector<std::pair<std::string, double>>& crippen_table() {
  // Simplified atom-contribution subset covering the handful of types
  // this parser can produce.
  static const std::vector<std::pair<std::string, double>> table = {
      {"C.sp3", 0.1441},      // aliphatic C bonded to C/H only
      {"C.het", -0.2035},     // aliphatic C with a heteroatom neighbor
      {"C.arom.h", 0.1581},   // aromatic C carrying a hydrogen
      {"C.arom", 0.1360},     // substituted or fused aromatic C
      {"N.aliph", -1.0190},
      {"N.arom", -0.3239},
      {"N.plus", -0.3396},
      {"O.carbonyl", -0.1526},
      {"O.arom", 0.1552},
      {"O.hydroxyl", -0.2893},
      {"O.ether", -0.0684},
      {"S.arom", 0.6237},
      {"S.aliph", 0.6482},
      {"P", 0.8612},
      {"B", 0.1500},
      {"F", 0.4202},
      {"Cl", 0.6895},
      {"Br", 0.8456},
      {"I", 0.8857},
      {"H.on_c", 0.1230},
      {"H.on_n", 0.2142},
      {"H.on_o", -0.2677},
      {"H.other", 0.1125},
      {"default", 0.0800},    // unknown-type fallback, flagged by callers
  };
  return table;
}

std::uint64_t crippen_table_hash() {
  std::string serialized;
  for (const auto& [name, value] : crippen_table()) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s:%.4f;", name.c_str(), value);
    serialized += buf;
  }
  return hash64(serialized);
}

namespace {

double crippen_contribution(const std::string& type) {
  for (const auto& [name, value] : crippen_table())
    if (name == type) return value;
  for (const auto& [name, value] : crippen_table())
    if (name == "default") return value;
  return 0.0;
}

}  // namespace

std::string crippen_atom_type(const smiles::MolecularGraph& graph, int atom) {
  const auto& a = graph.atoms[static_cast<std::size_t>(atom)];
  const std::string& e = a.element;
  if (e == "C") {
    if (a.aromatic)
      return graph.hydrogen_count(atom) > 0 ? "C.arom.h" : "C.arom";
    for (const auto& bond : graph.bonds) {
      const int other = bond.a == atom ? bond.b : bond.b == atom ? bond.a : -1;
      if (other >= 0 && is_hetero(graph.atoms[static_cast<std::size_t>(other)].element))
        return "C.het";
    }
    return "C.sp3";
  }
  if (e == "N") {
    if (a.charge > 0) return "N.plus";
    return a.aromatic ? "N.arom" : "N.aliph";
  }
  if (e == "O") {
    for (const auto& bond : graph.bonds) {
      if ((bond.a == atom || bond.b == atom) && bond.order == smiles::BondOrder::Double)
        return "O.carbonyl";
    }
    if (a.aromatic) return "O.arom";
    return graph.hydrogen_count(atom) > 0 ? "O.hydroxyl" : "O.ether";
  }
  if (e == "S") return a.aromatic ? "S.arom" : "S.aliph";
  if (e == "P" || e == "B" || e == "F" || e == "Cl" || e == "Br" || e == "I") return e;
  return "default";
}

double crippen_logp(const smiles::MolecularGraph& graph) {
  double total = 0.0;
  for (std::size_t i = 0; i < graph.atoms.size(); ++i) {
    const int atom = static_cast<int>(i);
    total += crippen_contribution(crippen_atom_type(graph, atom));
    const int hydrogens = graph.hydrogen_count(atom);
    if (hydrogens == 0) continue;
    const std::string& e = graph.atoms[i].element;
    const std::string h_type = e == "C"   ? "H.on_c"
                               : e == "N" ? "H.on_n"
                               : e == "O" ? "H.on_o"
                                          : "H.other";
    total += hydrogens * crippen_contribution(h_type);
  }
  return total;
}

double molecular_weight(const smiles::MolecularGraph& graph) {
  double mw = 0.0;
  for (std::size_t i = 0; i < graph.atoms.size(); ++i) {
    mw += atomic_mass(graph.atoms[i].element);
    mw += atomic_mass("H") * graph.hydrogen_count(static_cast<int>(i));
  }
  return mw;
}

int hbond_donors(const smiles::MolecularGraph& graph) {
  int donors = 0;
  for (std::size_t i = 0; i < graph.atoms.size(); ++i) {
    const auto& a = graph.atoms[i];
    if ((a.element == "N" || a.element == "O") &&
        graph.hydrogen_count(static_cast<int>(i)) > 0)
      ++donors;
  }
  return donors;
}

int hbond_acceptors(const smiles::MolecularGraph& graph) {
  int acceptors = 0;
  for (const auto& a : graph.atoms)
    if (a.element == "N" || a.element == "O") ++acceptors;
  return acceptors;
}

double druglikeness_proxy(const smiles::MolecularGraph& graph) {
  const double mw = ramp(molecular_weight(graph), 100.0, 160.0, 480.0, 600.0);
  const double lp = ramp(crippen_logp(graph), -2.0, -0.4, 3.0, 5.0);
  const double hbd = count_ramp(hbond_donors(graph), 3.0, 6.0);
  const double hba = count_ramp(hbond_acceptors(graph), 7.0, 11.0);
  return std::pow(mw * lp * hbd * hba, 0.25);
}

SaFeatures sa_features(const smiles::MolecularGraph& graph) {
  SaFeatures f;
  f.heavy_atoms = static_cast<int>(graph.atoms.size());
  int components = 0;
  {
    std::vector<bool> seen(graph.atoms.size(), false);
    const BondInfo info = adjacency_of(graph);
    for (std::size_t i = 0; i < graph.atoms.size(); ++i) {
      if (seen[i]) continue;
      ++components;
      std::vector<int> stack{static_cast<int>(i)};
      seen[i] = true;
      while (!stack.empty()) {
        const int u = stack.back();
        stack.pop_back();
        for (int v : info.adjacency[static_cast<std::size_t>(u)]) {
          if (!seen[static_cast<std::size_t>(v)]) {
            seen[static_cast<std::size_t>(v)] = true;
            stack.push_back(v);
          }
        }
      }
    }
  }
  f.rings = static_cast<int>(graph.bonds.size()) - f.heavy_atoms + components;

  const std::vector<bool> ring_edge = ring_edges(graph);
  std::vector<int> ring_degree(graph.atoms.size(), 0);
  for (std::size_t b = 0; b < graph.bonds.size(); ++b) {
    if (!ring_edge[b]) continue;
    ++ring_degree[static_cast<std::size_t>(graph.bonds[b].a)];
    ++ring_degree[static_cast<std::size_t>(graph.bonds[b].b)];
  }
  for (std::size_t b = 0; b < graph.bonds.size(); ++b) {
    if (!ring_edge[b]) continue;
    if (ring_degree[static_cast<std::size_t>(graph.bonds[b].a)] >= 3 &&
        ring_degree[static_cast<std::size_t>(graph.bonds[b].b)] >= 3)
      ++f.fused_ring_bonds;
  }

  int hetero = 0;
  for (const auto& a : graph.atoms) {
    if (a.stereo != 0) ++f.stereo_markers;
    if (is_hetero(a.element)) ++hetero;
  }
  f.hetero_fraction =
      f.heavy_atoms > 0 ? static_cast<double>(hetero) / f.heavy_atoms : 0.0;
  return f;
}

double sa_from_features(const SaFeatures& f) {
  const double complexity = 0.04 * f.heavy_atoms + 0.18 * f.rings +
                            0.45 * f.fused_ring_bonds + 0.25 * f.stereo_markers +
                            1.2 * f.hetero_fraction;
  const double squash = 1.0 - std::exp(-complexity / 4.5);
  return 1.0 + 9.0 * squash;
}

double sa_proxy(const smiles::MolecularGraph& graph) {
  return sa_from_features(sa_features(graph));
}

double docking_stub(const std::string& smiles_text) {
  const double unit = static_cast<double>(hash64(smiles_text)) /
                      static_cast<double>(~std::uint64_t{0});
  return -6.0 - 8.0 * unit;
}

ExternalScores external_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw bpe::IoError("cannot open external scores: " + path);
  ExternalScores out;
  std::string line;
  if (!std::getline(in, line) || line.rfind("smiles,docking", 0) != 0)
    throw bpe::FormatVersionMismatch("external scores need a 'smiles,docking...' header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() < 2) {
      ++out.malformed_rows;
      continue;
    }
    try {
      ExternalEntry entry;
      entry.docking = std::stod(fields[1]);
      if (fields.size() > 2 && !fields[2].empty()) entry.druglikeness = std::stod(fields[2]);
      if (fields.size() > 3 && !fields[3].empty())
        entry.synthesizability = std::stod(fields[3]);
      if (fields.size() > 4 && !fields[4].empty()) entry.solubility = std::stod(fields[4]);
      out.by_smiles[fields[0]] = entry;
    } catch (const std::exception&) {
      ++out.malformed_rows;
    }
  }
  return out;
}

ScoreVector score_candidate(const std::string& candidate_smiles,
                            const std::string& reference_smiles,
                            const ExternalScores* external, int fp_radius, int fp_bits) {
  const auto reference_graph = smiles::parse(reference_smiles);

  ScoreVector v;
  const auto validity = smiles::is_valid(candidate_smiles);
  v.validity = validity.valid;
  if (!v.validity) return v;

  const auto graph = smiles::parse(candidate_smiles);
  v.druglikeness = druglikeness_proxy(graph);
  v.synthesizability = sa_proxy(graph);
  v.solubility = crippen_logp(graph);
  v.similarity = smiles::tanimoto(smiles::fingerprint(graph, fp_radius, fp_bits),
                                  smiles::fingerprint(reference_graph, fp_radius, fp_bits));

  const ExternalEntry* entry = nullptr;
  if (external != nullptr) {
    auto it = external->by_smiles.find(candidate_smiles);
    if (it != external->by_smiles.end()) entry = &it->second;
  }
  if (entry != nullptr) {
    v.docking = entry->docking;
    v.external_docking = true;
    if (entry->druglikeness) v.druglikeness = *entry->druglikeness;
    if (entry->synthesizability) v.synthesizability = *entry->synthesizability;
    if (entry->solubility) v.solubility = *entry->solubility;
  } else {
    v.docking = docking_stub(candidate_smiles);
  }
  return v;
}

double normalized_reward(const ScoreVector& v, const NormBounds& bounds) {
  bounds.validate();
  if (!v.validity) throw InvalidCandidate();

  // (-x - 6) / 8 on the default [-14, -6] window.
  const double docking =
      clamp01((bounds.docking_hi - v.docking) / (bounds.docking_hi - bounds.docking_lo));
  const double druglike = clamp01(v.druglikeness);
  const double sa = clamp01((10.0 - v.synthesizability) / 9.0);
  const double solubility = clamp01((v.solubility - bounds.solubility_lo) /
                                    (bounds.solubility_hi - bounds.solubility_lo));
  const double similarity = clamp01(v.similarity);

  double reward = bounds.weights[0] * docking + bounds.weights[1] * druglike +
                  bounds.weights[2] * sa + bounds.weights[3] * solubility;
  if (bounds.include_similarity) reward += bounds.weights[4] * similarity;
  return reward;
}

TopSelection select_top(const std::vector<ScoredCandidate>& scored, int k) {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  TopSelection out;
  std::vector<const ScoredCandidate*> valid;
  for (const auto& s : scored)
    if (s.candidate.valid) valid.push_back(&s);
  std::stable_sort(valid.begin(), valid.end(),
                   [](const ScoredCandidate* a, const ScoredCandidate* b) {
                     if (a->reward != b->reward) return a->reward > b->reward;
                     return a->candidate.generated < b->candidate.generated;
                   });
  out.fewer_than_k = static_cast<int>(valid.size()) < k;
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), valid.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < take; ++i) {
    out.top.push_back(*valid[i]);
    sum += valid[i]->reward;
  }
  out.mean_reward = take > 0 ? sum / static_cast<double>(take) : 0.0;
  return out;
}

std::string report(const std::vector<MoleculeResult>& results, const NormBounds& bounds) {
  bounds.validate();
  std::ostringstream out;
  out << "reference\tavg_norm_reward\tavg_top10pct_norm_reward\tdocking\t"
         "druglikeness\tsynthesizability\tsolubility\tsimilarity\tvalid\ttotal\t"
         "provenance\n";

  auto emit_row = [&](const std::string& label,
                      const std::vector<const ScoredCandidate*>& pool) {
    std::vector<const ScoredCandidate*> valid;
    for (const auto* s : pool)
      if (s->candidate.valid) valid.push_back(s);

    double reward_sum = 0, docking = 0, druglike = 0, sa = 0, solubility = 0,
           similarity = 0;
    bool any_external = false, any_proxy = false;
    for (const auto* s : valid) {
      reward_sum += s->reward;
      docking += s->candidate.scores.docking;
      druglike += s->candidate.scores.druglikeness;
      sa += s->candidate.scores.synthesizability;
      solubility += s->candidate.scores.solubility;
      similarity += s->candidate.scores.similarity;
      (s->candidate.scores.external_docking ? any_external : any_proxy) = true;
    }
    const auto n = static_cast<double>(valid.size());

    std::vector<const ScoredCandidate*> sorted = valid;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const ScoredCandidate* a, const ScoredCandidate* b) {
                       if (a->reward != b->reward) return a->reward > b->reward;
                       return a->candidate.generated < b->candidate.generated;
                     });
    const std::size_t top_k =
        std::max<std::size_t>(1, (sorted.size() + 9) / 10);  // ceil(10%)
    double top_sum = 0.0;
    for (std::size_t i = 0; i < std::min(top_k, sorted.size()); ++i)
      top_sum += sorted[i]->reward;

    char buf[256];
    if (valid.empty()) {
      out << label << "\t-\t-\t-\t-\t-\t-\t-\t0\t" << pool.size() << "\t-\n";
      return;
    }
    const char* provenance = any_external && any_proxy ? "mixed"
                             : any_external           ? "external"
                                                      : "proxy";
    std::snprintf(buf, sizeof(buf),
                  "%.4f\t%.4f\t%.3f\t%.3f\t%.3f\t%.3f\t%.3f\t%zu\t%zu\t%s",
                  reward_sum / n, top_sum / std::min(top_k, sorted.size()), docking / n,
                  druglike / n, sa / n, solubility / n, similarity / n, valid.size(),
                  pool.size(), provenance);
    out << label << "\t" << buf << "\n";
  };

  std::vector<const ScoredCandidate*> all;
  for (const auto& result : results) {
    std::vector<const ScoredCandidate*> pool;
    for (const auto& s : result.scored) {
      pool.push_back(&s);
      all.push_back(&s);
    }
    emit_row(result.reference, pool);
  }
  if (results.size() > 1) emit_row("ALL", all);
  return out.str();
}

}  // namespace cms::score
