#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cms/fingerprint.hpp"
#include "cms/generate.hpp"
#include "cms/score_types.hpp"
#include "cms/smiles.hpp"

namespace cms::score {

struct InvalidCandidate : std::runtime_error {
  InvalidCandidate() : std::runtime_error("invalid candidates carry no reward") {}
};

// Clamp-linear normalization bounds and aggregation weights. Docking maps
// (-x - 6) / 8 on its default [-14, -6] window, synthesizability (10 - x)/9,
// solubility linearly on [lo, hi]; druglikeness and similarity pass through.
struct NormBounds {
  double docking_lo = -14.0;
  double docking_hi = -6.0;
  double solubility_lo = -5.0;
  double solubility_hi = 5.0;
  // weights over {docking, druglikeness, synthesizability, solubility,
  // similarity}; 0.2 x 5 with similarity, 0.25 x 4 without.
  bool include_similarity = true;
  std::array<double, 5> weights{0.2, 0.2, 0.2, 0.2, 0.2};

  void validate() const;
  static NormBounds without_similarity();
};

// Atom-contribution logP estimate over the bundled table.
double crippen_logp(const smiles::MolecularGraph& graph);
std::string crippen_atom_type(const smiles::MolecularGraph& graph, int atom);
const std::vector<std::pair<std::string, double>>& crippen_table();
std::uint64_t crippen_table_hash();
// Frozen hash of the bundled table; any edit trips the self-check.
constexpr std::uint64_t kCrippenTableHashPinned = 0xf11eb8b54246c346ULL;

double molecular_weight(const smiles::MolecularGraph& graph);
int hbond_donors(const smiles::MolecularGraph& graph);
int hbond_acceptors(const smiles::MolecularGraph& graph);

// Geometric mean of four desirability ramps (MW, logP, donors, acceptors).
double druglikeness_proxy(const smiles::MolecularGraph& graph);

struct SaFeatures {
  int heavy_atoms = 0;
  int rings = 0;             // cyclomatic number
  int fused_ring_bonds = 0;  // ring bonds joining two ring-junction atoms
  int stereo_markers = 0;
  double hetero_fraction = 0.0;
};
SaFeatures sa_features(const smiles::MolecularGraph& graph);
double sa_from_features(const SaFeatures& features);
// 1 (easy) .. 10 (hard), monotone in every feature.
double sa_proxy(const smiles::MolecularGraph& graph);

// Deterministic fallback when no external docking entry exists: a pure
// function of the string with range [-14, -6].
double docking_stub(const std::string& smiles_text);

struct ExternalEntry {
  double docking = 0.0;
  std::optional<double> druglikeness;
  std::optional<double> synthesizability;
  std::optional<double> solubility;
};
struct ExternalScores {
  std::map<std::string, ExternalEntry> by_smiles;
  long long malformed_rows = 0;
};
// "smiles,docking[,druglikeness,synthesizability,solubility]" per row.
ExternalScores external_scores(const std::string& path);

ScoreVector score_candidate(const std::string& candidate_smiles,
                            const std::string& reference_smiles,
                            const ExternalScores* external = nullptr,
                            int fp_radius = 2, int fp_bits = 2048);

double normalized_reward(const ScoreVector& v, const NormBounds& bounds);

struct ScoredCandidate {
  gen::Candidate candidate;
  double reward = 0.0;
};
struct TopSelection {
  std::vector<ScoredCandidate> top;
  double mean_reward = 0.0;
  bool fewer_than_k = false;
};
// Stable order: reward descending, ties by lexicographic SMILES. Only valid
// candidates participate.
TopSelection select_top(const std::vector<ScoredCandidate>& scored, int k);

struct MoleculeResult {
  std::string reference;
  std::vector<ScoredCandidate> scored;
};
// Tab-separated benchmark table: per-critic means over valid candidates,
// average normalized reward, top-10% reward, and a provenance column.
std::string report(const std::vector<MoleculeResult>& results, const NormBounds& bounds);

}  // namespace cms::score
