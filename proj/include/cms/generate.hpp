#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cms/bpe.hpp"
#include "cms/corpus.hpp"
#include "cms/model.hpp"
#include "cms/sampler.hpp"
#include "cms/score_types.hpp"

namespace cms::gen {

struct SpecInfeasible : std::runtime_error {
  explicit SpecInfeasible(const std::string& what) : std::runtime_error(what) {}
};
struct SpanCountMismatch : std::runtime_error {
  explicit SpanCountMismatch(const std::string& what) : std::runtime_error(what) {}
};
struct BudgetExceeded : std::runtime_error {
  explicit BudgetExceeded(const std::string& what) : std::runtime_error(what) {}
};

enum class Archetype { Insert, Modify, S2sContract, S2sExpand, Mixed };

// One generation marker: where to cut, how much to remove, how much to emit.
struct Marker {
  corpus::SpanKind kind = corpus::SpanKind::Mask;
  int start = 0;
  int masked_length = 0;     // 0 = pure insertion (mask markers only)
  int generated_length = 1;  // the size hint embedded in the sentinel
  int index = 1;
};

struct PromptSpec {
  Archetype archetype = Archetype::Mixed;
  std::vector<Marker> markers;  // ascending start, non-overlapping
};

// Body with sentinel constructs substituted, plus the tail up to and
// including the first trailing construct; the model continues from there,
// emitting the later markers' sentinels itself. Mask markers embed the
// generated length as the size hint; s2s markers carry the conditioned
// subsequence. Tail order is mask markers first, then the s2s construct.
std::string build_prompt(const std::string& source, const PromptSpec& spec,
                         const bpe::Vocabulary& vocab);

struct GeneratedSpans {
  std::vector<std::string> spans;  // one per marker, tail order
  bool budget_exceeded = false;
  bool complete = false;  // every marker received a span
};

// Autoregressive span extraction. A span ends when the model emits the next
// marker's sentinel (for an s2s marker, its conditioned echo is consumed
// through the closing sentinel) or EOS; decoding stops after the last
// marker or at a hard budget of 2 * (summed hints) + 8 sampled tokens.
template <class T>
GeneratedSpans generate_spans(const model::ModelConfig& config,
                              const model::ParametersT<T>& params,
                              const std::vector<int>& prompt_ids, const PromptSpec& spec,
                              const SamplerConfig& sampler, Rng& rng,
                              const bpe::Vocabulary& vocab);

// Splices generated spans back into the source at each marker.
std::string reintegrate(const std::string& source, const PromptSpec& spec,
                        const std::vector<std::string>& spans);

struct Candidate {
  std::string source;
  std::string prompt;
  PromptSpec spec;
  std::vector<std::string> spans;
  std::string generated;
  bool valid = false;
  bool failed = false;         // infeasible draw or budget exhaustion
  score::ScoreVector scores;   // filled by the scoring pass
};

struct BatchSettings {
  int l_max = 32;
  int masked_len_cap = 12;  // masked length ~ U[1, min(cap, len/3)]
  std::vector<SamplerConfig> sampler_grid;  // drawn uniformly per candidate
  std::uint64_t seed = 0;
  int workers = 1;

  static std::vector<SamplerConfig> default_grid();
};

// Draws the two settings (one mask + one s2s, two masks) uniformly, then
// the six per-instance variables, generates, reintegrates and validity-flags
// each candidate. Candidate i derives its stream from (seed, i), so output
// is independent of the worker count. Failures are flagged, never fatal.
template <class T>
std::vector<Candidate> batch_generate(const model::ModelConfig& config,
                                      const model::ParametersT<T>& params,
                                      const std::string& source, int n_samples,
                                      const BatchSettings& settings,
                                      const bpe::Vocabulary& vocab);

// Validity rate bucketed by (masked length, generated length), with counts.
struct LengthValidityCell {
  long long total = 0;
  long long valid = 0;
};
using LengthValidityProfile = std::map<std::pair<int, int>, LengthValidityCell>;

LengthValidityProfile length_validity_profile(const std::vector<Candidate>& candidates);

// Tab-separated heatmap table of the profile.
std::string render_length_validity_table(const LengthValidityProfile& profile);

extern template GeneratedSpans generate_spans<float>(
    const model::ModelConfig&, const model::ParametersT<float>&, const std::vector<int>&,
    const PromptSpec&, const SamplerConfig&, Rng&, const bpe::Vocabulary&);
extern template GeneratedSpans generate_spans<double>(
    const model::ModelConfig&, const model::ParametersT<double>&, const std::vector<int>&,
    const PromptSpec&, const SamplerConfig&, Rng&, const bpe::Vocabulary&);
extern template std::vector<Candidate> batch_generate<float>(
    const model::ModelConfig&, const model::ParametersT<float>&, const std::string&, int,
    const BatchSettings&, const bpe::Vocabulary&);
extern template std::vector<Candidate> batch_generate<double>(
    const model::ModelConfig&, const model::ParametersT<double>&, const std::string&, int,
    const BatchSettings&, const bpe::Vocabulary&);

}  // namespace cms::gen
