#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cms/bpe.hpp"
#include "cms/hash.hpp"

namespace cms::corpus {

struct SourceTooShort : std::runtime_error {
  explicit SourceTooShort(const std::string& what) : std::runtime_error(what) {}
};
struct PlanInfeasible : std::runtime_error {
  explicit PlanInfeasible(const std::string& what) : std::runtime_error(what) {}
};
struct PlanMismatch : std::runtime_error {
  explicit PlanMismatch(const std::string& what) : std::runtime_error(what) {}
};
struct CorruptExample : std::runtime_error {
  explicit CorruptExample(const std::string& what) : std::runtime_error(what) {}
};

enum class SpanKind { Mask, S2s };

struct Span {
  SpanKind kind = SpanKind::Mask;
  int start = 0;
  int masked_length = 0;  // 0 only in insertion-style generation prompts
  int target_length = 0;
  int index = 1;          // sentinel index
};

// The six random variables of a corruption instance: span starts, masked
// lengths and target lengths for up to two masks plus one s2s span.
struct MaskPlan {
  std::vector<Span> spans;  // ascending start, non-overlapping
  int source_length = 0;
  double mask_fraction = 0.0;

  int mask_span_count() const;
  bool has_s2s() const;
  const Span* s2s_span() const;
};

enum class Phase { CLM, CM, CMS };

const char* phase_name(Phase phase);
Phase phase_from_name(const std::string& name);

struct TrainingExample {
  Phase phase = Phase::CLM;
  std::string surface;    // corrupted surface, sentinels and tail included
  std::vector<int> ids;   // [BOS] + encode(surface) + [EOS]
  std::string source;
  MaskPlan plan;
};

// Mask-span selection. n=1: one span of length floor(len*p) with a uniform
// start. n=2: the budget splits as m1 ~ U[1, budget-1], m2 = budget - m1;
// idx2 ~ U[idx1 + m1 + 1, len - m2 - 1] with idx1 resampled (up to 64
// times) whenever that interval is empty.
MaskPlan plan_masks(const std::string& source, double p, int n, Rng& rng,
                    int l_max = 32);

// In-place sentinel substitution plus tail relocation: each span becomes
// <mask_i:n> in the body, and the tail appends <mask_i:n> followed by the
// original span characters, in span order.
std::string apply_cm(const std::string& source, const MaskPlan& plan);

// Inverse of apply_cm: splices tail contents back into the body.
std::string demask(const TrainingExample& example);

// Adds one s2s span with a start drawn uniformly among positions that avoid
// every existing span.
MaskPlan plan_s2s(const std::string& source, const MaskPlan& existing,
                  int s2s_masked_length, int target_length, Rng& rng);

// The CM prompt used to synthesize s2s targets: only the s2s span is masked
// (as <mask_1:t>), the rest of the source stays intact, and the sentinel
// repeats at the end.
std::string render_s2s_prompt(const std::string& source, const MaskPlan& plan);

// Full CMS surface: mask spans follow apply_cm rules; the s2s span becomes
// <s2s_1_t: span > in the body; the tail carries mask spans first, then the
// s2s construct followed by the target characters.
std::string apply_cms(const std::string& source, const MaskPlan& plan,
                      const std::string& target);

// Splices an example back together. CM gives the source; CMS gives the
// source with the s2s span replaced by the tail target (equal to the source
// exactly when the target is the original span).
std::string reconstruct(const TrainingExample& example);

// Target provider for CMS corpus construction; returns the generated span
// and a warning flag (set when an exact-length span was not obtained).
using S2sTargetFn = std::function<std::pair<std::string, bool>(
    const std::string& source, const MaskPlan& plan, Rng& rng)>;

struct EpochOptions {
  Phase phase = Phase::CLM;
  double p = 0.15;
  bool single_mask_only = false;  // phase-2 opening sub-schedule
  // {one mask, two masks, one mask + one s2s, two masks + one s2s}
  std::array<double, 4> cms_mix{0.1, 0.1, 0.4, 0.4};
  int n_max = 2;
  int l_max = 32;
  int s2s_len_cap = 12;  // s2s masked length ~ U[1, min(cap, len/3)]
  std::uint64_t epoch_seed = 0;
};

struct EpochResult {
  std::vector<TrainingExample> examples;
  std::vector<std::uint64_t> seeds;  // per-example derived seeds
  int skipped = 0;
};

// Draws a phase-3 configuration index into EpochOptions::cms_mix.
int draw_cms_config(Rng& rng, const std::array<double, 4>& mix);

// Regenerates corruption plans for one epoch. Example i draws from a stream
// derived from (epoch_seed, i), so results are independent of sharding.
EpochResult build_epoch(const std::vector<std::string>& dataset,
                        const EpochOptions& options, const bpe::Vocabulary& vocab,
                        const S2sTargetFn& s2s_target = {});

void save_corpus(const EpochResult& epoch, const std::string& path,
                 std::uint64_t tokenizer_hash);
struct CorpusFile {
  std::uint64_t tokenizer_hash = 0;
  std::vector<TrainingExample> examples;  // ids left empty
  std::vector<std::uint64_t> seeds;
};
CorpusFile load_corpus(const std::string& path);

}  // namespace cms::corpus
