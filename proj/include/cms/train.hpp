#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cms/bpe.hpp"
#include "cms/corpus.hpp"
#include "cms/model.hpp"

namespace cms::train {

struct PhaseOrderViolation : std::runtime_error {
  explicit PhaseOrderViolation(const std::string& what) : std::runtime_error(what) {}
};
struct TokenizerMismatch : std::runtime_error {
  explicit TokenizerMismatch(const std::string& what) : std::runtime_error(what) {}
};
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};
struct VersionMismatch : std::runtime_error {
  explicit VersionMismatch(const std::string& what) : std::runtime_error(what) {}
};
struct HashMismatch : std::runtime_error {
  explicit HashMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global-norm clip; <= 0 disables
};

struct AdamState {
  model::Parameters m, v;
  long long step = 0;
};

// Clips the gradient (global norm), then takes one bias-corrected Adam step.
void adam_step(model::Parameters& params, model::Gradients grads, AdamState& state,
               const AdamConfig& config);

struct PhaseSchedule {
  int phase = 1;  // 1 CLM, 2 CM, 3 CMS
  int epochs = 10;
  int phase2_single_mask_epochs = 10;  // opening sub-schedule of phase 2
  std::array<double, 4> phase3_mix{0.1, 0.1, 0.4, 0.4};
  double mask_fraction = 0.15;
  int batch_size = 24;
  AdamConfig adam;
  bool cosine_decay = false;
  std::uint64_t seed = 0;

  // Default per-phase epoch counts: 10 / 50 (10 single + 40 mixed) / 20.
  static PhaseSchedule defaults_for_phase(int phase);
};

struct Checkpoint {
  model::ModelConfig config;
  model::Parameters params;
  AdamState opt;
  int phase = 0;
  int epoch = 0;  // completed epochs within the phase
  std::uint64_t tokenizer_hash = 0;
  std::uint64_t rng_state = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> epoch_losses;
  long long skipped_too_long = 0;
  long long skipped_infeasible = 0;
};

// Runs one phase over the dataset. Phase 2 requires a phase-1 checkpoint,
// phase 3 a phase-2 checkpoint; resuming inside a phase continues from the
// recorded epoch. Every randomness source derives from (seed, phase, epoch,
// example), so an interrupted run replays exactly.
TrainResult train_phase(const PhaseSchedule& schedule,
                        const std::vector<std::string>& dataset,
                        const bpe::Vocabulary& vocab, std::uint64_t tokenizer_hash,
                        const model::ModelConfig& fresh_config,
                        std::optional<Checkpoint> resume,
                        const corpus::S2sTargetFn& s2s_target = {},
                        std::ostream* metrics = nullptr);

}  // namespace cms::train
