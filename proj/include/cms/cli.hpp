#pragma once

#include <string>
#include <vector>

#include "cms/generate.hpp"
#include "cms/model.hpp"
#include "cms/score.hpp"
#include "cms/train.hpp"

namespace cms::cli {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};
struct SelfcheckRequired : std::runtime_error {
  explicit SelfcheckRequired(const std::string& what) : std::runtime_error(what) {}
};

// Everything a run needs, resolved once and snapshotted next to outputs.
struct RunConfig {
  std::uint64_t seed = 0;
  int workers = 1;

  std::string corpus_path = "data/mini_corpus.smi";
  std::string vocab_path = "out/vocab.txt";
  std::string checkpoint_dir = "out";
  std::string scores_path;  // optional external critic scores (csv)
  std::string out_dir = "out";

  int tokenizer_target = 1024;
  int n_max = 2;
  int l_max = 32;

  model::ModelConfig model{};  // toy defaults; vocab_size filled at run time

  double mask_fraction = 0.15;
  int batch_size = 24;
  double lr = 5e-5;
  double clip_norm = 1.0;
  bool cosine_decay = false;
  int phase1_epochs = 10;
  int phase2_epochs = 50;
  int phase2_single_epochs = 10;
  int phase3_epochs = 20;

  int n_samples = 10000;
  int masked_len_cap = 12;

  score::NormBounds bounds{};
  int top_k = 10;
};

RunConfig default_config();
// Line-oriented key=value file with '#' comments and `include <path>`.
RunConfig load_config(const std::string& path);
void apply_override(RunConfig& config, const std::string& key, const std::string& value);
std::string render_config(const RunConfig& config);
void write_resolved_config(const RunConfig& config, const std::string& path);

std::string checkpoint_path(const RunConfig& config, int phase);

void cmd_train_tokenizer(const RunConfig& config);
void cmd_build_corpus(const RunConfig& config, int phase, std::uint64_t epoch_seed);
void cmd_pretrain(const RunConfig& config, int phase);
// `source_arg` is a SMILES string, or @path to a file of SMILES lines.
void cmd_generate(const RunConfig& config, const std::string& source_arg);
void cmd_score(const RunConfig& config, const std::string& candidates_path);
void cmd_report(const RunConfig& config, const std::vector<std::string>& scored_paths);
// Exit code style: returns 0 when green, 1 otherwise; writes the stamp that
// gates phase-3 pretraining.
int cmd_selfcheck(const RunConfig& config);

// Candidate records shared by generate/score/report.
struct CandidateRecord {
  gen::Candidate candidate;
  double reward = 0.0;
  bool scored = false;
};
struct CandidatesFile {
  std::uint64_t seed = 0;
  std::string source;
  std::vector<CandidateRecord> records;
};
void save_candidates(const CandidatesFile& file, const std::string& path);
CandidatesFile load_candidates(const std::string& path);

int run_cli(int argc, char** argv);

}  // namespace cms::cli
