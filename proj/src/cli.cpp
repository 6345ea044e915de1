#include "cms/cli.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "cms/s2s_generate.hpp"
#include "cms/smiles.hpp"

namespace cms::cli {

namespace fs = std::filesystem;

namespace {

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, v);
  return buf;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw bpe::IoError("cannot open: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

void ensure_parent_dirs(const RunConfig& config) {
  fs::create_directories(config.out_dir);
  fs::create_directories(config.checkpoint_dir);
  const fs::path vocab_parent = fs::path(config.vocab_path).parent_path();
  if (!vocab_parent.empty()) fs::create_directories(vocab_parent);
}

void snapshot(const RunConfig& config) {
  ensure_parent_dirs(config);
  write_resolved_config(config, config.out_dir + "/resolved_config.txt");
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

long long to_int(const std::string& v) { return std::stoll(v); }
double to_double(const std::string& v) { return std::stod(v); }
bool to_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw ConfigError("expected a boolean, got '" + v + "'");
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = std::stoull(v); }},
      {"workers", [](RunConfig& c, const std::string& v) { c.workers = static_cast<int>(to_int(v)); }},
      {"paths.corpus", [](RunConfig& c, const std::string& v) { c.corpus_path = v; }},
      {"paths.vocab", [](RunConfig& c, const std::string& v) { c.vocab_path = v; }},
      {"paths.checkpoints", [](RunConfig& c, const std::string& v) { c.checkpoint_dir = v; }},
      {"paths.scores", [](RunConfig& c, const std::string& v) { c.scores_path = v; }},
      {"paths.out", [](RunConfig& c, const std::string& v) { c.out_dir = v; }},
      {"tokenizer.target", [](RunConfig& c, const std::string& v) { c.tokenizer_target = static_cast<int>(to_int(v)); }},
      {"tokenizer.n_max", [](RunConfig& c, const std::string& v) { c.n_max = static_cast<int>(to_int(v)); }},
      {"tokenizer.l_max", [](RunConfig& c, const std::string& v) { c.l_max = static_cast<int>(to_int(v)); }},
      {"model.n_layers", [](RunConfig& c, const std::string& v) { c.model.n_layers = static_cast<int>(to_int(v)); }},
      {"model.n_heads", [](RunConfig& c, const std::string& v) { c.model.n_heads = static_cast<int>(to_int(v)); }},
      {"model.d_model", [](RunConfig& c, const std::string& v) { c.model.d_model = static_cast<int>(to_int(v)); }},
      {"model.d_ff", [](RunConfig& c, const std::string& v) { c.model.d_ff = static_cast<int>(to_int(v)); }},
      {"model.context", [](RunConfig& c, const std::string& v) { c.model.context_length = static_cast<int>(to_int(v)); }},
      {"model.dropout", [](RunConfig& c, const std::string& v) { c.model.dropout = to_double(v); }},
      {"model.precision", [](RunConfig& c, const std::string& v) { c.model.precision_bits = static_cast<int>(to_int(v)); }},
      {"train.p", [](RunConfig& c, const std::string& v) { c.mask_fraction = to_double(v); }},
      {"train.batch", [](RunConfig& c, const std::string& v) { c.batch_size = static_cast<int>(to_int(v)); }},
      {"train.lr", [](RunConfig& c, const std::string& v) { c.lr = to_double(v); }},
      {"train.clip", [](RunConfig& c, const std::string& v) { c.clip_norm = to_double(v); }},
      {"train.cosine", [](RunConfig& c, const std::string& v) { c.cosine_decay = to_bool(v); }},
      {"train.phase1.epochs", [](RunConfig& c, const std::string& v) { c.phase1_epochs = static_cast<int>(to_int(v)); }},
      {"train.phase2.epochs", [](RunConfig& c, const std::string& v) { c.phase2_epochs = static_cast<int>(to_int(v)); }},
      {"train.phase2.single", [](RunConfig& c, const std::string& v) { c.phase2_single_epochs = static_cast<int>(to_int(v)); }},
      {"train.phase3.epochs", [](RunConfig& c, const std::string& v) { c.phase3_epochs = static_cast<int>(to_int(v)); }},
      {"generate.n_samples", [](RunConfig& c, const std::string& v) { c.n_samples = static_cast<int>(to_int(v)); }},
      {"generate.masked_cap", [](RunConfig& c, const std::string& v) { c.masked_len_cap = static_cast<int>(to_int(v)); }},
      {"score.top_k", [](RunConfig& c, const std::string& v) { c.top_k = static_cast<int>(to_int(v)); }},
      {"score.include_similarity",
       [](RunConfig& c, const std::string& v) {
         const bool include = to_bool(v);
         c.bounds = include ? score::NormBounds{} : score::NormBounds::without_similarity();
       }},
      {"score.docking_lo", [](RunConfig& c, const std::string& v) { c.bounds.docking_lo = to_double(v); }},
      {"score.docking_hi", [](RunConfig& c, const std::string& v) { c.bounds.docking_hi = to_double(v); }},
      {"score.solubility_lo", [](RunConfig& c, const std::string& v) { c.bounds.solubility_lo = to_double(v); }},
      {"score.solubility_hi", [](RunConfig& c, const std::string& v) { c.bounds.solubility_hi = to_double(v); }},
  };
  return table;
}

void load_into(RunConfig& config, const std::string& path, int depth) {
  if (depth > 8) throw ConfigError("include depth exceeded at " + path);
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\t' || line.back() == '\r'))
      line.pop_back();
    std::size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    line = line.substr(start);

    if (line.rfind("include ", 0) == 0) {
      fs::path target = line.substr(8);
      if (target.is_relative()) target = fs::path(path).parent_path() / target;
      load_into(config, target.string(), depth + 1);
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    apply_override(config, key, value);
  }
}

gen::SamplerConfig default_s2s_sampler() {
  gen::SamplerConfig sampler;
  sampler.top_k = 10;
  sampler.top_p = 0.9;
  return sampler;
}

std::string stamp_path(const RunConfig& config) { return config.out_dir + "/selfcheck.ok"; }

void write_stamp(const RunConfig& config, std::uint64_t vocab_hash) {
  std::ofstream out(stamp_path(config), std::ios::binary);
  out << "CMSSELFCHECK v1\nvocab_hash=" << hex64(vocab_hash) << "\nstatus=ok\n";
}

bool stamp_matches(const RunConfig& config, std::uint64_t vocab_hash) {
  std::ifstream in(stamp_path(config));
  if (!in) return false;
  std::string header, hash_line, status;
  std::getline(in, header);
  std::getline(in, hash_line);
  std::getline(in, status);
  return header == "CMSSELFCHECK v1" && hash_line == "vocab_hash=" + hex64(vocab_hash) &&
         status == "status=ok";
}

std::string spec_to_text(const gen::PromptSpec& spec) {
  if (spec.markers.empty()) return "-";
  std::string out;
  for (const auto& m : spec.markers) {
    if (!out.empty()) out += ";";
    out += (m.kind == corpus::SpanKind::Mask ? "mask" : "s2s");
    out += ":" + std::to_string(m.start) + ":" + std::to_string(m.masked_length) + ":" +
           std::to_string(m.generated_length) + ":" + std::to_string(m.index);
  }
  return out;
}

gen::PromptSpec spec_from_text(const std::string& text) {
  gen::PromptSpec spec;
  if (text == "-") return spec;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    gen::Marker m;
    char kind[8] = {0};
    if (std::sscanf(item.c_str(), "%7[a-z2]:%d:%d:%d:%d", kind, &m.start, &m.masked_length,
                    &m.generated_length, &m.index) != 5)
      throw ConfigError("bad spec field: " + item);
    m.kind = std::string(kind) == "mask" ? corpus::SpanKind::Mask : corpus::SpanKind::S2s;
    spec.markers.push_back(m);
  }
  return spec;
}

}  // namespace

RunConfig default_config() { return RunConfig{}; }

void apply_override(RunConfig& config, const std::string& key, const std::string& value) {
  auto it = setters().find(key);
  if (it == setters().end()) throw ConfigError("unknown config key: " + key);
  try {
    it->second(config, value);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("bad value for " + key + ": " + e.what());
  }
}

RunConfig load_config(const std::string& path) {
  RunConfig config;
  load_into(config, path, 0);
  return config;
}

std::string render_config(const RunConfig& c) {
  std::ostringstream out;
  out << "seed=" << c.seed << "\n"
      << "workers=" << c.workers << "\n"
      << "paths.corpus=" << c.corpus_path << "\n"
      << "paths.vocab=" << c.vocab_path << "\n"
      << "paths.checkpoints=" << c.checkpoint_dir << "\n"
      << "paths.scores=" << c.scores_path << "\n"
      << "paths.out=" << c.out_dir << "\n"
      << "tokenizer.target=" << c.tokenizer_target << "\n"
      << "tokenizer.n_max=" << c.n_max << "\n"
      << "tokenizer.l_max=" << c.l_max << "\n"
      << "model.n_layers=" << c.model.n_layers << "\n"
      << "model.n_heads=" << c.model.n_heads << "\n"
      << "model.d_model=" << c.model.d_model << "\n"
      << "model.d_ff=" << c.model.d_ff << "\n"
      << "model.context=" << c.model.context_length << "\n"
      << "model.dropout=" << c.model.dropout << "\n"
      << "model.precision=" << c.model.precision_bits << "\n"
      << "train.p=" << c.mask_fraction << "\n"
      << "train.batch=" << c.batch_size << "\n"
      << "train.lr=" << c.lr << "\n"
      << "train.clip=" << c.clip_norm << "\n"
      << "train.cosine=" << (c.cosine_decay ? 1 : 0) << "\n"
      << "train.phase1.epochs=" << c.phase1_epochs << "\n"
      << "train.phase2.epochs=" << c.phase2_epochs << "\n"
      << "train.phase2.single=" << c.phase2_single_epochs << "\n"
      << "train.phase3.epochs=" << c.phase3_epochs << "\n"
      << "generate.n_samples=" << c.n_samples << "\n"
      << "generate.masked_cap=" << c.masked_len_cap << "\n"
      << "score.top_k=" << c.top_k << "\n"
      << "score.include_similarity=" << (c.bounds.include_similarity ? 1 : 0) << "\n"
      << "score.docking_lo=" << c.bounds.docking_lo << "\n"
      << "score.docking_hi=" << c.bounds.docking_hi << "\n"
      << "score.solubility_lo=" << c.bounds.solubility_lo << "\n"
      << "score.solubility_hi=" << c.bounds.solubility_hi << "\n";
  return out.str();
}

void write_resolved_config(const RunConfig& config, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw bpe::IoError("cannot write: " + path);
  out << render_config(config);
}

std::string checkpoint_path(const RunConfig& config, int phase) {
  return config.checkpoint_dir + "/phase" + std::to_string(phase) + ".ckpt";
}

void cmd_train_tokenizer(const RunConfig& config) {
  snapshot(config);
  const auto corpus = read_lines(config.corpus_path);
  const bpe::Vocabulary vocab =
      bpe::train_bpe(corpus, config.tokenizer_target, config.n_max, config.l_max);
  bpe::save_vocab(vocab, config.vocab_path);
  std::cout << "tokenizer vocab_size=" << vocab.size()
            << " merges=" << vocab.merges().size()
            << " hash=" << hex64(bpe::vocab_file_hash(config.vocab_path)) << "\n";
}

namespace {

struct LoadedModel {
  train::Checkpoint checkpoint;
  int phase = 0;
};

LoadedModel load_best_checkpoint(const RunConfig& config) {
  for (int phase = 3; phase >= 1; --phase) {
    const std::string path = checkpoint_path(config, phase);
    if (fs::exists(path)) return {train::load_checkpoint(path), phase};
  }
  throw train::IoError("no checkpoint under " + config.checkpoint_dir);
}

corpus::S2sTargetFn s2s_fn_from_phase2(const RunConfig& config,
                                       const bpe::Vocabulary& vocab) {
  const train::Checkpoint ckpt = train::load_checkpoint(checkpoint_path(config, 2));
  auto frozen = std::make_shared<model::Parameters>(ckpt.params);
  return corpus::make_s2s_target_fn<double>(frozen, ckpt.config, vocab,
                                            default_s2s_sampler());
}

}  // namespace

void cmd_build_corpus(const RunConfig& config, int phase, std::uint64_t epoch_seed) {
  snapshot(config);
  const auto dataset = read_lines(config.corpus_path);
  const bpe::Vocabulary vocab = bpe::load_vocab(config.vocab_path);
  const std::uint64_t vocab_hash = bpe::vocab_file_hash(config.vocab_path);

  corpus::EpochOptions options;
  options.p = config.mask_fraction;
  options.n_max = vocab.n_max();
  options.l_max = vocab.l_max();
  options.epoch_seed = epoch_seed != 0 ? epoch_seed : mix64(config.seed ^ hash64("corpus"));
  corpus::S2sTargetFn s2s_fn;
  switch (phase) {
    case 1: options.phase = corpus::Phase::CLM; break;
    case 2: options.phase = corpus::Phase::CM; break;
    case 3:
      options.phase = corpus::Phase::CMS;
      s2s_fn = s2s_fn_from_phase2(config, vocab);
      break;
    default: throw train::PhaseOrderViolation("phase must be 1, 2 or 3");
  }

  const corpus::EpochResult epoch = build_epoch(dataset, options, vocab, s2s_fn);
  const std::string path = config.out_dir + "/corpus_phase" + std::to_string(phase) + ".tsv";
  save_corpus(epoch, path, vocab_hash);
  std::cout << "corpus phase=" << phase << " examples=" << epoch.examples.size()
            << " skipped=" << epoch.skipped << " path=" << path << "\n";
}

void cmd_pretrain(const RunConfig& config, int phase) {
  snapshot(config);
  const auto dataset = read_lines(config.corpus_path);
  const bpe::Vocabulary vocab = bpe::load_vocab(config.vocab_path);
  const std::uint64_t vocab_hash = bpe::vocab_file_hash(config.vocab_path);

  train::PhaseSchedule schedule = train::PhaseSchedule::defaults_for_phase(phase);
  schedule.epochs = phase == 1   ? config.phase1_epochs
                    : phase == 2 ? config.phase2_epochs
                                 : config.phase3_epochs;
  schedule.phase2_single_mask_epochs = config.phase2_single_epochs;
  schedule.mask_fraction = config.mask_fraction;
  schedule.batch_size = config.batch_size;
  schedule.adam.lr = config.lr;
  schedule.adam.clip_norm = config.clip_norm;
  schedule.cosine_decay = config.cosine_decay;
  schedule.seed = config.seed;

  model::ModelConfig model_config = config.model;
  model_config.vocab_size = vocab.size();

  std::optional<train::Checkpoint> resume;
  if (fs::exists(checkpoint_path(config, phase))) {
    resume = train::load_checkpoint(checkpoint_path(config, phase));
  } else if (phase > 1) {
    resume = train::load_checkpoint(checkpoint_path(config, phase - 1));
  }

  corpus::S2sTargetFn s2s_fn;
  if (phase == 3) {
    if (!stamp_matches(config, vocab_hash))
      throw SelfcheckRequired(
          "phase 3 requires a green selfcheck stamp for this tokenizer; run selfcheck");
    s2s_fn = s2s_fn_from_phase2(config, vocab);
  }

  std::ofstream metrics(config.out_dir + "/metrics.log", std::ios::app);
  const train::TrainResult result = train::train_phase(
      schedule, dataset, vocab, vocab_hash, model_config, std::move(resume), s2s_fn,
      &metrics);
  save_checkpoint(result.checkpoint, checkpoint_path(config, phase));
  std::cout << "pretrain phase=" << phase << " epochs=" << result.epoch_losses.size()
            << " final_loss="
            << (result.epoch_losses.empty() ? 0.0 : result.epoch_losses.back())
            << " skipped_long=" << result.skipped_too_long
            << " skipped_infeasible=" << result.skipped_infeasible << "\n";
}

void save_candidates(const CandidatesFile& file, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw bpe::IoError("cannot write: " + path);
  out << "CMSCAND v1 seed=" << hex64(file.seed) << " source=" << file.source << "\n";
  for (const auto& record : file.records) {
    const auto& c = record.candidate;
    std::string spans = "-";
    if (!c.spans.empty()) {
      spans.clear();
      for (std::size_t i = 0; i < c.spans.size(); ++i) {
        if (i > 0) spans += ";";
        spans += c.spans[i];
      }
      if (spans.empty()) spans = ";";  // all spans empty but present
    }
    char scores[192];
    if (record.scored) {
      std::snprintf(scores, sizeof(scores), "%.9f\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\t%s",
                    record.reward, c.scores.docking, c.scores.druglikeness,
                    c.scores.synthesizability, c.scores.solubility, c.scores.similarity,
                    c.scores.external_docking ? "external" : "proxy");
    } else {
      std::snprintf(scores, sizeof(scores), "-\t-\t-\t-\t-\t-\t-");
    }
    out << c.source << "\t" << c.prompt << "\t" << spec_to_text(c.spec) << "\t" << spans
        << "\t" << c.generated << "\t" << (c.valid ? 1 : 0) << "\t" << (c.failed ? 1 : 0)
        << "\t" << (record.scored ? 1 : 0) << "\t" << scores << "\n";
  }
  if (!out) throw bpe::IoError("write failed: " + path);
}

CandidatesFile load_candidates(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw bpe::IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("CMSCAND v1 seed=", 0) != 0)
    throw bpe::FormatVersionMismatch("bad candidates header: '" + line + "'");
  CandidatesFile file;
  file.seed = std::stoull(line.substr(16, 16), nullptr, 16);
  const std::size_t source_at = line.find(" source=");
  file.source = line.substr(source_at + 8);

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      if (tab == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    if (fields.size() != 15)
      throw bpe::FormatVersionMismatch("bad candidates record with " +
                                       std::to_string(fields.size()) + " fields");
    CandidateRecord record;
    record.candidate.source = fields[0];
    record.candidate.prompt = fields[1];
    record.candidate.spec = spec_from_text(fields[2]);
    if (fields[3] != "-") {
      std::string spans_text = fields[3] == ";" ? "" : fields[3];
      std::stringstream ss(spans_text);
      std::string span;
      record.candidate.spans.clear();
      while (std::getline(ss, span, ';')) record.candidate.spans.push_back(span);
      while (record.candidate.spans.size() < record.candidate.spec.markers.size())
        record.candidate.spans.emplace_back();
    }
    record.candidate.generated = fields[4];
    record.candidate.valid = fields[5] == "1";
    record.candidate.failed = fields[6] == "1";
    record.scored = fields[7] == "1";
    if (record.scored) {
      record.reward = std::stod(fields[8]);
      record.candidate.scores.docking = std::stod(fields[9]);
      record.candidate.scores.druglikeness = std::stod(fields[10]);
      record.candidate.scores.synthesizability = std::stod(fields[11]);
      record.candidate.scores.solubility = std::stod(fields[12]);
      record.candidate.scores.similarity = std::stod(fields[13]);
      record.candidate.scores.external_docking = fields[14] == "external";
      record.candidate.scores.validity = record.candidate.valid;
    }
    file.records.push_back(std::move(record));
  }
  return file;
}

void cmd_generate(const RunConfig& config, const std::string& source_arg) {
  snapshot(config);
  const bpe::Vocabulary vocab = bpe::load_vocab(config.vocab_path);
  const LoadedModel loaded = load_best_checkpoint(config);
  if (loaded.checkpoint.tokenizer_hash != bpe::vocab_file_hash(config.vocab_path))
    throw train::TokenizerMismatch("checkpoint tokenizer differs from " + config.vocab_path);

  std::vector<std::string> sources;
  if (!source_arg.empty() && source_arg[0] == '@') {
    sources = read_lines(source_arg.substr(1));
  } else {
    sources.push_back(source_arg);
  }

  gen::BatchSettings settings;
  settings.l_max = vocab.l_max();
  settings.masked_len_cap = config.masked_len_cap;
  settings.sampler_grid = gen::BatchSettings::default_grid();
  settings.seed = config.seed;
  settings.workers = config.workers;

  for (std::size_t s = 0; s < sources.size(); ++s) {
    const auto candidates = gen::batch_generate<double>(
        loaded.checkpoint.config, loaded.checkpoint.params, sources[s], config.n_samples,
        settings, vocab);
    CandidatesFile file;
    file.seed = config.seed;
    file.source = sources[s];
    file.records.reserve(candidates.size());
    for (const auto& c : candidates) file.records.push_back({c, 0.0, false});
    const std::string path =
        sources.size() == 1
            ? config.out_dir + "/candidates.tsv"
            : config.out_dir + "/candidates_" + std::to_string(s) + ".tsv";
    save_candidates(file, path);
    long long valid = 0;
    for (const auto& c : candidates) valid += c.valid ? 1 : 0;
    std::cout << "generate source=" << sources[s] << " n=" << candidates.size()
              << " valid_fraction="
              << static_cast<double>(valid) / static_cast<double>(candidates.size())
              << " path=" << path << "\n";
  }
}

void cmd_score(const RunConfig& config, const std::string& candidates_path) {
  snapshot(config);
  CandidatesFile file = load_candidates(candidates_path);

  std::optional<score::ExternalScores> external;
  if (!config.scores_path.empty()) external = score::external_scores(config.scores_path);

  std::vector<score::ScoredCandidate> scored;
  scored.reserve(file.records.size());
  for (auto& record : file.records) {
    record.candidate.scores = score::score_candidate(
        record.candidate.generated, file.source, external ? &*external : nullptr);
    record.candidate.valid = record.candidate.scores.validity;
    record.reward = record.candidate.valid
                        ? score::normalized_reward(record.candidate.scores, config.bounds)
                        : 0.0;
    record.scored = true;
    scored.push_back({record.candidate, record.reward});
  }

  std::string base = candidates_path;
  if (base.size() > 4 && base.substr(base.size() - 4) == ".tsv")
    base = base.substr(0, base.size() - 4);
  save_candidates(file, base + ".scored.tsv");

  const score::TopSelection top = score::select_top(scored, config.top_k);
  CandidatesFile top_file;
  top_file.seed = file.seed;
  top_file.source = file.source;
  for (const auto& t : top.top) top_file.records.push_back({t.candidate, t.reward, true});
  save_candidates(top_file, base + ".top.tsv");

  std::cout << "score candidates=" << file.records.size() << " top_k=" << top.top.size()
            << " top_mean_reward=" << top.mean_reward
            << (top.fewer_than_k ? " fewer_than_k" : "") << " path=" << base
            << ".scored.tsv\n";
}

void cmd_report(const RunConfig& config, const std::vector<std::string>& scored_paths) {
  snapshot(config);
  std::vector<score::MoleculeResult> results;
  std::vector<gen::Candidate> all_candidates;
  for (const auto& path : scored_paths) {
    const CandidatesFile file = load_candidates(path);
    score::MoleculeResult result;
    result.reference = file.source;
    for (const auto& record : file.records) {
      if (!record.scored)
        throw ConfigError("report needs scored candidates; run the score command first");
      result.scored.push_back({record.candidate, record.reward});
      all_candidates.push_back(record.candidate);
    }
    results.push_back(std::move(result));
  }

  const std::string table = score::report(results, config.bounds);
  std::ofstream report_out(config.out_dir + "/report.tsv", std::ios::binary);
  report_out << table;

  const auto profile = gen::length_validity_profile(all_candidates);
  std::ofstream heat_out(config.out_dir + "/length_validity.tsv", std::ios::binary);
  heat_out << gen::render_length_validity_table(profile);

  std::cout << table;
  std::cout << "report path=" << config.out_dir << "/report.tsv heatmap="
            << config.out_dir << "/length_validity.tsv\n";
}

int cmd_selfcheck(const RunConfig& config) {
  snapshot(config);
  bool all_green = true;
  auto check = [&](const char* name, bool pass) {
    std::cout << "selfcheck " << name << " " << (pass ? "PASS" : "FAIL") << "\n";
    all_green = all_green && pass;
  };

  // exact analytic gradients on a tiny model
  {
    model::ModelConfig tiny;
    tiny.n_layers = 1;
    tiny.n_heads = 2;
    tiny.d_model = 8;
    tiny.d_ff = 16;
    tiny.context_length = 8;
    tiny.vocab_size = 11;
    const double err = model::grad_check(tiny, config.seed + 1, 1e-5, 200);
    check("grad_check", err < 1e-4);
  }

  // sampler laws
  {
    Rng rng(config.seed + 2);
    bool greedy_ok = true;
    for (int iter = 0; iter < 200; ++iter) {
      Eigen::VectorXd logits(16);
      for (int i = 0; i < 16; ++i) logits[i] = rng.normal(0.0, 2.0);
      Eigen::Index argmax;
      logits.maxCoeff(&argmax);
      gen::SamplerConfig greedy;
      greedy.top_k = 1;
      if (gen::sample_toppk(logits, greedy, rng) != static_cast<int>(argmax))
        greedy_ok = false;
    }
    check("sampler_greedy", greedy_ok);

    gen::SamplerConfig full;
    full.top_k = 8;
    full.top_p = 1.0;
    Eigen::VectorXd logits = Eigen::VectorXd::Zero(8);
    std::vector<long long> counts(8, 0);
    for (int draw = 0; draw < 8000; ++draw) ++counts[static_cast<std::size_t>(
        gen::sample_toppk(logits, full, rng))];
    bool coverage = true;
    for (long long c : counts) coverage = coverage && c > 800;
    check("sampler_coverage", coverage);
  }

  const auto corpus_lines = read_lines(config.corpus_path);

  // corpus reconstruction
  {
    Rng rng(config.seed + 3);
    bool ok = true;
    int tested = 0;
    const int target = static_cast<int>(std::min<std::size_t>(200, corpus_lines.size()));
    for (std::size_t i = 0; i < corpus_lines.size() * 8 && tested < target; ++i) {
      const std::string& source = corpus_lines[i % corpus_lines.size()];
      corpus::MaskPlan plan;
      try {
        plan = corpus::plan_masks(source, 0.15, 1 + static_cast<int>(rng.next_below(2)), rng);
      } catch (const std::exception&) {
        continue;
      }
      corpus::TrainingExample example;
      example.phase = corpus::Phase::CM;
      example.source = source;
      example.plan = plan;
      example.surface = corpus::apply_cm(source, plan);
      if (corpus::demask(example) != source) ok = false;
      ++tested;
    }
    check("corpus_reconstruction", ok && tested == target);
  }

  // tokenizer round trip and sentinel atomicity
  {
    bool ok = true;
    std::uint64_t vocab_hash = 0;
    try {
      const bpe::Vocabulary vocab = bpe::load_vocab(config.vocab_path);
      vocab_hash = bpe::vocab_file_hash(config.vocab_path);
      for (const auto& s : corpus_lines)
        if (bpe::decode(bpe::encode(s, vocab), vocab) != s) ok = false;
      for (int id = 0; id < vocab.sentinel_count(); ++id) {
        const auto ids = bpe::encode(vocab.sentinel_of(id)->surface(), vocab);
        if (ids.size() != 1 || ids[0] != id) ok = false;
      }
    } catch (const std::exception&) {
      ok = false;
    }
    check("tokenizer_round_trip", ok);
    if (all_green) write_stamp(config, vocab_hash);
  }

  std::cout << "selfcheck " << (all_green ? "GREEN" : "RED") << "\n";
  return all_green ? 0 : 1;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"causally masked seq2seq molecular toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string out_override;
  std::optional<std::uint64_t> seed_override;
  std::optional<int> workers_override;
  app.add_option("--config", config_path, "key=value config file");
  app.add_option("--seed", seed_override, "global seed override");
  app.add_option("--workers", workers_override, "worker count override");
  app.add_option("--out", out_override, "output directory override");

  int phase = 1;
  std::uint64_t epoch_seed = 0;
  std::string source_arg;
  std::string candidates_path;
  std::vector<std::string> scored_paths;

  auto* tok = app.add_subcommand("train-tokenizer", "train and write the vocabulary");
  auto* build = app.add_subcommand("build-corpus", "emit one corpus epoch for inspection");
  build->add_option("--phase", phase, "training phase (1, 2 or 3)")->required();
  build->add_option("--epoch-seed", epoch_seed, "epoch seed (default derives from seed)");
  auto* pre = app.add_subcommand("pretrain", "run one training phase");
  pre->add_option("--phase", phase, "training phase (1, 2 or 3)")->required();
  auto* generate = app.add_subcommand("generate", "sample candidates for a molecule");
  generate->add_option("--source", source_arg, "SMILES string or @file of sources")
      ->required();
  auto* scorecmd = app.add_subcommand("score", "score a candidates file");
  scorecmd->add_option("--candidates", candidates_path, "candidates file")->required();
  auto* reportcmd = app.add_subcommand("report", "emit the benchmark table and heatmap");
  reportcmd->add_option("--results", scored_paths, "scored candidate files")->required();
  auto* self = app.add_subcommand("selfcheck", "run the built-in verification battery");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    RunConfig config = config_path.empty() ? default_config() : load_config(config_path);
    if (seed_override) config.seed = *seed_override;
    if (workers_override) config.workers = *workers_override;
    if (!out_override.empty()) config.out_dir = out_override;

    if (tok->parsed()) cmd_train_tokenizer(config);
    if (build->parsed()) cmd_build_corpus(config, phase, epoch_seed);
    if (pre->parsed()) cmd_pretrain(config, phase);
    if (generate->parsed()) cmd_generate(config, source_arg);
    if (scorecmd->parsed()) cmd_score(config, candidates_path);
    if (reportcmd->parsed()) cmd_report(config, scored_paths);
    if (self->parsed()) return cmd_selfcheck(config);
    return 0;
  } catch (const std::exception& e) {
    const char* code = "Error";
    if (dynamic_cast<const ConfigError*>(&e) != nullptr) code = "ConfigError";
    else if (dynamic_cast<const SelfcheckRequired*>(&e) != nullptr) code = "SelfcheckRequired";
    else if (dynamic_cast<const train::PhaseOrderViolation*>(&e) != nullptr) code = "PhaseOrderViolation";
    else if (dynamic_cast<const train::TokenizerMismatch*>(&e) != nullptr) code = "TokenizerMismatch";
    else if (dynamic_cast<const train::HashMismatch*>(&e) != nullptr) code = "HashMismatch";
    else if (dynamic_cast<const train::VersionMismatch*>(&e) != nullptr) code = "VersionMismatch";
    else if (dynamic_cast<const train::IoError*>(&e) != nullptr) code = "IoError";
    else if (dynamic_cast<const bpe::IoError*>(&e) != nullptr) code = "IoError";
    else if (dynamic_cast<const bpe::FormatVersionMismatch*>(&e) != nullptr) code = "FormatVersionMismatch";
    else if (dynamic_cast<const bpe::MalformedSentinel*>(&e) != nullptr) code = "MalformedSentinel";
    else if (dynamic_cast<const smiles::ParseError*>(&e) != nullptr) code = "ParseError";
    else if (dynamic_cast<const corpus::PlanInfeasible*>(&e) != nullptr) code = "PlanInfeasible";
    else if (dynamic_cast<const corpus::PlanMismatch*>(&e) != nullptr) code = "PlanMismatch";
    else if (dynamic_cast<const corpus::CorruptExample*>(&e) != nullptr) code = "CorruptExample";
    else if (dynamic_cast<const gen::SpecInfeasible*>(&e) != nullptr) code = "SpecInfeasible";
    else if (dynamic_cast<const std::invalid_argument*>(&e) != nullptr) code = "InvalidArgument";
    std::cerr << "error: code=" << code << " msg=\"" << e.what() << "\"\n";
    return 1;
  }
}

}  // namespace cms::cli
