// Acceptance suite: runs the ten gate criteria end to end against the
// bundled corpus and golden cases, printing one PASS/FAIL line each.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "cms/cli.hpp"
#include "cms/s2s_generate.hpp"
#include "cms/smiles.hpp"
#include "../fixtures.hpp"
#include "../stat_oracles.hpp"

using namespace cms;
namespace fs = std::filesystem;

namespace {

struct Gate {
  int failures = 0;

  void report(const char* id, bool pass, const std::string& detail) {
    std::printf("%s %s %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// A1: demask(apply_cm(...)) identity over 10,000 seeded pairs, under 30 s.
void criterion_a1(Gate& gate, const std::vector<std::string>& corpus) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(20260809);
  long long checked = 0;
  long long mismatches = 0;
  std::size_t i = 0;
  while (checked < 10000) {
    const std::string& source = corpus[i++ % corpus.size()];
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
    if (corpus::demask(example) != source) ++mismatches;
    ++checked;
  }
  const double elapsed = seconds_since(t0);
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "pairs=%lld mismatches=%lld corpus=%zu elapsed=%.1fs", checked,
                mismatches, corpus.size(), elapsed);
  gate.report("A1", mismatches == 0 && corpus.size() >= 2000 && elapsed < 30.0, detail);
}

// ---------------------------------------------------------------------------
// A2: budget exactness, phase-3 mix within +/-0.01, split chi-square.
void criterion_a2(Gate& gate, const std::vector<std::string>& corpus) {
  Rng rng(77001);
  long long budget_errors = 0;
  for (int draw = 0; draw < 100000; ++draw) {
    const std::string& source = corpus[static_cast<std::size_t>(draw) % corpus.size()];
    const int n = 1 + static_cast<int>(rng.next_below(2));
    corpus::MaskPlan plan;
    try {
      plan = corpus::plan_masks(source, 0.15, n, rng);
    } catch (const std::exception&) {
      continue;
    }
    int sum = 0;
    for (const auto& span : plan.spans) sum += span.masked_length;
    if (sum != static_cast<int>(source.size() * 0.15)) ++budget_errors;
  }

  Rng mix_rng(77002);
  const std::array<double, 4> mix{0.1, 0.1, 0.4, 0.4};
  std::array<long long, 4> counts{0, 0, 0, 0};
  for (int draw = 0; draw < 100000; ++draw)
    ++counts[static_cast<std::size_t>(corpus::draw_cms_config(mix_rng, mix))];
  double max_dev = 0.0;
  for (int c = 0; c < 4; ++c)
    max_dev = std::max(max_dev, std::fabs(counts[static_cast<std::size_t>(c)] / 100000.0 -
                                          mix[static_cast<std::size_t>(c)]));

  // chi-square of the two-span scheme against the feasible-triple oracle
  const int len = 30;
  const int budget = 6;
  std::map<std::tuple<int, int, int>, double> expected;
  for (int m1 = 1; m1 <= budget - 1; ++m1) {
    const int m2 = budget - m1;
    std::vector<std::pair<int, int>> feasible;
    for (int idx1 = 0; idx1 <= len - budget - 1; ++idx1) {
      const int lo = idx1 + m1 + 1;
      const int hi = len - m2 - 1;
      if (lo <= hi) feasible.emplace_back(idx1, hi - lo + 1);
    }
    for (const auto& [idx1, interval] : feasible)
      for (int idx2 = idx1 + m1 + 1; idx2 <= len - m2 - 1; ++idx2)
        expected[{m1, idx1, idx2}] = 1.0 / (budget - 1) / feasible.size() / interval;
  }
  Rng split_rng(77003);
  const std::string source(len, 'C');
  std::map<std::tuple<int, int, int>, long long> observed;
  for (int draw = 0; draw < 100000; ++draw) {
    const corpus::MaskPlan plan = corpus::plan_masks(source, 0.2, 2, split_rng);
    ++observed[{plan.spans[0].masked_length, plan.spans[0].start, plan.spans[1].start}];
  }
  const double p = statsutil::chi_square_gof(observed, expected, 100000);

  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "budget_errors=%lld mix_max_dev=%.4f split_chi2_p=%.4f", budget_errors,
                max_dev, p);
  gate.report("A2", budget_errors == 0 && max_dev < 0.01 && p > 0.01, detail);
}

// ---------------------------------------------------------------------------
// A3: tokenizer identity on the corpus, sentinel atomicity, first-20 merges.
void criterion_a3(Gate& gate, const std::vector<std::string>& corpus,
                  const bpe::Vocabulary& vocab) {
  long long round_trip_failures = 0;
  for (const auto& s : corpus)
    if (bpe::decode(bpe::encode(s, vocab), vocab) != s) ++round_trip_failures;

  int atomicity_failures = 0;
  for (int id = 0; id < vocab.sentinel_count(); ++id) {
    const auto ids = bpe::encode(vocab.sentinel_of(id)->surface(), vocab);
    if (ids.size() != 1 || ids[0] != id) ++atomicity_failures;
  }

  // brute-force first-20 merges
  std::vector<std::vector<std::string>> seqs;
  for (const auto& line : corpus) {
    std::vector<std::string> seq;
    for (char c : line) seq.emplace_back(1, c);
    seqs.push_back(std::move(seq));
  }
  int merge_mismatches = 0;
  const std::size_t k_max = std::min<std::size_t>(20, vocab.merges().size());
  for (std::size_t k = 0; k < k_max; ++k) {
    std::map<std::pair<std::string, std::string>, long long> counts;
    for (const auto& seq : seqs)
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) ++counts[{seq[i], seq[i + 1]}];
    std::pair<std::string, std::string> best;
    long long best_count = 0;
    for (const auto& [pair, count] : counts) {
      if (count < 2) continue;
      if (count > best_count || (count == best_count && pair < best)) {
        best = pair;
        best_count = count;
      }
    }
    if (vocab.merges()[k] != best) ++merge_mismatches;
    for (auto& seq : seqs) {
      std::vector<std::string> out;
      for (std::size_t i = 0; i < seq.size();) {
        if (i + 1 < seq.size() && seq[i] == best.first && seq[i + 1] == best.second) {
          out.push_back(best.first + best.second);
          i += 2;
        } else {
          out.push_back(seq[i]);
          ++i;
        }
      }
      seq = std::move(out);
    }
  }

  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "round_trip_failures=%lld sentinels=%d atomicity_failures=%d "
                "merge_mismatches=%d/%zu",
                round_trip_failures, vocab.sentinel_count(), atomicity_failures,
                merge_mismatches, k_max);
  gate.report("A3",
              round_trip_failures == 0 && atomicity_failures == 0 &&
                  vocab.sentinel_count() == 100 && merge_mismatches == 0 && k_max == 20,
              detail);
}

// ---------------------------------------------------------------------------
// A4: gradient check on the tiny config.
void criterion_a4(Gate& gate) {
  const auto t0 = std::chrono::steady_clock::now();
  model::ModelConfig tiny;
  tiny.n_layers = 1;
  tiny.n_heads = 2;
  tiny.d_model = 8;
  tiny.d_ff = 16;
  tiny.context_length = 8;
  tiny.vocab_size = 11;
  const double err = model::grad_check(tiny, 20260809, 1e-5, 200);
  const double elapsed = seconds_since(t0);
  char detail[120];
  std::snprintf(detail, sizeof(detail), "max_rel_err=%.3e elapsed=%.1fs", err, elapsed);
  gate.report("A4", err < 1e-4 && elapsed < 60.0, detail);
}

// ---------------------------------------------------------------------------
// A5: sentinel targets carry loss weight (strict inequality when zeroed).
void criterion_a5(Gate& gate, const std::vector<std::string>& corpus,
                  const bpe::Vocabulary& vocab) {
  model::ModelConfig config;
  config.n_layers = 2;
  config.n_heads = 4;
  config.d_model = 64;
  config.d_ff = 256;
  config.context_length = 200;
  config.vocab_size = vocab.size();
  const auto params = model::init_parameters<double>(config, 11);

  Rng rng(4242);
  int batches_with_sentinels = 0;
  bool strict = true;
  for (int b = 0; b < 8; ++b) {
    const std::string& source = corpus[static_cast<std::size_t>(b)];
    corpus::MaskPlan plan;
    try {
      plan = corpus::plan_masks(source, 0.15, 1 + static_cast<int>(rng.next_below(2)), rng);
    } catch (const std::exception&) {
      continue;
    }
    const std::string surface = corpus::apply_cm(source, plan);
    std::vector<int> seq{vocab.bos_id()};
    const auto ids = bpe::encode(surface, vocab);
    seq.insert(seq.end(), ids.begin(), ids.end());
    seq.push_back(vocab.eos_id());

    const std::vector<int> inputs(seq.begin(), seq.end() - 1);
    const std::vector<int> targets(seq.begin() + 1, seq.end());
    std::vector<double> weights(targets.size(), 1.0);
    std::vector<double> no_sentinel = weights;
    bool has_sentinel_target = false;
    for (std::size_t t = 0; t < targets.size(); ++t) {
      const auto sentinel = vocab.sentinel_of(targets[t]);
      if (sentinel && sentinel->kind == bpe::Sentinel::Kind::Mask) {
        no_sentinel[t] = 0.0;
        has_sentinel_target = true;
      }
    }
    if (!has_sentinel_target) continue;
    ++batches_with_sentinels;

    const auto logits = model::forward<double>(config, params, inputs);
    const double with = model::loss<double>(logits, targets, weights);
    const double without = model::loss<double>(logits, targets, no_sentinel);
    if (!(with != without)) strict = false;
  }
  char detail[120];
  std::snprintf(detail, sizeof(detail), "sequences_with_sentinel_targets=%d strict=%s",
                batches_with_sentinels, strict ? "yes" : "no");
  gate.report("A5", batches_with_sentinels >= 4 && strict, detail);
}

// ---------------------------------------------------------------------------
// A6 artifacts reused by A10.
struct OverfitArtifacts {
  fs::path dir;
  cli::RunConfig config;
  std::vector<std::string> sources;
  bool trained = false;
};

// A6: overfit 32 CMS examples, then recover sources via greedy decoding.
void criterion_a6(Gate& gate, const std::vector<std::string>& corpus,
                  OverfitArtifacts& artifacts) {
  const auto t0 = std::chrono::steady_clock::now();

  // the 32 longest corpus strings give the most per-sequence signal
  std::vector<std::string> sources = corpus;
  std::stable_sort(sources.begin(), sources.end(),
                   [](const std::string& a, const std::string& b) {
                     return a.size() > b.size();
                   });
  sources.resize(32);
  artifacts.sources = sources;

  fs::create_directories(artifacts.dir);
  {
    std::ofstream f(artifacts.dir / "overfit_corpus.smi");
    for (const auto& s : sources) f << s << "\n";
  }

  cli::RunConfig config = cli::default_config();
  config.seed = 20260809;
  config.corpus_path = (artifacts.dir / "overfit_corpus.smi").string();
  config.vocab_path = (artifacts.dir / "vocab.txt").string();
  config.checkpoint_dir = artifacts.dir.string();
  config.out_dir = artifacts.dir.string();
  config.tokenizer_target = 150;  // near-character granularity
  config.model.context_length = 200;
  artifacts.config = config;

  const bpe::Vocabulary vocab =
      bpe::train_bpe(sources, config.tokenizer_target, config.n_max, config.l_max);
  bpe::save_vocab(vocab, config.vocab_path);
  const std::uint64_t vocab_hash = bpe::vocab_file_hash(config.vocab_path);

  // 32 fixed CMS examples drawn with the phase-3 mix; s2s targets are the
  // identity mutation so recovery is well defined.
  struct Fixed {
    std::string source;
    corpus::MaskPlan plan;
    std::vector<int> ids;
    gen::PromptSpec spec;
  };
  std::vector<Fixed> examples;
  Rng rng(config.seed);
  for (const auto& source : sources) {
    Rng r = rng.derive(examples.size());
    Fixed fixed;
    fixed.source = source;
    const int cfg = corpus::draw_cms_config(r, {0.1, 0.1, 0.4, 0.4});
    const int n_masks = (cfg == 0 || cfg == 2) ? 1 : 2;
    const bool with_s2s = cfg >= 2;
    try {
      fixed.plan = corpus::plan_masks(source, 0.15, n_masks, r);
      std::string surface;
      if (with_s2s) {
        const int cap = std::min(12, static_cast<int>(source.size()) / 3);
        const int s2s_len = 1 + static_cast<int>(r.next_below(cap));
        fixed.plan = corpus::plan_s2s(source, fixed.plan, s2s_len, s2s_len, r);
        const corpus::Span* s2s = fixed.plan.s2s_span();
        surface = corpus::apply_cms(
            source, fixed.plan,
            source.substr(static_cast<std::size_t>(s2s->start),
                          static_cast<std::size_t>(s2s->masked_length)));
      } else {
        surface = corpus::apply_cm(source, fixed.plan);
      }
      fixed.ids.push_back(vocab.bos_id());
      const auto e = bpe::encode(surface, vocab);
      fixed.ids.insert(fixed.ids.end(), e.begin(), e.end());
      fixed.ids.push_back(vocab.eos_id());
    } catch (const std::exception&) {
      continue;
    }
    int mask_index = 0;
    for (const auto& span : fixed.plan.spans) {
      gen::Marker m;
      m.kind = span.kind;
      m.start = span.start;
      m.masked_length = span.masked_length;
      m.generated_length = span.target_length;
      m.index = span.kind == corpus::SpanKind::Mask ? ++mask_index : 1;
      fixed.spec.markers.push_back(m);
    }
    examples.push_back(std::move(fixed));
  }

  model::ModelConfig model_config = config.model;
  model_config.vocab_size = vocab.size();
  auto params = model::init_parameters<double>(model_config, config.seed);
  train::AdamState opt;
  opt.m = model::zeros_like(params);
  opt.v = model::zeros_like(params);
  train::AdamConfig adam;
  adam.lr = 3e-3;

  std::vector<std::vector<int>> sequences;
  for (const auto& e : examples) sequences.push_back(e.ids);

  double loss = 1e9;
  int epoch = 0;
  for (; epoch < 600 && loss > 0.095; ++epoch) {
    double ce = 0.0, weight = 0.0;
    for (std::size_t b = 0; b < sequences.size(); b += 24) {
      const std::vector<std::vector<int>> batch(
          sequences.begin() + static_cast<long>(b),
          sequences.begin() + static_cast<long>(std::min(sequences.size(), b + 24)));
      const auto out = model::batch_backward<double>(model_config, params, batch,
                                                     vocab.pad_id());
      train::adam_step(params, out.grads, opt, adam);
      ce += out.loss * out.total_weight;
      weight += out.total_weight;
    }
    loss = ce / weight;
  }

  // greedy recovery and size-hint compliance over the training prompts
  gen::SamplerConfig greedy;
  greedy.top_k = 1;
  int recovered = 0;
  long long spans_total = 0, spans_exact = 0;
  for (const auto& fixed : examples) {
    std::vector<int> prompt_ids{vocab.bos_id()};
    const std::string prompt = gen::build_prompt(fixed.source, fixed.spec, vocab);
    const auto encoded = bpe::encode(prompt, vocab);
    prompt_ids.insert(prompt_ids.end(), encoded.begin(), encoded.end());
    Rng decode_rng(1);
    gen::GeneratedSpans spans;
    try {
      spans = gen::generate_spans<double>(model_config, params, prompt_ids, fixed.spec,
                                          greedy, decode_rng, vocab);
    } catch (const std::exception&) {
      continue;
    }
    const auto order_size = spans.spans.size();
    for (std::size_t j = 0; j < order_size; ++j) ++spans_total;
    std::size_t j = 0;
    for (const auto& m : fixed.spec.markers) {
      (void)m;
      if (j < order_size &&
          static_cast<int>(spans.spans[j].size()) ==
              [&] {
                // tail order: masks first, then s2s
                std::vector<const gen::Marker*> order;
                for (const auto& mm : fixed.spec.markers)
                  if (mm.kind == corpus::SpanKind::Mask) order.push_back(&mm);
                for (const auto& mm : fixed.spec.markers)
                  if (mm.kind == corpus::SpanKind::S2s) order.push_back(&mm);
                return order[j]->generated_length;
              }())
        ++spans_exact;
      ++j;
    }
    try {
      if (gen::reintegrate(fixed.source, fixed.spec, spans.spans) == fixed.source)
        ++recovered;
    } catch (const std::exception&) {
    }
  }

  const double recovery =
      static_cast<double>(recovered) / static_cast<double>(examples.size());
  const double compliance =
      spans_total > 0 ? static_cast<double>(spans_exact) / static_cast<double>(spans_total)
                      : 0.0;
  const double elapsed = seconds_since(t0);

  // persist the checkpoint for A10's end-to-end run
  train::Checkpoint ckpt;
  ckpt.config = model_config;
  ckpt.params = params;
  ckpt.opt = opt;
  ckpt.phase = 3;
  ckpt.epoch = epoch;
  ckpt.tokenizer_hash = vocab_hash;
  save_checkpoint(ckpt, cli::checkpoint_path(config, 3));
  artifacts.trained = true;

  char detail[200];
  std::snprintf(detail, sizeof(detail),
                "examples=%zu loss=%.4f epochs=%d recovery=%.3f hint_compliance=%.3f "
                "elapsed=%.0fs",
                examples.size(), loss, epoch, recovery, compliance, elapsed);
  gate.report("A6",
              examples.size() == 32 && loss < 0.1 && recovery >= 0.9 &&
                  compliance >= 0.9 && elapsed < 900.0,
              detail);
}

// ---------------------------------------------------------------------------
// A7: golden prompts, reintegrations and validity.
void criterion_a7(Gate& gate, const bpe::Vocabulary& vocab) {
  const auto tasks = fixtures::load_golden_tasks();
  int prompt_ok = 0, reintegrate_ok = 0, valid_ok = 0;
  for (const auto& task : tasks) {
    if (gen::build_prompt(task.prompt_source, task.prompt_spec, vocab) == task.prompt)
      ++prompt_ok;
    if (gen::reintegrate(task.original, task.reintegrate_spec, {task.generated_span}) ==
        task.generated_smiles)
      ++reintegrate_ok;
    const bool both = smiles::is_valid(task.original).valid &&
                      smiles::is_valid(task.generated_smiles).valid;
    valid_ok += both ? 2 : 0;
  }
  char detail[120];
  std::snprintf(detail, sizeof(detail), "prompts=%d/6 reintegrations=%d/6 valid=%d/12",
                prompt_ok, reintegrate_ok, valid_ok);
  gate.report("A7",
              tasks.size() == 6 && prompt_ok == 6 && reintegrate_ok == 6 && valid_ok == 12,
              detail);
}

// ---------------------------------------------------------------------------
// A8: sampler laws.
void criterion_a8(Gate& gate) {
  Rng rng(31001);
  int greedy_failures = 0;
  for (int iter = 0; iter < 1000; ++iter) {
    Eigen::VectorXd logits(24);
    for (int i = 0; i < 24; ++i) logits[i] = rng.normal(0.0, 2.0);
    Eigen::Index argmax;
    logits.maxCoeff(&argmax);
    gen::SamplerConfig greedy;
    greedy.top_k = 1;
    if (gen::sample_toppk(logits, greedy, rng) != static_cast<int>(argmax))
      ++greedy_failures;
  }

  // exact softmax sampling at (k = |V|, p = 1)
  Eigen::VectorXd logits(16);
  Rng logit_rng(31002);
  for (int i = 0; i < 16; ++i) logits[i] = logit_rng.normal(0.0, 1.0);
  Eigen::VectorXd probs = (logits.array() - logits.maxCoeff()).exp();
  probs /= probs.sum();
  gen::SamplerConfig full;
  full.top_k = 16;
  full.top_p = 1.0;
  std::map<int, long long> observed;
  std::map<int, double> expected;
  for (int i = 0; i < 16; ++i) expected[i] = probs[i];
  Rng draw_rng(31003);
  for (int draw = 0; draw < 100000; ++draw)
    ++observed[gen::sample_toppk(logits, full, draw_rng)];
  const double p = statsutil::chi_square_gof(observed, expected, 100000);

  // kept set vs brute-force intersection on 1000 random rows
  Rng kept_rng(31004);
  int kept_mismatches = 0;
  for (int iter = 0; iter < 1000; ++iter) {
    Eigen::VectorXd row(10);
    for (int i = 0; i < 10; ++i) row[i] = kept_rng.normal(0.0, 1.5);
    gen::SamplerConfig cfg;
    cfg.top_k = 1 + static_cast<int>(kept_rng.next_below(10));
    cfg.top_p = 0.05 + 0.95 * kept_rng.next_double();

    Eigen::VectorXd scaled = row / cfg.temperature;
    Eigen::VectorXd rp = (scaled.array() - scaled.maxCoeff()).exp();
    rp /= rp.sum();
    std::vector<int> ids(10);
    std::iota(ids.begin(), ids.end(), 0);
    std::sort(ids.begin(), ids.end(), [&](int a, int b) {
      if (rp[a] != rp[b]) return rp[a] > rp[b];
      return a < b;
    });
    std::set<int> topk(ids.begin(), ids.begin() + cfg.top_k);
    std::set<int> nucleus;
    double cum = 0.0;
    for (int id : ids) {
      nucleus.insert(id);
      cum += rp[id];
      if (cum >= cfg.top_p) break;
    }
    std::set<int> expected_kept;
    std::set_intersection(topk.begin(), topk.end(), nucleus.begin(), nucleus.end(),
                          std::inserter(expected_kept, expected_kept.begin()));
    if (expected_kept.empty()) expected_kept.insert(ids[0]);
    const auto kept_vec = gen::toppk_kept_set(row, cfg);
    const std::set<int> kept(kept_vec.begin(), kept_vec.end());
    if (kept != expected_kept) ++kept_mismatches;
  }

  char detail[140];
  std::snprintf(detail, sizeof(detail),
                "greedy_failures=%d softmax_chi2_p=%.4f kept_mismatches=%d",
                greedy_failures, p, kept_mismatches);
  gate.report("A8", greedy_failures == 0 && p > 0.01 && kept_mismatches == 0, detail);
}

// ---------------------------------------------------------------------------
// A9: scoring invariants.
void criterion_a9(Gate& gate, const std::vector<std::string>& corpus) {
  long long self_similarity_failures = 0;
  for (const auto& s : corpus) {
    const auto graph = smiles::parse(s);
    const auto fp = smiles::fingerprint(graph, 2, 2048);
    if (smiles::tanimoto(fp, fp) != 1.0) ++self_similarity_failures;
  }

  Rng rng(91001);
  score::NormBounds bounds;
  int monotonicity_violations = 0;
  for (int iter = 0; iter < 1000; ++iter) {
    score::ScoreVector v;
    v.validity = true;
    v.docking = -16.0 + 12.0 * rng.next_double();
    v.druglikeness = rng.next_double();
    v.synthesizability = 1.0 + 9.0 * rng.next_double();
    v.solubility = -7.0 + 14.0 * rng.next_double();
    v.similarity = rng.next_double();
    const double base = score::normalized_reward(v, bounds);
    score::ScoreVector improved = v;
    switch (rng.next_below(5)) {
      case 0: improved.docking -= 0.5; break;
      case 1: improved.druglikeness = std::min(1.0, improved.druglikeness + 0.05); break;
      case 2: improved.synthesizability = std::max(1.0, improved.synthesizability - 0.4); break;
      case 3: improved.solubility += 0.4; break;
      default: improved.similarity = std::min(1.0, improved.similarity + 0.05);
    }
    if (score::normalized_reward(improved, bounds) < base) ++monotonicity_violations;
  }

  score::ScoreVector hand;
  hand.validity = true;
  hand.docking = -10.0;
  hand.druglikeness = 0.7;
  hand.synthesizability = 3.92;
  hand.solubility = 2.471;
  hand.similarity = 0.9;
  const double expected =
      0.25 * ((10.0 - 6.0) / 8.0 + 0.7 + (10.0 - 3.92) / 9.0 + (2.471 + 5.0) / 10.0);
  const double got = score::normalized_reward(hand, score::NormBounds::without_similarity());
  const double convention_err = std::fabs(got - expected);

  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "self_sim_failures=%lld monotonicity_violations=%d convention_err=%.2e",
                self_similarity_failures, monotonicity_violations, convention_err);
  gate.report("A9",
              self_similarity_failures == 0 && monotonicity_violations == 0 &&
                  convention_err < 1e-12,
              detail);
}

// ---------------------------------------------------------------------------
// A10: end-to-end generation determinism across reruns and worker counts.
void criterion_a10(Gate& gate, OverfitArtifacts& artifacts) {
  if (!artifacts.trained) {
    gate.report("A10", false, "skipped: overfit artifacts unavailable");
    return;
  }
  const auto t0 = std::chrono::steady_clock::now();
  cli::RunConfig config = artifacts.config;
  config.n_samples = 10000;
  const std::string source = artifacts.sources.front();

  auto run_once = [&](const std::string& out_dir, int workers) {
    cli::RunConfig run = config;
    run.out_dir = out_dir;
    run.workers = workers;
    fs::create_directories(out_dir);
    cli::cmd_generate(run, source);
    return seconds_since(t0);
  };

  const std::string out_a = (artifacts.dir / "run_a").string();
  const std::string out_b = (artifacts.dir / "run_b").string();
  const std::string out_c = (artifacts.dir / "run_c").string();
  const auto t_first = std::chrono::steady_clock::now();
  run_once(out_a, 1);
  const double first_run = seconds_since(t_first);
  run_once(out_b, 1);
  run_once(out_c, 4);

  const std::string bytes_a = read_file(out_a + "/candidates.tsv");
  const std::string bytes_b = read_file(out_b + "/candidates.tsv");
  const std::string bytes_c = read_file(out_c + "/candidates.tsv");
  const bool identical = !bytes_a.empty() && bytes_a == bytes_b && bytes_a == bytes_c;

  // heatmap emission over the scored candidates (trend reported only)
  cli::RunConfig score_run = config;
  score_run.out_dir = out_a;
  cli::cmd_score(score_run, out_a + "/candidates.tsv");
  cli::cmd_report(score_run, {out_a + "/candidates.scored.tsv"});
  const std::string heatmap = read_file(out_a + "/length_validity.tsv");
  const bool heatmap_ok = heatmap.find("masked\\generated") == 0;

  long long valid = 0;
  const cli::CandidatesFile generated = cli::load_candidates(out_a + "/candidates.tsv");
  for (const auto& r : generated.records) valid += r.candidate.valid ? 1 : 0;

  char detail[220];
  std::snprintf(detail, sizeof(detail),
                "n=10000 byte_identical=%s first_run=%.0fs total=%.0fs "
                "valid_fraction=%.3f heatmap=%s (trend reported, not asserted)",
                identical ? "yes" : "no", first_run, seconds_since(t0),
                static_cast<double>(valid) / 10000.0, heatmap_ok ? "emitted" : "missing");
  gate.report("A10",
              identical && heatmap_ok && generated.records.size() == 10000 &&
                  first_run < 600.0,
              detail);
}

}  // namespace

int main() {
  Gate gate;
  const auto corpus = fixtures::load_mini_corpus();
  const bpe::Vocabulary vocab = bpe::train_bpe(corpus, 1024);

  OverfitArtifacts artifacts;
  artifacts.dir = fs::temp_directory_path() /
                  ("cms_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(artifacts.dir);

  criterion_a1(gate, corpus);
  criterion_a2(gate, corpus);
  criterion_a3(gate, corpus, vocab);
  criterion_a4(gate);
  criterion_a5(gate, corpus, vocab);
  criterion_a6(gate, corpus, artifacts);
  criterion_a7(gate, vocab);
  criterion_a8(gate);
  criterion_a9(gate, corpus);
  criterion_a10(gate, artifacts);

  fs::remove_all(artifacts.dir);
  if (gate.failures == 0) {
    std::printf("ACCEPTANCE PASS (10/10)\n");
    return 0;
  }
  std::printf("ACCEPTANCE FAIL (%d criteria failed)\n", gate.failures);
  return 1;
}
