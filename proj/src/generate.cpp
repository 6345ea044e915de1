#include "cms/generate.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <set>
#include <sstream>
#include <thread>

#include "cms/smiles.hpp"

namespace cms::gen {

namespace {

// Markers in tail order: mask markers by ascending start, then the s2s one.
std::vector<const Marker*> tail_order(const PromptSpec& spec) {
  std::vector<const Marker*> order;
  for (const Marker& m : spec.markers)
    if (m.kind == corpus::SpanKind::Mask) order.push_back(&m);
  for (const Marker& m : spec.markers)
    if (m.kind == corpus::SpanKind::S2s) order.push_back(&m);
  return order;
}

void validate_spec(const std::string& source, const PromptSpec& spec,
                   const bpe::Vocabulary& vocab) {
  if (spec.markers.empty()) throw SpecInfeasible("spec has no markers");
  const int len = static_cast<int>(source.size());
  int prev_end = 0;
  int mask_count = 0;
  int s2s_count = 0;
  for (const Marker& m : spec.markers) {
    if (m.start < prev_end) throw SpecInfeasible("markers overlap or are out of order");
    if (m.start + m.masked_length > len) throw SpecInfeasible("marker exceeds source");
    if (m.generated_length < 1 || m.generated_length > vocab.l_max())
      throw SpecInfeasible("generated length outside the size-hint family");
    if (m.kind == corpus::SpanKind::Mask) {
      ++mask_count;
      if (m.masked_length < 0) throw SpecInfeasible("negative masked length");
      if (m.index != mask_count) throw SpecInfeasible("mask indices must be 1,2,...");
      if (mask_count > vocab.n_max()) throw SpecInfeasible("too many mask markers");
    } else {
      ++s2s_count;
      if (m.masked_length < 1)
        throw SpecInfeasible("s2s marker needs a non-empty conditioned span");
      if (m.index != 1 || s2s_count > 1) throw SpecInfeasible("at most one s2s marker");
    }
    prev_end = m.start + std::max(1, m.masked_length);
  }
}

std::string marker_construct(const std::string& source, const Marker& m) {
  if (m.kind == corpus::SpanKind::Mask)
    return bpe::Sentinel{bpe::Sentinel::Kind::Mask, m.index, m.generated_length}
        .surface();
  return bpe::Sentinel{bpe::Sentinel::Kind::S2sOpen, 1, m.generated_length}.surface() +
         source.substr(static_cast<std::size_t>(m.start),
                       static_cast<std::size_t>(m.masked_length)) +
         ">";
}

}  // namespace

std::vector<SamplerConfig> BatchSettings::default_grid() {
  std::vector<SamplerConfig> grid;
  for (int k : {10, 15, 20})
    for (double p : {0.85, 0.9, 0.95}) {
      SamplerConfig c;
      c.top_k = k;
      c.top_p = p;
      grid.push_back(c);
    }
  return grid;
}

std::string build_prompt(const std::string& source, const PromptSpec& spec,
                         const bpe::Vocabulary& vocab) {
  validate_spec(source, spec, vocab);

  std::string body;
  int pos = 0;
  for (const Marker& m : spec.markers) {
    body.append(source, static_cast<std::size_t>(pos),
                static_cast<std::size_t>(m.start - pos));
    body += marker_construct(source, m);
    pos = m.start + m.masked_length;
  }
  body.append(source, static_cast<std::size_t>(pos), source.size() - static_cast<std::size_t>(pos));

  const auto order = tail_order(spec);
  return body + marker_construct(source, *order.front());
}

template <class T>
GeneratedSpans generate_spans(const model::ModelConfig& config,
                              const model::ParametersT<T>& params,
                              const std::vector<int>& prompt_ids, const PromptSpec& spec,
                              const SamplerConfig& sampler, Rng& rng,
                              const bpe::Vocabulary& vocab) {
  if (prompt_ids.empty()) throw SpecInfeasible("empty prompt");
  const auto order = tail_order(spec);

  // Sentinel id opening each marker's trailing construct.
  std::vector<int> delimiters;
  delimiters.reserve(order.size());
  long long hint_sum = 0;
  for (const Marker* m : order) {
    hint_sum += m->generated_length;
    delimiters.push_back(m->kind == corpus::SpanKind::Mask
                             ? vocab.mask_id(m->index, m->generated_length)
                             : vocab.s2s_open_id(m->generated_length));
  }
  const long long budget = 2 * hint_sum + 8;

  GeneratedSpans out;
  out.spans.assign(order.size(), "");

  model::DecodeSession<T> session(config, params);
  Eigen::VectorXd logits;
  try {
    for (int id : prompt_ids) {
      const auto row = session.feed(id);
      logits = row.row(0).template cast<double>().transpose();
    }
  } catch (const model::SequenceTooLong& e) {
    throw SpecInfeasible(std::string("prompt does not fit the context: ") + e.what());
  }

  std::size_t current = 0;
  bool skipping_echo = false;  // inside an s2s construct echo, up to S2SClose
  long long sampled = 0;
  while (true) {
    if (sampled >= budget) {
      out.budget_exceeded = true;
      break;
    }
    const int id = sample_toppk(logits, sampler, rng);
    ++sampled;

    bool stop = false;
    if (skipping_echo) {
      if (id == vocab.s2s_close_id()) skipping_echo = false;
    } else if (id == vocab.eos_id()) {
      stop = true;
    } else if (current + 1 < order.size() && id == delimiters[current + 1]) {
      ++current;
      if (order[current]->kind == corpus::SpanKind::S2s) skipping_echo = true;
    } else if (vocab.is_sentinel(id)) {
      stop = true;  // unexpected sentinel ends decoding
    } else {
      out.spans[current] += vocab.token_text(id);
    }
    if (stop) break;

    try {
      const auto row = session.feed(id);
      logits = row.row(0).template cast<double>().transpose();
    } catch (const model::SequenceTooLong&) {
      out.budget_exceeded = true;
      break;
    }
  }
  out.complete = current + 1 == order.size() && !skipping_echo;
  return out;
}

std::string reintegrate(const std::string& source, const PromptSpec& spec,
                        const std::vector<std::string>& spans) {
  const auto order = tail_order(spec);
  if (spans.size() != order.size())
    throw SpanCountMismatch("expected " + std::to_string(order.size()) + " spans, got " +
                            std::to_string(spans.size()));
  for (const Marker& m : spec.markers)
    if (m.start < 0 || m.start + m.masked_length > static_cast<int>(source.size()))
      throw SpecInfeasible("marker exceeds source");

  // Splice right to left so earlier offsets stay valid.
  std::vector<std::pair<const Marker*, const std::string*>> splices;
  for (std::size_t j = 0; j < order.size(); ++j) splices.emplace_back(order[j], &spans[j]);
  std::sort(splices.begin(), splices.end(),
            [](const auto& a, const auto& b) { return a.first->start > b.first->start; });

  std::string result = source;
  for (const auto& [marker, span] : splices) {
    result.replace(static_cast<std::size_t>(marker->start),
                   static_cast<std::size_t>(marker->masked_length), *span);
  }
  return result;
}

namespace {

template <class T>
Candidate draw_candidate(const model::ModelConfig& config,
                         const model::ParametersT<T>& params, const std::string& source,
                         const BatchSettings& settings, const bpe::Vocabulary& vocab,
                         Rng rng) {
  Candidate candidate;
  candidate.source = source;

  const int len = static_cast<int>(source.size());
  const int cap = std::min(settings.masked_len_cap, len / 3);
  const bool with_s2s = rng.next_below(2) == 0;  // {one mask + one s2s, two masks}
  if (cap < 1) {
    candidate.failed = true;
    return candidate;
  }

  // Six variables: per marker a start, a masked length, a generated length.
  struct Draw {
    corpus::SpanKind kind;
    int start, masked, generated;
  };
  std::array<Draw, 2> draws;
  draws[0].kind = corpus::SpanKind::Mask;
  draws[1].kind = with_s2s ? corpus::SpanKind::S2s : corpus::SpanKind::Mask;

  bool placed = false;
  for (int attempt = 0; attempt < 8 && !placed; ++attempt) {
    draws[0].masked = static_cast<int>(rng.uniform_int(1, cap));
    draws[1].masked = static_cast<int>(rng.uniform_int(1, cap));
    draws[0].generated = static_cast<int>(rng.uniform_int(1, settings.l_max));
    draws[1].generated = static_cast<int>(rng.uniform_int(1, settings.l_max));
    draws[0].start = static_cast<int>(rng.uniform_int(0, len - draws[0].masked));
    std::vector<int> feasible;
    for (int s = 0; s + draws[1].masked <= len; ++s) {
      const bool overlap =
          s < draws[0].start + draws[0].masked && draws[0].start < s + draws[1].masked;
      if (!overlap) feasible.push_back(s);
    }
    if (feasible.empty()) continue;
    draws[1].start = feasible[rng.next_below(feasible.size())];
    placed = true;
  }
  if (!placed) {
    candidate.failed = true;
    return candidate;
  }

  std::sort(draws.begin(), draws.end(),
            [](const Draw& a, const Draw& b) { return a.start < b.start; });
  int mask_index = 0;
  candidate.spec.archetype = Archetype::Mixed;
  for (const Draw& d : draws) {
    Marker m;
    m.kind = d.kind;
    m.start = d.start;
    m.masked_length = d.masked;
    m.generated_length = d.generated;
    m.index = d.kind == corpus::SpanKind::Mask ? ++mask_index : 1;
    candidate.spec.markers.push_back(m);
  }

  SamplerConfig sampler =
      settings.sampler_grid[rng.next_below(settings.sampler_grid.size())];

  try {
    candidate.prompt = build_prompt(source, candidate.spec, vocab);
    std::vector<int> prompt_ids{vocab.bos_id()};
    const auto encoded = bpe::encode(candidate.prompt, vocab);
    prompt_ids.insert(prompt_ids.end(), encoded.begin(), encoded.end());
    const GeneratedSpans spans = generate_spans<T>(config, params, prompt_ids,
                                                   candidate.spec, sampler, rng, vocab);
    candidate.spans = spans.spans;
    candidate.failed = !spans.complete || spans.budget_exceeded;
    candidate.generated = reintegrate(source, candidate.spec, candidate.spans);
    candidate.valid = smiles::is_valid(candidate.generated).valid;
  } catch (const std::exception&) {
    candidate.failed = true;
  }
  return candidate;
}

}  // namespace

template <class T>
std::vector<Candidate> batch_generate(const model::ModelConfig& config,
                                      const model::ParametersT<T>& params,
                                      const std::string& source, int n_samples,
                                      const BatchSettings& settings,
                                      const bpe::Vocabulary& vocab) {
  if (n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
  BatchSettings resolved = settings;
  if (resolved.sampler_grid.empty()) resolved.sampler_grid = BatchSettings::default_grid();

  std::vector<Candidate> out(static_cast<std::size_t>(n_samples));
  const Rng base(mix64(resolved.seed ^ hash64("batch-generate")));

  const int workers = std::max(1, resolved.workers);
  auto run_range = [&](std::size_t from, std::size_t to) {
    for (std::size_t i = from; i < to; ++i)
      out[i] = draw_candidate<T>(config, params, source, resolved, vocab, base.derive(i));
  };
  if (workers == 1) {
    run_range(0, out.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (out.size() + static_cast<std::size_t>(workers) - 1) /
                              static_cast<std::size_t>(workers);
    for (int w = 0; w < workers; ++w) {
      const std::size_t from = static_cast<std::size_t>(w) * chunk;
      const std::size_t to = std::min(out.size(), from + chunk);
      if (from >= to) break;
      pool.emplace_back(run_range, from, to);
    }
    for (auto& t : pool) t.join();
  }
  return out;
}

LengthValidityProfile length_validity_profile(const std::vector<Candidate>& candidates) {
  LengthValidityProfile profile;
  for (const Candidate& c : candidates) {
    if (c.spec.markers.empty()) continue;
    int masked = 0, generated = 0;
    for (const Marker& m : c.spec.markers) {
      masked += m.masked_length;
      generated += m.generated_length;
    }
    auto& cell = profile[{masked, generated}];
    ++cell.total;
    cell.valid += c.valid ? 1 : 0;
  }
  return profile;
}

std::string render_length_validity_table(const LengthValidityProfile& profile) {
  std::set<int> masked_axis, generated_axis;
  for (const auto& [key, cell] : profile) {
    masked_axis.insert(key.first);
    generated_axis.insert(key.second);
  }
  std::ostringstream out;
  out << "masked\\generated";
  for (int g : generated_axis) out << "\t" << g;
  out << "\n";
  for (int m : masked_axis) {
    out << m;
    for (int g : generated_axis) {
      out << "\t";
      auto it = profile.find({m, g});
      if (it == profile.end() || it->second.total == 0) {
        out << "-";
      } else {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3f",
                      static_cast<double>(it->second.valid) /
                          static_cast<double>(it->second.total));
        out << buf;
      }
    }
    out << "\n";
  }
  return out.str();
}

template GeneratedSpans generate_spans<float>(const model::ModelConfig&,
                                              const model::ParametersT<float>&,
                                              const std::vector<int>&, const PromptSpec&,
                                              const SamplerConfig&, Rng&,
                                              const bpe::Vocabulary&);
template GeneratedSpans generate_spans<double>(const model::ModelConfig&,
                                               const model::ParametersT<double>&,
                                               const std::vector<int>&, const PromptSpec&,
                                               const SamplerConfig&, Rng&,
                                               const bpe::Vocabulary&);
template std::vector<Candidate> batch_generate<float>(const model::ModelConfig&,
                                                      const model::ParametersT<float>&,
                                                      const std::string&, int,
                                                      const BatchSettings&,
                                                      const bpe::Vocabulary&);
template std::vector<Candidate> batch_generate<double>(const model::ModelConfig&,
                                                       const model::ParametersT<double>&,
                                                       const std::string&, int,
                                                       const BatchSettings&,
                                                       const bpe::Vocabulary&);

}  // namespace cms::gen
