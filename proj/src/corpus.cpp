#include "cms/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace cms::corpus {

namespace {

struct Construct {
  SpanKind kind = SpanKind::Mask;
  std::size_t pos = 0;           // position of '<'
  std::size_t sentinel_len = 0;  // mask: full token; s2s: opening token
  std::size_t total_len = 0;     // mask: sentinel_len; s2s: open + payload + '>'
  int index = 1;
  int hint = 0;
  std::string payload;           // s2s conditioned subsequence
};

int parse_uint(const std::string& s, std::size_t from, std::size_t to) {
  if (from >= to || to - from > 6) throw CorruptExample("bad sentinel number");
  int value = 0;
  for (std::size_t i = from; i < to; ++i) {
    if (!std::isdigit(static_cast<unsigned char>(s[i])))
      throw CorruptExample("bad sentinel number");
    value = value * 10 + (s[i] - '0');
  }
  return value;
}

std::vector<Construct> scan_constructs(const std::string& surface) {
  std::vector<Construct> out;
  std::size_t i = 0;
  while (i < surface.size()) {
    if (surface[i] != '<') {
      ++i;
      continue;
    }
    Construct c;
    c.pos = i;
    if (surface.compare(i, 6, "<mask_") == 0) {
      const std::size_t colon = surface.find(':', i);
      const std::size_t close = surface.find('>', i);
      if (colon == std::string::npos || close == std::string::npos || close < colon)
        throw CorruptExample("unclosed mask sentinel");
      c.kind = SpanKind::Mask;
      c.index = parse_uint(surface, i + 6, colon);
      c.hint = parse_uint(surface, colon + 1, close);
      c.sentinel_len = close - i + 1;
      c.total_len = c.sentinel_len;
      i = close + 1;
    } else if (surface.compare(i, 5, "<s2s_") == 0) {
      const std::size_t underscore = surface.find('_', i + 5);
      const std::size_t colon = surface.find(':', i);
      if (underscore == std::string::npos || colon == std::string::npos ||
          colon < underscore)
        throw CorruptExample("bad s2s sentinel");
      const std::size_t close = surface.find('>', colon);
      if (close == std::string::npos) throw CorruptExample("unclosed s2s construct");
      c.kind = SpanKind::S2s;
      c.index = parse_uint(surface, i + 5, underscore);
      c.hint = parse_uint(surface, underscore + 1, colon);
      c.sentinel_len = colon - i + 1;
      c.payload = surface.substr(colon + 1, close - colon - 1);
      c.total_len = close - i + 1;
      i = close + 1;
    } else {
      throw CorruptExample("unrecognized construct at position " + std::to_string(i));
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::string mask_surface(int index, int hint) {
  return bpe::Sentinel{bpe::Sentinel::Kind::Mask, index, hint}.surface();
}

std::string s2s_open_surface(int hint) {
  return bpe::Sentinel{bpe::Sentinel::Kind::S2sOpen, 1, hint}.surface();
}

void validate_plan(const std::string& source, const MaskPlan& plan, bool training) {
  if (plan.source_length != static_cast<int>(source.size()))
    throw PlanMismatch("plan source length disagrees with source");
  int prev_end = 0;
  int mask_seen = 0;
  int s2s_seen = 0;
  for (std::size_t i = 0; i < plan.spans.size(); ++i) {
    const Span& span = plan.spans[i];
    if (span.start < prev_end)
      throw PlanMismatch("spans overlap or are out of order");
    if (span.start + span.masked_length > plan.source_length)
      throw PlanMismatch("span exceeds source");
    if (training && span.masked_length < 1)
      throw PlanMismatch("zero-length span in a training plan");
    if (span.kind == SpanKind::Mask) {
      ++mask_seen;
      if (training && span.target_length != span.masked_length)
        throw PlanMismatch("training mask span must have target == masked length");
      if (span.index != mask_seen) throw PlanMismatch("mask indices must be 1,2,...");
    } else {
      ++s2s_seen;
      if (span.index != 1) throw PlanMismatch("s2s index must be 1");
      if (span.target_length < 1) throw PlanMismatch("s2s target length must be >= 1");
    }
    prev_end = span.start + span.masked_length;
  }
  if (s2s_seen > 1) throw PlanMismatch("at most one s2s span");
}

}  // namespace

int MaskPlan::mask_span_count() const {
  int n = 0;
  for (const Span& s : spans) n += s.kind == SpanKind::Mask ? 1 : 0;
  return n;
}

bool MaskPlan::has_s2s() const { return s2s_span() != nullptr; }

const Span* MaskPlan::s2s_span() const {
  for (const Span& s : spans)
    if (s.kind == SpanKind::S2s) return &s;
  return nullptr;
}

const char* phase_name(Phase phase) {
  switch (phase) {
    case Phase::CLM: return "CLM";
    case Phase::CM: return "CM";
    case Phase::CMS: return "CMS";
  }
  return "?";
}

Phase phase_from_name(const std::string& name) {
  if (name == "CLM") return Phase::CLM;
  if (name == "CM") return Phase::CM;
  if (name == "CMS") return Phase::CMS;
  throw CorruptExample("unknown phase tag: " + name);
}

MaskPlan plan_masks(const std::string& source, double p, int n, Rng& rng, int l_max) {
  if (n != 1 && n != 2) throw std::invalid_argument("mask span count must be 1 or 2");
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("mask fraction must be in (0,1)");

  const int len = static_cast<int>(source.size());
  const int budget = static_cast<int>(len * p);
  if (budget < n)
    throw SourceTooShort("mask budget " + std::to_string(budget) +
                         " cannot cover " + std::to_string(n) + " spans");
  if (len < n + budget)
    throw SourceTooShort("source of length " + std::to_string(len) +
                         " has no room for non-overlapping spans");
  if (budget > l_max)
    throw PlanInfeasible("mask budget exceeds the size-hint bound");

  MaskPlan plan;
  plan.source_length = len;
  plan.mask_fraction = p;

  if (n == 1) {
    const int start = static_cast<int>(rng.uniform_int(0, len - budget - 1));
    plan.spans.push_back({SpanKind::Mask, start, budget, budget, 1});
    return plan;
  }

  const int m1 = static_cast<int>(rng.uniform_int(1, budget - 1));
  const int m2 = budget - m1;
  for (int attempt = 0; attempt < 64; ++attempt) {
    const int idx1 = static_cast<int>(rng.uniform_int(0, len - budget - 1));
    const int lo = idx1 + m1 + 1;
    const int hi = len - m2 - 1;
    if (lo > hi) continue;
    const int idx2 = static_cast<int>(rng.uniform_int(lo, hi));
    plan.spans.push_back({SpanKind::Mask, idx1, m1, m1, 1});
    plan.spans.push_back({SpanKind::Mask, idx2, m2, m2, 2});
    return plan;
  }
  throw PlanInfeasible("no feasible second span start after 64 retries");
}

std::string apply_cm(const std::string& source, const MaskPlan& plan) {
  validate_plan(source, plan, /*training=*/true);
  if (plan.spans.empty()) throw PlanMismatch("plan has no spans");
  for (const Span& span : plan.spans)
    if (span.kind != SpanKind::Mask)
      throw PlanMismatch("apply_cm accepts mask spans only");

  std::string body;
  std::string tail;
  int pos = 0;
  for (const Span& span : plan.spans) {
    body.append(source, pos, static_cast<std::size_t>(span.start - pos));
    body += mask_surface(span.index, span.masked_length);
    tail += mask_surface(span.index, span.masked_length);
    tail.append(source, span.start, static_cast<std::size_t>(span.masked_length));
    pos = span.start + span.masked_length;
  }
  body.append(source, pos, source.size() - pos);
  return body + tail;
}

std::string demask(const TrainingExample& example) {
  if (example.phase != Phase::CM)
    throw CorruptExample("demask requires a CM example");
  const std::string& surface = example.surface;
  const auto constructs = scan_constructs(surface);
  if (constructs.empty() || constructs.size() % 2 != 0)
    throw CorruptExample("sentinel count is not an even, positive number");
  const std::size_t k = constructs.size() / 2;

  std::vector<std::string> contents(k);
  for (std::size_t j = 0; j < k; ++j) {
    const Construct& body = constructs[j];
    const Construct& tail = constructs[k + j];
    if (body.kind != SpanKind::Mask || tail.kind != SpanKind::Mask ||
        body.index != tail.index || body.hint != tail.hint)
      throw CorruptExample("sentinel mismatch between body and tail");
    const std::size_t content_start = tail.pos + tail.sentinel_len;
    const std::size_t content_end =
        (j + 1 < k) ? constructs[k + j + 1].pos : surface.size();
    if (content_end < content_start ||
        content_end - content_start != static_cast<std::size_t>(tail.hint))
      throw CorruptExample("tail span length disagrees with its size hint");
    contents[j] = surface.substr(content_start, content_end - content_start);
  }

  std::string result = surface.substr(0, constructs[k].pos);
  for (std::size_t j = k; j-- > 0;) {
    result.replace(constructs[j].pos, constructs[j].sentinel_len, contents[j]);
  }
  return result;
}

MaskPlan plan_s2s(const std::string& source, const MaskPlan& existing,
                  int s2s_masked_length, int target_length, Rng& rng) {
  validate_plan(source, existing, /*training=*/true);
  if (existing.has_s2s()) throw PlanMismatch("plan already holds an s2s span");
  if (s2s_masked_length < 1) throw PlanInfeasible("s2s span must cover >= 1 character");
  if (target_length < 1) throw PlanInfeasible("s2s target length must be >= 1");

  const int len = existing.source_length;
  std::vector<int> feasible;
  for (int start = 0; start + s2s_masked_length <= len; ++start) {
    const int end = start + s2s_masked_length;
    bool clear = true;
    for (const Span& span : existing.spans) {
      const int span_end = span.start + span.masked_length;
      if (start < span_end && span.start < end) {
        clear = false;
        break;
      }
    }
    if (clear) feasible.push_back(start);
  }
  if (feasible.empty()) throw PlanInfeasible("no non-overlapping s2s position exists");

  const int start = feasible[rng.next_below(feasible.size())];
  MaskPlan plan = existing;
  Span s2s{SpanKind::S2s, start, s2s_masked_length, target_length, 1};
  auto insert_at = std::upper_bound(
      plan.spans.begin(), plan.spans.end(), s2s,
      [](const Span& a, const Span& b) { return a.start < b.start; });
  plan.spans.insert(insert_at, s2s);
  return plan;
}

std::string render_s2s_prompt(const std::string& source, const MaskPlan& plan) {
  validate_plan(source, plan, /*training=*/true);
  const Span* s2s = plan.s2s_span();
  if (s2s == nullptr) throw PlanMismatch("plan holds no s2s span");

  const std::string sentinel = mask_surface(1, s2s->target_length);
  std::string body = source;
  body.replace(static_cast<std::size_t>(s2s->start),
               static_cast<std::size_t>(s2s->masked_length), sentinel);
  return body + sentinel;
}

std::string apply_cms(const std::string& source, const MaskPlan& plan,
                      const std::string& target) {
  validate_plan(source, plan, /*training=*/true);
  const Span* s2s = plan.s2s_span();
  if (s2s == nullptr) throw PlanMismatch("apply_cms requires exactly one s2s span");

  std::string body;
  int pos = 0;
  for (const Span& span : plan.spans) {
    body.append(source, pos, static_cast<std::size_t>(span.start - pos));
    if (span.kind == SpanKind::Mask) {
      body += mask_surface(span.index, span.masked_length);
    } else {
      body += s2s_open_surface(span.target_length);
      body.append(source, span.start, static_cast<std::size_t>(span.masked_length));
      body += ">";
    }
    pos = span.start + span.masked_length;
  }
  body.append(source, pos, source.size() - pos);

  std::string tail;
  for (const Span& span : plan.spans) {
    if (span.kind != SpanKind::Mask) continue;
    tail += mask_surface(span.index, span.masked_length);
    tail.append(source, span.start, static_cast<std::size_t>(span.masked_length));
  }
  tail += s2s_open_surface(s2s->target_length);
  tail.append(source, s2s->start, static_cast<std::size_t>(s2s->masked_length));
  tail += ">";
  tail += target;
  return body + tail;
}

std::string reconstruct(const TrainingExample& example) {
  switch (example.phase) {
    case Phase::CLM: return example.surface;
    case Phase::CM: return demask(example);
    case Phase::CMS: break;
  }
  const std::string& surface = example.surface;
  const auto constructs = scan_constructs(surface);
  if (constructs.size() < 2 || constructs.size() % 2 != 0)
    throw CorruptExample("sentinel count is not an even, positive number");
  const std::size_t half = constructs.size() / 2;

  // Body constructs appear in start order while the tail lists masks first,
  // then the s2s construct, so pair them by kind group rather than index.
  std::vector<const Construct*> body_masks, tail_masks;
  const Construct* body_s2s = nullptr;
  const Construct* tail_s2s = nullptr;
  for (std::size_t j = 0; j < constructs.size(); ++j) {
    const Construct& c = constructs[j];
    const bool in_body = j < half;
    if (c.kind == SpanKind::Mask) {
      (in_body ? body_masks : tail_masks).push_back(&c);
    } else {
      auto& slot = in_body ? body_s2s : tail_s2s;
      if (slot != nullptr) throw CorruptExample("more than one s2s construct");
      slot = &c;
    }
  }
  if (body_masks.size() != tail_masks.size() || (body_s2s == nullptr) != (tail_s2s == nullptr))
    throw CorruptExample("sentinel mismatch between body and tail");
  for (std::size_t j = 0; j < body_masks.size(); ++j) {
    if (body_masks[j]->index != tail_masks[j]->index ||
        body_masks[j]->hint != tail_masks[j]->hint)
      throw CorruptExample("sentinel mismatch between body and tail");
  }
  if (body_s2s != nullptr &&
      (body_s2s->hint != tail_s2s->hint || body_s2s->payload != tail_s2s->payload))
    throw CorruptExample("sentinel mismatch between body and tail");
  if (tail_s2s != nullptr && tail_s2s != &constructs.back())
    throw CorruptExample("s2s construct must end the tail");

  // Tail contents: mask spans run up to the next construct; the s2s target
  // runs from the construct close to the end of the surface.
  std::vector<std::string> mask_contents(tail_masks.size());
  for (std::size_t j = half; j < constructs.size(); ++j) {
    const Construct& tail = constructs[j];
    if (tail.kind != SpanKind::Mask) continue;
    const std::size_t content_start = tail.pos + tail.sentinel_len;
    const std::size_t content_end =
        (j + 1 < constructs.size()) ? constructs[j + 1].pos : surface.size();
    if (content_end < content_start ||
        content_end - content_start != static_cast<std::size_t>(tail.hint))
      throw CorruptExample("tail span length disagrees with its size hint");
    const std::size_t mask_pos = static_cast<std::size_t>(
        std::find(tail_masks.begin(), tail_masks.end(), &tail) - tail_masks.begin());
    mask_contents[mask_pos] = surface.substr(content_start, content_end - content_start);
  }
  std::string s2s_content;
  if (tail_s2s != nullptr)
    s2s_content = surface.substr(tail_s2s->pos + tail_s2s->total_len);

  std::string result = surface.substr(0, constructs[half].pos);
  std::size_t next_mask = body_masks.size();
  for (std::size_t j = half; j-- > 0;) {
    const Construct& body = constructs[j];
    if (body.kind == SpanKind::Mask) {
      result.replace(body.pos, body.total_len, mask_contents[--next_mask]);
    } else {
      result.replace(body.pos, body.total_len, s2s_content);
    }
  }
  return result;
}

int draw_cms_config(Rng& rng, const std::array<double, 4>& mix) {
  const double u = rng.next_double();
  double cum = 0.0;
  for (int i = 0; i < 4; ++i) {
    cum += mix[static_cast<std::size_t>(i)];
    if (u < cum) return i;
  }
  return 3;
}

EpochResult build_epoch(const std::vector<std::string>& dataset,
                        const EpochOptions& options, const bpe::Vocabulary& vocab,
                        const S2sTargetFn& s2s_target) {
  EpochResult result;
  result.examples.reserve(dataset.size());
  const Rng epoch_rng = Rng(options.epoch_seed);

  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const std::string& source = dataset[i];
    Rng rng = epoch_rng.derive(i);
    const std::uint64_t example_seed = rng.state();

    TrainingExample example;
    example.source = source;
    example.plan.source_length = static_cast<int>(source.size());
    try {
      if (options.phase == Phase::CLM) {
        example.phase = Phase::CLM;
        example.surface = source;
      } else if (options.phase == Phase::CM) {
        const int n = options.single_mask_only ? 1 : 1 + static_cast<int>(rng.next_below(2));
        example.plan = plan_masks(source, options.p, n, rng, options.l_max);
        example.phase = Phase::CM;
        example.surface = apply_cm(source, example.plan);
      } else {
        const int config = draw_cms_config(rng, options.cms_mix);
        const int n_masks = (config == 0 || config == 2) ? 1 : 2;
        const bool with_s2s = config >= 2;
        example.plan = plan_masks(source, options.p, n_masks, rng, options.l_max);
        if (with_s2s) {
          if (!s2s_target)
            throw std::invalid_argument("phase-3 corpus needs an s2s target provider");
          const int len = static_cast<int>(source.size());
          const int cap = std::min(options.s2s_len_cap, len / 3);
          if (cap < 1) throw SourceTooShort("source too short for an s2s span");
          const int s2s_len = static_cast<int>(rng.uniform_int(1, cap));
          const int target_len = static_cast<int>(rng.uniform_int(1, options.l_max));
          example.plan = plan_s2s(source, example.plan, s2s_len, target_len, rng);
          const auto [target, warned] = s2s_target(source, example.plan, rng);
          (void)warned;
          example.phase = Phase::CMS;
          example.surface = apply_cms(source, example.plan, target);
        } else {
          example.phase = Phase::CM;
          example.surface = apply_cm(source, example.plan);
        }
      }
    } catch (const SourceTooShort&) {
      ++result.skipped;
      continue;
    } catch (const PlanInfeasible&) {
      ++result.skipped;
      continue;
    }

    example.ids.push_back(vocab.bos_id());
    const auto body_ids = bpe::encode(example.surface, vocab);
    example.ids.insert(example.ids.end(), body_ids.begin(), body_ids.end());
    example.ids.push_back(vocab.eos_id());
    result.examples.push_back(std::move(example));
    result.seeds.push_back(example_seed);
  }
  return result;
}

namespace {

std::string plan_to_text(const MaskPlan& plan) {
  if (plan.spans.empty()) return "-";
  std::string out;
  for (const Span& span : plan.spans) {
    if (!out.empty()) out += ";";
    out += span.kind == SpanKind::Mask ? "mask" : "s2s";
    out += ":" + std::to_string(span.start) + ":" + std::to_string(span.masked_length) +
           ":" + std::to_string(span.target_length) + ":" + std::to_string(span.index);
  }
  return out;
}

MaskPlan plan_from_text(const std::string& text, int source_length) {
  MaskPlan plan;
  plan.source_length = source_length;
  if (text == "-") return plan;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    Span span;
    char kind[8] = {0};
    if (std::sscanf(item.c_str(), "%7[a-z2]:%d:%d:%d:%d", kind, &span.start,
                    &span.masked_length, &span.target_length, &span.index) != 5)
      throw CorruptExample("bad plan field: " + item);
    const std::string k = kind;
    if (k == "mask") span.kind = SpanKind::Mask;
    else if (k == "s2s") span.kind = SpanKind::S2s;
    else throw CorruptExample("bad span kind: " + k);
    plan.spans.push_back(span);
  }
  return plan;
}

}  // namespace

void save_corpus(const EpochResult& epoch, const std::string& path,
                 std::uint64_t tokenizer_hash) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw bpe::IoError("cannot open for writing: " + path);
  char hash_hex[32];
  std::snprintf(hash_hex, sizeof(hash_hex), "%016" PRIx64, tokenizer_hash);
  file << "CMSCORPUS v1 tokenizer_hash=" << hash_hex << "\n";
  for (std::size_t i = 0; i < epoch.examples.size(); ++i) {
    const TrainingExample& e = epoch.examples[i];
    char seed_hex[32];
    std::snprintf(seed_hex, sizeof(seed_hex), "%016" PRIx64,
                  i < epoch.seeds.size() ? epoch.seeds[i] : 0);
    file << phase_name(e.phase) << "\t" << e.source << "\t" << e.surface << "\t"
         << plan_to_text(e.plan) << "\t" << seed_hex << "\n";
  }
  if (!file) throw bpe::IoError("write failed: " + path);
}

CorpusFile load_corpus(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw bpe::IoError("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(file, line) || line.rfind("CMSCORPUS v1 tokenizer_hash=", 0) != 0)
    throw bpe::FormatVersionMismatch("bad corpus header: '" + line + "'");

  CorpusFile out;
  out.tokenizer_hash = std::stoull(line.substr(line.find('=') + 1), nullptr, 16);
  while (std::getline(file, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (int f = 0; f < 4; ++f) {
      const std::size_t tab = line.find('\t', start);
      if (tab == std::string::npos) throw CorruptExample("bad corpus record");
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    fields.push_back(line.substr(start));

    TrainingExample e;
    e.phase = phase_from_name(fields[0]);
    e.source = fields[1];
    e.surface = fields[2];
    e.plan = plan_from_text(fields[3], static_cast<int>(e.source.size()));
    out.examples.push_back(std::move(e));
    out.seeds.push_back(std::stoull(fields[4], nullptr, 16));
  }
  return out;
}

}  // namespace cms::corpus
