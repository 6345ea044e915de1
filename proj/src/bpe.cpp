#include "cms/bpe.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cms/hash.hpp"

namespace cms::bpe {

namespace {

constexpr std::string_view kFileHeader = "CMSVOCAB v1";

std::optional<int> parse_int(std::string_view s) {
  if (s.empty() || s.size() > 6) return std::nullopt;
  int value = 0;
  for (char c : s) {
    if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
    value = value * 10 + (c - '0');
  }
  return value;
}

}  // namespace

std::string Sentinel::surface() const {
  switch (kind) {
    case Kind::Bos: return "[BOS]";
    case Kind::Eos: return "[EOS]";
    case Kind::Pad: return "[PAD]";
    case Kind::Mask:
      return "<mask_" + std::to_string(index) + ":" + std::to_string(hint) + ">";
    case Kind::S2sOpen:
      return "<s2s_" + std::to_string(index) + "_" + std::to_string(hint) + ":";
    case Kind::S2sClose: return ">";
  }
  return {};
}

const std::string& Vocabulary::base_alphabet() {
  static const std::string alphabet = "#%()+-/0123456789:=@BCFHINOPS[\\]bclnoprs";
  return alphabet;
}

Vocabulary::Vocabulary(int n_max, int l_max) : n_max_(n_max), l_max_(l_max) {
  if (n_max < 1 || l_max < 1) throw std::invalid_argument("bad sentinel bounds");
  id_to_token_.reserve(static_cast<std::size_t>(sentinel_count()) +
                       base_alphabet().size());
  auto add = [&](const std::string& text) {
    token_to_id_.emplace(text, static_cast<int>(id_to_token_.size()));
    id_to_token_.push_back(text);
  };
  add("[BOS]");
  add("[EOS]");
  add("[PAD]");
  add(">");
  for (int index = 1; index <= n_max_; ++index)
    for (int hint = 1; hint <= l_max_; ++hint)
      add(Sentinel{Sentinel::Kind::Mask, index, hint}.surface());
  for (int hint = 1; hint <= l_max_; ++hint)
    add(Sentinel{Sentinel::Kind::S2sOpen, 1, hint}.surface());
  for (char c : base_alphabet()) add(std::string(1, c));
}

int Vocabulary::mask_id(int index, int hint) const {
  if (index < 1 || index > n_max_ || hint < 1 || hint > l_max_)
    throw std::out_of_range("mask sentinel out of bounds");
  return 4 + (index - 1) * l_max_ + (hint - 1);
}

int Vocabulary::s2s_open_id(int target_size) const {
  if (target_size < 1 || target_size > l_max_)
    throw std::out_of_range("s2s sentinel out of bounds");
  return 4 + n_max_ * l_max_ + (target_size - 1);
}

std::optional<Sentinel> Vocabulary::sentinel_of(int id) const {
  if (!is_sentinel(id)) return std::nullopt;
  switch (id) {
    case 0: return Sentinel{Sentinel::Kind::Bos, 0, 0};
    case 1: return Sentinel{Sentinel::Kind::Eos, 0, 0};
    case 2: return Sentinel{Sentinel::Kind::Pad, 0, 0};
    case 3: return Sentinel{Sentinel::Kind::S2sClose, 0, 0};
    default: break;
  }
  int rest = id - 4;
  if (rest < n_max_ * l_max_)
    return Sentinel{Sentinel::Kind::Mask, rest / l_max_ + 1, rest % l_max_ + 1};
  rest -= n_max_ * l_max_;
  return Sentinel{Sentinel::Kind::S2sOpen, 1, rest + 1};
}

const std::string& Vocabulary::token_text(int id) const {
  if (id < 0 || id >= size()) throw UnknownId(id);
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocabulary::text_token_id(const std::string& text) const {
  auto it = token_to_id_.find(text);
  if (it == token_to_id_.end()) return std::nullopt;
  return it->second;
}

void Vocabulary::append_merge(const std::string& left, const std::string& right) {
  merges_.emplace_back(left, right);
  merge_rank_.emplace(left + "\x01" + right, static_cast<int>(merges_.size()) - 1);
  const std::string merged = left + right;
  if (!token_to_id_.contains(merged)) {
    token_to_id_.emplace(merged, static_cast<int>(id_to_token_.size()));
    id_to_token_.push_back(merged);
  }
}

Vocabulary train_bpe(const std::vector<std::string>& corpus, int target_vocab_size,
                     int n_max, int l_max) {
  if (corpus.empty()) throw EmptyCorpus();

  Vocabulary vocab(n_max, l_max);
  const int floor_size =
      vocab.sentinel_count() + static_cast<int>(Vocabulary::base_alphabet().size());
  if (target_vocab_size <= floor_size)
    throw std::invalid_argument("target vocabulary size must exceed " +
                                std::to_string(floor_size));

  std::set<std::string> reserved;
  for (int id = 0; id < vocab.sentinel_count(); ++id)
    reserved.insert(vocab.sentinel_of(id)->surface());

  // Sequences as indices into a local symbol table.
  std::vector<std::string> symbols;
  std::map<std::string, int> symbol_ids;
  auto symbol_of = [&](const std::string& text) {
    auto it = symbol_ids.find(text);
    if (it != symbol_ids.end()) return it->second;
    const int id = static_cast<int>(symbols.size());
    symbols.push_back(text);
    symbol_ids.emplace(text, id);
    return id;
  };

  bool any_content = false;
  std::vector<std::vector<int>> sequences;
  sequences.reserve(corpus.size());
  for (const std::string& line : corpus) {
    std::vector<int> seq;
    seq.reserve(line.size());
    for (char c : line) {
      if (Vocabulary::base_alphabet().find(c) == std::string::npos)
        throw UnknownCharacter(c);
      seq.push_back(symbol_of(std::string(1, c)));
      any_content = true;
    }
    sequences.push_back(std::move(seq));
  }
  if (!any_content) throw EmptyCorpus();

  while (vocab.size() < target_vocab_size) {
    std::map<std::pair<int, int>, long long> counts;
    for (const auto& seq : sequences)
      for (std::size_t i = 0; i + 1 < seq.size(); ++i)
        ++counts[{seq[i], seq[i + 1]}];

    // Most frequent pair; ties by lexicographic order of the pair text.
    // Candidates whose concatenation collides with a sentinel surface are
    // skipped.
    long long best_count = 0;
    std::pair<int, int> best{-1, -1};
    for (const auto& [pair, count] : counts) {
      if (count < 2) continue;
      const std::string& l = symbols[static_cast<std::size_t>(pair.first)];
      const std::string& r = symbols[static_cast<std::size_t>(pair.second)];
      if (reserved.contains(l + r)) continue;
      if (count > best_count) {
        best_count = count;
        best = pair;
      } else if (count == best_count && best.first >= 0) {
        const std::string& bl = symbols[static_cast<std::size_t>(best.first)];
        const std::string& br = symbols[static_cast<std::size_t>(best.second)];
        if (std::tie(l, r) < std::tie(bl, br)) best = pair;
      }
    }
    if (best.first < 0) break;

    const std::string left = symbols[static_cast<std::size_t>(best.first)];
    const std::string right = symbols[static_cast<std::size_t>(best.second)];
    vocab.append_merge(left, right);
    const int merged = symbol_of(left + right);

    for (auto& seq : sequences) {
      std::vector<int> out;
      out.reserve(seq.size());
      for (std::size_t i = 0; i < seq.size();) {
        if (i + 1 < seq.size() && seq[i] == best.first && seq[i + 1] == best.second) {
          out.push_back(merged);
          i += 2;
        } else {
          out.push_back(seq[i]);
          ++i;
        }
      }
      seq = std::move(out);
    }
  }
  return vocab;
}

namespace {

// Parses the sentinel starting at text[pos] (text[pos] is '<'). Returns the
// sentinel and the length consumed.
std::pair<Sentinel, std::size_t> parse_angle_sentinel(std::string_view text,
                                                      std::size_t pos,
                                                      const Vocabulary& vocab) {
  const std::string_view rest = text.substr(pos);
  auto fail = [&](const char* why) -> MalformedSentinel {
    return MalformedSentinel(std::string(why) + " near '" +
                             std::string(rest.substr(0, std::min<std::size_t>(16, rest.size()))) +
                             "'");
  };

  if (rest.starts_with("<mask_")) {
    const std::size_t colon = rest.find(':');
    const std::size_t close = rest.find('>');
    if (colon == std::string_view::npos || close == std::string_view::npos ||
        close < colon)
      throw fail("unclosed mask token");
    const auto index = parse_int(rest.substr(6, colon - 6));
    const auto hint = parse_int(rest.substr(colon + 1, close - colon - 1));
    if (!index || !hint) throw fail("bad mask token");
    if (*index < 1 || *index > vocab.n_max() || *hint < 1 || *hint > vocab.l_max())
      throw fail("mask token out of bounds");
    return {Sentinel{Sentinel::Kind::Mask, *index, *hint}, close + 1};
  }
  if (rest.starts_with("<s2s_")) {
    const std::size_t underscore = rest.find('_', 5);
    const std::size_t colon = rest.find(':');
    if (underscore == std::string_view::npos || colon == std::string_view::npos ||
        colon < underscore)
      throw fail("bad s2s token");
    const auto index = parse_int(rest.substr(5, underscore - 5));
    const auto target = parse_int(rest.substr(underscore + 1, colon - underscore - 1));
    if (!index || !target) throw fail("bad s2s token");
    if (*index != 1 || *target < 1 || *target > vocab.l_max())
      throw fail("s2s token out of bounds");
    return {Sentinel{Sentinel::Kind::S2sOpen, *index, *target}, colon + 1};
  }
  throw fail("unrecognized construct");
}

void encode_bpe_segment(std::string_view segment, const Vocabulary& vocab,
                        std::vector<int>& out) {
  if (segment.empty()) return;
  std::vector<std::string> tokens;
  tokens.reserve(segment.size());
  for (char c : segment) {
    if (Vocabulary::base_alphabet().find(c) == std::string::npos)
      throw UnknownCharacter(c);
    tokens.emplace_back(1, c);
  }
  for (const auto& [left, right] : vocab.merges()) {
    std::vector<std::string> next;
    next.reserve(tokens.size());
    for (std::size_t i = 0; i < tokens.size();) {
      if (i + 1 < tokens.size() && tokens[i] == left && tokens[i + 1] == right) {
        next.push_back(left + right);
        i += 2;
      } else {
        next.push_back(std::move(tokens[i]));
        ++i;
      }
    }
    tokens = std::move(next);
  }
  for (const auto& t : tokens) {
    const auto id = vocab.text_token_id(t);
    if (!id) throw std::logic_error("merge produced unregistered token: " + t);
    out.push_back(*id);
  }
}

}  // namespace

std::vector<int> encode(std::string_view text, const Vocabulary& vocab) {
  std::vector<int> ids;
  std::size_t segment_start = 0;
  std::size_t i = 0;
  auto flush = [&](std::size_t end) {
    encode_bpe_segment(text.substr(segment_start, end - segment_start), vocab, ids);
  };
  while (i < text.size()) {
    const char c = text[i];
    if (c == '<') {
      flush(i);
      auto [sentinel, consumed] = parse_angle_sentinel(text, i, vocab);
      if (sentinel.kind == Sentinel::Kind::Mask)
        ids.push_back(vocab.mask_id(sentinel.index, sentinel.hint));
      else
        ids.push_back(vocab.s2s_open_id(sentinel.hint));
      i += consumed;
      segment_start = i;
    } else if (c == '>') {
      flush(i);
      ids.push_back(vocab.s2s_close_id());
      ++i;
      segment_start = i;
    } else if (c == '[' && (text.substr(i, 5) == "[BOS]" || text.substr(i, 5) == "[EOS]" ||
                            text.substr(i, 5) == "[PAD]")) {
      flush(i);
      ids.push_back(text.substr(i, 5) == "[BOS]"   ? vocab.bos_id()
                    : text.substr(i, 5) == "[EOS]" ? vocab.eos_id()
                                                   : vocab.pad_id());
      i += 5;
      segment_start = i;
    } else {
      ++i;
    }
  }
  flush(text.size());
  return ids;
}

std::string decode(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) out += vocab.token_text(id);
  return out;
}

void save_vocab(const Vocabulary& vocab, const std::string& path) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open for writing: " + path);
  file << kFileHeader << "\n";
  for (const auto& [left, right] : vocab.merges()) file << left << "\t" << right << "\n";
  file << "sentinels N_max=" << vocab.n_max() << " L_max=" << vocab.l_max() << "\n";
  if (!file) throw IoError("write failed: " + path);
}

Vocabulary load_vocab(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(file, line) || line != kFileHeader)
    throw FormatVersionMismatch("bad vocabulary header: '" + line + "'");

  std::vector<std::pair<std::string, std::string>> merges;
  std::optional<std::pair<int, int>> bounds;
  while (std::getline(file, line)) {
    if (line.starts_with("sentinels ")) {
      int n_max = 0, l_max = 0;
      if (std::sscanf(line.c_str(), "sentinels N_max=%d L_max=%d", &n_max, &l_max) != 2)
        throw FormatVersionMismatch("bad sentinel config: '" + line + "'");
      bounds = {n_max, l_max};
      break;
    }
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw FormatVersionMismatch("bad merge line: '" + line + "'");
    merges.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  if (!bounds) throw FormatVersionMismatch("missing sentinel config line");

  Vocabulary vocab(bounds->first, bounds->second);
  for (const auto& [left, right] : merges) vocab.append_merge(left, right);
  return vocab;
}

std::uint64_t vocab_file_hash(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open for reading: " + path);
  std::stringstream buffer;
  buffer << file.rdbuf();
  return hash64(buffer.str());
}

}  // namespace cms::bpe
