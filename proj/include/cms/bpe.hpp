#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cms::bpe {

struct EmptyCorpus : std::runtime_error {
  EmptyCorpus() : std::runtime_error("empty corpus") {}
};
struct MalformedSentinel : std::runtime_error {
  explicit MalformedSentinel(const std::string& what)
      : std::runtime_error("malformed sentinel: " + what) {}
};
struct UnknownId : std::runtime_error {
  explicit UnknownId(int id)
      : std::runtime_error("unknown token id " + std::to_string(id)) {}
};
struct UnknownCharacter : std::runtime_error {
  explicit UnknownCharacter(char c)
      : std::runtime_error(std::string("character outside tokenizer alphabet: '") + c +
                           "'") {}
};
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};
struct FormatVersionMismatch : std::runtime_error {
  explicit FormatVersionMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct Sentinel {
  enum class Kind { Bos, Eos, Pad, Mask, S2sOpen, S2sClose };
  Kind kind = Kind::Bos;
  int index = 0;  // mask index in [1, n_max]; s2s index is always 1
  int hint = 0;   // mask size hint / s2s target size, in [1, l_max]

  std::string surface() const;
};

// BPE vocabulary plus the finite sentinel family. Sentinels occupy the
// reserved id block [0, sentinel_count()); the fixed base alphabet and the
// merge-created tokens follow. The base alphabet is the full supported
// SMILES character set rather than the characters seen in training, which
// keeps the vocabulary file self-contained.
class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(int n_max, int l_max);

  int n_max() const { return n_max_; }
  int l_max() const { return l_max_; }
  int size() const { return static_cast<int>(id_to_token_.size()); }
  int sentinel_count() const { return 4 + (n_max_ + 1) * l_max_; }

  int bos_id() const { return 0; }
  int eos_id() const { return 1; }
  int pad_id() const { return 2; }
  int s2s_close_id() const { return 3; }
  int mask_id(int index, int hint) const;
  int s2s_open_id(int target_size) const;

  bool is_sentinel(int id) const { return id >= 0 && id < sentinel_count(); }
  std::optional<Sentinel> sentinel_of(int id) const;

  const std::vector<std::pair<std::string, std::string>>& merges() const {
    return merges_;
  }
  const std::string& token_text(int id) const;

  void append_merge(const std::string& left, const std::string& right);

  std::optional<int> text_token_id(const std::string& text) const;

  static const std::string& base_alphabet();

 private:
  int n_max_ = 2;
  int l_max_ = 32;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  std::unordered_map<std::string, int> merge_rank_;
};

Vocabulary train_bpe(const std::vector<std::string>& corpus, int target_vocab_size,
                     int n_max = 2, int l_max = 32);

std::vector<int> encode(std::string_view text, const Vocabulary& vocab);

std::string decode(const std::vector<int>& ids, const Vocabulary& vocab);

void save_vocab(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocab(const std::string& path);

// Pinned content hash of a vocabulary file, recorded in corpus files and
// checkpoints to detect tokenizer drift.
std::uint64_t vocab_file_hash(const std::string& path);

}  // namespace cms::bpe
