#pragma once
// Parallel corpora, vocabularies, synthetic tasks and alignment files.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace itst::corpus {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kNumReserved = 4;

inline constexpr std::size_t kDefaultMaxLen = 256;

using Sentence = std::vector<std::string>;

/// Per target position i (0-based slot), the 1-based aligned source index, or
/// 0 when the target token has no alignment.
using Alignment = std::vector<std::size_t>;

struct SentencePair {
  Sentence source;
  Sentence target;
  Alignment alignment;  // empty when unknown
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
  std::vector<Sentence> sources() const;
  std::vector<Sentence> targets() const;
  std::vector<Alignment> alignments() const;
};

/// Whitespace tokenization; runs of spaces/tabs collapse.
Sentence tokenize(std::string_view line);

/// One sentence per line. Empty lines and lines longer than max_len tokens are
/// FormatErrors naming the file and line number.
std::vector<Sentence> read_sentences(const std::filesystem::path& path,
                                     std::size_t max_len = kDefaultMaxLen);

ParallelCorpus load_corpus(const std::filesystem::path& src_path,
                           const std::filesystem::path& tgt_path,
                           std::size_t max_len = kDefaultMaxLen);

/// "source<TAB>target" per line.
ParallelCorpus load_tsv(const std::filesystem::path& path, std::size_t max_len = kDefaultMaxLen);

class Vocabulary {
 public:
  Vocabulary();

  /// Tokens with frequency >= min_freq get ids in order of decreasing
  /// frequency, ties broken lexicographically; the rest map to UNK.
  static Vocabulary build(std::span<const Sentence> sentences, std::size_t min_freq = 1);
  /// Rebuilds a vocabulary from its full id-ordered token list (reserved included).
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const Sentence& s, bool append_eos = true) const;
  /// Stops at EOS and drops PAD/BOS when strip_special is set.
  Sentence decode(std::span<const int> ids, bool strip_special = true) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  explicit Vocabulary(std::vector<std::string> tokens);

  std::vector<std::string> tokens_;
  std::vector<std::pair<std::string, int>> sorted_;  // token -> id, sorted by token
};

enum class SynthKind { kCopy, kReverse, kShift };

SynthKind parse_synth_kind(std::string_view text);
std::string_view to_string(SynthKind kind);

struct LengthRange {
  std::size_t min = 3;
  std::size_t max = 8;
};

/// Deterministic synthetic pairs over vocab_size - 4 content tokens, with gold
/// alignments: copy a_i = i, reverse a_i = J - i + 1, shift a_i = i + 1 (last -> 1).
ParallelCorpus synth_task(SynthKind kind, std::size_t n_pairs, LengthRange lengths,
                          std::size_t vocab_size, std::uint64_t seed);

/// Pharaoh "s-t" pairs, 0-based source then target index. Many-to-one links
/// resolve to the largest source index.
Alignment parse_pharaoh(std::string_view line);
std::vector<Alignment> read_pharaoh(const std::filesystem::path& path);
std::string format_pharaoh(const Alignment& a);
void write_pharaoh(const std::filesystem::path& path, std::span<const Alignment> alignments);

void write_sentences(const std::filesystem::path& path, std::span<const Sentence> sentences);
std::string join(const Sentence& s);

}  // namespace itst::corpus
