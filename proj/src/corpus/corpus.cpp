#include "itst/corpus/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "itst/errors.hpp"

namespace itst::corpus {

namespace {

std::string location(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return in;
}

Sentence checked_tokens(std::string_view line, const std::filesystem::path& path,
                        std::size_t lineno, std::size_t max_len) {
  Sentence toks = tokenize(line);
  if (toks.empty()) throw FormatError(location(path, lineno) + ": empty line");
  if (toks.size() > max_len) {
    throw FormatError(location(path, lineno) + ": " + std::to_string(toks.size()) +
                      " tokens exceeds max length " + std::to_string(max_len));
  }
  return toks;
}

}  // namespace

std::vector<Sentence> ParallelCorpus::sources() const {
  std::vector<Sentence> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.source);
  return out;
}

std::vector<Sentence> ParallelCorpus::targets() const {
  std::vector<Sentence> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.target);
  return out;
}

std::vector<Alignment> ParallelCorpus::alignments() const {
  std::vector<Alignment> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.alignment);
  return out;
}

Sentence tokenize(std::string_view line) {
  Sentence out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.emplace_back(line.substr(start, i - start));
  }
  return out;
}

std::vector<Sentence> read_sentences(const std::filesystem::path& path, std::size_t max_len) {
  std::ifstream in = open_input(path);
  std::vector<Sentence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    out.push_back(checked_tokens(line, path, lineno, max_len));
  }
  return out;
}

ParallelCorpus load_corpus(const std::filesystem::path& src_path,
                           const std::filesystem::path& tgt_path, std::size_t max_len) {
  auto src = read_sentences(src_path, max_len);
  auto tgt = read_sentences(tgt_path, max_len);
  if (src.size() != tgt.size()) {
    throw FormatError("line count mismatch: " + src_path.string() + " has " +
                      std::to_string(src.size()) + " lines, " + tgt_path.string() + " has " +
                      std::to_string(tgt.size()));
  }
  ParallelCorpus c;
  c.pairs.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    c.pairs.push_back({std::move(src[i]), std::move(tgt[i]), {}});
  }
  return c;
}

ParallelCorpus load_tsv(const std::filesystem::path& path, std::size_t max_len) {
  std::ifstream in = open_input(path);
  ParallelCorpus c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError(location(path, lineno) + ": missing tab");
    c.pairs.push_back({checked_tokens(std::string_view(line).substr(0, tab), path, lineno, max_len),
                       checked_tokens(std::string_view(line).substr(tab + 1), path, lineno, max_len),
                       {}});
  }
  return c;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{"<pad>", "<s>", "</s>", "<unk>"}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < static_cast<std::size_t>(kNumReserved)) {
    throw FormatError("vocabulary needs the four reserved tokens");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    sorted_.emplace_back(tokens_[i], static_cast<int>(i));
  }
  std::sort(sorted_.begin(), sorted_.end());
  for (std::size_t i = 1; i < sorted_.size(); ++i) {
    if (sorted_[i].first == sorted_[i - 1].first) {
      throw FormatError("duplicate vocabulary token '" + sorted_[i].first + "'");
    }
  }
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::build(std::span<const Sentence> sentences, std::size_t min_freq) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : sentences) {
    for (const auto& tok : s) ++counts[tok];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, n] : counts) {
    if (n >= min_freq) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = Vocabulary().tokens_;
  for (auto& [tok, n] : kept) {
    if (std::find(tokens.begin(), tokens.begin() + kNumReserved, tok) !=
        tokens.begin() + kNumReserved) {
      continue;
    }
    tokens.push_back(std::move(tok));
  }
  return from_tokens(std::move(tokens));
}

int Vocabulary::id(std::string_view token) const {
  auto it = std::lower_bound(sorted_.begin(), sorted_.end(), token,
                             [](const auto& e, std::string_view t) { return e.first < t; });
  if (it != sorted_.end() && it->first == token) return it->second;
  return kUnk;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const Sentence& s, bool append_eos) const {
  std::vector<int> out;
  out.reserve(s.size() + 1);
  for (const auto& tok : s) out.push_back(id(tok));
  if (append_eos) out.push_back(kEos);
  return out;
}

Sentence Vocabulary::decode(std::span<const int> ids, bool strip_special) const {
  Sentence out;
  for (int id : ids) {
    if (strip_special) {
      if (id == kEos) break;
      if (id == kPad || id == kBos) continue;
    }
    out.push_back(token(id));
  }
  return out;
}

SynthKind parse_synth_kind(std::string_view text) {
  if (text == "copy") return SynthKind::kCopy;
  if (text == "reverse") return SynthKind::kReverse;
  if (text == "shift") return SynthKind::kShift;
  throw FormatError("unknown synthetic task '" + std::string(text) + "' (copy|reverse|shift)");
}

std::string_view to_string(SynthKind kind) {
  switch (kind) {
    case SynthKind::kCopy:
      return "copy";
    case SynthKind::kReverse:
      return "reverse";
    case SynthKind::kShift:
      return "shift";
  }
  return "copy";
}

ParallelCorpus synth_task(SynthKind kind, std::size_t n_pairs, LengthRange lengths,
                          std::size_t vocab_size, std::uint64_t seed) {
  if (vocab_size <= static_cast<std::size_t>(kNumReserved)) {
    throw std::invalid_argument("synth_task: vocab_size must exceed the 4 reserved ids");
  }
  if (lengths.min < 1 || lengths.min > lengths.max) {
    throw std::invalid_argument("synth_task: invalid length range");
  }
  const std::size_t content = vocab_size - kNumReserved;
  std::mt19937_64 rng(seed);
  ParallelCorpus c;
  c.pairs.reserve(n_pairs);
  for (std::size_t p = 0; p < n_pairs; ++p) {
    const std::size_t n = lengths.min + rng() % (lengths.max - lengths.min + 1);
    SentencePair pair;
    for (std::size_t k = 0; k < n; ++k) pair.source.push_back("w" + std::to_string(rng() % content));
    pair.alignment.resize(n);
    switch (kind) {
      case SynthKind::kCopy:
        pair.target = pair.source;
        for (std::size_t i = 0; i < n; ++i) pair.alignment[i] = i + 1;
        break;
      case SynthKind::kReverse:
        pair.target.assign(pair.source.rbegin(), pair.source.rend());
        for (std::size_t i = 0; i < n; ++i) pair.alignment[i] = n - i;
        break;
      case SynthKind::kShift:
        pair.target.assign(pair.source.begin() + 1, pair.source.end());
        pair.target.push_back(pair.source.front());
        for (std::size_t i = 0; i + 1 < n; ++i) pair.alignment[i] = i + 2;
        pair.alignment[n - 1] = 1;
        break;
    }
    c.pairs.push_back(std::move(pair));
  }
  return c;
}

Alignment parse_pharaoh(std::string_view line) {
  Alignment a;
  for (const auto& link : tokenize(line)) {
    const auto dash = link.find('-');
    std::size_t s = 0, t = 0;
    const char* b = link.data();
    const char* e = link.data() + link.size();
    if (dash == std::string::npos ||
        std::from_chars(b, b + dash, s).ec != std::errc() ||
        std::from_chars(b + dash + 1, e, t).ec != std::errc()) {
      throw FormatError("bad alignment link '" + link + "'");
    }
    if (a.size() <= t) a.resize(t + 1, 0);
    a[t] = std::max(a[t], s + 1);
  }
  return a;
}

std::vector<Alignment> read_pharaoh(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  std::vector<Alignment> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    try {
      out.push_back(parse_pharaoh(line));
    } catch (const FormatError& e) {
      throw FormatError(location(path, lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string format_pharaoh(const Alignment& a) {
  std::ostringstream os;
  bool first = true;
  for (std::size_t t = 0; t < a.size(); ++t) {
    if (a[t] == 0) continue;
    if (!first) os << ' ';
    os << (a[t] - 1) << '-' << t;
    first = false;
  }
  return os.str();
}

void write_pharaoh(const std::filesystem::path& path, std::span<const Alignment> alignments) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& a : alignments) out << format_pharaoh(a) << '\n';
}

std::string join(const Sentence& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ' ';
    out += s[i];
  }
  return out;
}

void write_sentences(const std::filesystem::path& path, std::span<const Sentence> sentences) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& s : sentences) out << join(s) << '\n';
}

}  // namespace itst::corpus
