#pragma once

// Tokenization, vocabulary, TSV dataset / synonym-lexicon ingestion and
// embedding-space nearest neighbours.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "treated/errors.hpp"
#include "treated/numerics.hpp"

namespace treated {

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";

inline bool is_split_punct(char c) {
  switch (c) {
    case '.': case ',': case '!': case '?': case ';': case ':':
    case '\'': case '"': case '(': case ')': case '-':
      return true;
    default:
      return false;
  }
}

/// Lowercases ASCII, splits on whitespace and detaches punctuation as single-character tokens.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      flush();
    } else if (is_split_punct(raw)) {
      flush();
      tokens.emplace_back(1, raw);
    } else {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : raw);
    }
  }
  flush();
  return tokens;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

struct Example {
  std::string text;
  std::size_t label = 0;
  std::vector<std::string> tokens;

  Example() = default;
  Example(std::string t, std::size_t l) : text(std::move(t)), label(l), tokens(tokenize(text)) {}
};

class Vocabulary {
 public:
  Vocabulary() : tokens_{std::string(kPadToken), std::string(kUnkToken)} {
    index_.emplace(tokens_[0], kPadId);
    index_.emplace(tokens_[1], kUnkId);
  }

  /// Rebuilds from an id-ordered token list whose first two entries are PAD and UNK.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    if (tokens.size() < 2 || tokens[0] != kPadToken || tokens[1] != kUnkToken) {
      throw std::invalid_argument("vocabulary must start with " + std::string(kPadToken) + ", " +
                                  std::string(kUnkToken));
    }
    Vocabulary v;
    for (std::size_t i = 2; i < tokens.size(); ++i) {
      if (!v.add(tokens[i])) throw std::invalid_argument("duplicate vocabulary token '" + tokens[i] + "'");
    }
    return v;
  }

  /// Appends a token; false if it was already present.
  bool add(const std::string& token) {
    auto [it, inserted] = index_.emplace(token, static_cast<TokenId>(tokens_.size()));
    if (inserted) tokens_.push_back(token);
    return inserted;
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  bool contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

  TokenId id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnkId : it->second;
  }

  const std::string& token(TokenId id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  /// FNV-1a over the newline-joined token list; identifies a vocab in checkpoints.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : tokens_) {
      for (char c : t) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
      }
      h ^= static_cast<unsigned char>('\n');
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write vocabulary file " + path);
    for (const auto& t : tokens_) out << t << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read vocabulary file " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      tokens.push_back(line);
    }
    return from_tokens(tokens);
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

inline constexpr std::size_t kDefaultMinFreq = 2;
inline constexpr std::size_t kSentenceMaxLen = 32;
inline constexpr std::size_t kDocumentMaxLen = 256;

/// Tokens with frequency >= min_freq, by descending frequency then lexicographically.
inline Vocabulary build_vocab(const std::vector<Example>& corpus, std::size_t min_freq = kDefaultMinFreq) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  if (min_freq < 1) throw std::invalid_argument("build_vocab: min_freq must be >= 1");
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& ex : corpus) {
    for (const auto& t : ex.tokens) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts) {
    if (n >= min_freq && tok != kPadToken && tok != kUnkToken) kept.emplace_back(tok, n);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary vocab;
  for (const auto& [tok, n] : kept) vocab.add(tok);
  return vocab;
}

/// Ids right-padded with PAD (or truncated) to exactly max_len.
inline std::vector<TokenId> encode(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                                   std::size_t max_len) {
  if (max_len < 1) throw std::invalid_argument("encode: max_len must be >= 1");
  std::vector<TokenId> ids(max_len, kPadId);
  const std::size_t n = std::min(tokens.size(), max_len);
  for (std::size_t i = 0; i < n; ++i) ids[i] = vocab.id(tokens[i]);
  return ids;
}

/// Inverse of encode for in-vocabulary tokens; stops at the first PAD.
inline std::vector<std::string> decode(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (TokenId id : ids) {
    if (id == kPadId) break;
    out.push_back(vocab.token(id));
  }
  return out;
}

struct DatasetSummary {
  std::size_t classes = 0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  double avg_len = 0.0;  // tokens per example
};

struct LoadedDataset {
  std::vector<Example> examples;
  DatasetSummary summary;  // a single file is reported as its train_size
};

inline DatasetSummary summarize(const std::vector<Example>& train, const std::vector<Example>& test) {
  DatasetSummary s;
  s.train_size = train.size();
  s.test_size = test.size();
  std::size_t tokens = 0;
  for (const auto* split : {&train, &test}) {
    for (const auto& ex : *split) {
      s.classes = std::max(s.classes, ex.label + 1);
      tokens += ex.tokens.size();
    }
  }
  const std::size_t n = train.size() + test.size();
  s.avg_len = n ? static_cast<double>(tokens) / static_cast<double>(n) : 0.0;
  return s;
}

namespace detail {

inline bool parse_size(std::string_view s, std::size_t& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

}  // namespace detail

/// Reads `label<TAB>text` lines. Blank lines are skipped. When num_classes is
/// non-zero, labels outside [0, num_classes) are rejected.
inline LoadedDataset load_dataset(const std::string& path, std::size_t num_classes = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, 0, "cannot open dataset file");
  LoadedDataset out;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = detail::strip_cr(raw);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) throw ParseError(path, line_no, "missing TAB separator");
    std::size_t label = 0;
    if (!detail::parse_size(line.substr(0, tab), label)) {
      throw ParseError(path, line_no, "label '" + std::string(line.substr(0, tab)) + "' is not a non-negative integer");
    }
    if (num_classes != 0 && label >= num_classes) {
      throw ParseError(path, line_no, "unknown label " + std::to_string(label));
    }
    out.examples.emplace_back(std::string(line.substr(tab + 1)), label);
  }
  out.summary = summarize(out.examples, {});
  return out;
}

inline void save_dataset(const std::string& path, const std::vector<Example>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset file " + path);
  for (const auto& ex : examples) out << ex.label << '\t' << ex.text << '\n';
}

class SynonymLexicon {
 public:
  /// Appends candidates for a headword, dropping self-synonyms and duplicates.
  void add(const std::string& head, const std::vector<std::string>& candidates) {
    auto& list = entries_[head];
    for (const auto& c : candidates) {
      if (c.empty() || c == head) continue;
      if (std::find(list.begin(), list.end(), c) == list.end()) list.push_back(c);
    }
  }

  const std::vector<std::string>& candidates(const std::string& head) const {
    static const std::vector<std::string> kEmpty;
    auto it = entries_.find(head);
    return it == entries_.end() ? kEmpty : it->second;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::map<std::string, std::vector<std::string>>& entries() const noexcept { return entries_; }

 private:
  std::map<std::string, std::vector<std::string>> entries_;
};

inline SynonymLexicon load_synonyms(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, 0, "cannot open synonym lexicon");
  SynonymLexicon lex;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = detail::strip_cr(raw);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos || tab == 0) {
      throw ParseError(path, line_no, "expected headword<TAB>syn1,syn2,...");
    }
    const std::string head(line.substr(0, tab));
    std::vector<std::string> syns;
    std::string_view rest = line.substr(tab + 1);
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      std::string_view item = rest.substr(0, comma);
      while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
      while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
      if (item.find_first_of(" \t") != std::string_view::npos) {
        throw ParseError(path, line_no, "candidate '" + std::string(item) + "' is not a single token");
      }
      if (!item.empty()) syns.emplace_back(item);
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    lex.add(head, syns);
  }
  return lex;
}

inline void save_synonyms(const std::string& path, const SynonymLexicon& lex) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write synonym lexicon " + path);
  for (const auto& [head, syns] : lex.entries()) {
    out << head << '\t';
    for (std::size_t i = 0; i < syns.size(); ++i) out << (i ? "," : "") << syns[i];
    out << '\n';
  }
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

/// Up to k non-reserved tokens ranked by cosine similarity to `word`'s row,
/// excluding `word` and anything below min_cos. Ties keep id order.
inline std::vector<std::string> embedding_neighbors(const std::string& word, const Tensor2& embedding,
                                                    const Vocabulary& vocab, std::size_t k,
                                                    double min_cos) {
  if (k < 1) throw std::invalid_argument("embedding_neighbors: k must be >= 1");
  if (!vocab.contains(word)) throw NotFound("embedding_neighbors: '" + word + "' not in vocabulary");
  const TokenId query = vocab.id(word);
  if (query == kPadId || query == kUnkId) throw NotFound("embedding_neighbors: reserved token '" + word + "'");
  std::vector<std::pair<double, TokenId>> scored;
  auto q = embedding.row(query);
  for (TokenId id = 2; id < vocab.size(); ++id) {
    if (id == query) continue;
    const double c = cosine(q, embedding.row(id));
    if (c >= min_cos) scored.emplace_back(c, id);
  }
  const std::size_t take = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                    [](const auto& a, const auto& b) {
                      return a.first != b.first ? a.first > b.first : a.second < b.second;
                    });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < take; ++i) out.push_back(vocab.token(scored[i].second));
  return out;
}

}  // namespace treated
