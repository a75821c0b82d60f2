#pragma once

// Score-based black-box attacks. Every attack sees the victim only through a
// ProbFn (tokens -> class probabilities) and must stay within a word budget:
// at most max(1, floor(max_word_frac * tokens)) substituted tokens.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "treated/errors.hpp"
#include "treated/models.hpp"
#include "treated/rng.hpp"
#include "treated/textcore.hpp"

namespace treated {

/// Black-box view of a victim: token list in, class probabilities out.
using ProbFn = std::function<std::vector<double>(const std::vector<std::string>&)>;

inline ProbFn model_prob_fn(const Model& model, const Vocabulary& vocab, std::size_t max_len) {
  return [&model, &vocab, max_len](const std::vector<std::string>& tokens) {
    return predict_tokens(model, tokens, vocab, max_len).probs;
  };
}

struct AttackConfig {
  double max_word_frac = 0.25;
  std::size_t max_char_edits_per_token = 2;
  std::size_t population = 20;
  std::size_t generations = 20;
  double mutation_rate = 0.3;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(max_word_frac > 0.0 && max_word_frac <= 1.0)) {
      throw std::invalid_argument("attack: max_word_frac must lie in (0, 1]");
    }
    if (max_char_edits_per_token < 1) throw std::invalid_argument("attack: max_char_edits_per_token must be >= 1");
    if (population < 1 || generations < 1) throw std::invalid_argument("attack: population and generations must be >= 1");
    if (!(mutation_rate > 0.0 && mutation_rate <= 1.0)) throw std::invalid_argument("attack: mutation_rate must lie in (0, 1]");
  }
};

/// Substitutions allowed for a text of n tokens; never less than one.
inline std::size_t substitution_budget(std::size_t n_tokens, double max_word_frac) {
  const auto allowed = static_cast<std::size_t>(std::floor(max_word_frac * static_cast<double>(n_tokens) + 1e-9));
  return std::max<std::size_t>(1, allowed);
}

struct AdversarialExample {
  Example original;
  std::string perturbed_text;
  std::vector<std::string> perturbed_tokens;
  std::size_t n_substitutions = 0;
  std::string attack_name;
  std::size_t victim_label_before = 0;
  std::size_t victim_label_after = 0;
};

// ---------------------------------------------------------------------------
// Character-level bugs

/// QWERTY neighbours of a lowercase letter; empty for anything else.
inline std::string_view keyboard_neighbors(char c) {
  static const std::unordered_map<char, std::string_view> table = {
      {'q', "wa"},  {'w', "qes"}, {'e', "wrd"}, {'r', "etf"}, {'t', "ryg"}, {'y', "tuh"}, {'u', "yij"},
      {'i', "uok"}, {'o', "ipl"}, {'p', "ol"},  {'a', "qsz"}, {'s', "adwx"}, {'d', "sfec"}, {'f', "dgrv"},
      {'g', "fhtb"}, {'h', "gjyn"}, {'j', "hkum"}, {'k', "jli"}, {'l', "kop"}, {'z', "ax"}, {'x', "zcs"},
      {'c', "xvd"}, {'v', "cbf"}, {'b', "vng"}, {'n', "bmh"}, {'m', "nj"}};
  auto it = table.find(c);
  return it == table.end() ? std::string_view{} : it->second;
}

// Single-edit typos, in order: adjacent swaps, deletions, keyboard-neighbour
// substitutions, keyboard-neighbour insertions after each character. Each
// family runs left to right; duplicates and the token itself are dropped.
inline std::vector<std::string> char_bug_candidates(const std::string& token) {
  std::vector<std::string> out;
  auto push = [&](std::string s) {
    if (s.empty() || s == token) return;
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(std::move(s));
  };
  const std::size_t n = token.size();
  for (std::size_t i = 0; i + 1 < n; ++i) {
    std::string s = token;
    std::swap(s[i], s[i + 1]);
    push(std::move(s));
  }
  for (std::size_t i = 0; n > 1 && i < n; ++i) {
    std::string s = token;
    s.erase(i, 1);
    push(std::move(s));
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (char c : keyboard_neighbors(token[i])) {
      std::string s = token;
      s[i] = c;
      push(std::move(s));
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (char c : keyboard_neighbors(token[i])) {
      std::string s = token;
      s.insert(i + 1, 1, c);
      push(std::move(s));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Candidate sources

enum class SourceKind { SynonymLexicon, EmbeddingNeighbor, CharBug, MultiLevel };

struct Candidate {
  std::string token;
  bool char_bug = false;
};

class CandidateSource {
 public:
  static CandidateSource lexicon(SynonymLexicon lex) {
    CandidateSource s(SourceKind::SynonymLexicon);
    s.lexicon_ = std::make_shared<const SynonymLexicon>(std::move(lex));
    return s;
  }

  /// Nearest neighbours in an embedding space (TextFooler-style defaults k=8, min_cos=0.5).
  static CandidateSource embedding(Tensor2 embedding, Vocabulary vocab, std::size_t k = 8, double min_cos = 0.5) {
    CandidateSource s(SourceKind::EmbeddingNeighbor);
    s.neighbors_ = std::make_shared<NeighborIndex>(std::move(embedding), std::move(vocab), k, min_cos);
    return s;
  }

  static CandidateSource char_bugs() { return CandidateSource(SourceKind::CharBug); }

  /// Union of word-level (lexicon, optional embedding neighbours) and char-level candidates.
  static CandidateSource multi_level(SynonymLexicon lex, std::optional<CandidateSource> neighbors = std::nullopt) {
    CandidateSource s(SourceKind::MultiLevel);
    s.lexicon_ = std::make_shared<const SynonymLexicon>(std::move(lex));
    if (neighbors) {
      if (neighbors->kind_ != SourceKind::EmbeddingNeighbor) {
        throw std::invalid_argument("multi_level: neighbour source must be an embedding source");
      }
      s.neighbors_ = neighbors->neighbors_;
    }
    return s;
  }

  SourceKind kind() const noexcept { return kind_; }

  std::vector<Candidate> candidates(const std::string& token) const {
    std::vector<Candidate> out;
    auto push = [&](const std::string& c, bool bug) {
      if (c == token) return;
      for (const auto& existing : out) {
        if (existing.token == c) return;
      }
      out.push_back({c, bug});
    };
    if (lexicon_) {
      for (const auto& c : lexicon_->candidates(token)) push(c, false);
    }
    if (neighbors_) {
      for (const auto& c : neighbors_->lookup(token)) push(c, false);
    }
    if (kind_ == SourceKind::CharBug || kind_ == SourceKind::MultiLevel) {
      for (const auto& c : char_bug_candidates(token)) push(c, true);
    }
    return out;
  }

 private:
  class NeighborIndex {
   public:
    NeighborIndex(Tensor2 emb, Vocabulary vocab, std::size_t k, double min_cos)
        : emb_(std::move(emb)), vocab_(std::move(vocab)), k_(k), min_cos_(min_cos) {}

    std::vector<std::string> lookup(const std::string& token) {
      std::lock_guard lock(mu_);
      auto it = cache_.find(token);
      if (it != cache_.end()) return it->second;
      std::vector<std::string> result;
      const TokenId id = vocab_.id(token);
      if (vocab_.contains(token) && id != kPadId && id != kUnkId) {
        result = embedding_neighbors(token, emb_, vocab_, k_, min_cos_);
      }
      cache_.emplace(token, result);
      return result;
    }

   private:
    Tensor2 emb_;
    Vocabulary vocab_;
    std::size_t k_;
    double min_cos_;
    std::mutex mu_;
    std::unordered_map<std::string, std::vector<std::string>> cache_;
  };

  explicit CandidateSource(SourceKind kind) : kind_(kind) {}

  SourceKind kind_;
  std::shared_ptr<const SynonymLexicon> lexicon_;
  std::shared_ptr<NeighborIndex> neighbors_;
};

// ---------------------------------------------------------------------------
// Saliency and greedy substitution

/// score_i = P_true(tokens) - P_true(tokens with position i set to UNK).
inline std::vector<double> word_saliency(const ProbFn& prob, const std::vector<std::string>& tokens,
                                         std::size_t true_label) {
  const double base = prob(tokens).at(true_label);
  std::vector<double> scores(tokens.size());
  auto probe = tokens;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    probe[i] = std::string(kUnkToken);
    scores[i] = base - prob(probe).at(true_label);
    probe[i] = tokens[i];
  }
  return scores;
}

namespace detail {

inline std::vector<double> require_correct(const ProbFn& prob, const Example& ex) {
  if (ex.tokens.empty()) throw std::invalid_argument("attack: example has no tokens");
  auto probs = prob(ex.tokens);
  if (ex.label >= probs.size()) throw std::invalid_argument("attack: label out of range");
  if (argmax(probs) != ex.label) {
    throw std::invalid_argument("attack: victim already misclassifies the example");
  }
  return probs;
}

inline AdversarialExample make_adversarial(const Example& ex, std::vector<std::string> tokens, std::size_t n_subs,
                                           const std::string& name, std::size_t label_after) {
  AdversarialExample adv;
  adv.original = ex;
  adv.perturbed_text = join_tokens(tokens);
  adv.perturbed_tokens = std::move(tokens);
  adv.n_substitutions = n_subs;
  adv.attack_name = name;
  adv.victim_label_before = ex.label;
  adv.victim_label_after = label_after;
  return adv;
}

/// Descending saliency; ties keep the earlier position first.
inline std::vector<std::size_t> saliency_order(const std::vector<double>& saliency) {
  std::vector<std::size_t> order(saliency.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return saliency[a] > saliency[b]; });
  return order;
}

struct Best {
  std::optional<std::size_t> index;
  std::vector<double> probs;
};

// Tries every candidate at `pos` and keeps the one with the lowest true-class
// probability, provided it is strictly below `current_p`.
inline Best best_candidate(const ProbFn& prob, std::vector<std::string>& tokens, std::size_t pos,
                           const std::vector<Candidate>& cands, std::size_t label, double current_p) {
  Best best;
  double best_p = current_p;
  const std::string saved = tokens[pos];
  for (std::size_t c = 0; c < cands.size(); ++c) {
    tokens[pos] = cands[c].token;
    auto probs = prob(tokens);
    if (probs[label] < best_p) {
      best_p = probs[label];
      best.index = c;
      best.probs = std::move(probs);
    }
  }
  tokens[pos] = saved;
  return best;
}

}  // namespace detail

// Visits positions by descending saliency. At each one, applies the candidate
// that lowers P_true the most (if any lowers it); a char-level bug may be
// deepened up to max_char_edits_per_token edits. Stops on a label flip or when
// the budget is spent.
inline std::optional<AdversarialExample> greedy_attack(const ProbFn& prob, const Example& ex,
                                                       const CandidateSource& source, const AttackConfig& cfg,
                                                       const std::string& name) {
  cfg.validate();
  const auto probs0 = detail::require_correct(prob, ex);
  const std::size_t label = ex.label;
  const std::size_t budget = substitution_budget(ex.tokens.size(), cfg.max_word_frac);
  const auto order = detail::saliency_order(word_saliency(prob, ex.tokens, label));

  auto tokens = ex.tokens;
  double current_p = probs0[label];
  std::size_t n_subs = 0;
  for (std::size_t pos : order) {
    if (n_subs >= budget) break;
    const auto cands = source.candidates(tokens[pos]);
    auto best = detail::best_candidate(prob, tokens, pos, cands, label, current_p);
    if (!best.index) continue;
    tokens[pos] = cands[*best.index].token;
    current_p = best.probs[label];
    auto probs = std::move(best.probs);
    ++n_subs;
    if (cands[*best.index].char_bug) {
      for (std::size_t edits = 1; edits < cfg.max_char_edits_per_token && argmax(probs) == label; ++edits) {
        std::vector<Candidate> deeper;
        for (auto& c : char_bug_candidates(tokens[pos])) {
          if (c != ex.tokens[pos]) deeper.push_back({std::move(c), true});
        }
        auto more = detail::best_candidate(prob, tokens, pos, deeper, label, current_p);
        if (!more.index) break;
        tokens[pos] = deeper[*more.index].token;
        current_p = more.probs[label];
        probs = std::move(more.probs);
      }
    }
    if (argmax(probs) != label) {
      return detail::make_adversarial(ex, std::move(tokens), n_subs, name, argmax(probs));
    }
  }
  return std::nullopt;
}

/// Saliency-ordered greedy substitution from a candidate source (PWWS-style with a lexicon).
inline std::optional<AdversarialExample> greedy_substitute_attack(const ProbFn& prob, const Example& ex,
                                                                  const CandidateSource& source,
                                                                  const AttackConfig& cfg) {
  return greedy_attack(prob, ex, source, cfg,
                       source.kind() == SourceKind::EmbeddingNeighbor ? "textfooler" : "pwws");
}

/// DeepWordBug-style: greedy over saliency order with char-level bugs only.
inline std::optional<AdversarialExample> char_level_attack(const ProbFn& prob, const Example& ex,
                                                           const AttackConfig& cfg) {
  return greedy_attack(prob, ex, CandidateSource::char_bugs(), cfg, "deepwordbug");
}

/// TextBugger-style: per position, best of lexicon synonyms, embedding neighbours and char bugs.
inline std::optional<AdversarialExample> multi_level_attack(const ProbFn& prob, const Example& ex,
                                                            const SynonymLexicon& lexicon, const AttackConfig& cfg,
                                                            std::optional<CandidateSource> neighbors = std::nullopt) {
  return greedy_attack(prob, ex, CandidateSource::multi_level(lexicon, std::move(neighbors)), cfg, "textbugger");
}

// ---------------------------------------------------------------------------
// Genetic search

// Individuals assign each position either its original token (-1) or the
// index of a candidate. Fitness is 1 - P_true. Each generation keeps the best
// individual and breeds the rest by roulette selection, single-point
// crossover and per-position mutation, trimming children back into budget.
inline std::optional<AdversarialExample> genetic_attack(const ProbFn& prob, const Example& ex,
                                                        const CandidateSource& source, const AttackConfig& cfg) {
  cfg.validate();
  detail::require_correct(prob, ex);
  const std::size_t label = ex.label;
  const std::size_t n = ex.tokens.size();
  const std::size_t budget = substitution_budget(n, cfg.max_word_frac);

  std::vector<std::vector<Candidate>> cands(n);
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < n; ++i) {
    cands[i] = source.candidates(ex.tokens[i]);
    if (!cands[i].empty()) eligible.push_back(i);
  }
  if (eligible.empty()) return std::nullopt;

  using Genome = std::vector<int>;
  Rng rng(cfg.seed);
  std::map<Genome, std::vector<double>> seen;

  auto substituted = [](const Genome& g) {
    return static_cast<std::size_t>(std::count_if(g.begin(), g.end(), [](int c) { return c >= 0; }));
  };
  auto render = [&](const Genome& g) {
    auto tokens = ex.tokens;
    for (std::size_t i = 0; i < n; ++i) {
      if (g[i] >= 0) tokens[i] = cands[i][static_cast<std::size_t>(g[i])].token;
    }
    return tokens;
  };
  auto evaluate = [&](const Genome& g) -> const std::vector<double>& {
    auto it = seen.find(g);
    if (it == seen.end()) it = seen.emplace(g, prob(render(g))).first;
    return it->second;
  };
  auto random_candidate = [&](std::size_t pos) { return static_cast<int>(rng.index(cands[pos].size())); };
  auto trim = [&](Genome& g) {
    while (substituted(g) > budget) {
      std::vector<std::size_t> on;
      for (std::size_t i = 0; i < n; ++i) {
        if (g[i] >= 0) on.push_back(i);
      }
      g[on[rng.index(on.size())]] = -1;
    }
  };
  auto mutate = [&](Genome& g) {
    for (std::size_t pos : eligible) {
      if (!rng.bernoulli(cfg.mutation_rate)) continue;
      if (g[pos] < 0 && substituted(g) >= budget) continue;
      g[pos] = random_candidate(pos);
    }
  };

  std::vector<Genome> population(cfg.population, Genome(n, -1));
  for (auto& g : population) {
    const std::size_t pos = eligible[rng.index(eligible.size())];
    g[pos] = random_candidate(pos);
  }

  for (std::size_t gen = 0; gen < cfg.generations; ++gen) {
    std::vector<double> fitness(population.size());
    std::size_t best = 0;
    for (std::size_t k = 0; k < population.size(); ++k) {
      fitness[k] = 1.0 - evaluate(population[k])[label];
      if (fitness[k] > fitness[best]) best = k;
    }
    const auto& best_probs = evaluate(population[best]);
    if (argmax(best_probs) != label) {
      return detail::make_adversarial(ex, render(population[best]), substituted(population[best]), "genetic",
                                      argmax(best_probs));
    }
    const double total = std::accumulate(fitness.begin(), fitness.end(), 0.0);
    auto roulette = [&]() -> const Genome& {
      if (!(total > 0.0)) return population[rng.index(population.size())];
      double r = rng.uniform() * total;
      for (std::size_t k = 0; k < population.size(); ++k) {
        r -= fitness[k];
        if (r < 0.0) return population[k];
      }
      return population.back();
    };
    std::vector<Genome> next{population[best]};
    while (next.size() < population.size()) {
      const Genome& a = roulette();
      const Genome& b = roulette();
      const std::size_t cut = rng.index(n + 1);
      Genome child(n);
      for (std::size_t i = 0; i < n; ++i) child[i] = i < cut ? a[i] : b[i];
      trim(child);
      mutate(child);
      next.push_back(std::move(child));
    }
    population = std::move(next);
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Named attacks

enum class AttackKind { Pwws, Genetic, DeepWordBug, TextBugger, TextFooler };

inline std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::Pwws: return "pwws";
    case AttackKind::Genetic: return "genetic";
    case AttackKind::DeepWordBug: return "deepwordbug";
    case AttackKind::TextBugger: return "textbugger";
    case AttackKind::TextFooler: return "textfooler";
  }
  return "?";
}

inline AttackKind parse_attack_kind(const std::string& s) {
  for (auto k : {AttackKind::Pwws, AttackKind::Genetic, AttackKind::DeepWordBug, AttackKind::TextBugger,
                 AttackKind::TextFooler}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown attack '" + s + "' (expected pwws, genetic, deepwordbug, textbugger, textfooler)");
}

using AttackFn = std::function<std::optional<AdversarialExample>(const Example&)>;

/// Binds an attack to a victim. `neighbors` is required for textfooler and optional for textbugger.
inline AttackFn make_attack(AttackKind kind, ProbFn prob, const SynonymLexicon& lexicon,
                            std::optional<CandidateSource> neighbors, const AttackConfig& cfg) {
  cfg.validate();
  switch (kind) {
    case AttackKind::Pwws: {
      auto src = CandidateSource::lexicon(lexicon);
      return [=](const Example& ex) { return greedy_attack(prob, ex, src, cfg, "pwws"); };
    }
    case AttackKind::Genetic: {
      auto src = CandidateSource::lexicon(lexicon);
      return [=](const Example& ex) { return genetic_attack(prob, ex, src, cfg); };
    }
    case AttackKind::DeepWordBug:
      return [=](const Example& ex) { return char_level_attack(prob, ex, cfg); };
    case AttackKind::TextBugger: {
      auto src = CandidateSource::multi_level(lexicon, neighbors);
      return [=](const Example& ex) { return greedy_attack(prob, ex, src, cfg, "textbugger"); };
    }
    case AttackKind::TextFooler: {
      if (!neighbors) throw std::invalid_argument("textfooler needs an embedding-neighbour source");
      auto src = *neighbors;
      return [=](const Example& ex) { return greedy_attack(prob, ex, src, cfg, "textfooler"); };
    }
  }
  throw std::invalid_argument("unknown attack kind");
}

// ---------------------------------------------------------------------------
// TSV: orig_label, adv_label, n_subs, original_text, perturbed_text, attack_name

namespace detail {
inline std::string tsv_field(std::string s) {
  std::replace(s.begin(), s.end(), '\t', ' ');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}
}  // namespace detail

inline void write_adversarial_tsv(std::ostream& out, const std::vector<AdversarialExample>& advs) {
  for (const auto& a : advs) {
    out << a.original.label << '\t' << a.victim_label_after << '\t' << a.n_substitutions << '\t'
        << detail::tsv_field(a.original.text) << '\t' << detail::tsv_field(a.perturbed_text) << '\t'
        << detail::tsv_field(a.attack_name) << '\n';
  }
}

inline std::vector<AdversarialExample> load_adversarial_tsv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, 0, "cannot open adversarial TSV");
  std::vector<AdversarialExample> out;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = detail::strip_cr(raw);
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 6) {
      throw ParseError(path, line_no, "expected 6 TAB-separated fields, found " + std::to_string(fields.size()));
    }
    std::size_t orig = 0, adv_label = 0, n_subs = 0;
    if (!detail::parse_size(fields[0], orig) || !detail::parse_size(fields[1], adv_label) ||
        !detail::parse_size(fields[2], n_subs)) {
      throw ParseError(path, line_no, "labels and n_subs must be non-negative integers");
    }
    AdversarialExample a;
    a.original = Example(std::string(fields[3]), orig);
    a.perturbed_text = std::string(fields[4]);
    a.perturbed_tokens = tokenize(a.perturbed_text);
    a.n_substitutions = n_subs;
    a.attack_name = std::string(fields[5]);
    a.victim_label_before = orig;
    a.victim_label_after = adv_label;
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace treated
