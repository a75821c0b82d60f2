#pragma once

// Deterministic synthetic movie-review corpus and matching synonym lexicon,
// used for desk-scale experiments when no real sentiment data is at hand.
//
// Reviews mix opinion clauses (polar adjectives, mostly agreeing with the
// label, sometimes contradicting it) with neutral filler. Every common polar
// adjective has three rare variants with the same polarity, drawn with a
// long-tailed frequency, so the lexicon's synonyms keep the label but are
// seen only a handful of times in training (or fall out of the vocabulary).

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "treated/rng.hpp"
#include "treated/textcore.hpp"

namespace treated::synth {

struct CorpusConfig {
  std::size_t train_size = 2000;
  std::size_t test_size = 1000;
  std::size_t min_opinions = 1;  // opinion clauses per review, inclusive range
  std::size_t max_opinions = 3;
  std::size_t max_neutral = 2;   // neutral-adjective clauses, drawn uniformly from 0..max
  std::size_t max_filler = 1;    // plot/context filler clauses, drawn uniformly from 0..max
  double contrary_rate = 0.1;    // chance an opinion clause disagrees with the label
  double label_noise = 0.03;
  double rare_rate = 0.15;       // chance an opinion adjective is replaced by a rare variant
  std::uint64_t seed = 7;

  /// Short single-paragraph reviews, around 18 tokens.
  static CorpusConfig sentences() { return {}; }

  /// Multi-paragraph reviews, around 120 tokens, with more mixed opinions.
  static CorpusConfig documents() {
    CorpusConfig c;
    c.min_opinions = 4;
    c.max_opinions = 12;
    c.max_neutral = 6;
    c.max_filler = 6;
    c.contrary_rate = 0.3;
    return c;
  }
};

namespace words {
struct Polar {
  std::string_view word;
  std::array<std::string_view, 3> rare;  // same polarity, decreasing frequency
};

inline constexpr std::array<Polar, 10> kPositive = {{
    {"excellent", {"exemplary", "superlative", "topnotch"}},
    {"wonderful", {"marvelous", "splendid", "glorious"}},
    {"brilliant", {"dazzling", "luminous", "inspired"}},
    {"great", {"grand", "magnificent", "firstrate"}},
    {"amazing", {"astonishing", "astounding", "breathtaking"}},
    {"good", {"commendable", "worthy", "admirable"}},
    {"enjoyable", {"entertaining", "diverting", "agreeable"}},
    {"charming", {"endearing", "delightful", "winsome"}},
    {"engaging", {"absorbing", "gripping", "compelling"}},
    {"lovely", {"beautiful", "exquisite", "graceful"}},
}};
inline constexpr std::array<Polar, 10> kNegative = {{
    {"awful", {"appalling", "atrocious", "abominable"}},
    {"terrible", {"dreadful", "horrendous", "ghastly"}},
    {"horrible", {"hideous", "horrid", "gruesome"}},
    {"bad", {"inferior", "substandard", "shoddy"}},
    {"painful", {"excruciating", "agonizing", "grueling"}},
    {"poor", {"deficient", "inadequate", "lousy"}},
    {"dull", {"lifeless", "drab", "stodgy"}},
    {"boring", {"monotonous", "wearisome", "humdrum"}},
    {"weak", {"feeble", "flimsy", "anemic"}},
    {"tedious", {"laborious", "plodding", "interminable"}},
}};
// Seen under both labels; faint praise leans negative, soft words lean positive.
inline constexpr std::array<std::string_view, 6> kFaintPraise = {
    "decent", "fair", "adequate", "passable", "watchable", "okay"};
inline constexpr std::array<std::string_view, 6> kSoft = {
    "gentle", "quiet", "subtle", "understated", "restrained", "calm"};
inline constexpr std::array<std::string_view, 12> kNeutral = {
    "long", "unusual", "loud", "familiar", "serious", "simple",
    "modest", "busy", "heavy", "light", "odd", "ordinary"};
inline constexpr std::array<std::string_view, 6> kIntensifiers = {"really", "very", "truly", "quite", "so", "rather"};
inline constexpr std::array<std::string_view, 8> kOpinion = {
    "the acting is {}", "the story was {}", "it is a {} film", "the performances are {}",
    "what a {} movie", "the ending felt {}", "the soundtrack is {}", "i thought it was {}"};
inline constexpr std::array<std::string_view, 6> kNeutralClause = {
    "the setting is {}", "the pacing is {}", "the premise is {}", "the runtime is {}",
    "the cast is {}", "the tone is {}"};
inline constexpr std::array<std::string_view, 12> kFiller = {
    "i watched it with my family", "it runs almost two hours", "the film is based on a novel",
    "the cast includes a few familiar faces", "it opened last friday", "the director also wrote the script",
    "most scenes take place in a small town", "there is a subplot about a missing dog",
    "i saw it on a rainy sunday", "the trailer gives away the twist", "my friend recommended it",
    "it was shot in about six weeks"};
}  // namespace words

namespace detail {

template <typename T, std::size_t N>
const T& pick(const std::array<T, N>& pool, Rng& rng) {
  return pool[rng.index(N)];
}

inline std::string fill(std::string_view tmpl, std::string_view word) {
  std::string out(tmpl);
  const auto at = out.find("{}");
  out.replace(at, 2, word);
  return out;
}

inline std::string opinion_word(bool positive, const CorpusConfig& cfg, Rng& rng) {
  const auto& entry = positive ? pick(words::kPositive, rng) : pick(words::kNegative, rng);
  if (!rng.bernoulli(cfg.rare_rate)) return std::string(entry.word);
  const double u = rng.uniform();
  return std::string(entry.rare[u < 0.6 ? 0 : (u < 0.9 ? 1 : 2)]);
}

inline std::string neutral_word(Rng& rng) {
  const double u = rng.uniform();
  if (u < 0.25) return std::string(pick(words::kFaintPraise, rng));
  if (u < 0.5) return std::string(pick(words::kSoft, rng));
  return std::string(pick(words::kNeutral, rng));
}

// Faint praise shows up in positive reviews 40% of the time, soft words 60%.
inline std::string leaning_word(bool positive, Rng& rng) {
  const bool soft = rng.bernoulli(positive ? 0.6 : 0.4);
  return std::string(soft ? pick(words::kSoft, rng) : pick(words::kFaintPraise, rng));
}

}  // namespace detail

/// One review with the given label (before label noise).
inline std::string make_review(bool positive, const CorpusConfig& cfg, Rng& rng) {
  std::vector<std::string> clauses;
  const std::size_t n_opinion = cfg.min_opinions + rng.index(cfg.max_opinions - cfg.min_opinions + 1);
  for (std::size_t i = 0; i < n_opinion; ++i) {
    const bool agree = !rng.bernoulli(cfg.contrary_rate);
    std::string adj = detail::opinion_word(agree ? positive : !positive, cfg, rng);
    if (rng.bernoulli(0.3)) adj = std::string(detail::pick(words::kIntensifiers, rng)) + " " + adj;
    clauses.push_back(detail::fill(detail::pick(words::kOpinion, rng), adj));
  }
  const std::size_t n_neutral = rng.index(cfg.max_neutral + 1);
  for (std::size_t i = 0; i < n_neutral; ++i) {
    const std::string adj = rng.bernoulli(0.5) ? detail::neutral_word(rng) : detail::leaning_word(positive, rng);
    clauses.push_back(detail::fill(detail::pick(words::kNeutralClause, rng), adj));
  }
  const std::size_t n_filler = rng.index(cfg.max_filler + 1);
  for (std::size_t i = 0; i < n_filler; ++i) clauses.emplace_back(detail::pick(words::kFiller, rng));
  rng.shuffle(std::span<std::string>(clauses));
  std::string text;
  for (std::size_t i = 0; i < clauses.size(); ++i) {
    if (i) text += rng.bernoulli(0.5) ? " . " : " , and ";
    text += clauses[i];
  }
  text += " .";
  return text;
}

struct Corpus {
  std::vector<Example> train;
  std::vector<Example> test;
};

inline Corpus make_corpus(const CorpusConfig& cfg) {
  Rng rng(cfg.seed);
  auto draw = [&](std::size_t n) {
    std::vector<Example> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const bool positive = rng.bernoulli(0.5);
      std::string text = make_review(positive, cfg, rng);
      const bool flip = rng.bernoulli(cfg.label_noise);
      out.emplace_back(std::move(text), (positive != flip) ? 1u : 0u);
    }
    return out;
  };
  Corpus c;
  c.train = draw(cfg.train_size);
  c.test = draw(cfg.test_size);
  return c;
}

// Synonym lexicon over the polar adjectives: the three rare variants, then
// the next common word of the same polarity.
inline SynonymLexicon make_lexicon() {
  SynonymLexicon lex;
  for (const auto* group : {&words::kPositive, &words::kNegative}) {
    for (std::size_t i = 0; i < group->size(); ++i) {
      const auto& entry = (*group)[i];
      std::vector<std::string> syns(entry.rare.begin(), entry.rare.end());
      syns.emplace_back((*group)[(i + 1) % group->size()].word);
      lex.add(std::string(entry.word), syns);
    }
  }
  lex.add("movie", {"film", "picture", "flick"});
  lex.add("film", {"movie", "picture", "flick"});
  lex.add("story", {"tale", "narrative", "plot"});
  return lex;
}

}  // namespace treated::synth
