#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "test_util.hpp"

using namespace treated;
using Tokens = std::vector<std::string>;
using testutil::constant_victim;
using testutil::lexical_victim;

namespace {

std::size_t levenshtein(const std::string& a, const std::string& b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1])});
    }
  }
  return d[a.size()][b.size()];
}

std::size_t positions_changed(const Tokens& a, const Tokens& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a[i] != b[i];
  return n;
}

SynonymLexicon good_bad_lexicon() {
  SynonymLexicon lex;
  lex.add("good", {"fine", "bad"});
  lex.add("great", {"okay"});
  return lex;
}

AttackConfig cfg_with(double frac, std::uint64_t seed = 0) {
  AttackConfig c;
  c.max_word_frac = frac;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Budget, FloorWithMinimumOne) {
  EXPECT_EQ(substitution_budget(10, 0.25), 2u);
  EXPECT_EQ(substitution_budget(8, 0.25), 2u);
  EXPECT_EQ(substitution_budget(3, 0.25), 1u);
  EXPECT_EQ(substitution_budget(100, 0.001), 1u);
  EXPECT_EQ(substitution_budget(20, 1.0), 20u);
}

TEST(AttackConfig, Validation) {
  AttackConfig c;
  EXPECT_NO_THROW(c.validate());
  c.max_word_frac = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.population = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.mutation_rate = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Saliency, InputIgnoringModelScoresZero) {
  const auto s = word_saliency(constant_victim(), {"a", "b", "c"}, 1);
  EXPECT_EQ(s, std::vector<double>(3, 0.0));
}

TEST(Saliency, SignalTokenRanksFirst) {
  const Tokens tokens{"the", "plot", "good", "was"};
  const auto prob = lexical_victim({{"good", 3.0}, {"plot", 0.2}});
  const auto s = word_saliency(prob, tokens, 1);
  ASSERT_EQ(s.size(), tokens.size());
  // Brute force: drop in P(1) for every single-UNK replacement.
  const double base = prob(tokens)[1];
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto t = tokens;
    t[i] = "<unk>";
    EXPECT_DOUBLE_EQ(s[i], base - prob(t)[1]);
  }
  EXPECT_EQ(std::max_element(s.begin(), s.end()) - s.begin(), 2);
}

TEST(CharBugs, Enumeration) {
  const auto ab = char_bug_candidates("ab");
  const std::set<std::string> got(ab.begin(), ab.end());
  for (const char* want : {"ba", "a", "b"}) EXPECT_TRUE(got.count(want)) << want;
  EXPECT_EQ(got.size(), ab.size());  // no duplicates
  EXPECT_FALSE(got.count("ab"));
  // A single letter can only be substituted or extended, never swapped or deleted.
  for (const auto& c : char_bug_candidates("x")) {
    EXPECT_NE(c, "x");
    EXPECT_FALSE(c.empty());
  }
  EXPECT_TRUE(char_bug_candidates("7").empty());
}

TEST(CharBugs, WithinTwoEdits) {
  for (const char* word : {"good", "terrible", "a", "movie", "xyz", "q1w"}) {
    for (const auto& c : char_bug_candidates(word)) {
      EXPECT_LE(levenshtein(word, c), 2u) << word << " -> " << c;
      EXPECT_GE(levenshtein(word, c), 1u);
    }
  }
}

TEST(Greedy, InputIgnoringModelFails) {
  const Example ex("good film", 1);
  EXPECT_FALSE(greedy_attack(constant_victim(), ex, CandidateSource::lexicon(good_bad_lexicon()), cfg_with(1.0), "pwws"));
  EXPECT_FALSE(char_level_attack(constant_victim(), ex, cfg_with(1.0)));
}

TEST(Greedy, OneSubstitutionFlip) {
  const auto prob = lexical_victim({{"good", 2.0}, {"bad", -2.0}, {"fine", 1.0}});
  const Example ex("a good film", 1);
  const auto adv = greedy_substitute_attack(prob, ex, CandidateSource::lexicon(good_bad_lexicon()), cfg_with(0.5));
  ASSERT_TRUE(adv);
  EXPECT_EQ(adv->n_substitutions, 1u);
  EXPECT_EQ(adv->perturbed_tokens, (Tokens{"a", "bad", "film"}));
  EXPECT_EQ(adv->perturbed_text, "a bad film");
  EXPECT_EQ(adv->attack_name, "pwws");
  EXPECT_EQ(adv->victim_label_before, 1u);
  EXPECT_EQ(adv->victim_label_after, 0u);
  EXPECT_EQ(argmax(prob(adv->perturbed_tokens)), 0u);
}

TEST(Greedy, RefusesMisclassifiedInput) {
  const auto prob = lexical_victim({{"good", 2.0}});
  EXPECT_THROW(greedy_attack(prob, Example("good", 0), CandidateSource::char_bugs(), cfg_with(1.0), "x"),
               std::invalid_argument);
  EXPECT_THROW(greedy_attack(prob, Example("", 0), CandidateSource::char_bugs(), cfg_with(1.0), "x"),
               std::invalid_argument);
}

TEST(Greedy, TinyBudgetAllowsOneSubstitution) {
  // Needs two substitutions to flip; a near-zero budget rounds to one and must fail.
  const auto prob = lexical_victim({{"good", 1.0}, {"great", 1.0}, {"fine", -0.2}, {"okay", -0.2}});
  const Example ex("good great film", 1);
  const auto src = CandidateSource::lexicon(good_bad_lexicon());
  EXPECT_FALSE(greedy_attack(prob, ex, src, cfg_with(1e-6), "pwws"));
  const auto adv = greedy_attack(prob, ex, src, cfg_with(1.0), "pwws");
  ASSERT_TRUE(adv);
  EXPECT_EQ(adv->n_substitutions, 2u);
}

TEST(Greedy, PropertiesOnRandomVictims) {
  Rng rng(21);
  const Tokens words{"good", "great", "bad", "fine", "okay", "film", "plot"};
  const auto lexicon = good_bad_lexicon();
  const auto src = CandidateSource::lexicon(lexicon);
  std::size_t successes = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::map<std::string, double> w;
    for (const auto& t : words) w[t] = rng.uniform(-1.5, 1.5);
    const auto prob = lexical_victim(w);
    Tokens tokens(2 + rng.index(8));
    for (auto& t : tokens) t = words[rng.index(words.size())];
    const std::size_t label = argmax(prob(tokens));
    const Example ex(join_tokens(tokens), label);
    bool succeeded_smaller = false;
    for (double frac : {0.1, 0.25, 0.5, 1.0}) {
      const auto adv = greedy_attack(prob, ex, src, cfg_with(frac), "pwws");
      // A larger budget never loses a success: the run is a prefix-extension of the smaller one.
      if (succeeded_smaller) EXPECT_TRUE(adv.has_value()) << "frac " << frac;
      if (!adv) continue;
      succeeded_smaller = true;
      ++successes;
      EXPECT_NE(argmax(prob(adv->perturbed_tokens)), label);
      EXPECT_LE(adv->n_substitutions, substitution_budget(tokens.size(), frac));
      EXPECT_EQ(positions_changed(tokens, adv->perturbed_tokens), adv->n_substitutions);
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] == adv->perturbed_tokens[i]) continue;
        const auto& c = lexicon.candidates(tokens[i]);
        EXPECT_NE(std::find(c.begin(), c.end(), adv->perturbed_tokens[i]), c.end());
      }
    }
  }
  EXPECT_GT(successes, 0u);
}

TEST(CharLevel, BugsExactKeyedToken) {
  const auto prob = lexical_victim({{"good", 2.0}, {"film", -0.5}});
  const auto adv = char_level_attack(prob, Example("good film", 1), cfg_with(0.5));
  ASSERT_TRUE(adv);
  EXPECT_EQ(adv->n_substitutions, 1u);
  EXPECT_EQ(adv->perturbed_tokens[1], "film");
  EXPECT_LE(levenshtein(adv->perturbed_tokens[0], "good"), 2u);
  EXPECT_EQ(adv->attack_name, "deepwordbug");
  const auto bugs = char_bug_candidates("good");
  EXPECT_NE(std::find(bugs.begin(), bugs.end(), "god"), bugs.end());
}

TEST(CharLevel, DeepensOneTokenAndCountsItOnce) {
  // One edit away from "good" keeps most of the score; two edits remove it.
  const auto one_edit = char_bug_candidates("good");
  const std::set<std::string> near(one_edit.begin(), one_edit.end());
  ProbFn prob = [near](const Tokens& tokens) {
    double s = -1.0;
    for (const auto& t : tokens) {
      if (t == "good") s += 2.0;
      else if (near.count(t)) s += 1.8;
    }
    const double p1 = 1.0 / (1.0 + std::exp(-s));
    return std::vector<double>{1.0 - p1, p1};
  };
  const Example ex("good film", 1);
  auto cfg = cfg_with(0.5);
  cfg.max_char_edits_per_token = 1;
  EXPECT_FALSE(char_level_attack(prob, ex, cfg));
  cfg.max_char_edits_per_token = 2;
  const auto adv = char_level_attack(prob, ex, cfg);
  ASSERT_TRUE(adv);
  EXPECT_EQ(adv->n_substitutions, 1u);
  EXPECT_FALSE(near.count(adv->perturbed_tokens[0]));
  EXPECT_NE(adv->perturbed_tokens[0], "good");
}

TEST(MultiLevel, EmptyLexiconEqualsCharLevel) {
  const auto prob = lexical_victim({{"good", 2.0}, {"nice", 1.0}, {"film", -0.5}});
  const Example ex("good nice film", 1);
  const auto a = multi_level_attack(prob, ex, SynonymLexicon{}, cfg_with(0.7));
  const auto b = char_level_attack(prob, ex, cfg_with(0.7));
  ASSERT_EQ(a.has_value(), b.has_value());
  ASSERT_TRUE(a);
  EXPECT_EQ(a->perturbed_tokens, b->perturbed_tokens);
  EXPECT_EQ(a->n_substitutions, b->n_substitutions);
}

TEST(MultiLevel, DominatingBugsEqualCharLevel) {
  // Every word-level synonym keeps the full score; any misspelling zeroes it.
  const auto prob = lexical_victim({{"good", 2.0}, {"fine", 2.0}, {"okay", 2.0}, {"great", 2.0}, {"film", -1.0}});
  SynonymLexicon lex;
  lex.add("good", {"fine"});
  lex.add("great", {"okay"});
  const Example ex("good great film", 1);
  const auto a = multi_level_attack(prob, ex, lex, cfg_with(0.7));
  const auto b = char_level_attack(prob, ex, cfg_with(0.7));
  ASSERT_TRUE(a && b);
  EXPECT_EQ(a->perturbed_tokens, b->perturbed_tokens);
}

TEST(MultiLevel, PrefersStrongerWordSubstitution) {
  // Misspelling "good" removes +2; the synonym "awful" adds -3 on top.
  const auto prob = lexical_victim({{"good", 2.0}, {"awful", -3.0}, {"film", 0.5}});
  SynonymLexicon lex;
  lex.add("good", {"awful"});
  const Example ex("good film", 1);
  const auto adv = multi_level_attack(prob, ex, lex, cfg_with(0.5));
  ASSERT_TRUE(adv);
  // Brute force over every single-position candidate at "good".
  double best = 1.0;
  std::string best_token;
  for (const auto& c : CandidateSource::multi_level(lex).candidates("good")) {
    const double p = prob({c.token, "film"})[1];
    if (p < best) {
      best = p;
      best_token = c.token;
    }
  }
  EXPECT_EQ(best_token, "awful");
  EXPECT_EQ(adv->perturbed_tokens[0], "awful");
  EXPECT_EQ(adv->attack_name, "textbugger");
}

TEST(Genetic, DeterministicForFixedSeed) {
  const auto prob = lexical_victim({{"good", 1.0}, {"great", 1.0}, {"fine", -0.3}, {"bad", -1.0}, {"okay", -0.3}});
  const Example ex("good great film good", 1);
  const auto src = CandidateSource::lexicon(good_bad_lexicon());
  const auto a = genetic_attack(prob, ex, src, cfg_with(0.75, 5));
  const auto b = genetic_attack(prob, ex, src, cfg_with(0.75, 5));
  ASSERT_EQ(a.has_value(), b.has_value());
  if (a) {
    EXPECT_EQ(a->perturbed_tokens, b->perturbed_tokens);
    EXPECT_LE(a->n_substitutions, 3u);
    EXPECT_EQ(argmax(prob(a->perturbed_tokens)), 0u);
  }
}

TEST(Genetic, FlipsOneWordModelQuickly) {
  const auto prob = lexical_victim({{"good", 2.0}, {"fine", 1.0}, {"bad", -2.0}});
  const Example ex("the good film", 1);
  auto cfg = cfg_with(0.4, 1);
  cfg.generations = 2;
  const auto adv = genetic_attack(prob, ex, CandidateSource::lexicon(good_bad_lexicon()), cfg);
  ASSERT_TRUE(adv);
  EXPECT_EQ(adv->perturbed_tokens, (Tokens{"the", "bad", "film"}));
  EXPECT_EQ(adv->attack_name, "genetic");
}

TEST(Genetic, NoCandidatesFails) {
  const auto prob = lexical_victim({{"good", 2.0}});
  EXPECT_FALSE(genetic_attack(prob, Example("good film", 1), CandidateSource::lexicon({}), cfg_with(1.0)));
}

TEST(Genetic, RespectsBudgetOnRandomVictims) {
  Rng rng(5);
  const Tokens words{"good", "great", "bad", "fine", "okay", "film"};
  for (int trial = 0; trial < 40; ++trial) {
    std::map<std::string, double> w;
    for (const auto& t : words) w[t] = rng.uniform(-1.5, 1.5);
    const auto prob = lexical_victim(w);
    Tokens tokens(3 + rng.index(6));
    for (auto& t : tokens) t = words[rng.index(words.size())];
    const Example ex(join_tokens(tokens), argmax(prob(tokens)));
    auto cfg = cfg_with(0.34, static_cast<std::uint64_t>(trial));
    cfg.generations = 5;
    const auto adv = genetic_attack(prob, ex, CandidateSource::lexicon(good_bad_lexicon()), cfg);
    if (!adv) continue;
    EXPECT_LE(adv->n_substitutions, substitution_budget(tokens.size(), 0.34));
    EXPECT_EQ(positions_changed(tokens, adv->perturbed_tokens), adv->n_substitutions);
    EXPECT_NE(argmax(prob(adv->perturbed_tokens)), ex.label);
  }
}

TEST(EmbeddingSource, NeighboursFromEmbedding) {
  Vocabulary vocab;
  for (const char* w : {"good", "fine", "bad"}) vocab.add(w);
  Tensor2 emb(5, 2);
  emb(2, 0) = 1.0;
  emb(3, 0) = 0.9;
  emb(3, 1) = 0.2;
  emb(4, 1) = 1.0;
  const auto src = CandidateSource::embedding(emb, vocab, 2, 0.5);
  const auto c = src.candidates("good");
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].token, "fine");
  EXPECT_TRUE(src.candidates("unknown").empty());
  const auto prob = lexical_victim({{"good", 2.0}, {"fine", -1.0}});
  const auto adv = greedy_substitute_attack(prob, Example("good", 1), src, cfg_with(1.0));
  ASSERT_TRUE(adv);
  EXPECT_EQ(adv->attack_name, "textfooler");
}

TEST(MakeAttack, NamesAndRequirements) {
  const auto prob = lexical_victim({{"good", 2.0}, {"bad", -2.0}});
  const auto lex = good_bad_lexicon();
  for (auto kind : {AttackKind::Pwws, AttackKind::Genetic, AttackKind::DeepWordBug, AttackKind::TextBugger}) {
    const auto attack = make_attack(kind, prob, lex, std::nullopt, cfg_with(1.0));
    const auto adv = attack(Example("good film", 1));
    ASSERT_TRUE(adv) << to_string(kind);
    EXPECT_EQ(adv->attack_name, to_string(kind));
    EXPECT_EQ(parse_attack_kind(to_string(kind)), kind);
  }
  EXPECT_THROW(make_attack(AttackKind::TextFooler, prob, lex, std::nullopt, cfg_with(1.0)), std::invalid_argument);
  EXPECT_THROW(parse_attack_kind("fgws"), std::invalid_argument);
}

TEST(AdversarialTsv, RoundTrip) {
  const auto dir = testutil::scratch_dir("adv_tsv");
  const auto prob = lexical_victim({{"good", 2.0}, {"bad", -2.0}});
  auto adv = greedy_attack(prob, Example("a good film", 1), CandidateSource::lexicon(good_bad_lexicon()),
                           cfg_with(1.0), "pwws");
  ASSERT_TRUE(adv);
  {
    std::ofstream out(dir / "a.tsv", std::ios::binary);
    write_adversarial_tsv(out, {*adv, *adv});
  }
  const auto back = load_adversarial_tsv((dir / "a.tsv").string());
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].perturbed_tokens, adv->perturbed_tokens);
  EXPECT_EQ(back[0].original.tokens, adv->original.tokens);
  EXPECT_EQ(back[0].original.label, 1u);
  EXPECT_EQ(back[0].victim_label_after, 0u);
  EXPECT_EQ(back[0].n_substitutions, 1u);
  EXPECT_EQ(back[0].attack_name, "pwws");
  testutil::write_file(dir / "bad.tsv", "1\t0\tx\ta\tb\tpwws\n");
  EXPECT_THROW(load_adversarial_tsv((dir / "bad.tsv").string()), ParseError);
  testutil::write_file(dir / "short.tsv", "1\t0\t1\ta\n");
  EXPECT_THROW(load_adversarial_tsv((dir / "short.tsv").string()), ParseError);
}
