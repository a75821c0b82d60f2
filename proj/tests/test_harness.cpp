#include <gtest/gtest.h>

#include <sstream>

#include "test_util.hpp"
#include "treated/synth.hpp"

using namespace treated;
using testutil::lexical_victim;

namespace {

Verdict verdict(bool flagged, std::size_t victim_label) {
  Verdict v;
  v.flagged = flagged;
  v.consistent = !flagged;
  v.victim_label = victim_label;
  v.reference_labels = flagged ? std::vector<std::size_t>{0, 1, 0} : std::vector<std::size_t>{1, 1, 1};
  return v;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(DetectionSet, RejectsZeroPairs) {
  const auto prob = lexical_victim({{"good", 2.0}, {"bad", -2.0}});
  const auto attack = make_attack(AttackKind::Pwws, prob, {}, std::nullopt, {});
  EXPECT_THROW(build_detection_set(prob, attack, testutil::toy_separable(), 0, 1), std::invalid_argument);
}

TEST(DetectionSet, ShortfallWhenAttackNeverSucceeds) {
  const auto victim = lexical_victim({{"good", 2.0}, {"bad", -2.0}});
  const auto attack = make_attack(AttackKind::Pwws, victim, {}, std::nullopt, {});
  try {
    build_detection_set(victim, attack, testutil::toy_separable(), 5, 1);
    FAIL() << "expected a shortfall";
  } catch (const ShortfallError& e) {
    EXPECT_EQ(e.achieved(), 0u);
  }
}

TEST(DetectionSet, PairsOriginalsWithAdversarialCopies) {
  const auto victim = lexical_victim({{"good", 2.0}, {"bad", -2.0}});
  SynonymLexicon lex;
  lex.add("good", {"bad"});
  lex.add("bad", {"good"});
  const auto attack = make_attack(AttackKind::Pwws, victim, lex, std::nullopt, {});
  const auto data = testutil::toy_separable();
  const auto set = build_detection_set(victim, attack, data, 8, 3);
  ASSERT_EQ(set.adversarial.size(), 8u);
  ASSERT_EQ(set.clean.size(), 8u);
  EXPECT_EQ(set.attack_name, "pwws");
  EXPECT_EQ(set.attempted, 8u);
  EXPECT_DOUBLE_EQ(set.attack_success_rate(), 1.0);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(set.clean[i].text, set.adversarial[i].original.text);
    EXPECT_EQ(argmax(victim(set.clean[i].tokens)), set.clean[i].label);
    EXPECT_NE(argmax(victim(set.adversarial[i].perturbed_tokens)), set.clean[i].label);
  }
  const auto again = build_detection_set(victim, attack, data, 8, 3);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(again.clean[i].text, set.clean[i].text);
}

TEST(Metrics, PerfectDetector) {
  std::vector<Verdict> clean(5, verdict(false, 1)), adv(5, verdict(true, 0));
  const auto m = score_verdicts(clean, std::vector<std::size_t>(5, 1), adv, std::vector<std::size_t>(5, 1));
  EXPECT_EQ(m.tpr, 1.0);
  EXPECT_EQ(m.fpr, 0.0);
  EXPECT_EQ(m.f1, 1.0);
  EXPECT_DOUBLE_EQ(m.pre_acc, 50.0);
  EXPECT_DOUBLE_EQ(m.post_acc, 100.0);
  EXPECT_DOUBLE_EQ(m.increased_acc, 50.0);
  EXPECT_EQ(m.pq.p, 1.0);
  EXPECT_EQ(m.pq.q, 0.0);
}

TEST(Metrics, HandBuiltCounts) {
  // 4 adversarial (3 flagged), 6 clean (1 flagged); victim wrong on every adversarial input.
  std::vector<Verdict> adv{verdict(true, 0), verdict(true, 0), verdict(true, 0), verdict(false, 0)};
  std::vector<Verdict> clean{verdict(true, 1), verdict(false, 1), verdict(false, 1),
                             verdict(false, 1), verdict(false, 1), verdict(false, 1)};
  const auto m = score_verdicts(clean, std::vector<std::size_t>(6, 1), adv, std::vector<std::size_t>(4, 1));
  EXPECT_DOUBLE_EQ(m.tpr, 0.75);
  EXPECT_DOUBLE_EQ(m.fpr, 1.0 / 6.0);
  EXPECT_DOUBLE_EQ(m.precision, 0.75);
  EXPECT_DOUBLE_EQ(m.f1, 0.75);
  EXPECT_DOUBLE_EQ(m.pre_acc, 60.0);
  EXPECT_DOUBLE_EQ(m.post_acc, 80.0);
  EXPECT_NEAR(m.increased_acc, 20.0, 1e-12);
  EXPECT_EQ(m.flagged_adv, 3u);
  EXPECT_EQ(m.flagged_clean, 1u);
}

TEST(Metrics, NeverFlaggingDetector) {
  std::vector<Verdict> clean(3, verdict(false, 1)), adv(3, verdict(false, 0));
  const auto m = score_verdicts(clean, std::vector<std::size_t>(3, 1), adv, std::vector<std::size_t>(3, 1));
  EXPECT_EQ(m.tpr, 0.0);
  EXPECT_EQ(m.precision, 0.0);
  EXPECT_EQ(m.f1, 0.0);
  EXPECT_EQ(m.increased_acc, 0.0);
  EXPECT_THROW(score_verdicts({}, {}, adv, std::vector<std::size_t>(3, 1)), std::invalid_argument);
}

TEST(Metrics, MatchesConfusionMatrixOracle) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t na = 1 + rng.index(30), nc = 1 + rng.index(30);
    std::vector<Verdict> adv, clean;
    std::vector<std::size_t> al, cl;
    double tp = 0, fp = 0, fn = 0, tn = 0, right_before = 0, right_after = 0;
    for (std::size_t i = 0; i < na; ++i) {
      const bool f = rng.bernoulli(0.6);
      const std::size_t label = rng.index(2), pred = rng.bernoulli(0.2) ? label : 1 - label;
      adv.push_back(verdict(f, pred));
      al.push_back(label);
      (f ? tp : fn) += 1;
      right_before += pred == label;
      right_after += f;
    }
    for (std::size_t i = 0; i < nc; ++i) {
      const bool f = rng.bernoulli(0.2);
      const std::size_t label = rng.index(2), pred = rng.bernoulli(0.9) ? label : 1 - label;
      clean.push_back(verdict(f, pred));
      cl.push_back(label);
      (f ? fp : tn) += 1;
      right_before += pred == label;
      right_after += pred == label && !f;
    }
    const auto m = score_verdicts(clean, cl, adv, al);
    const double recall = tp / (tp + fn);
    const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double f1 = tp > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
    EXPECT_NEAR(m.tpr, recall, 1e-12);
    EXPECT_NEAR(m.fpr, fp / (fp + tn), 1e-12);
    EXPECT_NEAR(m.precision, precision, 1e-12);
    EXPECT_NEAR(m.f1, f1, 1e-12);
    EXPECT_NEAR(m.increased_acc, 100.0 * (right_after - right_before) / static_cast<double>(na + nc), 1e-9);
    EXPECT_NEAR(m.pq.p, tn / (tn + fp), 1e-12);
    EXPECT_NEAR(m.pq.q, fn / (tp + fn), 1e-12);
  }
}

TEST(CleanImpact, NeverAndAlwaysFlag) {
  const auto victim = lexical_victim({{"good", 2.0}, {"bad", -2.0}});
  const auto data = testutil::toy_separable();
  Detector never = [&](const std::vector<std::string>& t) { return verdict(false, argmax(victim(t))); };
  Detector always = [&](const std::vector<std::string>& t) { return verdict(true, argmax(victim(t))); };
  auto ci = clean_impact(never, data, victim);
  EXPECT_EQ(ci.original_acc, 1.0);
  EXPECT_EQ(ci.detecting_acc, 1.0);
  ci = clean_impact(always, data, victim);
  EXPECT_EQ(ci.original_acc, 1.0);
  EXPECT_EQ(ci.detecting_acc, 0.0);
  EXPECT_THROW(clean_impact(never, {}, victim), std::invalid_argument);
}

TEST(RunConfig, ParsesKeysAndComments) {
  std::istringstream in(
      "# experiment\n"
      "train_path = a.tsv   # trailing comment\n"
      "test_path=b.tsv\n"
      "\n"
      "head = cnn\n"
      "dim = 64\n"
      "attack = textbugger\n"
      "max_word_frac = 0.1\n"
      "ablation = false\n");
  const auto cfg = parse_run_config(in);
  EXPECT_EQ(cfg.train_path, "a.tsv");
  EXPECT_EQ(cfg.test_path, "b.tsv");
  EXPECT_EQ(cfg.model.kind, HeadKind::Cnn);
  EXPECT_EQ(cfg.model.dim, 64u);
  EXPECT_EQ(cfg.attack, AttackKind::TextBugger);
  EXPECT_DOUBLE_EQ(cfg.attack_cfg.max_word_frac, 0.1);
  EXPECT_FALSE(cfg.ablation);
}

TEST(RunConfig, ErrorsNameTheLine) {
  std::istringstream unknown("dim = 10\nwidth = 3\n");
  try {
    parse_run_config(unknown, "x.conf");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("width"), std::string::npos);
  }
  std::istringstream no_eq("dim 10\n");
  EXPECT_THROW(parse_run_config(no_eq), ParseError);
  std::istringstream bad_num("lr = fast\n");
  EXPECT_THROW(parse_run_config(bad_num), ParseError);
  EXPECT_THROW(load_run_config("no_such.conf"), ParseError);
}

TEST(Report, MetricsRowUsesRoundTripPrecision) {
  DetectionMetrics m;
  m.tpr = 0.1;
  m.f1 = 2.0 / 3.0;
  m.n_adv = 7;
  std::ostringstream out;
  write_metrics_row(out, "treated", "pwws", m);
  const std::string row = out.str();
  EXPECT_EQ(row.rfind("treated\tpwws\t0.10000000000000001\t0\t0\t0.66666666666666663\t", 0), 0u);
  EXPECT_EQ(row.substr(row.size() - 3), "\t7\n");
  EXPECT_EQ(std::count(row.begin(), row.end(), '\t'), std::count(kMetricsHeader.begin(), kMetricsHeader.end(), '\t'));
  EXPECT_EQ(std::stod(fmt_exact(1.0 / 3.0)), 1.0 / 3.0);
}

TEST(Experiment, SmallRunIsDeterministic) {
  const auto dir = testutil::scratch_dir("experiment");
  auto corpus_cfg = synth::CorpusConfig::sentences();
  corpus_cfg.train_size = 600;
  corpus_cfg.test_size = 200;
  const auto corpus = synth::make_corpus(corpus_cfg);
  save_dataset((dir / "train.tsv").string(), corpus.train);
  save_dataset((dir / "test.tsv").string(), corpus.test);
  save_synonyms((dir / "lexicon.tsv").string(), synth::make_lexicon());

  RunConfig cfg;
  cfg.train_path = (dir / "train.tsv").string();
  cfg.test_path = (dir / "test.tsv").string();
  cfg.lexicon_path = (dir / "lexicon.tsv").string();
  cfg.model.dim = 30;
  cfg.model.hidden = 16;
  cfg.train.epochs = 20;
  cfg.train.batch_size = 8;
  cfg.train.lr = 0.5;
  cfg.train.max_len = 40;
  cfg.min_freq = 1;
  cfg.attack_cfg.max_word_frac = 0.5;
  cfg.n_pairs = 5;

  cfg.out_dir = (dir / "a").string();
  const auto a = run_experiment(cfg);
  cfg.out_dir = (dir / "b").string();
  const auto b = run_experiment(cfg);

  ASSERT_TRUE(a.stm.has_value());
  EXPECT_EQ(a.treated.n_adv, 5u);
  EXPECT_GT(a.victim_test_acc, 0.7);
  const auto ma = slurp(dir / "a" / "metrics.tsv");
  EXPECT_EQ(ma, slurp(dir / "b" / "metrics.tsv"));
  EXPECT_EQ(std::count(ma.begin(), ma.end(), '\n'), 3);
  EXPECT_NE(ma.find("\ntreated\tpwws\t"), std::string::npos);
  EXPECT_NE(ma.find("\nstm\tpwws\t"), std::string::npos);
  for (const char* f : {"treated.bin", "stm.bin", "pq.tsv", "clean_impact.tsv", "adversarial.tsv", "summary.txt"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / "a" / f)) << f;
  }
  EXPECT_EQ(load_adversarial_tsv((dir / "a" / "adversarial.tsv").string()).size(), 5u);
}

TEST(Experiment, MissingInputsAreStageErrors) {
  RunConfig cfg;
  EXPECT_THROW(run_experiment(cfg), StageError);
  cfg.train_path = "absent_train.tsv";
  cfg.test_path = "absent_test.tsv";
  cfg.out_dir = testutil::scratch_dir("experiment_missing").string();
  try {
    run_experiment(cfg);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_NE(std::string(e.what()).find("load-data"), std::string::npos);
  }
}
