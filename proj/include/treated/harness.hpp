#pragma once

// Experiment harness: detection-set construction, detection metrics,
// clean-data impact, run configuration and the end-to-end experiment.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "treated/attacks.hpp"
#include "treated/checkpoint.hpp"
#include "treated/ensemble.hpp"
#include "treated/errors.hpp"
#include "treated/models.hpp"
#include "treated/rng.hpp"
#include "treated/textcore.hpp"
#include "treated/theory.hpp"

namespace treated {

/// A detector sees tokens and reports the victim's label plus the reference vote.
using Detector = std::function<Verdict(const std::vector<std::string>&)>;

inline ProbFn ensemble_victim_fn(const ReferenceEnsemble& ens, const Vocabulary& vocab, std::size_t max_len) {
  return [&ens, &vocab, max_len](const std::vector<std::string>& tokens) {
    return predict_victim(ens, tokens, vocab, max_len).probs;
  };
}

inline Detector treated_detector(const ReferenceEnsemble& ens, const Vocabulary& vocab, std::size_t max_len,
                                 DetectOptions opts = {}) {
  return [&ens, &vocab, max_len, opts](const std::vector<std::string>& tokens) {
    return detect_tokens(ens, tokens, vocab, max_len, opts);
  };
}

/// STM references screening a separate victim.
inline Detector stm_detector(const StmEnsemble& stm, const Vocabulary& vocab, std::size_t max_len, ProbFn victim,
                             DetectOptions opts = {}) {
  return [&stm, &vocab, max_len, victim = std::move(victim), opts](const std::vector<std::string>& tokens) {
    const auto ids = encode(tokens, vocab, max_len);
    return make_verdict(argmax(victim(tokens)), predict_references(stm, ids), opts);
  };
}

struct DetectionSet {
  std::vector<AdversarialExample> adversarial;
  std::vector<Example> clean;  // originals of `adversarial`, same order
  std::string attack_name;
  std::string victim_id;
  std::size_t attempted = 0;  // correctly classified examples the attack was run on

  double attack_success_rate() const {
    return attempted ? static_cast<double>(adversarial.size()) / static_cast<double>(attempted) : 0.0;
  }
};

// Visits the dataset in seeded shuffled order, attacks every example the
// victim gets right, and keeps the first n successes with their originals.
inline DetectionSet build_detection_set(const ProbFn& victim, const AttackFn& attack, const std::vector<Example>& data,
                                        std::size_t n, std::uint64_t seed, std::string attack_name = {},
                                        std::string victim_id = "victim") {
  if (n == 0) throw std::invalid_argument("build_detection_set: n must be >= 1");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));

  DetectionSet set;
  set.attack_name = std::move(attack_name);
  set.victim_id = std::move(victim_id);
  for (std::size_t i : order) {
    if (set.adversarial.size() == n) break;
    const Example& ex = data[i];
    if (ex.tokens.empty() || argmax(victim(ex.tokens)) != ex.label) continue;
    ++set.attempted;
    auto adv = attack(ex);
    if (!adv) continue;
    if (set.attack_name.empty()) set.attack_name = adv->attack_name;
    set.clean.push_back(ex);
    set.adversarial.push_back(std::move(*adv));
  }
  if (set.adversarial.size() < n) throw ShortfallError(set.adversarial.size(), n);
  return set;
}

struct DetectionMetrics {
  double tpr = 0.0;
  double fpr = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  double pre_acc = 0.0;        // percent
  double post_acc = 0.0;       // percent
  double increased_acc = 0.0;  // percentage points
  PQEstimate pq;
  std::size_t flagged_adv = 0;
  std::size_t flagged_clean = 0;
  std::size_t n_adv = 0;
  std::size_t n_clean = 0;
};

inline double f1_score(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

// Positive class = adversarial. Accuracy before detection counts the victim's
// raw predictions; after detection a flagged adversarial input counts as
// blocked (correct) and a flagged clean input as rejected (incorrect).
inline DetectionMetrics score_verdicts(const std::vector<Verdict>& clean, const std::vector<std::size_t>& clean_labels,
                                       const std::vector<Verdict>& adv, const std::vector<std::size_t>& adv_labels) {
  if (clean.empty() || adv.empty()) throw std::invalid_argument("evaluate_detection: empty detection set");
  if (clean.size() != clean_labels.size() || adv.size() != adv_labels.size()) {
    throw std::invalid_argument("evaluate_detection: verdict / label count mismatch");
  }
  DetectionMetrics m;
  m.n_adv = adv.size();
  m.n_clean = clean.size();
  std::size_t pre_correct = 0, post_correct = 0;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    m.flagged_adv += adv[i].flagged;
    pre_correct += adv[i].victim_label == adv_labels[i];
    post_correct += adv[i].flagged;
  }
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const bool right = clean[i].victim_label == clean_labels[i];
    m.flagged_clean += clean[i].flagged;
    pre_correct += right;
    post_correct += right && !clean[i].flagged;
  }
  const auto total = static_cast<double>(adv.size() + clean.size());
  m.tpr = static_cast<double>(m.flagged_adv) / static_cast<double>(m.n_adv);
  m.fpr = static_cast<double>(m.flagged_clean) / static_cast<double>(m.n_clean);
  const std::size_t flagged = m.flagged_adv + m.flagged_clean;
  m.precision = flagged ? static_cast<double>(m.flagged_adv) / static_cast<double>(flagged) : 0.0;
  m.f1 = f1_score(m.precision, m.tpr);
  m.pre_acc = 100.0 * static_cast<double>(pre_correct) / total;
  m.post_acc = 100.0 * static_cast<double>(post_correct) / total;
  m.increased_acc = m.post_acc - m.pre_acc;
  m.pq = estimate_pq(clean, adv);
  return m;
}

inline DetectionMetrics evaluate_detection(const Detector& detector, const DetectionSet& set) {
  if (set.adversarial.empty() || set.clean.empty()) throw std::invalid_argument("evaluate_detection: empty detection set");
  std::vector<Verdict> clean_v, adv_v;
  std::vector<std::size_t> clean_l, adv_l;
  for (const auto& ex : set.clean) {
    clean_v.push_back(detector(ex.tokens));
    clean_l.push_back(ex.label);
  }
  for (const auto& a : set.adversarial) {
    adv_v.push_back(detector(a.perturbed_tokens));
    adv_l.push_back(a.original.label);
  }
  return score_verdicts(clean_v, clean_l, adv_v, adv_l);
}

struct CleanImpact {
  double original_acc = 0.0;   // fraction
  double detecting_acc = 0.0;  // fraction correct and not flagged
};

inline CleanImpact clean_impact(const Detector& detector, const std::vector<Example>& test, const ProbFn& victim) {
  if (test.empty()) throw std::invalid_argument("clean_impact: empty test set");
  std::size_t correct = 0, kept = 0;
  for (const auto& ex : test) {
    const bool right = argmax(victim(ex.tokens)) == ex.label;
    correct += right;
    kept += right && !detector(ex.tokens).flagged;
  }
  const auto n = static_cast<double>(test.size());
  return {static_cast<double>(correct) / n, static_cast<double>(kept) / n};
}

/// Reconstructs a detection set from an adversarial TSV (clean side = the originals).
inline DetectionSet detection_set_from(std::vector<AdversarialExample> advs) {
  DetectionSet set;
  for (const auto& a : advs) set.clean.push_back(a.original);
  if (!advs.empty()) set.attack_name = advs.front().attack_name;
  set.attempted = advs.size();
  set.adversarial = std::move(advs);
  return set;
}

// ---------------------------------------------------------------------------
// Reports

inline std::string fmt_exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline constexpr std::string_view kMetricsHeader =
    "detector\tattack\ttpr\tfpr\tprecision\tf1\tpre_acc\tpost_acc\tincreased_acc\tp\tq\tn_pairs";

inline void write_metrics_row(std::ostream& out, const std::string& detector, const std::string& attack,
                              const DetectionMetrics& m) {
  out << detector << '\t' << attack;
  for (double v : {m.tpr, m.fpr, m.precision, m.f1, m.pre_acc, m.post_acc, m.increased_acc, m.pq.p, m.pq.q}) {
    out << '\t' << fmt_exact(v);
  }
  out << '\t' << m.n_adv << '\n';
}

// ---------------------------------------------------------------------------
// Run configuration: `key = value` lines, '#' starts a comment.

struct RunConfig {
  std::string train_path;
  std::string test_path;
  std::string lexicon_path;
  std::string out_dir = "out";
  std::string treated_path;  // load instead of training when set
  std::string stm_path;

  ModelConfig model;
  std::size_t n_refs = kDefaultReferences;
  TrainConfig train;
  std::size_t min_freq = kDefaultMinFreq;

  AttackKind attack = AttackKind::Pwws;
  AttackConfig attack_cfg;
  std::size_t n_pairs = 200;
  bool ablation = true;
  bool victim_votes = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_pairs < 1) throw std::invalid_argument("config: n_pairs must be >= 1");
    if (train_path.empty() && treated_path.empty()) throw std::invalid_argument("config: train_path is required");
    if (test_path.empty()) throw std::invalid_argument("config: test_path is required");
    decompose(model.dim, n_refs);
    attack_cfg.validate();
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  in >> out;
  if (!in || !in.eof()) throw std::invalid_argument("config: bad value '" + v + "' for key '" + key + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: bad boolean '" + v + "' for key '" + key + "'");
}

}  // namespace detail

/// Applies one key=value setting; unknown keys are rejected.
inline void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_number;
  const std::map<std::string, std::function<void(const std::string&)>> setters = {
      {"train_path", [&](const std::string& v) { cfg.train_path = v; }},
      {"test_path", [&](const std::string& v) { cfg.test_path = v; }},
      {"lexicon_path", [&](const std::string& v) { cfg.lexicon_path = v; }},
      {"out_dir", [&](const std::string& v) { cfg.out_dir = v; }},
      {"treated_path", [&](const std::string& v) { cfg.treated_path = v; }},
      {"stm_path", [&](const std::string& v) { cfg.stm_path = v; }},
      {"head", [&](const std::string& v) { cfg.model.kind = parse_head_kind(v); }},
      {"dim", [&](const std::string& v) { cfg.model.dim = parse_number<std::size_t>("dim", v); }},
      {"hidden", [&](const std::string& v) { cfg.model.hidden = parse_number<std::size_t>("hidden", v); }},
      {"filters", [&](const std::string& v) { cfg.model.filters = parse_number<std::size_t>("filters", v); }},
      {"kernel", [&](const std::string& v) { cfg.model.kernel = parse_number<std::size_t>("kernel", v); }},
      {"classes", [&](const std::string& v) { cfg.model.classes = parse_number<std::size_t>("classes", v); }},
      {"n_refs", [&](const std::string& v) { cfg.n_refs = parse_number<std::size_t>("n_refs", v); }},
      {"epochs", [&](const std::string& v) { cfg.train.epochs = parse_number<std::size_t>("epochs", v); }},
      {"batch_size", [&](const std::string& v) { cfg.train.batch_size = parse_number<std::size_t>("batch_size", v); }},
      {"lr", [&](const std::string& v) { cfg.train.lr = parse_number<double>("lr", v); }},
      {"max_len", [&](const std::string& v) { cfg.train.max_len = parse_number<std::size_t>("max_len", v); }},
      {"min_freq", [&](const std::string& v) { cfg.min_freq = parse_number<std::size_t>("min_freq", v); }},
      {"attack", [&](const std::string& v) { cfg.attack = parse_attack_kind(v); }},
      {"max_word_frac", [&](const std::string& v) { cfg.attack_cfg.max_word_frac = parse_number<double>("max_word_frac", v); }},
      {"max_char_edits", [&](const std::string& v) {
         cfg.attack_cfg.max_char_edits_per_token = parse_number<std::size_t>("max_char_edits", v);
       }},
      {"population", [&](const std::string& v) { cfg.attack_cfg.population = parse_number<std::size_t>("population", v); }},
      {"generations", [&](const std::string& v) { cfg.attack_cfg.generations = parse_number<std::size_t>("generations", v); }},
      {"mutation_rate", [&](const std::string& v) { cfg.attack_cfg.mutation_rate = parse_number<double>("mutation_rate", v); }},
      {"n_pairs", [&](const std::string& v) { cfg.n_pairs = parse_number<std::size_t>("n_pairs", v); }},
      {"ablation", [&](const std::string& v) { cfg.ablation = detail::parse_bool("ablation", v); }},
      {"victim_votes", [&](const std::string& v) { cfg.victim_votes = detail::parse_bool("victim_votes", v); }},
      {"seed", [&](const std::string& v) { cfg.seed = parse_number<std::uint64_t>("seed", v); }},
  };
  auto it = setters.find(key);
  if (it == setters.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  it->second(value);
}

inline RunConfig parse_run_config(std::istream& in, const std::string& name = "<config>") {
  RunConfig cfg;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = detail::trim(raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(name, line_no, "expected key = value");
    try {
      apply_setting(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw ParseError(name, line_no, e.what());
    }
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open config file");
  return parse_run_config(in, path);
}

// ---------------------------------------------------------------------------
// End-to-end experiment

struct ExperimentReport {
  std::string attack_name;
  double victim_test_acc = 0.0;
  double attack_success_rate = 0.0;
  std::size_t attack_attempts = 0;
  DetectionMetrics treated;
  std::optional<DetectionMetrics> stm;
  CleanImpact treated_clean;
  std::optional<CleanImpact> stm_clean;
  std::filesystem::path metrics_path;
};

namespace detail {

template <typename F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

inline void write_pq_row(std::ostream& out, const std::string& name, const PQEstimate& pq) {
  auto opt = [](auto f) {
    try {
      return fmt_exact(f());
    } catch (const UndefinedPosterior&) {
      return std::string("NA");
    }
  };
  out << name << '\t' << fmt_exact(pq.p) << '\t' << fmt_exact(pq.q) << '\t' << pq.n_clean << '\t' << pq.n_adv << '\t'
      << opt([&] { return posterior_given_consistent(pq.p, pq.q); }) << '\t'
      << opt([&] { return posterior_given_inconsistent(pq.p, pq.q); }) << '\n';
}

}  // namespace detail

// Trains (or loads) the jointly trained ensemble whose victim head is the
// attacked model, optionally trains the STM ablation ensemble, builds the
// detection set on the test split and writes:
//   metrics.tsv, pq.tsv, clean_impact.tsv, adversarial.tsv, summary.txt
inline ExperimentReport run_experiment(const RunConfig& cfg) {
  detail::stage("config", [&] { cfg.validate(); });
  namespace fs = std::filesystem;
  const fs::path out_dir(cfg.out_dir);
  detail::stage("output", [&] { fs::create_directories(out_dir); });

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  const std::size_t max_len = tc.max_len;

  auto test = detail::stage("load-data", [&] { return load_dataset(cfg.test_path, cfg.model.classes).examples; });
  const SynonymLexicon lexicon =
      detail::stage("load-lexicon", [&] { return cfg.lexicon_path.empty() ? SynonymLexicon{} : load_synonyms(cfg.lexicon_path); });

  Vocabulary vocab;
  ReferenceEnsemble ens;
  std::vector<Example> train;
  if (!cfg.train_path.empty()) {
    train = detail::stage("load-data", [&] { return load_dataset(cfg.train_path, cfg.model.classes).examples; });
  }
  if (!cfg.treated_path.empty()) {
    detail::stage("load-ensemble", [&] {
      auto ck = load_checkpoint(cfg.treated_path);
      vocab = ck.vocab;
      ens = std::get<ReferenceEnsemble>(std::move(ck.content));
    });
  } else {
    detail::stage("train-treated", [&] {
      vocab = build_vocab(train, cfg.min_freq);
      ens = joint_train(vocab, train, EnsembleConfig{cfg.model, cfg.n_refs}, tc).ensemble;
      save_ensemble(ens, vocab, (out_dir / "treated.bin").string());
    });
  }

  StmEnsemble stm;
  if (cfg.ablation) {
    detail::stage("train-stm", [&] {
      if (!cfg.stm_path.empty()) {
        stm = load_stm(cfg.stm_path, vocab);
      } else {
        if (train.empty()) throw std::invalid_argument("STM ablation needs train_path or stm_path");
        stm = train_stm(vocab, train, cfg.n_refs, cfg.model, tc);
        save_stm(stm, vocab, (out_dir / "stm.bin").string());
      }
    });
  }

  const ProbFn victim = ensemble_victim_fn(ens, vocab, max_len);
  AttackConfig acfg = cfg.attack_cfg;
  acfg.seed = cfg.seed;
  std::optional<CandidateSource> neighbors;
  if (cfg.attack == AttackKind::TextFooler || cfg.attack == AttackKind::TextBugger) {
    neighbors = CandidateSource::embedding(ens.embedding, vocab);
  }
  const AttackFn attack = detail::stage("attack", [&] { return make_attack(cfg.attack, victim, lexicon, neighbors, acfg); });
  const DetectionSet set = detail::stage("attack", [&] {
    return build_detection_set(victim, attack, test, cfg.n_pairs, cfg.seed, to_string(cfg.attack), "treated-victim");
  });

  ExperimentReport report;
  report.attack_name = set.attack_name;
  report.attack_attempts = set.attempted;
  report.attack_success_rate = set.attack_success_rate();

  DetectOptions opts;
  opts.victim_votes = cfg.victim_votes;
  const Detector treated = treated_detector(ens, vocab, max_len, opts);
  detail::stage("evaluate", [&] {
    report.treated = evaluate_detection(treated, set);
    report.treated_clean = clean_impact(treated, test, victim);
    report.victim_test_acc = report.treated_clean.original_acc;
    if (cfg.ablation) {
      const Detector stm_det = stm_detector(stm, vocab, max_len, victim, opts);
      report.stm = evaluate_detection(stm_det, set);
      report.stm_clean = clean_impact(stm_det, test, victim);
    }
  });

  detail::stage("report", [&] {
    report.metrics_path = out_dir / "metrics.tsv";
    std::ofstream metrics(report.metrics_path, std::ios::binary);
    metrics << kMetricsHeader << '\n';
    write_metrics_row(metrics, "treated", set.attack_name, report.treated);
    if (report.stm) write_metrics_row(metrics, "stm", set.attack_name, *report.stm);

    std::ofstream pq(out_dir / "pq.tsv", std::ios::binary);
    pq << "detector\tp\tq\tn_clean\tn_adv\tpec\tped\n";
    detail::write_pq_row(pq, "treated", report.treated.pq);
    if (report.stm) detail::write_pq_row(pq, "stm", report.stm->pq);

    std::ofstream clean(out_dir / "clean_impact.tsv", std::ios::binary);
    clean << "detector\toriginal_acc\tdetecting_acc\tn\n";
    clean << "treated\t" << fmt_exact(report.treated_clean.original_acc) << '\t'
          << fmt_exact(report.treated_clean.detecting_acc) << '\t' << test.size() << '\n';
    if (report.stm_clean) {
      clean << "stm\t" << fmt_exact(report.stm_clean->original_acc) << '\t' << fmt_exact(report.stm_clean->detecting_acc)
            << '\t' << test.size() << '\n';
    }

    std::ofstream adv(out_dir / "adversarial.tsv", std::ios::binary);
    write_adversarial_tsv(adv, set.adversarial);

    std::ofstream summary(out_dir / "summary.txt", std::ios::binary);
    char line[256];
    summary << "attack: " << set.attack_name << "\n";
    std::snprintf(line, sizeof line, "victim test accuracy: %.2f%%\n", 100.0 * report.victim_test_acc);
    summary << line;
    std::snprintf(line, sizeof line, "attack success: %zu / %zu (%.1f%%)\n", set.adversarial.size(), set.attempted,
                  100.0 * report.attack_success_rate);
    summary << line;
    summary << "\ndetector   increased_acc   TPR(FPR)          F1      p       q\n";
    auto row = [&](const char* name, const DetectionMetrics& m) {
      std::snprintf(line, sizeof line, "%-10s %+8.1f        %5.1f(%5.2f)      %5.1f   %.4f  %.4f\n", name, m.increased_acc,
                    100.0 * m.tpr, 100.0 * m.fpr, 100.0 * m.f1, m.pq.p, m.pq.q);
      summary << line;
    };
    row("treated", report.treated);
    if (report.stm) row("stm", *report.stm);
    summary << "\nclean test set: original acc -> detecting acc\n";
    std::snprintf(line, sizeof line, "treated    %.1f -> %.1f\n", 100.0 * report.treated_clean.original_acc,
                  100.0 * report.treated_clean.detecting_acc);
    summary << line;
    if (report.stm_clean) {
      std::snprintf(line, sizeof line, "stm        %.1f -> %.1f\n", 100.0 * report.stm_clean->original_acc,
                    100.0 * report.stm_clean->detecting_acc);
      summary << line;
    }
  });
  return report;
}

}  // namespace treated
