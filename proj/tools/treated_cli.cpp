// Command-line front end: train victims and ensembles, attack, detect,
// evaluate detection sets and sweep the posterior grid.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "treated/synth.hpp"
#include "treated/treated.hpp"

namespace fs = std::filesystem;
using namespace treated;

namespace {

// Flags shared by most subcommands. Anything set here overrides --config.
struct Common {
  std::string config;
  std::vector<std::string> sets;  // raw key=value overrides
  std::optional<std::uint64_t> seed;
  std::optional<std::string> train, test, lexicon;
  std::optional<std::size_t> n_refs, n;
  std::optional<std::string> attack;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "key = value run configuration file")->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "override one config key (key=value), repeatable");
  app->add_option("--seed", c.seed, "random seed");
  app->add_option("--train", c.train, "training TSV (label<TAB>text)");
  app->add_option("--test", c.test, "test TSV");
  app->add_option("--lexicon", c.lexicon, "synonym lexicon TSV");
  app->add_option("--N", c.n_refs, "number of references");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  if (c.train) cfg.train_path = *c.train;
  if (c.test) cfg.test_path = *c.test;
  if (c.lexicon) cfg.lexicon_path = *c.lexicon;
  if (c.n_refs) cfg.n_refs = *c.n_refs;
  if (c.n) cfg.n_pairs = *c.n;
  if (c.attack) cfg.attack = parse_attack_kind(*c.attack);
  cfg.train.seed = cfg.seed;
  cfg.attack_cfg.seed = cfg.seed;
  return cfg;
}

std::vector<Example> need_data(const std::string& path, const RunConfig& cfg, const char* what) {
  if (path.empty()) throw std::invalid_argument(std::string("missing ") + what + " dataset path");
  return load_dataset(path, cfg.model.classes).examples;
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

// A loaded checkpoint viewed as a victim: plain model, TREATED victim head, or STM member 0.
struct Victim {
  Checkpoint ck;
  ProbFn prob;
};

std::unique_ptr<Victim> load_victim(const std::string& path, std::size_t max_len) {
  auto v = std::make_unique<Victim>(Victim{load_checkpoint(path), {}});
  const Vocabulary& vocab = v->ck.vocab;
  if (auto* m = std::get_if<Model>(&v->ck.content)) {
    v->prob = model_prob_fn(*m, vocab, max_len);
  } else if (auto* e = std::get_if<ReferenceEnsemble>(&v->ck.content)) {
    v->prob = ensemble_victim_fn(*e, vocab, max_len);
  } else {
    v->prob = model_prob_fn(std::get<StmEnsemble>(v->ck.content).models.front(), vocab, max_len);
  }
  return v;
}

void print_verdict(const Verdict& v) {
  std::cout << (v.flagged ? "ADVERSARIAL" : "clean") << "\tvictim=" << v.victim_label << "\trefs=";
  for (std::size_t i = 0; i < v.reference_labels.size(); ++i) std::cout << (i ? "," : "") << v.reference_labels[i];
  std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial text detection by reference-model consistency"};
  app.require_subcommand(1);

  // synth ------------------------------------------------------------------
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic review corpus and synonym lexicon");
  std::string synth_out = "data/desk";
  bool sentences = false;
  synth::CorpusConfig corpus_cfg = synth::CorpusConfig::documents();
  synth_cmd->add_option("--out", synth_out, "output directory");
  synth_cmd->add_flag("--sentences", sentences, "short single-sentence reviews instead of documents");
  synth_cmd->add_option("--seed", corpus_cfg.seed, "generator seed");
  synth_cmd->add_option("--train-size", corpus_cfg.train_size);
  synth_cmd->add_option("--test-size", corpus_cfg.test_size);

  // train ------------------------------------------------------------------
  Common train_c;
  std::string train_out = "victim.bin";
  auto* train_cmd = app.add_subcommand("train", "train a victim classifier");
  add_common(train_cmd, train_c);
  train_cmd->add_option("--out", train_out, "checkpoint path");

  // train-ensemble ---------------------------------------------------------
  Common ens_c;
  std::string ens_out = "treated.bin", ens_kind = "treated";
  auto* ens_cmd = app.add_subcommand("train-ensemble", "train a TREATED or STM reference ensemble");
  add_common(ens_cmd, ens_c);
  ens_cmd->add_option("--out", ens_out, "checkpoint path");
  ens_cmd->add_option("--ensemble", ens_kind)->check(CLI::IsMember({"treated", "stm"}));

  // attack -----------------------------------------------------------------
  Common atk_c;
  std::string atk_victim, atk_out = "adversarial.tsv";
  auto* atk_cmd = app.add_subcommand("attack", "attack a victim and write successful adversarial examples");
  add_common(atk_cmd, atk_c);
  atk_cmd->add_option("--victim", atk_victim, "victim or TREATED checkpoint")->required();
  atk_cmd->add_option("--out", atk_out, "adversarial TSV path");
  atk_cmd->add_option("--n", atk_c.n, "number of successful examples to collect");
  atk_cmd->add_option("--attack", atk_c.attack)
      ->check(CLI::IsMember({"pwws", "genetic", "deepwordbug", "textbugger", "textfooler"}));

  // detect -----------------------------------------------------------------
  Common det_c;
  std::string det_model, det_victim, det_kind = "treated";
  std::vector<std::string> det_text;
  bool victim_votes = false;
  auto* det_cmd = app.add_subcommand("detect", "screen texts (arguments or stdin lines)");
  add_common(det_cmd, det_c);
  det_cmd->add_option("--model", det_model, "ensemble checkpoint")->required();
  det_cmd->add_option("--ensemble", det_kind)->check(CLI::IsMember({"treated", "stm"}));
  det_cmd->add_option("--victim", det_victim, "victim checkpoint screened by an STM ensemble");
  det_cmd->add_flag("--victim-votes", victim_votes, "count the victim as an extra voter");
  det_cmd->add_option("text", det_text, "texts to screen");

  // eval -------------------------------------------------------------------
  Common eval_c;
  std::string eval_adv, eval_treated, eval_stm, eval_victim, eval_out = "metrics.tsv";
  auto* eval_cmd = app.add_subcommand("eval", "score detectors on a detection set");
  add_common(eval_cmd, eval_c);
  eval_cmd->add_option("--adv", eval_adv, "adversarial TSV from `attack`")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--treated", eval_treated, "TREATED checkpoint");
  eval_cmd->add_option("--stm", eval_stm, "STM checkpoint");
  eval_cmd->add_option("--victim", eval_victim, "victim checkpoint for the STM detector (default: TREATED victim head)");
  eval_cmd->add_option("--out", eval_out, "metrics TSV path");

  // sweep ------------------------------------------------------------------
  double p_step = 0.05, q_step = 0.05;
  std::string sweep_out = "-";
  auto* sweep_cmd = app.add_subcommand("sweep", "tabulate P(adv | consistent) and P(adv | inconsistent) over (p, q)");
  sweep_cmd->add_option("--p-step", p_step);
  sweep_cmd->add_option("--q-step", q_step);
  sweep_cmd->add_option("--out", sweep_out, "TSV path, '-' for stdout");

  // run --------------------------------------------------------------------
  Common run_c;
  std::optional<std::string> run_out;
  auto* run_cmd = app.add_subcommand("run", "end-to-end experiment: train, attack, detect, report");
  add_common(run_cmd, run_c);
  run_cmd->add_option("--out", run_out, "output directory");
  run_cmd->add_option("--n", run_c.n, "detection-set size");
  run_cmd->add_option("--attack", run_c.attack)
      ->check(CLI::IsMember({"pwws", "genetic", "deepwordbug", "textbugger", "textfooler"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth_cmd->parsed()) {
      if (sentences) {
        const auto seed = corpus_cfg.seed, tr = corpus_cfg.train_size, te = corpus_cfg.test_size;
        corpus_cfg = synth::CorpusConfig::sentences();
        corpus_cfg.seed = seed;
        corpus_cfg.train_size = tr;
        corpus_cfg.test_size = te;
      }
      const auto corpus = synth::make_corpus(corpus_cfg);
      fs::create_directories(synth_out);
      save_dataset((fs::path(synth_out) / "train.tsv").string(), corpus.train);
      save_dataset((fs::path(synth_out) / "test.tsv").string(), corpus.test);
      save_synonyms((fs::path(synth_out) / "lexicon.tsv").string(), synth::make_lexicon());
      const auto s = summarize(corpus.train, corpus.test);
      std::printf("wrote %s: %zu train, %zu test, avg %.1f tokens\n", synth_out.c_str(), s.train_size, s.test_size,
                  s.avg_len);
    } else if (train_cmd->parsed()) {
      const RunConfig cfg = resolve(train_c);
      const auto data = need_data(cfg.train_path, cfg, "train");
      const Vocabulary vocab = build_vocab(data, cfg.min_freq);
      const auto trained = train_model(data, vocab, cfg.model, cfg.train);
      ensure_parent(train_out);
      save_model(trained.model, vocab, train_out);
      std::printf("vocab %zu, final loss %.4f, train acc %.2f%%\n", vocab.size(), trained.loss_history.back(),
                  100.0 * accuracy(trained.model, data, vocab, cfg.train.max_len));
      if (!cfg.test_path.empty()) {
        const auto test = need_data(cfg.test_path, cfg, "test");
        std::printf("test acc %.2f%%\n", 100.0 * accuracy(trained.model, test, vocab, cfg.train.max_len));
      }
    } else if (ens_cmd->parsed()) {
      const RunConfig cfg = resolve(ens_c);
      const auto data = need_data(cfg.train_path, cfg, "train");
      const Vocabulary vocab = build_vocab(data, cfg.min_freq);
      ensure_parent(ens_out);
      if (ens_kind == "treated") {
        const auto t = joint_train(vocab, data, EnsembleConfig{cfg.model, cfg.n_refs}, cfg.train);
        save_ensemble(t.ensemble, vocab, ens_out);
        std::printf("TREATED ensemble, N=%zu, slice width %zu, final loss %.4f\n", cfg.n_refs,
                    t.ensemble.slice_width(), t.loss_history.back());
      } else {
        const auto stm = train_stm(vocab, data, cfg.n_refs, cfg.model, cfg.train);
        save_stm(stm, vocab, ens_out);
        std::printf("STM ensemble, N=%zu\n", cfg.n_refs);
      }
    } else if (atk_cmd->parsed()) {
      const RunConfig cfg = resolve(atk_c);
      const auto victim = load_victim(atk_victim, cfg.train.max_len);
      const auto test = need_data(cfg.test_path, cfg, "test");
      const SynonymLexicon lexicon = cfg.lexicon_path.empty() ? SynonymLexicon{} : load_synonyms(cfg.lexicon_path);
      std::optional<CandidateSource> neighbors;
      if (cfg.attack == AttackKind::TextFooler || cfg.attack == AttackKind::TextBugger) {
        const Tensor2* emb = nullptr;
        if (auto* m = std::get_if<Model>(&victim->ck.content)) emb = &m->embedding;
        if (auto* e = std::get_if<ReferenceEnsemble>(&victim->ck.content)) emb = &e->embedding;
        if (auto* s = std::get_if<StmEnsemble>(&victim->ck.content)) emb = &s->models.front().embedding;
        neighbors = CandidateSource::embedding(*emb, victim->ck.vocab);
      }
      const auto attack = make_attack(cfg.attack, victim->prob, lexicon, neighbors, cfg.attack_cfg);
      const auto set = build_detection_set(victim->prob, attack, test, cfg.n_pairs, cfg.seed, to_string(cfg.attack),
                                           atk_victim);
      ensure_parent(atk_out);
      std::ofstream out(atk_out, std::ios::binary);
      write_adversarial_tsv(out, set.adversarial);
      std::printf("%zu adversarial examples from %zu attempts (%.1f%% success)\n", set.adversarial.size(),
                  set.attempted, 100.0 * set.attack_success_rate());
    } else if (det_cmd->parsed()) {
      const RunConfig cfg = resolve(det_c);
      const std::size_t max_len = cfg.train.max_len;
      DetectOptions opts;
      opts.victim_votes = victim_votes || cfg.victim_votes;
      const auto ck = load_checkpoint(det_model);
      Detector detector;
      std::unique_ptr<Victim> victim;
      if (det_kind == "treated") {
        const auto& ens = std::get<ReferenceEnsemble>(ck.content);
        detector = treated_detector(ens, ck.vocab, max_len, opts);
      } else {
        const auto& stm = std::get<StmEnsemble>(ck.content);
        ProbFn prob;
        if (!det_victim.empty()) {
          victim = load_victim(det_victim, max_len);
          prob = victim->prob;
        } else {
          prob = model_prob_fn(stm.models.front(), ck.vocab, max_len);
        }
        detector = stm_detector(stm, ck.vocab, max_len, prob, opts);
      }
      if (det_text.empty()) {
        for (std::string line; std::getline(std::cin, line);) {
          if (!line.empty()) print_verdict(detector(tokenize(line)));
        }
      } else {
        for (const auto& t : det_text) print_verdict(detector(tokenize(t)));
      }
    } else if (eval_cmd->parsed()) {
      const RunConfig cfg = resolve(eval_c);
      const std::size_t max_len = cfg.train.max_len;
      if (eval_treated.empty() && eval_stm.empty()) throw std::invalid_argument("eval needs --treated and/or --stm");
      const DetectionSet set = detection_set_from(load_adversarial_tsv(eval_adv));
      ensure_parent(eval_out);
      std::ofstream out(eval_out, std::ios::binary);
      out << kMetricsHeader << '\n';
      std::optional<Checkpoint> treated_ck;
      if (!eval_treated.empty()) {
        treated_ck = load_checkpoint(eval_treated);
        const auto& ens = std::get<ReferenceEnsemble>(treated_ck->content);
        const auto m = evaluate_detection(treated_detector(ens, treated_ck->vocab, max_len), set);
        write_metrics_row(out, "treated", set.attack_name, m);
      }
      if (!eval_stm.empty()) {
        const auto ck = load_checkpoint(eval_stm);
        const auto& stm = std::get<StmEnsemble>(ck.content);
        std::unique_ptr<Victim> victim;
        ProbFn prob;
        if (!eval_victim.empty()) {
          victim = load_victim(eval_victim, max_len);
          prob = victim->prob;
        } else if (treated_ck) {
          prob = ensemble_victim_fn(std::get<ReferenceEnsemble>(treated_ck->content), treated_ck->vocab, max_len);
        } else {
          throw std::invalid_argument("eval --stm needs --victim or --treated");
        }
        const auto m = evaluate_detection(stm_detector(stm, ck.vocab, max_len, prob), set);
        write_metrics_row(out, "stm", set.attack_name, m);
      }
      std::cout << "wrote " << eval_out << '\n';
    } else if (sweep_cmd->parsed()) {
      const auto grid = sweep_grid(p_step, q_step);
      if (sweep_out == "-") {
        write_grid_tsv(std::cout, grid);
      } else {
        ensure_parent(sweep_out);
        std::ofstream out(sweep_out, std::ios::binary);
        write_grid_tsv(out, grid);
      }
    } else if (run_cmd->parsed()) {
      RunConfig cfg = resolve(run_c);
      if (run_out) cfg.out_dir = *run_out;
      run_experiment(cfg);
      std::ifstream summary(fs::path(cfg.out_dir) / "summary.txt");
      std::cout << summary.rdbuf();
    }
  } catch (const std::bad_variant_access&) {
    std::cerr << "error: checkpoint holds a different record kind than this command expects\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
