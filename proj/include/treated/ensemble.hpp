#pragma once

// Reference-model ensembles for adversarial-input detection.
//
// A ReferenceEnsemble splits the embedding matrix into N contiguous column
// blocks. Each block feeds the same reference head (one set of parameters,
// input width d/N), giving N reference classifiers; the victim keeps its own
// head over the full width. Everything is trained jointly so gradients from
// all N + 1 losses land in the shared embedding. An input is flagged as
// adversarial when the reference predictions are not unanimous.
//
// StmEnsemble is the ablation baseline: N full-width models trained
// independently with different seeds.

#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "treated/models.hpp"

namespace treated {

inline constexpr std::size_t kDefaultReferences = 3;

/// N contiguous, disjoint column blocks covering [0, dim).
inline std::vector<ColumnRange> decompose(std::size_t dim, std::size_t n_refs) {
  if (n_refs < 2) throw std::invalid_argument("decompose: need at least 2 reference models");
  if (dim % n_refs != 0) {
    throw std::invalid_argument("decompose: embedding dim " + std::to_string(dim) +
                                " is not divisible by " + std::to_string(n_refs));
  }
  const std::size_t width = dim / n_refs;
  std::vector<ColumnRange> out;
  for (std::size_t i = 0; i < n_refs; ++i) out.push_back({i * width, (i + 1) * width});
  return out;
}

inline bool is_consistent(std::span<const std::size_t> labels) {
  if (labels.size() < 2) throw std::invalid_argument("is_consistent: need at least 2 labels");
  return std::all_of(labels.begin(), labels.end(), [&](std::size_t l) { return l == labels.front(); });
}

struct Verdict {
  bool flagged = false;  // true = adversarial
  std::size_t victim_label = 0;
  std::vector<std::size_t> reference_labels;
  bool consistent = true;
};

struct DetectOptions {
  bool victim_votes = false;  // add the victim as an extra voter
};

inline Verdict make_verdict(std::size_t victim_label, std::vector<std::size_t> reference_labels,
                            const DetectOptions& opts = {}) {
  Verdict v;
  v.victim_label = victim_label;
  v.reference_labels = std::move(reference_labels);
  if (opts.victim_votes) {
    auto voters = v.reference_labels;
    voters.push_back(victim_label);
    v.consistent = is_consistent(voters);
  } else {
    v.consistent = is_consistent(v.reference_labels);
  }
  v.flagged = !v.consistent;
  return v;
}

struct EnsembleConfig {
  ModelConfig model;
  std::size_t n_refs = kDefaultReferences;
};

struct ReferenceEnsemble {
  Tensor2 embedding;  // vocab x dim, shared by the victim and all references
  std::size_t n_refs = kDefaultReferences;
  HeadParams victim_head;  // input width dim
  HeadParams ref_head;     // input width dim / n_refs, shared by every slice

  std::size_t dim() const noexcept { return embedding.cols(); }
  std::size_t vocab_size() const noexcept { return embedding.rows(); }
  std::size_t slice_width() const noexcept { return dim() / n_refs; }
  std::size_t num_classes() const noexcept { return victim_head.shape.classes; }
  HeadKind kind() const noexcept { return victim_head.shape.kind; }
  std::vector<ColumnRange> slices() const { return decompose(dim(), n_refs); }

  static ReferenceEnsemble init(std::size_t vocab_size, const EnsembleConfig& cfg, std::uint64_t seed) {
    const auto ranges = decompose(cfg.model.dim, cfg.n_refs);
    Rng rng(seed);
    ReferenceEnsemble e;
    e.n_refs = cfg.n_refs;
    e.embedding = init_embedding(vocab_size, cfg.model.dim, rng);
    e.victim_head = HeadParams::init(cfg.model.head_shape(cfg.model.dim), rng);
    e.ref_head = HeadParams::init(cfg.model.head_shape(ranges.front().width()), rng);
    return e;
  }

  ReferenceEnsemble zeros_like() const {
    ReferenceEnsemble g;
    g.n_refs = n_refs;
    g.embedding = Tensor2(embedding.rows(), embedding.cols());
    g.victim_head = HeadParams::zeros(victim_head.shape);
    g.ref_head = HeadParams::zeros(ref_head.shape);
    return g;
  }

  /// Serialization order: embedding, victim head, reference head.
  std::vector<Tensor2*> tensors() {
    std::vector<Tensor2*> out{&embedding};
    for (auto* t : victim_head.tensors()) out.push_back(t);
    for (auto* t : ref_head.tensors()) out.push_back(t);
    return out;
  }
  std::vector<const Tensor2*> tensors() const {
    std::vector<const Tensor2*> out{&embedding};
    for (auto* t : victim_head.tensors()) out.push_back(t);
    for (auto* t : ref_head.tensors()) out.push_back(t);
    return out;
  }

  /// Standalone copy of the victim classifier.
  Model victim() const { return Model{embedding, victim_head}; }

  friend bool operator==(const ReferenceEnsemble&, const ReferenceEnsemble&) = default;
};

inline std::vector<double> victim_logits(const ReferenceEnsemble& ens, std::span<const TokenId> ids) {
  check_ids(ids, ens.vocab_size());
  return head_forward(ens.victim_head, ens.embedding, ids, {0, ens.dim()});
}

inline Prediction predict_victim(const ReferenceEnsemble& ens, const std::vector<std::string>& tokens,
                                 const Vocabulary& vocab, std::size_t max_len) {
  return prediction_from_logits(victim_logits(ens, encode(tokens, vocab, max_len)));
}

/// Label of reference i = argmax of the shared reference head on slice i.
inline std::vector<std::size_t> predict_references(const ReferenceEnsemble& ens, std::span<const TokenId> ids) {
  check_ids(ids, ens.vocab_size());
  std::vector<std::size_t> labels;
  for (const auto& cols : ens.slices()) {
    labels.push_back(argmax(head_forward(ens.ref_head, ens.embedding, ids, cols)));
  }
  return labels;
}

inline Verdict detect_tokens(const ReferenceEnsemble& ens, const std::vector<std::string>& tokens,
                             const Vocabulary& vocab, std::size_t max_len, const DetectOptions& opts = {}) {
  const auto ids = encode(tokens, vocab, max_len);
  const std::size_t victim = argmax(victim_logits(ens, ids));
  return make_verdict(victim, predict_references(ens, ids), opts);
}

inline Verdict detect(const ReferenceEnsemble& ens, const std::string& text, const Vocabulary& vocab,
                      std::size_t max_len, const DetectOptions& opts = {}) {
  return detect_tokens(ens, tokenize(text), vocab, max_len, opts);
}

/// Victim loss plus the sum of all reference losses, for one example.
inline double ensemble_loss_grad(const ReferenceEnsemble& ens, std::span<const TokenId> ids,
                                 std::size_t label, ReferenceEnsemble& grads) {
  HeadTrace trace;
  head_forward(ens.victim_head, ens.embedding, ids, {0, ens.dim()}, &trace);
  auto ce = cross_entropy(softmax(trace.logits), label);
  double loss = ce.loss;
  head_backward(ens.victim_head, ens.embedding, ids, {0, ens.dim()}, trace, ce.dlogits, grads.victim_head,
                grads.embedding);
  for (const auto& cols : ens.slices()) {
    head_forward(ens.ref_head, ens.embedding, ids, cols, &trace);
    ce = cross_entropy(softmax(trace.logits), label);
    loss += ce.loss;
    head_backward(ens.ref_head, ens.embedding, ids, cols, trace, ce.dlogits, grads.ref_head, grads.embedding);
  }
  return loss;
}

struct TrainedEnsemble {
  ReferenceEnsemble ensemble;
  std::vector<double> loss_history;
};

inline TrainedEnsemble joint_train(const Vocabulary& vocab, const std::vector<Example>& data,
                                   const EnsembleConfig& ens_cfg, const TrainConfig& cfg) {
  validate_training(data, ens_cfg.model.classes, cfg);
  TrainedEnsemble out{ReferenceEnsemble::init(vocab.size(), ens_cfg, cfg.seed), {}};
  const auto encoded = encode_all(data, vocab, cfg.max_len);
  out.loss_history = sgd_train(out.ensemble, encoded, cfg, ensemble_loss_grad);
  return out;
}

struct StmEnsemble {
  std::vector<Model> models;

  std::size_t size() const noexcept { return models.size(); }
};

/// N standard models trained independently with seeds seed, seed+1, ...
inline StmEnsemble train_stm(const Vocabulary& vocab, const std::vector<Example>& data, std::size_t n_refs,
                             const ModelConfig& model_cfg, const TrainConfig& cfg) {
  if (n_refs < 2) throw std::invalid_argument("train_stm: need at least 2 reference models");
  validate_training(data, model_cfg.classes, cfg);
  StmEnsemble out;
  for (std::size_t i = 0; i < n_refs; ++i) {
    TrainConfig member = cfg;
    member.seed = cfg.seed + i;
    out.models.push_back(train_model(data, vocab, model_cfg, member).model);
  }
  return out;
}

inline std::vector<std::size_t> predict_references(const StmEnsemble& stm, std::span<const TokenId> ids) {
  std::vector<std::size_t> labels;
  for (const auto& m : stm.models) labels.push_back(argmax(forward(m, ids)));
  return labels;
}

/// The first member stands in as the victim; the harness substitutes the real one.
inline Verdict detect_tokens(const StmEnsemble& stm, const std::vector<std::string>& tokens,
                             const Vocabulary& vocab, std::size_t max_len, const DetectOptions& opts = {}) {
  if (stm.models.size() < 2) throw std::invalid_argument("detect: STM ensemble needs at least 2 models");
  const auto ids = encode(tokens, vocab, max_len);
  auto labels = predict_references(stm, ids);
  const std::size_t victim = labels.front();
  return make_verdict(victim, std::move(labels), opts);
}

inline Verdict detect(const StmEnsemble& stm, const std::string& text, const Vocabulary& vocab,
                      std::size_t max_len, const DetectOptions& opts = {}) {
  return detect_tokens(stm, tokenize(text), vocab, max_len, opts);
}

}  // namespace treated
