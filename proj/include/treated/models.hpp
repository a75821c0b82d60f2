#pragma once

// Victim classifiers: an embedding layer followed by either a mean-pool MLP
// head or a 1-D CNN head (conv, max-pool over time, hidden layer, output).

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "treated/numerics.hpp"
#include "treated/rng.hpp"
#include "treated/textcore.hpp"

namespace treated {

enum class HeadKind : std::uint32_t { MeanPool = 0, Cnn = 1 };

inline std::string to_string(HeadKind kind) { return kind == HeadKind::Cnn ? "cnn" : "meanpool"; }

inline HeadKind parse_head_kind(const std::string& s) {
  if (s == "meanpool" || s == "mean-pool" || s == "mean") return HeadKind::MeanPool;
  if (s == "cnn") return HeadKind::Cnn;
  throw std::invalid_argument("unknown head kind '" + s + "' (expected meanpool or cnn)");
}

struct HeadShape {
  HeadKind kind = HeadKind::MeanPool;
  std::size_t in_width = 300;
  std::size_t hidden = 100;
  std::size_t classes = 2;
  std::size_t filters = 128;  // cnn only
  std::size_t kernel = 3;     // cnn only

  // filters and kernel only matter for the cnn head
  friend bool operator==(const HeadShape& a, const HeadShape& b) {
    const bool same = a.kind == b.kind && a.in_width == b.in_width && a.hidden == b.hidden && a.classes == b.classes;
    return same && (a.kind != HeadKind::Cnn || (a.filters == b.filters && a.kernel == b.kernel));
  }
};

/// Post-embedding parameters. The conv tensors are empty for the mean-pool head.
struct HeadParams {
  HeadShape shape;
  Tensor2 conv_w;  // (kernel * in_width) x filters
  Tensor2 conv_b;  // 1 x filters
  Tensor2 w1;      // features x hidden
  Tensor2 b1;      // 1 x hidden
  Tensor2 w2;      // hidden x classes
  Tensor2 b2;      // 1 x classes

  std::size_t feature_width() const {
    return shape.kind == HeadKind::Cnn ? shape.filters : shape.in_width;
  }

  static HeadParams zeros(const HeadShape& shape) {
    if (shape.in_width == 0 || shape.hidden == 0 || shape.classes < 2) {
      throw std::invalid_argument("head shape needs in_width, hidden >= 1 and classes >= 2");
    }
    HeadParams h;
    h.shape = shape;
    if (shape.kind == HeadKind::Cnn) {
      if (shape.filters == 0 || shape.kernel == 0) {
        throw std::invalid_argument("cnn head needs filters, kernel >= 1");
      }
      h.conv_w = Tensor2(shape.kernel * shape.in_width, shape.filters);
      h.conv_b = Tensor2(1, shape.filters);
    }
    h.w1 = Tensor2(h.feature_width(), shape.hidden);
    h.b1 = Tensor2(1, shape.hidden);
    h.w2 = Tensor2(shape.hidden, shape.classes);
    h.b2 = Tensor2(1, shape.classes);
    return h;
  }

  /// Xavier-style uniform weights, zero biases.
  static HeadParams init(const HeadShape& shape, Rng& rng) {
    HeadParams h = zeros(shape);
    auto xavier = [&rng](Tensor2& w, std::size_t fan_in, std::size_t fan_out) {
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      w.fill_uniform(rng, -limit, limit);
    };
    if (shape.kind == HeadKind::Cnn) xavier(h.conv_w, shape.kernel * shape.in_width, shape.filters);
    xavier(h.w1, h.feature_width(), shape.hidden);
    xavier(h.w2, shape.hidden, shape.classes);
    return h;
  }

  /// Tensors in serialization order.
  std::vector<Tensor2*> tensors() {
    if (shape.kind == HeadKind::Cnn) return {&conv_w, &conv_b, &w1, &b1, &w2, &b2};
    return {&w1, &b1, &w2, &b2};
  }
  std::vector<const Tensor2*> tensors() const {
    if (shape.kind == HeadKind::Cnn) return {&conv_w, &conv_b, &w1, &b1, &w2, &b2};
    return {&w1, &b1, &w2, &b2};
  }

  friend bool operator==(const HeadParams&, const HeadParams&) = default;
};

/// Intermediate activations kept for the backward pass.
struct HeadTrace {
  std::vector<double> pooled;   // mean-pool output, or raw max-pooled conv features
  std::vector<double> features; // tanh(pooled) for cnn, pooled for mean-pool
  ConvPoolCache conv;
  std::vector<double> hidden;
  std::vector<double> logits;
};

/// Runs a head over the `cols` block of the embedding rows selected by `ids`.
inline std::vector<double> head_forward(const HeadParams& head, const Tensor2& emb,
                                        std::span<const TokenId> ids, ColumnRange cols,
                                        HeadTrace* trace = nullptr) {
  HeadTrace local;
  HeadTrace& t = trace ? *trace : local;
  if (head.shape.kind == HeadKind::Cnn) {
    t.pooled = conv_maxpool_forward(emb, ids, cols, head.conv_w, head.conv_b, head.shape.kernel, &t.conv);
    t.features = tanh_forward(t.pooled);
  } else {
    t.pooled = mean_pool_forward(emb, ids, cols);
    t.features = t.pooled;
  }
  t.hidden = tanh_forward(affine_forward(t.features, head.w1, head.b1));
  t.logits = affine_forward(t.hidden, head.w2, head.b2);
  return t.logits;
}

/// Accumulates d loss / d params into `grads` and d loss / d embedding into `demb`.
inline void head_backward(const HeadParams& head, const Tensor2& emb, std::span<const TokenId> ids,
                          ColumnRange cols, const HeadTrace& trace, std::span<const double> dlogits,
                          HeadParams& grads, Tensor2& demb) {
  const auto dhidden = affine_backward(trace.hidden, head.w2, dlogits, grads.w2, grads.b2);
  const auto dhidden_pre = tanh_backward(trace.hidden, dhidden);
  const auto dfeatures = affine_backward(trace.features, head.w1, dhidden_pre, grads.w1, grads.b1);
  if (head.shape.kind == HeadKind::Cnn) {
    const auto dpooled = tanh_backward(trace.features, dfeatures);
    conv_maxpool_backward(emb, ids, cols, head.conv_w, head.shape.kernel, trace.conv, dpooled,
                          grads.conv_w, grads.conv_b, demb);
  } else {
    mean_pool_backward(ids, cols, dfeatures, demb);
  }
}

struct ModelConfig {
  HeadKind kind = HeadKind::MeanPool;
  std::size_t dim = 300;
  std::size_t hidden = 100;
  std::size_t classes = 2;
  std::size_t filters = 128;
  std::size_t kernel = 3;

  HeadShape head_shape(std::size_t in_width) const {
    return HeadShape{kind, in_width, hidden, classes, filters, kernel};
  }
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr = 0.05;
  std::uint64_t seed = 0;
  std::size_t max_len = kSentenceMaxLen;
};

/// Embedding rows uniform in (-0.1, 0.1); the PAD row is zero and never read.
inline Tensor2 init_embedding(std::size_t vocab_size, std::size_t dim, Rng& rng) {
  if (vocab_size < 2 || dim == 0) throw std::invalid_argument("embedding needs vocab >= 2 and dim >= 1");
  Tensor2 emb(vocab_size, dim);
  emb.fill_uniform(rng, -0.1, 0.1);
  for (auto& v : emb.row(kPadId)) v = 0.0;
  return emb;
}

/// A victim classifier: embedding plus one head over the full embedding width.
struct Model {
  Tensor2 embedding;  // vocab x dim
  HeadParams head;

  HeadKind kind() const noexcept { return head.shape.kind; }
  std::size_t num_classes() const noexcept { return head.shape.classes; }
  std::size_t vocab_size() const noexcept { return embedding.rows(); }
  std::size_t dim() const noexcept { return embedding.cols(); }

  static Model init(std::size_t vocab_size, const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    Model m;
    m.embedding = init_embedding(vocab_size, cfg.dim, rng);
    m.head = HeadParams::init(cfg.head_shape(cfg.dim), rng);
    return m;
  }

  Model zeros_like() const {
    Model g;
    g.embedding = Tensor2(embedding.rows(), embedding.cols());
    g.head = HeadParams::zeros(head.shape);
    return g;
  }

  std::vector<Tensor2*> tensors() {
    auto out = head.tensors();
    out.insert(out.begin(), &embedding);
    return out;
  }
  std::vector<const Tensor2*> tensors() const {
    auto out = head.tensors();
    out.insert(out.begin(), &embedding);
    return out;
  }

  friend bool operator==(const Model&, const Model&) = default;
};

inline void check_ids(std::span<const TokenId> ids, std::size_t vocab_size) {
  for (TokenId id : ids) {
    if (id >= vocab_size) {
      throw std::invalid_argument("token id " + std::to_string(id) + " >= vocab size " +
                                  std::to_string(vocab_size));
    }
  }
}

inline std::vector<double> forward(const Model& model, std::span<const TokenId> ids) {
  check_ids(ids, model.vocab_size());
  return head_forward(model.head, model.embedding, ids, {0, model.dim()});
}

struct Prediction {
  std::size_t label = 0;
  std::vector<double> probs;
};

/// argmax of the softmax, ties toward the smaller class index.
inline Prediction prediction_from_logits(std::span<const double> logits) {
  Prediction p;
  p.probs = softmax(logits);
  p.label = argmax(p.probs);
  return p;
}

inline Prediction predict_ids(const Model& model, std::span<const TokenId> ids) {
  return prediction_from_logits(forward(model, ids));
}

inline Prediction predict_tokens(const Model& model, const std::vector<std::string>& tokens,
                                 const Vocabulary& vocab, std::size_t max_len) {
  return predict_ids(model, encode(tokens, vocab, max_len));
}

inline Prediction predict(const Model& model, const std::string& text, const Vocabulary& vocab,
                          std::size_t max_len) {
  return predict_tokens(model, tokenize(text), vocab, max_len);
}

/// Loss and gradients for one example; gradients are accumulated into `grads`.
inline double model_loss_grad(const Model& model, std::span<const TokenId> ids, std::size_t label,
                              Model& grads) {
  HeadTrace trace;
  head_forward(model.head, model.embedding, ids, {0, model.dim()}, &trace);
  const auto probs = softmax(trace.logits);
  const auto ce = cross_entropy(probs, label);
  head_backward(model.head, model.embedding, ids, {0, model.dim()}, trace, ce.dlogits, grads.head,
                grads.embedding);
  return ce.loss;
}

struct EncodedSet {
  std::vector<std::vector<TokenId>> ids;
  std::vector<std::size_t> labels;
};

inline EncodedSet encode_all(const std::vector<Example>& data, const Vocabulary& vocab, std::size_t max_len) {
  EncodedSet out;
  out.ids.reserve(data.size());
  for (const auto& ex : data) {
    out.ids.push_back(encode(ex.tokens, vocab, max_len));
    out.labels.push_back(ex.label);
  }
  return out;
}

inline void validate_training(const std::vector<Example>& data, std::size_t classes, const TrainConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw std::invalid_argument("train: lr must be >= 0");
  if (cfg.max_len < 1) throw std::invalid_argument("train: max_len must be >= 1");
  for (const auto& ex : data) {
    if (ex.label >= classes) {
      throw std::invalid_argument("train: label " + std::to_string(ex.label) + " >= num_classes " +
                                  std::to_string(classes));
    }
  }
}

// Mini-batch SGD shared by victims and ensembles. `Params` exposes tensors()
// and zeros_like(); `loss_grad(params, ids, label, grads)` returns the example
// loss and accumulates its gradient. Returns the mean loss of every epoch.
template <typename Params, typename LossGrad>
std::vector<double> sgd_train(Params& params, const EncodedSet& data, const TrainConfig& cfg,
                              LossGrad&& loss_grad) {
  Rng order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Params grads = params.zeros_like();
  auto grad_tensors = grads.tensors();
  auto param_tensors = params.tensors();
  std::vector<double> history;
  history.reserve(cfg.epochs);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      for (auto* g : grad_tensors) g->fill(0.0);
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t i = order[k];
        epoch_loss += loss_grad(std::as_const(params), data.ids[i], data.labels[i], grads);
      }
      const double scale = cfg.lr / static_cast<double>(stop - start);
      for (std::size_t t = 0; t < param_tensors.size(); ++t) sgd_step(*param_tensors[t], *grad_tensors[t], scale);
    }
    history.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return history;
}

/// Trains `model` in place; returns per-epoch mean training loss.
inline std::vector<double> train(Model& model, const std::vector<Example>& data, const Vocabulary& vocab,
                                 const TrainConfig& cfg) {
  validate_training(data, model.num_classes(), cfg);
  if (vocab.size() != model.vocab_size()) throw std::invalid_argument("train: vocabulary size does not match model");
  const auto encoded = encode_all(data, vocab, cfg.max_len);
  return sgd_train(model, encoded, cfg, model_loss_grad);
}

struct TrainedModel {
  Model model;
  std::vector<double> loss_history;
};

/// Seeded initialisation from cfg.seed followed by train().
inline TrainedModel train_model(const std::vector<Example>& data, const Vocabulary& vocab,
                                const ModelConfig& model_cfg, const TrainConfig& cfg) {
  TrainedModel out{Model::init(vocab.size(), model_cfg, cfg.seed), {}};
  out.loss_history = train(out.model, data, vocab, cfg);
  return out;
}

inline double accuracy(const Model& model, const std::vector<Example>& data, const Vocabulary& vocab,
                       std::size_t max_len) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& ex : data) correct += predict_tokens(model, ex.tokens, vocab, max_len).label == ex.label;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace treated
