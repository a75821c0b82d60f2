#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace treated;

namespace {

// Loss of one example as a function of a single parameter tensor, for grad_check.
template <typename Params>
std::function<double(const Tensor2&)> loss_of(const Params& params, std::size_t tensor_index,
                                              std::span<const TokenId> ids, std::size_t label,
                                              double (*loss_grad)(const Params&, std::span<const TokenId>, std::size_t,
                                                                  Params&)) {
  return [=, ids = std::vector<TokenId>(ids.begin(), ids.end())](const Tensor2& x) {
    Params p = params;
    *p.tensors()[tensor_index] = x;
    Params g = p.zeros_like();
    return loss_grad(p, ids, label, g);
  };
}

}  // namespace

TEST(Forward, AllPadMeanPoolUsesBiasChain) {
  Model m = Model::init(10, testutil::small_model(), 1);
  const std::vector<TokenId> ids(6, kPadId);
  const auto logits = forward(m, ids);
  const auto hidden = tanh_forward(m.head.b1.data());
  const auto expect = affine_forward(hidden, m.head.w2, m.head.b2);
  EXPECT_EQ(logits, expect);
}

TEST(Forward, DeterministicAndPadInvariant) {
  for (auto kind : {HeadKind::MeanPool, HeadKind::Cnn}) {
    Model m = Model::init(10, testutil::small_model(kind), 2);
    const std::vector<TokenId> a{4, 5, 2, 9};
    const std::vector<TokenId> b{4, 5, 2, 9, 0, 0, 0};
    EXPECT_EQ(forward(m, a), forward(m, a));
    const auto la = forward(m, a), lb = forward(m, b);
    for (std::size_t i = 0; i < la.size(); ++i) EXPECT_NEAR(la[i], lb[i], 1e-15);
  }
}

TEST(Forward, RejectsOutOfRangeIds) {
  Model m = Model::init(5, testutil::small_model(), 1);
  EXPECT_THROW(forward(m, std::vector<TokenId>{5}), std::invalid_argument);
}

TEST(Forward, LossGradientPassesGradCheck) {
  Rng rng(4);
  for (auto kind : {HeadKind::MeanPool, HeadKind::Cnn}) {
    Model m = Model::init(9, testutil::small_model(kind), 3);
    std::vector<TokenId> ids(4);
    for (auto& id : ids) id = static_cast<TokenId>(1 + rng.index(8));
    Model grads = m.zeros_like();
    model_loss_grad(m, ids, 1, grads);
    const auto tensors = m.tensors();
    for (std::size_t t = 0; t < tensors.size(); ++t) {
      const auto report = grad_check(loss_of<Model>(m, t, ids, 1, model_loss_grad), *tensors[t],
                                     *grads.tensors()[t], 1e-6);
      EXPECT_LT(report.max_rel_error, 1e-4) << to_string(kind) << " tensor " << t;
    }
  }
}

TEST(Predict, TieAndArgmax) {
  EXPECT_EQ(prediction_from_logits(std::vector<double>{2, 1}).label, 0u);
  EXPECT_EQ(prediction_from_logits(std::vector<double>{1, 1}).label, 0u);
  const auto toy = testutil::toy_separable();
  const auto vocab = build_vocab(toy, 1);
  Model m = Model::init(vocab.size(), testutil::small_model(), 5);
  for (const auto& ex : toy) {
    const auto p = predict(m, ex.text, vocab, 12);
    EXPECT_EQ(p.label, argmax(p.probs));
  }
}

TEST(Train, ToySetReachesFullAccuracy) {
  const auto toy = testutil::toy_separable();
  const auto vocab = build_vocab(toy, 1);
  for (auto kind : {HeadKind::MeanPool, HeadKind::Cnn}) {
    const auto t = train_model(toy, vocab, testutil::small_model(kind), testutil::toy_train());
    EXPECT_EQ(accuracy(t.model, toy, vocab, 12), 1.0) << to_string(kind);
    EXPECT_EQ(t.loss_history.size(), 50u);
    EXPECT_LT(t.loss_history.back(), t.loss_history.front());
  }
}

TEST(Train, LossDoesNotIncreaseLate) {
  const auto toy = testutil::toy_separable();
  const auto vocab = build_vocab(toy, 1);
  auto cfg = testutil::toy_train(30);
  cfg.lr = 0.1;
  cfg.batch_size = 20;
  const auto t = train_model(toy, vocab, testutil::small_model(), cfg);
  for (std::size_t e = 5; e + 1 < t.loss_history.size(); ++e) {
    EXPECT_LE(t.loss_history[e + 1], t.loss_history[e] + 1e-12) << "epoch " << e;
  }
}

TEST(Train, ZeroLearningRateChangesNothing) {
  const auto toy = testutil::toy_separable();
  const auto vocab = build_vocab(toy, 1);
  auto cfg = testutil::toy_train(4);
  cfg.lr = 0.0;
  Model m = Model::init(vocab.size(), testutil::small_model(), cfg.seed);
  const Model before = m;
  const auto history = train(m, toy, vocab, cfg);
  EXPECT_EQ(m, before);
  for (double l : history) EXPECT_NEAR(l, history.front(), 1e-12);
}

TEST(Train, SameSeedIsBitIdentical) {
  const auto toy = testutil::toy_separable();
  const auto vocab = build_vocab(toy, 1);
  const auto a = train_model(toy, vocab, testutil::small_model(), testutil::toy_train(10));
  const auto b = train_model(toy, vocab, testutil::small_model(), testutil::toy_train(10));
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.loss_history, b.loss_history);
  auto other = testutil::toy_train(10);
  other.seed = 12;
  EXPECT_NE(train_model(toy, vocab, testutil::small_model(), other).model, a.model);
}

TEST(Train, Validation) {
  const auto toy = testutil::toy_separable();
  const auto vocab = build_vocab(toy, 1);
  Model m = Model::init(vocab.size(), testutil::small_model(), 1);
  auto cfg = testutil::toy_train(1);
  EXPECT_THROW(train(m, {}, vocab, cfg), std::invalid_argument);
  cfg.batch_size = 0;
  EXPECT_THROW(train(m, toy, vocab, cfg), std::invalid_argument);
  cfg = testutil::toy_train(1);
  cfg.lr = -1;
  EXPECT_THROW(train(m, toy, vocab, cfg), std::invalid_argument);
  auto bad = toy;
  bad[0].label = 2;
  EXPECT_THROW(train(m, bad, vocab, testutil::toy_train(1)), std::invalid_argument);
  Vocabulary small;
  EXPECT_THROW(train(m, toy, small, testutil::toy_train(1)), std::invalid_argument);
}

TEST(Model, InitShapes) {
  auto cfg = testutil::small_model(HeadKind::Cnn);
  Model m = Model::init(7, cfg, 0);
  EXPECT_EQ(m.embedding.rows(), 7u);
  EXPECT_EQ(m.embedding.cols(), 12u);
  for (double v : m.embedding.row(kPadId)) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(m.head.conv_w.rows(), cfg.kernel * cfg.dim);
  EXPECT_EQ(m.head.w1.rows(), cfg.filters);
  EXPECT_EQ(parse_head_kind("cnn"), HeadKind::Cnn);
  EXPECT_EQ(parse_head_kind("meanpool"), HeadKind::MeanPool);
  EXPECT_THROW(parse_head_kind("lstm"), std::invalid_argument);
}
