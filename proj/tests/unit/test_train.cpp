#include "ff/errors.hpp"
#include "ff/train.hpp"
#include "support/synthetic.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace ff;
using ff::testing::synthetic_dataset;

namespace {

Network<double> small_net(int depth, NormKind norm, bool learned, std::uint64_t seed = 1) {
  return Network<double>(fcn_config({1, 6, 6}, 3, 12, depth, norm), learned, seed);
}

PosNegBatch first_batch(const Dataset& d, const LabelEmbedding<double>& emb, Index n) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  Rng rng(9);
  return make_pos_neg_batch(d, idx, emb, rng);
}

std::vector<Tensor<double>> weights(const Network<double>& net) {
  std::vector<Tensor<double>> w;
  for (const auto& b : net.blocks) w.push_back(b.weight.value);
  return w;
}

TrainConfig base_cfg() {
  TrainConfig c;
  c.batch_size = 32;
  c.epochs = 1;
  c.schedule = {{0, 1e-2}};
  return c;
}

}  // namespace

TEST(Schedule, PiecewiseConstant) {
  const auto s = deep_schedule();
  EXPECT_EQ(lr_at(s, 0), 1e-3);
  EXPECT_EQ(lr_at(s, 199), 1e-3);
  EXPECT_EQ(lr_at(s, 200), 5e-4);
  EXPECT_EQ(lr_at(s, 399), 5e-4);
  EXPECT_EQ(lr_at(s, 450), 1e-4);
  EXPECT_EQ(lr_at(shallow_schedule(), 150), 1e-4);
  EXPECT_EQ(lr_at(shallow_schedule(), 149), 1e-3);
}

TEST(Schedule, Validation) {
  EXPECT_THROW(validate_schedule({}), UsageError);
  EXPECT_THROW(validate_schedule({{1, 1e-3}}), UsageError);
  EXPECT_THROW(validate_schedule({{0, 1e-3}, {5, 1e-4}, {5, 1e-5}}), UsageError);
  EXPECT_THROW(validate_schedule({{0, 0.0}}), UsageError);
  EXPECT_NO_THROW(validate_schedule(deep_schedule()));
}

TEST(TrainConfig, BatchMustHoldPairs) {
  TrainConfig c;
  c.batch_size = 7;
  EXPECT_THROW(c.validate(), UsageError);
}

TEST(Olu, ActiveObjectivesAlternate) {
  EXPECT_EQ(active_objectives(4, 0), (std::vector<int>{0, 2}));
  EXPECT_EQ(active_objectives(4, 1), (std::vector<int>{1, 3}));
  EXPECT_EQ(active_objectives(5, 0), (std::vector<int>{0, 2, 4}));
  EXPECT_EQ(objective_layers(0), (std::vector<int>{0}));
  EXPECT_EQ(objective_layers(3), (std::vector<int>{2, 3}));
  EXPECT_EQ(olu_mode_from_string(to_string(OluMode::Approach2)), OluMode::Approach2);
}

// A layer's greedy update depends on nothing above it.
TEST(Greedy, UpdatesAreLocal) {
  const auto d = synthetic_dataset(16, 3, 6, 1);
  auto a = small_net(3, NormKind::BatchNorm, false), b = small_net(3, NormKind::BatchNorm, false);
  b.blocks[2].weight.value.vec() *= 3.0;
  const auto batch = first_batch(d, a.embedding, 16);
  Optimizer<double> oa, ob;
  train_step_greedy(a, batch, base_cfg(), oa, 1e-2);
  train_step_greedy(b, batch, base_cfg(), ob, 1e-2);
  EXPECT_EQ(a.blocks[0].weight.value.vec(), b.blocks[0].weight.value.vec());
  EXPECT_EQ(a.blocks[1].weight.value.vec(), b.blocks[1].weight.value.vec());
}

TEST(Greedy, FeedUpdatedChangesDownstreamInput) {
  const auto d = synthetic_dataset(16, 3, 6, 2);
  auto a = small_net(2, NormKind::LayerNormReduced, false), b = small_net(2, NormKind::LayerNormReduced, false);
  const auto batch = first_batch(d, a.embedding, 16);
  auto cfg = base_cfg();
  Optimizer<double> oa, ob;
  const auto ra = train_step_greedy(a, batch, cfg, oa, 1e-2);
  cfg.feed_updated = false;
  const auto rb = train_step_greedy(b, batch, cfg, ob, 1e-2);
  EXPECT_EQ(ra.layers[0].loss, rb.layers[0].loss);
  EXPECT_NE(ra.layers[1].loss, rb.layers[1].loss);
}

TEST(Greedy, EveryLayerReportsStats) {
  const auto d = synthetic_dataset(16, 3, 6, 3);
  auto net = small_net(3, NormKind::BatchNorm, false);
  Optimizer<double> opt;
  const auto r = train_step_greedy(net, first_batch(d, net.embedding, 16), base_cfg(), opt, 1e-2);
  ASSERT_EQ(r.layers.size(), 3u);
  for (const auto& l : r.layers) {
    EXPECT_TRUE(l.updated);
    EXPECT_GT(l.grad_l2, 0);
    EXPECT_GE(l.g_pos_mean, 0);
    EXPECT_GE(l.g_neg_mean, 0);
    EXPECT_TRUE(std::isfinite(l.loss));
  }
  EXPECT_FALSE(r.embedding_updated);
}

TEST(OluApproach1, EvenParityLeavesOddGroupsAlone) {
  const auto d = synthetic_dataset(16, 3, 6, 4);
  auto net = small_net(4, NormKind::BatchNorm, true);
  const auto before = weights(net);
  const auto emb_before = net.embedding.matrix.value;
  auto cfg = base_cfg();
  cfg.olu = OluMode::Approach1;
  Optimizer<double> opt;
  const auto r = train_step_olu(net, first_batch(d, net.embedding, 16), cfg, opt, 1e-2, 0);
  // Objectives 0 and 2: layers {0} and {1, 2}; layer 3 is untouched.
  for (int k : {0, 1, 2}) EXPECT_NE(net.blocks[static_cast<std::size_t>(k)].weight.value.vec(), before[static_cast<std::size_t>(k)].vec()) << k;
  EXPECT_EQ(net.blocks[3].weight.value.vec(), before[3].vec());
  EXPECT_TRUE(r.embedding_updated);
  EXPECT_NE(net.embedding.matrix.value.vec(), emb_before.vec());
  EXPECT_FALSE(r.layers[3].updated);
  EXPECT_EQ(r.layers[3].grad_l2, 0.0);
}

TEST(OluApproach1, OddParityKeepsEmbeddingFixed) {
  const auto d = synthetic_dataset(16, 3, 6, 5);
  auto net = small_net(4, NormKind::BatchNorm, true);
  const auto emb_before = net.embedding.matrix.value;
  const auto before = weights(net);
  auto cfg = base_cfg();
  cfg.olu = OluMode::Approach1;
  Optimizer<double> opt;
  const auto r = train_step_olu(net, first_batch(d, net.embedding, 16), cfg, opt, 1e-2, 1);
  EXPECT_FALSE(r.embedding_updated);
  EXPECT_EQ(net.embedding.matrix.value.vec(), emb_before.vec());
  for (int k : {0, 1, 2, 3}) EXPECT_NE(net.blocks[static_cast<std::size_t>(k)].weight.value.vec(), before[static_cast<std::size_t>(k)].vec()) << k;
}

// Objective 3 reaches layers 2 and 3 only; the gradient of layer 1 comes from
// objective 1 alone, so a change in layer 3 must not alter it.
TEST(OluApproach1, GroupsAreDetached) {
  const auto d = synthetic_dataset(16, 3, 6, 6);
  auto a = small_net(4, NormKind::LayerNormReduced, true), b = small_net(4, NormKind::LayerNormReduced, true);
  b.blocks[3].weight.value.vec() *= 2.0;
  auto cfg = base_cfg();
  cfg.olu = OluMode::Approach1;
  const auto batch = first_batch(d, a.embedding, 16);
  Optimizer<double> oa, ob;
  train_step_olu(a, batch, cfg, oa, 1e-2, 1);
  train_step_olu(b, batch, cfg, ob, 1e-2, 1);
  EXPECT_EQ(a.blocks[0].weight.value.vec(), b.blocks[0].weight.value.vec());
  EXPECT_EQ(a.blocks[1].weight.value.vec(), b.blocks[1].weight.value.vec());
  EXPECT_NE(a.blocks[2].weight.value.vec(), b.blocks[2].weight.value.vec());
}

TEST(OluApproach2, UpdatesEveryLayerAndEmbedding) {
  const auto d = synthetic_dataset(16, 3, 6, 7);
  auto net = small_net(3, NormKind::BatchNorm, true);
  const auto before = weights(net);
  auto cfg = base_cfg();
  cfg.olu = OluMode::Approach2;
  Optimizer<double> opt;
  const auto r = train_step_olu(net, first_batch(d, net.embedding, 16), cfg, opt, 1e-2, 0);
  EXPECT_TRUE(r.embedding_updated);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_NE(net.blocks[k].weight.value.vec(), before[k].vec());
    EXPECT_TRUE(r.layers[k].updated);
    EXPECT_EQ(net.blocks[k].norm_state.updates, 1) << k;
  }
}

TEST(Fit, LossDecreasesOnSeparableData) {
  const auto d = synthetic_dataset(240, 3, 6, 8);
  for (OluMode olu : {OluMode::Off, OluMode::Approach1}) {
    auto net = small_net(2, NormKind::BatchNorm, olu != OluMode::Off);
    auto cfg = base_cfg();
    cfg.epochs = 6;
    cfg.olu = olu;
    Optimizer<double> opt;
    MetricsLog log;
    fit(net, d, cfg, opt, log);
    double first = 0, last = 0;
    int nf = 0, nl = 0;
    for (const auto& row : log.select("loss")) {
      if (row.layer != 0) continue;
      if (row.epoch == 0) first += row.value, ++nf;
      if (row.epoch == 5) last += row.value, ++nl;
    }
    EXPECT_LT(last / nl, first / nf) << to_string(olu);
  }
}

TEST(Fit, RowsPerStepAndStepCount) {
  const auto d = synthetic_dataset(100, 3, 6, 9);
  auto net = small_net(2, NormKind::BatchNorm, false);
  auto cfg = base_cfg();
  cfg.epochs = 2;
  Optimizer<double> opt;
  MetricsLog log;
  const auto r = fit(net, d, cfg, opt, log);
  // ceil(100 / 16) = 7 steps per epoch, 5 metrics x 2 layers per step, plus
  // one degenerate-sample row per layer per epoch.
  EXPECT_EQ(r.steps, 14);
  EXPECT_EQ(log.size(), 14u * 10u + 4u);
  cfg.max_steps_per_epoch = 3;
  MetricsLog capped;
  EXPECT_EQ(fit(net, d, cfg, opt, capped).steps, 6);
}

TEST(Fit, DeterministicForSeed) {
  const auto d = synthetic_dataset(64, 3, 6, 10);
  auto run = [&](std::uint64_t seed) {
    auto net = small_net(3, NormKind::BatchNorm, true);
    auto cfg = base_cfg();
    cfg.epochs = 2;
    cfg.olu = OluMode::Approach1;
    cfg.seed = seed;
    cfg.augment.enabled = true;
    Optimizer<double> opt;
    MetricsLog log;
    fit(net, d, cfg, opt, log);
    return std::make_pair(weights(net), to_csv(log));
  };
  const auto a = run(3), b = run(3), c = run(4);
  EXPECT_EQ(a.second, b.second);
  for (std::size_t k = 0; k < a.first.size(); ++k) EXPECT_EQ(a.first[k].vec(), b.first[k].vec());
  EXPECT_NE(a.second, c.second);
}

TEST(Fit, OluOnSingleLayerFallsBackWithWarning) {
  const auto d = synthetic_dataset(32, 3, 6, 11);
  auto net = small_net(1, NormKind::BatchNorm, true);
  auto cfg = base_cfg();
  cfg.olu = OluMode::Approach1;
  Optimizer<double> opt;
  MetricsLog log;
  const auto r = fit(net, d, cfg, opt, log);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("greedily"), std::string::npos);
}

TEST(Fit, NonFiniteInputAborts) {
  auto d = synthetic_dataset(32, 3, 6, 12);
  d.images[5] = std::nanf("");
  auto net = small_net(2, NormKind::BatchNorm, false);
  Optimizer<double> opt;
  MetricsLog log;
  try {
    fit(net, d, base_cfg(), opt, log);
    FAIL();
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("epoch 0"), std::string::npos);
  }
}

TEST(Fit, ResumeSkipsCompletedEpochs) {
  const auto d = synthetic_dataset(32, 3, 6, 13);
  auto net = small_net(2, NormKind::BatchNorm, false);
  auto cfg = base_cfg();
  cfg.epochs = 3;
  Optimizer<double> opt;
  MetricsLog log;
  std::vector<int> seen;
  FitHooks hooks;
  hooks.on_epoch_end = [&](int e) { seen.push_back(e); };
  const auto r = fit(net, d, cfg, opt, log, 2, hooks);
  EXPECT_EQ(seen, (std::vector<int>{2}));
  EXPECT_EQ(r.steps, 2);
  EXPECT_EQ(log.rows().front().epoch, 2);
}
