#include "ff/errors.hpp"
#include "ff/eval.hpp"
#include "ff/train.hpp"
#include "support/synthetic.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace ff;
using ff::testing::synthetic_dataset;

namespace {

Network<double> net3(std::uint64_t seed = 1) {
  return Network<double>(fcn_config({1, 6, 6}, 4, 10, 3, NormKind::BatchNorm), false, seed);
}

// Per-sample, per-label forward passes with an explicit flat goodness loop.
RowMatrix<double> brute_force(Network<double>& net, const Dataset& d, int layer) {
  RowMatrix<double> s(d.size(), net.embedding.num_classes());
  for (Index i = 0; i < d.size(); ++i) {
    for (int k = 0; k < net.embedding.num_classes(); ++k) {
      Tensor<float> img({1, 1, 6, 6});
      for (Index p = 0; p < 36; ++p) img[p] = d.images[i * 36 + p];
      const std::vector<int> label{k};
      Tape<double> t;
      const auto outs = network_forward(net, t.constant(with_label_channel(img, std::span<const int>(label), net.embedding)), Mode::Eval);
      const auto& a = outs[static_cast<std::size_t>(layer)].value();
      double g = 0;
      for (Index e = 0; e < a.size(); ++e) g += a[e] * a[e];
      s(i, k) = g / static_cast<double>(a.size());
    }
  }
  return s;
}

}  // namespace

TEST(Scores, MatchBruteForcePerSamplePerLabel) {
  auto net = net3();
  for (auto& b : net.blocks) b.norm_state.running_var.vec().setConstant(2.0);
  const auto d = synthetic_dataset(9, 4, 6, 1);
  const auto sweep = goodness_scores(net, d.images, 4);
  EXPECT_EQ(sweep.forward_passes, 9 * 4);
  for (int l = 0; l < 3; ++l) {
    const auto ref = brute_force(net, d, l);
    for (Index i = 0; i < 9; ++i)
      for (int k = 0; k < 4; ++k) EXPECT_NEAR(sweep.per_layer[static_cast<std::size_t>(l)](i, k), ref(i, k), 1e-10);
  }
}

TEST(Scores, ChunkSizeDoesNotMatter) {
  auto net = net3(2);
  const auto d = synthetic_dataset(11, 4, 6, 2);
  const auto a = goodness_scores(net, d.images, 3), b = goodness_scores(net, d.images, 11);
  for (std::size_t l = 0; l < 3; ++l) {
    EXPECT_LT((a.per_layer[l] - b.per_layer[l]).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(predict_from_scores(a, {static_cast<int>(l)}), predict_from_scores(b, {static_cast<int>(l)}));
  }
}

TEST(Predict, TiesGoToLowestLabel) {
  const double s[] = {1.0, 3.0, 3.0, 2.0};
  EXPECT_EQ(argmax_lowest(s, 4), 1);
  const double flat[] = {0.0, 0.0, 0.0};
  EXPECT_EQ(argmax_lowest(flat, 3), 0);
}

TEST(Predict, AggregatesMeanOverLayers) {
  ScoreSweep sw;
  sw.samples = 1;
  sw.classes = 3;
  sw.per_layer = {RowMatrix<double>(1, 3), RowMatrix<double>(1, 3)};
  sw.per_layer[0] << 5, 0, 0;
  sw.per_layer[1] << 0, 4, 0;
  EXPECT_EQ(predict_from_scores(sw, {0}).front(), 0);
  EXPECT_EQ(predict_from_scores(sw, {1}).front(), 1);
  RowMatrix<double> agg;
  EXPECT_EQ(predict_from_scores(sw, {0, 1}, &agg).front(), 0);
  EXPECT_DOUBLE_EQ(agg(0, 1), 2.0);
  EXPECT_THROW(predict_from_scores(sw, {2}), UsageError);
  EXPECT_THROW(predict_from_scores(sw, {}), UsageError);
}

TEST(Predict, InvariantToMonotoneTransform) {
  auto net = net3(3);
  const auto d = synthetic_dataset(20, 4, 6, 3);
  auto sweep = goodness_scores(net, d.images);
  const auto before = predict_from_scores(sweep, {2});
  sweep.per_layer[2] = (sweep.per_layer[2].array() * 3.0 + 1.0).log().matrix();
  EXPECT_EQ(predict_from_scores(sweep, {2}), before);
}

TEST(Predict, LastLayers) {
  EXPECT_EQ(last_layers(6, 3), (std::vector<int>{3, 4, 5}));
  EXPECT_EQ(last_layers(6, 1), (std::vector<int>{5}));
  EXPECT_THROW(last_layers(2, 5), UsageError);
  EXPECT_THROW(last_layers(4, 0), UsageError);
}

TEST(Predict, EnsembleOfOneIsLastLayer) {
  auto net = net3(4);
  const auto d = synthetic_dataset(12, 4, 6, 4);
  const auto sweep = goodness_scores(net, d.images);
  EXPECT_EQ(predict_from_scores(sweep, last_layers(3, 1)), predict_from_scores(sweep, {2}));
  Tensor<float> one({1, 6, 6});
  for (Index p = 0; p < 36; ++p) one[p] = d.images[5 * 36 + p];
  EXPECT_EQ(classify_ensemble(net, one, 1), predict_from_scores(sweep, {2})[5]);
  const auto c = classify_goodness(net, one, {0, 1});
  EXPECT_EQ(c.label, predict_from_scores(sweep, {0, 1})[5]);
  ASSERT_EQ(c.scores.size(), 4u);
}

TEST(Accuracy, CountsMatches) {
  EXPECT_DOUBLE_EQ(accuracy({1, 2, 3, 4}, {1, 0, 3, 0}), 0.5);
  EXPECT_THROW(accuracy({1}, {1, 2}), DimensionError);
}

TEST(Layerwise, OnePerLayer) {
  auto net = net3(5);
  const auto d = synthetic_dataset(12, 4, 6, 5);
  const auto acc = layerwise_accuracy(net, d);
  ASSERT_EQ(acc.size(), 3u);
  const auto sweep = goodness_scores(net, d.images);
  for (std::size_t l = 0; l < 3; ++l) EXPECT_EQ(acc[l], accuracy(predict_from_scores(sweep, {static_cast<int>(l)}), d.labels));
}

TEST(Training, GoodnessClassifierLearnsSeparableData) {
  const auto train = synthetic_dataset(600, 4, 6, 6), test = synthetic_dataset(200, 4, 6, 7);
  Network<double> net(fcn_config({1, 6, 6}, 4, 32, 2, NormKind::BatchNorm), false, 6);
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 64;
  cfg.schedule = {{0, 5e-3}};
  Optimizer<double> opt;
  MetricsLog log;
  fit(net, train, cfg, opt, log);
  const auto sweep = goodness_scores(net, test.images);
  EXPECT_GT(accuracy(predict_from_scores(sweep, {1}), test.labels), 0.9);
}

TEST(FeatureHead, LearnsFrozenFeatures) {
  const auto train = synthetic_dataset(400, 4, 6, 8), test = synthetic_dataset(100, 4, 6, 9);
  Network<double> net(fcn_config({1, 6, 6}, 4, 24, 2, NormKind::None), false, 7);
  const auto w0 = net.blocks[0].weight.value;
  HeadConfig h;
  h.epochs = 30;
  h.batch_size = 50;
  h.lr = 1e-2;
  for (EvalLabel label : {EvalLabel::Neutral, EvalLabel::Random}) {
    auto head = train_feature_head(net, train, h, label, 0);
    EXPECT_EQ(head.layer, 0);
    EXPECT_GT(accuracy(classify_features(net, head, test.images), test.labels), 0.9) << to_string(label);
  }
  EXPECT_EQ(net.blocks[0].weight.value.vec(), w0.vec());
  h.hidden = 16;
  auto deep = train_feature_head(net, train, h, EvalLabel::Neutral);
  EXPECT_EQ(deep.parameters().size(), 4u);
}

TEST(Stability, SnapshotMatchesDefinitions) {
  auto net = net3(10);
  const auto d = synthetic_dataset(10, 4, 6, 10);
  const auto snap = snapshot_stability(net, d);
  const auto sweep = goodness_scores(net, d.images);
  ASSERT_EQ(snap.size(), 3u);
  for (std::size_t l = 0; l < 3; ++l) {
    EXPECT_DOUBLE_EQ(snap[l].max_weight, max_abs_weight(net.blocks[l]));
    EXPECT_DOUBLE_EQ(snap[l].max_goodness, sweep.per_layer[l].maxCoeff());
  }
}

TEST(Predictions, CsvLayout) {
  const auto path = (std::filesystem::temp_directory_path() / "ff_pred_test.csv").string();
  RowMatrix<double> scores(2, 3);
  scores << 0.1, 0.2, 0.3, 1, 0, 0;
  write_predictions_csv(path, {2, 1}, {2, 0}, scores);
  std::ifstream is(path);
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  EXPECT_EQ(header, "sample_index,true_label,predicted_label,score_0,score_1,score_2");
  EXPECT_EQ(row.substr(0, 6), "0,2,2,");
  std::filesystem::remove(path);
}

TEST(EvalConfig, Validation) {
  EvalConfig c;
  c.aggregate_layers = {0, 5};
  EXPECT_THROW(c.validate(3), UsageError);
  c.aggregate_layers = {};
  c.head.lr = 0;
  EXPECT_THROW(c.validate(3), UsageError);
  EXPECT_EQ(eval_label_from_string("random"), EvalLabel::Random);
}
