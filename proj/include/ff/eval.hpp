#pragma once

#include "ff/data.hpp"
#include "ff/layers.hpp"
#include "ff/optim.hpp"

#include <string>
#include <vector>

namespace ff {

enum class EvalStrategy { Goodness, Feature };
enum class EvalLabel { Neutral, Random };

std::string to_string(EvalStrategy s);
EvalStrategy eval_strategy_from_string(const std::string& s);
std::string to_string(EvalLabel l);
EvalLabel eval_label_from_string(const std::string& s);

struct HeadConfig {
  Index hidden = 0;  // 0: a single dense layer; otherwise dense-relu-dense
  int epochs = 100;
  Index batch_size = 256;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct EvalConfig {
  EvalStrategy strategy = EvalStrategy::Goodness;
  std::vector<int> aggregate_layers;  // empty: last layer
  HeadConfig head;
  EvalLabel eval_label = EvalLabel::Neutral;
  Index batch_size = 250;  // images per forward chunk

  void validate(std::size_t depth) const;
};

// Per-layer goodness of every sample under every candidate label.
struct ScoreSweep {
  Index samples = 0;
  int classes = 0;
  std::vector<RowMatrix<double>> per_layer;  // [layer] samples x classes
  std::int64_t forward_passes = 0;           // one per (sample, label)
};

// Runs each image once per label in Eval mode.
template <typename Scalar>
ScoreSweep goodness_scores(Network<Scalar>& net, const Tensor<float>& images, Index chunk = 250);

// Ties resolve to the lowest index.
int argmax_lowest(const double* scores, int count);

// Mean goodness over `layers` per class, then argmax.
std::vector<int> predict_from_scores(const ScoreSweep& sweep, const std::vector<int>& layers,
                                     RowMatrix<double>* aggregated = nullptr);
std::vector<int> last_layers(std::size_t depth, int k_last);
double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels);

struct Classification {
  int label = 0;
  std::vector<double> scores;  // per class
};

// `image` is C x H x W or 1 x C x H x W.
template <typename Scalar>
Classification classify_goodness(Network<Scalar>& net, const Tensor<float>& image, const std::vector<int>& layers);
template <typename Scalar>
int classify_ensemble(Network<Scalar>& net, const Tensor<float>& image, int k_last);

// Goodness-classification accuracy of every layer on its own.
std::vector<double> layerwise_accuracy(const ScoreSweep& sweep, const std::vector<int>& labels);
template <typename Scalar>
std::vector<double> layerwise_accuracy(Network<Scalar>& net, const Dataset& d, Index chunk = 250);

// Single-pass features of block `layer` (-1: last) under the eval label.
template <typename Scalar>
Tensor<Scalar> extract_features(Network<Scalar>& net, const Tensor<float>& images, int layer, EvalLabel label,
                                Rng& rng, Index chunk = 250);

template <typename Scalar>
struct FeatureHead {
  int layer = -1;
  EvalLabel eval_label = EvalLabel::Neutral;
  Parameter<Scalar> w1, b1, w2, b2;  // w2/b2 empty for a single layer

  std::vector<Parameter<Scalar>*> parameters();
};

template <typename Scalar>
Var<Scalar> head_forward(FeatureHead<Scalar>& head, Var<Scalar> features, bool trainable = false);

// The network is not modified; only the head is optimized (cross entropy).
template <typename Scalar>
FeatureHead<Scalar> train_feature_head(Network<Scalar>& net, const Dataset& d, const HeadConfig& cfg,
                                       EvalLabel label, int layer = -1);
template <typename Scalar>
std::vector<int> classify_features(Network<Scalar>& net, FeatureHead<Scalar>& head, const Tensor<float>& images,
                                   std::uint64_t seed = 0);

struct LayerStability {
  double max_weight = 0;
  double max_goodness = 0;
};

// Per layer: max |w| over weight and bias; max per-sample goodness over
// every test image under every candidate label.
template <typename Scalar>
std::vector<LayerStability> snapshot_stability(Network<Scalar>& net, const Dataset& test, Index chunk = 250);
std::vector<LayerStability> stability_from_scores(const std::vector<double>& max_weights, const ScoreSweep& sweep);

// sample_index,true_label,predicted_label,score_0..score_{K-1}
void write_predictions_csv(const std::string& path, const std::vector<int>& labels, const std::vector<int>& predicted,
                           const RowMatrix<double>& scores);

}  // namespace ff
