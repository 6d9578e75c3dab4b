#include "ff/eval.hpp"

#include "ff/errors.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>

namespace ff {

std::string to_string(EvalStrategy s) { return s == EvalStrategy::Goodness ? "goodness" : "feature"; }

EvalStrategy eval_strategy_from_string(const std::string& s) {
  if (s == "goodness") return EvalStrategy::Goodness;
  if (s == "feature") return EvalStrategy::Feature;
  throw UsageError("unknown eval strategy '" + s + "' (expected goodness | feature)");
}

std::string to_string(EvalLabel l) { return l == EvalLabel::Neutral ? "neutral" : "random"; }

EvalLabel eval_label_from_string(const std::string& s) {
  if (s == "neutral") return EvalLabel::Neutral;
  if (s == "random") return EvalLabel::Random;
  throw UsageError("unknown eval label '" + s + "' (expected neutral | random)");
}

void EvalConfig::validate(std::size_t depth) const {
  for (int l : aggregate_layers) {
    if (l < 0 || static_cast<std::size_t>(l) >= depth) {
      throw UsageError("eval layer " + std::to_string(l) + " outside network depth " + std::to_string(depth));
    }
  }
  if (batch_size < 1) throw UsageError("eval.batch must be >= 1");
  if (head.epochs < 0 || head.batch_size < 1 || !(head.lr > 0) || head.hidden < 0) {
    throw UsageError("eval.head: epochs >= 0, batch >= 1, lr > 0, hidden >= 0 required");
  }
}

namespace {

Tensor<float> rows(const Tensor<float>& t, Index begin, Index count) {
  Shape shape = t.shape();
  shape[0] = count;
  const Index per = t.sample_size();
  Tensor<float> out(shape);
  std::copy_n(t.data() + begin * per, count * per, out.data());
  return out;
}

Tensor<float> as_batch(const Tensor<float>& image) {
  if (image.rank() == 4) return image;
  if (image.rank() != 3) throw DimensionError("image must be C x H x W, got " + to_string(image.shape()));
  Shape shape{1};
  shape.insert(shape.end(), image.shape().begin(), image.shape().end());
  return image.reshaped(shape);
}

}  // namespace

template <typename Scalar>
ScoreSweep goodness_scores(Network<Scalar>& net, const Tensor<float>& images, Index chunk) {
  if (chunk < 1) throw UsageError("chunk must be >= 1");
  const Index n = images.dim(0);
  const int classes = net.embedding.num_classes();
  ScoreSweep sweep;
  sweep.samples = n;
  sweep.classes = classes;
  sweep.per_layer.assign(net.depth(), RowMatrix<double>::Zero(n, classes));
  for (Index begin = 0; begin < n; begin += chunk) {
    const Index m = std::min(chunk, n - begin);
    const Tensor<float> part = rows(images, begin, m);
    std::vector<int> labels(static_cast<std::size_t>(m));
    for (int k = 0; k < classes; ++k) {
      std::fill(labels.begin(), labels.end(), k);
      Tape<Scalar> tape;
      const auto outs = network_forward(net, tape.constant(with_label_channel(part, std::span<const int>(labels), net.embedding)), Mode::Eval);
      for (std::size_t l = 0; l < outs.size(); ++l) {
        const auto g = square_mean(outs[l]).value().vec().template cast<double>();
        sweep.per_layer[l].col(k).segment(begin, m) = g;
      }
      sweep.forward_passes += m;
    }
  }
  return sweep;
}

int argmax_lowest(const double* scores, int count) {
  int best = 0;
  for (int k = 1; k < count; ++k) {
    if (scores[k] > scores[best]) best = k;
  }
  return best;
}

std::vector<int> predict_from_scores(const ScoreSweep& sweep, const std::vector<int>& layers,
                                     RowMatrix<double>* aggregated) {
  if (layers.empty()) throw UsageError("at least one layer is needed for goodness classification");
  RowMatrix<double> agg = RowMatrix<double>::Zero(sweep.samples, sweep.classes);
  for (int l : layers) {
    if (l < 0 || static_cast<std::size_t>(l) >= sweep.per_layer.size()) {
      throw UsageError("layer " + std::to_string(l) + " outside network depth " + std::to_string(sweep.per_layer.size()));
    }
    agg += sweep.per_layer[static_cast<std::size_t>(l)];
  }
  agg /= static_cast<double>(layers.size());
  std::vector<int> out(static_cast<std::size_t>(sweep.samples));
  for (Index i = 0; i < sweep.samples; ++i) out[i] = argmax_lowest(agg.row(i).data(), sweep.classes);
  if (aggregated) *aggregated = std::move(agg);
  return out;
}

std::vector<int> last_layers(std::size_t depth, int k_last) {
  if (k_last < 1 || static_cast<std::size_t>(k_last) > depth) {
    throw UsageError("k_last must be in [1, " + std::to_string(depth) + "], got " + std::to_string(k_last));
  }
  std::vector<int> out;
  for (int l = static_cast<int>(depth) - k_last; l < static_cast<int>(depth); ++l) out.push_back(l);
  return out;
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels) {
  if (predicted.size() != labels.size()) throw DimensionError("prediction and label counts differ");
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

template <typename Scalar>
Classification classify_goodness(Network<Scalar>& net, const Tensor<float>& image, const std::vector<int>& layers) {
  const ScoreSweep sweep = goodness_scores(net, as_batch(image), 1);
  RowMatrix<double> agg;
  const auto pred = predict_from_scores(sweep, layers, &agg);
  Classification c;
  c.label = pred.front();
  c.scores.assign(agg.data(), agg.data() + agg.cols());
  return c;
}

template <typename Scalar>
int classify_ensemble(Network<Scalar>& net, const Tensor<float>& image, int k_last) {
  return classify_goodness(net, image, last_layers(net.depth(), k_last)).label;
}

std::vector<double> layerwise_accuracy(const ScoreSweep& sweep, const std::vector<int>& labels) {
  std::vector<double> out;
  for (std::size_t l = 0; l < sweep.per_layer.size(); ++l) {
    out.push_back(accuracy(predict_from_scores(sweep, {static_cast<int>(l)}), labels));
  }
  return out;
}

template <typename Scalar>
std::vector<double> layerwise_accuracy(Network<Scalar>& net, const Dataset& d, Index chunk) {
  return layerwise_accuracy(goodness_scores(net, d.images, chunk), d.labels);
}

template <typename Scalar>
Tensor<Scalar> extract_features(Network<Scalar>& net, const Tensor<float>& images, int layer, EvalLabel label,
                                Rng& rng, Index chunk) {
  const int depth = static_cast<int>(net.depth());
  if (layer < 0) layer = depth - 1;
  if (layer >= depth) throw UsageError("feature layer " + std::to_string(layer) + " outside network depth");
  const Index n = images.dim(0);
  const Index width = numel(network_shapes(net.config)[static_cast<std::size_t>(layer) + 1]);
  Tensor<Scalar> out({n, width});
  const Tensor<Scalar> neutral = neutral_label_channel(net.embedding);
  std::uniform_int_distribution<int> pick(0, net.embedding.num_classes() - 1);
  for (Index begin = 0; begin < n; begin += chunk) {
    const Index m = std::min(chunk, n - begin);
    const Tensor<float> part = rows(images, begin, m);
    Tensor<Scalar> input;
    if (label == EvalLabel::Neutral) {
      input = with_channel(part, neutral);
    } else {
      std::vector<int> labels(static_cast<std::size_t>(m));
      for (auto& y : labels) y = pick(rng);
      input = with_label_channel(part, std::span<const int>(labels), net.embedding);
    }
    Tape<Scalar> tape;
    Var<Scalar> h = tape.constant(std::move(input));
    for (int k = 0; k <= layer; ++k) h = block_forward(net.blocks[static_cast<std::size_t>(k)], h, Mode::Eval);
    out.matrix().middleRows(begin, m) = h.value().matrix();
  }
  return out;
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> FeatureHead<Scalar>::parameters() {
  std::vector<Parameter<Scalar>*> out{&w1, &b1};
  if (!w2.value.empty()) {
    out.push_back(&w2);
    out.push_back(&b2);
  }
  return out;
}

template <typename Scalar>
Var<Scalar> head_forward(FeatureHead<Scalar>& head, Var<Scalar> features, bool trainable) {
  Tape<Scalar>& tape = *features.tape;
  Var<Scalar> h = add_bias(matmul(features, tape.parameter(head.w1, trainable)), tape.parameter(head.b1, trainable));
  if (head.w2.value.empty()) return h;
  return add_bias(matmul(relu(h), tape.parameter(head.w2, trainable)), tape.parameter(head.b2, trainable));
}

template <typename Scalar>
FeatureHead<Scalar> train_feature_head(Network<Scalar>& net, const Dataset& d, const HeadConfig& cfg,
                                       EvalLabel label, int layer) {
  Rng rng(cfg.seed);
  const Tensor<Scalar> features = extract_features(net, d.images, layer, label, rng);
  const Index n = features.dim(0), width = features.dim(1);
  const Index classes = net.embedding.num_classes();

  FeatureHead<Scalar> head;
  head.layer = layer;
  head.eval_label = label;
  const Index first_out = cfg.hidden > 0 ? cfg.hidden : classes;
  head.w1 = {"head.w1", kaiming_uniform<Scalar>({width, first_out}, width, rng)};
  head.b1 = {"head.b1", Tensor<Scalar>::zeros({first_out})};
  if (cfg.hidden > 0) {
    head.w2 = {"head.w2", kaiming_uniform<Scalar>({cfg.hidden, classes}, cfg.hidden, rng)};
    head.b2 = {"head.b2", Tensor<Scalar>::zeros({classes})};
  }

  Optimizer<Scalar> opt;
  std::vector<Index> perm(static_cast<std::size_t>(n));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(perm.begin(), perm.end(), Index(0));
    std::shuffle(perm.begin(), perm.end(), rng);
    for (Index begin = 0; begin < n; begin += cfg.batch_size) {
      const Index m = std::min(cfg.batch_size, n - begin);
      Tensor<Scalar> batch({m, width});
      std::vector<int> labels(static_cast<std::size_t>(m));
      for (Index i = 0; i < m; ++i) {
        const Index src = perm[static_cast<std::size_t>(begin + i)];
        batch.matrix().row(i) = features.matrix().row(src);
        labels[i] = d.labels[static_cast<std::size_t>(src)];
      }
      Tape<Scalar> tape;
      const auto loss = cross_entropy(head_forward(head, tape.constant(std::move(batch)), true), std::span<const int>(labels));
      opt.apply(head.parameters(), tape.backward(loss), cfg.lr);
    }
  }
  return head;
}

template <typename Scalar>
std::vector<int> classify_features(Network<Scalar>& net, FeatureHead<Scalar>& head, const Tensor<float>& images,
                                   std::uint64_t seed) {
  Rng rng(seed);
  Tape<Scalar> tape;
  const auto logits = head_forward(head, tape.constant(extract_features(net, images, head.layer, head.eval_label, rng)));
  const auto& v = logits.value();
  const Index n = v.dim(0), k = v.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Vector<double> row = v.matrix().row(i).transpose().template cast<double>();
    out[i] = argmax_lowest(row.data(), static_cast<int>(k));
  }
  return out;
}

std::vector<LayerStability> stability_from_scores(const std::vector<double>& max_weights, const ScoreSweep& sweep) {
  std::vector<LayerStability> out(max_weights.size());
  for (std::size_t l = 0; l < out.size(); ++l) {
    out[l].max_weight = max_weights[l];
    out[l].max_goodness = sweep.samples > 0 && l < sweep.per_layer.size() ? sweep.per_layer[l].maxCoeff() : 0.0;
  }
  return out;
}

template <typename Scalar>
std::vector<LayerStability> snapshot_stability(Network<Scalar>& net, const Dataset& test, Index chunk) {
  std::vector<double> weights;
  for (const auto& b : net.blocks) weights.push_back(static_cast<double>(max_abs_weight(b)));
  return stability_from_scores(weights, goodness_scores(net, test.images, chunk));
}

void write_predictions_csv(const std::string& path, const std::vector<int>& labels, const std::vector<int>& predicted,
                           const RowMatrix<double>& scores) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << "sample_index,true_label,predicted_label";
  for (Index k = 0; k < scores.cols(); ++k) os << ",score_" << k;
  os << '\n';
  char buf[40];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    os << i << ',' << labels[i] << ',' << predicted[i];
    for (Index k = 0; k < scores.cols(); ++k) {
      std::snprintf(buf, sizeof(buf), "%.9g", scores(static_cast<Index>(i), k));
      os << ',' << buf;
    }
    os << '\n';
  }
}

#define FF_INSTANTIATE(S)                                                                                      \
  template ScoreSweep goodness_scores<S>(Network<S>&, const Tensor<float>&, Index);                           \
  template Classification classify_goodness<S>(Network<S>&, const Tensor<float>&, const std::vector<int>&);    \
  template int classify_ensemble<S>(Network<S>&, const Tensor<float>&, int);                                  \
  template std::vector<double> layerwise_accuracy<S>(Network<S>&, const Dataset&, Index);                     \
  template Tensor<S> extract_features<S>(Network<S>&, const Tensor<float>&, int, EvalLabel, Rng&, Index);     \
  template struct FeatureHead<S>;                                                                              \
  template Var<S> head_forward<S>(FeatureHead<S>&, Var<S>, bool);                                              \
  template FeatureHead<S> train_feature_head<S>(Network<S>&, const Dataset&, const HeadConfig&, EvalLabel, int); \
  template std::vector<int> classify_features<S>(Network<S>&, FeatureHead<S>&, const Tensor<float>&,           \
                                                 std::uint64_t);                                               \
  template std::vector<LayerStability> snapshot_stability<S>(Network<S>&, const Dataset&, Index);

FF_INSTANTIATE(float)
FF_INSTANTIATE(double)

#undef FF_INSTANTIATE

}  // namespace ff
