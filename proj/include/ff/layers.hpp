#pragma once

#include "ff/autodiff.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace ff {

using Rng = std::mt19937_64;

enum class BlockKind { Dense, Conv };
enum class NormKind { None, LayerNormReduced, BatchNorm };

// How a block treats its normalizer.
enum class Mode {
  Train,         // batch statistics, running statistics updated
  Eval,          // running statistics, nothing mutated
  RollingTrain,  // running statistics, updated as samples stream in
};

struct PoolSpec {
  Index kernel = 2;
  Index stride = 2;
};

struct BlockConfig {
  BlockKind kind = BlockKind::Dense;
  NormKind norm = NormKind::BatchNorm;
  Index width = 0;  // output features (dense) or channels (conv)
  Index kernel = 3;
  Index stride = 1;
  Index pad = 1;
  std::optional<PoolSpec> pool;
};

struct NetworkConfig {
  std::string preset = "custom";
  Shape image_shape;  // C x H x W without the label channel
  int num_classes = 10;
  std::vector<BlockConfig> blocks;

  // Block input is the image plus one label channel.
  Shape input_shape() const;
};

std::string to_string(BlockKind kind);
std::string to_string(NormKind kind);
BlockKind block_kind_from_string(const std::string& s);
NormKind norm_kind_from_string(const std::string& s);

// Per-sample output shape of a block given its per-sample input shape.
Shape block_output_shape(const BlockConfig& cfg, const Shape& sample_in);
// Per-sample input shapes of every block, followed by the final output shape.
std::vector<Shape> network_shapes(const NetworkConfig& cfg);

// Presets: fcn (6 x 2048 dense), shallow_cnn (6 conv), deep_cnn (12 conv),
// cnn4 (4 conv, desk scale).
// `width`/`depth` override the fcn layout for reduced desk-scale runs.
NetworkConfig preset(const std::string& name, const Shape& image_shape, int num_classes,
                     NormKind norm = NormKind::BatchNorm);
NetworkConfig fcn_config(const Shape& image_shape, int num_classes, Index width, int depth, NormKind norm);
const std::vector<std::string>& preset_names();

template <typename Scalar>
Tensor<Scalar> kaiming_uniform(const Shape& shape, Index fan_in, Rng& rng);

template <typename Scalar>
struct LayerBlock {
  BlockConfig config;
  Shape in_shape;  // per sample
  Parameter<Scalar> weight;  // dense: [in x out], conv: [F x C x k x k]
  Parameter<Scalar> bias;
  Parameter<Scalar> gamma;  // batchnorm only
  Parameter<Scalar> beta;
  BatchNormState<Scalar> norm_state;
  // Zero-norm samples seen by the reduced layernorm during the last forward.
  Index degenerate_samples = 0;

  LayerBlock(const BlockConfig& cfg, const Shape& sample_in, Rng& rng, const std::string& prefix);

  std::vector<Parameter<Scalar>*> parameters();
  std::vector<const Parameter<Scalar>*> parameters() const;
  Index parameter_count() const;
  Shape out_shape() const { return block_output_shape(config, in_shape); }
};

// Label channel source: row k reshaped to H x W encodes label k.
template <typename Scalar>
struct LabelEmbedding {
  Parameter<Scalar> matrix;  // [K x (H*W)]
  bool learned = false;
  Index height = 0;
  Index width = 0;

  LabelEmbedding() = default;
  LabelEmbedding(int num_classes, Index height, Index width, bool learned, Rng& rng);
  int num_classes() const { return static_cast<int>(matrix.value.dim(0)); }
};

template <typename Scalar>
struct Network {
  NetworkConfig config;
  std::vector<LayerBlock<Scalar>> blocks;
  LabelEmbedding<Scalar> embedding;

  Network(NetworkConfig cfg, bool learned_embedding, std::uint64_t seed);
  Index parameter_count() const;  // blocks only; the embedding is an input encoder
  std::size_t depth() const { return blocks.size(); }
};

// norm -> linear/conv (+bias) -> relu -> optional maxpool. The result feeds
// the next block and is also the tensor goodness is measured on.
template <typename Scalar>
Var<Scalar> block_forward(LayerBlock<Scalar>& block, Var<Scalar> x, Mode mode, bool trainable = false);

// Same pass with batch statistics but without touching running statistics;
// used to re-emit activations after an update.
template <typename Scalar>
Var<Scalar> block_forward_frozen_stats(LayerBlock<Scalar>& block, Var<Scalar> x, bool trainable = false);

// Runs every block; returns the per-block outputs.
template <typename Scalar>
std::vector<Var<Scalar>> network_forward(Network<Scalar>& net, Var<Scalar> input, Mode mode);

template <typename Scalar>
Scalar max_abs_weight(const LayerBlock<Scalar>& block);

}  // namespace ff
