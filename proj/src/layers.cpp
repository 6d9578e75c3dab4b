#include "ff/layers.hpp"

#include "ff/errors.hpp"

#include <cmath>

namespace ff {

Shape NetworkConfig::input_shape() const {
  if (image_shape.size() != 3) throw UsageError("network image shape must be C x H x W");
  return {image_shape[0] + 1, image_shape[1], image_shape[2]};
}

std::string to_string(BlockKind kind) {
  return kind == BlockKind::Dense ? "dense" : "conv";
}

std::string to_string(NormKind kind) {
  switch (kind) {
    case NormKind::None:
      return "none";
    case NormKind::LayerNormReduced:
      return "layernorm";
    case NormKind::BatchNorm:
      return "batchnorm";
  }
  return "none";
}

BlockKind block_kind_from_string(const std::string& s) {
  if (s == "dense") return BlockKind::Dense;
  if (s == "conv") return BlockKind::Conv;
  throw UsageError("unknown block kind '" + s + "' (expected dense | conv)");
}

NormKind norm_kind_from_string(const std::string& s) {
  if (s == "none") return NormKind::None;
  if (s == "layernorm" || s == "layernorm_reduced") return NormKind::LayerNormReduced;
  if (s == "batchnorm") return NormKind::BatchNorm;
  throw UsageError("unknown normalization '" + s + "' (expected none | layernorm | batchnorm)");
}

Shape block_output_shape(const BlockConfig& cfg, const Shape& in) {
  if (cfg.width < 1) throw UsageError("block width must be >= 1");
  if (cfg.kind == BlockKind::Dense) {
    if (cfg.pool) throw UsageError("dense blocks cannot pool");
    return {cfg.width};
  }
  if (in.size() != 3) throw DimensionError("conv block needs a C x H x W input, got " + to_string(in));
  if (cfg.kernel > in[1] + 2 * cfg.pad || cfg.kernel > in[2] + 2 * cfg.pad) {
    throw DimensionError("conv kernel " + std::to_string(cfg.kernel) + " larger than padded input " + to_string(in));
  }
  Index h = (in[1] + 2 * cfg.pad - cfg.kernel) / cfg.stride + 1;
  Index w = (in[2] + 2 * cfg.pad - cfg.kernel) / cfg.stride + 1;
  if (cfg.pool) {
    if (cfg.pool->kernel > h || cfg.pool->kernel > w) {
      throw DimensionError("maxpool window exceeds conv output " + to_string(Shape{cfg.width, h, w}));
    }
    h = (h - cfg.pool->kernel) / cfg.pool->stride + 1;
    w = (w - cfg.pool->kernel) / cfg.pool->stride + 1;
  }
  return {cfg.width, h, w};
}

std::vector<Shape> network_shapes(const NetworkConfig& cfg) {
  std::vector<Shape> shapes{cfg.input_shape()};
  for (const auto& block : cfg.blocks) shapes.push_back(block_output_shape(block, shapes.back()));
  return shapes;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"shallow_cnn", "deep_cnn", "fcn", "cnn4"};
  return names;
}

NetworkConfig fcn_config(const Shape& image_shape, int num_classes, Index width, int depth, NormKind norm) {
  NetworkConfig cfg;
  cfg.preset = "fcn";
  cfg.image_shape = image_shape;
  cfg.num_classes = num_classes;
  for (int i = 0; i < depth; ++i) {
    BlockConfig b;
    b.kind = BlockKind::Dense;
    b.norm = norm;
    b.width = width;
    cfg.blocks.push_back(b);
  }
  return cfg;
}

namespace {

NetworkConfig conv_stack(const std::string& name, const Shape& image_shape, int num_classes, NormKind norm,
                         const std::vector<std::pair<Index, bool>>& channels) {
  NetworkConfig cfg;
  cfg.preset = name;
  cfg.image_shape = image_shape;
  cfg.num_classes = num_classes;
  for (const auto& [width, pool] : channels) {
    BlockConfig b;
    b.kind = BlockKind::Conv;
    b.norm = norm;
    b.width = width;
    if (pool) b.pool = PoolSpec{};
    cfg.blocks.push_back(b);
  }
  return cfg;
}

}  // namespace

NetworkConfig preset(const std::string& name, const Shape& image_shape, int num_classes, NormKind norm) {
  if (name == "fcn") return fcn_config(image_shape, num_classes, 2048, 6, norm);
  // Channel schedules sized to ~2.8M and ~8.5M parameters on 4 x 32 x 32 input.
  if (name == "shallow_cnn") {
    return conv_stack(name, image_shape, num_classes, norm,
                      {{64, false}, {128, false}, {256, true}, {256, false}, {256, true}, {512, false}});
  }
  if (name == "deep_cnn") {
    return conv_stack(name, image_shape, num_classes, norm,
                      {{64, false},
                       {64, false},
                       {128, false},
                       {128, false},
                       {256, false},
                       {256, true},
                       {256, false},
                       {256, false},
                       {384, false},
                       {384, true},
                       {512, false},
                       {512, false}});
  }
  // Reduced 4-block network for desk-scale ablations.
  if (name == "cnn4") {
    return conv_stack(name, image_shape, num_classes, norm, {{32, false}, {64, true}, {128, true}, {128, true}});
  }
  std::string list;
  for (const auto& n : preset_names()) list += (list.empty() ? "" : ", ") + n;
  throw UsageError("unknown preset '" + name + "' (available: " + list + ")");
}

template <typename Scalar>
Tensor<Scalar> kaiming_uniform(const Shape& shape, Index fan_in, Rng& rng) {
  if (fan_in < 1) throw UsageError("kaiming_uniform: fan_in must be >= 1");
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
  return t;
}

template <typename Scalar>
LayerBlock<Scalar>::LayerBlock(const BlockConfig& cfg, const Shape& sample_in, Rng& rng, const std::string& prefix)
    : config(cfg), in_shape(sample_in) {
  const Shape out = block_output_shape(cfg, sample_in);
  Index norm_channels = 0;
  if (cfg.kind == BlockKind::Dense) {
    const Index fan_in = numel(sample_in);
    weight = {prefix + ".weight", kaiming_uniform<Scalar>({fan_in, cfg.width}, fan_in, rng)};
    norm_channels = fan_in;
  } else {
    const Index fan_in = sample_in[0] * cfg.kernel * cfg.kernel;
    weight = {prefix + ".weight", kaiming_uniform<Scalar>({cfg.width, sample_in[0], cfg.kernel, cfg.kernel}, fan_in, rng)};
    norm_channels = sample_in[0];
  }
  bias = {prefix + ".bias", Tensor<Scalar>::zeros({cfg.width})};
  if (cfg.norm == NormKind::BatchNorm) {
    gamma = {prefix + ".gamma", Tensor<Scalar>::constant({norm_channels}, 1)};
    beta = {prefix + ".beta", Tensor<Scalar>::zeros({norm_channels})};
    norm_state = BatchNormState<Scalar>(norm_channels);
  }
  (void)out;
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> LayerBlock<Scalar>::parameters() {
  std::vector<Parameter<Scalar>*> ps{&weight, &bias};
  if (config.norm == NormKind::BatchNorm) {
    ps.push_back(&gamma);
    ps.push_back(&beta);
  }
  return ps;
}

template <typename Scalar>
std::vector<const Parameter<Scalar>*> LayerBlock<Scalar>::parameters() const {
  std::vector<const Parameter<Scalar>*> ps{&weight, &bias};
  if (config.norm == NormKind::BatchNorm) {
    ps.push_back(&gamma);
    ps.push_back(&beta);
  }
  return ps;
}

template <typename Scalar>
Index LayerBlock<Scalar>::parameter_count() const {
  Index n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

template <typename Scalar>
LabelEmbedding<Scalar>::LabelEmbedding(int num_classes, Index h, Index w, bool learned_, Rng& rng)
    : learned(learned_), height(h), width(w) {
  if (num_classes < 1) throw UsageError("label embedding needs at least one class");
  matrix = {"embedding", kaiming_uniform<Scalar>({num_classes, h * w}, num_classes, rng)};
}

template <typename Scalar>
Network<Scalar>::Network(NetworkConfig cfg, bool learned_embedding, std::uint64_t seed) : config(std::move(cfg)) {
  const auto shapes = network_shapes(config);
  Rng rng(seed);
  blocks.reserve(config.blocks.size());
  for (std::size_t i = 0; i < config.blocks.size(); ++i) {
    blocks.emplace_back(config.blocks[i], shapes[i], rng, "block" + std::to_string(i));
  }
  embedding = LabelEmbedding<Scalar>(config.num_classes, config.image_shape[1], config.image_shape[2],
                                     learned_embedding, rng);
}

template <typename Scalar>
Index Network<Scalar>::parameter_count() const {
  Index n = 0;
  for (const auto& b : blocks) n += b.parameter_count();
  return n;
}

namespace {

template <typename Scalar>
Var<Scalar> block_forward_impl(LayerBlock<Scalar>& block, Var<Scalar> x, BatchNormMode bn_mode, bool trainable) {
  Tape<Scalar>& tape = *x.tape;
  const BlockConfig& cfg = block.config;
  if (cfg.kind == BlockKind::Dense) {
    x = flatten(x);
  } else if (x.value().rank() != 4) {
    throw DimensionError("conv block expects N x C x H x W input, got " + to_string(x.shape()));
  }
  Shape expected{x.shape()[0]};
  expected.insert(expected.end(), block.in_shape.begin(), block.in_shape.end());
  if (numel(expected) != x.value().size()) {
    throw DimensionError("block input " + to_string(x.shape()) + " does not match configured " +
                         to_string(block.in_shape));
  }

  block.degenerate_samples = 0;
  switch (cfg.norm) {
    case NormKind::None:
      break;
    case NormKind::LayerNormReduced: {
      const auto norms = x.value().matrix().rowwise().squaredNorm();
      block.degenerate_samples = (norms.array() == Scalar(0)).count();
      x = layernorm_reduced(x);
      break;
    }
    case NormKind::BatchNorm:
      x = batchnorm(x, tape.parameter(block.gamma, trainable), tape.parameter(block.beta, trainable), block.norm_state,
                    bn_mode);
      break;
  }

  Var<Scalar> y;
  if (cfg.kind == BlockKind::Dense) {
    y = add_bias(matmul(x, tape.parameter(block.weight, trainable)), tape.parameter(block.bias, trainable));
  } else {
    y = add_bias(conv2d(x, tape.parameter(block.weight, trainable), cfg.stride, cfg.pad),
                 tape.parameter(block.bias, trainable));
  }
  y = relu(y);
  if (cfg.pool) y = maxpool2d(y, cfg.pool->kernel, cfg.pool->stride);
  return y;
}

}  // namespace

template <typename Scalar>
Var<Scalar> block_forward(LayerBlock<Scalar>& block, Var<Scalar> x, Mode mode, bool trainable) {
  BatchNormMode bn;
  switch (mode) {
    case Mode::Train:
      bn = {BatchNormStats::Batch, true};
      break;
    case Mode::Eval:
      bn = {BatchNormStats::Running, false};
      break;
    case Mode::RollingTrain:
      bn = {BatchNormStats::Running, true};
      break;
  }
  return block_forward_impl(block, x, bn, trainable);
}

template <typename Scalar>
Var<Scalar> block_forward_frozen_stats(LayerBlock<Scalar>& block, Var<Scalar> x, bool trainable) {
  return block_forward_impl(block, x, BatchNormMode{BatchNormStats::Batch, false}, trainable);
}

template <typename Scalar>
std::vector<Var<Scalar>> network_forward(Network<Scalar>& net, Var<Scalar> input, Mode mode) {
  std::vector<Var<Scalar>> outs;
  outs.reserve(net.blocks.size());
  Var<Scalar> h = input;
  for (auto& block : net.blocks) {
    h = block_forward(block, h, mode);
    outs.push_back(h);
  }
  return outs;
}

template <typename Scalar>
Scalar max_abs_weight(const LayerBlock<Scalar>& block) {
  return std::max(block.weight.value.vec().cwiseAbs().maxCoeff(), block.bias.value.vec().cwiseAbs().maxCoeff());
}

#define FF_INSTANTIATE(S)                                                                         \
  template Tensor<S> kaiming_uniform<S>(const Shape&, Index, Rng&);                               \
  template struct LayerBlock<S>;                                                                  \
  template struct LabelEmbedding<S>;                                                              \
  template struct Network<S>;                                                                     \
  template Var<S> block_forward<S>(LayerBlock<S>&, Var<S>, Mode, bool);                           \
  template Var<S> block_forward_frozen_stats<S>(LayerBlock<S>&, Var<S>, bool);                    \
  template std::vector<Var<S>> network_forward<S>(Network<S>&, Var<S>, Mode);                     \
  template S max_abs_weight<S>(const LayerBlock<S>&);

FF_INSTANTIATE(float)
FF_INSTANTIATE(double)

#undef FF_INSTANTIATE

}  // namespace ff
