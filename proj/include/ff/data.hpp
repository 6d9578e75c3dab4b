#pragma once

#include "ff/errors.hpp"
#include "ff/layers.hpp"

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ff {

class DatasetMissingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Tensor<float> images;  // N x C x H x W
  std::vector<int> labels;
  int num_classes = 0;
  std::string split = "train";
  // Per-channel value that raw pixel 0 maps to after standardization; used
  // as the fill for padding, rotation and crops.
  std::vector<float> background;

  Index size() const { return static_cast<Index>(labels.size()); }
  Shape image_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
};

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

// MNIST / Fashion-MNIST IDX pair; pixels scaled to [0, 1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path, const std::string& split = "train");
// CIFAR binary batches. variant 10: <label><3072 px>; variant 100:
// <coarse><fine><3072 px>, fine labels are used.
Dataset load_cifar_binary(const std::vector<std::string>& files, int variant, const std::string& split = "train");

// Known dataset names: mnist, fashion_mnist, cifar10, cifar100. Files live
// under <root>/<name>/ with their distribution file names.
const std::vector<std::string>& dataset_names();
std::pair<Dataset, Dataset> load_dataset(const std::string& name, const std::string& root);
// Pads to `size` x `size`, standardizes both splits with train statistics.
void prepare_datasets(Dataset& train, Dataset& test, Index size = 32);

Dataset pad_images(const Dataset& d, Index size);
ChannelStats channel_stats(const Dataset& d);
void standardize(Dataset& d, const ChannelStats& stats);
Dataset subset(const Dataset& d, std::span<const Index> indices);
Dataset head(const Dataset& d, Index count);
Tensor<float> gather_images(const Dataset& d, std::span<const Index> indices);

struct AugmentConfig {
  bool enabled = true;
  double max_rotation_deg = 15.0;
  Index crop_pad = 4;
};

struct AugmentParams {
  double angle_deg = 0;
  Index offset_y = 0;  // crop origin inside the padded image, in [0, 2 * pad]
  Index offset_x = 0;
};

// Rotation (bilinear, about the image centre) followed by a crop of the
// zero-padded result back to the original size.
void augment_image(const float* in, float* out, Index channels, Index height, Index width, const AugmentParams& p,
                   Index crop_pad, std::span<const float> fill);
// Draws parameters per image from `rng` in batch order.
Tensor<float> augment(const Tensor<float>& batch, Rng& rng, const AugmentConfig& cfg, std::span<const float> fill);

template <typename Scalar>
Tensor<Scalar> encode_label_channel(int label, const LabelEmbedding<Scalar>& emb);
template <typename Scalar>
Tensor<Scalar> neutral_label_channel(const LabelEmbedding<Scalar>& emb);

// Uniform over the K - 1 labels that differ from `true_label`.
int draw_wrong_label(int true_label, int num_classes, Rng& rng);

struct PosNegBatch {
  Tensor<float> images;  // shared image channels, B x C x H x W
  std::vector<int> true_labels;
  std::vector<int> neg_labels;

  Index size() const { return static_cast<Index>(true_labels.size()); }
};

template <typename Scalar>
PosNegBatch make_pos_neg_batch(const Dataset& d, std::span<const Index> indices, const LabelEmbedding<Scalar>& emb,
                               Rng& rng);

// Builds B x (C+1) x H x W tensors with the given label channel per sample.
template <typename Scalar>
Tensor<Scalar> with_label_channel(const Tensor<float>& images, std::span<const int> labels,
                                  const LabelEmbedding<Scalar>& emb);
template <typename Scalar>
Tensor<Scalar> with_channel(const Tensor<float>& images, const Tensor<Scalar>& channel);

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> materialize(const PosNegBatch& batch, const LabelEmbedding<Scalar>& emb);

}  // namespace ff
