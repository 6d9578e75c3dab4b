#include "ff/data.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

namespace ff {

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DatasetMissingError("cannot open dataset file '" + path + "'");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::uint32_t big_endian_u32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) | (std::uint32_t(b[off + 2]) << 8) |
         std::uint32_t(b[off + 3]);
}

void expect_size(const std::vector<unsigned char>& b, std::size_t expected, const std::string& path) {
  if (b.size() != expected) {
    throw FormatError("'" + path + "' has " + std::to_string(b.size()) + " bytes, expected " +
                      std::to_string(expected));
  }
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path, const std::string& split) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  if (img.size() < 16 || big_endian_u32(img, 0) != 0x00000803) {
    throw FormatError("'" + images_path + "' is not an IDX image file (bad magic)");
  }
  if (lab.size() < 8 || big_endian_u32(lab, 0) != 0x00000801) {
    throw FormatError("'" + labels_path + "' is not an IDX label file (bad magic)");
  }
  const Index n = big_endian_u32(img, 4), rows = big_endian_u32(img, 8), cols = big_endian_u32(img, 12);
  const Index n_labels = big_endian_u32(lab, 4);
  expect_size(img, 16 + static_cast<std::size_t>(n * rows * cols), images_path);
  expect_size(lab, 8 + static_cast<std::size_t>(n_labels), labels_path);
  if (n != n_labels) {
    throw FormatError("image count " + std::to_string(n) + " does not match label count " + std::to_string(n_labels));
  }
  Dataset d;
  d.split = split;
  d.images = Tensor<float>({n, 1, rows, cols});
  for (Index i = 0; i < n * rows * cols; ++i) d.images[i] = static_cast<float>(img[16 + i]) / 255.0f;
  d.labels.resize(static_cast<std::size_t>(n));
  int max_label = 0;
  for (Index i = 0; i < n; ++i) {
    d.labels[i] = lab[8 + i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.num_classes = std::max(10, max_label + 1);
  d.background.assign(1, 0.0f);
  return d;
}

Dataset load_cifar_binary(const std::vector<std::string>& files, int variant, const std::string& split) {
  if (variant != 10 && variant != 100) throw UsageError("CIFAR variant must be 10 or 100");
  const std::size_t header = variant == 10 ? 1 : 2;
  const std::size_t record = header + 3072;
  std::vector<std::vector<unsigned char>> blobs;
  std::size_t total = 0;
  for (const auto& f : files) {
    blobs.push_back(read_file(f));
    if (blobs.back().size() % record != 0) {
      throw FormatError("'" + f + "' size " + std::to_string(blobs.back().size()) + " is not a multiple of the " +
                        std::to_string(record) + "-byte record");
    }
    total += blobs.back().size() / record;
  }
  Dataset d;
  d.split = split;
  d.num_classes = variant;
  d.images = Tensor<float>({static_cast<Index>(total), 3, 32, 32});
  d.labels.reserve(total);
  Index offset = 0;
  for (const auto& b : blobs) {
    for (std::size_t r = 0; r < b.size() / record; ++r) {
      const unsigned char* rec = b.data() + r * record;
      const int label = rec[header - 1];
      if (label >= variant) throw FormatError("CIFAR label " + std::to_string(label) + " out of range");
      d.labels.push_back(label);
      for (std::size_t i = 0; i < 3072; ++i) d.images[offset + static_cast<Index>(i)] = rec[header + i] / 255.0f;
      offset += 3072;
    }
  }
  d.background.assign(3, 0.0f);
  return d;
}

const std::vector<std::string>& dataset_names() {
  static const std::vector<std::string> names{"mnist", "fashion_mnist", "cifar10", "cifar100"};
  return names;
}

std::pair<Dataset, Dataset> load_dataset(const std::string& name, const std::string& root) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(root) / name;
  auto require = [&](const fs::path& p) {
    if (!fs::exists(p)) throw DatasetMissingError("dataset file not found: " + p.string());
    return p.string();
  };
  if (name == "mnist" || name == "fashion_mnist") {
    return {load_idx(require(dir / "train-images-idx3-ubyte"), require(dir / "train-labels-idx1-ubyte"), "train"),
            load_idx(require(dir / "t10k-images-idx3-ubyte"), require(dir / "t10k-labels-idx1-ubyte"), "test")};
  }
  if (name == "cifar10") {
    std::vector<std::string> train;
    for (int i = 1; i <= 5; ++i) train.push_back(require(dir / ("data_batch_" + std::to_string(i) + ".bin")));
    return {load_cifar_binary(train, 10, "train"), load_cifar_binary({require(dir / "test_batch.bin")}, 10, "test")};
  }
  if (name == "cifar100") {
    return {load_cifar_binary({require(dir / "train.bin")}, 100, "train"),
            load_cifar_binary({require(dir / "test.bin")}, 100, "test")};
  }
  throw UsageError("unknown dataset '" + name + "' (expected mnist | fashion_mnist | cifar10 | cifar100)");
}

Dataset pad_images(const Dataset& d, Index size) {
  const Index n = d.images.dim(0), c = d.images.dim(1), h = d.images.dim(2), w = d.images.dim(3);
  if (h == size && w == size) return d;
  if (h > size || w > size) throw DimensionError("cannot pad " + to_string(d.image_shape()) + " down to " + std::to_string(size));
  const Index top = (size - h) / 2, left = (size - w) / 2;
  Dataset out = d;
  out.images = Tensor<float>({n, c, size, size});
  for (Index plane = 0; plane < n * c; ++plane) {
    const float fill = d.background.empty() ? 0.0f : d.background[static_cast<std::size_t>(plane % c)];
    float* dst = out.images.data() + plane * size * size;
    std::fill(dst, dst + size * size, fill);
    const float* src = d.images.data() + plane * h * w;
    for (Index y = 0; y < h; ++y) std::copy_n(src + y * w, w, dst + (y + top) * size + left);
  }
  return out;
}

ChannelStats channel_stats(const Dataset& d) {
  const Index n = d.images.dim(0), c = d.images.dim(1), plane = d.images.dim(2) * d.images.dim(3);
  ChannelStats s{std::vector<double>(static_cast<std::size_t>(c), 0.0), std::vector<double>(static_cast<std::size_t>(c), 0.0)};
  std::vector<double> sq(static_cast<std::size_t>(c), 0.0);
  for (Index i = 0; i < n; ++i) {
    for (Index ch = 0; ch < c; ++ch) {
      const float* p = d.images.data() + (i * c + ch) * plane;
      for (Index k = 0; k < plane; ++k) {
        s.mean[ch] += p[k];
        sq[ch] += double(p[k]) * p[k];
      }
    }
  }
  const double count = static_cast<double>(n * plane);
  for (Index ch = 0; ch < c; ++ch) {
    s.mean[ch] /= count;
    s.stddev[ch] = std::sqrt(std::max(sq[ch] / count - s.mean[ch] * s.mean[ch], 1e-12));
  }
  return s;
}

void standardize(Dataset& d, const ChannelStats& s) {
  const Index n = d.images.dim(0), c = d.images.dim(1), plane = d.images.dim(2) * d.images.dim(3);
  if (static_cast<Index>(s.mean.size()) != c) throw DimensionError("standardize: channel count mismatch");
  for (Index i = 0; i < n; ++i) {
    for (Index ch = 0; ch < c; ++ch) {
      float* p = d.images.data() + (i * c + ch) * plane;
      const double m = s.mean[ch], inv = 1.0 / s.stddev[ch];
      for (Index k = 0; k < plane; ++k) p[k] = static_cast<float>((p[k] - m) * inv);
    }
  }
  d.background.resize(static_cast<std::size_t>(c));
  for (Index ch = 0; ch < c; ++ch) d.background[ch] = static_cast<float>(-s.mean[ch] / s.stddev[ch]);
}

void prepare_datasets(Dataset& train, Dataset& test, Index size) {
  train = pad_images(train, size);
  test = pad_images(test, size);
  const ChannelStats s = channel_stats(train);
  standardize(train, s);
  standardize(test, s);
}

Tensor<float> gather_images(const Dataset& d, std::span<const Index> indices) {
  Shape shape = d.images.shape();
  shape[0] = static_cast<Index>(indices.size());
  Tensor<float> out(shape);
  const Index row = d.images.sample_size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Index src = indices[i];
    if (src < 0 || src >= d.size()) throw UsageError("sample index " + std::to_string(src) + " out of range");
    std::copy_n(d.images.data() + src * row, row, out.data() + static_cast<Index>(i) * row);
  }
  return out;
}

Dataset subset(const Dataset& d, std::span<const Index> indices) {
  Dataset out;
  out.images = gather_images(d, indices);
  out.num_classes = d.num_classes;
  out.split = d.split;
  out.background = d.background;
  for (Index i : indices) out.labels.push_back(d.labels[static_cast<std::size_t>(i)]);
  return out;
}

Dataset head(const Dataset& d, Index count) {
  std::vector<Index> idx(static_cast<std::size_t>(std::min(count, d.size())));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Index>(i);
  return subset(d, idx);
}

void augment_image(const float* in, float* out, Index channels, Index height, Index width, const AugmentParams& p,
                   Index crop_pad, std::span<const float> fill) {
  const double theta = p.angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cy = (height - 1) / 2.0, cx = (width - 1) / 2.0;
  for (Index ch = 0; ch < channels; ++ch) {
    const float bg = fill.empty() ? 0.0f : fill[static_cast<std::size_t>(ch) % fill.size()];
    const float* src = in + ch * height * width;
    float* dst = out + ch * height * width;
    auto pixel = [&](Index y, Index x) -> double {
      return (y < 0 || y >= height || x < 0 || x >= width) ? bg : src[y * width + x];
    };
    auto rotated = [&](Index y, Index x) -> double {
      if (y < 0 || y >= height || x < 0 || x >= width) return bg;
      const double dy = y - cy, dx = x - cx;
      const double sx = cs * dx + sn * dy + cx;
      const double sy = -sn * dx + cs * dy + cy;
      const double fx0 = std::floor(sx), fy0 = std::floor(sy);
      const Index x0 = static_cast<Index>(fx0), y0 = static_cast<Index>(fy0);
      const double ax = sx - fx0, ay = sy - fy0;
      return (1 - ay) * ((1 - ax) * pixel(y0, x0) + ax * pixel(y0, x0 + 1)) +
             ay * ((1 - ax) * pixel(y0 + 1, x0) + ax * pixel(y0 + 1, x0 + 1));
    };
    for (Index y = 0; y < height; ++y) {
      for (Index x = 0; x < width; ++x) {
        dst[y * width + x] = static_cast<float>(rotated(y + p.offset_y - crop_pad, x + p.offset_x - crop_pad));
      }
    }
  }
}

Tensor<float> augment(const Tensor<float>& batch, Rng& rng, const AugmentConfig& cfg, std::span<const float> fill) {
  if (!cfg.enabled) return batch;
  Tensor<float> out(batch.shape());
  const Index n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  std::uniform_real_distribution<double> angle(-cfg.max_rotation_deg, cfg.max_rotation_deg);
  std::uniform_int_distribution<Index> offset(0, 2 * cfg.crop_pad);
  for (Index i = 0; i < n; ++i) {
    AugmentParams p;
    p.angle_deg = angle(rng);
    p.offset_y = offset(rng);
    p.offset_x = offset(rng);
    augment_image(batch.data() + i * c * h * w, out.data() + i * c * h * w, c, h, w, p, cfg.crop_pad, fill);
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> encode_label_channel(int label, const LabelEmbedding<Scalar>& emb) {
  if (label < 0 || label >= emb.num_classes()) throw UsageError("label " + std::to_string(label) + " out of range");
  const Index plane = emb.height * emb.width;
  return Tensor<Scalar>({1, emb.height, emb.width}, emb.matrix.value.vec().segment(label * plane, plane));
}

template <typename Scalar>
Tensor<Scalar> neutral_label_channel(const LabelEmbedding<Scalar>& emb) {
  Vector<Scalar> row = emb.matrix.value.matrix().colwise().mean().transpose();
  return Tensor<Scalar>({1, emb.height, emb.width}, std::move(row));
}

int draw_wrong_label(int true_label, int num_classes, Rng& rng) {
  if (num_classes < 2) throw UsageError("negative labels need at least 2 classes");
  std::uniform_int_distribution<int> dist(0, num_classes - 2);
  const int r = dist(rng);
  return r >= true_label ? r + 1 : r;
}

template <typename Scalar>
PosNegBatch make_pos_neg_batch(const Dataset& d, std::span<const Index> indices, const LabelEmbedding<Scalar>& emb,
                               Rng& rng) {
  if (emb.num_classes() < 2) throw UsageError("positive/negative batches need at least 2 classes");
  if (emb.height != d.images.dim(2) || emb.width != d.images.dim(3)) {
    throw DimensionError("label embedding plane does not match image size " + to_string(d.image_shape()));
  }
  PosNegBatch b;
  b.images = gather_images(d, indices);
  for (Index i : indices) {
    const int y = d.labels[static_cast<std::size_t>(i)];
    b.true_labels.push_back(y);
    b.neg_labels.push_back(draw_wrong_label(y, emb.num_classes(), rng));
  }
  return b;
}

template <typename Scalar>
Tensor<Scalar> with_label_channel(const Tensor<float>& images, std::span<const int> labels,
                                  const LabelEmbedding<Scalar>& emb) {
  const Index n = images.dim(0), c = images.dim(1), plane = images.dim(2) * images.dim(3);
  if (static_cast<Index>(labels.size()) != n) throw DimensionError("one label per image required");
  if (plane != emb.height * emb.width) throw DimensionError("label embedding plane does not match images");
  Tensor<Scalar> out({n, c + 1, images.dim(2), images.dim(3)});
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= emb.num_classes()) throw UsageError("label " + std::to_string(y) + " out of range");
    Scalar* dst = out.data() + i * (c + 1) * plane;
    for (Index k = 0; k < c * plane; ++k) dst[k] = static_cast<Scalar>(images[i * c * plane + k]);
    std::copy_n(emb.matrix.value.data() + y * plane, plane, dst + c * plane);
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> with_channel(const Tensor<float>& images, const Tensor<Scalar>& channel) {
  const Index n = images.dim(0), c = images.dim(1), plane = images.dim(2) * images.dim(3);
  if (channel.size() != plane) throw DimensionError("label channel does not match image plane");
  Tensor<Scalar> out({n, c + 1, images.dim(2), images.dim(3)});
  for (Index i = 0; i < n; ++i) {
    Scalar* dst = out.data() + i * (c + 1) * plane;
    for (Index k = 0; k < c * plane; ++k) dst[k] = static_cast<Scalar>(images[i * c * plane + k]);
    std::copy_n(channel.data(), plane, dst + c * plane);
  }
  return out;
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> materialize(const PosNegBatch& batch, const LabelEmbedding<Scalar>& emb) {
  return {with_label_channel(batch.images, batch.true_labels, emb),
          with_label_channel(batch.images, batch.neg_labels, emb)};
}

#define FF_INSTANTIATE(S)                                                                                     \
  template Tensor<S> encode_label_channel<S>(int, const LabelEmbedding<S>&);                                  \
  template Tensor<S> neutral_label_channel<S>(const LabelEmbedding<S>&);                                      \
  template PosNegBatch make_pos_neg_batch<S>(const Dataset&, std::span<const Index>, const LabelEmbedding<S>&, \
                                             Rng&);                                                           \
  template Tensor<S> with_label_channel<S>(const Tensor<float>&, std::span<const int>, const LabelEmbedding<S>&); \
  template Tensor<S> with_channel<S>(const Tensor<float>&, const Tensor<S>&);                                 \
  template std::pair<Tensor<S>, Tensor<S>> materialize<S>(const PosNegBatch&, const LabelEmbedding<S>&);

FF_INSTANTIATE(float)
FF_INSTANTIATE(double)

#undef FF_INSTANTIATE

}  // namespace ff
