#pragma once

#include "ff/tensor.hpp"

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace ff {

// A trainable tensor. Identity (its address) is what gradients and optimizer
// state are keyed on, so parameters are never copied while a tape is alive.
template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
};

template <typename Scalar>
using Gradients = std::unordered_map<const Parameter<Scalar>*, Tensor<Scalar>>;

template <typename Scalar>
class Tape;

// Handle to a value recorded on a tape.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<Scalar>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

// Records a forward computation so that it can be differentiated once in
// reverse. One tape per objective evaluation; it is discarded after backward.
template <typename Scalar>
class Tape {
 public:
  // Receives the adjoint of the node's output and accumulates into inputs.
  using Backward = std::function<void(Tape&, const Tensor<Scalar>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Tensor<Scalar> value);
  // References `p.value` without copying. When `trainable` is false the
  // parameter behaves as a constant and never receives a gradient entry.
  Var<Scalar> parameter(const Parameter<Scalar>& p, bool trainable = true);
  // Gradient stops here: nothing upstream of `v` receives an adjoint through
  // the returned handle.
  Var<Scalar> detach(Var<Scalar> v);

  Var<Scalar> record(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs, Backward backward);

  const Tensor<Scalar>& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  // Adjoint buffer of `v` (zero-initialised on first use), or nullptr when
  // `v` does not require a gradient.
  Tensor<Scalar>* grad_buffer(Var<Scalar> v);

  // d(loss)/d(parameter) for every trainable parameter the loss reaches.
  Gradients<Scalar> backward(Var<Scalar> loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Scalar> value;
    const Tensor<Scalar>* external = nullptr;
    const Parameter<Scalar>* param = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
    Tensor<Scalar> grad;
    Backward backward;
  };

  Var<Scalar> push(Node node);

  std::deque<Node> nodes_;
  bool consumed_ = false;
};

// Running statistics of a batch-normalization layer.
template <typename Scalar>
struct BatchNormState {
  Tensor<Scalar> running_mean;
  Tensor<Scalar> running_var;
  Scalar momentum = Scalar(0.9);  // weight kept on the previous running value
  Scalar eps = Scalar(1e-5);
  std::int64_t updates = 0;

  BatchNormState() = default;
  explicit BatchNormState(Index channels)
      : running_mean(Tensor<Scalar>::zeros({channels})), running_var(Tensor<Scalar>::constant({channels}, 1)) {}
};

enum class BatchNormStats {
  Batch,    // normalize with the statistics of the current batch
  Running,  // normalize with the stored running statistics
};

struct BatchNormMode {
  BatchNormStats stats = BatchNormStats::Batch;
  bool update_running = true;
};

// ---- op set ------------------------------------------------------------

// a[m x k] * b[k x n]; a of higher rank is flattened to (batch x rest).
template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b);

// Adds b[F] along axis 1 of x[N x F] or x[N x F x H x W].
template <typename Scalar>
Var<Scalar> add_bias(Var<Scalar> x, Var<Scalar> b);

// Cross-correlation of x[N x C x H x W] with w[F x C x kh x kw], zero padding.
template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> w, Index stride, Index pad);

// Window maximum; the adjoint goes to the first maximal element (row-major).
template <typename Scalar>
Var<Scalar> maxpool2d(Var<Scalar> x, Index kernel, Index stride);

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> x);

// log(1 + exp(x)) for x <= 20, x beyond.
template <typename Scalar>
Var<Scalar> softplus_stable(Var<Scalar> x);

// Per-sample mean (or sum) of squares over all non-batch axes -> [N].
template <typename Scalar>
Var<Scalar> square_mean(Var<Scalar> x);
template <typename Scalar>
Var<Scalar> square_sum(Var<Scalar> x);

// x / sqrt(mean(x^2) + eps) per sample, no mean subtraction.
template <typename Scalar>
Var<Scalar> layernorm_reduced(Var<Scalar> x, Scalar eps = Scalar(1e-8));

// Per-channel normalization over axis 1 of x[N x C] or x[N x C x H x W].
// Mutates `state` when mode.update_running is set.
template <typename Scalar>
Var<Scalar> batchnorm(Var<Scalar> x, Var<Scalar> gamma, Var<Scalar> beta, BatchNormState<Scalar>& state,
                      BatchNormMode mode);

template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> x, Shape shape);
template <typename Scalar>
Var<Scalar> flatten(Var<Scalar> x);

// Rows [begin, begin + count) along axis 0.
template <typename Scalar>
Var<Scalar> slice_batch(Var<Scalar> x, Index begin, Index count);

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar>
Var<Scalar> scale(Var<Scalar> x, Scalar factor);
template <typename Scalar>
Var<Scalar> add_scalar(Var<Scalar> x, Scalar c);
template <typename Scalar>
Var<Scalar> mean(Var<Scalar> x);
template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x);
// sum(x .* weights) -> scalar.
template <typename Scalar>
Var<Scalar> weighted_sum(Var<Scalar> x, const Tensor<Scalar>& weights);

// Appends a label channel to images[N x C x H x W]: channel C of sample i is
// row labels[i] of embedding[K x (H*W)].
template <typename Scalar>
Var<Scalar> label_concat(Var<Scalar> images, std::span<const int> labels, Var<Scalar> embedding);

// Mean negative log-softmax of the true class, logits[N x K].
template <typename Scalar>
Var<Scalar> cross_entropy(Var<Scalar> logits, std::span<const int> labels);

// Scalar softplus with the same linear branch.
template <typename Scalar>
Scalar softplus_value(Scalar x);
template <typename Scalar>
Scalar sigmoid_value(Scalar x);

inline constexpr double kSoftplusThreshold = 20.0;

}  // namespace ff
