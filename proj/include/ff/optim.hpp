#pragma once

#include "ff/autodiff.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace ff {

enum class OptimizerKind { Adam, Sgd };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;  // sgd only

  void validate() const;
};

// First/second moments of one parameter. SGD keeps its velocity in `m`.
template <typename Scalar>
struct MomentState {
  Tensor<Scalar> m;
  Tensor<Scalar> v;
  std::int64_t step = 0;
};

// p <- p - lr * m_hat / (sqrt(v_hat) + eps), bias-corrected with the
// parameter's own step count.
template <typename Scalar>
void adam_step(Parameter<Scalar>& p, const Tensor<Scalar>& grad, MomentState<Scalar>& state, double lr,
               const OptimizerConfig& cfg);

// v <- momentum * v + g; p <- p - lr * v
template <typename Scalar>
void sgd_step(Parameter<Scalar>& p, const Tensor<Scalar>& grad, MomentState<Scalar>& state, double lr,
              const OptimizerConfig& cfg);

// Per-parameter state keyed by parameter name so that it survives moves of
// the owning network and can be checkpointed.
template <typename Scalar>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  void step(Parameter<Scalar>& p, const Tensor<Scalar>& grad, double lr);
  // Applies every entry of `grads`; parameters are looked up in `params`.
  void apply(const std::vector<Parameter<Scalar>*>& params, const Gradients<Scalar>& grads, double lr);

  const OptimizerConfig& config() const { return cfg_; }
  const std::map<std::string, MomentState<Scalar>>& state() const { return state_; }

  // "opt.<param>.m", "opt.<param>.v", "opt.<param>.step" tensors.
  std::vector<std::pair<std::string, Tensor<float>>> export_state() const;
  void import_state(const std::vector<std::pair<std::string, Tensor<float>>>& tensors);

 private:
  OptimizerConfig cfg_;
  std::map<std::string, MomentState<Scalar>> state_;
};

}  // namespace ff
