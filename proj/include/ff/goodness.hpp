#pragma once

#include "ff/autodiff.hpp"

#include <string>
#include <utility>

namespace ff {

enum class GoodnessReduction { Mean, Sum };
enum class LossKind { Ftl, Symba };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& s);

struct LossConfig {
  LossKind kind = LossKind::Symba;
  double tau = 2.0;    // FTL threshold
  double alpha = 4.0;  // SymBa separation scale

  void validate() const;
};

// Paired per-sample goodness values of one batch; sample i of the positive
// half and sample i of the negative half share the same image.
template <typename Scalar>
struct GoodnessBatch {
  Tensor<Scalar> g_pos;
  Tensor<Scalar> g_neg;
};

// Per-sample goodness of block activations [B x ...] -> [B].
template <typename Scalar>
Var<Scalar> goodness(Var<Scalar> activations, GoodnessReduction reduction = GoodnessReduction::Mean);

// mean_i zeta(tau - g_pos_i) + zeta(g_neg_i - tau)
template <typename Scalar>
Var<Scalar> ftl_loss(Var<Scalar> g_pos, Var<Scalar> g_neg, Scalar tau);

// mean_i zeta(-alpha * (g_pos_i - g_neg_i)); decreases as the separation grows.
template <typename Scalar>
Var<Scalar> symba_loss(Var<Scalar> g_pos, Var<Scalar> g_neg, Scalar alpha);

template <typename Scalar>
Var<Scalar> local_loss(Var<Scalar> g_pos, Var<Scalar> g_neg, const LossConfig& cfg);

// Value-level versions over a GoodnessBatch.
template <typename Scalar>
Scalar ftl_loss(const GoodnessBatch<Scalar>& batch, Scalar tau);
template <typename Scalar>
Scalar symba_loss(const GoodnessBatch<Scalar>& batch, Scalar alpha);

// Derivative magnitudes of the FTL loss w.r.t. the negative separation (after
// a false positive) and the positive separation (after a false negative):
// sigmoid(delta_neg) and sigmoid(delta_pos). Equal iff delta_pos == delta_neg.
struct GradientBalance {
  double d_neg;
  double d_pos;
};
GradientBalance ftl_gradient_balance(double delta_pos, double delta_neg, double tau);

}  // namespace ff
