#include "ff/goodness.hpp"

#include "ff/errors.hpp"

namespace ff {

std::string to_string(LossKind kind) {
  return kind == LossKind::Ftl ? "ftl" : "symba";
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "ftl") return LossKind::Ftl;
  if (s == "symba") return LossKind::Symba;
  throw UsageError("unknown loss '" + s + "' (expected ftl | symba)");
}

void LossConfig::validate() const {
  if (!(tau > 0)) throw UsageError("loss.tau must be > 0");
  if (!(alpha > 0)) throw UsageError("loss.alpha must be > 0");
}

template <typename Scalar>
Var<Scalar> goodness(Var<Scalar> activations, GoodnessReduction reduction) {
  return reduction == GoodnessReduction::Mean ? square_mean(activations) : square_sum(activations);
}

template <typename Scalar>
Var<Scalar> ftl_loss(Var<Scalar> g_pos, Var<Scalar> g_neg, Scalar tau) {
  auto pos_term = softplus_stable(add_scalar(scale(g_pos, Scalar(-1)), tau));
  auto neg_term = softplus_stable(add_scalar(g_neg, -tau));
  return mean(add(pos_term, neg_term));
}

template <typename Scalar>
Var<Scalar> symba_loss(Var<Scalar> g_pos, Var<Scalar> g_neg, Scalar alpha) {
  return mean(softplus_stable(scale(sub(g_pos, g_neg), -alpha)));
}

template <typename Scalar>
Var<Scalar> local_loss(Var<Scalar> g_pos, Var<Scalar> g_neg, const LossConfig& cfg) {
  if (cfg.kind == LossKind::Ftl) return ftl_loss(g_pos, g_neg, static_cast<Scalar>(cfg.tau));
  return symba_loss(g_pos, g_neg, static_cast<Scalar>(cfg.alpha));
}

namespace {

template <typename Scalar>
void check_pairs(const GoodnessBatch<Scalar>& b) {
  if (b.g_pos.size() != b.g_neg.size()) throw DimensionError("goodness batch halves differ in length");
}

}  // namespace

template <typename Scalar>
Scalar ftl_loss(const GoodnessBatch<Scalar>& b, Scalar tau) {
  check_pairs(b);
  Scalar total = 0;
  for (Index i = 0; i < b.g_pos.size(); ++i) {
    total += softplus_value(tau - b.g_pos[i]) + softplus_value(b.g_neg[i] - tau);
  }
  return total / Scalar(b.g_pos.size());
}

template <typename Scalar>
Scalar symba_loss(const GoodnessBatch<Scalar>& b, Scalar alpha) {
  check_pairs(b);
  Scalar total = 0;
  for (Index i = 0; i < b.g_pos.size(); ++i) total += softplus_value(-alpha * (b.g_pos[i] - b.g_neg[i]));
  return total / Scalar(b.g_pos.size());
}

GradientBalance ftl_gradient_balance(double delta_pos, double delta_neg, double /*tau*/) {
  return {sigmoid_value(delta_neg), sigmoid_value(delta_pos)};
}

#define FF_INSTANTIATE(S)                                                         \
  template Var<S> goodness<S>(Var<S>, GoodnessReduction);                         \
  template Var<S> ftl_loss<S>(Var<S>, Var<S>, S);                                 \
  template Var<S> symba_loss<S>(Var<S>, Var<S>, S);                               \
  template Var<S> local_loss<S>(Var<S>, Var<S>, const LossConfig&);               \
  template S ftl_loss<S>(const GoodnessBatch<S>&, S);                             \
  template S symba_loss<S>(const GoodnessBatch<S>&, S);

FF_INSTANTIATE(float)
FF_INSTANTIATE(double)

#undef FF_INSTANTIATE

}  // namespace ff
