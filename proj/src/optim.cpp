#include "ff/optim.hpp"

#include "ff/errors.hpp"

#include <cmath>

namespace ff {

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Adam ? "adam" : "sgd";
}

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd") return OptimizerKind::Sgd;
  throw UsageError("unknown optimizer '" + s + "' (expected adam | sgd)");
}

void OptimizerConfig::validate() const {
  if (!(beta1 >= 0 && beta1 < 1)) throw UsageError("optimizer.beta1 must be in [0, 1)");
  if (!(beta2 >= 0 && beta2 < 1)) throw UsageError("optimizer.beta2 must be in [0, 1)");
  if (!(eps > 0)) throw UsageError("optimizer.eps must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw UsageError("optimizer.momentum must be in [0, 1)");
}

namespace {

template <typename Scalar>
void init_state(const Parameter<Scalar>& p, const Tensor<Scalar>& grad, MomentState<Scalar>& s) {
  if (grad.shape() != p.value.shape()) {
    throw DimensionError("gradient shape " + to_string(grad.shape()) + " does not match parameter '" + p.name +
                         "' " + to_string(p.value.shape()));
  }
  if (s.m.empty()) {
    s.m = Tensor<Scalar>::zeros(p.value.shape());
    s.v = Tensor<Scalar>::zeros(p.value.shape());
  }
}

}  // namespace

template <typename Scalar>
void adam_step(Parameter<Scalar>& p, const Tensor<Scalar>& grad, MomentState<Scalar>& s, double lr,
               const OptimizerConfig& cfg) {
  init_state(p, grad, s);
  ++s.step;
  const Scalar b1 = static_cast<Scalar>(cfg.beta1), b2 = static_cast<Scalar>(cfg.beta2);
  s.m.vec() = b1 * s.m.vec() + (Scalar(1) - b1) * grad.vec();
  s.v.vec() = b2 * s.v.vec() + (Scalar(1) - b2) * grad.vec().cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
  const Scalar step_size = static_cast<Scalar>(lr / c1);
  const Scalar inv_c2 = static_cast<Scalar>(1.0 / std::sqrt(c2));
  const Scalar eps = static_cast<Scalar>(cfg.eps);
  p.value.vec().array() -= step_size * s.m.vec().array() / (s.v.vec().array().sqrt() * inv_c2 + eps);
}

template <typename Scalar>
void sgd_step(Parameter<Scalar>& p, const Tensor<Scalar>& grad, MomentState<Scalar>& s, double lr,
              const OptimizerConfig& cfg) {
  init_state(p, grad, s);
  ++s.step;
  s.m.vec() = static_cast<Scalar>(cfg.momentum) * s.m.vec() + grad.vec();
  p.value.vec() -= static_cast<Scalar>(lr) * s.m.vec();
}

template <typename Scalar>
void Optimizer<Scalar>::step(Parameter<Scalar>& p, const Tensor<Scalar>& grad, double lr) {
  auto& s = state_[p.name];
  if (cfg_.kind == OptimizerKind::Adam) {
    adam_step(p, grad, s, lr, cfg_);
  } else {
    sgd_step(p, grad, s, lr, cfg_);
  }
}

template <typename Scalar>
void Optimizer<Scalar>::apply(const std::vector<Parameter<Scalar>*>& params, const Gradients<Scalar>& grads,
                              double lr) {
  for (auto* p : params) {
    auto it = grads.find(p);
    if (it != grads.end()) step(*p, it->second, lr);
  }
}

template <typename Scalar>
std::vector<std::pair<std::string, Tensor<float>>> Optimizer<Scalar>::export_state() const {
  std::vector<std::pair<std::string, Tensor<float>>> out;
  for (const auto& [name, s] : state_) {
    out.emplace_back("opt." + name + ".m", s.m.template cast<float>());
    out.emplace_back("opt." + name + ".v", s.v.template cast<float>());
    out.emplace_back("opt." + name + ".step", Tensor<float>::scalar(static_cast<float>(s.step)));
  }
  return out;
}

template <typename Scalar>
void Optimizer<Scalar>::import_state(const std::vector<std::pair<std::string, Tensor<float>>>& tensors) {
  state_.clear();
  for (const auto& [key, t] : tensors) {
    if (key.rfind("opt.", 0) != 0) continue;
    const auto dot = key.rfind('.');
    const std::string name = key.substr(4, dot - 4), field = key.substr(dot + 1);
    auto& s = state_[name];
    if (field == "m") {
      s.m = t.template cast<Scalar>();
    } else if (field == "v") {
      s.v = t.template cast<Scalar>();
    } else if (field == "step") {
      s.step = static_cast<std::int64_t>(t.item());
    } else {
      throw FormatError("unknown optimizer state field '" + key + "'");
    }
  }
}

#define FF_INSTANTIATE(S)                                                                                   \
  template void adam_step<S>(Parameter<S>&, const Tensor<S>&, MomentState<S>&, double, const OptimizerConfig&); \
  template void sgd_step<S>(Parameter<S>&, const Tensor<S>&, MomentState<S>&, double, const OptimizerConfig&);  \
  template class Optimizer<S>;

FF_INSTANTIATE(float)
FF_INSTANTIATE(double)

#undef FF_INSTANTIATE

}  // namespace ff
