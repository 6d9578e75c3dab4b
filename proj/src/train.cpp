#include "ff/train.hpp"

#include "ff/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ff {

std::string to_string(OluMode mode) {
  switch (mode) {
    case OluMode::Off:
      return "off";
    case OluMode::Approach1:
      return "approach1";
    case OluMode::Approach2:
      return "approach2";
  }
  return "off";
}

OluMode olu_mode_from_string(const std::string& s) {
  if (s == "off") return OluMode::Off;
  if (s == "approach1") return OluMode::Approach1;
  if (s == "approach2") return OluMode::Approach2;
  throw UsageError("unknown olu mode '" + s + "' (expected off | approach1 | approach2)");
}

std::string to_string(OluParity parity) {
  return parity == OluParity::Epoch ? "epoch" : "step";
}

OluParity olu_parity_from_string(const std::string& s) {
  if (s == "epoch") return OluParity::Epoch;
  if (s == "step") return OluParity::Step;
  throw UsageError("unknown olu parity '" + s + "' (expected epoch | step)");
}

double lr_at(const LrSchedule& schedule, int epoch) {
  if (schedule.empty()) throw UsageError("empty learning-rate schedule");
  if (epoch < 0) throw UsageError("epoch must be >= 0");
  double lr = schedule.front().lr;
  for (const auto& p : schedule) {
    if (p.epoch <= epoch) lr = p.lr;
  }
  return lr;
}

void validate_schedule(const LrSchedule& schedule) {
  if (schedule.empty()) throw UsageError("train.schedule must not be empty");
  if (schedule.front().epoch != 0) throw UsageError("train.schedule must start at epoch 0");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (!(schedule[i].lr > 0)) throw UsageError("train.schedule learning rates must be > 0");
    if (i > 0 && schedule[i].epoch <= schedule[i - 1].epoch) {
      throw UsageError("train.schedule epochs must be strictly increasing");
    }
  }
}

LrSchedule deep_schedule() { return {{0, 1e-3}, {200, 5e-4}, {400, 1e-4}}; }
LrSchedule shallow_schedule() { return {{0, 1e-3}, {150, 1e-4}}; }

void TrainConfig::validate() const {
  if (epochs < 0) throw UsageError("train.epochs must be >= 0");
  if (batch_size < 2 || batch_size % 2 != 0) throw UsageError("train.batch must be even and >= 2 (pos + neg)");
  if (max_steps_per_epoch < 0) throw UsageError("train.max_steps_per_epoch must be >= 0");
  validate_schedule(schedule);
  loss.validate();
  optimizer.validate();
}

Rng epoch_rng(std::uint64_t seed, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x46464646u};
  return Rng(seq);
}

std::vector<int> active_objectives(std::size_t depth, int parity) {
  std::vector<int> out;
  for (int j = parity; j < static_cast<int>(depth); j += 2) out.push_back(j);
  return out;
}

std::vector<int> objective_layers(int objective) {
  if (objective == 0) return {0};
  return {objective - 1, objective};
}

namespace {

std::vector<int> stacked_labels(const PosNegBatch& batch) {
  std::vector<int> labels = batch.true_labels;
  labels.insert(labels.end(), batch.neg_labels.begin(), batch.neg_labels.end());
  return labels;
}

Tensor<float> stacked_images(const PosNegBatch& batch) {
  Shape shape = batch.images.shape();
  shape[0] *= 2;
  Tensor<float> out(shape);
  const Index n = batch.images.size();
  std::copy_n(batch.images.data(), n, out.data());
  std::copy_n(batch.images.data(), n, out.data() + n);
  return out;
}

template <typename Scalar>
Var<Scalar> input_var(Tape<Scalar>& tape, const PosNegBatch& batch, LabelEmbedding<Scalar>& emb, bool train_embedding) {
  if (!train_embedding) return tape.constant(stacked_input(batch, emb));
  const auto labels = stacked_labels(batch);
  const Tensor<Scalar> images = stacked_images(batch).template cast<Scalar>();
  return label_concat(tape.constant(images), std::span<const int>(labels), tape.parameter(emb.matrix));
}

template <typename Scalar>
struct Objective {
  Var<Scalar> loss;
  Var<Scalar> g;  // [2B] goodness, pos half first
};

template <typename Scalar>
Objective<Scalar> objective(Var<Scalar> out, Index half, const TrainConfig& cfg) {
  auto g = goodness(out, cfg.reduction);
  auto loss = local_loss(slice_batch(g, 0, half), slice_batch(g, half, half), cfg.loss);
  return {loss, g};
}

template <typename Scalar>
void fill_stats(LayerStepStats& s, const Objective<Scalar>& o, Index half) {
  const auto& g = o.g.value().vec();
  s.loss = static_cast<double>(o.loss.value().item());
  s.g_pos_mean = static_cast<double>(g.head(half).mean());
  s.g_neg_mean = static_cast<double>(g.tail(half).mean());
}

template <typename Scalar>
double grad_l2(const LayerBlock<Scalar>& block, const Gradients<Scalar>& grads) {
  double sq = 0;
  for (const auto* p : block.parameters()) {
    auto it = grads.find(p);
    if (it != grads.end()) sq += static_cast<double>(it->second.vec().squaredNorm());
  }
  return std::sqrt(sq);
}

template <typename Scalar>
void check_finite(const LayerStepStats& s, const Tensor<Scalar>& activations, int layer, const Gradients<Scalar>& grads) {
  bool ok = std::isfinite(s.loss);
  for (const auto& [p, g] : grads) ok = ok && g.all_finite();
  if (ok) return;
  std::ostringstream os;
  os << "non-finite loss or gradient at layer " << layer << ": loss=" << s.loss << " g_pos_mean=" << s.g_pos_mean
     << " g_neg_mean=" << s.g_neg_mean << " max|activation|=" << activations.vec().cwiseAbs().maxCoeff();
  throw NonFiniteError(os.str());
}

template <typename Scalar>
void accumulate(Gradients<Scalar>& into, Gradients<Scalar>&& from) {
  for (auto& [p, g] : from) {
    auto it = into.find(p);
    if (it == into.end()) {
      into.emplace(p, std::move(g));
    } else {
      it->second.vec() += g.vec();
    }
  }
}

template <typename Scalar>
StepResult olu_approach1(Network<Scalar>& net, const PosNegBatch& batch, const TrainConfig& cfg,
                         Optimizer<Scalar>& opt, double lr, int parity) {
  const std::size_t depth = net.depth();
  const Index half = batch.size();
  const auto active = active_objectives(depth, parity);
  std::vector<char> trainable(depth, 0), group_start(depth, 0);
  for (int j : active) {
    for (int l : objective_layers(j)) trainable[l] = 1;
    group_start[objective_layers(j).front()] = 1;
  }
  const bool train_embedding = net.embedding.learned && !active.empty() && active.front() == 0;

  Tape<Scalar> tape;
  Var<Scalar> h = input_var(tape, batch, net.embedding, train_embedding);
  std::vector<Objective<Scalar>> objectives;
  for (std::size_t k = 0; k < depth; ++k) {
    if (k > 0 && (group_start[k] || !trainable[k])) h = tape.detach(h);
    h = block_forward(net.blocks[k], h, Mode::Train, trainable[k] != 0);
    objectives.push_back(objective(h, half, cfg));
  }
  Var<Scalar> total = objectives[static_cast<std::size_t>(active.front())].loss;
  for (std::size_t i = 1; i < active.size(); ++i) total = add(total, objectives[static_cast<std::size_t>(active[i])].loss);
  auto grads = tape.backward(total);

  StepResult res;
  res.layers.resize(depth);
  for (std::size_t k = 0; k < depth; ++k) {
    fill_stats(res.layers[k], objectives[k], half);
    res.layers[k].grad_l2 = grad_l2(net.blocks[k], grads);
    res.layers[k].updated = trainable[k] != 0;
    check_finite(res.layers[k], objectives[k].g.value(), static_cast<int>(k), grads);
  }
  for (auto& block : net.blocks) opt.apply(block.parameters(), grads, lr);
  if (train_embedding) {
    opt.apply({&net.embedding.matrix}, grads, lr);
    res.embedding_updated = true;
  }
  return res;
}

template <typename Scalar>
StepResult olu_approach2(Network<Scalar>& net, const PosNegBatch& batch, const TrainConfig& cfg,
                         Optimizer<Scalar>& opt, double lr) {
  const std::size_t depth = net.depth();
  const Index half = batch.size();

  // Shared forward: block inputs for every window, running statistics
  // updated once per step.
  Tape<Scalar> shared;
  std::vector<Var<Scalar>> inputs{input_var(shared, batch, net.embedding, false)};
  for (std::size_t k = 0; k + 1 < depth; ++k) inputs.push_back(block_forward(net.blocks[k], inputs.back(), Mode::Train));
  {
    // The deepest block still needs its running statistics updated.
    Tape<Scalar> last;
    block_forward(net.blocks[depth - 1], last.constant(inputs.back().value()), Mode::Train);
  }

  Gradients<Scalar> total;
  StepResult res;
  res.layers.resize(depth);
  for (std::size_t j = 0; j < depth; ++j) {
    const std::size_t first = j == 0 ? 0 : j - 1;
    const bool train_embedding = net.embedding.learned && j == 0;
    Tape<Scalar> tape;
    Var<Scalar> h = first == 0 ? input_var(tape, batch, net.embedding, train_embedding)
                               : tape.constant(inputs[first].value());
    for (std::size_t k = first; k <= j; ++k) h = block_forward_frozen_stats(net.blocks[k], h, true);
    const auto obj = objective(h, half, cfg);
    auto grads = tape.backward(obj.loss);
    fill_stats(res.layers[j], obj, half);
    check_finite(res.layers[j], obj.g.value(), static_cast<int>(j), grads);
    accumulate(total, std::move(grads));
  }
  for (std::size_t k = 0; k < depth; ++k) {
    res.layers[k].grad_l2 = grad_l2(net.blocks[k], total);
    res.layers[k].updated = true;
  }
  for (auto& block : net.blocks) opt.apply(block.parameters(), total, lr);
  if (net.embedding.learned) {
    opt.apply({&net.embedding.matrix}, total, lr);
    res.embedding_updated = true;
  }
  return res;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> stacked_input(const PosNegBatch& batch, const LabelEmbedding<Scalar>& emb) {
  const auto labels = stacked_labels(batch);
  return with_label_channel(stacked_images(batch), std::span<const int>(labels), emb);
}

template <typename Scalar>
StepResult train_step_greedy(Network<Scalar>& net, const PosNegBatch& batch, const TrainConfig& cfg,
                             Optimizer<Scalar>& opt, double lr) {
  const std::size_t depth = net.depth();
  const Index half = batch.size();
  const bool train_embedding = net.embedding.learned;
  StepResult res;
  res.layers.resize(depth);
  Tensor<Scalar> h;
  for (std::size_t k = 0; k < depth; ++k) {
    auto& block = net.blocks[k];
    Tape<Scalar> tape;
    Var<Scalar> x = k == 0 ? input_var(tape, batch, net.embedding, train_embedding) : tape.constant(std::move(h));
    const Var<Scalar> out = block_forward(block, x, Mode::Train, true);
    const auto obj = objective(out, half, cfg);
    auto grads = tape.backward(obj.loss);

    auto& s = res.layers[k];
    fill_stats(s, obj, half);
    s.grad_l2 = grad_l2(block, grads);
    s.updated = true;
    check_finite(s, out.value(), static_cast<int>(k), grads);

    opt.apply(block.parameters(), grads, lr);
    if (k == 0 && train_embedding) {
      opt.apply({&net.embedding.matrix}, grads, lr);
      res.embedding_updated = true;
    }
    if (k + 1 == depth) break;
    if (!cfg.feed_updated) {
      h = out.value();
      continue;
    }
    Tape<Scalar> again;
    const Var<Scalar> in = k == 0 ? again.constant(stacked_input(batch, net.embedding)) : again.constant(x.value());
    h = block_forward_frozen_stats(block, in).value();
  }
  return res;
}

template <typename Scalar>
StepResult train_step_olu(Network<Scalar>& net, const PosNegBatch& batch, const TrainConfig& cfg,
                          Optimizer<Scalar>& opt, double lr, int parity) {
  if (net.depth() < 2 || cfg.olu == OluMode::Off) return train_step_greedy(net, batch, cfg, opt, lr);
  if (cfg.olu == OluMode::Approach2) return olu_approach2(net, batch, cfg, opt, lr);
  return olu_approach1(net, batch, cfg, opt, lr, parity);
}

template <typename Scalar>
FitResult fit(Network<Scalar>& net, const Dataset& train, const TrainConfig& cfg, Optimizer<Scalar>& opt,
              MetricsLog& log, int start_epoch, const FitHooks& hooks) {
  cfg.validate();
  FitResult result;
  if (cfg.epochs == 0 || start_epoch >= cfg.epochs) return result;
  if (train.size() == 0) throw UsageError("training set is empty");
  if (train.image_shape() != net.config.image_shape) {
    throw DimensionError("training images " + to_string(train.image_shape()) + " do not match network input " +
                         to_string(net.config.image_shape));
  }
  bool use_olu = cfg.olu != OluMode::Off;
  if (use_olu && net.depth() < 2) {
    result.warnings.push_back("overlapping local updates need at least 2 layers; training greedily");
    use_olu = false;
  }

  const Index n = train.size();
  const Index per_step = cfg.batch_size / 2;
  Index steps = (n + per_step - 1) / per_step;
  if (cfg.max_steps_per_epoch > 0) steps = std::min(steps, cfg.max_steps_per_epoch);
  std::int64_t global_step = static_cast<std::int64_t>(start_epoch) * steps;

  std::vector<Index> perm(static_cast<std::size_t>(n));
  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    Rng rng = epoch_rng(cfg.seed, epoch);
    std::iota(perm.begin(), perm.end(), Index(0));
    std::shuffle(perm.begin(), perm.end(), rng);
    const double lr = lr_at(cfg.schedule, epoch);
    std::vector<double> degenerate(net.depth(), 0.0);

    for (Index s = 0; s < steps; ++s) {
      const Index begin = s * per_step, count = std::min(per_step, n - begin);
      const std::span<const Index> idx(perm.data() + begin, static_cast<std::size_t>(count));
      PosNegBatch batch = make_pos_neg_batch(train, idx, net.embedding, rng);
      if (cfg.augment.enabled) batch.images = augment(batch.images, rng, cfg.augment, train.background);

      StepResult res;
      try {
        if (use_olu) {
          const int parity = cfg.olu_parity == OluParity::Epoch ? epoch % 2 : static_cast<int>(global_step % 2);
          res = train_step_olu(net, batch, cfg, opt, lr, parity);
        } else {
          res = train_step_greedy(net, batch, cfg, opt, lr);
        }
      } catch (const NonFiniteError& e) {
        throw NonFiniteError("epoch " + std::to_string(epoch) + ", step " + std::to_string(s) + ": " + e.what());
      }
      for (std::size_t k = 0; k < res.layers.size(); ++k) {
        const auto& l = res.layers[k];
        record_step(log, epoch, s, static_cast<int>(k), make_step_metrics(l.loss, l.g_pos_mean, l.g_neg_mean, l.grad_l2));
        degenerate[k] += static_cast<double>(net.blocks[k].degenerate_samples);
      }
      ++global_step;
      ++result.steps;
    }
    for (std::size_t k = 0; k < degenerate.size(); ++k) log.append(epoch, -1, static_cast<int>(k), "degenerate_samples", degenerate[k]);
    ++result.epochs_run;
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch);
  }
  return result;
}

#define FF_INSTANTIATE(S)                                                                                        \
  template Tensor<S> stacked_input<S>(const PosNegBatch&, const LabelEmbedding<S>&);                             \
  template StepResult train_step_greedy<S>(Network<S>&, const PosNegBatch&, const TrainConfig&, Optimizer<S>&,   \
                                           double);                                                              \
  template StepResult train_step_olu<S>(Network<S>&, const PosNegBatch&, const TrainConfig&, Optimizer<S>&,      \
                                        double, int);                                                            \
  template FitResult fit<S>(Network<S>&, const Dataset&, const TrainConfig&, Optimizer<S>&, MetricsLog&, int,     \
                            const FitHooks&);

FF_INSTANTIATE(float)
FF_INSTANTIATE(double)

#undef FF_INSTANTIATE

}  // namespace ff
