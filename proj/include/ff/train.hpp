#pragma once

#include "ff/data.hpp"
#include "ff/goodness.hpp"
#include "ff/layers.hpp"
#include "ff/metrics.hpp"
#include "ff/optim.hpp"

#include <functional>
#include <string>
#include <vector>

namespace ff {

enum class OluMode { Off, Approach1, Approach2 };
// When approach 1 flips the active objective parity.
enum class OluParity { Epoch, Step };

std::string to_string(OluMode mode);
OluMode olu_mode_from_string(const std::string& s);
std::string to_string(OluParity parity);
OluParity olu_parity_from_string(const std::string& s);

struct LrPoint {
  int epoch = 0;
  double lr = 1e-3;
};
using LrSchedule = std::vector<LrPoint>;

// Piecewise constant: the last entry whose start epoch is <= epoch.
double lr_at(const LrSchedule& schedule, int epoch);
void validate_schedule(const LrSchedule& schedule);
LrSchedule deep_schedule();     // 1e-3, 5e-4 from 200, 1e-4 from 400
LrSchedule shallow_schedule();  // 1e-3, 1e-4 from 150

struct TrainConfig {
  int epochs = 10;
  Index batch_size = 1024;  // positive + negative samples per step
  LossConfig loss;
  GoodnessReduction reduction = GoodnessReduction::Mean;
  OluMode olu = OluMode::Off;
  OluParity olu_parity = OluParity::Epoch;
  LrSchedule schedule{{0, 1e-3}};
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;
  // Greedy mode: feed the updated layer's outputs to the next layer (true) or
  // the activations computed before the update (false).
  bool feed_updated = true;
  AugmentConfig augment{false};
  Index max_steps_per_epoch = 0;  // 0 = whole epoch

  void validate() const;
};

struct LayerStepStats {
  double loss = 0;
  double g_pos_mean = 0;
  double g_neg_mean = 0;
  double grad_l2 = 0;  // over this layer's block parameters, before the update
  bool updated = false;
};

// Indexed by layer; for OLU the loss is objective j, measured at layer j.
struct StepResult {
  std::vector<LayerStepStats> layers;
  bool embedding_updated = false;
};

// The pos and neg halves are stacked into one batch of 2B so that batch
// statistics are shared by both halves.
template <typename Scalar>
Tensor<Scalar> stacked_input(const PosNegBatch& batch, const LabelEmbedding<Scalar>& emb);

template <typename Scalar>
StepResult train_step_greedy(Network<Scalar>& net, const PosNegBatch& batch, const TrainConfig& cfg,
                             Optimizer<Scalar>& opt, double lr);

// Objectives with index parity `parity` (approach 1) or all objectives
// (approach 2). Objective j updates layers {j-1, j}; objective 0 updates
// layer 0 and a learned label embedding.
template <typename Scalar>
StepResult train_step_olu(Network<Scalar>& net, const PosNegBatch& batch, const TrainConfig& cfg,
                          Optimizer<Scalar>& opt, double lr, int parity);

// Objectives that are optimized for a given parity in approach 1.
std::vector<int> active_objectives(std::size_t depth, int parity);
// Layers written by objective j.
std::vector<int> objective_layers(int objective);

struct FitResult {
  int epochs_run = 0;
  std::int64_t steps = 0;
  std::vector<std::string> warnings;
};

struct FitHooks {
  // Called after every completed epoch (0-based index).
  std::function<void(int epoch)> on_epoch_end;
};

// Full loop from `start_epoch` to cfg.epochs. Per epoch: seeded shuffle,
// pos/neg batches, optional augmentation, greedy or OLU step, metrics rows.
template <typename Scalar>
FitResult fit(Network<Scalar>& net, const Dataset& train, const TrainConfig& cfg, Optimizer<Scalar>& opt,
              MetricsLog& log, int start_epoch = 0, const FitHooks& hooks = {});

// Deterministic per-epoch generator.
Rng epoch_rng(std::uint64_t seed, int epoch);

}  // namespace ff
