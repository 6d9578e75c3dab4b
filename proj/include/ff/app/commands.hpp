#pragma once

#include "ff/app/config.hpp"
#include "ff/data.hpp"
#include "ff/metrics.hpp"

#include <json.hpp>

#include <iosfwd>
#include <string>
#include <vector>

namespace ff::app {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,    // invalid config, bad usage, unknown figure id
  kExitDataset = 3,   // dataset files missing
  kExitNonFinite = 4, // training diverged
  kExitCheckpoint = 5 // unreadable or mismatched checkpoint
};

struct Data {
  Dataset train;
  Dataset test;
};

// Loads, pads, standardizes (train statistics) and subsets both splits.
Data load_data(const RunConfig& cfg, const std::string& data_root);

struct TrainOptions {
  std::string data_root;  // overrides config and environment
  std::string output;     // parent directory; overrides cfg.output
  std::string run_dir;    // exact directory; skips timestamp naming
  std::string resume;     // checkpoint to continue from
  std::ostream* log = nullptr;
};

struct RunOutcome {
  std::string run_dir;
  nlohmann::json summary;
  MetricsLog metrics;
};

// Trains, evaluates and writes checkpoint.ffc, metrics.csv, summary.json,
// config.json and charts into the run directory.
RunOutcome run_training(const RunConfig& cfg, const TrainOptions& opts);
// Same, on already prepared data.
RunOutcome run_training(const RunConfig& cfg, const Data& data, const TrainOptions& opts);

// Goodness (and, for the feature strategy, head) evaluation of a trained net.
nlohmann::json evaluate_network(Network<float>& net, const RunConfig& cfg, const Data& data,
                                const std::string& predictions_csv = "");

std::string timestamp_now();
std::string make_run_dir(const std::string& parent, const RunConfig& cfg);

struct EvalOptions {
  std::string checkpoint;
  std::string config;  // default: config.json beside the checkpoint
  std::vector<std::string> overrides;
  std::string data_root;
  std::string predictions;  // default: predictions.csv beside the checkpoint
  bool layerwise = false;
};

struct InspectOptions {
  std::string checkpoint;
  std::string config;
  std::vector<std::string> overrides;
  std::string preset;
  std::string image_shape = "3x32x32";
  int num_classes = 10;
};

// Each returns an exit code; errors are reported on `err`.
int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides, const TrainOptions& opts,
              std::ostream& out, std::ostream& err);
int cmd_eval(const EvalOptions& opts, std::ostream& out, std::ostream& err);
int cmd_inspect(const InspectOptions& opts, std::ostream& out, std::ostream& err);

// Maps the active exception to an exit code and prints it.
int report_exception(std::ostream& err);

}  // namespace ff::app
