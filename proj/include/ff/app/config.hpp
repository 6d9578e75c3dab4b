#pragma once

#include "ff/eval.hpp"
#include "ff/layers.hpp"
#include "ff/train.hpp"

#include <json.hpp>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ff::app {

// Invalid configuration; the message carries "<source>:<line>:<col>" when
// the offending key can be located in the document.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetSection {
  std::string name = "mnist";
  std::string root;          // empty: FF_DATA_ROOT, then ./data
  Index train_subset = 0;    // 0 = full split
  Index test_subset = 0;
  Index image_size = 32;
};

struct NetworkSection {
  std::string preset = "fcn";
  NormKind norm = NormKind::BatchNorm;
  Index width = 0;  // fcn only; 0 keeps the preset value
  int depth = 0;
  std::optional<std::vector<BlockConfig>> blocks;  // custom stack, replaces the preset
};

struct RunConfig {
  DatasetSection dataset;
  NetworkSection network;
  TrainConfig train;
  EvalConfig eval;
  int k_last = 1;
  int checkpoint_every = 0;  // epochs; 0 = final checkpoint only
  int eval_every = 0;        // epochs between test-set evaluations; 0 = final only
  std::vector<int> stability_epochs{100, 300, 500};
  std::string output = "output";
};

nlohmann::json default_config_json();
// Canonical form with every field present.
nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& doc, const std::string& source = "<config>", const std::string& text = "");

// "a.b.c=value"; value is parsed as JSON, falling back to a plain string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>",
                           const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {});

std::uint64_t run_digest(const RunConfig& cfg);
std::string resolve_data_root(const RunConfig& cfg, const std::string& cli_root = "");
NetworkConfig build_network_config(const RunConfig& cfg, const Shape& image_shape, int num_classes);

}  // namespace ff::app
