#include "ff/app/commands.hpp"

#include "ff/checkpoint.hpp"
#include "ff/errors.hpp"
#include "ff/eval.hpp"
#include "ff/train.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace ff::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os << text;
}

std::ostream& null_stream() {
  static std::ostream os(nullptr);
  return os;
}

Dataset take(const Dataset& d, Index count) { return count > 0 && count < d.size() ? head(d, count) : d; }

void record_evaluation(MetricsLog& log, int epoch, const json& report) {
  const auto& layers = report.at("layerwise_accuracy");
  for (std::size_t l = 0; l < layers.size(); ++l) log.append(epoch, -1, static_cast<int>(l), "layer_accuracy", layers[l]);
  log.append(epoch, -1, -1, "test_accuracy", report.at("test_accuracy").get<double>());
  if (report.contains("head_accuracy")) log.append(epoch, -1, -1, "head_accuracy", report.at("head_accuracy").get<double>());
}

json stability_json(const std::vector<LayerStability>& s) {
  json out = json::array();
  for (const auto& l : s) out.push_back({{"max_weight", l.max_weight}, {"max_goodness", l.max_goodness}});
  return out;
}

std::vector<int> eval_layers(const RunConfig& cfg, std::size_t depth) {
  if (!cfg.eval.aggregate_layers.empty()) return cfg.eval.aggregate_layers;
  return {static_cast<int>(depth) - 1};
}

}  // namespace

Data load_data(const RunConfig& cfg, const std::string& data_root) {
  auto [train, test] = load_dataset(cfg.dataset.name, data_root);
  prepare_datasets(train, test, cfg.dataset.image_size);
  return {take(train, cfg.dataset.train_subset), take(test, cfg.dataset.test_subset)};
}

std::string timestamp_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return os.str();
}

std::string make_run_dir(const std::string& parent, const RunConfig& cfg) {
  const std::string base = timestamp_now() + "-" + hex_digest(run_digest(cfg));
  fs::path dir = fs::path(parent) / base;
  for (int i = 2; fs::exists(dir); ++i) dir = fs::path(parent) / (base + "-" + std::to_string(i));
  fs::create_directories(dir);
  return dir.string();
}

json evaluate_network(Network<float>& net, const RunConfig& cfg, const Data& data, const std::string& predictions_csv) {
  cfg.eval.validate(net.depth());
  const ScoreSweep sweep = goodness_scores(net, data.test.images, cfg.eval.batch_size);
  const auto layers = eval_layers(cfg, net.depth());
  RowMatrix<double> scores;
  const auto predicted = predict_from_scores(sweep, layers, &scores);
  const int k_last = std::min<int>(cfg.k_last, static_cast<int>(net.depth()));

  json report;
  report["test_accuracy"] = accuracy(predicted, data.test.labels);
  report["eval_layers"] = layers;
  report["layerwise_accuracy"] = layerwise_accuracy(sweep, data.test.labels);
  report["k_last"] = k_last;
  report["ensemble_accuracy"] = accuracy(predict_from_scores(sweep, last_layers(net.depth(), k_last)), data.test.labels);
  report["forward_passes"] = sweep.forward_passes;
  if (cfg.eval.strategy == EvalStrategy::Feature) {
    auto head = train_feature_head(net, data.train, cfg.eval.head, cfg.eval.eval_label);
    report["head_accuracy"] = accuracy(classify_features(net, head, data.test.images, cfg.eval.head.seed), data.test.labels);
    report["eval_label"] = to_string(cfg.eval.eval_label);
  }
  if (!predictions_csv.empty()) write_predictions_csv(predictions_csv, data.test.labels, predicted, scores);
  return report;
}

RunOutcome run_training(const RunConfig& cfg, const TrainOptions& opts) {
  const std::string root = resolve_data_root(cfg, opts.data_root);
  return run_training(cfg, load_data(cfg, root), opts);
}

RunOutcome run_training(const RunConfig& cfg, const Data& data, const TrainOptions& opts) {
  std::ostream& log_out = opts.log ? *opts.log : null_stream();
  const NetworkConfig net_cfg = build_network_config(cfg, data.train.image_shape(), data.train.num_classes);
  const bool learned_embedding = cfg.train.olu != OluMode::Off;
  Network<float> net(net_cfg, learned_embedding, cfg.train.seed);
  Optimizer<float> opt(cfg.train.optimizer);
  int start_epoch = 0;
  if (!opts.resume.empty()) {
    LoadedCheckpoint ck = load_checkpoint(opts.resume);
    if (ck.digest != config_digest(net_cfg)) {
      throw CheckpointError("checkpoint '" + opts.resume + "' was written for a different network (digest " +
                            hex_digest(ck.digest) + ", config gives " + hex_digest(config_digest(net_cfg)) + ")");
    }
    net = std::move(ck.net);
    opt.import_state(ck.extras.tensors);
    start_epoch = static_cast<int>(ck.extras.epoch);
  }

  RunOutcome outcome;
  outcome.run_dir = !opts.run_dir.empty() ? opts.run_dir : make_run_dir(opts.output.empty() ? cfg.output : opts.output, cfg);
  fs::create_directories(outcome.run_dir);
  const fs::path dir(outcome.run_dir);
  MetricsLog& log = outcome.metrics;
  log.meta = {hex_digest(run_digest(cfg)), cfg.train.seed, timestamp_now()};
  write_text(dir / "config.json", to_json(cfg).dump(2) + "\n");

  log_out << "run directory: " << outcome.run_dir << "\n"
          << "network: " << net_cfg.preset << ", " << net.depth() << " blocks, " << net.parameter_count()
          << " parameters\n"
          << "data: " << data.train.size() << " train / " << data.test.size() << " test samples\n";

  std::vector<LayerStability> last_stability;
  const auto checkpoint_extras = [&](int epochs_done) {
    CheckpointExtras extras;
    extras.epoch = epochs_done;
    extras.tensors = opt.export_state();
    return extras;
  };
  FitHooks hooks;
  hooks.on_epoch_end = [&](int epoch) {
    const int done = epoch + 1;
    const bool milestone = std::find(cfg.stability_epochs.begin(), cfg.stability_epochs.end(), done) != cfg.stability_epochs.end();
    if (milestone || done == cfg.train.epochs) {
      last_stability = snapshot_stability(net, data.test, cfg.eval.batch_size);
      for (std::size_t l = 0; l < last_stability.size(); ++l) {
        log.append(done, -1, static_cast<int>(l), "max_weight", last_stability[l].max_weight);
        log.append(done, -1, static_cast<int>(l), "max_goodness", last_stability[l].max_goodness);
      }
    }
    if (cfg.eval_every > 0 && done % cfg.eval_every == 0 && done != cfg.train.epochs) {
      Data eval_data{Dataset{}, data.test};
      RunConfig goodness_only = cfg;
      goodness_only.eval.strategy = EvalStrategy::Goodness;
      record_evaluation(log, done, evaluate_network(net, goodness_only, eval_data));
    }
    if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) {
      save_checkpoint(net, (dir / ("checkpoint_e" + std::to_string(done) + ".ffc")).string(), checkpoint_extras(done));
    }
    log_out << "epoch " << done << "/" << cfg.train.epochs << " done\n" << std::flush;
  };

  FitResult fit_result;
  try {
    fit_result = fit(net, data.train, cfg.train, opt, log, start_epoch, hooks);
  } catch (const NonFiniteError&) {
    export_csv(log, (dir / "metrics.csv").string());
    throw;
  }
  for (const auto& w : fit_result.warnings) log_out << "warning: " << w << "\n";

  json report = evaluate_network(net, cfg, data, (dir / "predictions.csv").string());
  record_evaluation(log, cfg.train.epochs, report);
  if (last_stability.empty()) last_stability = snapshot_stability(net, data.test, cfg.eval.batch_size);

  save_checkpoint(net, (dir / "checkpoint.ffc").string(), checkpoint_extras(cfg.train.epochs));
  export_csv(log, (dir / "metrics.csv").string());
  for (const char* metric : {"loss", "separation", "g_pos_mean", "g_neg_mean"}) {
    render_svg(log, metric, true, (dir / (std::string(metric) + ".svg")).string());
  }
  render_svg(log, "grad_l2", true, (dir / "grad_l2.svg").string(), true);

  json summary;
  summary["config_digest"] = hex_digest(run_digest(cfg));
  summary["network_digest"] = hex_digest(config_digest(net_cfg));
  summary["dataset"] = cfg.dataset.name;
  summary["train_samples"] = data.train.size();
  summary["test_samples"] = data.test.size();
  summary["network"] = net_cfg.preset;
  summary["parameter_count"] = net.parameter_count();
  summary["seed"] = cfg.train.seed;
  summary["epochs"] = cfg.train.epochs;
  summary["steps"] = fit_result.steps;
  summary["loss"] = to_string(cfg.train.loss.kind);
  summary["norm"] = to_string(cfg.network.norm);
  summary["olu"] = to_string(cfg.train.olu);
  for (const auto& [k, v] : report.items()) summary[k] = v;
  summary["stability"] = stability_json(last_stability);
  summary["degenerate_rows"] = log.degenerate_rows();
  summary["metric_rows"] = log.size();
  summary["warnings"] = fit_result.warnings;
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  outcome.summary = std::move(summary);

  log_out << "test accuracy (layers";
  for (int l : report["eval_layers"]) log_out << " " << l;
  log_out << "): " << report["test_accuracy"].get<double>() << "\n";
  return outcome;
}

int report_exception(std::ostream& err) {
  try {
    throw;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DatasetMissingError& e) {
    err << "dataset missing: " << e.what() << "\n";
    return kExitDataset;
  } catch (const NonFiniteError& e) {
    err << "training aborted: " << e.what() << "\n";
    return kExitNonFinite;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DimensionError& e) {
    err << "configuration does not compose: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides, const TrainOptions& opts,
              std::ostream& out, std::ostream& err) {
  try {
    const RunConfig cfg = config_path.empty() ? parse_run_config("{}", "<defaults>", overrides)
                                              : load_run_config(config_path, overrides);
    TrainOptions o = opts;
    if (!o.log) o.log = &out;
    const RunOutcome r = run_training(cfg, o);
    out << "wrote " << r.run_dir << "/{checkpoint.ffc, metrics.csv, summary.json}\n";
    return kExitOk;
  } catch (...) {
    return report_exception(err);
  }
}

int cmd_eval(const EvalOptions& opts, std::ostream& out, std::ostream& err) {
  try {
    LoadedCheckpoint ck = load_checkpoint(opts.checkpoint);
    const fs::path beside = fs::path(opts.checkpoint).parent_path();
    std::string config_path = opts.config;
    if (config_path.empty() && fs::exists(beside / "config.json")) config_path = (beside / "config.json").string();
    RunConfig cfg;
    if (!config_path.empty()) {
      cfg = load_run_config(config_path, opts.overrides);
    } else {
      json doc = default_config_json();
      for (const auto& o : opts.overrides) apply_override(doc, o);
      cfg = run_config_from_json(doc, "<overrides>");
    }
    const Data data = load_data(cfg, resolve_data_root(cfg, opts.data_root));
    const NetworkConfig expected = build_network_config(cfg, data.train.image_shape(), data.train.num_classes);
    if (network_shapes(expected) != network_shapes(ck.net.config) || expected.blocks.size() != ck.net.config.blocks.size()) {
      std::string msg = "checkpoint network does not match the config: checkpoint layers";
      for (const auto& s : network_shapes(ck.net.config)) msg += " " + to_string(s);
      msg += ", config layers";
      for (const auto& s : network_shapes(expected)) msg += " " + to_string(s);
      throw CheckpointError(msg);
    }
    const std::string predictions =
        !opts.predictions.empty() ? opts.predictions : (beside / "predictions.csv").string();
    const json report = evaluate_network(ck.net, cfg, data, predictions);
    out << "test accuracy: " << std::setprecision(6) << report["test_accuracy"].get<double>() << "\n";
    out << "ensemble accuracy (last " << report["k_last"].get<int>() << "): " << report["ensemble_accuracy"].get<double>()
        << "\n";
    if (report.contains("head_accuracy")) out << "feature head accuracy: " << report["head_accuracy"].get<double>() << "\n";
    if (opts.layerwise) {
      out << "layerwise accuracy:";
      for (const auto& a : report["layerwise_accuracy"]) out << " " << a.get<double>();
      out << "\n";
    }
    out << "predictions: " << predictions << "\n";
    return kExitOk;
  } catch (...) {
    return report_exception(err);
  }
}

namespace {

Shape parse_image_shape(const std::string& s) {
  Shape out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    try {
      out.push_back(std::stol(part));
    } catch (const std::logic_error&) {
      throw UsageError("image shape must look like 3x32x32, got '" + s + "'");
    }
  }
  if (out.size() != 3) throw UsageError("image shape must look like 3x32x32, got '" + s + "'");
  return out;
}

void describe(const Network<float>& net, std::ostream& out) {
  const auto shapes = network_shapes(net.config);
  out << "network: " << net.config.preset << "\n"
      << "input: " << to_string(shapes.front()) << " (image " << to_string(net.config.image_shape)
      << " + label channel), classes: " << net.config.num_classes << "\n"
      << "digest: " << hex_digest(config_digest(net.config)) << "\n";
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    const auto& b = net.blocks[i];
    out << "  block " << i << ": " << to_string(b.config.kind) << " " << to_string(b.config.norm) << " width "
        << b.config.width << (b.config.pool ? " +maxpool" : "") << "  " << to_string(shapes[i]) << " -> "
        << to_string(shapes[i + 1]) << "  params " << b.parameter_count() << "\n";
  }
  out << "total parameters: " << net.parameter_count() << "\n";
}

}  // namespace

int cmd_inspect(const InspectOptions& opts, std::ostream& out, std::ostream& err) {
  try {
    if (!opts.checkpoint.empty()) {
      const LoadedCheckpoint ck = load_checkpoint(opts.checkpoint);
      describe(ck.net, out);
      out << "epochs trained: " << ck.extras.epoch << "\n"
          << "learned label embedding: " << (ck.net.embedding.learned ? "yes" : "no") << "\n"
          << "extra tensors: " << ck.extras.tensors.size() << "\n";
      return kExitOk;
    }
    const Shape image = parse_image_shape(opts.image_shape);
    NetworkConfig cfg;
    if (!opts.config.empty()) {
      cfg = build_network_config(load_run_config(opts.config, opts.overrides), image, opts.num_classes);
    } else {
      cfg = preset(opts.preset.empty() ? "fcn" : opts.preset, image, opts.num_classes);
    }
    describe(Network<float>(cfg, false, 0), out);
    return kExitOk;
  } catch (...) {
    return report_exception(err);
  }
}

}  // namespace ff::app
