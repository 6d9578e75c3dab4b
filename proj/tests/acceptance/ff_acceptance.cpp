// One pass/fail line per acceptance criterion.
//
//   ff_acceptance --criterion N [--work DIR] [--data-root DIR]
//
// Exit 0 on pass, 1 on fail, 77 when the required dataset is absent.

#include "ff/app/commands.hpp"
#include "ff/app/config.hpp"
#include "ff/checkpoint.hpp"
#include "ff/data.hpp"
#include "ff/metrics.hpp"
#include "support/gradcheck.hpp"
#include "support/properties.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#ifndef FF_DEFAULT_DATA_ROOT
#define FF_DEFAULT_DATA_ROOT "data"
#endif

namespace fs = std::filesystem;
using namespace ff;
using namespace ff::app;
using nlohmann::json;

namespace {

constexpr int kSkip = 77;

struct Env {
  fs::path work;
  std::string data_root;
};

struct Verdict {
  int status = 1;  // 0 pass, 1 fail, 77 skip
  std::string detail;
};

Verdict pass_if(bool ok, std::string detail) { return {ok ? 0 : 1, std::move(detail)}; }

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << std::fixed << v;
  return os.str();
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

RunConfig config(const std::vector<std::string>& overrides) { return parse_run_config("{}", "<acceptance>", overrides); }

// Trains into work/name unless a finished run with the same config digest is
// already there.
json cached_run(const Env& env, const std::string& name, const RunConfig& cfg) {
  const fs::path dir = env.work / name;
  const fs::path summary = dir / "summary.json";
  if (fs::exists(summary)) {
    try {
      json s = json::parse(read_file(summary));
      if (s.value("config_digest", "") == hex_digest(run_digest(cfg))) {
        std::cerr << "reusing " << dir.string() << "\n";
        return s;
      }
    } catch (const json::exception&) {
    }
  }
  fs::remove_all(dir);
  TrainOptions opts;
  opts.data_root = env.data_root;
  opts.run_dir = dir.string();
  opts.log = &std::cerr;
  return run_training(cfg, opts).summary;
}

std::vector<std::string> fcn_trifecta_overrides() {
  return {"dataset.name=mnist",     "network.preset=fcn",    "network.width=1024", "network.depth=4",
          "network.norm=batchnorm", "loss.kind=symba",       "loss.alpha=4",       "train.olu=approach1",
          "train.epochs=10",        "train.batch=1024",      "eval.k_last=3",      "train.stability_epochs=[2,4,6,8]"};
}

json c4_run(const Env& env) { return cached_run(env, "c4", config(fcn_trifecta_overrides())); }

json c6_layernorm_run(const Env& env) {
  auto o = fcn_trifecta_overrides();
  o.push_back("network.norm=layernorm");
  o.push_back("train.olu=off");
  return cached_run(env, "c6_layernorm", config(o));
}

std::vector<double> layerwise(const json& summary) { return summary.at("layerwise_accuracy").get<std::vector<double>>(); }

std::string join(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : "/") + fmt(x);
  return s;
}

Verdict criterion1() {
  const auto checks = ff::testing::all_grad_checks();
  double worst = 0;
  std::string worst_name;
  for (const auto& c : checks) {
    if (c.rel_error >= worst) {
      worst = c.rel_error;
      worst_name = c.name;
    }
  }
  std::ostringstream os;
  os << checks.size() << " instances, worst relative error " << worst << " (" << worst_name << ")";
  return pass_if(checks.size() >= 20 && worst < 1e-6, os.str());
}

Verdict criterion2() {
  const auto r = ff::testing::ftl_symmetry();
  std::ostringstream os;
  os << "equal-case max diff " << r.worst_equal << ", unequal-case min diff " << r.smallest_unequal;
  if (!r.detail.empty()) os << "; " << r.detail;
  return pass_if(r.pass && r.worst_equal <= 1e-12 && r.smallest_unequal > 1e-6, os.str());
}

Verdict criterion3() {
  const auto r = ff::testing::scaling_identity();
  std::ostringstream os;
  os << "max deviation " << r.worst_equal << " over dense and conv, alpha in {0.5, 2, 10}";
  if (!r.detail.empty()) os << "; " << r.detail;
  return pass_if(r.pass && r.worst_equal < 1e-6, os.str());
}

Verdict criterion4(const Env& env) {
  const json s = c4_run(env);
  const double acc = s.at("test_accuracy").get<double>();
  return pass_if(acc >= 0.95, "last-layer test accuracy " + fmt(acc) + " (need >= 0.9500)");
}

Verdict criterion5(const Env& env) {
  if (!fs::exists(fs::path(env.data_root) / "cifar10" / "test_batch.bin")) {
    return {kSkip, "CIFAR-10 not found under " + env.data_root + "/cifar10"};
  }
  const std::vector<std::string> base{"dataset.name=cifar10", "dataset.train_subset=10000", "network.preset=cnn4",
                                      "train.epochs=20", "train.batch=256"};
  auto with = [&](std::vector<std::string> extra) {
    auto o = base;
    o.insert(o.end(), extra.begin(), extra.end());
    return config(o);
  };
  const double tff = cached_run(env, "c5_tff", with({"loss.kind=symba", "network.norm=batchnorm", "train.olu=approach1"}))
                         .at("test_accuracy")
                         .get<double>();
  const double symba =
      cached_run(env, "c5_symba", with({"loss.kind=symba", "network.norm=layernorm"})).at("test_accuracy").get<double>();
  const double ftl =
      cached_run(env, "c5_ftl", with({"loss.kind=ftl", "loss.tau=2", "network.norm=layernorm"})).at("test_accuracy").get<double>();
  const bool ok = tff - symba >= 0.03 && symba - ftl >= 0.03;
  return pass_if(ok, "TFF " + fmt(tff) + ", SymBa " + fmt(symba) + ", FTL " + fmt(ftl) + " (gaps >= 0.03 required)");
}

Verdict criterion6(const Env& env) {
  const auto bn = layerwise(c4_run(env));
  const auto ln = layerwise(c6_layernorm_run(env));
  const bool rising = bn.back() >= bn.front();
  // Drop of layer l below the best of the layers before it.
  double max_drop = -1e300, best = ln.front();
  for (std::size_t l = 1; l < ln.size(); ++l) {
    max_drop = std::max(max_drop, best - ln[l]);
    best = std::max(best, ln[l]);
  }
  const double best_intermediate = *std::max_element(ln.begin(), ln.end() - 1);
  const bool plateau = max_drop >= 0 && ln.back() <= best_intermediate + 0.01;
  return pass_if(rising && plateau, "batchnorm layers " + join(bn) + "; layernorm layers " + join(ln) + ", max drop " +
                                        fmt(max_drop) + ", final - best intermediate " + fmt(ln.back() - best_intermediate));
}

double deepest_grad_std(const Env& env, const std::string& norm, int seed) {
  const std::string name = "c7_" + norm + "_s" + std::to_string(seed);
  const auto cfg = config({"dataset.name=mnist", "dataset.train_subset=10000", "dataset.test_subset=1000",
                           "network.preset=fcn", "network.width=1024", "network.depth=4", "network.norm=" + norm,
                           "loss.kind=symba", "loss.alpha=4", "train.epochs=1", "train.batch=256",
                           "train.seed=" + std::to_string(seed)});
  const json s = cached_run(env, name, cfg);
  const int deepest = static_cast<int>(s.at("layerwise_accuracy").size()) - 1;
  std::vector<double> g;
  for (const auto& r : parse_csv(read_file(env.work / name / "metrics.csv"))) {
    if (r.metric == "grad_l2" && r.layer == deepest && r.step >= 0) g.push_back(r.value);
  }
  double mean = 0, var = 0;
  for (double v : g) mean += v;
  mean /= static_cast<double>(g.size());
  for (double v : g) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(g.size()));
}

Verdict criterion7(const Env& env) {
  bool ok = true;
  std::string detail;
  for (int seed : {0, 1, 2}) {
    const double bn = deepest_grad_std(env, "batchnorm", seed), ln = deepest_grad_std(env, "layernorm", seed);
    ok = ok && bn < ln;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + ": batchnorm " + fmt(bn, 6) +
              " vs layernorm " + fmt(ln, 6);
  }
  return pass_if(ok, "deepest-layer grad_l2 std " + detail);
}

Verdict criterion8(const Env& env) {
  const json s = c4_run(env);
  const double last = s.at("test_accuracy").get<double>(), ens = s.at("ensemble_accuracy").get<double>();
  return pass_if(std::abs(ens - last) <= 0.01, "last 3 layers " + fmt(ens) + " vs last layer " + fmt(last));
}

Verdict criterion9(const Env& env) {
  c4_run(env);
  double max_w = 0, max_g = 0;
  int snapshots = 0;
  for (const auto& r : parse_csv(read_file(env.work / "c4" / "metrics.csv"))) {
    if (r.metric == "max_weight") {
      max_w = std::max(max_w, r.value);
      ++snapshots;
    } else if (r.metric == "max_goodness") {
      max_g = std::max(max_g, r.value);
    }
  }
  return pass_if(snapshots > 0 && max_w < 10 && max_g < 1e4, std::to_string(snapshots) + " layer snapshots, max weight " +
                                                                   fmt(max_w) + ", max goodness " + fmt(max_g, 2));
}

Verdict criterion10(const Env& env) {
  const auto cfg = config({"dataset.name=mnist", "dataset.train_subset=2048", "dataset.test_subset=500",
                           "network.preset=fcn", "network.width=128", "network.depth=3", "network.norm=batchnorm",
                           "loss.kind=symba", "train.olu=approach1", "train.epochs=2", "train.batch=256",
                           "train.seed=5"});
  std::string summary[2], checkpoint[2];
  for (int i = 0; i < 2; ++i) {
    const fs::path dir = env.work / ("c10_run" + std::to_string(i));
    fs::remove_all(dir);
    TrainOptions opts;
    opts.data_root = env.data_root;
    opts.run_dir = dir.string();
    run_training(cfg, opts);
    summary[i] = read_file(dir / "summary.json");
    checkpoint[i] = read_file(dir / "checkpoint.ffc");
  }
  const bool same_summary = summary[0] == summary[1];
  const bool same_ckpt = !checkpoint[0].empty() && checkpoint[0] == checkpoint[1];
  return pass_if(same_summary && same_ckpt, std::string("summary ") + (same_summary ? "identical" : "differs") +
                                                ", checkpoint " + (same_ckpt ? "identical" : "differs") + " (" +
                                                std::to_string(checkpoint[0].size()) + " bytes)");
}

Verdict run(int n, const Env& env) {
  switch (n) {
    case 1: return criterion1();
    case 2: return criterion2();
    case 3: return criterion3();
    case 4: return criterion4(env);
    case 5: return criterion5(env);
    case 6: return criterion6(env);
    case 7: return criterion7(env);
    case 8: return criterion8(env);
    case 9: return criterion9(env);
    case 10: return criterion10(env);
    default: throw UsageError("criterion must be 1..10");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  int criterion = 0;
  std::string work = "acceptance_runs";
  std::string data_root;
  app.add_option("--criterion", criterion, "Criterion number (1-10)")->required();
  app.add_option("--work", work, "Directory for cached training runs");
  app.add_option("--data-root", data_root, "Dataset root");
  CLI11_PARSE(app, argc, argv);

  Env env;
  env.work = work;
  if (!data_root.empty()) {
    env.data_root = data_root;
  } else if (const char* e = std::getenv("FF_DATA_ROOT"); e && *e) {
    env.data_root = e;
  } else {
    env.data_root = FF_DEFAULT_DATA_ROOT;
  }
  fs::create_directories(env.work);

  Verdict v;
  try {
    v = run(criterion, env);
  } catch (const DatasetMissingError& e) {
    v = {kSkip, e.what()};
  } catch (const std::exception& e) {
    v = {1, std::string("error: ") + e.what()};
  }
  const char* tag = v.status == 0 ? "PASS" : v.status == kSkip ? "SKIP" : "FAIL";
  std::cout << "criterion " << criterion << ": " << tag << ": " << v.detail << std::endl;
  return v.status;
}
