#include "ff/app/recipes.hpp"

#include "ff/checkpoint.hpp"
#include "ff/errors.hpp"
#include "ff/eval.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

namespace ff::app {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string>& figure_ids() {
  static const std::vector<std::string> ids{"fig1", "fig2", "fig4", "fig5", "fig6", "fig7", "fig8", "table1", "table3"};
  return ids;
}

namespace {

struct Scale {
  Index train = 10000;
  Index test = 2000;
  int epochs = 5;
  int head_epochs = 20;
  Index fcn_width = 1024;
  int fcn_depth = 4;
};

Scale scale_for(bool quick) {
  if (quick) return {512, 256, 1, 2, 64, 3};
  return {};
}

class Csv {
 public:
  Csv(const fs::path& path, const std::string& header) : os_(path, std::ios::trunc) {
    if (!os_) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    os_ << header << "\n";
  }
  template <typename... T>
  void row(const T&... cells) {
    std::size_t i = 0;
    ((os_ << (i++ ? "," : "") << std::setprecision(10) << cells), ...);
    os_ << "\n";
  }

 private:
  std::ofstream os_;
};

struct Context {
  std::string id;
  fs::path dir;
  Scale scale;
  Data data;
  std::string dataset;
  std::ostream& log;
  std::vector<std::string> files;

  RunConfig base() const {
    RunConfig c;
    c.dataset.name = dataset;
    c.dataset.train_subset = scale.train;
    c.dataset.test_subset = scale.test;
    c.train.epochs = scale.epochs;
    c.train.augment.enabled = dataset.rfind("cifar", 0) == 0;
    c.eval.head.epochs = scale.head_epochs;
    c.stability_epochs = {};
    return c;
  }

  // Desk stand-in for the shallow and deep CNNs.
  RunConfig cnn(RunConfig c) const {
    c.network.preset = "cnn4";
    return c;
  }

  RunConfig fcn(RunConfig c) const {
    c.network.preset = "fcn";
    c.network.width = scale.fcn_width;
    c.network.depth = scale.fcn_depth;
    return c;
  }

  RunOutcome run(const std::string& name, const RunConfig& cfg) {
    log << "[" << id << "] training " << name << " (" << cfg.network.preset << ", " << to_string(cfg.network.norm) << ", "
        << to_string(cfg.train.loss.kind) << ", olu " << to_string(cfg.train.olu) << ", " << cfg.train.epochs
        << " epochs)\n"
        << std::flush;
    TrainOptions o;
    o.run_dir = (dir / name).string();
    return run_training(cfg, data, o);
  }

  void svg(const MetricsLog& log_rows, const std::string& metric, const std::string& file, SvgOptions opts = {}) {
    const std::string svg_text = svg_chart(log_rows, metric, opts);
    std::ofstream os(dir / file, std::ios::trunc);
    os << svg_text;
    files.push_back(file);
  }

  Csv csv(const std::string& file, const std::string& header) {
    files.push_back(file);
    return Csv(dir / file, header);
  }

  void anchor(const std::string& text) { log << "[" << id << "] full-scale reference: " << text << "\n"; }
  void result(const std::string& text) { log << "[" << id << "] desk result: " << text << "\n"; }
};

RunConfig vff_symba(RunConfig c, NormKind norm) {
  c.network.norm = norm;
  c.train.loss.kind = LossKind::Symba;
  c.train.loss.alpha = 4.0;
  c.train.olu = OluMode::Off;
  return c;
}

RunConfig tff(RunConfig c) {
  c.network.norm = NormKind::BatchNorm;
  c.train.loss.kind = LossKind::Symba;
  c.train.loss.alpha = 4.0;
  c.train.olu = OluMode::Approach1;
  return c;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * v;
  return os.str();
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

void fig1(Context& ctx) {
  ctx.anchor("CIFAR-10 VFF+SymBa/s: layernorm layerwise accuracy peaks mid-network and declines; batchnorm keeps improving with depth");
  auto c = ctx.csv("fig1.csv", "run,epoch,layer,accuracy");
  for (auto [name, norm] : {std::pair{"layernorm", NormKind::LayerNormReduced}, std::pair{"batchnorm", NormKind::BatchNorm}}) {
    RunConfig cfg = vff_symba(ctx.cnn(ctx.base()), norm);
    cfg.eval_every = 1;
    const auto r = ctx.run(name, cfg);
    for (const auto& row : r.metrics.select("layer_accuracy")) c.row(name, row.epoch, row.layer, row.value);
    SvgOptions o;
    o.title = std::string("layerwise test accuracy, ") + name;
    ctx.svg(r.metrics, "layer_accuracy", std::string("fig1_") + name + ".svg", o);
    std::string acc;
    for (const auto& a : r.summary["layerwise_accuracy"]) acc += " " + fmt(a.get<double>());
    ctx.result(std::string(name) + " final layerwise accuracy (%):" + acc);
  }
}

void fig2(Context& ctx) {
  ctx.anchor("CIFAR-10 VFF+SymBa/f: per-step gradient norms of the last layer vary much more under layernorm than batchnorm");
  auto c = ctx.csv("fig2.csv", "run,step,layer,grad_l2");
  for (auto [name, norm] : {std::pair{"layernorm", NormKind::LayerNormReduced}, std::pair{"batchnorm", NormKind::BatchNorm}}) {
    RunConfig cfg = vff_symba(ctx.fcn(ctx.base()), norm);
    cfg.train.epochs = 1;
    const auto r = ctx.run(name, cfg);
    const int last = ctx.scale.fcn_depth - 1;
    MetricsLog picked;
    std::vector<double> deepest;
    std::int64_t step = 0;
    for (const auto& row : r.metrics.select("grad_l2")) {
      if (row.layer != 0 && row.layer != last) continue;
      picked.append(row.epoch, row.step, row.layer, "grad_l2", row.value);
      c.row(name, row.step, row.layer, row.value);
      if (row.layer == last) deepest.push_back(row.value);
      ++step;
    }
    SvgOptions o;
    o.log_y = true;
    o.title = std::string("gradient l2 norm per step, ") + name;
    ctx.svg(picked, "grad_l2", std::string("fig2_") + name + ".svg", o);
    std::ostringstream os;
    os << name << " last-layer gradient norm std over " << deepest.size() << " steps: " << stddev(deepest);
    ctx.result(os.str());
  }
}

void trifecta_run(Context& ctx, const std::function<void(const RunOutcome&)>& use, bool with_eval, std::vector<int> snapshots = {}) {
  RunConfig cfg = tff(ctx.cnn(ctx.base()));
  if (with_eval) cfg.eval_every = 1;
  cfg.stability_epochs = std::move(snapshots);
  use(ctx.run("tff", cfg));
}

void fig4(Context& ctx) {
  ctx.anchor("CIFAR-10 TFF/d: test accuracy rises to 83.51% at 500 epochs while per-layer separation grows steadily");
  trifecta_run(ctx, [&](const RunOutcome& r) {
    auto c = ctx.csv("fig4.csv", "epoch,step,layer,metric,value");
    for (const auto& row : r.metrics.rows()) {
      if (row.metric == "test_accuracy" || row.metric == "separation") c.row(row.epoch, row.step, row.layer, row.metric, row.value);
    }
    SvgOptions acc;
    acc.title = "test accuracy (last layer)";
    ctx.svg(r.metrics, "test_accuracy", "fig4_accuracy.svg", acc);
    SvgOptions sep;
    sep.title = "separation g_pos - g_neg";
    ctx.svg(r.metrics, "separation", "fig4_separation.svg", sep);
    ctx.result("final test accuracy " + fmt(r.summary["test_accuracy"].get<double>()) + "%");
  }, true);
}

void fig5(Context& ctx) {
  ctx.anchor("CIFAR-10 VFF/s with the fixed-threshold loss (tau = 2): layerwise accuracy collapses after the first layers");
  RunConfig cfg = ctx.cnn(ctx.base());
  cfg.network.norm = NormKind::LayerNormReduced;
  cfg.train.loss.kind = LossKind::Ftl;
  cfg.train.loss.tau = 2.0;
  cfg.eval_every = 1;
  const auto r = ctx.run("vff_ftl", cfg);
  auto c = ctx.csv("fig5.csv", "epoch,layer,accuracy");
  for (const auto& row : r.metrics.select("layer_accuracy")) c.row(row.epoch, row.layer, row.value);
  SvgOptions o;
  o.title = "layerwise test accuracy, FTL tau=2";
  ctx.svg(r.metrics, "layer_accuracy", "fig5.svg", o);
  std::string acc;
  for (const auto& a : r.summary["layerwise_accuracy"]) acc += " " + fmt(a.get<double>());
  ctx.result("final layerwise accuracy (%):" + acc);
}

void fig6(Context& ctx) {
  ctx.anchor("CIFAR-10 VFF+SymBa/f probe: per-layer classifier accuracy decays with depth, least without normalization");
  auto c = ctx.csv("fig6.csv", "norm,layer,head_accuracy");
  MetricsLog plot;
  SvgOptions o;
  o.title = "per-layer probe accuracy";
  o.x_label = "layer";
  int series = 0;
  for (auto [name, norm] : {std::pair{"layernorm", NormKind::LayerNormReduced}, std::pair{"batchnorm", NormKind::BatchNorm},
                            std::pair{"none", NormKind::None}}) {
    RunConfig cfg = vff_symba(ctx.fcn(ctx.base()), norm);
    const auto r = ctx.run(name, cfg);
    LoadedCheckpoint ck = load_checkpoint((ctx.dir / name / "checkpoint.ffc").string());
    std::string acc;
    for (int l = 0; l < static_cast<int>(ck.net.depth()); ++l) {
      HeadConfig h = cfg.eval.head;
      auto head = train_feature_head(ck.net, ctx.data.train, h, EvalLabel::Neutral, l);
      const double a = accuracy(classify_features(ck.net, head, ctx.data.test.images, h.seed), ctx.data.test.labels);
      c.row(name, l, a);
      plot.append(l, -1, series, "head_accuracy", a);
      acc += " " + fmt(a);
    }
    o.series_names[series++] = name;
    ctx.result(std::string(name) + " probe accuracy per layer (%):" + acc);
  }
  ctx.svg(plot, "head_accuracy", "fig6.svg", o);
}

void fig7(Context& ctx) {
  ctx.anchor("CIFAR-10 TFF/d: positive goodness grows and negative goodness stays low at every layer");
  trifecta_run(ctx, [&](const RunOutcome& r) {
    auto c = ctx.csv("fig7.csv", "epoch,step,layer,g_pos_mean,g_neg_mean");
    const auto pos = r.metrics.select("g_pos_mean");
    const auto neg = r.metrics.select("g_neg_mean");
    for (std::size_t i = 0; i < pos.size(); ++i) c.row(pos[i].epoch, pos[i].step, pos[i].layer, pos[i].value, neg[i].value);
    SvgOptions p;
    p.title = "positive goodness";
    ctx.svg(r.metrics, "g_pos_mean", "fig7_pos.svg", p);
    SvgOptions n;
    n.title = "negative goodness";
    ctx.svg(r.metrics, "g_neg_mean", "fig7_neg.svg", n);
  }, false);
}

void fig8(Context& ctx) {
  ctx.anchor("CIFAR-10 TFF/d at epochs 100/300/500: max weight about 0.3 (first layer), max test goodness about 160");
  const int e = ctx.scale.epochs;
  std::vector<int> snaps{std::max(1, e / 3), std::max(1, 2 * e / 3), e};
  snaps.erase(std::unique(snaps.begin(), snaps.end()), snaps.end());
  trifecta_run(ctx, [&](const RunOutcome& r) {
    auto c = ctx.csv("fig8.csv", "snapshot_epoch,layer,max_weight,max_goodness");
    MetricsLog weights, goodness;
    SvgOptions ow, og;
    ow.title = "max |weight| per layer";
    og.title = "max test-time goodness per layer";
    ow.x_label = og.x_label = "layer";
    std::map<int, int> series;
    const auto w = r.metrics.select("max_weight");
    const auto g = r.metrics.select("max_goodness");
    for (std::size_t i = 0; i < w.size(); ++i) {
      const int s = series.emplace(w[i].epoch, static_cast<int>(series.size())).first->second;
      ow.series_names[s] = og.series_names[s] = "epoch " + std::to_string(w[i].epoch);
      c.row(w[i].epoch, w[i].layer, w[i].value, g[i].value);
      weights.append(w[i].layer, -1, s, "max_weight", w[i].value);
      goodness.append(g[i].layer, -1, s, "max_goodness", g[i].value);
    }
    ctx.svg(weights, "max_weight", "fig8_weight.svg", ow);
    ctx.svg(goodness, "max_goodness", "fig8_goodness.svg", og);
  }, false, snaps);
}

void table1(Context& ctx) {
  ctx.anchor("CIFAR-10 shallow CNN, 100 epochs: None 29.27/44.28/59.22, BN 41.02/37.31/68.51, OLU 48.18/50.85/65.82, OLU+BN 57.92/58.99/75.23 (FTL tau=2 / FTL tau=10 / SymBa alpha=4)");
  struct Column {
    const char* name;
    LossKind kind;
    double param;
  };
  const Column columns[] = {{"ftl_tau2", LossKind::Ftl, 2.0}, {"ftl_tau10", LossKind::Ftl, 10.0}, {"symba_alpha4", LossKind::Symba, 4.0}};
  struct Row {
    const char* name;
    NormKind norm;
    OluMode olu;
  };
  const Row rows[] = {{"none", NormKind::LayerNormReduced, OluMode::Off},
                      {"bn", NormKind::BatchNorm, OluMode::Off},
                      {"olu", NormKind::LayerNormReduced, OluMode::Approach1},
                      {"olu_bn", NormKind::BatchNorm, OluMode::Approach1}};
  auto c = ctx.csv("table1.csv", "components,ftl_tau2,ftl_tau10,symba_alpha4");
  MetricsLog plot;
  SvgOptions o;
  o.title = "ablation grid: test accuracy";
  o.x_label = "components (none, bn, olu, olu_bn)";
  for (int ri = 0; ri < 4; ++ri) {
    std::vector<double> acc;
    for (int ci = 0; ci < 3; ++ci) {
      RunConfig cfg = ctx.cnn(ctx.base());
      cfg.network.norm = rows[ri].norm;
      cfg.train.olu = rows[ri].olu;
      cfg.train.loss.kind = columns[ci].kind;
      if (columns[ci].kind == LossKind::Ftl) {
        cfg.train.loss.tau = columns[ci].param;
      } else {
        cfg.train.loss.alpha = columns[ci].param;
      }
      const auto r = ctx.run(std::string(rows[ri].name) + "_" + columns[ci].name, cfg);
      acc.push_back(r.summary["test_accuracy"].get<double>());
      plot.append(ri, -1, ci, "test_accuracy", acc.back());
      o.series_names[ci] = columns[ci].name;
    }
    c.row(rows[ri].name, acc[0], acc[1], acc[2]);
    ctx.result(std::string(rows[ri].name) + ": " + fmt(acc[0]) + " / " + fmt(acc[1]) + " / " + fmt(acc[2]));
  }
  ctx.svg(plot, "test_accuracy", "table1.svg", o);
}

void table3(Context& ctx) {
  ctx.anchor("TFF/d at 500 epochs: aggregating the last 3 layers adds +0.04 to +0.21 points over the last layer; feature heads trail both");
  RunConfig cfg = tff(ctx.cnn(ctx.base()));
  cfg.k_last = 3;
  const auto r = ctx.run("tff", cfg);
  LoadedCheckpoint ck = load_checkpoint((ctx.dir / "tff" / "checkpoint.ffc").string());
  auto c = ctx.csv("table3.csv", "strategy,accuracy");
  MetricsLog plot;
  SvgOptions o;
  o.title = "evaluation strategies";
  o.x_label = "strategy (last layer, last 3, head neutral, head random)";
  std::vector<std::pair<std::string, double>> results{{"goodness_last_layer", r.summary["test_accuracy"].get<double>()},
                                                      {"goodness_last_3", r.summary["ensemble_accuracy"].get<double>()}};
  for (EvalLabel label : {EvalLabel::Neutral, EvalLabel::Random}) {
    auto head = train_feature_head(ck.net, ctx.data.train, cfg.eval.head, label);
    results.emplace_back("feature_head_" + to_string(label),
                         accuracy(classify_features(ck.net, head, ctx.data.test.images, cfg.eval.head.seed), ctx.data.test.labels));
  }
  for (std::size_t i = 0; i < results.size(); ++i) {
    c.row(results[i].first, results[i].second);
    plot.append(static_cast<int>(i), -1, -1, "test_accuracy", results[i].second);
    ctx.result(results[i].first + ": " + fmt(results[i].second) + "%");
  }
  o.series_names[-1] = "accuracy";
  ctx.svg(plot, "test_accuracy", "table3.svg", o);
}

}  // namespace

RecipeResult reproduce(const std::string& id, const RecipeOptions& opts) {
  static const std::map<std::string, void (*)(Context&)> recipes{{"fig1", fig1}, {"fig2", fig2}, {"fig4", fig4},
                                                                 {"fig5", fig5}, {"fig6", fig6}, {"fig7", fig7},
                                                                 {"fig8", fig8}, {"table1", table1}, {"table3", table3}};
  const auto it = recipes.find(id);
  if (it == recipes.end()) {
    std::string list;
    for (const auto& f : figure_ids()) list += (list.empty() ? "" : ", ") + f;
    throw UsageError("unknown figure id '" + id + "' (available: " + list + ")");
  }
  std::ostream& log = opts.log ? *opts.log : std::cout;
  RunConfig probe;
  const std::string root = resolve_data_root(probe, opts.data_root);
  std::string dataset = opts.dataset;
  if (dataset.empty()) {
    dataset = fs::exists(fs::path(root) / "cifar10" / "test_batch.bin") ? "cifar10" : "mnist";
    if (dataset != "cifar10") log << "[" << id << "] cifar10 not found under " << root << "; using " << dataset << "\n";
  }
  Context ctx{id, {}, scale_for(opts.quick), {}, dataset, log, {}};
  probe.dataset.name = dataset;
  probe.dataset.train_subset = ctx.scale.train;
  probe.dataset.test_subset = ctx.scale.test;
  ctx.data = load_data(probe, root);
  ctx.dir = fs::path(opts.output) / (timestamp_now() + "-" + id + (opts.quick ? "-quick" : ""));
  for (int i = 2; fs::exists(ctx.dir); ++i) ctx.dir = fs::path(opts.output) / (timestamp_now() + "-" + id + "-" + std::to_string(i));
  fs::create_directories(ctx.dir);
  it->second(ctx);
  log << "[" << id << "] outputs in " << ctx.dir.string() << ":";
  for (const auto& f : ctx.files) log << " " << f;
  log << "\n";
  return {ctx.dir.string(), ctx.files};
}

int cmd_reproduce(const std::string& id, const RecipeOptions& opts, std::ostream& out, std::ostream& err) {
  try {
    RecipeOptions o = opts;
    if (!o.log) o.log = &out;
    reproduce(id, o);
    return kExitOk;
  } catch (...) {
    return report_exception(err);
  }
}

}  // namespace ff::app
