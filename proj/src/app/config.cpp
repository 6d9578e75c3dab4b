#include "ff/app/config.hpp"

#include "ff/checkpoint.hpp"
#include "ff/errors.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace ff::app {

using nlohmann::json;

namespace {

struct Source {
  std::string name;
  std::string text;

  // Finds the key path in the raw text; returns "name:line:col" or "name".
  std::string where(const std::vector<std::string>& path) const {
    std::size_t pos = 0;
    bool found = !path.empty() && !text.empty();
    for (const auto& key : path) {
      if (!found) break;
      const std::string quoted = "\"" + key + "\"";
      std::size_t at = pos;
      found = false;
      while ((at = text.find(quoted, at)) != std::string::npos) {
        std::size_t after = at + quoted.size();
        while (after < text.size() && std::isspace(static_cast<unsigned char>(text[after]))) ++after;
        if (after < text.size() && text[after] == ':') {
          found = true;
          pos = at;
          break;
        }
        at += quoted.size();
      }
    }
    if (!found) return name;
    return name + ":" + line_col(pos);
  }

  std::string line_col(std::size_t offset) const {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    return std::to_string(line) + ":" + std::to_string(col);
  }
};

std::string dotted(const std::vector<std::string>& path) {
  std::string out;
  for (const auto& p : path) out += (out.empty() ? "" : ".") + p;
  return out;
}

class Section {
 public:
  Section(const json& j, std::vector<std::string> path, const Source& src) : j_(j), path_(std::move(path)), src_(src) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  [[noreturn]] void fail(const std::vector<std::string>& at, const std::string& msg) const {
    throw ConfigError(src_.where(at) + ": " + (at.empty() ? std::string("config") : dotted(at)) + ": " + msg);
  }

  std::vector<std::string> at(const std::string& key) const {
    auto p = path_;
    p.push_back(key);
    return p;
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  Index integer(const std::string& key, Index def, Index min = std::numeric_limits<Index>::min()) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_number_integer()) fail(at(key), "expected an integer");
    const Index x = v.get<Index>();
    if (x < min) fail(at(key), "must be >= " + std::to_string(min));
    return x;
  }

  double number(const std::string& key, double def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_number()) fail(at(key), "expected a number");
    return v.get<double>();
  }

  bool boolean(const std::string& key, bool def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_boolean()) fail(at(key), "expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_string()) fail(at(key), "expected a string");
    return v.get<std::string>();
  }

  std::vector<int> int_list(const std::string& key, const std::vector<int>& def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_array()) fail(at(key), "expected a list of integers");
    std::vector<int> out;
    for (const auto& e : v) {
      if (!e.is_number_integer()) fail(at(key), "expected a list of integers");
      out.push_back(e.get<int>());
    }
    return out;
  }

  // Converts enum-like strings, turning library usage errors into located config errors.
  template <typename F>
  auto choice(const std::string& key, const std::string& def, F&& convert) {
    const std::string s = string(key, def);
    try {
      return convert(s);
    } catch (const std::invalid_argument& e) {
      fail(at(key), e.what());
    }
  }

  Section sub(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    if (!j_.contains(key) || j_.at(key).is_null()) return Section(empty, at(key), src_);
    return Section(j_.at(key), at(key), src_);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) fail(at(key), "unknown key");
    }
  }

  const std::vector<std::string>& path() const { return path_; }

 private:
  const json& j_;
  std::vector<std::string> path_;
  const Source& src_;
  std::set<std::string> seen_;
};

LrSchedule parse_schedule(Section& train, const std::string& key) {
  if (!train.has(key)) return {{0, 1e-3}};
  const json& v = train.raw(key);
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "deep") return deep_schedule();
    if (s == "shallow") return shallow_schedule();
    train.fail(train.at(key), "unknown schedule '" + s + "' (expected deep | shallow | [[epoch, lr], ...])");
  }
  if (v.is_number()) return {{0, v.get<double>()}};
  if (!v.is_array()) train.fail(train.at(key), "expected deep | shallow | a number | [[epoch, lr], ...]");
  LrSchedule out;
  for (const auto& e : v) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number()) {
      train.fail(train.at(key), "schedule entries must be [epoch, lr] pairs");
    }
    out.push_back({e[0].get<int>(), e[1].get<double>()});
  }
  return out;
}

BlockConfig parse_block(const json& j, std::vector<std::string> path, const Source& src, NormKind default_norm) {
  Section s(j, std::move(path), src);
  BlockConfig b;
  b.kind = s.choice("kind", "dense", block_kind_from_string);
  b.norm = s.choice("norm", to_string(default_norm), norm_kind_from_string);
  b.width = s.integer("width", 0, 1);
  if (b.width == 0) s.fail(s.at("width"), "required, must be >= 1");
  b.kernel = s.integer("kernel", 3, 1);
  b.stride = s.integer("stride", 1, 1);
  b.pad = s.integer("pad", 1, 0);
  if (s.boolean("pool", false)) b.pool = PoolSpec{};
  s.finish();
  return b;
}

}  // namespace

json to_json(const RunConfig& c) {
  json schedule = json::array();
  for (const auto& p : c.train.schedule) schedule.push_back({p.epoch, p.lr});
  json network{{"preset", c.network.preset}, {"norm", to_string(c.network.norm)}, {"width", c.network.width},
               {"depth", c.network.depth}, {"blocks", nullptr}};
  if (c.network.blocks) {
    network["blocks"] = json::array();
    for (const auto& b : *c.network.blocks) {
      network["blocks"].push_back({{"kind", to_string(b.kind)},
                                   {"norm", to_string(b.norm)},
                                   {"width", b.width},
                                   {"kernel", b.kernel},
                                   {"stride", b.stride},
                                   {"pad", b.pad},
                                   {"pool", b.pool.has_value()}});
    }
  }
  const auto& t = c.train;
  return json{
      {"dataset",
       {{"name", c.dataset.name},
        {"root", c.dataset.root},
        {"train_subset", c.dataset.train_subset},
        {"test_subset", c.dataset.test_subset},
        {"image_size", c.dataset.image_size}}},
      {"network", network},
      {"loss", {{"kind", to_string(t.loss.kind)}, {"tau", t.loss.tau}, {"alpha", t.loss.alpha}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch", t.batch_size},
        {"olu", to_string(t.olu)},
        {"olu_parity", to_string(t.olu_parity)},
        {"schedule", schedule},
        {"seed", t.seed},
        {"optimizer",
         {{"kind", to_string(t.optimizer.kind)},
          {"beta1", t.optimizer.beta1},
          {"beta2", t.optimizer.beta2},
          {"eps", t.optimizer.eps},
          {"momentum", t.optimizer.momentum}}},
        {"goodness", t.reduction == GoodnessReduction::Mean ? "mean" : "sum"},
        {"feed_updated", t.feed_updated},
        {"augment",
         {{"enabled", t.augment.enabled}, {"rotation", t.augment.max_rotation_deg}, {"crop_pad", t.augment.crop_pad}}},
        {"max_steps_per_epoch", t.max_steps_per_epoch},
        {"checkpoint_every", c.checkpoint_every},
        {"eval_every", c.eval_every},
        {"stability_epochs", c.stability_epochs}}},
      {"eval",
       {{"strategy", to_string(c.eval.strategy)},
        {"k_last", c.k_last},
        {"layers", c.eval.aggregate_layers},
        {"label", to_string(c.eval.eval_label)},
        {"batch", c.eval.batch_size},
        {"head",
         {{"hidden", c.eval.head.hidden},
          {"epochs", c.eval.head.epochs},
          {"batch", c.eval.head.batch_size},
          {"lr", c.eval.head.lr},
          {"seed", c.eval.head.seed}}}}},
      {"output", c.output}};
}

json default_config_json() { return to_json(RunConfig{}); }

RunConfig run_config_from_json(const json& doc, const std::string& source, const std::string& text) {
  const Source src{source, text};
  RunConfig c;
  Section root(doc, {}, src);

  {
    auto s = root.sub("dataset");
    c.dataset.name = s.string("name", c.dataset.name);
    const auto& names = dataset_names();
    if (std::find(names.begin(), names.end(), c.dataset.name) == names.end()) {
      s.fail(s.at("name"), "unknown dataset '" + c.dataset.name + "' (expected mnist | fashion_mnist | cifar10 | cifar100)");
    }
    c.dataset.root = s.string("root", "");
    c.dataset.train_subset = s.integer("train_subset", 0, 0);
    c.dataset.test_subset = s.integer("test_subset", 0, 0);
    c.dataset.image_size = s.integer("image_size", 32, 1);
    s.finish();
  }
  {
    auto s = root.sub("network");
    c.network.preset = s.string("preset", c.network.preset);
    const auto& presets = preset_names();
    if (std::find(presets.begin(), presets.end(), c.network.preset) == presets.end() && c.network.preset != "custom") {
      std::string list;
      for (const auto& p : presets) list += p + " | ";
      s.fail(s.at("preset"), "unknown preset '" + c.network.preset + "' (expected " + list + "custom)");
    }
    c.network.norm = s.choice("norm", "batchnorm", norm_kind_from_string);
    c.network.width = s.integer("width", 0, 0);
    c.network.depth = static_cast<int>(s.integer("depth", 0, 0));
    if (s.has("blocks")) {
      const json& blocks = s.raw("blocks");
      if (!blocks.is_array() || blocks.empty()) s.fail(s.at("blocks"), "expected a non-empty list of blocks");
      std::vector<BlockConfig> list;
      for (std::size_t i = 0; i < blocks.size(); ++i) list.push_back(parse_block(blocks[i], s.at("blocks"), src, c.network.norm));
      c.network.blocks = list;
      c.network.preset = "custom";
    } else if (c.network.preset == "custom") {
      s.fail(s.at("preset"), "preset 'custom' needs network.blocks");
    }
    s.finish();
  }
  {
    auto s = root.sub("loss");
    c.train.loss.kind = s.choice("kind", "symba", loss_kind_from_string);
    c.train.loss.tau = s.number("tau", c.train.loss.tau);
    c.train.loss.alpha = s.number("alpha", c.train.loss.alpha);
    if (!(c.train.loss.tau > 0)) s.fail(s.at("tau"), "must be > 0");
    if (!(c.train.loss.alpha > 0)) s.fail(s.at("alpha"), "must be > 0");
    s.finish();
  }
  {
    auto s = root.sub("train");
    auto& t = c.train;
    t.epochs = static_cast<int>(s.integer("epochs", t.epochs, 0));
    t.batch_size = s.integer("batch", t.batch_size, 2);
    if (t.batch_size % 2 != 0) s.fail(s.at("batch"), "must be even (positive + negative samples)");
    t.olu = s.choice("olu", "off", olu_mode_from_string);
    t.olu_parity = s.choice("olu_parity", "epoch", olu_parity_from_string);
    t.schedule = parse_schedule(s, "schedule");
    try {
      validate_schedule(t.schedule);
    } catch (const UsageError& e) {
      s.fail(s.at("schedule"), e.what());
    }
    t.seed = static_cast<std::uint64_t>(s.integer("seed", 0, 0));
    {
      auto o = s.sub("optimizer");
      t.optimizer.kind = o.choice("kind", "adam", optimizer_kind_from_string);
      t.optimizer.beta1 = o.number("beta1", t.optimizer.beta1);
      t.optimizer.beta2 = o.number("beta2", t.optimizer.beta2);
      t.optimizer.eps = o.number("eps", t.optimizer.eps);
      t.optimizer.momentum = o.number("momentum", t.optimizer.momentum);
      try {
        t.optimizer.validate();
      } catch (const UsageError& e) {
        o.fail(o.path(), e.what());
      }
      o.finish();
    }
    t.reduction = s.choice("goodness", "mean", [](const std::string& v) {
      if (v == "mean") return GoodnessReduction::Mean;
      if (v == "sum") return GoodnessReduction::Sum;
      throw UsageError("unknown goodness reduction '" + v + "' (expected mean | sum)");
    });
    t.feed_updated = s.boolean("feed_updated", true);
    {
      auto a = s.sub("augment");
      t.augment.enabled = a.boolean("enabled", false);
      t.augment.max_rotation_deg = a.number("rotation", 15.0);
      t.augment.crop_pad = a.integer("crop_pad", 4, 0);
      a.finish();
    }
    t.max_steps_per_epoch = s.integer("max_steps_per_epoch", 0, 0);
    c.checkpoint_every = static_cast<int>(s.integer("checkpoint_every", 0, 0));
    c.eval_every = static_cast<int>(s.integer("eval_every", 0, 0));
    c.stability_epochs = s.int_list("stability_epochs", c.stability_epochs);
    s.finish();
  }
  {
    auto s = root.sub("eval");
    c.eval.strategy = s.choice("strategy", "goodness", eval_strategy_from_string);
    c.k_last = static_cast<int>(s.integer("k_last", 1, 1));
    c.eval.aggregate_layers = s.int_list("layers", {});
    c.eval.eval_label = s.choice("label", "neutral", eval_label_from_string);
    c.eval.batch_size = s.integer("batch", c.eval.batch_size, 1);
    {
      auto h = s.sub("head");
      c.eval.head.hidden = h.integer("hidden", 0, 0);
      c.eval.head.epochs = static_cast<int>(h.integer("epochs", 100, 0));
      c.eval.head.batch_size = h.integer("batch", 256, 1);
      c.eval.head.lr = h.number("lr", 1e-3);
      if (!(c.eval.head.lr > 0)) h.fail(h.at("lr"), "must be > 0");
      c.eval.head.seed = static_cast<std::uint64_t>(h.integer("seed", 0, 0));
      h.finish();
    }
    s.finish();
  }
  c.output = root.string("output", c.output);
  root.finish();
  return c;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected key.path=value");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &doc;
  std::stringstream ss(path);
  std::string key;
  std::vector<std::string> keys;
  while (std::getline(ss, key, '.')) keys.push_back(key);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (keys[i].empty()) throw ConfigError("override '" + assignment + "': empty path component");
    if (!node->is_object()) throw ConfigError("override '" + assignment + "': '" + keys[i - 1] + "' is not a section");
    if (i + 1 == keys.size()) {
      (*node)[keys[i]] = value;
    } else {
      node = &(*node)[keys[i]];
      if (node->is_null()) *node = json::object();
    }
  }
}

RunConfig parse_run_config(const std::string& text, const std::string& source, const std::vector<std::string>& overrides) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const Source src{source, text};
    throw ConfigError(src.name + ":" + src.line_col(e.byte > 0 ? e.byte - 1 : 0) + ": invalid JSON: " + e.what());
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return run_config_from_json(doc, source, text);
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw ConfigError(path + ": cannot open config file");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str(), path, overrides);
}

std::uint64_t run_digest(const RunConfig& cfg) {
  json j = to_json(cfg);
  // Where data lives and where results go do not change the run.
  j["dataset"].erase("root");
  j.erase("output");
  const std::string s = j.dump();
  return fnv1a(s.data(), s.size());
}

std::string resolve_data_root(const RunConfig& cfg, const std::string& cli_root) {
  if (!cli_root.empty()) return cli_root;
  if (!cfg.dataset.root.empty()) return cfg.dataset.root;
  if (const char* env = std::getenv("FF_DATA_ROOT"); env && *env) return env;
  return "data";
}

NetworkConfig build_network_config(const RunConfig& cfg, const Shape& image_shape, int num_classes) {
  if (cfg.network.blocks) {
    NetworkConfig n;
    n.preset = "custom";
    n.image_shape = image_shape;
    n.num_classes = num_classes;
    n.blocks = *cfg.network.blocks;
    network_shapes(n);
    return n;
  }
  if (cfg.network.preset == "fcn" && (cfg.network.width > 0 || cfg.network.depth > 0)) {
    return fcn_config(image_shape, num_classes, cfg.network.width > 0 ? cfg.network.width : 2048,
                      cfg.network.depth > 0 ? cfg.network.depth : 6, cfg.network.norm);
  }
  return preset(cfg.network.preset, image_shape, num_classes, cfg.network.norm);
}

}  // namespace ff::app
