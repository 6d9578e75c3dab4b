#include "ff/metrics.hpp"

#include "ff/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace ff {

const std::vector<std::string>& metric_vocabulary() {
  static const std::vector<std::string> names{"loss",         "separation",     "grad_l2",       "g_pos_mean",
                                              "g_neg_mean",   "layer_accuracy", "test_accuracy", "max_weight",
                                              "max_goodness", "head_accuracy",  "degenerate_samples"};
  return names;
}

namespace {

bool registered(const std::string& metric) {
  const auto& v = metric_vocabulary();
  return std::find(v.begin(), v.end(), metric) != v.end();
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out;
}

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void MetricsLog::append(int epoch, std::int64_t step, int layer, const std::string& metric, double value) {
  if (!registered(metric)) throw UsageError("unregistered metric '" + metric + "' (known: " + join(metric_vocabulary()) + ")");
  if (!std::isfinite(value)) ++degenerate_;
  rows_.push_back({epoch, step, layer, metric, value});
}

std::vector<std::string> MetricsLog::metrics_present() const {
  std::vector<std::string> out;
  for (const auto& name : metric_vocabulary()) {
    if (std::any_of(rows_.begin(), rows_.end(), [&](const MetricRow& r) { return r.metric == name; })) out.push_back(name);
  }
  return out;
}

std::vector<MetricRow> MetricsLog::select(const std::string& metric) const {
  std::vector<MetricRow> out;
  for (const auto& r : rows_) {
    if (r.metric == metric) out.push_back(r);
  }
  return out;
}

StepMetrics make_step_metrics(double loss, double g_pos_mean, double g_neg_mean, double grad_l2) {
  return {loss, g_pos_mean - g_neg_mean, grad_l2, g_pos_mean, g_neg_mean};
}

void record_step(MetricsLog& log, int epoch, std::int64_t step, int layer, const StepMetrics& m) {
  log.append(epoch, step, layer, "loss", m.loss);
  log.append(epoch, step, layer, "separation", m.separation);
  log.append(epoch, step, layer, "grad_l2", m.grad_l2);
  log.append(epoch, step, layer, "g_pos_mean", m.g_pos_mean);
  log.append(epoch, step, layer, "g_neg_mean", m.g_neg_mean);
}

std::string to_csv(const MetricsLog& log) {
  std::string out = "epoch,step,layer,metric,value\n";
  for (const auto& r : log.rows()) {
    out += std::to_string(r.epoch) + ',' + std::to_string(r.step) + ',' + std::to_string(r.layer) + ',' + r.metric +
           ',' + format_value(r.value) + '\n';
  }
  return out;
}

void export_csv(const MetricsLog& log, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << to_csv(log);
}

std::vector<MetricRow> parse_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "epoch,step,layer,metric,value") throw FormatError("metrics CSV: bad header");
  std::vector<MetricRow> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 5) throw FormatError("metrics CSV line " + std::to_string(line_no) + ": expected 5 fields");
    try {
      rows.push_back({std::stoi(f[0]), std::stoll(f[1]), std::stoi(f[2]), f[3], std::strtod(f[4].c_str(), nullptr)});
    } catch (const std::logic_error&) {
      throw FormatError("metrics CSV line " + std::to_string(line_no) + ": malformed number");
    }
  }
  return rows;
}

std::vector<MetricRow> read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open metrics CSV '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_csv(ss.str());
}

std::string svg_chart(const MetricsLog& log, const std::string& metric, const SvgOptions& opts) {
  if (!registered(metric)) {
    const auto present = log.metrics_present();
    throw UsageError("unknown metric '" + metric + "' (available: " + join(present.empty() ? metric_vocabulary() : present) + ")");
  }
  const auto rows = log.select(metric);
  const bool by_epoch = std::all_of(rows.begin(), rows.end(), [](const MetricRow& r) { return r.step < 0; });

  std::map<int, std::vector<std::pair<double, double>>> series;
  std::map<int, std::size_t> counter;
  for (const auto& r : rows) {
    if (!std::isfinite(r.value) || (opts.log_y && r.value <= 0)) continue;
    const int key = opts.group_by_layer ? r.layer : 0;
    const double x = by_epoch ? r.epoch : static_cast<double>(counter[key]++);
    series[key].emplace_back(x, opts.log_y ? std::log10(r.value) : r.value);
  }

  const double width = 640, height = 400, left = 70, right = 130, top = 40, bottom = 50;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& [key, pts] : series) {
    for (const auto& [x, y] : pts) {
      if (first) {
        xmin = xmax = x;
        ymin = ymax = y;
        first = false;
      }
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const double pw = width - left - right, ph = height - top - bottom;
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return top + ph - (y - ymin) / (ymax - ymin) * ph; };
  auto tick_label = [&](double y) { return format_value(opts.log_y ? std::pow(10.0, y) : y).substr(0, 10); };

  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
                                  "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939"};
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width << "\" height=\"" << height
     << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << left << "\" y=\"24\" font-size=\"14\">"
     << (opts.title.empty() ? metric : opts.title) << (opts.log_y ? " (log scale)" : "") << "</text>\n"
     << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
     << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 12 << "\" font-size=\"12\" text-anchor=\"middle\">"
     << (!opts.x_label.empty() ? opts.x_label : by_epoch ? "epoch" : "step") << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = ymin + (ymax - ymin) * i / 4.0;
    os << "<text x=\"" << left - 6 << "\" y=\"" << py(y) + 4 << "\" font-size=\"10\" text-anchor=\"end\">"
       << tick_label(y) << "</text>\n";
    const double x = xmin + (xmax - xmin) * i / 4.0;
    os << "<text x=\"" << px(x) << "\" y=\"" << top + ph + 16 << "\" font-size=\"10\" text-anchor=\"middle\">"
       << format_value(x).substr(0, 8) << "</text>\n";
  }
  std::size_t idx = 0;
  for (const auto& [key, pts] : series) {
    const char* color = palette[idx % (sizeof(palette) / sizeof(palette[0]))];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : pts) os << px(x) << ',' << py(y) << ' ';
    os << "\"/>\n";
    std::string name = opts.group_by_layer ? (key < 0 ? "network" : "layer " + std::to_string(key)) : metric;
    if (auto it = opts.series_names.find(key); it != opts.series_names.end()) name = it->second;
    os << "<text x=\"" << left + pw + 10 << "\" y=\"" << top + 14 * (idx + 1) << "\" font-size=\"11\" fill=\"" << color
       << "\">" << name << "</text>\n";
    ++idx;
  }
  os << "</svg>\n";
  return os.str();
}

void render_svg(const MetricsLog& log, const std::string& metric, bool group_by_layer, const std::string& path,
                bool log_y) {
  SvgOptions opts;
  opts.group_by_layer = group_by_layer;
  opts.log_y = log_y;
  const std::string svg = svg_chart(log, metric, opts);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << svg;
}

}  // namespace ff
