#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ff {

struct MetricRow {
  int epoch = 0;
  std::int64_t step = -1;  // -1 for epoch-level rows
  int layer = -1;          // -1 for network-level rows
  std::string metric;
  double value = 0;
};

// loss, separation, grad_l2, g_pos_mean, g_neg_mean, layer_accuracy,
// test_accuracy, max_weight, max_goodness, head_accuracy, degenerate_samples
const std::vector<std::string>& metric_vocabulary();

struct RunMetadata {
  std::string config_digest;
  std::uint64_t seed = 0;
  std::string start_time;
};

// Append-only. Non-finite values are kept (and counted) so that a diverging
// run shows up in the summary instead of vanishing from the log.
class MetricsLog {
 public:
  RunMetadata meta;

  void append(int epoch, std::int64_t step, int layer, const std::string& metric, double value);
  const std::vector<MetricRow>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  std::size_t degenerate_rows() const { return degenerate_; }
  // Registered names that occur at least once, in vocabulary order.
  std::vector<std::string> metrics_present() const;
  std::vector<MetricRow> select(const std::string& metric) const;

 private:
  std::vector<MetricRow> rows_;
  std::size_t degenerate_ = 0;
};

struct StepMetrics {
  double loss = 0;
  double separation = 0;
  double grad_l2 = 0;
  double g_pos_mean = 0;
  double g_neg_mean = 0;
};

StepMetrics make_step_metrics(double loss, double g_pos_mean, double g_neg_mean, double grad_l2);

// Appends the five per-step rows for one layer.
void record_step(MetricsLog& log, int epoch, std::int64_t step, int layer, const StepMetrics& m);

// Columns epoch,step,layer,metric,value; values with 17 significant digits.
void export_csv(const MetricsLog& log, const std::string& path);
std::string to_csv(const MetricsLog& log);
std::vector<MetricRow> read_csv(const std::string& path);
std::vector<MetricRow> parse_csv(const std::string& text);

struct SvgOptions {
  bool log_y = false;
  bool group_by_layer = true;
  std::string title;
  std::string x_label;  // empty: "epoch" or "step" depending on the rows
  // Legend names keyed by the row's layer field; default "layer <n>".
  std::map<int, std::string> series_names;
};

// One polyline per layer (or a single series when not grouped). Epoch-level
// rows are plotted against the epoch, step rows against a running index.
std::string svg_chart(const MetricsLog& log, const std::string& metric, const SvgOptions& opts = {});
void render_svg(const MetricsLog& log, const std::string& metric, bool group_by_layer, const std::string& path,
                bool log_y = false);

}  // namespace ff
