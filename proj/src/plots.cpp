#include "cgr/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "cgr/common.hpp"
#include "cgr/serialize.hpp"

namespace cgr {

namespace {

const char* kPalette[] = {"#4477aa", "#ee6677", "#228833", "#ccbb44",
                          "#66ccee", "#aa3377", "#bbbbbb", "#222222"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

struct Series {
  std::string label;
  std::vector<double> x, y;
  int color = 0;
  bool dashed = false;
};

// Minimal line-plot writer; linear axes with min/max tick labels.
class SvgPlot {
 public:
  SvgPlot(std::string title, std::string xlabel, std::string ylabel)
      : title_(std::move(title)), xlabel_(std::move(xlabel)), ylabel_(std::move(ylabel)) {}

  void add(Series s) { series_.push_back(std::move(s)); }

  std::string render() const {
    const double W = 760, H = 420, L = 70, R = 170, T = 40, B = 50;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series_)
      for (size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        xmin = std::min(xmin, s.x[i]);
        xmax = std::max(xmax, s.x[i]);
        ymin = std::min(ymin, s.y[i]);
        ymax = std::max(ymax, s.y[i]);
      }
    if (xmin > xmax) { xmin = 0; xmax = 1; }
    if (ymin > ymax) { ymin = 0; ymax = 1; }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title_
      << "</text>\n";
    // axes
    o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\">" << xlabel_ << "</text>\n";
    o << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << (T + H - B) / 2 << ")\">" << ylabel_ << "</text>\n";
    for (int k = 0; k <= 4; ++k) {
      const double xv = xmin + k * (xmax - xmin) / 4;
      const double yv = ymin + k * (ymax - ymin) / 4;
      o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">"
        << fmt(xv) << "</text>\n";
      o << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv)
        << "</text>\n";
      o << "<line x1=\"" << L << "\" y1=\"" << py(yv) << "\" x2=\"" << W - R << "\" y2=\""
        << py(yv) << "\" stroke=\"#eeeeee\"/>\n";
    }
    // legend, deduplicated by label
    std::set<std::string> seen;
    double ly = T + 8;
    for (const auto& s : series_) {
      if (seen.count(s.label)) continue;
      seen.insert(s.label);
      o << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 36
        << "\" y2=\"" << ly << "\" stroke=\"" << kPalette[s.color % 8] << "\" stroke-width=\"2\""
        << (s.dashed ? " stroke-dasharray=\"5,4\"" : "") << "/>\n";
      o << "<text x=\"" << W - R + 42 << "\" y=\"" << ly + 4 << "\">" << s.label << "</text>\n";
      ly += 18;
    }
    for (const auto& s : series_) {
      o << "<polyline fill=\"none\" stroke=\"" << kPalette[s.color % 8]
        << "\" stroke-width=\"1.5\"" << (s.dashed ? " stroke-dasharray=\"5,4\"" : "")
        << " points=\"";
      for (size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        o << px(s.x[i]) << "," << py(s.y[i]) << " ";
      }
      o << "\"/>\n";
    }
    o << "</svg>\n";
    return o.str();
  }

 private:
  std::string title_, xlabel_, ylabel_;
  std::vector<Series> series_;
};

std::string heat_color(double v) {
  // 0 -> dark blue, 0.5 -> yellow-green, 1 -> yellow
  v = std::clamp(v, 0.0, 1.0);
  const int r = static_cast<int>(40 + 215 * v);
  const int g = static_cast<int>(40 + 200 * v);
  const int b = static_cast<int>(120 - 90 * v);
  char buf[16];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
  return buf;
}

const char* task_label(int c) {
  static const char* names[] = {"DelayPro", "DelayAnti", "MemoryPro", "MemoryAnti",
                                "DMPro",    "DMAnti",    "MPrimePro", "MPrimeAnti"};
  return (c >= 0 && c < 8) ? names[c] : "?";
}

std::vector<MetricsRow> rows_with_phase(const MetricsLog& log, const std::string& phase) {
  std::vector<MetricsRow> out;
  for (const auto& r : log.rows)
    if (r.phase == phase) out.push_back(r);
  return out;
}

void write_tsv(const std::string& path, const std::vector<MetricsRow>& rows) {
  MetricsLog sub;
  for (const auto& r : rows) sub.rows.push_back(r);
  write_file(path, sub.to_text());
}

void emit_task_model_ll(const MetricsLog& log, const std::string& dir) {
  auto rows = rows_with_phase(log, "tm_train");
  if (rows.empty()) throw std::runtime_error("plot task-model-ll: no tm_train rows in log");
  SvgPlot plot("Task-model log likelihood over online trials", "trial", "log likelihood");
  std::map<std::pair<std::string, int>, Series> per_task;
  long idx = 0;
  for (const auto& r : rows) {
    auto& s = per_task[{r.run_id, r.trained_task}];
    s.label = task_label(r.trained_task);
    s.color = r.trained_task;
    s.x.push_back(static_cast<double>(idx++));
    s.y.push_back(r.task_model_ll);
  }
  for (auto& [k, s] : per_task) plot.add(s);
  // ground-truth reference levels, as dashed lines spanning the x range
  auto gt = rows_with_phase(log, "tm_eval_gt");
  std::map<int, double> gt_level;
  for (const auto& r : gt) gt_level[r.eval_task] = r.task_model_ll;
  for (const auto& [task, level] : gt_level) {
    Series s;
    s.label = std::string(task_label(task)) + " (truth)";
    s.color = task;
    s.dashed = true;
    s.x = {0.0, static_cast<double>(idx - 1)};
    s.y = {level, level};
    plot.add(s);
  }
  write_file(dir + "/fig_task_model_ll.svg", plot.render());
  auto all = rows;
  for (const auto& r : gt) all.push_back(r);
  write_tsv(dir + "/fig_task_model_ll.tsv", all);
}

void emit_continual(const MetricsLog& log, const std::string& dir, bool loss) {
  auto rows = rows_with_phase(log, "eval");
  if (rows.empty()) throw std::runtime_error("plot continual: no eval rows in log");
  SvgPlot plot(loss ? "Test loss during sequential training" : "Performance during sequential training",
               "training step", loss ? "log10 test loss" : "fraction correct");
  std::map<std::pair<std::string, int>, Series> per;
  for (const auto& r : rows) {
    auto& s = per[{r.run_id, r.eval_task}];
    s.label = task_label(r.eval_task);
    s.color = r.eval_task;
    s.x.push_back(static_cast<double>(r.global_step));
    s.y.push_back(loss ? std::log10(std::max(1e-12, r.test_loss)) : r.performance);
  }
  for (auto& [k, s] : per) plot.add(s);
  const std::string base = dir + (loss ? "/fig_continual_loss" : "/fig_continual_perf");
  write_file(base + ".svg", plot.render());
  write_tsv(base + ".tsv", rows);
}

void emit_heatmap(const MetricsLog& log, const std::string& dir) {
  auto rows = rows_with_phase(log, "eval");
  if (rows.empty()) throw std::runtime_error("plot continual-heatmap: no eval rows in log");
  std::set<std::string> run_ids;
  for (const auto& r : rows) run_ids.insert(r.run_id);
  for (const auto& run : run_ids) {
    std::vector<MetricsRow> rr;
    std::set<int> tasks;
    std::vector<long> steps;
    for (const auto& r : rows)
      if (r.run_id == run) {
        rr.push_back(r);
        tasks.insert(r.eval_task);
        if (steps.empty() || steps.back() != r.global_step) steps.push_back(r.global_step);
      }
    std::map<long, int> step_col;
    for (size_t i = 0; i < steps.size(); ++i) step_col[steps[i]] = static_cast<int>(i);
    const int n_rows = static_cast<int>(tasks.size());
    const int n_cols = static_cast<int>(steps.size());
    std::map<int, int> task_row;
    int ri = 0;
    for (int t : tasks) task_row[t] = ri++;

    const double cell_w = std::max(4.0, 600.0 / n_cols), cell_h = 28;
    const double L = 90, T = 40;
    const double W = L + n_cols * cell_w + 40, H = T + n_rows * cell_h + 50;
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
      << "Performance during sequential training (" << run << ")</text>\n";
    for (const auto& r : rr) {
      const double x = L + step_col[r.global_step] * cell_w;
      const double y = T + task_row[r.eval_task] * cell_h;
      o << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell_w << "\" height=\""
        << cell_h << "\" fill=\"" << heat_color(r.performance) << "\"/>\n";
    }
    for (const auto& [t, row] : task_row)
      o << "<text x=\"" << L - 6 << "\" y=\"" << T + row * cell_h + cell_h / 2 + 4
        << "\" text-anchor=\"end\">" << task_label(t) << "</text>\n";
    o << "<text x=\"" << L << "\" y=\"" << T + n_rows * cell_h + 20 << "\">training \xe2\x86\x92</text>\n";
    o << "</svg>\n";
    std::string tag = run;
    for (auto& ch : tag)
      if (ch == '/' || ch == ' ') ch = '_';
    write_file(dir + "/fig_continual_heatmap_" + tag + ".svg", o.str());
    write_tsv(dir + "/fig_continual_heatmap_" + tag + ".tsv", rr);
  }
}

void emit_run_family(const MetricsLog& log, const std::string& dir, const std::string& prefix,
                     const std::string& fig_name, const std::string& title) {
  std::vector<MetricsRow> rows;
  for (const auto& r : log.rows)
    if (r.phase == "eval" && r.run_id.rfind(prefix, 0) == 0) rows.push_back(r);
  if (rows.empty())
    throw std::runtime_error("plot " + fig_name + ": no eval rows with run prefix " + prefix);
  SvgPlot plot(title, "training step", "log10 test loss");
  std::map<std::pair<std::string, int>, Series> per;
  int color = 0;
  for (const auto& r : rows) {
    auto key = std::make_pair(r.run_id, r.eval_task);
    auto it = per.find(key);
    if (it == per.end()) {
      Series s;
      s.label = r.run_id + ":" + task_label(r.eval_task);
      s.color = color++;
      it = per.emplace(key, std::move(s)).first;
    }
    it->second.x.push_back(static_cast<double>(r.global_step));
    it->second.y.push_back(std::log10(std::max(1e-12, r.test_loss)));
  }
  for (auto& [k, s] : per) plot.add(s);
  write_file(dir + "/" + fig_name + ".svg", plot.render());
  write_tsv(dir + "/" + fig_name + ".tsv", rows);
}

void emit_compgen(const MetricsLog& log, const std::string& dir) {
  auto rows = rows_with_phase(log, "compgen_eval");
  if (rows.empty()) throw std::runtime_error("plot compgen: no compgen_eval rows in log");
  SvgPlot plot("Adaptation to the held-out task", "adaptation trials", "fraction correct");
  std::map<std::string, Series> per;
  int color = 0;
  for (const auto& r : rows) {
    auto it = per.find(r.run_id);
    if (it == per.end()) {
      Series s;
      s.label = r.run_id;
      s.color = color++;
      it = per.emplace(r.run_id, std::move(s)).first;
    }
    it->second.x.push_back(static_cast<double>(r.global_step));
    it->second.y.push_back(r.performance);
  }
  for (auto& [k, s] : per) plot.add(s);
  write_file(dir + "/fig_compgen.svg", plot.render());
  write_tsv(dir + "/fig_compgen.tsv", rows);
}

bool has_phase(const MetricsLog& log, const std::string& phase) {
  for (const auto& r : log.rows)
    if (r.phase == phase) return true;
  return false;
}

bool has_prefix(const MetricsLog& log, const std::string& prefix) {
  for (const auto& r : log.rows)
    if (r.run_id.rfind(prefix, 0) == 0) return true;
  return false;
}

}  // namespace

void emit_plots(const MetricsLog& log, const std::string& out_dir, const std::string& which) {
  if (log.rows.empty()) throw std::runtime_error("plot: empty metrics log");
  bool any = false;
  auto want = [&](const char* name) { return which == "auto" || which == name; };
  if (want("task-model-ll") && (which != "auto" || has_phase(log, "tm_train"))) {
    emit_task_model_ll(log, out_dir);
    any = true;
  }
  if (want("continual-loss") && (which != "auto" || has_phase(log, "eval"))) {
    emit_continual(log, out_dir, true);
    any = true;
  }
  if (want("continual-perf") && (which != "auto" || has_phase(log, "eval"))) {
    emit_continual(log, out_dir, false);
    any = true;
  }
  if (want("continual-heatmap") && (which != "auto" || has_phase(log, "eval"))) {
    emit_heatmap(log, out_dir);
    any = true;
  }
  if (want("transfer-fwd") && (which != "auto" || has_prefix(log, "fwd-"))) {
    emit_run_family(log, out_dir, "fwd-", "fig_transfer_fwd", "Forward transfer");
    any = true;
  }
  if (want("transfer-bwd") && (which != "auto" || has_prefix(log, "bwd-"))) {
    emit_run_family(log, out_dir, "bwd-", "fig_transfer_bwd", "Backward transfer");
    any = true;
  }
  if (want("compgen") && (which != "auto" || has_phase(log, "compgen_eval"))) {
    emit_compgen(log, out_dir);
    any = true;
  }
  if (!any) throw std::runtime_error("plot: nothing to plot for selection '" + which + "'");
}

}  // namespace cgr
