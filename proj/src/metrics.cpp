#include "cgr/metrics.hpp"

#include <cstdio>
#include <map>
#include <sstream>

namespace cgr {

namespace {

constexpr const char* kHeader =
    "# cgr-metrics v1\n"
    "run_id\tseed\tphase\tglobal_step\ttrained_task\teval_task\ttest_loss\tperformance\ttask_model_ll\n";

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void MetricsLog::append(MetricsRow row) {
  auto it = last_step_.find(row.run_id);
  if (it != last_step_.end() && it->second > row.global_step)
    throw std::runtime_error("metrics rows must have non-decreasing global_step per run");
  last_step_[row.run_id] = row.global_step;
  rows.push_back(std::move(row));
}

std::string MetricsLog::to_text() const {
  std::string out = kHeader;
  for (const auto& r : rows) {
    out += r.run_id;
    out += '\t';
    out += std::to_string(r.seed);
    out += '\t';
    out += r.phase;
    out += '\t';
    out += std::to_string(r.global_step);
    out += '\t';
    out += std::to_string(r.trained_task);
    out += '\t';
    out += std::to_string(r.eval_task);
    out += '\t';
    out += fmt_double(r.test_loss);
    out += '\t';
    out += fmt_double(r.performance);
    out += '\t';
    out += fmt_double(r.task_model_ll);
    out += '\n';
  }
  return out;
}

MetricsLog MetricsLog::from_text(const std::string& text) {
  MetricsLog log;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "# cgr-metrics v1")
    throw std::runtime_error("not a cgr metrics file");
  std::getline(in, line);  // column header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    MetricsRow r;
    std::string tok;
    std::getline(row, r.run_id, '\t');
    std::getline(row, tok, '\t');
    r.seed = std::stoull(tok);
    std::getline(row, r.phase, '\t');
    std::getline(row, tok, '\t');
    r.global_step = std::stol(tok);
    std::getline(row, tok, '\t');
    r.trained_task = std::stoi(tok);
    std::getline(row, tok, '\t');
    r.eval_task = std::stoi(tok);
    std::getline(row, tok, '\t');
    r.test_loss = std::stod(tok);
    std::getline(row, tok, '\t');
    r.performance = std::stod(tok);
    std::getline(row, tok, '\t');
    r.task_model_ll = std::stod(tok);
    log.rows.push_back(std::move(r));
  }
  return log;
}

void MetricsLog::merge(const MetricsLog& other) {
  for (const auto& r : other.rows) {
    auto it = last_step_.find(r.run_id);
    if (it == last_step_.end() || it->second <= r.global_step) last_step_[r.run_id] = r.global_step;
    rows.push_back(r);
  }
}

}  // namespace cgr
