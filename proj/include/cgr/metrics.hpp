#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "cgr/common.hpp"

namespace cgr {

// Append-only record stream behind every experiment; missing fields are NaN.
struct MetricsRow {
  std::string run_id;
  uint64_t seed = 0;
  std::string phase;
  long global_step = 0;
  int trained_task = -1;
  int eval_task = -1;
  double test_loss = std::numeric_limits<double>::quiet_NaN();
  double performance = std::numeric_limits<double>::quiet_NaN();
  double task_model_ll = std::numeric_limits<double>::quiet_NaN();
};

struct MetricsLog {
  std::vector<MetricsRow> rows;

  void append(MetricsRow row);  // enforces non-decreasing global_step per run
  std::string to_text() const;
  static MetricsLog from_text(const std::string& text);
  void merge(const MetricsLog& other);

 private:
  std::unordered_map<std::string, long> last_step_;
};

}  // namespace cgr
