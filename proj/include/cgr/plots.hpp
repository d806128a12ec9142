#pragma once

#include <string>

#include "cgr/metrics.hpp"

namespace cgr {

// Static vector-graphics figures rendered from a MetricsLog, each with the
// exact columnar data written next to it. Throws when the log lacks the rows
// a figure needs.
//
// which: "auto" emits every figure the log supports; otherwise one of
// "task-model-ll", "continual-loss", "continual-perf", "continual-heatmap",
// "transfer-fwd", "transfer-bwd", "compgen".
void emit_plots(const MetricsLog& log, const std::string& out_dir,
                const std::string& which = "auto");

}  // namespace cgr
