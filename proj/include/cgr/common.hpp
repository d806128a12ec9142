#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace cgr {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

// Observation layout shared by the task generator and the task model:
// q_t = [s_t, y_t] with 5 input and 3 output channels.
constexpr int kInputDim = 5;
constexpr int kOutputDim = 3;
constexpr int kObsDim = kInputDim + kOutputDim;

// Bad user-supplied configuration (CLI maps this to exit code 2).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure during inference, reported with trial position.
struct InferenceError : std::runtime_error {
  explicit InferenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// All epoch or trial-variable slots are in use.
struct SlotExhaustion : std::runtime_error {
  explicit SlotExhaustion(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace cgr
