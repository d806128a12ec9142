#pragma once

#include <string>

#include "cgr/baselines.hpp"
#include "cgr/contextrnn.hpp"
#include "cgr/taskmodel.hpp"

namespace cgr {

// Versioned structured-text checkpoints; round-trip exact on all floats.

std::string taskmodel_to_json(const TaskModelState& state);
TaskModelState taskmodel_from_json(const std::string& text);

// The bank container also carries the optimizer state; baseline checkpoints
// reuse it with a different payload tag.
std::string bank_to_json(const ContextBank& bank, const TrainState& ts);
void bank_from_json(const std::string& text, ContextBank& bank, TrainState& ts);

std::string general_rnn_to_json(const GeneralRNN& net);
GeneralRNN general_rnn_from_json(const std::string& text);

// Payload tag of a checkpoint file ("context_bank", "general_rnn",
// "task_model"), for dispatch and inspection.
std::string checkpoint_kind(const std::string& text);
std::string describe_checkpoint(const std::string& text);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace cgr
