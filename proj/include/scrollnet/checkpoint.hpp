#pragma once

#include <string>

#include "scrollnet/trainer.hpp"

namespace scrollnet {

/// Text form of a run resumable at an epoch or task boundary. Doubles are
/// written in shortest round-trip form, so restoring is exact.
std::string serialize_run(const RunState& run);
RunState deserialize_run(const std::string& text);

std::string serialize_model(const SlimmableModel& model);
SlimmableModel deserialize_model(const std::string& text);

void save_checkpoint(const RunState& run, const std::string& path);
RunState load_checkpoint(const std::string& path);

}  // namespace scrollnet
