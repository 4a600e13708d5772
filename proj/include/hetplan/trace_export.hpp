// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "hetplan/json_io.hpp"
#include "hetplan/simulator.hpp"

namespace hetplan {

Json event_to_json(const Event& e);

// One JSON object per line.
std::string trace_to_jsonl(const std::vector<Event>& trace);

// Chrome trace-event format ("X" complete events, microsecond timestamps).
Json trace_to_chrome(const std::vector<Event>& trace, const std::vector<GpuSpec>& gpus);

}  // namespace hetplan
