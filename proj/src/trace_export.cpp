// SPDX-License-Identifier: Apache-2.0
#include "hetplan/trace_export.hpp"

#include <sstream>

namespace hetplan {

namespace {

const char* phase_name(Phase p) { return p == Phase::kForward ? "forward" : "backward"; }

const char* stream_name(Stream s) {
  switch (s) {
    case Stream::kCompute: return "compute";
    case Stream::kNetwork: return "network";
    case Stream::kTransfer: return "transfer";
  }
  return "unknown";
}

}  // namespace

Json event_to_json(const Event& e) {
  Json j;
  j["gpu_id"] = e.gpu_id;
  j["kind"] = event_kind_name(e.kind);
  j["phase"] = phase_name(e.phase);
  j["unit"] = e.unit;
  j["microbatch"] = e.microbatch;
  j["start_ms"] = e.start;
  j["end_ms"] = e.end;
  return j;
}

std::string trace_to_jsonl(const std::vector<Event>& trace) {
  std::ostringstream os;
  for (const Event& e : trace) os << event_to_json(e).dump() << '\n';
  return os.str();
}

Json trace_to_chrome(const std::vector<Event>& trace, const std::vector<GpuSpec>& gpus) {
  Json events = Json::array();
  for (std::size_t i = 0; i < gpus.size(); ++i) {
    events.push_back({{"name", "process_name"}, {"ph", "M"}, {"pid", i},
                      {"args", {{"name", gpus[i].id}}}});
    for (int s = 0; s < 3; ++s) {
      events.push_back({{"name", "thread_name"}, {"ph", "M"}, {"pid", i}, {"tid", s},
                        {"args", {{"name", stream_name(static_cast<Stream>(s))}}}});
    }
  }
  for (const Event& e : trace) {
    std::string name = event_kind_name(e.kind);
    name += " u" + std::to_string(e.unit);
    if (e.microbatch > 0) name += " mb" + std::to_string(e.microbatch);
    events.push_back({{"name", name},
                      {"cat", phase_name(e.phase)},
                      {"ph", "X"},
                      {"pid", e.gpu},
                      {"tid", static_cast<int>(event_stream(e.kind))},
                      {"ts", e.start * 1000.0},
                      {"dur", (e.end - e.start) * 1000.0}});
  }
  Json out;
  out["traceEvents"] = std::move(events);
  out["displayTimeUnit"] = "ms";
  return out;
}

}  // namespace hetplan
