// SPDX-License-Identifier: Apache-2.0
#include "hetplan/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <queue>
#include <sstream>
#include <tuple>

#include "hetplan/errors.hpp"
#include "hetplan/plan_validation.hpp"

namespace hetplan {

const char* event_kind_name(EventKind kind) {
  switch (kind) {
    case EventKind::kFwdCompute: return "fwd_compute";
    case EventKind::kBwdCompute: return "bwd_compute";
    case EventKind::kRecompute: return "recompute";
    case EventKind::kAllGather: return "allgather";
    case EventKind::kReduceScatter: return "reducescatter";
    case EventKind::kOffloadAct: return "offload_act";
    case EventKind::kPrefetchAct: return "prefetch_act";
    case EventKind::kOffloadGrad: return "offload_grad";
    case EventKind::kPrefetchGrad: return "prefetch_grad";
  }
  return "unknown";
}

Stream event_stream(EventKind kind) {
  switch (kind) {
    case EventKind::kFwdCompute:
    case EventKind::kBwdCompute:
    case EventKind::kRecompute: return Stream::kCompute;
    case EventKind::kAllGather:
    case EventKind::kReduceScatter: return Stream::kNetwork;
    default: return Stream::kTransfer;
  }
}

namespace {

constexpr std::size_t kNone = static_cast<std::size_t>(-1);

struct Dep {
  std::size_t node;
  bool at_start;
};

struct Node {
  EventKind kind;
  Phase phase;
  std::size_t gpu;  // kNone for collectives
  std::int64_t unit;
  std::int64_t microbatch;
  Millis duration;
  std::size_t prev = kNone;  // resource predecessor
  std::vector<Dep> deps;
  Millis start = 0;
  Millis end = 0;
};

enum class BufKind { kAct, kGrad };

struct Buffer {
  BufKind kind;
  std::int64_t unit;  // boundary index
  std::int64_t microbatch;
  std::vector<std::size_t> uses;  // op indices, ascending
  bool starts_on_cpu = false;
};

struct Op {
  EventKind kind;
  Phase phase;
  std::int64_t unit;
  std::int64_t microbatch;
  Millis duration;
  std::vector<std::size_t> inputs;
  std::vector<std::size_t> outputs;
  std::size_t node = kNone;
};

// Where a transfer is issued relative to the compute stream.
struct IssueKey {
  std::int64_t op;  // -1: before the first op
  int at_end;       // 0 start, 1 end
  auto operator<=>(const IssueKey&) const = default;
};

struct Transfer {
  IssueKey key;
  bool offload;
  std::size_t buffer;
  std::int64_t consumer = -1;  // prefetch: op waiting on it
  std::size_t node = kNone;
};

// Ledger entry: a buffer copy appearing or disappearing on GPU or CPU.
struct Residency {
  Millis time;
  int delta;  // +1 alloc, -1 free
  std::size_t gpu;
  bool on_cpu;
  std::size_t buffer;
};

struct GpuSchedule {
  std::vector<Op> ops;
  std::vector<Buffer> buffers;
  std::vector<Transfer> transfers;
  // Per buffer, times derived after timing: filled during ledger build.
  std::vector<std::size_t> fwd_first;  // per unit: op index of F(u,1)
  std::vector<std::size_t> bwd_first;  // per unit: first backward op
  std::vector<std::size_t> fwd_last;   // per unit: F(u,l)
  std::vector<std::size_t> bwd_last;   // per unit: B(u,l)
  std::int64_t microbatch = 0;
  std::int64_t count = 0;
};

// What happens to a buffer's GPU copy after op p touches it.
enum class After { kKeep, kFree, kOffload };

struct Decision {
  std::size_t op;
  std::size_t buffer;
  After action;
};

struct Build {
  std::vector<Node> nodes;
  std::vector<GpuSchedule> gpus;
  std::vector<std::vector<Decision>> decisions;
  std::vector<std::size_t> ag_fwd, ag_bwd, rs;  // by unit (1-based)
  std::vector<bool> active;
};

void check_config(const SimConfig& cfg) {
  const auto violations = validate_plan(cfg.plan, cfg.cluster, cfg.model, cfg.perf);
  if (!violations.empty()) {
    throw ValidationError("plan fails validation: " + violations.front().message);
  }
  if (cfg.offload_enabled && !(cfg.offload_bandwidth > 0)) {
    throw ValidationError("offload_bandwidth must be positive when offloading is enabled");
  }
  if (!(cfg.activation_bytes_per_sample >= 0)) {
    throw ValidationError("activation_bytes_per_sample must be nonnegative");
  }
  if (!(cfg.recompute_multiplier >= 0)) throw ValidationError("recompute_multiplier must be nonnegative");
}

const GpuAssignment& assignment_for(const SimConfig& cfg, std::size_t g) {
  for (const auto& a : cfg.plan.assignments) {
    if (a.gpu_id == cfg.cluster.gpus[g].id) return a;
  }
  throw ValidationError("plan has no assignment for GPU " + cfg.cluster.gpus[g].id);
}

std::size_t add_buffer(GpuSchedule& s, std::map<std::tuple<int, std::int64_t, std::int64_t>, std::size_t>& index,
                       BufKind kind, std::int64_t unit, std::int64_t mb) {
  auto key = std::make_tuple(static_cast<int>(kind), unit, mb);
  auto it = index.find(key);
  if (it != index.end()) return it->second;
  s.buffers.push_back({kind, unit, mb, {}, false});
  index.emplace(key, s.buffers.size() - 1);
  return s.buffers.size() - 1;
}

GpuSchedule build_ops(const SimConfig& cfg, const GpuPerfModel& model, const GpuAssignment& a) {
  GpuSchedule s;
  s.microbatch = a.microbatch;
  s.count = a.num_microbatches;
  const std::int64_t layers = cfg.model.layers;
  const Millis tf = model.fwd.eval(a.microbatch);
  const Millis tb = model.bwd.eval(a.microbatch);
  const Millis tr = cfg.recompute_multiplier * tf;
  std::map<std::tuple<int, std::int64_t, std::int64_t>, std::size_t> index;
  s.fwd_first.assign(layers + 2, 0);
  s.fwd_last.assign(layers + 2, 0);
  s.bwd_first.assign(layers + 2, 0);
  s.bwd_last.assign(layers + 2, 0);

  for (std::int64_t u = 1; u <= layers; ++u) {
    for (std::int64_t j = 1; j <= a.num_microbatches; ++j) {
      Op op{EventKind::kFwdCompute, Phase::kForward, u, j, tf, {}, {}};
      op.inputs.push_back(add_buffer(s, index, BufKind::kAct, u, j));
      if (u < layers) op.outputs.push_back(add_buffer(s, index, BufKind::kAct, u + 1, j));
      if (j == 1) s.fwd_first[u] = s.ops.size();
      s.fwd_last[u] = s.ops.size();
      s.ops.push_back(std::move(op));
    }
  }
  for (std::int64_t u = layers; u >= 1; --u) {
    for (std::int64_t j = 1; j <= a.num_microbatches; ++j) {
      const std::size_t act = add_buffer(s, index, BufKind::kAct, u, j);
      Op bwd{EventKind::kBwdCompute, Phase::kBackward, u, j, tb, {}, {}};
      if (tr > 0) {
        Op ra{EventKind::kRecompute, Phase::kBackward, u, j, tr, {act}, {}};
        if (j == 1) s.bwd_first[u] = s.ops.size();
        s.ops.push_back(std::move(ra));
      } else {
        bwd.inputs.push_back(act);
      }
      if (u < layers) bwd.inputs.push_back(add_buffer(s, index, BufKind::kGrad, u + 1, j));
      if (u > 1) bwd.outputs.push_back(add_buffer(s, index, BufKind::kGrad, u, j));
      if (j == 1 && tr == 0) s.bwd_first[u] = s.ops.size();
      s.bwd_last[u] = s.ops.size();
      s.ops.push_back(std::move(bwd));
    }
  }
  for (std::size_t p = 0; p < s.ops.size(); ++p) {
    for (std::size_t b : s.ops[p].inputs) s.buffers[b].uses.push_back(p);
    for (std::size_t b : s.ops[p].outputs) s.buffers[b].uses.push_back(p);
  }
  for (auto& b : s.buffers) {
    std::sort(b.uses.begin(), b.uses.end());
    b.uses.erase(std::unique(b.uses.begin(), b.uses.end()), b.uses.end());
    b.starts_on_cpu = b.kind == BufKind::kAct && b.unit == 1 && cfg.offload_enabled;
  }
  return s;
}

std::int64_t next_use(const Buffer& b, std::size_t p) {
  auto it = std::upper_bound(b.uses.begin(), b.uses.end(), p);
  return it == b.uses.end() ? -1 : static_cast<std::int64_t>(*it);
}

// Offload/prefetch plan: keep a buffer while one of the next two ops needs
// it, otherwise move it to the CPU and prefetch it one op ahead of its use.
std::vector<Decision> plan_transfers(GpuSchedule& s, bool offload) {
  std::vector<Decision> decisions;
  std::vector<bool> on_cpu(s.buffers.size(), false);
  auto prefetch = [&](std::size_t b, std::int64_t use) {
    const IssueKey key = use == 0 ? IssueKey{-1, 1} : IssueKey{use - 1, 0};
    s.transfers.push_back({key, false, b, use});
  };
  for (std::size_t b = 0; b < s.buffers.size(); ++b) {
    if (s.buffers[b].starts_on_cpu) {
      on_cpu[b] = true;
      prefetch(b, static_cast<std::int64_t>(s.buffers[b].uses.front()));
    }
  }
  for (std::size_t p = 0; p < s.ops.size(); ++p) {
    std::vector<std::size_t> touched = s.ops[p].inputs;
    touched.insert(touched.end(), s.ops[p].outputs.begin(), s.ops[p].outputs.end());
    for (std::size_t b : touched) {
      const std::int64_t nu = next_use(s.buffers[b], p);
      if (nu < 0) {
        decisions.push_back({p, b, After::kFree});
      } else if (!offload || nu <= static_cast<std::int64_t>(p) + 2) {
        decisions.push_back({p, b, After::kKeep});
      } else if (on_cpu[b]) {
        decisions.push_back({p, b, After::kFree});
        prefetch(b, nu);
      } else {
        decisions.push_back({p, b, After::kOffload});
        s.transfers.push_back({{static_cast<std::int64_t>(p), 1}, true, b, -1});
        on_cpu[b] = true;
        prefetch(b, nu);
      }
    }
  }
  std::stable_sort(s.transfers.begin(), s.transfers.end(),
                   [](const Transfer& x, const Transfer& y) { return x.key < y.key; });
  return decisions;
}

EventKind transfer_kind(const Buffer& b, bool offload) {
  if (b.kind == BufKind::kAct) return offload ? EventKind::kOffloadAct : EventKind::kPrefetchAct;
  return offload ? EventKind::kOffloadGrad : EventKind::kPrefetchGrad;
}

Build build_graph(const SimConfig& cfg) {
  Build g;
  const std::size_t n = cfg.cluster.gpus.size();
  const std::int64_t layers = cfg.model.layers;
  const CollectiveLatency comm = collective_latency(cfg.cluster.comm, cfg.plan.uneven_sharding_used);
  g.gpus.resize(n);
  g.decisions.resize(n);
  g.active.assign(n, false);

  for (std::size_t i = 0; i < n; ++i) {
    const GpuAssignment& a = assignment_for(cfg, i);
    if (a.idle()) continue;
    g.active[i] = true;
    g.gpus[i] = build_ops(cfg, cfg.perf.at(cfg.cluster.gpus[i].profile_key), a);
    g.decisions[i] = plan_transfers(g.gpus[i], cfg.offload_enabled);
  }

  auto add = [&](Node node) {
    g.nodes.push_back(std::move(node));
    return g.nodes.size() - 1;
  };
  for (std::size_t i = 0; i < n; ++i) {
    if (!g.active[i]) continue;
    std::size_t prev = kNone;
    for (auto& op : g.gpus[i].ops) {
      op.node = add({op.kind, op.phase, i, op.unit, op.microbatch, op.duration, prev, {}});
      prev = op.node;
    }
  }

  // Network chain: forward gathers, then backward gathers interleaved with
  // reduce-scatters in the order they are issued.
  g.ag_fwd.assign(layers + 2, kNone);
  g.ag_bwd.assign(layers + 2, kNone);
  g.rs.assign(layers + 2, kNone);
  std::size_t chain = kNone;
  auto collective = [&](EventKind kind, Phase phase, std::int64_t unit, Millis duration) {
    chain = add({kind, phase, kNone, unit, 0, duration, chain, {}});
    return chain;
  };
  for (std::int64_t u = 1; u <= layers; ++u) {
    g.ag_fwd[u] = collective(EventKind::kAllGather, Phase::kForward, u, comm.allgather);
  }
  for (std::int64_t u = layers; u >= 1; --u) {
    if (u >= 2) g.ag_bwd[u - 1] = collective(EventKind::kAllGather, Phase::kBackward, u - 1, comm.allgather);
    g.rs[u] = collective(EventKind::kReduceScatter, Phase::kBackward, u, comm.reducescatter);
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (!g.active[i]) continue;
    GpuSchedule& s = g.gpus[i];
    for (std::int64_t u = 1; u <= layers; ++u) {
      g.nodes[s.ops[s.fwd_first[u]].node].deps.push_back({g.ag_fwd[u], false});
      if (u < layers) g.nodes[g.ag_fwd[u + 1]].deps.push_back({s.ops[s.fwd_first[u]].node, true});
      if (u < layers) g.nodes[s.ops[s.bwd_first[u]].node].deps.push_back({g.ag_bwd[u], false});
      if (u >= 2) g.nodes[g.ag_bwd[u - 1]].deps.push_back({s.ops[s.bwd_first[u]].node, true});
      g.nodes[g.rs[u]].deps.push_back({s.ops[s.bwd_last[u]].node, false});
    }
    std::size_t prev = kNone;
    const Bytes bytes = cfg.activation_bytes_per_sample * static_cast<double>(s.microbatch);
    for (auto& t : s.transfers) {
      const Buffer& b = s.buffers[t.buffer];
      const Millis duration = std::isinf(cfg.offload_bandwidth) ? 0.0 : bytes / cfg.offload_bandwidth;
      const Phase phase = t.offload ? s.ops[t.key.op].phase
                                    : s.ops[static_cast<std::size_t>(t.consumer)].phase;
      t.node = add({transfer_kind(b, t.offload), phase, i, b.unit, b.microbatch, duration, prev, {}});
      prev = t.node;
      if (t.key.op >= 0) {
        g.nodes[t.node].deps.push_back({s.ops[t.key.op].node, t.key.at_end == 0});
      }
      if (!t.offload) {
        g.nodes[s.ops[static_cast<std::size_t>(t.consumer)].node].deps.push_back({t.node, false});
      }
    }
  }
  return g;
}

void evaluate(std::vector<Node>& nodes) {
  const std::size_t n = nodes.size();
  std::vector<std::vector<std::size_t>> out(n);
  std::vector<std::size_t> pending(n, 0);
  for (std::size_t v = 0; v < n; ++v) {
    if (nodes[v].prev != kNone) {
      out[nodes[v].prev].push_back(v);
      ++pending[v];
    }
    for (const Dep& d : nodes[v].deps) {
      out[d.node].push_back(v);
      ++pending[v];
    }
  }
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t v = 0; v < n; ++v) {
    if (pending[v] == 0) ready.push(v);
  }
  std::size_t done = 0;
  while (!ready.empty()) {
    const std::size_t v = ready.top();
    ready.pop();
    Node& node = nodes[v];
    Millis t = node.prev == kNone ? 0.0 : nodes[node.prev].end;
    for (const Dep& d : node.deps) t = std::max(t, d.at_start ? nodes[d.node].start : nodes[d.node].end);
    node.start = t;
    node.end = t + node.duration;
    ++done;
    for (std::size_t w : out[v]) {
      if (--pending[w] == 0) ready.push(w);
    }
  }
  if (done != n) throw std::logic_error("simulator schedule has a dependency cycle");
}

bool is_collective(EventKind k) { return event_stream(k) == Stream::kNetwork; }

}  // namespace

SimResult simulate_iteration(const SimConfig& cfg) {
  check_config(cfg);
  Build g = build_graph(cfg);
  evaluate(g.nodes);
  const std::size_t n = cfg.cluster.gpus.size();
  const std::int64_t layers = cfg.model.layers;

  SimResult r;
  for (const Node& node : g.nodes) r.iteration_ms = std::max(r.iteration_ms, node.end);
  r.peak_gpu_memory.assign(n, 0);
  r.peak_cpu_buffer.assign(n, 0);
  r.peak_activation_residency.assign(n, 0);
  r.peak_gradient_residency.assign(n, 0);
  r.exposed_comm_per_gpu.assign(n, 0);
  r.exposed_transfer_per_gpu.assign(n, 0);
  r.compute_busy_ms.assign(n, 0);

  // Stall accounting on each compute stream.
  for (std::size_t i = 0; i < n; ++i) {
    if (!g.active[i]) continue;
    Millis prev_end = 0;
    for (const Op& op : g.gpus[i].ops) {
      const Node& node = g.nodes[op.node];
      r.compute_busy_ms[i] += node.end - node.start;
      if (node.start > prev_end) {
        bool comm = false;
        for (const Dep& d : node.deps) {
          const Node& dep = g.nodes[d.node];
          if ((d.at_start ? dep.start : dep.end) == node.start && is_collective(dep.kind)) comm = true;
        }
        (comm ? r.exposed_comm_per_gpu : r.exposed_transfer_per_gpu)[i] += node.start - prev_end;
      }
      prev_end = node.end;
    }
    r.exposed_comm_per_gpu[i] += r.iteration_ms - prev_end;
  }
  r.exposed_comm_ms = *std::max_element(r.exposed_comm_per_gpu.begin(), r.exposed_comm_per_gpu.end());
  r.exposed_transfer_ms =
      *std::max_element(r.exposed_transfer_per_gpu.begin(), r.exposed_transfer_per_gpu.end());

  // Steady-state per-unit intervals, taken over the slowest GPU at each unit.
  std::vector<Millis> fwd_end(layers + 2, 0), bwd_end(layers + 2, 0), bwd_start(layers + 2, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    if (!g.active[i]) continue;
    const GpuSchedule& s = g.gpus[i];
    for (std::int64_t u = 1; u <= layers; ++u) {
      fwd_end[u] = std::max(fwd_end[u], g.nodes[s.ops[s.fwd_last[u]].node].end);
      bwd_end[u] = std::max(bwd_end[u], g.nodes[s.ops[s.bwd_last[u]].node].end);
      bwd_start[u] = std::min(bwd_start[u], g.nodes[s.ops[s.bwd_first[u]].node].start);
    }
  }
  if (layers >= 2) {
    for (std::int64_t u = 1; u < layers; ++u) r.per_layer_fwd_ms = std::max(r.per_layer_fwd_ms, fwd_end[u + 1] - fwd_end[u]);
  } else {
    r.per_layer_fwd_ms = fwd_end[1] - g.nodes[g.ag_fwd[1]].end;
  }
  if (layers >= 3) {
    for (std::int64_t u = 1; u <= layers - 2; ++u) r.per_layer_bwd_ms = std::max(r.per_layer_bwd_ms, bwd_end[u] - bwd_end[u + 1]);
  } else if (layers == 2) {
    r.per_layer_bwd_ms = bwd_end[1] - bwd_end[2];
  } else {
    r.per_layer_bwd_ms = bwd_end[1] - bwd_start[1];
  }

  // Buffer ledger, frees before allocations at equal times.
  std::vector<Residency> ledger;
  for (std::size_t i = 0; i < n; ++i) {
    if (!g.active[i]) continue;
    const GpuSchedule& s = g.gpus[i];
    for (std::size_t b = 0; b < s.buffers.size(); ++b) {
      const Buffer& buf = s.buffers[b];
      if (buf.starts_on_cpu) {
        ledger.push_back({0.0, +1, i, true, b});
      } else if (buf.kind == BufKind::kAct && buf.unit == 1) {
        ledger.push_back({0.0, +1, i, false, b});
      }
      // CPU copies live until the buffer's last use.
      const Millis last = g.nodes[s.ops[buf.uses.back()].node].end;
      bool cpu_copy = buf.starts_on_cpu;
      for (const Transfer& t : s.transfers) {
        if (t.buffer == b && t.offload) cpu_copy = true;
      }
      if (cpu_copy) ledger.push_back({last, -1, i, true, b});
    }
    for (const Op& op : s.ops) {
      for (std::size_t b : op.outputs) ledger.push_back({g.nodes[op.node].start, +1, i, false, b});
    }
    for (const Decision& d : g.decisions[i]) {
      if (d.action == After::kFree) ledger.push_back({g.nodes[s.ops[d.op].node].end, -1, i, false, d.buffer});
    }
    for (const Transfer& t : s.transfers) {
      const Node& node = g.nodes[t.node];
      if (t.offload) {
        ledger.push_back({node.start, +1, i, true, t.buffer});
        ledger.push_back({node.end, -1, i, false, t.buffer});
      } else {
        ledger.push_back({node.start, +1, i, false, t.buffer});
      }
    }
  }
  // The CPU alloc at offload start pairs with exactly one free at last use;
  // X_{1,j} CPU copies are allocated at time zero.
  std::stable_sort(ledger.begin(), ledger.end(), [](const Residency& a, const Residency& b) {
    if (a.time != b.time) return a.time < b.time;
    return a.delta < b.delta;
  });
  std::vector<std::map<std::pair<int, std::int64_t>, std::int64_t>> boundary(n);
  std::vector<std::int64_t> gpu_live(n, 0), cpu_live(n, 0), gpu_peak(n, 0), cpu_peak(n, 0);
  std::vector<std::int64_t> act_peak(n, 0), grad_peak(n, 0);
  std::vector<std::map<std::size_t, int>> cpu_copies(n);
  for (const Residency& e : ledger) {
    const Buffer& buf = g.gpus[e.gpu].buffers[e.buffer];
    if (e.on_cpu) {
      // A buffer offloaded more than once keeps a single CPU copy.
      int& c = cpu_copies[e.gpu][e.buffer];
      if (e.delta > 0) {
        if (c++ == 0) ++cpu_live[e.gpu];
      } else if (c > 0) {
        c = 0;
        --cpu_live[e.gpu];
      }
      cpu_peak[e.gpu] = std::max(cpu_peak[e.gpu], cpu_live[e.gpu]);
      continue;
    }
    gpu_live[e.gpu] += e.delta;
    gpu_peak[e.gpu] = std::max(gpu_peak[e.gpu], gpu_live[e.gpu]);
    auto& count = boundary[e.gpu][{static_cast<int>(buf.kind), buf.unit}];
    count += e.delta;
    auto& peak = buf.kind == BufKind::kAct ? act_peak[e.gpu] : grad_peak[e.gpu];
    peak = std::max(peak, count);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const GpuAssignment& a = assignment_for(cfg, i);
    const Bytes per = cfg.activation_bytes_per_sample * static_cast<double>(a.microbatch);
    r.peak_activation_residency[i] = static_cast<double>(act_peak[i]) * per;
    r.peak_gradient_residency[i] = static_cast<double>(grad_peak[i]) * per;
    r.peak_cpu_buffer[i] = static_cast<double>(cpu_peak[i]) * per;
    const Bytes ledger_bytes = static_cast<double>(gpu_peak[i]) * per;
    r.peak_gpu_memory[i] = a.predicted_state_mem + std::max(a.predicted_compute_mem, ledger_bytes);
  }

  // Trace: one event per node; collectives appear on every GPU.
  for (const Node& node : g.nodes) {
    if (node.gpu == kNone) {
      for (std::size_t i = 0; i < n; ++i) {
        r.trace.push_back({cfg.cluster.gpus[i].id, i, node.kind, node.phase, node.unit, 0, node.start, node.end});
      }
    } else {
      r.trace.push_back({cfg.cluster.gpus[node.gpu].id, node.gpu, node.kind, node.phase, node.unit,
                         node.microbatch, node.start, node.end});
    }
  }
  std::stable_sort(r.trace.begin(), r.trace.end(), [](const Event& a, const Event& b) {
    if (a.start != b.start) return a.start < b.start;
    return a.gpu < b.gpu;
  });
  return r;
}

std::vector<Bytes> peak_activation_memory(const SimConfig& cfg) {
  return simulate_iteration(cfg).peak_activation_residency;
}

AnalyticLayer analytic_prediction(const SimConfig& cfg) {
  const CollectiveLatency comm = collective_latency(cfg.cluster.comm, cfg.plan.uneven_sharding_used);
  AnalyticLayer out;
  for (std::size_t i = 0; i < cfg.cluster.gpus.size(); ++i) {
    const GpuAssignment& a = assignment_for(cfg, i);
    Millis f = 0, b = 0;
    if (!a.idle()) {
      const GpuPerfModel& m = cfg.perf.at(cfg.cluster.gpus[i].profile_key);
      const double l = static_cast<double>(a.num_microbatches);
      f = l * m.fwd.eval(a.microbatch);
      b = l * (m.bwd.eval(a.microbatch) + cfg.recompute_multiplier * m.fwd.eval(a.microbatch));
    }
    out.fwd = std::max(out.fwd, std::max(f, comm.allgather));
    out.bwd = std::max(out.bwd, std::max(b, comm.allgather + comm.reducescatter));
  }
  out.iteration = static_cast<double>(cfg.model.layers) * (out.fwd + out.bwd);
  return out;
}

CrosscheckReport crosscheck_optimizer(const TrainPlan& plan, const SimConfig& cfg) {
  SimConfig run = cfg;
  run.plan = plan;
  const SimResult sim = simulate_iteration(run);
  CrosscheckReport out;
  out.predicted_iteration =
      run.recompute_multiplier > 0 ? analytic_prediction(run).iteration : plan.predicted_iteration;
  out.simulated_iteration = sim.iteration_ms;
  out.relative_error = std::abs(out.simulated_iteration - out.predicted_iteration) / out.simulated_iteration;
  const CollectiveLatency comm = collective_latency(cfg.cluster.comm, plan.uneven_sharding_used);
  out.edge_bound = (comm.allgather + comm.reducescatter) / out.simulated_iteration;
  return out;
}

double required_offload_bandwidth(const SimConfig& cfg) {
  check_config(cfg);
  SimConfig probe = cfg;
  probe.offload_enabled = true;
  if (!(probe.offload_bandwidth > 0)) probe.offload_bandwidth = std::numeric_limits<double>::infinity();
  Build g = build_graph(probe);
  double need = 0;
  for (std::size_t i = 0; i < g.gpus.size(); ++i) {
    if (!g.active[i]) continue;
    const GpuSchedule& s = g.gpus[i];
    const Bytes bytes = cfg.activation_bytes_per_sample * static_cast<double>(s.microbatch);
    // Transfers issued at the end of op p run under op p+1; prefetches
    // issued at the start of op q run under op q.
    std::map<std::int64_t, Bytes> window;
    for (const Transfer& t : s.transfers) {
      const std::int64_t w = t.key.at_end ? t.key.op + 1 : t.key.op;
      window[w] += bytes;
    }
    for (const auto& [w, total] : window) {
      if (w < 0 || w >= static_cast<std::int64_t>(s.ops.size())) continue;
      need = std::max(need, total / s.ops[static_cast<std::size_t>(w)].duration);
    }
  }
  return need;
}

std::vector<std::string> lint_trace(const SimResult& result, const SimConfig& cfg) {
  std::vector<std::string> problems;
  const std::size_t n = cfg.cluster.gpus.size();
  const double eps = 1e-9 * std::max(1.0, result.iteration_ms);
  auto describe = [](const Event& e) {
    std::ostringstream os;
    os << e.gpu_id << " " << event_kind_name(e.kind) << " unit " << e.unit << " mb " << e.microbatch;
    return os.str();
  };
  std::vector<std::vector<std::vector<const Event*>>> by_stream(n, std::vector<std::vector<const Event*>>(3));
  std::map<std::tuple<int, int, std::int64_t>, std::pair<Millis, Millis>> collectives;
  std::map<std::tuple<std::size_t, int, std::int64_t, std::int64_t>, const Event*> compute;
  for (const Event& e : result.trace) {
    if (e.end < e.start) problems.push_back("negative duration: " + describe(e));
    if (e.end > result.iteration_ms + eps) problems.push_back("event ends after iteration: " + describe(e));
    by_stream[e.gpu][static_cast<int>(event_stream(e.kind))].push_back(&e);
    if (event_stream(e.kind) == Stream::kNetwork) {
      auto key = std::make_tuple(static_cast<int>(e.kind), static_cast<int>(e.phase), e.unit);
      auto [it, fresh] = collectives.emplace(key, std::make_pair(e.start, e.end));
      if (!fresh && (it->second.first != e.start || it->second.second != e.end)) {
        problems.push_back("collective not a barrier: " + describe(e));
      }
    }
    if (event_stream(e.kind) == Stream::kCompute) {
      compute[{e.gpu, static_cast<int>(e.kind), e.unit, e.microbatch}] = &e;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& stream : by_stream[i]) {
      std::stable_sort(stream.begin(), stream.end(), [](const Event* a, const Event* b) { return a->start < b->start; });
      for (std::size_t k = 1; k < stream.size(); ++k) {
        if (stream[k]->start + eps < stream[k - 1]->end) {
          problems.push_back("overlap on one stream: " + describe(*stream[k - 1]) + " / " + describe(*stream[k]));
        }
      }
    }
  }
  auto coll = [&](EventKind kind, Phase phase, std::int64_t unit) -> const std::pair<Millis, Millis>* {
    auto it = collectives.find({static_cast<int>(kind), static_cast<int>(phase), unit});
    return it == collectives.end() ? nullptr : &it->second;
  };
  for (const auto& [key, e] : compute) {
    if (e->microbatch != 1) continue;
    if (e->kind == EventKind::kFwdCompute) {
      const auto* ag = coll(EventKind::kAllGather, Phase::kForward, e->unit);
      if (!ag || e->start + eps < ag->second) problems.push_back("forward before its AllGather: " + describe(*e));
    }
    const bool first_bwd = (e->kind == EventKind::kRecompute) ||
                           (e->kind == EventKind::kBwdCompute &&
                            !compute.count({e->gpu, static_cast<int>(EventKind::kRecompute), e->unit, 1}));
    if (first_bwd && e->unit < cfg.model.layers) {
      const auto* ag = coll(EventKind::kAllGather, Phase::kBackward, e->unit);
      if (!ag || e->start + eps < ag->second) problems.push_back("backward before its AllGather: " + describe(*e));
    }
  }
  for (const auto& [key, e] : compute) {
    if (e->kind != EventKind::kBwdCompute) continue;
    const auto* rs = coll(EventKind::kReduceScatter, Phase::kBackward, e->unit);
    if (!rs || rs->first + eps < e->end) problems.push_back("ReduceScatter before backward ends: " + describe(*e));
  }
  return problems;
}

}  // namespace hetplan
