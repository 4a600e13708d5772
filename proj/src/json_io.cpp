// SPDX-License-Identifier: Apache-2.0
#include "hetplan/json_io.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string_view>

#include "hetplan/errors.hpp"

namespace hetplan {
namespace {

void require_object(const Json& doc, std::string_view what) {
  if (!doc.is_object()) throw ParseError(std::string(what) + ": expected a JSON object");
}

// Rejects keys outside `allowed` and reports missing `required` keys.
void check_keys(const Json& doc, std::string_view what, std::initializer_list<std::string_view> required,
                std::initializer_list<std::string_view> optional = {}) {
  require_object(doc, what);
  for (const auto& [key, _] : doc.items()) {
    const bool known = std::find(required.begin(), required.end(), key) != required.end() ||
                       std::find(optional.begin(), optional.end(), key) != optional.end();
    if (!known) throw ParseError(std::string(what) + ": unknown field '" + key + "'");
  }
  for (auto key : required) {
    if (!doc.contains(key)) throw ParseError(std::string(what) + ": missing field '" + std::string(key) + "'");
  }
}

double get_number(const Json& doc, std::string_view key, std::string_view what) {
  const Json& v = doc.at(key);
  if (!v.is_number()) throw ParseError(std::string(what) + "." + std::string(key) + ": expected a number");
  return v.get<double>();
}

std::int64_t as_integer(const Json& v, std::string_view what) {
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d == static_cast<double>(static_cast<std::int64_t>(d))) return static_cast<std::int64_t>(d);
  }
  throw ParseError(std::string(what) + ": expected an integer");
}

std::int64_t get_integer(const Json& doc, std::string_view key, std::string_view what) {
  return as_integer(doc.at(key), std::string(what) + "." + std::string(key));
}

std::string get_string(const Json& doc, std::string_view key, std::string_view what) {
  const Json& v = doc.at(key);
  if (!v.is_string()) throw ParseError(std::string(what) + "." + std::string(key) + ": expected a string");
  return v.get<std::string>();
}

bool get_bool(const Json& doc, std::string_view key, std::string_view what) {
  const Json& v = doc.at(key);
  if (!v.is_boolean()) throw ParseError(std::string(what) + "." + std::string(key) + ": expected a boolean");
  return v.get<bool>();
}

const Json& get_array(const Json& doc, std::string_view key, std::string_view what) {
  const Json& v = doc.at(key);
  if (!v.is_array()) throw ParseError(std::string(what) + "." + std::string(key) + ": expected an array");
  return v;
}

template <typename T>
std::vector<ProfilePoint<T>> parse_points(const Json& arr, std::string_view what, double scale) {
  std::vector<ProfilePoint<T>> out;
  for (const auto& p : arr) {
    if (!p.is_array() || p.size() != 2 || !p[1].is_number()) {
      throw ParseError(std::string(what) + ": expected [microbatch, value] pairs");
    }
    out.push_back({as_integer(p[0], what), p[1].get<double>() * scale});
  }
  return out;
}

template <typename T>
Json points_to_json(const std::vector<ProfilePoint<T>>& pts, double scale) {
  Json arr = Json::array();
  for (const auto& p : pts) arr.push_back(Json::array({p.microbatch, p.value / scale}));
  return arr;
}

LatencyModel latency_from_json(const Json& doc, std::string_view what) {
  check_keys(doc, what, {"table_ms", "slope_ms", "intercept_ms"});
  std::vector<Millis> table;
  for (const auto& v : get_array(doc, "table_ms", what)) {
    if (!v.is_number()) throw ParseError(std::string(what) + ".table_ms: expected numbers");
    table.push_back(v.get<double>());
  }
  return LatencyModel(std::move(table), get_number(doc, "slope_ms", what),
                      get_number(doc, "intercept_ms", what));
}

Json latency_to_json(const LatencyModel& m) {
  Json doc;
  doc["table_ms"] = m.table();
  doc["slope_ms"] = m.slope();
  doc["intercept_ms"] = m.intercept();
  return doc;
}

}  // namespace

ClusterSpec cluster_from_json(const Json& doc) {
  check_keys(doc, "cluster", {"gpus", "comm"}, {"mem_cap_fraction"});
  ClusterSpec cluster;
  for (const auto& g : get_array(doc, "gpus", "cluster")) {
    check_keys(g, "cluster.gpus[]", {"id", "memory_gib", "profile_key"});
    cluster.gpus.push_back({get_string(g, "id", "gpu"), gib_to_bytes(get_number(g, "memory_gib", "gpu")),
                            get_string(g, "profile_key", "gpu")});
  }
  const Json& c = doc.at("comm");
  check_keys(c, "cluster.comm", {"allgather_ms", "reducescatter_ms"}, {"uneven_overhead"});
  cluster.comm.allgather_even = get_number(c, "allgather_ms", "comm");
  cluster.comm.reducescatter_even = get_number(c, "reducescatter_ms", "comm");
  if (c.contains("uneven_overhead")) cluster.comm.uneven_overhead = get_number(c, "uneven_overhead", "comm");
  if (doc.contains("mem_cap_fraction")) cluster.mem_cap_fraction = get_number(doc, "mem_cap_fraction", "cluster");
  validate_cluster(cluster);
  return cluster;
}

Json cluster_to_json(const ClusterSpec& cluster) {
  Json doc;
  Json gpus = Json::array();
  for (const auto& g : cluster.gpus) {
    gpus.push_back({{"id", g.id}, {"memory_gib", bytes_to_gib(g.memory_capacity)}, {"profile_key", g.profile_key}});
  }
  doc["gpus"] = std::move(gpus);
  doc["comm"] = {{"allgather_ms", cluster.comm.allgather_even},
                 {"reducescatter_ms", cluster.comm.reducescatter_even},
                 {"uneven_overhead", cluster.comm.uneven_overhead}};
  doc["mem_cap_fraction"] = cluster.mem_cap_fraction;
  return doc;
}

ModelSpec model_from_json(const Json& doc) {
  check_keys(doc, "model", {"layers", "params_per_layer", "global_batch"}, {"bytes_per_param_state"});
  ModelSpec m;
  m.layers = get_integer(doc, "layers", "model");
  m.params_per_layer = get_integer(doc, "params_per_layer", "model");
  m.global_batch = get_integer(doc, "global_batch", "model");
  if (doc.contains("bytes_per_param_state")) {
    m.bytes_per_param_state = get_number(doc, "bytes_per_param_state", "model");
  }
  validate_model(m);
  return m;
}

Json model_to_json(const ModelSpec& m) {
  return {{"layers", m.layers},
          {"params_per_layer", m.params_per_layer},
          {"bytes_per_param_state", m.bytes_per_param_state},
          {"global_batch", m.global_batch}};
}

ProfileDocument profile_from_json(const Json& doc) {
  check_keys(doc, "profile", {"profile_key", "fwd_ms", "bwd_ms", "compute_mem_gib"});
  ProfileDocument p;
  const std::string key = get_string(doc, "profile_key", "profile");
  p.compute.profile_key = key;
  p.memory.profile_key = key;
  p.compute.fwd = parse_points<Millis>(get_array(doc, "fwd_ms", "profile"), "profile.fwd_ms", 1.0);
  p.compute.bwd = parse_points<Millis>(get_array(doc, "bwd_ms", "profile"), "profile.bwd_ms", 1.0);
  p.memory.points =
      parse_points<Bytes>(get_array(doc, "compute_mem_gib", "profile"), "profile.compute_mem_gib", kBytesPerGiB);
  validate_profile(p);
  return p;
}

Json profile_to_json(const ProfileDocument& p) {
  return {{"profile_key", p.key()},
          {"fwd_ms", points_to_json(p.compute.fwd, 1.0)},
          {"bwd_ms", points_to_json(p.compute.bwd, 1.0)},
          {"compute_mem_gib", points_to_json(p.memory.points, kBytesPerGiB)}};
}

std::vector<ProfileDocument> profiles_from_json(const Json& doc) {
  std::vector<ProfileDocument> out;
  if (doc.is_array()) {
    for (const auto& p : doc) out.push_back(profile_from_json(p));
  } else {
    out.push_back(profile_from_json(doc));
  }
  std::set<std::string> keys;
  for (const auto& p : out) {
    if (!keys.insert(p.key()).second) throw ValidationError("duplicate profile_key '" + p.key() + "'");
  }
  return out;
}

PerfModelSet perf_from_json(const Json& doc) {
  check_keys(doc, "perf", {"models"});
  const Json& models = doc.at("models");
  require_object(models, "perf.models");
  PerfModelSet perf;
  for (const auto& [key, m] : models.items()) {
    const std::string what = "perf.models." + key;
    check_keys(m, what, {"fwd", "bwd", "memory"});
    GpuPerfModel g;
    g.fwd = latency_from_json(m.at("fwd"), what + ".fwd");
    g.bwd = latency_from_json(m.at("bwd"), what + ".bwd");
    const Json& mem = m.at("memory");
    check_keys(mem, what + ".memory", {"slope_gib", "intercept_gib"}, {"max_rel_residual"});
    g.memory.slope = gib_to_bytes(get_number(mem, "slope_gib", what));
    g.memory.intercept = gib_to_bytes(get_number(mem, "intercept_gib", what));
    if (mem.contains("max_rel_residual")) g.memory.max_rel_residual = get_number(mem, "max_rel_residual", what);
    if (!(g.fwd.slope() > 0) || !(g.bwd.slope() > 0) || !(g.memory.slope > 0)) {
      throw ValidationError(what + ": slopes must be positive");
    }
    perf.models.emplace(key, std::move(g));
  }
  return perf;
}

Json perf_to_json(const PerfModelSet& perf) {
  Json models = Json::object();
  for (const auto& [key, g] : perf.models) {
    models[key] = {{"fwd", latency_to_json(g.fwd)},
                   {"bwd", latency_to_json(g.bwd)},
                   {"memory",
                    {{"slope_gib", bytes_to_gib(g.memory.slope)},
                     {"intercept_gib", bytes_to_gib(g.memory.intercept)},
                     {"max_rel_residual", g.memory.max_rel_residual}}}};
  }
  return {{"models", std::move(models)}};
}

Json unit_shards_to_json(const UnitShardPlan& shards, const std::vector<GpuSpec>& gpus) {
  Json ids = Json::array();
  for (const auto& g : gpus) ids.push_back(g.id);
  Json units = Json::array();
  for (const auto& unit : shards.shards) {
    Json row = Json::array();
    for (const auto& r : unit) row.push_back(Json::array({r.offset, r.count}));
    units.push_back(std::move(row));
  }
  return {{"units", shards.units}, {"uneven_units", shards.uneven_units}, {"gpu_ids", std::move(ids)},
          {"shards", std::move(units)}};
}

UnitShardPlan unit_shards_from_json(const Json& doc) {
  check_keys(doc, "unit_shards", {"units", "uneven_units", "shards"}, {"gpu_ids"});
  UnitShardPlan s;
  s.units = get_integer(doc, "units", "unit_shards");
  s.uneven_units = get_integer(doc, "uneven_units", "unit_shards");
  for (const auto& unit : get_array(doc, "shards", "unit_shards")) {
    if (!unit.is_array()) throw ParseError("unit_shards.shards: expected arrays");
    std::vector<ShardRange> row;
    for (const auto& r : unit) {
      if (!r.is_array() || r.size() != 2) throw ParseError("unit_shards.shards: expected [offset, count]");
      row.push_back({as_integer(r[0], "offset"), as_integer(r[1], "count")});
    }
    s.shards.push_back(std::move(row));
  }
  if (static_cast<std::int64_t>(s.shards.size()) != s.units) {
    throw ValidationError("unit_shards: shard list length != units");
  }
  return s;
}

TrainPlan plan_from_json(const Json& doc) {
  check_keys(doc, "plan",
             {"assignments", "predicted_layer_fwd_ms", "predicted_layer_bwd_ms", "predicted_iteration_ms",
              "uneven_sharding_used"},
             {"unit_shards"});
  TrainPlan plan;
  for (const auto& a : get_array(doc, "assignments", "plan")) {
    const char* what = "plan.assignments[]";
    check_keys(a, what,
               {"gpu_id", "microbatch", "num_microbatches", "batch", "state_ratio", "compute_mem_gib",
                "state_mem_gib"});
    GpuAssignment g;
    g.gpu_id = get_string(a, "gpu_id", what);
    g.microbatch = get_integer(a, "microbatch", what);
    g.num_microbatches = get_integer(a, "num_microbatches", what);
    g.batch = get_integer(a, "batch", what);
    g.state_ratio = get_number(a, "state_ratio", what);
    g.predicted_compute_mem = gib_to_bytes(get_number(a, "compute_mem_gib", what));
    g.predicted_state_mem = gib_to_bytes(get_number(a, "state_mem_gib", what));
    plan.assignments.push_back(std::move(g));
  }
  plan.predicted_layer_fwd = get_number(doc, "predicted_layer_fwd_ms", "plan");
  plan.predicted_layer_bwd = get_number(doc, "predicted_layer_bwd_ms", "plan");
  plan.predicted_iteration = get_number(doc, "predicted_iteration_ms", "plan");
  plan.uneven_sharding_used = get_bool(doc, "uneven_sharding_used", "plan");
  if (doc.contains("unit_shards")) plan.unit_shards = unit_shards_from_json(doc.at("unit_shards"));
  return plan;
}

Json plan_to_json(const TrainPlan& plan) {
  Json assignments = Json::array();
  for (const auto& a : plan.assignments) {
    assignments.push_back({{"gpu_id", a.gpu_id},
                           {"microbatch", a.microbatch},
                           {"num_microbatches", a.num_microbatches},
                           {"batch", a.batch},
                           {"state_ratio", a.state_ratio},
                           {"compute_mem_gib", bytes_to_gib(a.predicted_compute_mem)},
                           {"state_mem_gib", bytes_to_gib(a.predicted_state_mem)}});
  }
  Json doc;
  doc["assignments"] = std::move(assignments);
  doc["predicted_layer_fwd_ms"] = plan.predicted_layer_fwd;
  doc["predicted_layer_bwd_ms"] = plan.predicted_layer_bwd;
  doc["predicted_iteration_ms"] = plan.predicted_iteration;
  doc["uneven_sharding_used"] = plan.uneven_sharding_used;
  if (plan.unit_shards) {
    std::vector<GpuSpec> ids;
    for (const auto& a : plan.assignments) ids.push_back({a.gpu_id, 0, ""});
    doc["unit_shards"] = unit_shards_to_json(*plan.unit_shards, ids);
  }
  return doc;
}

GradFixture grad_fixture_from_json(const Json& doc) {
  check_keys(doc, "grad fixture", {"per_gpu"});
  GradFixture f;
  for (const auto& gpu : get_array(doc, "per_gpu", "grad fixture")) {
    if (!gpu.is_array()) throw ParseError("grad fixture: per_gpu entries must be arrays of vectors");
    std::vector<GradVector> samples;
    for (const auto& v : gpu) {
      if (!v.is_array()) throw ParseError("grad fixture: samples must be arrays of numbers");
      GradVector g;
      for (const auto& x : v) {
        if (!x.is_number()) throw ParseError("grad fixture: samples must be arrays of numbers");
        g.push_back(x.get<double>());
      }
      samples.push_back(std::move(g));
    }
    f.per_gpu.push_back(std::move(samples));
  }
  return f;
}

Json grad_fixture_to_json(const GradFixture& f) {
  Json per_gpu = Json::array();
  for (const auto& gpu : f.per_gpu) per_gpu.push_back(gpu);
  return {{"per_gpu", std::move(per_gpu)}};
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& doc) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

namespace {

template <typename F>
auto with_path(const std::filesystem::path& path, F&& f) {
  const Json doc = read_json_file(path);
  try {
    return f(doc);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  } catch (const InsufficientPointsError& e) {
    throw InsufficientPointsError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace

ClusterSpec load_cluster(const std::filesystem::path& path, const std::vector<std::string>& known_keys) {
  ClusterSpec cluster = with_path(path, [](const Json& d) { return cluster_from_json(d); });
  if (!known_keys.empty()) {
    for (const auto& g : cluster.gpus) {
      if (std::find(known_keys.begin(), known_keys.end(), g.profile_key) == known_keys.end()) {
        throw ValidationError(path.string() + ": GPU '" + g.id + "' references unknown profile_key '" +
                              g.profile_key + "'");
      }
    }
  }
  return cluster;
}

ModelSpec load_model(const std::filesystem::path& path) {
  return with_path(path, [](const Json& d) { return model_from_json(d); });
}

std::vector<ProfileDocument> load_profiles(const std::filesystem::path& path) {
  return with_path(path, [](const Json& d) { return profiles_from_json(d); });
}

PerfModelSet load_perf(const std::filesystem::path& path) {
  return with_path(path, [](const Json& d) { return perf_from_json(d); });
}

TrainPlan load_plan(const std::filesystem::path& path) {
  return with_path(path, [](const Json& d) { return plan_from_json(d); });
}

void check_profile_keys(const ClusterSpec& cluster, const PerfModelSet& perf) {
  for (const auto& g : cluster.gpus) {
    if (!perf.models.count(g.profile_key)) {
      throw ValidationError("GPU '" + g.id + "' references unknown profile_key '" + g.profile_key + "'");
    }
  }
}

}  // namespace hetplan
