// SPDX-License-Identifier: Apache-2.0
// hetplan: fit performance models, plan, simulate, and check.
#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "hetplan/errors.hpp"
#include "hetplan/gradcheck.hpp"
#include "hetplan/json_io.hpp"
#include "hetplan/optimizer.hpp"
#include "hetplan/plan_validation.hpp"
#include "hetplan/random_instances.hpp"
#include "hetplan/sharding.hpp"
#include "hetplan/simulator.hpp"
#include "hetplan/trace_export.hpp"
#include "run_report.hpp"

namespace fs = std::filesystem;
using namespace hetplan;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitInput = 2;
constexpr int kExitInfeasible = 3;

// Transitions per second assumed when estimating optimizer time.
constexpr double kTransitionsPerSecond = 1e9;

struct Common {
  std::string run_report;
};

struct FitArgs {
  std::vector<std::string> profiles;
  std::string out;
  std::int64_t linear_from = 0;
};

struct ModelInputs {
  std::string cluster, model, perf;
};

struct PlanArgs {
  ModelInputs in;
  std::int64_t batch = 0;
  bool allow_idle = false;
  bool no_prune = false;
  double time_budget = 0;
  std::int64_t threads = -1;
  std::string out, report, csv;
};

struct SimArgs {
  ModelInputs in;
  std::string plan;
  bool offload = false;
  double offload_gbps = 0;
  double act_mib = 0;
  double recompute = 0;
  std::string trace_out, trace_format = "jsonl", csv;
};

struct CheckPlanArgs {
  ModelInputs in;
  std::string plan;
};

struct CheckGradArgs {
  std::string fixture;
  bool random = false;
  std::uint64_t seed = 1;
  std::int64_t count = 1;
};

struct CheckOracleArgs {
  std::uint64_t seed = 7;
  std::int64_t instances = 200;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path.string());
  out << text;
}

struct Loaded {
  ClusterSpec cluster;
  ModelSpec model;
  PerfModelSet perf;
};

Loaded load_inputs(const ModelInputs& in, cli::RunReport& report) {
  Loaded l;
  l.perf = load_perf(in.perf);
  std::vector<std::string> keys;
  for (const auto& [k, v] : l.perf.models) keys.push_back(k);
  l.cluster = load_cluster(in.cluster, keys);
  l.model = load_model(in.model);
  for (const auto& p : {in.cluster, in.model, in.perf}) report.add_input(p);
  return l;
}

unsigned thread_setting(std::int64_t flag) {
  if (flag >= 0) return static_cast<unsigned>(flag);
  if (const char* env = std::getenv("HETPLAN_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 0) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
    throw ParseError(std::string("HETPLAN_THREADS must be a nonnegative integer, got '") + env + "'");
  }
  return 0;
}

int cmd_fit(const FitArgs& a, cli::RunReport& report) {
  PerfModelSet perf;
  std::optional<std::int64_t> start;
  if (a.linear_from > 0) start = a.linear_from;
  for (const auto& path : a.profiles) {
    report.add_input(path);
    for (const auto& doc : load_profiles(path)) {
      if (perf.models.count(doc.key())) throw ValidationError("duplicate profile_key '" + doc.key() + "'");
      const GpuPerfModel m = fit_profile(doc, start);
      std::cout << doc.key() << ": fwd " << fmt(m.fwd.slope()) << " ms/sample + " << fmt(m.fwd.intercept())
                << " (table to m=" << m.fwd.max_profiled() << ", gap " << fmt(m.fwd.continuity_gap() * 100, 2)
                << "%), bwd " << fmt(m.bwd.slope()) << " ms/sample + " << fmt(m.bwd.intercept())
                << ", memory " << fmt(bytes_to_gib(m.memory.slope)) << " GiB/sample + "
                << fmt(bytes_to_gib(m.memory.intercept)) << " GiB (max residual "
                << fmt(m.memory.max_rel_residual * 100, 2) << "%)\n";
      if (m.fwd.continuity_gap() > 0.05 || m.bwd.continuity_gap() > 0.05) {
        report.warn(doc.key() + ": extrapolation misses the last profiled point by more than 5%");
      }
      perf.models.emplace(doc.key(), m);
    }
  }
  if (perf.models.empty()) throw ValidationError("no profiles to fit");
  write_json_file(a.out, perf_to_json(perf));
  report.add_output(a.out);
  return kExitOk;
}

std::string latency_csv(const Loaded& l) {
  std::ostringstream os;
  os << "gpu_id,microbatch,fwd_ms,bwd_ms,compute_mem_gib,fits\n";
  for (std::size_t i = 0; i < l.cluster.gpus.size(); ++i) {
    const GpuPerfModel& m = l.perf.at(l.cluster.gpus[i].profile_key);
    for (std::int64_t mb = 1; mb <= l.model.global_batch; ++mb) {
      os << l.cluster.gpus[i].id << ',' << mb << ',' << m.fwd.eval(mb) << ',' << m.bwd.eval(mb) << ','
         << bytes_to_gib(m.memory.eval(mb)) << ','
         << (m.memory.eval(mb) <= l.cluster.effective_capacity(i) ? 1 : 0) << '\n';
    }
  }
  return os.str();
}

Json optimizer_report_json(const OptimizerReport& r) {
  Json j;
  j["objective_ms"] = r.objective;
  j["chosen_microbatch_mass"] = r.chosen_k;
  j["cells"] = r.cells;
  j["transitions_evaluated"] = r.transitions_evaluated;
  j["pairs_skipped_memory"] = r.pairs_skipped_memory;
  j["pairs_pruned_dominance"] = r.pairs_pruned_dominance;
  j["upper_bound_ms"] = std::isfinite(r.upper_bound) ? Json(r.upper_bound) : Json(nullptr);
  j["threads"] = r.threads;
  j["assumed_uneven"] = r.assumed_uneven;
  j["partition_uneven"] = r.partition_uneven;
  return j;
}

int cmd_plan(const PlanArgs& a, cli::RunReport& report) {
  Loaded l = load_inputs(a.in, report);
  if (a.batch > 0) l.model.global_batch = a.batch;
  validate_model(l.model);
  const std::uint64_t budget = complexity_budget(static_cast<std::int64_t>(l.cluster.size()), l.model.global_batch);
  const double estimate = static_cast<double>(budget) / kTransitionsPerSecond;
  if (a.time_budget > 0 && estimate > a.time_budget) {
    report.warn("estimated optimizer work " + std::to_string(budget) + " transitions (~" + fmt(estimate, 1) +
                " s unpruned) exceeds --time-budget " + fmt(a.time_budget, 1) + " s");
    std::cerr << "warning: " << report.warnings().back() << "\n";
  }
  OptimizerOptions opt;
  opt.allow_idle = a.allow_idle;
  opt.prune = !a.no_prune;
  opt.threads = thread_setting(a.threads);
  OptimizeResult res = dp_optimize(l.cluster, l.model, l.perf, opt);
  std::vector<double> ratios;
  for (const auto& as : res.plan.assignments) ratios.push_back(as.state_ratio);
  res.plan.unit_shards = assign_unit_shards(ratios, l.model);

  write_json_file(a.out, plan_to_json(res.plan));
  report.add_output(a.out);
  const Json opt_json = optimizer_report_json(res.report);
  report.set("optimizer", opt_json);
  if (!a.report.empty()) {
    write_json_file(a.report, opt_json);
    report.add_output(a.report);
  }
  if (!a.csv.empty()) {
    write_text(a.csv, latency_csv(l));
    report.add_output(a.csv);
  }

  std::cout << "plan: B=" << l.model.global_batch << " over " << l.cluster.size() << " GPUs, layer latency "
            << fmt(res.plan.predicted_layer_fwd) << " + " << fmt(res.plan.predicted_layer_bwd)
            << " ms, iteration " << fmt(res.plan.predicted_iteration) << " ms\n";
  for (const auto& as : res.plan.assignments) {
    std::cout << "  " << as.gpu_id << ": ";
    if (as.idle()) {
      std::cout << "idle";
    } else {
      std::cout << "m=" << as.microbatch << " l=" << as.num_microbatches << " b=" << as.batch;
    }
    std::cout << " state " << fmt(as.state_ratio * 100, 2) << "%\n";
  }
  std::cout << "optimizer: " << res.report.transitions_evaluated << " transitions, "
            << res.report.pairs_skipped_memory << " (m,l) skipped by memory, " << res.report.pairs_pruned_dominance
            << " pruned by bound, " << fmt(res.report.wall_seconds, 3) << " s\n";
  return kExitOk;
}

std::string sim_csv(const SimResult& r, const ClusterSpec& cluster) {
  std::ostringstream os;
  os << "gpu_id,compute_busy_ms,exposed_comm_ms,exposed_transfer_ms,peak_gpu_gib,peak_activation_gib,peak_cpu_gib\n";
  for (std::size_t i = 0; i < cluster.gpus.size(); ++i) {
    os << cluster.gpus[i].id << ',' << r.compute_busy_ms[i] << ',' << r.exposed_comm_per_gpu[i] << ','
       << r.exposed_transfer_per_gpu[i] << ',' << bytes_to_gib(r.peak_gpu_memory[i]) << ','
       << bytes_to_gib(r.peak_activation_residency[i]) << ',' << bytes_to_gib(r.peak_cpu_buffer[i]) << '\n';
  }
  return os.str();
}

int cmd_simulate(const SimArgs& a, cli::RunReport& report) {
  Loaded l = load_inputs(a.in, report);
  SimConfig cfg;
  cfg.plan = load_plan(a.plan);
  report.add_input(a.plan);
  l.model.global_batch = cfg.plan.total_batch();
  cfg.cluster = l.cluster;
  cfg.model = l.model;
  cfg.perf = l.perf;
  cfg.offload_enabled = a.offload;
  if (a.offload_gbps > 0) cfg.offload_bandwidth = a.offload_gbps * 1e6;  // bytes per ms
  cfg.activation_bytes_per_sample = a.act_mib * 1024.0 * 1024.0;
  cfg.recompute_multiplier = a.recompute;

  const SimResult r = simulate_iteration(cfg);
  const CrosscheckReport cc = crosscheck_optimizer(cfg.plan, cfg);
  const auto lint = lint_trace(r, cfg);
  for (const auto& p : lint) report.warn("trace: " + p);

  std::cout << "iteration " << fmt(r.iteration_ms) << " ms (per layer " << fmt(r.per_layer_fwd_ms) << " fwd, "
            << fmt(r.per_layer_bwd_ms) << " bwd), exposed comm " << fmt(r.exposed_comm_ms) << " ms, exposed transfer "
            << fmt(r.exposed_transfer_ms) << " ms\n";
  for (std::size_t i = 0; i < cfg.cluster.gpus.size(); ++i) {
    std::cout << "  " << cfg.cluster.gpus[i].id << ": peak " << fmt(bytes_to_gib(r.peak_gpu_memory[i]), 3)
              << " GiB, activations " << fmt(bytes_to_gib(r.peak_activation_residency[i]), 3) << " GiB, cpu buffer "
              << fmt(bytes_to_gib(r.peak_cpu_buffer[i]), 3) << " GiB\n";
  }
  std::cout << "crosscheck: predicted " << fmt(cc.predicted_iteration) << " ms, simulated "
            << fmt(cc.simulated_iteration) << " ms, error " << fmt(cc.relative_error * 100, 3) << "% (edge bound "
            << fmt(cc.edge_bound * 100, 3) << "%)\n";
  report.set("crosscheck", {{"predicted_ms", cc.predicted_iteration},
                            {"simulated_ms", cc.simulated_iteration},
                            {"relative_error", cc.relative_error},
                            {"edge_bound", cc.edge_bound}});

  if (!a.trace_out.empty()) {
    if (a.trace_format == "chrome") {
      write_json_file(a.trace_out, trace_to_chrome(r.trace, cfg.cluster.gpus));
    } else {
      write_text(a.trace_out, trace_to_jsonl(r.trace));
    }
    report.add_output(a.trace_out);
  }
  if (!a.csv.empty()) {
    write_text(a.csv, sim_csv(r, cfg.cluster));
    report.add_output(a.csv);
  }
  return lint.empty() ? kExitOk : kExitCheckFailed;
}

int cmd_check_plan(const CheckPlanArgs& a, cli::RunReport& report) {
  const Loaded l = load_inputs(a.in, report);
  ModelSpec model = l.model;
  const TrainPlan plan = load_plan(a.plan);
  report.add_input(a.plan);
  const auto violations = validate_plan(plan, l.cluster, model, l.perf);
  Json list = Json::array();
  for (const auto& v : violations) {
    std::cout << "FAIL " << constraint_name(v.constraint) << (v.gpu_id.empty() ? "" : " [" + v.gpu_id + "]")
              << ": " << v.message << "\n";
    list.push_back({{"constraint", constraint_name(v.constraint)}, {"gpu_id", v.gpu_id}, {"message", v.message}});
  }
  report.set("violations", list);
  if (violations.empty()) std::cout << "PASS plan satisfies all constraints\n";
  return violations.empty() ? kExitOk : kExitCheckFailed;
}

int cmd_check_grad(const CheckGradArgs& a, cli::RunReport& report) {
  constexpr double kTolerance = 1e-12;
  std::vector<GradFixture> fixtures;
  if (!a.fixture.empty()) {
    fixtures.push_back(grad_fixture_from_json(read_json_file(a.fixture)));
    report.add_input(a.fixture);
  }
  if (a.random) {
    report.set_seed(a.seed);
    for (std::int64_t k = 0; k < a.count; ++k) fixtures.push_back(random_grad_fixture(a.seed + static_cast<std::uint64_t>(k)));
  }
  if (fixtures.empty()) throw ParseError("check grad needs --fixture or --random");
  double worst = 0;
  for (const auto& f : fixtures) worst = std::max(worst, max_relative_error(weighted_combine(f), global_mean(f)));
  report.set("max_relative_error", worst);
  const bool ok = worst <= kTolerance;
  std::cout << (ok ? "PASS" : "FAIL") << " weighted combination vs global mean over " << fixtures.size()
            << " fixture(s): max relative error " << worst << " (tolerance " << kTolerance << ")\n";
  return ok ? kExitOk : kExitCheckFailed;
}

int cmd_check_oracle(const CheckOracleArgs& a, cli::RunReport& report) {
  report.set_seed(a.seed);
  std::int64_t mismatches = 0, feasible = 0;
  for (std::int64_t k = 0; k < a.instances; ++k) {
    const Instance inst = random_instance(a.seed * 1000003ULL + static_cast<std::uint64_t>(k));
    std::optional<OptimizeResult> dp, bf;
    std::string dp_err, bf_err;
    try {
      dp = dp_optimize(inst.cluster, inst.model, inst.perf);
    } catch (const InfeasibleError& e) {
      dp_err = e.constraint();
    }
    try {
      bf = brute_force_optimize(inst.cluster, inst.model, inst.perf);
    } catch (const InfeasibleError& e) {
      bf_err = e.constraint();
    }
    bool ok = dp.has_value() == bf.has_value();
    if (ok && dp) {
      ++feasible;
      const double x = dp->report.objective, y = bf->report.objective;
      ok = std::abs(x - y) <= 1e-9 * std::max(std::abs(x), std::abs(y));
      ok = ok && validate_plan(dp->plan, inst.cluster, inst.model, inst.perf).empty();
    }
    if (!ok) {
      ++mismatches;
      std::cout << "FAIL instance " << k << ": dp " << (dp ? fmt(dp->report.objective, 9) : "infeasible " + dp_err)
                << ", brute force " << (bf ? fmt(bf->report.objective, 9) : "infeasible " + bf_err) << "\n";
    }
  }
  report.set("instances", a.instances);
  report.set("feasible", feasible);
  report.set("mismatches", mismatches);
  std::cout << (mismatches == 0 ? "PASS" : "FAIL") << " DP vs exhaustive search: " << a.instances << " instances ("
            << feasible << " feasible), " << mismatches << " mismatches\n";
  return mismatches == 0 ? kExitOk : kExitCheckFailed;
}

void add_model_inputs(CLI::App* cmd, ModelInputs& in) {
  cmd->add_option("--cluster", in.cluster, "Cluster JSON")->required()->check(CLI::ExistingFile);
  cmd->add_option("--model", in.model, "Model JSON")->required()->check(CLI::ExistingFile);
  cmd->add_option("--perf", in.perf, "Fitted performance models JSON")->required()->check(CLI::ExistingFile);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Training planner for heterogeneous GPU clusters"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--run-report", common.run_report, "Write the run report here instead of stderr");

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit latency and memory models from profiles");
  fit_cmd->add_option("profiles", fit.profiles, "Profile JSON files")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("-o,--out", fit.out, "Output model file")->required();
  fit_cmd->add_option("--linear-from", fit.linear_from, "First microbatch of the linear regime");

  PlanArgs plan;
  auto* plan_cmd = app.add_subcommand("plan", "Choose per-GPU batch, microbatch and state shares");
  add_model_inputs(plan_cmd, plan.in);
  plan_cmd->add_option("--batch", plan.batch, "Global batch size (overrides the model file)");
  plan_cmd->add_flag("--allow-idle", plan.allow_idle, "Allow GPUs with no compute");
  plan_cmd->add_flag("--no-prune", plan.no_prune, "Disable bound-based pruning");
  plan_cmd->add_option("--time-budget", plan.time_budget, "Warn when estimated optimizer time exceeds this (s)");
  plan_cmd->add_option("--threads", plan.threads, "Optimizer threads (0 = auto; default HETPLAN_THREADS)");
  plan_cmd->add_option("-o,--out", plan.out, "Output plan file")->required();
  plan_cmd->add_option("--report", plan.report, "Write optimizer counters here");
  plan_cmd->add_option("--emit-csv", plan.csv, "Write per-GPU latency/memory curves as CSV");

  SimArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Simulate one training iteration of a plan");
  add_model_inputs(sim_cmd, sim.in);
  sim_cmd->add_option("--plan", sim.plan, "Plan JSON")->required()->check(CLI::ExistingFile);
  sim_cmd->add_flag("--offload,!--no-offload", sim.offload, "Offload boundary activations to the CPU");
  sim_cmd->add_option("--offload-gbps", sim.offload_gbps, "CPU-GPU bandwidth in GB/s (default unlimited)");
  sim_cmd->add_option("--activation-mib", sim.act_mib, "Boundary activation size per sample (MiB)");
  sim_cmd->add_option("--recompute", sim.recompute, "Extra recompute per backward, multiple of forward");
  sim_cmd->add_option("--trace-out", sim.trace_out, "Write the event trace here");
  sim_cmd->add_option("--trace-format", sim.trace_format, "jsonl or chrome")
      ->check(CLI::IsMember({"jsonl", "chrome"}));
  sim_cmd->add_option("--emit-csv", sim.csv, "Write per-GPU summary as CSV");

  auto* check_cmd = app.add_subcommand("check", "Run a verification check");
  check_cmd->require_subcommand(1);
  CheckPlanArgs check_plan;
  auto* cp = check_cmd->add_subcommand("plan", "Validate a plan against constraints");
  add_model_inputs(cp, check_plan.in);
  cp->add_option("--plan", check_plan.plan, "Plan JSON")->required()->check(CLI::ExistingFile);
  CheckGradArgs check_grad;
  auto* cg = check_cmd->add_subcommand("grad", "Check the weighted gradient combination");
  cg->add_option("--fixture", check_grad.fixture, "Gradient fixture JSON")->check(CLI::ExistingFile);
  cg->add_flag("--random", check_grad.random, "Generate random fixtures");
  cg->add_option("--seed", check_grad.seed, "Random seed");
  cg->add_option("--count", check_grad.count, "Number of random fixtures")->check(CLI::PositiveNumber);
  CheckOracleArgs check_oracle;
  auto* co = check_cmd->add_subcommand("oracle", "Compare the DP against exhaustive search");
  co->add_option("--seed", check_oracle.seed, "Random seed");
  co->add_option("--instances", check_oracle.instances, "Number of random instances")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  std::string name;
  for (auto* sub = app.get_subcommands().front(); sub; sub = sub->get_subcommands().empty() ? nullptr : sub->get_subcommands().front()) {
    name += (name.empty() ? "" : " ") + sub->get_name();
  }
  cli::RunReport report(name);
  int code = kExitOk;
  try {
    if (fit_cmd->parsed()) code = cmd_fit(fit, report);
    else if (plan_cmd->parsed()) code = cmd_plan(plan, report);
    else if (sim_cmd->parsed()) code = cmd_simulate(sim, report);
    else if (cp->parsed()) code = cmd_check_plan(check_plan, report);
    else if (cg->parsed()) code = cmd_check_grad(check_grad, report);
    else if (co->parsed()) code = cmd_check_oracle(check_oracle, report);
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible (" << e.constraint() << "): " << e.what() << "\n";
    report.warn(e.what());
    report.set("binding_constraint", e.constraint());
    code = kExitInfeasible;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    report.warn(e.what());
    code = kExitInput;
  }
  report.set_exit_code(code);
  try {
    if (common.run_report.empty()) {
      std::cerr << report.to_json().dump() << "\n";
    } else {
      write_json_file(common.run_report, report.to_json());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: cannot write run report: " << e.what() << "\n";
    if (code == kExitOk) code = kExitInput;
  }
  return code;
}
