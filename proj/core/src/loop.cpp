#include "road/loop.hpp"

#include <atomic>
#include <ctime>
#include <exception>
#include <set>
#include <thread>

#include "road/errors.hpp"
#include "road/run_store.hpp"

namespace road {

void LoopConfig::check() const {
  if (t_max < 1) throw InvalidArgument("t_max must be at least 1");
  if (patience < 1) throw InvalidArgument("patience must be at least 1");
  if (patience > t_max) throw InvalidArgument("patience must not exceed t_max");
  if (max_failures_analyzed < 1) throw InvalidArgument("max_failures_analyzed must be at least 1");
  if (parallelism < 1) throw InvalidArgument("parallelism must be at least 1");
  if (max_log_chars < 64) throw InvalidArgument("max_log_chars must be at least 64");
}

void to_json(nlohmann::json& j, const LoopConfig& c) {
  j = {{"t_max", c.t_max},
       {"patience", c.patience},
       {"evolve_policy", to_string(c.evolve_policy)},
       {"max_failures_analyzed", c.max_failures_analyzed},
       {"max_log_chars", c.max_log_chars},
       {"parallelism", c.parallelism}};
}

void from_json(const nlohmann::json& j, LoopConfig& c) {
  c = LoopConfig{};
  c.t_max = j.value("t_max", c.t_max);
  c.patience = j.value("patience", c.patience);
  c.evolve_policy = evolve_policy_from_string(j.value("evolve_policy", std::string("append")));
  c.max_failures_analyzed = j.value("max_failures_analyzed", c.max_failures_analyzed);
  c.max_log_chars = j.value("max_log_chars", c.max_log_chars);
  c.parallelism = j.value("parallelism", c.parallelism);
}

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::no_failures: return "no_failures";
    case StopReason::patience_exhausted: return "patience_exhausted";
    case StopReason::budget_exhausted: return "budget_exhausted";
    case StopReason::interrupted: return "interrupted";
  }
  return "budget_exhausted";
}

StopReason stop_reason_from_string(const std::string& s) {
  if (s == "no_failures") return StopReason::no_failures;
  if (s == "patience_exhausted") return StopReason::patience_exhausted;
  if (s == "budget_exhausted") return StopReason::budget_exhausted;
  if (s == "interrupted") return StopReason::interrupted;
  throw InvalidArgument("unknown stop reason '" + s + "'");
}

bool accept_candidate(const EvalSummary& candidate, const EvalSummary& current) {
  if (current.n_tasks != candidate.n_tasks) throw InvalidArgument("incomparable evaluations");
  return candidate.success_rate > current.success_rate;
}

std::vector<std::size_t> select_failures(std::size_t n, std::size_t cap) {
  std::vector<std::size_t> idx;
  const std::size_t m = (cap == 0 || cap >= n) ? n : cap;
  idx.reserve(m);
  for (std::size_t i = 0; i < m; ++i) idx.push_back(m == n ? i : i * n / m);
  return idx;
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  workers = std::max<std::size_t>(1, std::min(workers, n));
  std::vector<std::exception_ptr> errors(n);
  auto guarded = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) guarded(i);
      });
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// RoadSteps

RoadSteps::RoadSteps(std::span<const TaskSpec> tasks, const Environment& env, LoopAgents agents, LoopConfig config)
    : tasks_(tasks.begin(), tasks.end()), env_(env), agents_(std::move(agents)), config_(std::move(config)) {
  if (tasks_.empty()) throw InvalidArgument("no tasks to evaluate");
  std::set<std::string> ids;
  for (const auto& t : tasks_)
    if (!ids.insert(t.task_id).second) throw InvalidArgument("duplicate task_id '" + t.task_id + "'");
  if (!agents_.contestant || !agents_.analyzer || !agents_.optimizer)
    throw InvalidArgument("contestant, analyzer and optimizer backends are required");
  if (config_.evolve_policy == EvolvePolicy::rewrite && !agents_.coach)
    throw InvalidArgument("the rewrite policy needs a coach backend");
  config_.check();
}

std::vector<TaskOutcome> RoadSteps::evaluate(const PromptArtifact& prompt) {
  std::vector<TaskOutcome> outcomes(tasks_.size());
  parallel_for(tasks_.size(), config_.parallelism,
               [&](std::size_t i) { outcomes[i] = env_.run(prompt, tasks_[i], *agents_.contestant); });
  return outcomes;
}

Proposal RoadSteps::propose(const PromptArtifact& current, std::span<const FailureCase> failures) {
  Proposal p;
  p.analyses.resize(failures.size());
  parallel_for(failures.size(), config_.parallelism, [&](std::size_t i) {
    p.analyses[i] = analyze_failure(failures[i], *agents_.analyzer, agents_.analyzer_prompt, agents_.analyzer_settings,
                                    config_.max_log_chars);
  });
  std::vector<AnalysisReport> reports;
  for (const auto& a : p.analyses)
    if (a.report) reports.push_back(*a.report);
  if (reports.empty()) {
    p.error = "no failure could be analyzed";
    return p;
  }
  try {
    p.aggregation = aggregate_patterns(reports, *agents_.optimizer, agents_.optimizer_prompt,
                                       agents_.optimizer_settings);
  } catch (const AgentFailure& e) {
    AggregationAttempt failed;
    failed.calls = 2;
    failed.rejected_outputs = e.rejected_outputs();
    p.aggregation = std::move(failed);
    p.error = e.what();
    return p;
  }
  try {
    p.protocol = build_decision_tree(p.aggregation->patterns);
  } catch (const Error& e) {
    p.error = std::string("protocol synthesis failed: ") + e.what();
    return p;
  }
  p.evolution = evolve_prompt(current, *p.protocol, config_.evolve_policy, agents_.coach, agents_.coach_prompt,
                              agents_.coach_settings);
  return p;
}

// Driver

namespace {

void say(const LoopHooks& hooks, const std::string& line) {
  if (hooks.log) hooks.log(line);
}

nlohmann::json run_meta(const OptimizationRun& run, const std::string& created_at, const std::string& status) {
  nlohmann::json j;
  j["run_id"] = run.run_id;
  j["created_at"] = created_at;
  j["status"] = status;
  j["iterations_completed"] = run.iterations.size();
  if (status == "running") return j;
  j["stop_reason"] = to_string(run.stop_reason);
  j["stopped_at_t"] = run.stopped_at_t;
  j["final_prompt_version"] = run.final_prompt.version;
  j["initial_eval"] = run.initial_eval;
  j["final_eval"] = run.final_eval;
  return j;
}

struct LoopState {
  PromptArtifact current;
  std::vector<TaskOutcome> cached;  // outcomes of `current`; empty when unknown
  int t = 0;
  int k = 0;
};

OptimizationRun drive(OptimizationRun run, LoopState st, LoopSteps& steps, RunStore* store,
                      const std::string& created_at, const LoopHooks& hooks) {
  const LoopConfig& cfg = run.config;
  auto finish = [&](StopReason reason) {
    run.stop_reason = reason;
    run.stopped_at_t = st.t;
    run.final_prompt = st.current;
    run.final_eval = summarize(st.cached);
    if (store) {
      store->write_final_prompt(run.final_prompt);
      store->write_run_meta(run_meta(run, created_at, reason == StopReason::interrupted ? "interrupted" : "finished"));
    }
    say(hooks, "stopped: " + to_string(reason) + " at t=" + std::to_string(st.t) + ", success rate " +
                   format_rate(run.final_eval.success_rate));
    return run;
  };

  while (st.t < cfg.t_max) {
    ++st.t;
    IterationRecord rec;
    rec.t = st.t;
    rec.prompt_in_version = st.current.version;
    rec.eval_in_reused = !st.cached.empty();
    if (st.cached.empty()) st.cached = steps.evaluate(st.current);
    rec.outcomes_in = st.cached;
    rec.eval_in = summarize(rec.outcomes_in);
    if (run.iterations.empty() && st.t == 1) run.initial_eval = rec.eval_in;
    say(hooks, "t=" + std::to_string(st.t) + ": prompt v" + std::to_string(st.current.version) + " success rate " +
                   format_rate(rec.eval_in.success_rate));

    rec.failures = filter_failures(rec.outcomes_in);
    if (rec.failures.empty()) return finish(StopReason::no_failures);

    std::vector<FailureCase> selected;
    for (const auto i : select_failures(rec.failures.size(), cfg.max_failures_analyzed)) {
      selected.push_back(rec.failures[i]);
      rec.analyzed_task_ids.push_back(rec.failures[i].task_id);
    }
    rec.proposal = steps.propose(st.current, selected);

    if (rec.proposal.evolution) {
      const auto& candidate = rec.proposal.evolution->prompt;
      rec.outcomes_candidate = steps.evaluate(candidate);
      rec.eval_candidate = summarize(rec.outcomes_candidate);
      rec.accepted = accept_candidate(*rec.eval_candidate, rec.eval_in);
    }
    if (rec.accepted) {
      st.current = rec.proposal.evolution->prompt;
      st.cached = rec.outcomes_candidate;
      st.k = 0;
    } else {
      ++st.k;
    }
    rec.patience_after = st.k;
    say(hooks, "t=" + std::to_string(st.t) + ": " +
                   (rec.accepted ? "accepted v" + std::to_string(st.current.version)
                                 : "rejected (" +
                                       (rec.eval_candidate ? format_rate(rec.eval_candidate->success_rate)
                                                           : rec.proposal.error) +
                                       ")"));

    std::optional<StopReason> stop;
    if (!rec.accepted && st.k >= cfg.patience) stop = StopReason::patience_exhausted;
    else if (st.t >= cfg.t_max) stop = StopReason::budget_exhausted;
    rec.stop_reason = stop;
    run.iterations.push_back(rec);
    if (store) {
      store->write_iteration(run.iterations.back());
      store->write_run_meta(run_meta(run, created_at, "running"));
    }
    if (stop) return finish(*stop);
    if (hooks.on_iteration && !hooks.on_iteration(run.iterations.back())) {
      run.iterations.back().stop_reason = StopReason::interrupted;
      return finish(StopReason::interrupted);
    }
  }
  return finish(StopReason::budget_exhausted);
}

}  // namespace

OptimizationRun run_loop(const PromptArtifact& initial, LoopSteps& steps, const LoopConfig& config, RunStore* store,
                         const LoopHooks& hooks) {
  config.check();
  initial.check();
  if (initial.version != 0) throw InvalidArgument("the loop starts from a version 0 prompt");
  OptimizationRun run;
  run.config = config;
  run.initial_prompt = initial;
  run.final_prompt = initial;
  std::string created_at;
  if (store) {
    if (!store->exists()) throw PersistenceError("run store " + store->run_id() + " has not been created");
    run.run_id = store->run_id();
    created_at = hooks.now ? hooks.now() : utc_timestamp();
    store->write_run_meta(run_meta(run, created_at, "running"));
  }
  return drive(std::move(run), LoopState{initial, {}, 0, 0}, steps, store, created_at, hooks);
}

OptimizationRun run_road(const PromptArtifact& initial, std::span<const TaskSpec> tasks, const Environment& env,
                         LoopAgents agents, const LoopConfig& config, RunStore* store, const LoopHooks& hooks) {
  RoadSteps steps(tasks, env, std::move(agents), config);
  return run_loop(initial, steps, config, store, hooks);
}

OptimizationRun resume_loop(RunStore& store, LoopSteps& steps, const LoopConfig& config, const LoopHooks& hooks) {
  config.check();
  const auto stored = store.read_loop_config();
  if (!(stored == config)) throw InvalidArgument("loop config differs from the one stored with run " + store.run_id());
  const auto meta = store.read_run_meta();
  const std::string created_at = meta.value("created_at", std::string());

  OptimizationRun run;
  run.run_id = store.run_id();
  run.config = config;
  run.initial_prompt = store.read_initial_prompt();
  run.final_prompt = run.initial_prompt;

  const auto removed = store.remove_partial_iterations();
  if (removed) say(hooks, "removed " + std::to_string(removed) + " partial iteration(s)");
  run.iterations = store.read_iterations();

  LoopState st{run.initial_prompt, {}, 0, 0};
  for (const auto& rec : run.iterations) {
    st.t = rec.t;
    if (rec.accepted) {
      st.current = rec.proposal.evolution->prompt;
      st.cached = rec.outcomes_candidate;
    } else {
      st.cached = rec.outcomes_in;
    }
    st.k = rec.patience_after;
  }
  if (!run.iterations.empty()) run.initial_eval = run.iterations.front().eval_in;

  const auto status = meta.value("status", std::string("running"));
  if (status == "finished") {
    run.final_prompt = st.current;
    run.stop_reason = stop_reason_from_string(meta.at("stop_reason").get<std::string>());
    run.stopped_at_t = meta.at("stopped_at_t").get<int>();
    run.initial_eval = meta.at("initial_eval").get<EvalSummary>();
    run.final_eval = meta.at("final_eval").get<EvalSummary>();
    return run;
  }
  if (!run.iterations.empty()) {
    // An interrupted last iteration carries the marker only in memory; clear it before continuing.
    auto& last = run.iterations.back();
    if (last.stop_reason == StopReason::interrupted) last.stop_reason.reset();
    if (last.stop_reason) {
      run.final_prompt = st.current;
      run.stop_reason = *last.stop_reason;
      run.stopped_at_t = st.t;
      run.final_eval = summarize(st.cached);
      store.write_final_prompt(run.final_prompt);
      store.write_run_meta(run_meta(run, created_at, "finished"));
      return run;
    }
  }
  say(hooks, "resuming " + run.run_id + " after t=" + std::to_string(st.t));
  return drive(std::move(run), std::move(st), steps, &store, created_at, hooks);
}

}  // namespace road
