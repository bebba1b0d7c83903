#pragma once

// The outer optimization loop: evaluate, collect failures, analyze, aggregate,
// build a protocol, evolve the prompt, keep the candidate only if it scores higher.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "road/agents.hpp"
#include "road/backend.hpp"
#include "road/core.hpp"
#include "road/environment.hpp"
#include "road/protocol.hpp"

namespace road {

struct LoopConfig {
  /// Maximum number of iterations (T_max).
  int t_max = 5;
  /// Consecutive rejections tolerated before stopping (K). Must not exceed t_max.
  int patience = 2;
  EvolvePolicy evolve_policy = EvolvePolicy::append;
  /// Failures beyond this many are subsampled with an even stride.
  std::size_t max_failures_analyzed = 64;
  std::size_t max_log_chars = 8000;
  /// Concurrent task episodes and analyzer calls.
  std::size_t parallelism = 1;

  /// Throws InvalidArgument naming the offending field.
  void check() const;

  friend bool operator==(const LoopConfig&, const LoopConfig&) = default;
};

void to_json(nlohmann::json& j, const LoopConfig& c);
void from_json(const nlohmann::json& j, LoopConfig& c);

/// interrupted is not terminal: the run can be resumed.
enum class StopReason { no_failures, patience_exhausted, budget_exhausted, interrupted };

std::string to_string(StopReason r);
StopReason stop_reason_from_string(const std::string& s);

/// Everything one pass of the optimizer stage produced for a failure set.
struct Proposal {
  std::vector<AnalysisAttempt> analyses;
  std::optional<AggregationAttempt> aggregation;
  std::optional<DecisionTreeProtocol> protocol;
  std::optional<Evolution> evolution;
  /// Why no candidate came out; empty when evolution is set.
  std::string error;
};

struct IterationRecord {
  int t = 0;
  std::int64_t prompt_in_version = 0;
  EvalSummary eval_in;
  std::vector<TaskOutcome> outcomes_in;
  /// The evaluation of the current prompt was carried over from an earlier step.
  bool eval_in_reused = false;
  std::vector<FailureCase> failures;
  std::vector<std::string> analyzed_task_ids;
  Proposal proposal;
  std::optional<EvalSummary> eval_candidate;
  std::vector<TaskOutcome> outcomes_candidate;
  bool accepted = false;
  /// Consecutive rejections after this iteration.
  int patience_after = 0;
  /// Set on the last iteration of a run that stopped for patience, budget or interruption.
  std::optional<StopReason> stop_reason;
};

struct OptimizationRun {
  std::string run_id;
  LoopConfig config;
  PromptArtifact initial_prompt;
  /// Last accepted prompt, or the initial prompt.
  PromptArtifact final_prompt;
  std::vector<IterationRecord> iterations;
  StopReason stop_reason = StopReason::budget_exhausted;
  /// Value of t when the loop stopped.
  int stopped_at_t = 0;
  EvalSummary initial_eval;
  EvalSummary final_eval;
};

/// Strictly higher success rate wins; ties reject. Throws InvalidArgument("incomparable evaluations")
/// when the two summaries cover different task counts.
bool accept_candidate(const EvalSummary& candidate, const EvalSummary& current);

/// Evenly spaced indices floor(i * n / cap) for i < cap; all indices when cap >= n.
std::vector<std::size_t> select_failures(std::size_t n, std::size_t cap);

/// Runs fn(i) for i < n on at most `workers` threads. Rethrows the exception of the lowest index.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

/// The two expensive operations of the loop, separated from its control flow.
class LoopSteps {
 public:
  virtual ~LoopSteps() = default;
  /// One outcome per task, in task order.
  virtual std::vector<TaskOutcome> evaluate(const PromptArtifact& prompt) = 0;
  virtual Proposal propose(const PromptArtifact& current, std::span<const FailureCase> failures) = 0;
};

struct LoopAgents {
  ChatBackend* contestant = nullptr;
  ChatBackend* analyzer = nullptr;
  ChatBackend* optimizer = nullptr;
  /// Needed only by the rewrite policy.
  ChatBackend* coach = nullptr;
  RolePrompt analyzer_prompt = RolePrompt::builtin(AgentRole::analyzer);
  RolePrompt optimizer_prompt = RolePrompt::builtin(AgentRole::optimizer);
  RolePrompt coach_prompt = RolePrompt::builtin(AgentRole::coach);
  AgentSettings analyzer_settings;
  AgentSettings optimizer_settings;
  AgentSettings coach_settings;
};

/// Real steps: episodes in an Environment, proposals from the three agent roles.
class RoadSteps final : public LoopSteps {
 public:
  RoadSteps(std::span<const TaskSpec> tasks, const Environment& env, LoopAgents agents, LoopConfig config);

  std::vector<TaskOutcome> evaluate(const PromptArtifact& prompt) override;
  Proposal propose(const PromptArtifact& current, std::span<const FailureCase> failures) override;

 private:
  std::vector<TaskSpec> tasks_;
  const Environment& env_;
  LoopAgents agents_;
  LoopConfig config_;
};

class RunStore;

struct LoopHooks {
  /// Called after each completed (and persisted) iteration; returning false interrupts the run.
  std::function<bool(const IterationRecord&)> on_iteration;
  /// Progress lines.
  std::function<void(const std::string&)> log;
  /// Timestamp recorded as created_at; defaults to the current UTC time.
  std::function<std::string()> now;
};

/// Current UTC time as "YYYY-MM-DDTHH:MM:SSZ".
std::string utc_timestamp();

/// Drives the loop. With a store, every iteration is written before the next begins.
OptimizationRun run_loop(const PromptArtifact& initial, LoopSteps& steps, const LoopConfig& config,
                         RunStore* store = nullptr, const LoopHooks& hooks = {});

/// run_loop over RoadSteps.
OptimizationRun run_road(const PromptArtifact& initial, std::span<const TaskSpec> tasks, const Environment& env,
                         LoopAgents agents, const LoopConfig& config, RunStore* store = nullptr,
                         const LoopHooks& hooks = {});

/// Continues a stored run from its last complete iteration. A finished run is returned as loaded.
/// Throws InvalidArgument if `config` differs from the stored loop config.
OptimizationRun resume_loop(RunStore& store, LoopSteps& steps, const LoopConfig& config, const LoopHooks& hooks = {});

}  // namespace road
