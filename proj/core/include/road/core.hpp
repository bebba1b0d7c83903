#pragma once

// Domain types shared by every module, and the filtering / metric primitives.

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace road {

/// A system prompt plus its lineage. Version 0 is the seed prompt.
struct PromptArtifact {
  std::string text;
  std::int64_t version = 0;
  std::optional<std::int64_t> parent_version;
  std::optional<std::string> embedded_protocol_id;

  /// Seed prompt, version 0, no parent.
  static PromptArtifact initial(std::string text);

  /// Throws InvalidArgument if the lineage invariants do not hold.
  void check() const;

  friend bool operator==(const PromptArtifact&, const PromptArtifact&) = default;
};

enum class Speaker { system, user, assistant, tool };

std::string to_string(Speaker s);
Speaker speaker_from_string(const std::string& s);

struct ToolCall {
  std::string name;
  std::vector<std::pair<std::string, std::string>> args;
  bool ok = false;
  std::string result;

  friend bool operator==(const ToolCall&, const ToolCall&) = default;
};

struct Turn {
  Speaker speaker = Speaker::user;
  std::string content;
  std::vector<ToolCall> tool_calls;

  friend bool operator==(const Turn&, const Turn&) = default;
};

struct RetrievalEvent {
  std::string query_text;
  std::vector<std::int64_t> returned_chunk_ids;
  std::optional<std::int64_t> expected_chunk_id;

  /// True iff the expected chunk is among the returned ids. False when unlabeled.
  bool hit() const;

  friend bool operator==(const RetrievalEvent&, const RetrievalEvent&) = default;
};

struct TaskOutcome {
  std::string task_id;
  bool success = false;
  std::vector<Turn> transcript;
  std::string judge_notes;
  std::optional<std::vector<RetrievalEvent>> retrieval_trace;

  friend bool operator==(const TaskOutcome&, const TaskOutcome&) = default;
};

/// A failed outcome together with its rendered log. Only make_failure_case builds one.
struct FailureCase {
  std::string task_id;
  TaskOutcome outcome;
  std::string raw_log;
};

/// Throws InvalidArgument when outcome.success is true.
FailureCase make_failure_case(TaskOutcome outcome);

/// Exact count ratio. Comparisons cross-multiply, so no rounding enters an accept decision.
class Rate {
 public:
  Rate() = default;
  Rate(std::int64_t numerator, std::int64_t denominator);

  std::int64_t numerator() const noexcept { return num_; }
  std::int64_t denominator() const noexcept { return den_; }
  double value() const noexcept { return static_cast<double>(num_) / static_cast<double>(den_); }

  friend std::strong_ordering operator<=>(const Rate& a, const Rate& b) noexcept;
  friend bool operator==(const Rate& a, const Rate& b) noexcept { return (a <=> b) == 0; }

 private:
  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

/// "0.736" style rendering used in reports and tables.
std::string format_rate(const Rate& r, int decimals = 3);

struct TaskVerdict {
  std::string task_id;
  bool success = false;
  friend bool operator==(const TaskVerdict&, const TaskVerdict&) = default;
};

struct EvalSummary {
  Rate success_rate;
  std::optional<Rate> search_hit_rate;
  std::int64_t n_tasks = 0;
  std::vector<TaskVerdict> per_task;

  friend bool operator==(const EvalSummary&, const EvalSummary&) = default;
};

// Operations

/// Keeps the unsuccessful outcomes, in input order.
std::vector<FailureCase> filter_failures(std::span<const TaskOutcome> outcomes);

/// Deterministic plain-text log: "turn N [speaker]: content", tool-call lines, judge verdict.
std::string render_raw_log(const TaskOutcome& outcome);

/// Throws InvalidArgument("no tasks evaluated") on empty input.
Rate compute_success_rate(std::span<const TaskOutcome> outcomes);

/// Throws InvalidArgument on empty input or on an event without an expected chunk id.
Rate compute_search_hit_rate(std::span<const RetrievalEvent> events);

/// Success rate over all outcomes; hit rate over every labeled retrieval event (absent if none).
EvalSummary summarize(std::span<const TaskOutcome> outcomes);

// JSON

void to_json(nlohmann::json& j, const ToolCall& v);
void from_json(const nlohmann::json& j, ToolCall& v);
void to_json(nlohmann::json& j, const Turn& v);
void from_json(const nlohmann::json& j, Turn& v);
void to_json(nlohmann::json& j, const RetrievalEvent& v);
void from_json(const nlohmann::json& j, RetrievalEvent& v);
void to_json(nlohmann::json& j, const TaskOutcome& v);
void from_json(const nlohmann::json& j, TaskOutcome& v);
void to_json(nlohmann::json& j, const EvalSummary& v);
void from_json(const nlohmann::json& j, EvalSummary& v);
void to_json(nlohmann::json& j, const PromptArtifact& v);
void from_json(const nlohmann::json& j, PromptArtifact& v);

}  // namespace road
