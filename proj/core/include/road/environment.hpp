#pragma once

// Environments the contestant agent is evaluated in.
//
// Agent <-> environment conventions (plain text inside the assistant reply):
//   [tool_name(key=value, key="value, with commas")]   one tool call; list values use '|'
//   [end]                                               agent closes the conversation
//   SEARCH: <query>                                     retrieval directive (line start)
//   NO_DATA: <message>                                  out-of-scope disclaimer (line start)

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "road/backend.hpp"
#include "road/core.hpp"

namespace road {

enum class TaskKind { tool, retrieval };

struct UserVariant {
  /// Chosen when the previous agent reply contains this text.
  std::string if_agent_contains;
  std::string say;
};

struct UserTurn {
  std::string say;
  std::vector<UserVariant> variants;

  /// First variant whose trigger occurs in the previous agent reply, else `say`.
  const std::string& resolve(const std::string& previous_agent_reply) const;
};

struct RequiredCall {
  std::string tool;
  /// Arguments that must match exactly; unlisted arguments are free.
  std::map<std::string, std::string> args;
};

struct SuccessConditions {
  std::vector<RequiredCall> required_calls;
  /// Pairs (before, after): the first successful `before` precedes the first successful `after`.
  std::vector<std::pair<std::string, std::string>> ordering;
  /// Every successful state-changing call must follow a user turn that is exactly this token.
  std::optional<std::string> confirmation_token;
  std::optional<std::int64_t> expected_chunk_id;
  /// The correct behaviour is the no-data disclaimer.
  bool out_of_scope = false;

  bool empty() const;
};

struct TaskSpec {
  std::string task_id;
  TaskKind kind = TaskKind::tool;
  std::vector<UserTurn> user_script;
  /// Said once the script is exhausted, until the agent ends the episode. Tool tasks only.
  std::string followup = "Is there anything else you need from me?";
  SuccessConditions success;
};

void from_json(const nlohmann::json& j, TaskSpec& t);
void to_json(nlohmann::json& j, const TaskSpec& t);

std::vector<TaskSpec> load_tasks(const std::filesystem::path& path);

// Retail tool world

struct RetailUser {
  std::string user_id;
  std::string given_name;
  std::string last_name;
  std::string zip;
  std::string email;
};

struct RetailOrder {
  std::string order_id;
  std::string user_id;
  /// pending | pending_item_modified | delivered | cancelled
  std::string status;
  std::string address;
  std::vector<std::string> items;
};

struct RetailDb {
  std::vector<RetailUser> users;
  std::vector<RetailOrder> orders;
};

void from_json(const nlohmann::json& j, RetailDb& db);
RetailDb load_retail_db(const std::filesystem::path& path);

/// Per-episode world state: the database plus who has been authenticated.
struct RetailState {
  RetailDb db;
  std::optional<std::string> authenticated_user;
};

struct ToolResult {
  bool ok = false;
  std::string output;
};

using ToolArgs = std::vector<std::pair<std::string, std::string>>;

struct ToolSpec {
  std::string name;
  std::vector<std::string> params;
  bool mutates = false;
  std::function<ToolResult(RetailState&, const ToolArgs&)> effect;
};

class ToolRegistry {
 public:
  /// Throws InvalidArgument on a duplicate tool name.
  explicit ToolRegistry(std::vector<ToolSpec> tools);

  /// The retail workflows: lookups, cancellation, address and item modification, transfer.
  static ToolRegistry retail();

  const ToolSpec* find(const std::string& name) const;
  bool contains(const std::string& name) const { return find(name) != nullptr; }
  const std::vector<ToolSpec>& tools() const { return tools_; }

 private:
  std::vector<ToolSpec> tools_;
};

/// Throws InvalidArgument if the task has no success condition or references unknown tools.
void check_task(const TaskSpec& task, const ToolRegistry& registry);

struct ParsedCall {
  std::string name;
  ToolArgs args;
};

/// Every bracketed call in order of appearance. "[end]" is not a call.
std::vector<ParsedCall> parse_tool_calls(const std::string& reply);
bool has_end_directive(const std::string& reply);

// Retrieval world

struct Chunk {
  std::int64_t chunk_id = 0;
  std::string text;
};

struct Corpus {
  std::vector<Chunk> chunks;
};

/// Throws InvalidArgument on duplicate or negative ids.
void check_corpus(const Corpus& corpus);
void from_json(const nlohmann::json& j, Corpus& c);
Corpus load_corpus(const std::filesystem::path& path);

/// Lowercased, punctuation-stripped, de-duplicated tokens in first-seen order.
std::vector<std::string> normalize_tokens(const std::string& text);

/// Top-k chunk ids by (distinct query tokens present desc, chunk_id asc). A query with no tokens retrieves nothing.
std::vector<std::int64_t> retrieve(const std::string& query, const Corpus& corpus, std::size_t k);

struct Directive {
  enum class Kind { search, no_data } kind;
  std::string text;
};

/// First SEARCH:/NO_DATA: line of the reply, if any.
std::optional<Directive> parse_directive(const std::string& reply);

// Episodes

struct EpisodeSettings {
  std::string model_name = "contestant";
  double temperature = 0.0;
  std::int64_t max_tokens = 1024;
  std::size_t max_turns = 12;
  std::size_t top_k = 5;
};

TaskOutcome run_task(const PromptArtifact& prompt, const TaskSpec& task, ChatBackend& agent,
                     const ToolRegistry& registry, const RetailDb& db, const EpisodeSettings& settings = {});

TaskOutcome run_retrieval_task(const PromptArtifact& prompt, const TaskSpec& task, const Corpus& corpus,
                               ChatBackend& agent, const EpisodeSettings& settings = {});

/// What the optimization loop evaluates prompts against.
class Environment {
 public:
  virtual ~Environment() = default;
  /// Agent misbehaviour and transport errors become failed outcomes. ScriptError propagates,
  /// since it means the script itself is broken.
  virtual TaskOutcome run(const PromptArtifact& prompt, const TaskSpec& task, ChatBackend& agent) const = 0;
};

/// Retail tool tasks and retrieval tasks side by side, dispatched on TaskSpec::kind.
class DeskEnvironment final : public Environment {
 public:
  DeskEnvironment(ToolRegistry registry, RetailDb db, Corpus corpus, EpisodeSettings settings = {});

  TaskOutcome run(const PromptArtifact& prompt, const TaskSpec& task, ChatBackend& agent) const override;

  const ToolRegistry& registry() const { return registry_; }
  const Corpus& corpus() const { return corpus_; }
  const EpisodeSettings& settings() const { return settings_; }

 private:
  ToolRegistry registry_;
  RetailDb db_;
  Corpus corpus_;
  EpisodeSettings settings_;
};

}  // namespace road
