#pragma once

// Chat-completion access for every agent role.
//
// Two implementations:
//   ScriptedBackend  replies from a table of ScriptEntry; no network, fully reproducible.
//   HttpBackend      OpenAI-compatible POST /v1/chat/completions with bounded retries.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace road {

enum class Role { system, user, assistant, tool };

std::string to_string(Role r);
Role role_from_string(const std::string& s);

struct ChatMessage {
  Role role = Role::user;
  std::string content;
  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatRequest {
  std::string model_name;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  std::int64_t max_tokens = 1024;
  std::optional<std::string> response_schema;

  /// Throws InvalidArgument if messages are empty or do not open with system/user.
  void check() const;
};

enum class FinishReason { stop, length, error };

struct Usage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

struct ChatResponse {
  std::string content;
  FinishReason finish_reason = FinishReason::stop;
  Usage usage;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  /// Never substitutes content on failure; errors surface as exceptions.
  virtual ChatResponse complete(const ChatRequest& request) = 0;
  virtual std::string describe() const = 0;
};

/// Hash of model name plus every (role, content) pair. Sampling settings are excluded.
std::string request_hash(const ChatRequest& request);

// Scripted backend

/// Reply to the n-th call made on this backend (0-based).
struct TurnIndexMatcher {
  std::size_t turn = 0;
};

/// Reply to a request whose request_hash equals this value.
struct MessageHashMatcher {
  std::string hash;
};

/// Reply to requests whose content satisfies every populated condition.
/// "system" is the concatenated system messages; "first user" / "last user" the
/// first and last user messages.
struct ContentMatcher {
  std::vector<std::string> system_contains;
  std::vector<std::string> system_lacks;
  std::optional<std::string> first_user_contains;
  std::optional<std::string> last_user_equals;
  std::vector<std::string> last_user_contains;
  std::vector<std::string> last_user_lacks;
  std::optional<std::size_t> user_turn;  // number of user messages so far

  bool matches(const ChatRequest& request) const;
};

using ScriptMatcher = std::variant<TurnIndexMatcher, MessageHashMatcher, ContentMatcher>;

struct ScriptEntry {
  ScriptMatcher matcher;
  std::string reply;
};

void from_json(const nlohmann::json& j, ScriptEntry& e);
void to_json(nlohmann::json& j, const ScriptEntry& e);

class ScriptedBackend final : public ChatBackend {
 public:
  /// Throws ScriptError if two turn-index or two hash entries collide.
  explicit ScriptedBackend(std::vector<ScriptEntry> entries, std::string name = "scripted");

  /// Script files are JSON arrays of entries.
  static std::unique_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);

  ChatResponse complete(const ChatRequest& request) override;
  std::string describe() const override { return name_; }

  std::size_t calls() const;
  /// Rewinds the turn counter so the same request sequence replays identically.
  void reset();

 private:
  std::vector<ScriptEntry> entries_;
  std::string name_;
  bool turn_indexed_ = false;
  mutable std::mutex mu_;
  std::size_t calls_ = 0;
  std::atomic<int> active_{0};
};

// HTTP backend

struct HttpBackendConfig {
  /// scheme://host[:port], e.g. "https://api.openai.com".
  std::string base_url;
  std::string path = "/v1/chat/completions";
  /// Overrides ChatRequest::model_name when non-empty.
  std::string model;
  /// Name of the environment variable holding the bearer token; no header when unset.
  std::string api_key_env = "ROAD_API_KEY";
  int max_attempts = 3;
  std::vector<std::chrono::milliseconds> backoff{std::chrono::seconds(1), std::chrono::seconds(2),
                                                 std::chrono::seconds(4)};
  std::chrono::seconds timeout{120};
  /// Injected in tests to skip real sleeping.
  std::function<void(std::chrono::milliseconds)> sleep;
};

class HttpBackend final : public ChatBackend {
 public:
  explicit HttpBackend(HttpBackendConfig config);
  ChatResponse complete(const ChatRequest& request) override;
  std::string describe() const override;

  std::size_t attempts() const { return attempts_.load(); }

 private:
  HttpBackendConfig config_;
  std::atomic<std::size_t> attempts_{0};
};

/// OpenAI-compatible request body: {"model","messages":[{"role","content"}],"temperature","max_tokens"}.
nlohmann::json to_wire(const ChatRequest& request, const std::string& model_override = {});
/// First choice of an OpenAI-compatible response body.
ChatResponse from_wire(const nlohmann::json& body);

// Structured output

enum class Schema { analysis_report, pattern_list, evolved_prompt };

std::string to_string(Schema s);
Schema schema_from_string(const std::string& s);

/// First well-formed JSON object or array embedded in text (fences and prose tolerated).
std::optional<nlohmann::json> extract_json_payload(const std::string& text);

/// Throws SchemaViolation naming the first offending field.
void check_schema(const nlohmann::json& value, Schema schema);

/// Throws MalformedOutput (carrying the raw content) or SchemaViolation.
nlohmann::json parse_structured(const ChatResponse& response, Schema schema);

/// Wraps a value the way agents are asked to reply: a fenced json block.
std::string render_structured(const nlohmann::json& value);

struct TruncatedLog {
  std::string text;
  bool truncated = false;
  std::size_t original_chars = 0;
};

/// Keeps the head and tail halves of logs longer than max_chars, joined by a marker line.
TruncatedLog truncate_log(const std::string& log, std::size_t max_chars = 8000);

}  // namespace road
