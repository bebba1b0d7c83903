#pragma once

// The three meta-agent roles as template + structured-output wrappers over a ChatBackend.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "road/backend.hpp"
#include "road/core.hpp"
#include "road/errors.hpp"
#include "road/protocol.hpp"

namespace road {

enum class AgentRole { analyzer, optimizer, coach };

std::string to_string(AgentRole r);

struct AnalysisReport {
  std::string task_id;
  std::string diagnosis;
  std::string prescription;
  std::optional<FailureCategory> category_hint;

  friend bool operator==(const AnalysisReport&, const AnalysisReport&) = default;
};

void to_json(nlohmann::json& j, const AnalysisReport& r);
void from_json(const nlohmann::json& j, AnalysisReport& r);

/// Template text with {placeholder} slots. Braces around anything but a lower-case
/// identifier (JSON examples, for instance) are left alone.
class RolePrompt {
 public:
  /// Throws InvalidArgument when a placeholder the role needs is missing.
  RolePrompt(AgentRole role, std::string text);

  static RolePrompt builtin(AgentRole role);
  static RolePrompt from_file(AgentRole role, const std::filesystem::path& path);

  /// analyzer: failure_log; optimizer: reports; coach: current_prompt, protocol_text.
  static std::vector<std::string> required_placeholders(AgentRole role);

  AgentRole role() const { return role_; }
  const std::string& text() const { return text_; }
  /// content_hash of the template text, recorded in run configs.
  std::string hash() const;

  std::string render(const std::map<std::string, std::string>& values) const;

 private:
  AgentRole role_;
  std::string text_;
};

struct AgentSettings {
  std::string model_name = "scripted";
  double temperature = 0.0;
  std::int64_t max_tokens = 2048;
};

// Analyzer

struct AnalysisAttempt {
  std::optional<AnalysisReport> report;
  std::string task_id;
  int calls = 0;
  bool log_truncated = false;
  std::size_t original_log_chars = 0;
  /// Set when the failure is left unanalyzed.
  std::string error;
  /// Raw replies that failed to parse, kept for the run log.
  std::vector<std::string> rejected_outputs;
};

/// One re-ask on malformed output; after that the failure is reported as unanalyzed.
AnalysisAttempt analyze_failure(const FailureCase& failure, ChatBackend& backend, const RolePrompt& prompt,
                                const AgentSettings& settings, std::size_t max_log_chars = 8000);

// Optimizer

struct AggregationAttempt {
  std::vector<FailurePattern> patterns;
  int calls = 0;
  std::vector<std::string> rejected_outputs;
};

/// Renders every report for the optimizer template.
std::string render_reports(std::span<const AnalysisReport> reports);

/// Throws AgentFailure("optimizer failed: ...") after one unsuccessful re-ask.
AggregationAttempt aggregate_patterns(std::span<const AnalysisReport> reports, ChatBackend& backend,
                                      const RolePrompt& prompt, const AgentSettings& settings);

/// Checks a pattern list against the reports it came from. Throws SchemaViolation.
void check_patterns_against_reports(std::span<const FailurePattern> patterns, std::span<const AnalysisReport> reports);

class AgentFailure : public Error {
 public:
  AgentFailure(const std::string& what, std::vector<std::string> rejected)
      : Error(what), rejected_(std::move(rejected)) {}
  const std::vector<std::string>& rejected_outputs() const { return rejected_; }

 private:
  std::vector<std::string> rejected_;
};

// Coach

enum class EvolvePolicy { append, rewrite };

std::string to_string(EvolvePolicy p);
EvolvePolicy evolve_policy_from_string(const std::string& s);

/// Line placed between the previous prompt text and an appended protocol.
inline constexpr std::string_view k_protocol_separator = "----- DECISION PROTOCOL -----";

struct Evolution {
  PromptArtifact prompt;
  EvolvePolicy applied = EvolvePolicy::append;
  /// Why a rewrite fell back to append; empty when it did not.
  std::string fallback_reason;
  int calls = 0;
};

/// Pure concatenation: current text, separator line, rendered protocol.
PromptArtifact append_protocol(const PromptArtifact& current, const DecisionTreeProtocol& tree);

/// policy=rewrite needs a coach backend; output that drops the rendered protocol falls back to append.
Evolution evolve_prompt(const PromptArtifact& current, const DecisionTreeProtocol& tree, EvolvePolicy policy,
                        ChatBackend* coach, const RolePrompt& prompt, const AgentSettings& settings);

}  // namespace road
