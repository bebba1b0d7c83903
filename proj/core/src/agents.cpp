#include "road/agents.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <string_view>

#include "road/errors.hpp"
#include "road/hash.hpp"

namespace road {

namespace detail {
extern const std::string_view k_analyzer_template;
extern const std::string_view k_optimizer_template;
extern const std::string_view k_coach_template;
}  // namespace detail

std::string to_string(AgentRole r) {
  switch (r) {
    case AgentRole::analyzer: return "analyzer";
    case AgentRole::optimizer: return "optimizer";
    case AgentRole::coach: return "coach";
  }
  return "analyzer";
}

std::string to_string(EvolvePolicy p) { return p == EvolvePolicy::append ? "append" : "rewrite"; }

EvolvePolicy evolve_policy_from_string(const std::string& s) {
  if (s == "append") return EvolvePolicy::append;
  if (s == "rewrite") return EvolvePolicy::rewrite;
  throw InvalidArgument("evolve_policy must be 'append' or 'rewrite', got '" + s + "'");
}

void to_json(nlohmann::json& j, const AnalysisReport& r) {
  j = {{"task_id", r.task_id}, {"diagnosis", r.diagnosis}, {"prescription", r.prescription}};
  j["category_hint"] = r.category_hint ? nlohmann::json(to_string(*r.category_hint)) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, AnalysisReport& r) {
  r.task_id = j.value("task_id", std::string());
  r.diagnosis = j.at("diagnosis").get<std::string>();
  r.prescription = j.at("prescription").get<std::string>();
  r.category_hint.reset();
  if (j.contains("category_hint") && j.at("category_hint").is_string())
    r.category_hint = try_category_from_string(j.at("category_hint").get<std::string>());
}

// RolePrompt

namespace {

bool is_placeholder_char(char c) { return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_'; }

template <typename Fn>
void for_each_placeholder(const std::string& text, Fn&& fn) {
  std::size_t i = 0;
  while ((i = text.find('{', i)) != std::string::npos) {
    std::size_t j = i + 1;
    if (j < text.size() && ((text[j] >= 'a' && text[j] <= 'z') || text[j] == '_')) {
      while (j < text.size() && is_placeholder_char(text[j])) ++j;
      if (j < text.size() && text[j] == '}') {
        fn(i, j + 1, text.substr(i + 1, j - i - 1));
        i = j + 1;
        continue;
      }
    }
    ++i;
  }
}

}  // namespace

std::vector<std::string> RolePrompt::required_placeholders(AgentRole role) {
  switch (role) {
    case AgentRole::analyzer: return {"failure_log"};
    case AgentRole::optimizer: return {"reports"};
    case AgentRole::coach: return {"current_prompt", "protocol_text"};
  }
  return {};
}

RolePrompt::RolePrompt(AgentRole role, std::string text) : role_(role), text_(std::move(text)) {
  std::set<std::string> present;
  for_each_placeholder(text_, [&](std::size_t, std::size_t, std::string name) { present.insert(std::move(name)); });
  for (const auto& need : required_placeholders(role))
    if (!present.contains(need))
      throw InvalidArgument(to_string(role) + " template is missing placeholder {" + need + "}");
}

RolePrompt RolePrompt::builtin(AgentRole role) {
  switch (role) {
    case AgentRole::analyzer: return RolePrompt(role, std::string(detail::k_analyzer_template));
    case AgentRole::optimizer: return RolePrompt(role, std::string(detail::k_optimizer_template));
    case AgentRole::coach: return RolePrompt(role, std::string(detail::k_coach_template));
  }
  throw InvalidArgument("unknown role");
}

RolePrompt RolePrompt::from_file(AgentRole role, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound(to_string(role) + " template not found: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return RolePrompt(role, ss.str());
}

std::string RolePrompt::hash() const { return content_hash(text_); }

std::string RolePrompt::render(const std::map<std::string, std::string>& values) const {
  std::string out;
  std::size_t last = 0;
  for_each_placeholder(text_, [&](std::size_t begin, std::size_t end, const std::string& name) {
    auto it = values.find(name);
    if (it == values.end()) return;
    out.append(text_, last, begin - last);
    out += it->second;
    last = end;
  });
  out.append(text_, last, std::string::npos);
  return out;
}

namespace {

constexpr std::string_view k_reask =
    "Your previous reply could not be used ({error}). Reply again with only the JSON described above.";

std::string reask_text(const std::string& error) {
  std::string s(k_reask);
  s.replace(s.find("{error}"), 7, error);
  return s;
}

ChatRequest make_request(const AgentSettings& settings, std::string user, Schema schema) {
  ChatRequest r;
  r.model_name = settings.model_name;
  r.temperature = settings.temperature;
  r.max_tokens = settings.max_tokens;
  r.response_schema = to_string(schema);
  r.messages.push_back({Role::user, std::move(user)});
  return r;
}

}  // namespace

// Analyzer

AnalysisAttempt analyze_failure(const FailureCase& failure, ChatBackend& backend, const RolePrompt& prompt,
                                const AgentSettings& settings, std::size_t max_log_chars) {
  if (prompt.role() != AgentRole::analyzer) throw InvalidArgument("analyze_failure needs the analyzer template");
  if (failure.raw_log.empty()) throw InvalidArgument("failure " + failure.task_id + " has an empty log");

  AnalysisAttempt out;
  out.task_id = failure.task_id;
  const auto log = truncate_log(failure.raw_log, max_log_chars);
  out.log_truncated = log.truncated;
  out.original_log_chars = log.original_chars;

  auto request = make_request(settings, prompt.render({{"failure_log", log.text}}), Schema::analysis_report);
  for (int attempt = 0; attempt < 2; ++attempt) {
    ChatResponse response;
    try {
      ++out.calls;
      response = backend.complete(request);
    } catch (const std::exception& e) {
      out.error = std::string("analyzer backend error: ") + e.what();
      return out;
    }
    try {
      auto payload = parse_structured(response, Schema::analysis_report);
      AnalysisReport report = payload.get<AnalysisReport>();
      if (!report.task_id.empty() && report.task_id != failure.task_id)
        throw SchemaViolation("task_id", "report names task '" + report.task_id + "' but the failure is '" +
                                             failure.task_id + "'");
      report.task_id = failure.task_id;
      out.report = std::move(report);
      out.error.clear();
      return out;
    } catch (const Error& e) {
      out.rejected_outputs.push_back(response.content);
      out.error = std::string("unanalyzed: ") + e.what();
      request.messages.push_back({Role::assistant, response.content});
      request.messages.push_back({Role::user, reask_text(e.what())});
    }
  }
  return out;
}

// Optimizer

std::string render_reports(std::span<const AnalysisReport> reports) {
  std::ostringstream os;
  for (const auto& r : reports) {
    os << "- task_id: " << r.task_id << '\n';
    os << "  diagnosis: " << r.diagnosis << '\n';
    os << "  prescription: " << r.prescription << '\n';
    if (r.category_hint) os << "  category_hint: " << to_string(*r.category_hint) << '\n';
  }
  return os.str();
}

void check_patterns_against_reports(std::span<const FailurePattern> patterns, std::span<const AnalysisReport> reports) {
  if (patterns.empty()) throw SchemaViolation("patterns", "optimizer returned no patterns");
  std::set<std::string> known;
  for (const auto& r : reports) known.insert(r.task_id);
  for (std::size_t i = 0; i < patterns.size(); ++i) {
    const std::string path = "patterns[" + std::to_string(i) + "].";
    try {
      check_pattern(patterns[i]);
    } catch (const SchemaViolation& e) {
      throw SchemaViolation(path + e.field(), e.what());
    }
    for (const auto& id : patterns[i].evidence_task_ids)
      if (!known.contains(id))
        throw SchemaViolation(path + "evidence_task_ids", "cites task '" + id + "' which has no report");
  }
}

AggregationAttempt aggregate_patterns(std::span<const AnalysisReport> reports, ChatBackend& backend,
                                      const RolePrompt& prompt, const AgentSettings& settings) {
  if (prompt.role() != AgentRole::optimizer) throw InvalidArgument("aggregate_patterns needs the optimizer template");
  if (reports.empty()) throw InvalidArgument("aggregate_patterns needs at least one report");

  AggregationAttempt out;
  auto request = make_request(settings, prompt.render({{"reports", render_reports(reports)}}), Schema::pattern_list);
  std::string last_error;
  for (int attempt = 0; attempt < 2; ++attempt) {
    ChatResponse response;
    try {
      ++out.calls;
      response = backend.complete(request);
    } catch (const std::exception& e) {
      throw AgentFailure(std::string("optimizer failed: backend error: ") + e.what(), out.rejected_outputs);
    }
    try {
      auto payload = parse_structured(response, Schema::pattern_list);
      std::vector<FailurePattern> patterns;
      for (const auto& p : payload) patterns.push_back(p.get<FailurePattern>());
      check_patterns_against_reports(patterns, reports);
      out.patterns = std::move(patterns);
      return out;
    } catch (const Error& e) {
      last_error = e.what();
      out.rejected_outputs.push_back(response.content);
      request.messages.push_back({Role::assistant, response.content});
      request.messages.push_back({Role::user, reask_text(e.what())});
    }
  }
  throw AgentFailure("optimizer failed: " + last_error, out.rejected_outputs);
}

// Coach

PromptArtifact append_protocol(const PromptArtifact& current, const DecisionTreeProtocol& tree) {
  std::string base = current.text;
  while (!base.empty() && (base.back() == '\n' || base.back() == ' ')) base.pop_back();
  PromptArtifact next;
  next.text = base + "\n\n" + std::string(k_protocol_separator) + "\n" + render_protocol(tree);
  next.version = current.version + 1;
  next.parent_version = current.version;
  next.embedded_protocol_id = tree.protocol_id;
  return next;
}

Evolution evolve_prompt(const PromptArtifact& current, const DecisionTreeProtocol& tree, EvolvePolicy policy,
                        ChatBackend* coach, const RolePrompt& prompt, const AgentSettings& settings) {
  const std::string rendered = render_protocol(tree);
  Evolution out;
  if (policy == EvolvePolicy::append) {
    out.prompt = append_protocol(current, tree);
    return out;
  }
  if (!coach) throw InvalidArgument("rewrite policy needs a coach backend");
  if (prompt.role() != AgentRole::coach) throw InvalidArgument("evolve_prompt needs the coach template");

  auto fallback = [&](std::string reason) {
    out.prompt = append_protocol(current, tree);
    out.applied = EvolvePolicy::append;
    out.fallback_reason = std::move(reason);
    return out;
  };

  auto request = make_request(settings, prompt.render({{"current_prompt", current.text}, {"protocol_text", rendered}}),
                              Schema::evolved_prompt);
  std::string last_error;
  for (int attempt = 0; attempt < 2; ++attempt) {
    ChatResponse response;
    try {
      ++out.calls;
      response = coach->complete(request);
    } catch (const std::exception& e) {
      return fallback(std::string("coach backend error: ") + e.what());
    }
    std::string text;
    try {
      text = parse_structured(response, Schema::evolved_prompt).at("prompt").get<std::string>();
    } catch (const Error& e) {
      last_error = e.what();
      request.messages.push_back({Role::assistant, response.content});
      request.messages.push_back({Role::user, reask_text(e.what())});
      continue;
    }
    // A JSON string commonly loses the final newline; the body itself must be intact.
    const std::string_view body(rendered.data(), rendered.size() - 1);
    if (text.find(body) == std::string::npos) return fallback("coach dropped protocol");
    out.prompt.text = std::move(text);
    out.prompt.version = current.version + 1;
    out.prompt.parent_version = current.version;
    out.prompt.embedded_protocol_id = tree.protocol_id;
    out.applied = EvolvePolicy::rewrite;
    return out;
  }
  return fallback("coach output malformed: " + last_error);
}

}  // namespace road
