#include "road/core.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "road/errors.hpp"

namespace road {

PromptArtifact PromptArtifact::initial(std::string text) {
  PromptArtifact p;
  p.text = std::move(text);
  p.check();
  return p;
}

void PromptArtifact::check() const {
  if (text.empty()) throw InvalidArgument("prompt text is empty");
  if (version < 0) throw InvalidArgument("prompt version is negative");
  if (version == 0 && parent_version) throw InvalidArgument("version 0 prompt cannot have a parent");
  if (version > 0) {
    if (!parent_version) throw InvalidArgument("prompt version " + std::to_string(version) + " has no parent");
    if (*parent_version >= version || *parent_version < 0)
      throw InvalidArgument("parent version must be smaller than the child version");
  }
}

std::string to_string(Speaker s) {
  switch (s) {
    case Speaker::system: return "system";
    case Speaker::user: return "user";
    case Speaker::assistant: return "assistant";
    case Speaker::tool: return "tool";
  }
  return "user";
}

Speaker speaker_from_string(const std::string& s) {
  if (s == "system") return Speaker::system;
  if (s == "user") return Speaker::user;
  if (s == "assistant") return Speaker::assistant;
  if (s == "tool") return Speaker::tool;
  throw InvalidArgument("unknown speaker '" + s + "'");
}

bool RetrievalEvent::hit() const {
  if (!expected_chunk_id) return false;
  return std::find(returned_chunk_ids.begin(), returned_chunk_ids.end(), *expected_chunk_id) !=
         returned_chunk_ids.end();
}

Rate::Rate(std::int64_t numerator, std::int64_t denominator) : num_(numerator), den_(denominator) {
  if (den_ <= 0) throw InvalidArgument("rate denominator must be positive");
  if (num_ < 0 || num_ > den_) throw InvalidArgument("rate numerator out of range");
}

namespace {
__extension__ using i128 = __int128;
}  // namespace

std::strong_ordering operator<=>(const Rate& a, const Rate& b) noexcept {
  const i128 lhs = static_cast<i128>(a.num_) * b.den_;
  const i128 rhs = static_cast<i128>(b.num_) * a.den_;
  if (lhs < rhs) return std::strong_ordering::less;
  if (lhs > rhs) return std::strong_ordering::greater;
  return std::strong_ordering::equal;
}

std::string format_rate(const Rate& r, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, r.value());
  return buf;
}

FailureCase make_failure_case(TaskOutcome outcome) {
  if (outcome.success) throw InvalidArgument("task " + outcome.task_id + " succeeded; not a failure case");
  FailureCase f;
  f.task_id = outcome.task_id;
  f.raw_log = render_raw_log(outcome);
  f.outcome = std::move(outcome);
  return f;
}

std::vector<FailureCase> filter_failures(std::span<const TaskOutcome> outcomes) {
  std::vector<FailureCase> out;
  for (const auto& o : outcomes)
    if (!o.success) out.push_back(make_failure_case(o));
  return out;
}

namespace {

void append_indented(std::ostringstream& os, const std::string& text) {
  for (char c : text) {
    os << c;
    if (c == '\n') os << "    ";
  }
}

void append_ids(std::ostringstream& os, const std::vector<std::int64_t>& ids) {
  os << '[';
  for (std::size_t i = 0; i < ids.size(); ++i) os << (i ? "," : "") << ids[i];
  os << ']';
}

}  // namespace

std::string render_raw_log(const TaskOutcome& outcome) {
  std::ostringstream os;
  os << "task: " << outcome.task_id << '\n';
  std::size_t n = 0;
  for (const auto& turn : outcome.transcript) {
    os << "turn " << ++n << " [" << to_string(turn.speaker) << "]: ";
    append_indented(os, turn.content);
    os << '\n';
    for (const auto& call : turn.tool_calls) {
      os << "  tool: " << call.name << '(';
      for (std::size_t i = 0; i < call.args.size(); ++i)
        os << (i ? ", " : "") << call.args[i].first << '=' << call.args[i].second;
      os << ") -> " << (call.ok ? "ok: " : "error: ");
      append_indented(os, call.result);
      os << '\n';
    }
  }
  if (outcome.retrieval_trace) {
    for (const auto& ev : *outcome.retrieval_trace) {
      os << "retrieval: query=\"" << ev.query_text << "\" returned=";
      append_ids(os, ev.returned_chunk_ids);
      if (ev.expected_chunk_id)
        os << " expected=" << *ev.expected_chunk_id << (ev.hit() ? " hit" : " miss");
      else
        os << " expected=none";
      os << '\n';
    }
  }
  os << "judge: " << (outcome.success ? "PASS" : "FAIL");
  if (!outcome.judge_notes.empty()) os << " - " << outcome.judge_notes;
  os << '\n';
  return os.str();
}

Rate compute_success_rate(std::span<const TaskOutcome> outcomes) {
  if (outcomes.empty()) throw InvalidArgument("no tasks evaluated");
  const auto wins = std::count_if(outcomes.begin(), outcomes.end(), [](const TaskOutcome& o) { return o.success; });
  return Rate(static_cast<std::int64_t>(wins), static_cast<std::int64_t>(outcomes.size()));
}

Rate compute_search_hit_rate(std::span<const RetrievalEvent> events) {
  if (events.empty()) throw InvalidArgument("no retrieval events");
  std::int64_t hits = 0;
  for (const auto& ev : events) {
    if (!ev.expected_chunk_id) throw InvalidArgument("unlabeled retrieval event");
    if (ev.hit()) ++hits;
  }
  return Rate(hits, static_cast<std::int64_t>(events.size()));
}

EvalSummary summarize(std::span<const TaskOutcome> outcomes) {
  EvalSummary s;
  s.success_rate = compute_success_rate(outcomes);
  s.n_tasks = static_cast<std::int64_t>(outcomes.size());
  std::vector<RetrievalEvent> labeled;
  for (const auto& o : outcomes) {
    s.per_task.push_back({o.task_id, o.success});
    if (!o.retrieval_trace) continue;
    for (const auto& ev : *o.retrieval_trace)
      if (ev.expected_chunk_id) labeled.push_back(ev);
  }
  if (!labeled.empty()) s.search_hit_rate = compute_search_hit_rate(labeled);
  return s;
}

// JSON

void to_json(nlohmann::json& j, const ToolCall& v) {
  nlohmann::json args = nlohmann::json::array();
  for (const auto& [k, val] : v.args) args.push_back({k, val});
  j = {{"name", v.name}, {"args", args}, {"ok", v.ok}, {"result", v.result}};
}

void from_json(const nlohmann::json& j, ToolCall& v) {
  v.name = j.at("name").get<std::string>();
  v.args.clear();
  for (const auto& a : j.at("args")) v.args.emplace_back(a.at(0).get<std::string>(), a.at(1).get<std::string>());
  v.ok = j.at("ok").get<bool>();
  v.result = j.at("result").get<std::string>();
}

void to_json(nlohmann::json& j, const Turn& v) {
  j = {{"speaker", to_string(v.speaker)}, {"content", v.content}};
  if (!v.tool_calls.empty()) j["tool_calls"] = v.tool_calls;
}

void from_json(const nlohmann::json& j, Turn& v) {
  v.speaker = speaker_from_string(j.at("speaker").get<std::string>());
  v.content = j.at("content").get<std::string>();
  v.tool_calls = j.contains("tool_calls") ? j.at("tool_calls").get<std::vector<ToolCall>>() : std::vector<ToolCall>{};
}

void to_json(nlohmann::json& j, const RetrievalEvent& v) {
  j = {{"query_text", v.query_text}, {"returned_chunk_ids", v.returned_chunk_ids}};
  j["expected_chunk_id"] = v.expected_chunk_id ? nlohmann::json(*v.expected_chunk_id) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, RetrievalEvent& v) {
  v.query_text = j.at("query_text").get<std::string>();
  v.returned_chunk_ids = j.at("returned_chunk_ids").get<std::vector<std::int64_t>>();
  const auto& e = j.at("expected_chunk_id");
  v.expected_chunk_id = e.is_null() ? std::nullopt : std::optional<std::int64_t>(e.get<std::int64_t>());
}

void to_json(nlohmann::json& j, const TaskOutcome& v) {
  j = {{"task_id", v.task_id}, {"success", v.success}, {"transcript", v.transcript}, {"judge_notes", v.judge_notes}};
  if (v.retrieval_trace) j["retrieval_trace"] = *v.retrieval_trace;
}

void from_json(const nlohmann::json& j, TaskOutcome& v) {
  v.task_id = j.at("task_id").get<std::string>();
  v.success = j.at("success").get<bool>();
  v.transcript = j.at("transcript").get<std::vector<Turn>>();
  v.judge_notes = j.at("judge_notes").get<std::string>();
  if (j.contains("retrieval_trace"))
    v.retrieval_trace = j.at("retrieval_trace").get<std::vector<RetrievalEvent>>();
  else
    v.retrieval_trace.reset();
}

void to_json(nlohmann::json& j, const EvalSummary& v) {
  nlohmann::json per_task = nlohmann::json::array();
  for (const auto& t : v.per_task) per_task.push_back({{"task_id", t.task_id}, {"success", t.success}});
  j = nlohmann::json::object();
  j["success_rate"] = v.success_rate.value();
  j["search_hit_rate"] = v.search_hit_rate ? nlohmann::json(v.search_hit_rate->value()) : nlohmann::json(nullptr);
  j["n_tasks"] = v.n_tasks;
  j["per_task"] = per_task;
  // Exact counts so a reload does not depend on the printed doubles.
  if (v.search_hit_rate) {
    j["search_hits"] = v.search_hit_rate->numerator();
    j["search_events"] = v.search_hit_rate->denominator();
  }
}

void from_json(const nlohmann::json& j, EvalSummary& v) {
  v.n_tasks = j.at("n_tasks").get<std::int64_t>();
  v.per_task.clear();
  std::int64_t wins = 0;
  for (const auto& t : j.at("per_task")) {
    v.per_task.push_back({t.at("task_id").get<std::string>(), t.at("success").get<bool>()});
    if (v.per_task.back().success) ++wins;
  }
  if (v.n_tasks <= 0 || static_cast<std::int64_t>(v.per_task.size()) != v.n_tasks)
    throw InvalidArgument("eval summary: n_tasks does not match per_task");
  v.success_rate = Rate(wins, v.n_tasks);
  if (j.contains("search_hits") && j.contains("search_events"))
    v.search_hit_rate = Rate(j.at("search_hits").get<std::int64_t>(), j.at("search_events").get<std::int64_t>());
  else
    v.search_hit_rate.reset();
}

void to_json(nlohmann::json& j, const PromptArtifact& v) {
  j = {{"version", v.version}, {"text", v.text}};
  j["parent_version"] = v.parent_version ? nlohmann::json(*v.parent_version) : nlohmann::json(nullptr);
  j["embedded_protocol_id"] =
      v.embedded_protocol_id ? nlohmann::json(*v.embedded_protocol_id) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, PromptArtifact& v) {
  v.version = j.at("version").get<std::int64_t>();
  v.text = j.at("text").get<std::string>();
  const auto& p = j.at("parent_version");
  v.parent_version = p.is_null() ? std::nullopt : std::optional<std::int64_t>(p.get<std::int64_t>());
  const auto& e = j.at("embedded_protocol_id");
  v.embedded_protocol_id = e.is_null() ? std::nullopt : std::optional<std::string>(e.get<std::string>());
}

}  // namespace road
