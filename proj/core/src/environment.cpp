#include "road/environment.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "road/errors.hpp"

namespace road {

namespace {

nlohmann::json read_json_file(const std::filesystem::path& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound(what + " file not found: " + path.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw InvalidArgument(what + " file is not valid JSON: " + path.string());
  return j;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

// Tasks

const std::string& UserTurn::resolve(const std::string& previous_agent_reply) const {
  for (const auto& v : variants)
    if (!v.if_agent_contains.empty() && previous_agent_reply.find(v.if_agent_contains) != std::string::npos)
      return v.say;
  return say;
}

bool SuccessConditions::empty() const {
  return required_calls.empty() && ordering.empty() && !confirmation_token && !expected_chunk_id && !out_of_scope;
}

void from_json(const nlohmann::json& j, TaskSpec& t) {
  t = TaskSpec{};
  t.task_id = j.at("task_id").get<std::string>();
  const auto kind = j.value("kind", std::string("tool"));
  if (kind == "tool") {
    t.kind = TaskKind::tool;
  } else if (kind == "retrieval") {
    t.kind = TaskKind::retrieval;
  } else {
    throw InvalidArgument("task " + t.task_id + ": kind must be 'tool' or 'retrieval'");
  }
  for (const auto& u : j.at("user_script")) {
    UserTurn turn;
    if (u.is_string()) {
      turn.say = u.get<std::string>();
    } else {
      turn.say = u.at("say").get<std::string>();
      for (const auto& v : u.value("variants", nlohmann::json::array()))
        turn.variants.push_back({v.at("if_agent_contains").get<std::string>(), v.at("say").get<std::string>()});
    }
    t.user_script.push_back(std::move(turn));
  }
  if (j.contains("followup")) t.followup = j.at("followup").get<std::string>();
  const auto& s = j.at("success");
  for (const auto& c : s.value("required_calls", nlohmann::json::array())) {
    RequiredCall rc;
    rc.tool = c.at("tool").get<std::string>();
    if (c.contains("args")) rc.args = c.at("args").get<std::map<std::string, std::string>>();
    t.success.required_calls.push_back(std::move(rc));
  }
  for (const auto& p : s.value("ordering", nlohmann::json::array())) {
    if (!p.is_array() || p.size() != 2) throw InvalidArgument("task " + t.task_id + ": ordering entries are pairs");
    t.success.ordering.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
  }
  if (s.contains("confirmation_token") && !s.at("confirmation_token").is_null())
    t.success.confirmation_token = s.at("confirmation_token").get<std::string>();
  if (s.contains("expected_chunk_id") && !s.at("expected_chunk_id").is_null())
    t.success.expected_chunk_id = s.at("expected_chunk_id").get<std::int64_t>();
  t.success.out_of_scope = s.value("out_of_scope", false);
}

void to_json(nlohmann::json& j, const TaskSpec& t) {
  j = nlohmann::json::object();
  j["task_id"] = t.task_id;
  j["kind"] = t.kind == TaskKind::tool ? "tool" : "retrieval";
  auto script = nlohmann::json::array();
  for (const auto& u : t.user_script) {
    if (u.variants.empty()) {
      script.push_back(u.say);
      continue;
    }
    auto variants = nlohmann::json::array();
    for (const auto& v : u.variants) variants.push_back({{"if_agent_contains", v.if_agent_contains}, {"say", v.say}});
    script.push_back({{"say", u.say}, {"variants", variants}});
  }
  j["user_script"] = script;
  j["followup"] = t.followup;
  nlohmann::json s = nlohmann::json::object();
  auto calls = nlohmann::json::array();
  for (const auto& c : t.success.required_calls) calls.push_back({{"tool", c.tool}, {"args", c.args}});
  s["required_calls"] = calls;
  auto ordering = nlohmann::json::array();
  for (const auto& [a, b] : t.success.ordering) ordering.push_back({a, b});
  s["ordering"] = ordering;
  s["confirmation_token"] = t.success.confirmation_token ? nlohmann::json(*t.success.confirmation_token) : nlohmann::json(nullptr);
  s["expected_chunk_id"] = t.success.expected_chunk_id ? nlohmann::json(*t.success.expected_chunk_id) : nlohmann::json(nullptr);
  s["out_of_scope"] = t.success.out_of_scope;
  j["success"] = s;
}

std::vector<TaskSpec> load_tasks(const std::filesystem::path& path) {
  const auto j = read_json_file(path, "tasks");
  const auto& list = j.is_object() && j.contains("tasks") ? j.at("tasks") : j;
  if (!list.is_array()) throw InvalidArgument("tasks file must hold an array: " + path.string());
  std::vector<TaskSpec> tasks;
  std::set<std::string> seen;
  for (const auto& item : list) {
    TaskSpec t;
    try {
      t = item.get<TaskSpec>();
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument("bad task entry in " + path.string() + ": " + e.what());
    }
    if (!seen.insert(t.task_id).second) throw InvalidArgument("duplicate task_id '" + t.task_id + "'");
    tasks.push_back(std::move(t));
  }
  if (tasks.empty()) throw InvalidArgument("tasks file is empty: " + path.string());
  return tasks;
}

void check_task(const TaskSpec& task, const ToolRegistry& registry) {
  const std::string where = "task '" + task.task_id + "': ";
  if (task.task_id.empty()) throw InvalidArgument("task with an empty task_id");
  if (task.user_script.empty()) throw InvalidArgument(where + "user_script is empty");
  if (task.success.empty()) throw InvalidArgument(where + "no success condition");
  if (task.kind == TaskKind::retrieval) {
    if (task.success.out_of_scope == task.success.expected_chunk_id.has_value())
      throw InvalidArgument(where + "retrieval tasks need exactly one of expected_chunk_id and out_of_scope");
    if (!task.success.required_calls.empty() || !task.success.ordering.empty() || task.success.confirmation_token)
      throw InvalidArgument(where + "tool conditions on a retrieval task");
    return;
  }
  if (task.success.expected_chunk_id || task.success.out_of_scope)
    throw InvalidArgument(where + "retrieval conditions on a tool task");
  for (const auto& c : task.success.required_calls)
    if (!registry.contains(c.tool)) throw InvalidArgument(where + "unknown tool '" + c.tool + "'");
  for (const auto& [a, b] : task.success.ordering)
    if (!registry.contains(a) || !registry.contains(b))
      throw InvalidArgument(where + "ordering names an unknown tool");
}

// Reply parsing

namespace {

bool ident_start(char c) { return (c >= 'a' && c <= 'z') || c == '_'; }
bool ident_char(char c) { return ident_start(c) || (c >= '0' && c <= '9'); }

// Parses "name(args)]" starting right after '['. Returns the end position past ']' or npos.
std::size_t parse_call_at(const std::string& s, std::size_t i, ParsedCall& out) {
  std::size_t j = i;
  if (j >= s.size() || !ident_start(s[j])) return std::string::npos;
  while (j < s.size() && ident_char(s[j])) ++j;
  out.name = s.substr(i, j - i);
  out.args.clear();
  if (j >= s.size() || s[j] != '(') return std::string::npos;
  ++j;
  auto skip_ws = [&] {
    while (j < s.size() && (s[j] == ' ' || s[j] == '\t')) ++j;
  };
  skip_ws();
  if (j < s.size() && s[j] == ')') {
    ++j;
  } else {
    while (true) {
      skip_ws();
      std::size_t k = j;
      while (k < s.size() && ident_char(s[k])) ++k;
      if (k == j || k >= s.size()) return std::string::npos;
      std::string key = s.substr(j, k - j);
      j = k;
      skip_ws();
      if (j >= s.size() || s[j] != '=') return std::string::npos;
      ++j;
      skip_ws();
      std::string value;
      if (j < s.size() && s[j] == '"') {
        ++j;
        bool closed = false;
        while (j < s.size()) {
          if (s[j] == '\\' && j + 1 < s.size()) {
            value += s[j + 1];
            j += 2;
          } else if (s[j] == '"') {
            ++j;
            closed = true;
            break;
          } else {
            value += s[j++];
          }
        }
        if (!closed) return std::string::npos;
      } else {
        std::size_t k2 = j;
        while (k2 < s.size() && s[k2] != ',' && s[k2] != ')' && s[k2] != '\n') ++k2;
        value = trim(std::string_view(s).substr(j, k2 - j));
        j = k2;
      }
      out.args.emplace_back(std::move(key), std::move(value));
      skip_ws();
      if (j < s.size() && s[j] == ',') {
        ++j;
        continue;
      }
      if (j < s.size() && s[j] == ')') {
        ++j;
        break;
      }
      return std::string::npos;
    }
  }
  if (j >= s.size() || s[j] != ']') return std::string::npos;
  return j + 1;
}

}  // namespace

std::vector<ParsedCall> parse_tool_calls(const std::string& reply) {
  std::vector<ParsedCall> calls;
  std::size_t i = 0;
  while ((i = reply.find('[', i)) != std::string::npos) {
    ParsedCall call;
    const auto end = parse_call_at(reply, i + 1, call);
    if (end == std::string::npos) {
      ++i;
      continue;
    }
    calls.push_back(std::move(call));
    i = end;
  }
  return calls;
}

bool has_end_directive(const std::string& reply) { return reply.find("[end]") != std::string::npos; }

std::optional<Directive> parse_directive(const std::string& reply) {
  std::istringstream in(reply);
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.rfind("SEARCH:", 0) == 0) return Directive{Directive::Kind::search, trim(std::string_view(t).substr(7))};
    if (t.rfind("NO_DATA:", 0) == 0) return Directive{Directive::Kind::no_data, trim(std::string_view(t).substr(8))};
  }
  return std::nullopt;
}

// Corpus and retrieval

void check_corpus(const Corpus& corpus) {
  std::set<std::int64_t> ids;
  for (const auto& c : corpus.chunks) {
    if (c.chunk_id < 0) throw InvalidArgument("negative chunk id " + std::to_string(c.chunk_id));
    if (!ids.insert(c.chunk_id).second) throw InvalidArgument("duplicate chunk id " + std::to_string(c.chunk_id));
  }
}

void from_json(const nlohmann::json& j, Corpus& c) {
  c.chunks.clear();
  const auto& list = j.is_object() && j.contains("chunks") ? j.at("chunks") : j;
  for (const auto& item : list)
    c.chunks.push_back({item.at("chunk_id").get<std::int64_t>(), item.at("text").get<std::string>()});
}

Corpus load_corpus(const std::filesystem::path& path) {
  Corpus c;
  try {
    c = read_json_file(path, "corpus").get<Corpus>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("bad corpus file " + path.string() + ": " + e.what());
  }
  check_corpus(c);
  return c;
}

std::vector<std::string> normalize_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty() && seen.insert(cur).second) out.push_back(cur);
    cur.clear();
  };
  for (const char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u) || u >= 0x80) {
      cur += static_cast<char>(std::tolower(u));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

std::vector<std::int64_t> retrieve(const std::string& query, const Corpus& corpus, std::size_t k) {
  const auto q = normalize_tokens(query);
  if (q.empty()) return {};
  std::vector<std::pair<std::size_t, std::int64_t>> scored;
  scored.reserve(corpus.chunks.size());
  for (const auto& chunk : corpus.chunks) {
    const auto tokens = normalize_tokens(chunk.text);
    const std::unordered_set<std::string> set(tokens.begin(), tokens.end());
    std::size_t score = 0;
    for (const auto& t : q) score += set.contains(t) ? 1 : 0;
    scored.emplace_back(score, chunk.chunk_id);
  }
  const auto n = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(),
                    [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  std::vector<std::int64_t> ids;
  ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ids.push_back(scored[i].second);
  return ids;
}

// Episodes

namespace {

ChatRequest agent_request(const EpisodeSettings& settings, const std::vector<ChatMessage>& messages) {
  ChatRequest r;
  r.model_name = settings.model_name;
  r.temperature = settings.temperature;
  r.max_tokens = settings.max_tokens;
  r.messages = messages;
  return r;
}

std::string arg_of(const ToolCall& c, const std::string& key) {
  for (const auto& [k, v] : c.args)
    if (k == key) return v;
  return {};
}

bool has_arg(const ToolCall& c, const std::string& key) {
  return std::any_of(c.args.begin(), c.args.end(), [&](const auto& kv) { return kv.first == key; });
}

std::string describe_required(const RequiredCall& rc) {
  std::string s = rc.tool + "(";
  bool first = true;
  for (const auto& [k, v] : rc.args) {
    if (!first) s += ", ";
    first = false;
    s += k + "=" + v;
  }
  return s + ")";
}

struct CallSite {
  std::size_t turn_index;
  const ToolCall* call;
};

// Returns the empty string when the tool task succeeded, else the first unmet condition.
std::string judge_tool_task(const TaskSpec& task, const std::vector<Turn>& transcript, const ToolRegistry& registry) {
  std::vector<CallSite> ok_calls;
  for (std::size_t i = 0; i < transcript.size(); ++i)
    for (const auto& c : transcript[i].tool_calls)
      if (c.ok) ok_calls.push_back({i, &c});

  const auto& s = task.success;
  for (const auto& rc : s.required_calls) {
    const bool found = std::any_of(ok_calls.begin(), ok_calls.end(), [&](const CallSite& site) {
      if (site.call->name != rc.tool) return false;
      for (const auto& [k, v] : rc.args)
        if (!has_arg(*site.call, k) || arg_of(*site.call, k) != v) return false;
      return true;
    });
    if (!found) return "missing successful call " + describe_required(rc);
  }
  auto first_ok = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < ok_calls.size(); ++i)
      if (ok_calls[i].call->name == name) return i;
    return std::nullopt;
  };
  for (const auto& [before, after] : s.ordering) {
    const auto a = first_ok(before);
    const auto b = first_ok(after);
    if (!a || !b) return "ordering " + before + " before " + after + " not observed";
    if (*a > *b) return before + " must run before " + after;
  }
  if (s.confirmation_token) {
    for (const auto& site : ok_calls) {
      const auto* spec = registry.find(site.call->name);
      if (!spec || !spec->mutates) continue;
      std::optional<std::string> last_user;
      for (std::size_t i = site.turn_index; i-- > 0;)
        if (transcript[i].speaker == Speaker::user) {
          last_user = trim(transcript[i].content);
          break;
        }
      if (!last_user || *last_user != *s.confirmation_token)
        return site.call->name + " executed without the user confirming \"" + *s.confirmation_token + "\"";
    }
  }
  return {};
}

TaskOutcome failed(TaskOutcome out, std::string notes) {
  out.success = false;
  out.judge_notes = std::move(notes);
  return out;
}

}  // namespace

TaskOutcome run_task(const PromptArtifact& prompt, const TaskSpec& task, ChatBackend& agent,
                     const ToolRegistry& registry, const RetailDb& db, const EpisodeSettings& settings) {
  if (task.kind != TaskKind::tool) throw InvalidArgument("run_task needs a tool task: " + task.task_id);
  check_task(task, registry);

  TaskOutcome out;
  out.task_id = task.task_id;
  RetailState state{db, std::nullopt};
  std::vector<ChatMessage> messages{{Role::system, prompt.text}};
  std::string previous_reply;
  bool ended = false;

  for (std::size_t turn = 0; turn < settings.max_turns && !ended; ++turn) {
    const std::string& say = turn < task.user_script.size() ? task.user_script[turn].resolve(previous_reply)
                                                             : task.followup;
    messages.push_back({Role::user, say});
    out.transcript.push_back({Speaker::user, say, {}});

    ChatResponse response;
    try {
      response = agent.complete(agent_request(settings, messages));
    } catch (const ScriptError&) {
      throw;
    } catch (const std::exception& e) {
      return failed(std::move(out), std::string("agent backend error: ") + e.what());
    }
    previous_reply = response.content;
    messages.push_back({Role::assistant, response.content});

    Turn reply{Speaker::assistant, response.content, {}};
    std::string tool_report;
    for (auto& parsed : parse_tool_calls(response.content)) {
      ToolCall call{parsed.name, parsed.args, false, {}};
      if (const auto* spec = registry.find(parsed.name)) {
        const auto result = spec->effect(state, parsed.args);
        call.ok = result.ok;
        call.result = result.output;
      } else {
        call.result = "unknown tool '" + parsed.name + "'";
      }
      tool_report += call.name + (call.ok ? " -> " : " -> error: ") + call.result + "\n";
      reply.tool_calls.push_back(std::move(call));
    }
    out.transcript.push_back(std::move(reply));
    if (!tool_report.empty()) {
      tool_report.pop_back();
      messages.push_back({Role::tool, tool_report});
    }
    ended = has_end_directive(response.content);
  }

  if (!ended) return failed(std::move(out), "turn budget exhausted");
  auto verdict = judge_tool_task(task, out.transcript, registry);
  if (!verdict.empty()) return failed(std::move(out), std::move(verdict));
  out.success = true;
  out.judge_notes = "all conditions met";
  return out;
}

TaskOutcome run_retrieval_task(const PromptArtifact& prompt, const TaskSpec& task, const Corpus& corpus,
                               ChatBackend& agent, const EpisodeSettings& settings) {
  if (task.kind != TaskKind::retrieval) throw InvalidArgument("run_retrieval_task needs a retrieval task: " + task.task_id);
  check_task(task, ToolRegistry({}));
  if (corpus.chunks.empty()) throw InvalidArgument("corpus is empty");

  TaskOutcome out;
  out.task_id = task.task_id;
  out.retrieval_trace.emplace();
  std::vector<ChatMessage> messages{{Role::system, prompt.text}};
  std::string reply;

  // Every user turn gets a reply; only the reply to the last one is acted on.
  const std::size_t turns = std::min(task.user_script.size(), settings.max_turns);
  for (std::size_t turn = 0; turn < turns; ++turn) {
    const std::string& say = task.user_script[turn].resolve(reply);
    messages.push_back({Role::user, say});
    out.transcript.push_back({Speaker::user, say, {}});
    try {
      reply = agent.complete(agent_request(settings, messages)).content;
    } catch (const ScriptError&) {
      throw;
    } catch (const std::exception& e) {
      out.retrieval_trace.reset();
      return failed(std::move(out), std::string("agent backend error: ") + e.what());
    }
    messages.push_back({Role::assistant, reply});
    out.transcript.push_back({Speaker::assistant, reply, {}});
  }

  const auto directive = parse_directive(reply);
  auto& trace = *out.retrieval_trace;
  if (directive && directive->kind == Directive::Kind::search) {
    RetrievalEvent ev;
    ev.query_text = directive->text;
    ev.returned_chunk_ids = retrieve(directive->text, corpus, settings.top_k);
    ev.expected_chunk_id = task.success.expected_chunk_id;
    std::string listing;
    for (const auto id : ev.returned_chunk_ids)
      for (const auto& c : corpus.chunks)
        if (c.chunk_id == id) listing += "[" + std::to_string(id) + "] " + c.text + "\n";
    if (!listing.empty()) listing.pop_back();
    out.transcript.push_back({Speaker::tool, listing, {}});
    trace.push_back(std::move(ev));
  } else if (task.success.expected_chunk_id) {
    // An in-scope question that was never searched counts as a miss.
    trace.push_back({"", {}, task.success.expected_chunk_id});
  }

  if (!directive) return failed(std::move(out), "no actionable directive");
  if (task.success.out_of_scope) {
    if (directive->kind != Directive::Kind::no_data)
      return failed(std::move(out), "out-of-scope question answered with a search instead of the no-data disclaimer");
    out.success = true;
    out.judge_notes = "disclaimed out-of-scope question";
    return out;
  }
  if (directive->kind == Directive::Kind::no_data) return failed(std::move(out), "disclaimed an in-scope question");
  const auto expected = std::to_string(*task.success.expected_chunk_id);
  if (!trace.back().hit()) return failed(std::move(out), "expected chunk " + expected + " not returned");
  out.success = true;
  out.judge_notes = "expected chunk " + expected + " found";
  return out;
}

DeskEnvironment::DeskEnvironment(ToolRegistry registry, RetailDb db, Corpus corpus, EpisodeSettings settings)
    : registry_(std::move(registry)), db_(std::move(db)), corpus_(std::move(corpus)), settings_(std::move(settings)) {
  check_corpus(corpus_);
  if (settings_.max_turns == 0) throw InvalidArgument("max_turns must be positive");
  if (settings_.top_k == 0) throw InvalidArgument("top_k must be positive");
}

TaskOutcome DeskEnvironment::run(const PromptArtifact& prompt, const TaskSpec& task, ChatBackend& agent) const {
  if (task.kind == TaskKind::retrieval) return run_retrieval_task(prompt, task, corpus_, agent, settings_);
  return run_task(prompt, task, agent, registry_, db_, settings_);
}

}  // namespace road
