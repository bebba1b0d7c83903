#include "road/backend.hpp"

#include <fstream>
#include <sstream>

#include "road/errors.hpp"
#include "road/hash.hpp"

namespace road {

std::string to_string(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    case Role::tool: return "tool";
  }
  return "user";
}

Role role_from_string(const std::string& s) {
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  if (s == "tool") return Role::tool;
  throw InvalidArgument("unknown chat role '" + s + "'");
}

void ChatRequest::check() const {
  if (messages.empty()) throw InvalidArgument("chat request has no messages");
  if (messages.front().role != Role::system && messages.front().role != Role::user)
    throw InvalidArgument("chat request must open with a system or user message");
  if (temperature < 0.0) throw InvalidArgument("temperature must be non-negative");
  if (max_tokens <= 0) throw InvalidArgument("max_tokens must be positive");
}

std::string request_hash(const ChatRequest& request) {
  std::string buf = request.model_name;
  buf.push_back('\0');
  for (const auto& m : request.messages) {
    buf += to_string(m.role);
    buf.push_back('\0');
    buf += m.content;
    buf.push_back('\0');
  }
  return content_hash(buf);
}

namespace {

struct RequestView {
  std::string system;
  const std::string* first_user = nullptr;
  const std::string* last_user = nullptr;
  std::size_t user_turns = 0;
};

RequestView view_of(const ChatRequest& r) {
  RequestView v;
  for (const auto& m : r.messages) {
    if (m.role == Role::system) {
      if (!v.system.empty()) v.system.push_back('\n');
      v.system += m.content;
    } else if (m.role == Role::user) {
      if (!v.first_user) v.first_user = &m.content;
      v.last_user = &m.content;
      ++v.user_turns;
    }
  }
  return v;
}

bool contains(const std::string* hay, const std::string& needle) {
  return hay && hay->find(needle) != std::string::npos;
}

std::int64_t rough_tokens(const std::string& s) {
  std::istringstream is(s);
  std::int64_t n = 0;
  for (std::string w; is >> w;) ++n;
  return n;
}

}  // namespace

bool ContentMatcher::matches(const ChatRequest& request) const {
  const RequestView v = view_of(request);
  for (const auto& s : system_contains)
    if (v.system.find(s) == std::string::npos) return false;
  for (const auto& s : system_lacks)
    if (v.system.find(s) != std::string::npos) return false;
  if (first_user_contains && !contains(v.first_user, *first_user_contains)) return false;
  if (last_user_equals && (!v.last_user || *v.last_user != *last_user_equals)) return false;
  for (const auto& s : last_user_contains)
    if (!contains(v.last_user, s)) return false;
  for (const auto& s : last_user_lacks)
    if (contains(v.last_user, s)) return false;
  if (user_turn && v.user_turns != *user_turn) return false;
  return true;
}

void from_json(const nlohmann::json& j, ScriptEntry& e) {
  if (j.contains("reply_json"))
    e.reply = render_structured(j.at("reply_json"));
  else
    e.reply = j.at("reply").get<std::string>();
  if (j.contains("turn")) {
    e.matcher = TurnIndexMatcher{j.at("turn").get<std::size_t>()};
  } else if (j.contains("hash")) {
    e.matcher = MessageHashMatcher{j.at("hash").get<std::string>()};
  } else if (j.contains("match")) {
    const auto& m = j.at("match");
    ContentMatcher c;
    auto list = [&](const char* key) {
      if (!m.contains(key)) return std::vector<std::string>{};
      const auto& v = m.at(key);
      return v.is_string() ? std::vector<std::string>{v.get<std::string>()} : v.get<std::vector<std::string>>();
    };
    c.system_contains = list("system_contains");
    c.system_lacks = list("system_lacks");
    c.last_user_contains = list("last_user_contains");
    c.last_user_lacks = list("last_user_lacks");
    if (m.contains("first_user_contains")) c.first_user_contains = m.at("first_user_contains").get<std::string>();
    if (m.contains("last_user_equals")) c.last_user_equals = m.at("last_user_equals").get<std::string>();
    if (m.contains("user_turn")) c.user_turn = m.at("user_turn").get<std::size_t>();
    e.matcher = std::move(c);
  } else {
    throw ScriptError("script entry needs one of 'turn', 'hash', or 'match'");
  }
}

void to_json(nlohmann::json& j, const ScriptEntry& e) {
  j = nlohmann::json::object();
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, TurnIndexMatcher>) {
          j["turn"] = m.turn;
        } else if constexpr (std::is_same_v<T, MessageHashMatcher>) {
          j["hash"] = m.hash;
        } else {
          nlohmann::json c = nlohmann::json::object();
          if (!m.system_contains.empty()) c["system_contains"] = m.system_contains;
          if (!m.system_lacks.empty()) c["system_lacks"] = m.system_lacks;
          if (m.first_user_contains) c["first_user_contains"] = *m.first_user_contains;
          if (m.last_user_equals) c["last_user_equals"] = *m.last_user_equals;
          if (!m.last_user_contains.empty()) c["last_user_contains"] = m.last_user_contains;
          if (!m.last_user_lacks.empty()) c["last_user_lacks"] = m.last_user_lacks;
          if (m.user_turn) c["user_turn"] = *m.user_turn;
          j["match"] = c;
        }
      },
      e.matcher);
  j["reply"] = e.reply;
}

ScriptedBackend::ScriptedBackend(std::vector<ScriptEntry> entries, std::string name)
    : entries_(std::move(entries)), name_(std::move(name)) {
  std::vector<std::size_t> turns;
  std::vector<std::string> hashes;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (e.reply.empty()) throw ScriptError(name_ + ": entry " + std::to_string(i) + " has an empty reply");
    if (const auto* t = std::get_if<TurnIndexMatcher>(&e.matcher)) {
      if (std::find(turns.begin(), turns.end(), t->turn) != turns.end())
        throw ScriptError(name_ + ": two entries for turn " + std::to_string(t->turn));
      turns.push_back(t->turn);
      turn_indexed_ = true;
    } else if (const auto* h = std::get_if<MessageHashMatcher>(&e.matcher)) {
      if (std::find(hashes.begin(), hashes.end(), h->hash) != hashes.end())
        throw ScriptError(name_ + ": two entries for hash " + h->hash);
      hashes.push_back(h->hash);
    }
  }
}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("script file not found: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ScriptError("script file " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_array()) throw ScriptError("script file " + path.string() + " must hold a JSON array");
  std::vector<ScriptEntry> entries;
  for (std::size_t i = 0; i < j.size(); ++i) {
    try {
      entries.push_back(j[i].get<ScriptEntry>());
    } catch (const nlohmann::json::exception& e) {
      throw ScriptError(path.string() + ": entry " + std::to_string(i) + ": " + e.what());
    }
  }
  return std::make_unique<ScriptedBackend>(std::move(entries), path.filename().string());
}

ChatResponse ScriptedBackend::complete(const ChatRequest& request) {
  request.check();
  struct ActiveGuard {
    std::atomic<int>& n;
    ~ActiveGuard() { --n; }
  };
  const int already = active_.fetch_add(1);
  ActiveGuard guard{active_};
  if (turn_indexed_ && already > 0)
    throw ScriptError(name_ + ": turn-indexed script used from more than one thread at once");

  std::lock_guard lock(mu_);
  const std::size_t turn = calls_++;
  const std::string hash = request_hash(request);
  const ScriptEntry* hit = nullptr;
  std::size_t n_hits = 0;
  for (const auto& e : entries_) {
    const bool ok = std::visit(
        [&](const auto& m) {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, TurnIndexMatcher>)
            return m.turn == turn;
          else if constexpr (std::is_same_v<T, MessageHashMatcher>)
            return m.hash == hash;
          else
            return m.matches(request);
        },
        e.matcher);
    if (ok) {
      hit = &e;
      ++n_hits;
    }
  }
  if (n_hits == 0)
    throw ScriptError(name_ + ": script exhausted, no entry matches call " + std::to_string(turn) + " (hash " +
                      hash + ")");
  if (n_hits > 1)
    throw ScriptError(name_ + ": ambiguous script, " + std::to_string(n_hits) + " entries match call " +
                      std::to_string(turn));

  ChatResponse r;
  r.content = hit->reply;
  r.finish_reason = FinishReason::stop;
  for (const auto& m : request.messages) r.usage.prompt_tokens += rough_tokens(m.content);
  r.usage.completion_tokens = rough_tokens(r.content);
  return r;
}

std::size_t ScriptedBackend::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

void ScriptedBackend::reset() {
  std::lock_guard lock(mu_);
  calls_ = 0;
}

nlohmann::json to_wire(const ChatRequest& request, const std::string& model_override) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : request.messages) messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  return {{"model", model_override.empty() ? request.model_name : model_override},
          {"messages", messages},
          {"temperature", request.temperature},
          {"max_tokens", request.max_tokens}};
}

ChatResponse from_wire(const nlohmann::json& body) {
  if (!body.contains("choices") || !body.at("choices").is_array() || body.at("choices").empty())
    throw TransportError("response body has no choices");
  const auto& choice = body.at("choices").at(0);
  ChatResponse r;
  const auto& msg = choice.at("message");
  r.content = msg.contains("content") && msg.at("content").is_string() ? msg.at("content").get<std::string>() : "";
  const std::string reason =
      choice.contains("finish_reason") && choice.at("finish_reason").is_string() ? choice.at("finish_reason").get<std::string>() : "stop";
  if (reason == "length")
    r.finish_reason = FinishReason::length;
  else if (reason == "stop")
    r.finish_reason = r.content.empty() ? FinishReason::error : FinishReason::stop;
  else
    r.finish_reason = FinishReason::error;
  if (body.contains("usage")) {
    const auto& u = body.at("usage");
    r.usage.prompt_tokens = u.value("prompt_tokens", 0);
    r.usage.completion_tokens = u.value("completion_tokens", 0);
  }
  return r;
}

std::string to_string(Schema s) {
  switch (s) {
    case Schema::analysis_report: return "analysis_report";
    case Schema::pattern_list: return "pattern_list";
    case Schema::evolved_prompt: return "evolved_prompt";
  }
  return "analysis_report";
}

Schema schema_from_string(const std::string& s) {
  for (auto v : {Schema::analysis_report, Schema::pattern_list, Schema::evolved_prompt})
    if (to_string(v) == s) return v;
  throw InvalidArgument("unknown schema '" + s + "'");
}

std::optional<nlohmann::json> extract_json_payload(const std::string& text) {
  for (std::size_t start = 0; start < text.size(); ++start) {
    const char open = text[start];
    if (open != '{' && open != '[') continue;
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      const char c = text[i];
      if (in_string) {
        if (escaped)
          escaped = false;
        else if (c == '\\')
          escaped = true;
        else if (c == '"')
          in_string = false;
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{' || c == '[') {
        ++depth;
      } else if (c == '}' || c == ']') {
        if (--depth == 0) {
          auto parsed = nlohmann::json::parse(text.begin() + static_cast<std::ptrdiff_t>(start),
                                              text.begin() + static_cast<std::ptrdiff_t>(i + 1), nullptr, false);
          if (!parsed.is_discarded()) return parsed;
          break;
        }
      }
    }
  }
  return std::nullopt;
}

namespace {

void require_string(const nlohmann::json& obj, const std::string& key, const std::string& path, bool non_empty) {
  if (!obj.contains(key)) throw SchemaViolation(path + key, "required field is missing");
  const auto& v = obj.at(key);
  if (!v.is_string()) throw SchemaViolation(path + key, "must be a string");
  if (non_empty && v.get<std::string>().find_first_not_of(" \t\r\n") == std::string::npos)
    throw SchemaViolation(path + key, "must be non-empty");
}

void require_string_array(const nlohmann::json& obj, const std::string& key, const std::string& path,
                          bool non_empty) {
  if (!obj.contains(key)) throw SchemaViolation(path + key, "required field is missing");
  const auto& v = obj.at(key);
  if (!v.is_array()) throw SchemaViolation(path + key, "must be an array of strings");
  for (const auto& s : v)
    if (!s.is_string()) throw SchemaViolation(path + key, "must be an array of strings");
  if (non_empty && v.empty()) throw SchemaViolation(path + key, "must be non-empty");
}

const nlohmann::json& pattern_array(const nlohmann::json& value) {
  if (value.is_array()) return value;
  if (value.is_object() && value.contains("patterns") && value.at("patterns").is_array()) return value.at("patterns");
  throw SchemaViolation("patterns", "expected an array of patterns");
}

}  // namespace

void check_schema(const nlohmann::json& value, Schema schema) {
  switch (schema) {
    case Schema::analysis_report: {
      if (!value.is_object()) throw SchemaViolation("$", "expected an object");
      require_string(value, "diagnosis", "", true);
      require_string(value, "prescription", "", true);
      if (value.contains("task_id") && !value.at("task_id").is_string())
        throw SchemaViolation("task_id", "must be a string");
      if (value.contains("category_hint") && !value.at("category_hint").is_null()) {
        const auto& c = value.at("category_hint");
        static const std::vector<std::string> cats{"ambiguity", "sequencing", "guardrail", "recovery", "scope"};
        if (!c.is_string() || std::find(cats.begin(), cats.end(), c.get<std::string>()) == cats.end())
          throw SchemaViolation("category_hint", "must be one of ambiguity, sequencing, guardrail, recovery, scope");
      }
      return;
    }
    case Schema::pattern_list: {
      const auto& arr = pattern_array(value);
      static const std::vector<std::string> cats{"ambiguity", "sequencing", "guardrail", "recovery", "scope"};
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string path = "patterns[" + std::to_string(i) + "].";
        const auto& p = arr[i];
        if (!p.is_object()) throw SchemaViolation(path.substr(0, path.size() - 1), "expected an object");
        require_string(p, "pattern_id", path, true);
        require_string(p, "category", path, true);
        if (std::find(cats.begin(), cats.end(), p.at("category").get<std::string>()) == cats.end())
          throw SchemaViolation(path + "category", "unknown category");
        require_string(p, "description", path, true);
        require_string_array(p, "prescribed_actions", path, false);
        require_string_array(p, "evidence_task_ids", path, true);
      }
      return;
    }
    case Schema::evolved_prompt:
      if (!value.is_object()) throw SchemaViolation("$", "expected an object");
      require_string(value, "prompt", "", true);
      return;
  }
}

nlohmann::json parse_structured(const ChatResponse& response, Schema schema) {
  auto payload = extract_json_payload(response.content);
  if (!payload) throw MalformedOutput("malformed agent output: no JSON payload for " + to_string(schema), response.content);
  check_schema(*payload, schema);
  if (schema == Schema::pattern_list && payload->is_object()) return payload->at("patterns");
  return *payload;
}

std::string render_structured(const nlohmann::json& value) { return "```json\n" + value.dump(2) + "\n```"; }

TruncatedLog truncate_log(const std::string& log, std::size_t max_chars) {
  TruncatedLog out;
  out.original_chars = log.size();
  if (log.size() <= max_chars) {
    out.text = log;
    return out;
  }
  auto is_cont = [&](std::size_t i) { return (static_cast<unsigned char>(log[i]) & 0xC0) == 0x80; };
  std::size_t head = max_chars / 2;
  std::size_t tail_start = log.size() - (max_chars - max_chars / 2);
  while (head > 0 && is_cont(head)) --head;
  while (tail_start < log.size() && is_cont(tail_start)) ++tail_start;
  out.text = log.substr(0, head) + "\n[... " + std::to_string(tail_start - head) + " characters omitted ...]\n" +
             log.substr(tail_start);
  out.truncated = true;
  return out;
}

}  // namespace road
