#include "config.hpp"

#include <fstream>
#include <sstream>

#include "road/errors.hpp"

namespace road::cli {

namespace fs = std::filesystem;

namespace {

std::string join_problems(const std::vector<std::string>& problems) {
  std::string s = "invalid configuration:";
  for (const auto& p : problems) s += "\n  " + p;
  return s;
}

// Typed field access that records problems instead of throwing.
class Reader {
 public:
  Reader(const nlohmann::json& root, fs::path base, std::vector<std::string>& problems)
      : root_(root), base_(std::move(base)), problems_(problems) {}

  const nlohmann::json* get(const nlohmann::json& obj, const std::string& key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key) || obj.at(key).is_null()) return nullptr;
    (void)where;
    return &obj.at(key);
  }

  std::optional<fs::path> path(const nlohmann::json& obj, const std::string& key, const std::string& where,
                               bool required, bool must_exist = true) {
    const auto* v = get(obj, key, where);
    if (!v) {
      if (required) problems_.push_back(where + key + ": required");
      return std::nullopt;
    }
    if (!v->is_string() || v->get<std::string>().empty()) {
      problems_.push_back(where + key + ": must be a non-empty path string");
      return std::nullopt;
    }
    fs::path p = v->get<std::string>();
    if (p.is_relative()) p = base_ / p;
    p = p.lexically_normal();
    if (must_exist && !fs::exists(p)) problems_.push_back(where + key + ": file not found: " + p.string());
    return p;
  }

  template <typename T>
  void number(const nlohmann::json& obj, const std::string& key, const std::string& where, T& out) {
    const auto* v = get(obj, key, where);
    if (!v) return;
    if constexpr (std::is_floating_point_v<T>) {
      if (!v->is_number()) {
        problems_.push_back(where + key + ": must be a number");
        return;
      }
    } else {
      if (!v->is_number_integer()) {
        problems_.push_back(where + key + ": must be an integer");
        return;
      }
      if (v->get<std::int64_t>() < 0) {
        problems_.push_back(where + key + ": must not be negative");
        return;
      }
    }
    out = v->get<T>();
  }

  void string(const nlohmann::json& obj, const std::string& key, const std::string& where, std::string& out) {
    const auto* v = get(obj, key, where);
    if (!v) return;
    if (!v->is_string()) {
      problems_.push_back(where + key + ": must be a string");
      return;
    }
    out = v->get<std::string>();
  }

  std::vector<std::string>& problems() { return problems_; }
  const nlohmann::json& root() const { return root_; }

 private:
  const nlohmann::json& root_;
  fs::path base_;
  std::vector<std::string>& problems_;
};

std::optional<BackendSpec> read_backend(Reader& r, const nlohmann::json& backends, const std::string& role,
                                        bool required, const AgentSettings& defaults) {
  const std::string where = "backends." + role + ".";
  if (!backends.is_object() || !backends.contains(role) || backends.at(role).is_null()) {
    if (required) r.problems().push_back("backends." + role + ": required");
    return std::nullopt;
  }
  const auto& b = backends.at(role);
  if (!b.is_object()) {
    r.problems().push_back("backends." + role + ": must be an object");
    return std::nullopt;
  }
  BackendSpec spec;
  spec.settings = defaults;
  r.string(b, "type", where, spec.type);
  r.string(b, "model_name", where, spec.settings.model_name);
  r.number(b, "temperature", where, spec.settings.temperature);
  r.number(b, "max_tokens", where, spec.settings.max_tokens);
  if (spec.type == "scripted") {
    if (auto p = r.path(b, "script", where, true)) spec.script = *p;
  } else if (spec.type == "http") {
    r.string(b, "base_url", where, spec.http.base_url);
    if (spec.http.base_url.empty()) r.problems().push_back(where + "base_url: required for http backends");
    r.string(b, "path", where, spec.http.path);
    r.string(b, "model", where, spec.http.model);
    r.string(b, "api_key_env", where, spec.http.api_key_env);
    r.number(b, "max_attempts", where, spec.http.max_attempts);
    std::int64_t timeout = spec.http.timeout.count();
    r.number(b, "timeout_s", where, timeout);
    spec.http.timeout = std::chrono::seconds(timeout);
    if (const auto* bo = r.get(b, "backoff_ms", where)) {
      if (!bo->is_array()) {
        r.problems().push_back(where + "backoff_ms: must be an array of integers");
      } else {
        spec.http.backoff.clear();
        for (const auto& ms : *bo) {
          if (!ms.is_number_integer() || ms.get<std::int64_t>() < 0) {
            r.problems().push_back(where + "backoff_ms: must be an array of non-negative integers");
            break;
          }
          spec.http.backoff.emplace_back(ms.get<std::int64_t>());
        }
      }
    }
    if (spec.http.max_attempts < 1) r.problems().push_back(where + "max_attempts: must be at least 1");
  } else {
    r.problems().push_back(where + "type: must be 'scripted' or 'http'");
  }
  if (spec.settings.max_tokens < 1) r.problems().push_back(where + "max_tokens: must be positive");
  return spec;
}

void check_loop(const LoopConfig& l, std::vector<std::string>& problems) {
  if (l.t_max < 1) problems.push_back("loop.t_max: must be at least 1");
  if (l.patience < 1) problems.push_back("loop.patience: must be at least 1");
  if (l.patience > l.t_max) problems.push_back("loop.patience: must not exceed loop.t_max");
  if (l.max_failures_analyzed < 1) problems.push_back("loop.max_failures_analyzed: must be at least 1");
  if (l.parallelism < 1) problems.push_back("loop.parallelism: must be at least 1");
  if (l.max_log_chars < 64) problems.push_back("loop.max_log_chars: must be at least 64");
}

nlohmann::json backend_json(const BackendSpec& b) {
  nlohmann::json j = {{"type", b.type},
                      {"model_name", b.settings.model_name},
                      {"temperature", b.settings.temperature},
                      {"max_tokens", b.settings.max_tokens}};
  if (b.type == "scripted") {
    j["script"] = b.script.generic_string();
  } else {
    std::vector<std::int64_t> backoff;
    for (const auto& d : b.http.backoff) backoff.push_back(d.count());
    j["base_url"] = b.http.base_url;
    j["path"] = b.http.path;
    j["model"] = b.http.model;
    j["api_key_env"] = b.http.api_key_env;
    j["max_attempts"] = b.http.max_attempts;
    j["timeout_s"] = b.http.timeout.count();
    j["backoff_ms"] = backoff;
  }
  return j;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error(join_problems(problems)), problems_(std::move(problems)) {}

CliConfig config_from_json(const nlohmann::json& j, const fs::path& base_dir, const fs::path& source) {
  std::vector<std::string> problems;
  if (!j.is_object()) throw ConfigError({"config: top level must be a JSON object"});
  Reader r(j, base_dir, problems);
  CliConfig c;
  c.source = source;
  if (auto p = r.path(j, "dataset", "", true)) c.dataset = *p;
  if (auto p = r.path(j, "corpus", "", false)) c.corpus = *p;
  if (auto p = r.path(j, "retail_db", "", false)) c.retail_db = *p;
  if (auto p = r.path(j, "initial_prompt", "", true)) c.initial_prompt = *p;
  c.runs_dir = r.path(j, "runs_dir", "", false, false).value_or(base_dir / "runs");

  const nlohmann::json empty = nlohmann::json::object();
  const auto& backends = j.contains("backends") ? j.at("backends") : empty;
  if (!backends.is_object()) problems.push_back("backends: must be an object");

  AgentSettings contestant_defaults;
  contestant_defaults.model_name = c.episode.model_name;
  contestant_defaults.temperature = c.episode.temperature;
  contestant_defaults.max_tokens = c.episode.max_tokens;
  if (auto b = read_backend(r, backends, "contestant", true, contestant_defaults)) c.contestant = *b;
  if (auto b = read_backend(r, backends, "analyzer", true, {})) c.analyzer = *b;
  if (auto b = read_backend(r, backends, "optimizer", true, {})) c.optimizer = *b;
  c.coach = read_backend(r, backends, "coach", false, {});

  if (j.contains("templates") && !j.at("templates").is_null()) {
    const auto& t = j.at("templates");
    c.analyzer_template = r.path(t, "analyzer", "templates.", false);
    c.optimizer_template = r.path(t, "optimizer", "templates.", false);
    c.coach_template = r.path(t, "coach", "templates.", false);
  }

  if (j.contains("loop")) {
    const auto& l = j.at("loop");
    r.number(l, "t_max", "loop.", c.loop.t_max);
    r.number(l, "patience", "loop.", c.loop.patience);
    r.number(l, "max_failures_analyzed", "loop.", c.loop.max_failures_analyzed);
    r.number(l, "max_log_chars", "loop.", c.loop.max_log_chars);
    r.number(l, "parallelism", "loop.", c.loop.parallelism);
    std::string policy = to_string(c.loop.evolve_policy);
    r.string(l, "evolve_policy", "loop.", policy);
    try {
      c.loop.evolve_policy = evolve_policy_from_string(policy);
    } catch (const InvalidArgument&) {
      problems.push_back("loop.evolve_policy: must be 'append' or 'rewrite'");
    }
  }
  if (j.contains("episode")) {
    const auto& e = j.at("episode");
    r.number(e, "max_turns", "episode.", c.episode.max_turns);
    r.number(e, "top_k", "episode.", c.episode.top_k);
  }
  c.episode.model_name = c.contestant.settings.model_name;
  c.episode.temperature = c.contestant.settings.temperature;
  c.episode.max_tokens = c.contestant.settings.max_tokens;

  if (!problems.empty()) throw ConfigError(problems);
  check_config(c);
  return c;
}

void check_config(const CliConfig& c) {
  std::vector<std::string> problems;
  check_loop(c.loop, problems);
  if (c.episode.max_turns < 1) problems.push_back("episode.max_turns: must be at least 1");
  if (c.episode.top_k < 1) problems.push_back("episode.top_k: must be at least 1");
  if (c.loop.evolve_policy == EvolvePolicy::rewrite && !c.coach)
    problems.push_back("backends.coach: required when loop.evolve_policy is 'rewrite'");
  if (!problems.empty()) throw ConfigError(problems);
}

CliConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError({"config: file not found: " + path.string()});
  std::ostringstream ss;
  ss << in.rdbuf();
  auto j = nlohmann::json::parse(ss.str(), nullptr, false);
  if (j.is_discarded()) throw ConfigError({"config: not valid JSON: " + path.string()});
  return config_from_json(j, fs::absolute(path).parent_path(), path);
}

nlohmann::json config_snapshot(const CliConfig& c) {
  auto abs = [](const fs::path& p) { return p.empty() ? nlohmann::json(nullptr) : nlohmann::json(fs::absolute(p).lexically_normal().generic_string()); };
  nlohmann::json j;
  j["dataset"] = abs(c.dataset);
  j["corpus"] = abs(c.corpus);
  j["retail_db"] = abs(c.retail_db);
  j["initial_prompt"] = abs(c.initial_prompt);
  j["backends"] = {{"contestant", backend_json(c.contestant)},
                   {"analyzer", backend_json(c.analyzer)},
                   {"optimizer", backend_json(c.optimizer)},
                   {"coach", c.coach ? backend_json(*c.coach) : nlohmann::json(nullptr)}};
  nlohmann::json t = nlohmann::json::object();
  if (c.analyzer_template) t["analyzer"] = abs(*c.analyzer_template);
  if (c.optimizer_template) t["optimizer"] = abs(*c.optimizer_template);
  if (c.coach_template) t["coach"] = abs(*c.coach_template);
  j["templates"] = t;
  j["loop"] = c.loop;
  j["episode"] = {{"max_turns", c.episode.max_turns}, {"top_k", c.episode.top_k}};
  return j;
}

std::unique_ptr<ChatBackend> make_backend(const BackendSpec& spec, const std::string& role) {
  if (spec.type == "scripted") {
    auto b = ScriptedBackend::from_file(spec.script);
    return b;
  }
  (void)role;
  return std::make_unique<HttpBackend>(spec.http);
}

Workspace open_workspace(const CliConfig& c) {
  Workspace w;
  std::vector<std::string> problems;
  auto guard = [&](const std::string& field, auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      problems.push_back(field + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      problems.push_back(field + ": " + e.what());
    }
  };

  const auto registry = ToolRegistry::retail();
  guard("dataset", [&] {
    w.tasks = load_tasks(c.dataset);
    for (const auto& t : w.tasks) check_task(t, registry);
  });
  bool needs_corpus = false, needs_db = false;
  for (const auto& t : w.tasks) (t.kind == TaskKind::retrieval ? needs_corpus : needs_db) = true;
  Corpus corpus;
  RetailDb db;
  if (needs_corpus && c.corpus.empty()) problems.push_back("corpus: required by retrieval tasks");
  if (needs_db && c.retail_db.empty()) problems.push_back("retail_db: required by tool tasks");
  if (!c.corpus.empty()) guard("corpus", [&] { corpus = load_corpus(c.corpus); });
  if (!c.retail_db.empty()) guard("retail_db", [&] { db = load_retail_db(c.retail_db); });
  if (needs_corpus && corpus.chunks.empty() && !c.corpus.empty()) problems.push_back("corpus: has no chunks");
  guard("initial_prompt", [&] {
    std::ifstream in(c.initial_prompt, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    w.initial_prompt = PromptArtifact::initial(ss.str());
  });

  guard("backends.contestant", [&] { w.contestant = make_backend(c.contestant, "contestant"); });
  guard("backends.analyzer", [&] { w.analyzer = make_backend(c.analyzer, "analyzer"); });
  guard("backends.optimizer", [&] { w.optimizer = make_backend(c.optimizer, "optimizer"); });
  if (c.coach) guard("backends.coach", [&] { w.coach = make_backend(*c.coach, "coach"); });

  guard("templates.analyzer", [&] {
    if (c.analyzer_template) w.agents.analyzer_prompt = RolePrompt::from_file(AgentRole::analyzer, *c.analyzer_template);
  });
  guard("templates.optimizer", [&] {
    if (c.optimizer_template) w.agents.optimizer_prompt = RolePrompt::from_file(AgentRole::optimizer, *c.optimizer_template);
  });
  guard("templates.coach", [&] {
    if (c.coach_template) w.agents.coach_prompt = RolePrompt::from_file(AgentRole::coach, *c.coach_template);
  });
  if (!problems.empty()) throw ConfigError(problems);

  w.env = std::make_unique<DeskEnvironment>(registry, std::move(db), std::move(corpus), c.episode);
  w.agents.contestant = w.contestant.get();
  w.agents.analyzer = w.analyzer.get();
  w.agents.optimizer = w.optimizer.get();
  w.agents.coach = w.coach.get();
  w.agents.analyzer_settings = c.analyzer.settings;
  w.agents.optimizer_settings = c.optimizer.settings;
  if (c.coach) w.agents.coach_settings = c.coach->settings;
  return w;
}

}  // namespace road::cli
