#include "road/run_store.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "road/errors.hpp"
#include "road/hash.hpp"

namespace road {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw PersistenceError("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw PersistenceError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw PersistenceError("cannot rename " + tmp.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("missing " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& path) {
  auto j = nlohmann::json::parse(read_text(path), nullptr, false);
  if (j.is_discarded()) throw PersistenceError("corrupt JSON in " + path.string());
  return j;
}

std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
  std::vector<nlohmann::json> out;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw PersistenceError("corrupt line in " + path.string());
    out.push_back(std::move(j));
  }
  return out;
}

fs::path iter_dir(const fs::path& run_dir, int t) { return run_dir / ("iter_" + std::to_string(t)); }

nlohmann::json analysis_json(const AnalysisAttempt& a) {
  nlohmann::json j;
  j["task_id"] = a.task_id;
  j["report"] = a.report ? nlohmann::json(*a.report) : nlohmann::json(nullptr);
  j["calls"] = a.calls;
  j["log_truncated"] = a.log_truncated;
  j["original_log_chars"] = a.original_log_chars;
  j["error"] = a.error;
  j["rejected_outputs"] = a.rejected_outputs;
  return j;
}

AnalysisAttempt analysis_from_json(const nlohmann::json& j) {
  AnalysisAttempt a;
  a.task_id = j.at("task_id").get<std::string>();
  if (!j.at("report").is_null()) a.report = j.at("report").get<AnalysisReport>();
  a.calls = j.at("calls").get<int>();
  a.log_truncated = j.at("log_truncated").get<bool>();
  a.original_log_chars = j.at("original_log_chars").get<std::size_t>();
  a.error = j.at("error").get<std::string>();
  a.rejected_outputs = j.at("rejected_outputs").get<std::vector<std::string>>();
  return a;
}

std::vector<TaskOutcome> outcomes_from(const nlohmann::json& eval_file) {
  return eval_file.at("outcomes").get<std::vector<TaskOutcome>>();
}

}  // namespace

nlohmann::json eval_file_json(const EvalSummary& summary, const std::vector<TaskOutcome>& outcomes, bool reused) {
  return {{"summary", summary}, {"reused", reused}, {"outcomes", outcomes}};
}

RunStore::RunStore(fs::path runs_dir, std::string run_id) : runs_dir_(std::move(runs_dir)), run_id_(std::move(run_id)) {
  if (run_id_.empty() || run_id_.find('/') != std::string::npos || run_id_ == "." || run_id_ == "..")
    throw InvalidArgument("invalid run id '" + run_id_ + "'");
}

std::string RunStore::derive_run_id(const nlohmann::json& config, const std::string& initial_prompt) {
  return "run-" + content_hash(config.dump() + '\n' + initial_prompt);
}

bool RunStore::exists() const { return fs::exists(dir() / "config.json"); }

void RunStore::create(const LoopConfig& loop, const nlohmann::json& context, const PromptArtifact& initial,
                      const std::string& created_at) {
  if (fs::exists(dir())) throw PersistenceError("run directory already exists: " + dir().string());
  std::error_code ec;
  fs::create_directories(dir(), ec);
  if (ec) throw PersistenceError("cannot create " + dir().string() + ": " + ec.message());
  write_json(dir() / "config.json", {{"loop", loop}, {"context", context}});
  write_text(dir() / "initial_prompt.txt", initial.text);
  write_json(dir() / "run.json", {{"run_id", run_id_}, {"created_at", created_at}, {"status", "running"},
                                  {"iterations_completed", 0}});
}

LoopConfig RunStore::read_loop_config() const { return read_json(dir() / "config.json").at("loop").get<LoopConfig>(); }

nlohmann::json RunStore::read_context() const { return read_json(dir() / "config.json").value("context", nlohmann::json::object()); }

PromptArtifact RunStore::read_initial_prompt() const {
  return PromptArtifact::initial(read_text(dir() / "initial_prompt.txt"));
}

void RunStore::write_run_meta(const nlohmann::json& meta) const { write_json(dir() / "run.json", meta); }

nlohmann::json RunStore::read_run_meta() const { return read_json(dir() / "run.json"); }

void RunStore::write_final_prompt(const PromptArtifact& prompt) const {
  write_text(dir() / "final_prompt.txt", prompt.text);
}

void RunStore::write_iteration(const IterationRecord& rec) const {
  const fs::path d = iter_dir(dir(), rec.t);
  std::error_code ec;
  fs::remove_all(d, ec);
  fs::create_directories(d, ec);
  if (ec) throw PersistenceError("cannot create " + d.string() + ": " + ec.message());

  write_json(d / "eval_in.json", eval_file_json(rec.eval_in, rec.outcomes_in, rec.eval_in_reused));

  std::string lines;
  for (const auto& f : rec.failures) {
    const bool analyzed =
        std::find(rec.analyzed_task_ids.begin(), rec.analyzed_task_ids.end(), f.task_id) != rec.analyzed_task_ids.end();
    lines += nlohmann::json{{"task_id", f.task_id}, {"analyzed", analyzed}, {"raw_log", f.raw_log}}.dump() + "\n";
  }
  write_text(d / "failures.jsonl", lines);

  lines.clear();
  for (const auto& a : rec.proposal.analyses) lines += analysis_json(a).dump() + "\n";
  write_text(d / "reports.jsonl", lines);

  const auto& p = rec.proposal;
  if (p.aggregation)
    write_json(d / "patterns.json", {{"patterns", p.aggregation->patterns},
                                     {"calls", p.aggregation->calls},
                                     {"rejected_outputs", p.aggregation->rejected_outputs}});
  if (p.protocol) write_text(d / "protocol.txt", render_protocol(*p.protocol));
  if (p.evolution) write_text(d / "candidate_prompt.txt", p.evolution->prompt.text);
  if (rec.eval_candidate) write_json(d / "eval_candidate.json", eval_file_json(*rec.eval_candidate, rec.outcomes_candidate, false));

  nlohmann::json dec;
  dec["t"] = rec.t;
  dec["prompt_in_version"] = rec.prompt_in_version;
  dec["success_in"] = format_rate(rec.eval_in.success_rate);
  dec["n_failures"] = rec.failures.size();
  dec["analyzed_task_ids"] = rec.analyzed_task_ids;
  dec["error"] = p.error;
  if (p.protocol) {
    dec["protocol_id"] = p.protocol->protocol_id;
    dec["protocol_evidence"] = p.protocol->evidence;
  }
  if (p.evolution) {
    const auto& e = *p.evolution;
    dec["candidate_version"] = e.prompt.version;
    dec["candidate_parent_version"] = e.prompt.parent_version ? nlohmann::json(*e.prompt.parent_version) : nlohmann::json(nullptr);
    dec["candidate_protocol_id"] = e.prompt.embedded_protocol_id ? nlohmann::json(*e.prompt.embedded_protocol_id) : nlohmann::json(nullptr);
    dec["evolve_applied"] = to_string(e.applied);
    dec["fallback_reason"] = e.fallback_reason;
    dec["coach_calls"] = e.calls;
  }
  dec["success_candidate"] = rec.eval_candidate ? nlohmann::json(format_rate(rec.eval_candidate->success_rate)) : nlohmann::json(nullptr);
  dec["accepted"] = rec.accepted;
  dec["patience_after"] = rec.patience_after;
  dec["stop_reason"] =
      rec.stop_reason && *rec.stop_reason != StopReason::interrupted ? nlohmann::json(to_string(*rec.stop_reason)) : nlohmann::json(nullptr);
  write_json(d / "decision.json", dec);
}

std::vector<IterationRecord> RunStore::read_iterations() const {
  std::map<int, fs::path> found;
  if (!fs::exists(dir())) throw NotFound("no run '" + run_id_ + "' under " + runs_dir_.string());
  for (const auto& entry : fs::directory_iterator(dir())) {
    const auto name = entry.path().filename().string();
    if (!entry.is_directory() || name.rfind("iter_", 0) != 0) continue;
    if (!fs::exists(entry.path() / "decision.json")) continue;
    try {
      found[std::stoi(name.substr(5))] = entry.path();
    } catch (const std::exception&) {
      continue;
    }
  }

  std::vector<IterationRecord> out;
  for (const auto& [t, d] : found) {
    try {
      IterationRecord rec;
      const auto dec = read_json(d / "decision.json");
      rec.t = dec.at("t").get<int>();
      rec.prompt_in_version = dec.at("prompt_in_version").get<std::int64_t>();
      const auto ein = read_json(d / "eval_in.json");
      rec.eval_in = ein.at("summary").get<EvalSummary>();
      rec.eval_in_reused = ein.at("reused").get<bool>();
      rec.outcomes_in = outcomes_from(ein);
      rec.analyzed_task_ids = dec.at("analyzed_task_ids").get<std::vector<std::string>>();
      for (const auto& o : rec.outcomes_in)
        if (!o.success) rec.failures.push_back(make_failure_case(o));

      auto& p = rec.proposal;
      p.error = dec.at("error").get<std::string>();
      for (const auto& line : read_jsonl(d / "reports.jsonl")) p.analyses.push_back(analysis_from_json(line));
      if (fs::exists(d / "patterns.json")) {
        const auto pj = read_json(d / "patterns.json");
        AggregationAttempt agg;
        agg.patterns = pj.at("patterns").get<std::vector<FailurePattern>>();
        agg.calls = pj.at("calls").get<int>();
        agg.rejected_outputs = pj.at("rejected_outputs").get<std::vector<std::string>>();
        p.aggregation = std::move(agg);
      }
      if (fs::exists(d / "protocol.txt")) {
        auto tree = parse_protocol(read_text(d / "protocol.txt"));
        if (dec.contains("protocol_evidence"))
          tree.evidence = dec.at("protocol_evidence").get<std::map<std::string, std::vector<std::string>>>();
        p.protocol = std::move(tree);
      }
      if (fs::exists(d / "candidate_prompt.txt")) {
        Evolution e;
        e.prompt.text = read_text(d / "candidate_prompt.txt");
        e.prompt.version = dec.at("candidate_version").get<std::int64_t>();
        if (!dec.at("candidate_parent_version").is_null())
          e.prompt.parent_version = dec.at("candidate_parent_version").get<std::int64_t>();
        if (!dec.at("candidate_protocol_id").is_null())
          e.prompt.embedded_protocol_id = dec.at("candidate_protocol_id").get<std::string>();
        e.applied = evolve_policy_from_string(dec.at("evolve_applied").get<std::string>());
        e.fallback_reason = dec.at("fallback_reason").get<std::string>();
        e.calls = dec.at("coach_calls").get<int>();
        p.evolution = std::move(e);
      }
      if (fs::exists(d / "eval_candidate.json")) {
        const auto ec = read_json(d / "eval_candidate.json");
        rec.eval_candidate = ec.at("summary").get<EvalSummary>();
        rec.outcomes_candidate = outcomes_from(ec);
      }
      rec.accepted = dec.at("accepted").get<bool>();
      rec.patience_after = dec.at("patience_after").get<int>();
      if (!dec.at("stop_reason").is_null())
        rec.stop_reason = stop_reason_from_string(dec.at("stop_reason").get<std::string>());
      if (rec.accepted && !p.evolution) throw PersistenceError("accepted iteration without a candidate prompt");
      out.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw PersistenceError("corrupt iteration " + d.string() + ": " + e.what());
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i].t != static_cast<int>(i) + 1)
      throw PersistenceError("iteration " + std::to_string(i + 1) + " missing from run " + run_id_);
  return out;
}

std::size_t RunStore::remove_partial_iterations() const {
  std::size_t removed = 0;
  if (!fs::exists(dir())) return 0;
  std::vector<fs::path> doomed;
  for (const auto& entry : fs::directory_iterator(dir())) {
    const auto name = entry.path().filename().string();
    if (entry.is_directory() && name.rfind("iter_", 0) == 0 && !fs::exists(entry.path() / "decision.json"))
      doomed.push_back(entry.path());
  }
  for (const auto& d : doomed) {
    std::error_code ec;
    fs::remove_all(d, ec);
    if (ec) throw PersistenceError("cannot remove " + d.string() + ": " + ec.message());
    ++removed;
  }
  return removed;
}

std::vector<std::string> list_runs(const fs::path& runs_dir) {
  std::vector<std::string> ids;
  if (!fs::exists(runs_dir)) return ids;
  for (const auto& entry : fs::directory_iterator(runs_dir))
    if (entry.is_directory() && fs::exists(entry.path() / "config.json")) ids.push_back(entry.path().filename().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace road
