#pragma once

// On-disk layout of a run:
//
//   <runs_dir>/<run_id>/
//     config.json          {"loop": LoopConfig, "context": caller data}
//     run.json             status, stop reason, initial/final evaluation, created_at
//     initial_prompt.txt
//     final_prompt.txt     written when the run finishes
//     iter_<t>/
//       eval_in.json  failures.jsonl  reports.jsonl  patterns.json  protocol.txt
//       candidate_prompt.txt  eval_candidate.json  decision.json
//
// decision.json is written last; an iteration directory without it is partial.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "road/loop.hpp"

namespace road {

class RunStore {
 public:
  RunStore(std::filesystem::path runs_dir, std::string run_id);

  /// "run-" + content hash of the config dump and the initial prompt text.
  static std::string derive_run_id(const nlohmann::json& config, const std::string& initial_prompt);

  const std::string& run_id() const { return run_id_; }
  std::filesystem::path dir() const { return runs_dir_ / run_id_; }
  bool exists() const;

  /// Throws PersistenceError if the run directory already exists.
  void create(const LoopConfig& loop, const nlohmann::json& context, const PromptArtifact& initial,
              const std::string& created_at);

  LoopConfig read_loop_config() const;
  nlohmann::json read_context() const;
  PromptArtifact read_initial_prompt() const;

  void write_run_meta(const nlohmann::json& meta) const;
  nlohmann::json read_run_meta() const;

  void write_iteration(const IterationRecord& record) const;
  /// Complete iterations in order of t.
  std::vector<IterationRecord> read_iterations() const;
  /// Deletes iteration directories that lack decision.json. Returns how many were removed.
  std::size_t remove_partial_iterations() const;

  void write_final_prompt(const PromptArtifact& prompt) const;

 private:
  std::filesystem::path runs_dir_;
  std::string run_id_;
};

/// Every run directory under runs_dir, sorted by name.
std::vector<std::string> list_runs(const std::filesystem::path& runs_dir);

nlohmann::json eval_file_json(const EvalSummary& summary, const std::vector<TaskOutcome>& outcomes, bool reused);

}  // namespace road
