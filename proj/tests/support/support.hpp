#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "road/core.hpp"
#include "road/loop.hpp"
#include "road/protocol.hpp"

namespace road::testing {

std::filesystem::path desk_dir();
std::filesystem::path data_dir();

std::string slurp(const std::filesystem::path& p);

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// n outcomes named <prefix><i>; the first `successes` succeed.
std::vector<TaskOutcome> outcomes_with(std::size_t n, std::size_t successes, const std::string& prefix = "task-");

/// A valid tree with random shape, ids, kinds and continuation lines.
DecisionTreeProtocol random_tree(std::mt19937_64& rng);

/// Loop steps driven by a score table. The prompt evaluated first scores scores[0];
/// the i-th proposal yields a candidate scoring scores[i] (the last entry repeats).
/// `proposals_made` continues a table after a resume.
class FakeSteps final : public LoopSteps {
 public:
  FakeSteps(std::size_t n_tasks, std::vector<std::size_t> scores, std::size_t proposals_made = 0);

  std::vector<TaskOutcome> evaluate(const PromptArtifact& prompt) override;
  Proposal propose(const PromptArtifact& current, std::span<const FailureCase> failures) override;

  std::size_t evaluations() const { return evaluations_; }
  std::size_t proposals() const { return proposals_; }

 private:
  std::size_t n_tasks_;
  std::vector<std::size_t> scores_;
  std::map<std::string, std::size_t> by_text_;
  std::size_t evaluations_ = 0;
  std::size_t proposals_ = 0;
};

/// Relative path -> file bytes for every file under dir. In run.json the created_at field is blanked.
std::map<std::string, std::string> snapshot_run_dir(const std::filesystem::path& dir);

}  // namespace road::testing
