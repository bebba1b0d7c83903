#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "road/agents.hpp"
#include "road/backend.hpp"
#include "road/environment.hpp"
#include "road/loop.hpp"

namespace road::cli {

/// Field-level configuration problems; the CLI maps this to exit status 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct BackendSpec {
  /// "scripted" or "http".
  std::string type;
  std::filesystem::path script;
  HttpBackendConfig http;
  AgentSettings settings;
};

struct CliConfig {
  std::filesystem::path source;
  std::filesystem::path dataset;
  std::filesystem::path corpus;
  std::filesystem::path retail_db;
  std::filesystem::path initial_prompt;
  std::filesystem::path runs_dir;
  BackendSpec contestant;
  BackendSpec analyzer;
  BackendSpec optimizer;
  std::optional<BackendSpec> coach;
  std::optional<std::filesystem::path> analyzer_template;
  std::optional<std::filesystem::path> optimizer_template;
  std::optional<std::filesystem::path> coach_template;
  LoopConfig loop;
  EpisodeSettings episode;
};

/// Reads and resolves a config file; relative paths are taken from the file's directory.
/// Collects every problem it finds before throwing ConfigError.
CliConfig load_config(const std::filesystem::path& path);

/// Same, from an already parsed document (paths resolved against base_dir).
CliConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir,
                           const std::filesystem::path& source = {});

/// Re-checks cross-field rules after flag overrides. Throws ConfigError.
void check_config(const CliConfig& c);

/// Resolved configuration with absolute paths; runs_dir excluded. Stored with each run.
nlohmann::json config_snapshot(const CliConfig& c);

/// Everything built from a config: data, environment, backends, templates.
struct Workspace {
  std::vector<TaskSpec> tasks;
  std::unique_ptr<DeskEnvironment> env;
  std::unique_ptr<ChatBackend> contestant;
  std::unique_ptr<ChatBackend> analyzer;
  std::unique_ptr<ChatBackend> optimizer;
  std::unique_ptr<ChatBackend> coach;
  LoopAgents agents;
  PromptArtifact initial_prompt;
};

/// Loads data files and constructs backends. Data problems surface as ConfigError.
Workspace open_workspace(const CliConfig& c);

std::unique_ptr<ChatBackend> make_backend(const BackendSpec& spec, const std::string& role);

}  // namespace road::cli
