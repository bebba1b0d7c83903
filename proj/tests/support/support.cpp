#include "support.hpp"

#include <atomic>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace road::testing {

namespace fs = std::filesystem;

fs::path desk_dir() { return ROAD_TEST_DESK_DIR; }
fs::path data_dir() { return ROAD_TEST_DATA_DIR; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  std::random_device rd;
  path_ = fs::temp_directory_path() /
          ("road-test-" + std::to_string(rd()) + "-" + std::to_string(counter.fetch_add(1)));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::vector<TaskOutcome> outcomes_with(std::size_t n, std::size_t successes, const std::string& prefix) {
  std::vector<TaskOutcome> out;
  for (std::size_t i = 0; i < n; ++i) {
    TaskOutcome o;
    o.task_id = prefix + std::to_string(i);
    o.success = i < successes;
    o.transcript.push_back({Speaker::user, "request " + std::to_string(i), {}});
    o.transcript.push_back({Speaker::assistant, o.success ? "done" : "gave up", {}});
    o.judge_notes = o.success ? "ok" : "missing required call";
    out.push_back(std::move(o));
  }
  return out;
}

namespace {

// Words that trigger no kind inference rule.
const std::vector<std::string> k_vocab{"check",  "order",  "status", "ask",    "customer", "address", "refund",
                                       "policy", "detail", "item",   "verify", "payment",  "account", "record",
                                       "note",   "reply",  "search", "query",  "handbook", "benefit", "chunk"};

std::string pick(std::mt19937_64& rng, const std::vector<std::string>& v) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

std::string phrase(std::mt19937_64& rng, std::size_t min_words, std::size_t max_words) {
  const auto n = std::uniform_int_distribution<std::size_t>(min_words, max_words)(rng);
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += pick(rng, k_vocab);
  }
  s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

std::string segment(std::mt19937_64& rng, int number) {
  std::string s = std::to_string(number);
  if (std::uniform_int_distribution<int>(0, 5)(rng) == 0) s += static_cast<char>('A' + std::uniform_int_distribution<int>(0, 3)(rng));
  return s;
}

ProtocolNode random_node(std::mt19937_64& rng, const std::string& id, int depth) {
  ProtocolNode n;
  n.node_id = id;
  n.style = std::uniform_int_distribution<int>(0, 7)(rng) == 0 ? NodeStyle::step_bullet : NodeStyle::outline;

  const int max_children = depth >= 4 ? 0 : 4 - depth;
  const int n_children = std::uniform_int_distribution<int>(0, max_children)(rng);
  std::set<std::string> used;
  for (int i = 0; i < n_children; ++i) {
    std::string seg;
    do seg = segment(rng, std::uniform_int_distribution<int>(0, 12)(rng));
    while (!used.insert(seg).second);
    n.children.push_back(random_node(rng, id + "." + seg, depth + 1));
  }

  const std::string desc = phrase(rng, 1, 6);
  switch (std::uniform_int_distribution<int>(0, 9)(rng)) {
    case 0: {
      std::vector<std::string> actions;
      const auto k = std::uniform_int_distribution<std::size_t>(2, 4)(rng);
      std::set<std::string> seen;
      while (actions.size() < k) {
        const std::string a = pick(rng, k_vocab) + "_" + pick(rng, k_vocab);
        if (seen.insert(a).second) actions.push_back(a);
      }
      n.kind = NodeKind::sequencing_rule;
      n.text = sequencing_text(desc, actions);
      n.ordered_actions = actions;
      break;
    }
    case 1: {
      static const std::vector<std::string> tokens{"YES", "CONFIRM", "PROCEED", "I agree"};
      n.kind = NodeKind::guard;
      n.required_token = pick(rng, tokens);
      n.text = guard_text(desc, n.required_token);
      break;
    }
    case 2:
      n.kind = NodeKind::recovery;
      n.text = recovery_text(desc);
      break;
    default:
      n.kind = n.children.empty() ? NodeKind::step : NodeKind::branch;
      n.text = desc;
      break;
  }
  const int extra = std::uniform_int_distribution<int>(0, 2)(rng);
  for (int i = 0; i < extra; ++i) {
    const std::string indent(2 * std::uniform_int_distribution<std::size_t>(0, 2)(rng) * (i > 0), ' ');
    n.text += "\n" + indent + "- " + phrase(rng, 1, 5);
  }
  return n;
}

}  // namespace

DecisionTreeProtocol random_tree(std::mt19937_64& rng) {
  static const std::vector<std::string> titles{"", "## DECISION TREE (operational framework)", "Decision Procedure"};
  DecisionTreeProtocol t;
  t.title = pick(rng, titles);
  const int n_roots = std::uniform_int_distribution<int>(1, 5)(rng);
  std::set<std::string> used;
  for (int i = 0; i < n_roots; ++i) {
    std::string seg;
    do seg = segment(rng, std::uniform_int_distribution<int>(0, 9)(rng));
    while (!used.insert(seg).second);
    t.roots.push_back(random_node(rng, seg, 1));
  }
  return t;
}

FakeSteps::FakeSteps(std::size_t n_tasks, std::vector<std::size_t> scores, std::size_t proposals_made)
    : n_tasks_(n_tasks), scores_(std::move(scores)), proposals_(proposals_made) {}

std::vector<TaskOutcome> FakeSteps::evaluate(const PromptArtifact& prompt) {
  ++evaluations_;
  auto it = by_text_.find(prompt.text);
  const std::size_t score = it == by_text_.end() ? scores_.front() : it->second;
  if (it == by_text_.end()) by_text_[prompt.text] = score;
  return outcomes_with(n_tasks_, score);
}

Proposal FakeSteps::propose(const PromptArtifact& current, std::span<const FailureCase>) {
  ++proposals_;
  const std::size_t score = scores_[std::min(proposals_, scores_.size() - 1)];
  Proposal p;
  Evolution e;
  e.prompt.text = current.text + "\ncandidate " + std::to_string(proposals_);
  e.prompt.version = current.version + 1;
  e.prompt.parent_version = current.version;
  p.evolution = e;
  by_text_[e.prompt.text] = score;
  return p;
}

std::map<std::string, std::string> snapshot_run_dir(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    std::string bytes = slurp(e.path());
    if (rel == "run.json") {
      auto j = nlohmann::json::parse(bytes);
      j["created_at"] = "";
      bytes = j.dump(2);
    }
    out[rel] = std::move(bytes);
  }
  return out;
}

}  // namespace road::testing
