#pragma once

// Decision Tree Protocol: a numbered outline of instructions spliced into an agent prompt.
//
// Text format
// -----------
//   <title line(s)>                       optional, before the first node
//   1. Authentication                     single-segment ids end with '.'
//     1.1 If user provides email:         deeper ids: segments joined by '.'
//         - Call find_user_id_by_email.   continuation line, belongs to 1.1
//   5B. Modify pending order address      a segment is digits plus optional uppercase suffix
//   - Step 2: Retrieval                   alternate node line form, same id grammar
//
// The parent of a node is the id with its last segment removed; it must appear earlier.
// Indentation is not significant on input. Canonical output indents two spaces per depth
// level and places continuation lines two spaces deeper than their node line, keeping
// their relative indentation.
//
// Node kind is inferred from the node text (label plus continuation lines):
//   recovery         label starts with "Recovery"
//   guard            "literal" followed by a quoted token, or by an upper-case word
//   sequencing_rule  an ordinal marker (FIRST, SECOND, ...) or the phrase "Sequencing Rule"
//   branch / step    otherwise; branch iff the node has children

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace road {

enum class NodeKind { step, branch, sequencing_rule, guard, recovery };
enum class NodeStyle { outline, step_bullet };

std::string to_string(NodeKind k);

struct ProtocolNode {
  std::string node_id;
  NodeKind kind = NodeKind::step;
  NodeStyle style = NodeStyle::outline;
  /// Label on the first line; continuation lines follow after '\n'.
  std::string text;
  std::vector<ProtocolNode> children;
  std::vector<std::string> ordered_actions;  // sequencing_rule only
  std::string required_token;                // guard only

  friend bool operator==(const ProtocolNode&, const ProtocolNode&) = default;
};

struct DecisionTreeProtocol {
  std::string protocol_id;
  std::string title;
  std::vector<ProtocolNode> roots;
  /// node_id -> task ids of the failures a synthesized node answers. Empty for parsed trees.
  std::map<std::string, std::vector<std::string>> evidence;
};

/// Title and node structure; protocol_id and evidence are bookkeeping and do not count.
bool structurally_equal(const DecisionTreeProtocol& a, const DecisionTreeProtocol& b);

enum class FailureCategory { ambiguity, sequencing, guardrail, recovery, scope };

std::string to_string(FailureCategory c);
FailureCategory category_from_string(const std::string& s);
std::optional<FailureCategory> try_category_from_string(const std::string& s);

struct FailurePattern {
  std::string pattern_id;
  FailureCategory category = FailureCategory::ambiguity;
  std::string description;
  std::vector<std::string> prescribed_actions;
  std::vector<std::string> evidence_task_ids;

  friend bool operator==(const FailurePattern&, const FailurePattern&) = default;
};

/// Throws SchemaViolation naming the offending field.
void check_pattern(const FailurePattern& p);

void to_json(nlohmann::json& j, const FailurePattern& p);
void from_json(const nlohmann::json& j, FailurePattern& p);

enum class ViolationRule {
  no_roots,
  bad_id,
  duplicate_id,
  child_extension,
  sequencing_arity,
  sequencing_duplicate,
  guard_token,
  kind_conflict,
  text_format,
  title_format,
};

std::string to_string(ViolationRule r);

struct Violation {
  std::string node_id;
  ViolationRule rule;
  std::string message;

  friend bool operator==(const Violation& a, const Violation& b) {
    return a.node_id == b.node_id && a.rule == b.rule;
  }
};

/// "duplicate_id(1.1): ..." form used by the CLI and error messages.
std::string describe(const Violation& v);

// Text-level helpers. These are the inference rules parse_protocol applies.

bool is_valid_node_id(std::string_view id);
std::optional<std::string> extract_required_token(std::string_view text);
std::vector<std::string> extract_ordered_actions(std::string_view text);
bool has_sequencing_marker(std::string_view text);
NodeKind infer_kind(std::string_view text, bool has_children);

/// Node text whose inferred kind and derived fields are exactly those given.
std::string sequencing_text(std::string_view description, std::span<const std::string> actions);
std::string guard_text(std::string_view description, std::string_view token);
std::string recovery_text(std::string_view description);

// Operations

/// Throws ParseError (with line number) on duplicate ids, orphans, malformed lines, empty input.
DecisionTreeProtocol parse_protocol(std::string_view text);

/// Canonical text. Throws InvalidArgument listing violations when the tree is invalid.
std::string render_protocol(const DecisionTreeProtocol& tree);

/// Empty iff every node invariant holds. Never throws.
std::vector<Violation> validate_protocol(const DecisionTreeProtocol& tree);

/// Deterministic assembly of patterns into a tree. Throws InvalidArgument on empty input.
DecisionTreeProtocol build_decision_tree(std::span<const FailurePattern> patterns);

/// "dtp-" + content hash of the canonical body.
std::string protocol_content_id(const DecisionTreeProtocol& tree);

}  // namespace road
