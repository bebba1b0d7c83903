#include "road/protocol.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <set>
#include <sstream>
#include <unordered_map>

#include "road/errors.hpp"
#include "road/hash.hpp"

namespace road {

std::string to_string(NodeKind k) {
  switch (k) {
    case NodeKind::step: return "step";
    case NodeKind::branch: return "branch";
    case NodeKind::sequencing_rule: return "sequencing_rule";
    case NodeKind::guard: return "guard";
    case NodeKind::recovery: return "recovery";
  }
  return "step";
}

std::string to_string(FailureCategory c) {
  switch (c) {
    case FailureCategory::ambiguity: return "ambiguity";
    case FailureCategory::sequencing: return "sequencing";
    case FailureCategory::guardrail: return "guardrail";
    case FailureCategory::recovery: return "recovery";
    case FailureCategory::scope: return "scope";
  }
  return "ambiguity";
}

std::optional<FailureCategory> try_category_from_string(const std::string& s) {
  for (auto c : {FailureCategory::ambiguity, FailureCategory::sequencing, FailureCategory::guardrail,
                 FailureCategory::recovery, FailureCategory::scope})
    if (to_string(c) == s) return c;
  return std::nullopt;
}

FailureCategory category_from_string(const std::string& s) {
  if (auto c = try_category_from_string(s)) return *c;
  throw InvalidArgument("unknown failure category '" + s + "'");
}

std::string to_string(ViolationRule r) {
  switch (r) {
    case ViolationRule::no_roots: return "no_roots";
    case ViolationRule::bad_id: return "bad_id";
    case ViolationRule::duplicate_id: return "duplicate_id";
    case ViolationRule::child_extension: return "child_extension";
    case ViolationRule::sequencing_arity: return "sequencing_arity";
    case ViolationRule::sequencing_duplicate: return "sequencing_duplicate";
    case ViolationRule::guard_token: return "guard_token";
    case ViolationRule::kind_conflict: return "kind_conflict";
    case ViolationRule::text_format: return "text_format";
    case ViolationRule::title_format: return "title_format";
  }
  return "text_format";
}

std::string describe(const Violation& v) {
  return to_string(v.rule) + "(" + v.node_id + "): " + v.message;
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_word(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      if (start < text.size()) lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

// Length of a dotted id at the start of s, or 0.
std::size_t scan_id(std::string_view s) {
  std::size_t i = 0;
  while (true) {
    const std::size_t seg = i;
    while (i < s.size() && is_digit(s[i])) ++i;
    if (i == seg) return 0;
    while (i < s.size() && is_upper(s[i])) ++i;
    if (i + 1 < s.size() && s[i] == '.' && is_digit(s[i + 1])) {
      ++i;
      continue;
    }
    return i;
  }
}

std::size_t segment_count(std::string_view id) { return static_cast<std::size_t>(std::count(id.begin(), id.end(), '.')) + 1; }

std::string parent_id(std::string_view id) {
  auto dot = id.rfind('.');
  return dot == std::string_view::npos ? std::string() : std::string(id.substr(0, dot));
}

struct NodeLine {
  std::size_t indent = 0;
  std::string id;
  NodeStyle style = NodeStyle::outline;
  std::string body;
};

std::optional<NodeLine> match_node_line(std::string_view line) {
  NodeLine out;
  std::size_t i = 0;
  while (i < line.size() && line[i] == ' ') ++i;
  out.indent = i;
  std::string_view rest = line.substr(i);

  if (rest.starts_with("-")) {
    std::size_t j = 1;
    while (j < rest.size() && rest[j] == ' ') ++j;
    if (j == 1 || !rest.substr(j).starts_with("Step")) return std::nullopt;
    j += 4;
    const std::size_t gap = j;
    while (j < rest.size() && rest[j] == ' ') ++j;
    if (j == gap) return std::nullopt;
    const std::size_t n = scan_id(rest.substr(j));
    if (n == 0) return std::nullopt;
    out.id = std::string(rest.substr(j, n));
    j += n;
    if (j < rest.size() && rest[j] == '.') ++j;
    while (j < rest.size() && rest[j] == ' ') ++j;
    if (j >= rest.size() || rest[j] != ':') return std::nullopt;
    out.body = std::string(trim(rest.substr(j + 1)));
    if (out.body.empty()) return std::nullopt;
    out.style = NodeStyle::step_bullet;
    return out;
  }

  const std::size_t n = scan_id(rest);
  if (n == 0) return std::nullopt;
  out.id = std::string(rest.substr(0, n));
  std::size_t j = n;
  bool dot = false;
  if (j < rest.size() && rest[j] == '.') {
    dot = true;
    ++j;
  }
  if (segment_count(out.id) == 1 && !dot) return std::nullopt;
  if (j >= rest.size() || rest[j] != ' ') return std::nullopt;
  out.body = std::string(trim(rest.substr(j)));
  if (out.body.empty()) return std::nullopt;
  return out;
}

struct WordToken {
  std::string text;
  std::string lowered;
};

std::vector<WordToken> words(std::string_view text) {
  std::vector<WordToken> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_word(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && is_word(text[j])) ++j;
    std::string w(text.substr(i, j - i));
    out.push_back({w, lower(w)});
    i = j;
  }
  return out;
}

constexpr std::array<std::string_view, 10> k_ordinals{"first", "second",  "third",  "fourth", "fifth",
                                                      "sixth", "seventh", "eighth", "ninth",  "tenth"};

int ordinal_rank(std::string_view lowered) {
  for (std::size_t i = 0; i < k_ordinals.size(); ++i)
    if (k_ordinals[i] == lowered) return static_cast<int>(i) + 1;
  return 0;
}

bool is_filler(const WordToken& w) {
  static const std::set<std::string, std::less<>> filler{
      "update", "updates", "change", "changes", "call", "calls", "execute", "do",  "then",
      "step",   "and",     "the",    "a",       "an",    "run",   "perform", "apply"};
  if (filler.contains(w.lowered)) return true;
  return std::all_of(w.text.begin(), w.text.end(), [](char c) { return is_digit(c); });
}

bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  return lower(s.substr(0, prefix.size())) == lower(prefix);
}

std::string_view first_line(std::string_view text) {
  auto nl = text.find('\n');
  return nl == std::string_view::npos ? text : text.substr(0, nl);
}

std::string one_line(std::string_view s) {
  std::string out;
  for (char c : trim(s)) out.push_back(c == '\n' || c == '\r' || c == '\t' ? ' ' : c);
  return out;
}

std::string identifier(std::string_view s) {
  std::string out;
  for (char c : trim(s)) {
    if (is_word(c))
      out.push_back(c);
    else if (!out.empty() && out.back() != '_')
      out.push_back('_');
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

void render_nodes(std::ostringstream& os, const std::vector<ProtocolNode>& nodes) {
  for (const auto& n : nodes) {
    const std::size_t depth = segment_count(n.node_id);
    const std::string indent(2 * (depth - 1), ' ');
    auto lines = split_lines(n.text);
    const std::string_view label = lines.empty() ? std::string_view() : lines.front();
    os << indent;
    if (n.style == NodeStyle::step_bullet)
      os << "- Step " << n.node_id << ": " << label;
    else
      os << n.node_id << (depth == 1 ? ". " : " ") << label;
    os << '\n';
    for (std::size_t i = 1; i < lines.size(); ++i) os << indent << "  " << lines[i] << '\n';
    render_nodes(os, n.children);
  }
}

std::string render_unchecked(const DecisionTreeProtocol& tree) {
  std::ostringstream os;
  if (!tree.title.empty()) os << tree.title << '\n';
  render_nodes(os, tree.roots);
  return os.str();
}

void text_violations(const ProtocolNode& n, std::vector<Violation>& out) {
  auto bad = [&](const std::string& msg) { out.push_back({n.node_id, ViolationRule::text_format, msg}); };
  if (n.text.empty()) return bad("node text is empty");
  if (n.text.find('\t') != std::string::npos || n.text.find('\r') != std::string::npos)
    return bad("node text contains tab or carriage return");
  auto lines = split_lines(n.text);
  if (n.text.back() == '\n') return bad("node text ends with a newline");
  const auto label = lines.front();
  if (label.empty() || trim(label) != label) return bad("label is empty or padded with whitespace");
  std::size_t min_indent = std::string::npos;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto l = lines[i];
    if (trim(l).empty()) return bad("blank continuation line");
    if (l.back() == ' ') return bad("trailing whitespace in continuation line");
    if (match_node_line(l)) return bad("continuation line would parse as a node: '" + std::string(trim(l)) + "'");
    min_indent = std::min(min_indent, l.find_first_not_of(' '));
  }
  if (lines.size() > 1 && min_indent != 0) bad("continuation lines must have zero base indentation");
}

void validate_nodes(const std::vector<ProtocolNode>& nodes, const std::string& parent, std::set<std::string>& seen,
                    std::vector<Violation>& out) {
  for (const auto& n : nodes) {
    const std::size_t before = out.size();
    const bool id_ok = is_valid_node_id(n.node_id);
    if (!id_ok) {
      out.push_back({n.node_id, ViolationRule::bad_id, "node id is not a dotted alphanumeric path"});
    } else {
      if (!seen.insert(n.node_id).second)
        out.push_back({n.node_id, ViolationRule::duplicate_id, "node id appears more than once"});
      if (parent.empty() && segment_count(n.node_id) != 1)
        out.push_back({n.node_id, ViolationRule::child_extension, "root node id must have one segment"});
      if (!parent.empty() && parent_id(n.node_id) != parent)
        out.push_back({n.node_id, ViolationRule::child_extension,
                       "child id must extend parent '" + parent + "' by one segment"});
    }
    text_violations(n, out);
    const bool text_ok = std::none_of(out.begin() + static_cast<std::ptrdiff_t>(before), out.end(),
                                      [](const Violation& v) { return v.rule == ViolationRule::text_format; });

    if (n.kind == NodeKind::sequencing_rule) {
      if (n.ordered_actions.size() < 2)
        out.push_back({n.node_id, ViolationRule::sequencing_arity, "sequencing rule needs at least two actions"});
      std::set<std::string> uniq(n.ordered_actions.begin(), n.ordered_actions.end());
      if (uniq.size() != n.ordered_actions.size())
        out.push_back({n.node_id, ViolationRule::sequencing_duplicate, "sequencing rule repeats an action"});
    }
    if (n.kind == NodeKind::guard) {
      const auto& t = n.required_token;
      const bool bad_token = t.empty() || std::any_of(t.begin(), t.end(), [](char c) {
                               return c == '"' || c == '\'' || c == '\n' || c == '\r';
                             });
      if (bad_token) out.push_back({n.node_id, ViolationRule::guard_token, "guard needs a non-empty literal token"});
    }
    if (text_ok) {
      const NodeKind inferred = infer_kind(n.text, !n.children.empty());
      if (inferred != n.kind) {
        out.push_back({n.node_id, ViolationRule::kind_conflict,
                       "declared " + to_string(n.kind) + " but text reads as " + to_string(inferred)});
      } else if (n.kind == NodeKind::sequencing_rule && extract_ordered_actions(n.text) != n.ordered_actions) {
        out.push_back({n.node_id, ViolationRule::kind_conflict, "ordered_actions disagree with the node text"});
      } else if (n.kind == NodeKind::guard && extract_required_token(n.text).value_or("") != n.required_token) {
        out.push_back({n.node_id, ViolationRule::kind_conflict, "required_token disagrees with the node text"});
      }
      if (n.kind != NodeKind::sequencing_rule && !n.ordered_actions.empty())
        out.push_back({n.node_id, ViolationRule::kind_conflict, "ordered_actions set on a non-sequencing node"});
      if (n.kind != NodeKind::guard && !n.required_token.empty())
        out.push_back({n.node_id, ViolationRule::kind_conflict, "required_token set on a non-guard node"});
    }
    validate_nodes(n.children, id_ok ? n.node_id : std::string("?"), seen, out);
  }
}

}  // namespace

bool is_valid_node_id(std::string_view id) { return !id.empty() && scan_id(id) == id.size(); }

std::optional<std::string> extract_required_token(std::string_view text) {
  const std::string lowered = lower(text);
  std::size_t pos = 0;
  while ((pos = lowered.find("literal", pos)) != std::string::npos) {
    const bool left_ok = pos == 0 || !is_word(text[pos - 1]);
    std::size_t i = pos + 7;
    pos = i;
    if (!left_ok || (i < text.size() && is_word(text[i]))) continue;
    while (i < text.size() && text[i] == ' ') ++i;
    if (i >= text.size()) break;
    const char q = text[i];
    if (q == '"' || q == '\'') {
      const auto close = text.find(q, i + 1);
      if (close == std::string_view::npos) continue;
      std::string token(trim(text.substr(i + 1, close - i - 1)));
      while (!token.empty() && std::string_view(".,;:!?").find(token.back()) != std::string_view::npos)
        token.pop_back();
      if (!token.empty() && token.find('\n') == std::string::npos) return token;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && (is_upper(text[j]) || is_digit(text[j]) || text[j] == '_')) ++j;
    if (j - i >= 2 && is_upper(text[i]) && (j == text.size() || !is_word(text[j])))
      return std::string(text.substr(i, j - i));
  }
  return std::nullopt;
}

bool has_sequencing_marker(std::string_view text) {
  if (lower(text).find("sequencing rule") != std::string::npos) return true;
  for (const auto& w : words(text))
    if (ordinal_rank(w.lowered) > 0) return true;
  return false;
}

std::vector<std::string> extract_ordered_actions(std::string_view text) {
  const auto toks = words(text);
  std::vector<std::pair<int, std::string>> ranked;
  int ordinal_count = 0;
  int single_rank = 0;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    const int r = ordinal_rank(toks[i].lowered);
    if (r == 0) continue;
    ++ordinal_count;
    single_rank = r;
    for (std::size_t back = 1; back <= 3 && back <= i; ++back) {
      const auto& cand = toks[i - back];
      if (ordinal_rank(cand.lowered) > 0) break;
      if (is_filler(cand)) continue;
      ranked.emplace_back(r, cand.text);
      break;
    }
  }
  // "X first, then Y": with a single ordinal marker, each "then" names the next action.
  if (ordinal_count == 1) {
    bool after_marker = false;
    int next_rank = single_rank;
    for (std::size_t i = 0; i < toks.size(); ++i) {
      if (ordinal_rank(toks[i].lowered) > 0) {
        after_marker = true;
        continue;
      }
      if (!after_marker || toks[i].lowered != "then") continue;
      for (std::size_t fwd = 1; fwd <= 3 && i + fwd < toks.size(); ++fwd) {
        const auto& cand = toks[i + fwd];
        if (is_filler(cand)) continue;
        ranked.emplace_back(++next_rank, cand.text);
        break;
      }
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::string> out;
  for (auto& [rank, name] : ranked) out.push_back(std::move(name));
  return out;
}

NodeKind infer_kind(std::string_view text, bool has_children) {
  if (starts_with_ci(trim(first_line(text)), "recovery")) return NodeKind::recovery;
  if (extract_required_token(text)) return NodeKind::guard;
  if (has_sequencing_marker(text)) return NodeKind::sequencing_rule;
  return has_children ? NodeKind::branch : NodeKind::step;
}

std::string sequencing_text(std::string_view description, std::span<const std::string> actions) {
  std::string out = one_line(description);
  if (!starts_with_ci(out, "sequencing rule")) out = "Sequencing Rule: " + out;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    std::string ord = i < k_ordinals.size() ? std::string(k_ordinals[i]) : std::to_string(i + 1);
    for (auto& c : ord) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    out += "\nStep " + std::to_string(i + 1) + ": Execute " + actions[i] + " " + ord + ".";
  }
  return out;
}

std::string guard_text(std::string_view description, std::string_view token) {
  std::string out = one_line(description);
  if (extract_required_token(out) == std::string(token)) return out;
  if (!out.empty() && std::string_view(".!?").find(out.back()) == std::string_view::npos) out += '.';
  if (!out.empty()) out += ' ';
  out += "Require a literal \"" + std::string(token) + "\" before executing; on any other reply, do not execute.";
  return out;
}

std::string recovery_text(std::string_view description) {
  std::string out = one_line(description);
  if (starts_with_ci(out, "recovery")) return out;
  return "Recovery: " + out;
}

bool structurally_equal(const DecisionTreeProtocol& a, const DecisionTreeProtocol& b) {
  return a.title == b.title && a.roots == b.roots;
}

DecisionTreeProtocol parse_protocol(std::string_view text) {
  struct Pending {
    NodeLine line;
    std::size_t line_no = 0;
    std::vector<std::pair<std::size_t, std::string>> continuation;  // indent, trimmed content
    std::vector<std::size_t> children;
  };
  std::vector<Pending> nodes;
  std::vector<std::size_t> roots;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::string> title;

  const auto lines = split_lines(text);
  for (std::size_t k = 0; k < lines.size(); ++k) {
    const std::size_t line_no = k + 1;
    std::string_view raw = lines[k];
    if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
    if (raw.find('\t') != std::string_view::npos) throw ParseError(line_no, "tab characters are not supported");
    if (trim(raw).empty()) continue;

    if (auto nl = match_node_line(raw)) {
      if (auto it = index.find(nl->id); it != index.end())
        throw ParseError(line_no, "duplicate node id '" + nl->id + "' (first defined on line " +
                                      std::to_string(nodes[it->second].line_no) + ")");
      const std::string parent = parent_id(nl->id);
      const std::size_t me = nodes.size();
      if (parent.empty()) {
        roots.push_back(me);
      } else {
        auto p = index.find(parent);
        if (p == index.end())
          throw ParseError(line_no, "orphan node '" + nl->id + "': parent '" + parent + "' is not defined above it");
        nodes[p->second].children.push_back(me);
      }
      index.emplace(nl->id, me);
      nodes.push_back({std::move(*nl), line_no, {}, {}});
      continue;
    }
    const std::size_t indent = raw.find_first_not_of(' ');
    const std::string content(trim(raw));
    if (nodes.empty())
      title.push_back(content);
    else
      nodes.back().continuation.emplace_back(indent, content);
  }
  if (nodes.empty()) throw ParseError(0, "empty document: no protocol nodes");

  auto build = [&](auto&& self, std::size_t i) -> ProtocolNode {
    const Pending& p = nodes[i];
    ProtocolNode n;
    n.node_id = p.line.id;
    n.style = p.line.style;
    n.text = p.line.body;
    std::size_t base = std::string::npos;
    for (const auto& [ind, _] : p.continuation) base = std::min(base, ind);
    for (const auto& [ind, content] : p.continuation) n.text += "\n" + std::string(ind - base, ' ') + content;
    for (std::size_t c : p.children) n.children.push_back(self(self, c));
    n.kind = infer_kind(n.text, !n.children.empty());
    if (n.kind == NodeKind::sequencing_rule) n.ordered_actions = extract_ordered_actions(n.text);
    if (n.kind == NodeKind::guard) n.required_token = *extract_required_token(n.text);
    return n;
  };

  DecisionTreeProtocol tree;
  for (std::size_t i = 0; i < title.size(); ++i) tree.title += (i ? "\n" : "") + title[i];
  for (std::size_t r : roots) tree.roots.push_back(build(build, r));
  tree.protocol_id = protocol_content_id(tree);
  return tree;
}

std::vector<Violation> validate_protocol(const DecisionTreeProtocol& tree) {
  std::vector<Violation> out;
  if (tree.roots.empty()) out.push_back({"", ViolationRule::no_roots, "protocol has no nodes"});
  if (!tree.title.empty()) {
    for (auto line : split_lines(tree.title)) {
      if (line.empty() || trim(line) != line || match_node_line(line)) {
        out.push_back({"", ViolationRule::title_format, "title line is blank, padded, or reads as a node"});
        break;
      }
    }
    if (tree.title.back() == '\n') out.push_back({"", ViolationRule::title_format, "title ends with a newline"});
  }
  std::set<std::string> seen;
  validate_nodes(tree.roots, "", seen, out);
  return out;
}

std::string render_protocol(const DecisionTreeProtocol& tree) {
  const auto violations = validate_protocol(tree);
  if (!violations.empty()) {
    std::string msg = "invalid protocol:";
    for (const auto& v : violations) msg += "\n  " + describe(v);
    throw InvalidArgument(msg);
  }
  return render_unchecked(tree);
}

std::string protocol_content_id(const DecisionTreeProtocol& tree) {
  return "dtp-" + content_hash(render_unchecked(tree));
}

void check_pattern(const FailurePattern& p) {
  if (p.pattern_id.empty()) throw SchemaViolation("pattern_id", "must be non-empty");
  if (trim(p.description).empty()) throw SchemaViolation("description", "must be non-empty");
  if (p.evidence_task_ids.empty()) throw SchemaViolation("evidence_task_ids", "must cite at least one failure");
  if (p.category == FailureCategory::sequencing && p.prescribed_actions.size() < 2)
    throw SchemaViolation("prescribed_actions", "a sequencing pattern needs at least two ordered actions");
}

void to_json(nlohmann::json& j, const FailurePattern& p) {
  j = {{"pattern_id", p.pattern_id},
       {"category", to_string(p.category)},
       {"description", p.description},
       {"prescribed_actions", p.prescribed_actions},
       {"evidence_task_ids", p.evidence_task_ids}};
}

void from_json(const nlohmann::json& j, FailurePattern& p) {
  p.pattern_id = j.at("pattern_id").get<std::string>();
  p.category = category_from_string(j.at("category").get<std::string>());
  p.description = j.at("description").get<std::string>();
  p.prescribed_actions = j.at("prescribed_actions").get<std::vector<std::string>>();
  p.evidence_task_ids = j.at("evidence_task_ids").get<std::vector<std::string>>();
}

DecisionTreeProtocol build_decision_tree(std::span<const FailurePattern> patterns) {
  if (patterns.empty()) throw InvalidArgument("nothing to synthesize");
  for (const auto& p : patterns) check_pattern(p);

  struct Group {
    FailureCategory category;
    const char* heading;
  };
  static constexpr std::array<Group, 5> groups{{
      {FailureCategory::ambiguity, "Resolve ambiguous requests"},
      {FailureCategory::sequencing, "Order of operations"},
      {FailureCategory::guardrail, "Safety checks before state changes"},
      {FailureCategory::recovery, "Error handling and fallback paths"},
      {FailureCategory::scope, "Scope management"},
  }};

  DecisionTreeProtocol tree;
  tree.title = "## DECISION TREE (operational framework)";
  int root_no = 0;
  for (const auto& g : groups) {
    std::vector<const FailurePattern*> members;
    for (const auto& p : patterns)
      if (p.category == g.category) members.push_back(&p);
    if (members.empty()) continue;

    ProtocolNode root;
    root.node_id = std::to_string(++root_no);
    root.text = g.heading;
    root.kind = NodeKind::branch;
    std::vector<std::string> root_evidence;

    int child_no = 0;
    for (const FailurePattern* p : members) {
      ProtocolNode child;
      child.node_id = root.node_id + "." + std::to_string(++child_no);
      std::string bullets;
      for (const auto& a : p->prescribed_actions) bullets += "\n- " + one_line(a);

      switch (g.category) {
        case FailureCategory::ambiguity: {
          child.text = one_line(p->description);
          int step_no = 0;
          for (const auto& a : p->prescribed_actions) {
            ProtocolNode s;
            s.node_id = child.node_id + "." + std::to_string(++step_no);
            s.text = one_line(a);
            s.kind = NodeKind::step;
            tree.evidence[s.node_id] = p->evidence_task_ids;
            child.children.push_back(std::move(s));
          }
          child.kind = child.children.empty() ? NodeKind::step : NodeKind::branch;
          break;
        }
        case FailureCategory::sequencing: {
          for (const auto& a : p->prescribed_actions) child.ordered_actions.push_back(identifier(a));
          child.text = sequencing_text(p->description, child.ordered_actions);
          child.kind = NodeKind::sequencing_rule;
          break;
        }
        case FailureCategory::guardrail: {
          std::optional<std::string> token = extract_required_token(p->description);
          for (const auto& a : p->prescribed_actions)
            if (!token) token = extract_required_token(a);
          child.required_token = token.value_or("YES");
          child.text = guard_text(p->description, child.required_token) + bullets;
          child.kind = NodeKind::guard;
          break;
        }
        case FailureCategory::recovery:
          child.text = recovery_text(p->description) + bullets;
          child.kind = NodeKind::recovery;
          break;
        case FailureCategory::scope:
          child.text = one_line(p->description) + bullets;
          child.kind = NodeKind::step;
          break;
      }
      tree.evidence[child.node_id] = p->evidence_task_ids;
      for (const auto& id : p->evidence_task_ids)
        if (std::find(root_evidence.begin(), root_evidence.end(), id) == root_evidence.end())
          root_evidence.push_back(id);
      root.children.push_back(std::move(child));
    }
    tree.evidence[root.node_id] = std::move(root_evidence);
    tree.roots.push_back(std::move(root));
  }

  const auto violations = validate_protocol(tree);
  if (!violations.empty()) {
    std::string msg = "synthesized protocol is invalid:";
    for (const auto& v : violations) msg += "\n  " + describe(v);
    throw InvalidArgument(msg);
  }
  tree.protocol_id = protocol_content_id(tree);
  return tree;
}

}  // namespace road
