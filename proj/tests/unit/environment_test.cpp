#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "road/environment.hpp"
#include "road/errors.hpp"
#include "support.hpp"

namespace road {
namespace {

using road::testing::desk_dir;
using road::testing::slurp;

class Desk : public ::testing::Test {
 protected:
  void SetUp() override {
    tasks = load_tasks(desk_dir() / "tasks.json");
    corpus = load_corpus(desk_dir() / "corpus.json");
    db = load_retail_db(desk_dir() / "retail_db.json");
    baseline = PromptArtifact::initial(slurp(desk_dir() / "prompts" / "baseline.txt"));
    optimized = PromptArtifact::initial(slurp(desk_dir() / "prompts" / "optimized.txt"));
  }

  const TaskSpec& task(const std::string& id) const {
    auto it = std::find_if(tasks.begin(), tasks.end(), [&](const TaskSpec& t) { return t.task_id == id; });
    if (it == tasks.end()) throw NotFound(id);
    return *it;
  }

  TaskOutcome run(const PromptArtifact& p, const std::string& id) const {
    auto agent = ScriptedBackend::from_file(desk_dir() / "scripts" / "contestant.json");
    DeskEnvironment env(ToolRegistry::retail(), db, corpus);
    return env.run(p, task(id), *agent);
  }

  std::vector<TaskSpec> tasks;
  Corpus corpus;
  RetailDb db;
  PromptArtifact baseline, optimized;
};

TEST_F(Desk, DatasetShape) {
  const auto n_tool = std::count_if(tasks.begin(), tasks.end(), [](const TaskSpec& t) { return t.kind == TaskKind::tool; });
  EXPECT_EQ(n_tool, 8);
  EXPECT_EQ(tasks.size(), 18u);
  const auto registry = ToolRegistry::retail();
  for (const auto& t : tasks) EXPECT_NO_THROW(check_task(t, registry)) << t.task_id;
}

TEST_F(Desk, PrivateQueryMissesChunkFour) {
  EXPECT_EQ(retrieve("Private", corpus, 5), (std::vector<std::int64_t>{0, 2, 7, 21, 38}));
}

TEST_F(Desk, MergedQueryFindsChunkFourFirst) {
  const auto ids = retrieve("Disability case outpatient cost private hospital", corpus, 5);
  ASSERT_EQ(ids.size(), 5u);
  EXPECT_EQ(ids.front(), 4);
}

TEST_F(Desk, FullDepthIsPermutation) {
  auto ids = retrieve("benefit", corpus, corpus.chunks.size());
  std::vector<std::int64_t> all;
  for (const auto& c : corpus.chunks) all.push_back(c.chunk_id);
  std::sort(ids.begin(), ids.end());
  std::sort(all.begin(), all.end());
  EXPECT_EQ(ids, all);
}

TEST_F(Desk, SequencingTask) {
  const auto before = run(baseline, "rt-05");
  EXPECT_FALSE(before.success);
  EXPECT_NE(before.judge_notes.find("modify_pending_order_address"), std::string::npos) << before.judge_notes;
  const auto after = run(optimized, "rt-05");
  EXPECT_TRUE(after.success) << after.judge_notes;
}

TEST_F(Desk, OkayIsNotConfirmation) {
  const auto before = run(baseline, "rt-06");
  EXPECT_FALSE(before.success);
  EXPECT_NE(before.judge_notes.find("without the user confirming \"YES\""), std::string::npos) << before.judge_notes;
  EXPECT_TRUE(run(optimized, "rt-06").success);
}

TEST_F(Desk, ContextMergeTask) {
  const auto before = run(baseline, "kb-01");
  EXPECT_FALSE(before.success);
  ASSERT_TRUE(before.retrieval_trace);
  ASSERT_EQ(before.retrieval_trace->size(), 1u);
  EXPECT_EQ(before.retrieval_trace->at(0).query_text, "Private");
  EXPECT_EQ(before.retrieval_trace->at(0).returned_chunk_ids, (std::vector<std::int64_t>{0, 2, 7, 21, 38}));
  EXPECT_EQ(before.judge_notes, "expected chunk 4 not returned");

  const auto after = run(optimized, "kb-01");
  EXPECT_TRUE(after.success);
  EXPECT_EQ(after.retrieval_trace->at(0).query_text, "Disability case outpatient cost private hospital");
  EXPECT_EQ(after.judge_notes, "expected chunk 4 found");
}

TEST_F(Desk, OutOfScopeTask) {
  const auto before = run(baseline, "kb-09");
  EXPECT_FALSE(before.success);
  const auto after = run(optimized, "kb-09");
  EXPECT_TRUE(after.success);
  EXPECT_EQ(after.judge_notes, "disclaimed out-of-scope question");
  EXPECT_TRUE(after.retrieval_trace->empty());
}

TEST_F(Desk, EpisodesAreDeterministic) {
  for (const auto& t : tasks) EXPECT_EQ(run(baseline, t.task_id), run(baseline, t.task_id)) << t.task_id;
}

TEST_F(Desk, SilentAgentHitsTurnCap) {
  ContentMatcher any;
  ScriptedBackend agent({{any, "Let me think about that."}});
  EpisodeSettings s;
  s.max_turns = 4;
  const auto o = run_task(baseline, task("rt-01"), agent, ToolRegistry::retail(), db, s);
  EXPECT_FALSE(o.success);
  EXPECT_EQ(o.judge_notes, "turn budget exhausted");
  EXPECT_EQ(o.transcript.size(), 8u);
}

class Failing final : public ChatBackend {
 public:
  ChatResponse complete(const ChatRequest&) override { throw TransportError("connection refused"); }
  std::string describe() const override { return "failing"; }
};

TEST_F(Desk, BackendErrorBecomesFailure) {
  Failing agent;
  const auto o = run_task(baseline, task("rt-01"), agent, ToolRegistry::retail(), db);
  EXPECT_FALSE(o.success);
  EXPECT_EQ(o.judge_notes, "agent backend error: connection refused");
  const auto r = run_retrieval_task(baseline, task("kb-02"), corpus, agent);
  EXPECT_FALSE(r.success);
}

TEST_F(Desk, ScriptErrorPropagates) {
  ScriptedBackend agent({{TurnIndexMatcher{0}, "only one"}});
  EXPECT_THROW(run_task(baseline, task("rt-01"), agent, ToolRegistry::retail(), db), ScriptError);
}

TEST_F(Desk, NoDirective) {
  ContentMatcher any;
  ScriptedBackend agent({{any, "I am not sure."}});
  const auto o = run_retrieval_task(baseline, task("kb-02"), corpus, agent);
  EXPECT_FALSE(o.success);
  EXPECT_EQ(o.judge_notes, "no actionable directive");
  ASSERT_EQ(o.retrieval_trace->size(), 1u);
  EXPECT_FALSE(o.retrieval_trace->at(0).hit());
}

TEST(Retrieve, FullSortOracle) {
  std::mt19937_64 rng(99);
  const std::vector<std::string> words{"alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta", "iota", "kappa"};
  for (int round = 0; round < 40; ++round) {
    Corpus c;
    const auto n = 1 + rng() % 1000;
    std::vector<std::int64_t> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t i = 0; i < n; ++i) {
      std::string text;
      for (int w = 0; w < 6; ++w) text += words[rng() % words.size()] + (w % 2 ? ", " : " ");
      c.chunks.push_back({ids[i] * 3, text});
    }
    std::string query;
    for (int w = 0; w < 1 + static_cast<int>(rng() % 4); ++w) query += words[rng() % words.size()] + "! ";
    const std::size_t k = 1 + rng() % 12;

    // oracle: score every chunk by brute force, sort everything, cut
    const auto q = normalize_tokens(query);
    std::vector<std::pair<std::int64_t, std::int64_t>> scored;  // (-score, id)
    for (const auto& ch : c.chunks) {
      const auto toks = normalize_tokens(ch.text);
      std::int64_t score = 0;
      for (const auto& t : q)
        if (std::find(toks.begin(), toks.end(), t) != toks.end()) ++score;
      scored.push_back({-score, ch.chunk_id});
    }
    std::sort(scored.begin(), scored.end());
    std::vector<std::int64_t> expected;
    for (std::size_t i = 0; i < std::min(k, scored.size()); ++i) expected.push_back(scored[i].second);
    ASSERT_EQ(retrieve(query, c, k), expected) << "round " << round;
  }
}

TEST(Retrieve, Normalization) {
  EXPECT_EQ(normalize_tokens("Private, private HOSPITAL!"), (std::vector<std::string>{"private", "hospital"}));
  EXPECT_TRUE(normalize_tokens(" ?! ").empty());
  Corpus c{{{0, "a"}, {1, "b"}}};
  EXPECT_TRUE(retrieve("...", c, 5).empty());
}

TEST(Corpus, Invariants) {
  EXPECT_THROW(check_corpus(Corpus{{{1, "a"}, {1, "b"}}}), InvalidArgument);
  EXPECT_THROW(check_corpus(Corpus{{{-1, "a"}}}), InvalidArgument);
}

TEST(ToolCalls, Parsing) {
  const auto calls = parse_tool_calls(
      "Sure. [modify_pending_order_items(order_id=#W1, items=\"blue mug|red, large shirt\")] and "
      "[find_user_id_by_email(email=a@b.c)] [end]");
  ASSERT_EQ(calls.size(), 2u);
  EXPECT_EQ(calls[0].name, "modify_pending_order_items");
  EXPECT_EQ(calls[0].args, (ToolArgs{{"order_id", "#W1"}, {"items", "blue mug|red, large shirt"}}));
  EXPECT_EQ(calls[1].args, (ToolArgs{{"email", "a@b.c"}}));
  EXPECT_TRUE(has_end_directive("done [end]"));
  EXPECT_FALSE(has_end_directive("done"));
}

TEST(Directives, Parsing) {
  auto d = parse_directive("Let me look.\nSEARCH: maternity lump sum\n");
  ASSERT_TRUE(d);
  EXPECT_EQ(d->kind, Directive::Kind::search);
  EXPECT_EQ(d->text, "maternity lump sum");
  d = parse_directive("NO_DATA: not in the handbook");
  ASSERT_TRUE(d);
  EXPECT_EQ(d->kind, Directive::Kind::no_data);
  EXPECT_FALSE(parse_directive("I would search for it"));
}

TEST(RetailTools, CancelNeedsAuthOwnershipAndReason) {
  const auto db = load_retail_db(desk_dir() / "retail_db.json");
  const auto reg = ToolRegistry::retail();
  RetailState st{db, std::nullopt};
  const auto& order = db.orders.front();
  const auto* cancel = reg.find("cancel_pending_order");
  ASSERT_NE(cancel, nullptr);
  EXPECT_TRUE(cancel->mutates);
  EXPECT_FALSE(cancel->effect(st, {{"order_id", order.order_id}, {"reason", "no longer needed"}}).ok);

  const auto user = std::find_if(db.users.begin(), db.users.end(), [&](const RetailUser& u) { return u.user_id == order.user_id; });
  ASSERT_NE(user, db.users.end());
  EXPECT_TRUE(reg.find("find_user_id_by_email")->effect(st, {{"email", user->email}}).ok);
  EXPECT_FALSE(cancel->effect(st, {{"order_id", order.order_id}, {"reason", "too expensive"}}).ok);
  EXPECT_FALSE(cancel->effect(st, {{"order_id", order.order_id}}).ok);
}

TEST(RetailTools, AddressAfterItemChangeFails) {
  RetailDb db;
  db.users.push_back({"u1", "Ana", "Reyes", "10001", "ana@example.com"});
  db.orders.push_back({"#W1", "u1", "pending", "1 Main St", {"mug"}});
  const auto reg = ToolRegistry::retail();
  RetailState st{db, std::nullopt};
  ASSERT_TRUE(reg.find("find_user_id_by_name_zip")->effect(st, {{"given_name", "Ana"}, {"last_name", "Reyes"}, {"zip", "10001"}}).ok);
  EXPECT_FALSE(reg.find("find_user_id_by_name_zip")->effect(st, {{"given_name", "Ana"}, {"last_name", ""}, {"zip", "10001"}}).ok);
  ASSERT_TRUE(reg.find("modify_pending_order_items")->effect(st, {{"order_id", "#W1"}, {"items", "cup|plate"}}).ok);
  EXPECT_EQ(st.db.orders[0].items, (std::vector<std::string>{"cup", "plate"}));
  EXPECT_EQ(st.db.orders[0].status, "pending_item_modified");
  EXPECT_FALSE(reg.find("modify_pending_order_address")->effect(st, {{"order_id", "#W1"}, {"address", "2 Elm"}}).ok);
}

TEST(TaskSpec, CheckRejectsBadTasks) {
  const auto reg = ToolRegistry::retail();
  TaskSpec t;
  t.task_id = "x";
  t.user_script = {{"hi", {}}};
  EXPECT_THROW(check_task(t, reg), InvalidArgument);
  t.success.required_calls = {{"no_such_tool", {}}};
  EXPECT_THROW(check_task(t, reg), InvalidArgument);
  t.success.required_calls = {{"cancel_pending_order", {}}};
  t.success.ordering = {{"cancel_pending_order", "teleport"}};
  EXPECT_THROW(check_task(t, reg), InvalidArgument);
  t.success.ordering.clear();
  EXPECT_NO_THROW(check_task(t, reg));
}

TEST(UserTurn, VariantResolution) {
  UserTurn u{"default", {{"Reply YES", "Okay"}}};
  EXPECT_EQ(u.resolve("Please Reply YES to confirm"), "Okay");
  EXPECT_EQ(u.resolve("anything"), "default");
}

}  // namespace
}  // namespace road
