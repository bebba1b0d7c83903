#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "road/core.hpp"
#include "road/errors.hpp"
#include "support.hpp"

namespace road {
namespace {

using road::testing::outcomes_with;

TaskOutcome outcome(const std::string& id, bool ok) {
  TaskOutcome o;
  o.task_id = id;
  o.success = ok;
  o.transcript.push_back({Speaker::user, "hello", {}});
  return o;
}

TEST(PromptArtifact, LineageInvariants) {
  EXPECT_NO_THROW(PromptArtifact::initial("be helpful").check());
  EXPECT_THROW(PromptArtifact::initial("").check(), InvalidArgument);
  PromptArtifact child{"x", 1, 0, std::nullopt};
  EXPECT_NO_THROW(child.check());
  child.parent_version.reset();
  EXPECT_THROW(child.check(), InvalidArgument);
  child.parent_version = 1;
  EXPECT_THROW(child.check(), InvalidArgument);
  PromptArtifact seed{"x", 0, 0, std::nullopt};
  EXPECT_THROW(seed.check(), InvalidArgument);
}

TEST(FilterFailures, KeepsFailuresInOrder) {
  const std::vector<TaskOutcome> in{outcome("1", true), outcome("2", false), outcome("3", true), outcome("4", false)};
  const auto f = filter_failures(in);
  ASSERT_EQ(f.size(), 2u);
  EXPECT_EQ(f[0].task_id, "2");
  EXPECT_EQ(f[1].task_id, "4");
  EXPECT_FALSE(f[0].raw_log.empty());
}

TEST(FilterFailures, AllSuccessGivesNothing) {
  EXPECT_TRUE(filter_failures(outcomes_with(5, 5)).empty());
  EXPECT_TRUE(filter_failures(std::vector<TaskOutcome>{}).empty());
}

TEST(FilterFailures, MatchesLinearScanOnRandomBatches) {
  std::mt19937_64 rng(11);
  for (int round = 0; round < 20; ++round) {
    std::vector<TaskOutcome> in;
    for (int i = 0; i < 1000; ++i) in.push_back(outcome("t" + std::to_string(i), rng() % 3 == 0));
    std::vector<std::string> oracle;
    for (std::size_t i = 0; i < in.size(); ++i)
      if (!in[i].success) oracle.push_back(in[i].task_id);
    std::vector<std::string> got;
    for (const auto& f : filter_failures(in)) got.push_back(f.task_id);
    EXPECT_EQ(got, oracle);
    // successes plus failures partition the batch
    const auto succ = std::count_if(in.begin(), in.end(), [](const TaskOutcome& o) { return o.success; });
    EXPECT_EQ(static_cast<std::size_t>(succ) + got.size(), in.size());
  }
}

TEST(MakeFailureCase, RejectsSuccess) { EXPECT_THROW(make_failure_case(outcome("a", true)), InvalidArgument); }

TEST(SuccessRate, Basic) {
  const std::vector<TaskOutcome> in{outcome("1", true), outcome("2", false), outcome("3", true), outcome("4", true)};
  EXPECT_EQ(compute_success_rate(in), Rate(3, 4));
  EXPECT_DOUBLE_EQ(compute_success_rate(in).value(), 0.75);
}

TEST(SuccessRate, PrintsThreeDecimals) {
  const auto r = compute_success_rate(outcomes_with(1000, 736));
  EXPECT_EQ(format_rate(r), "0.736");
}

TEST(SuccessRate, EmptyIsAnError) {
  try {
    compute_success_rate(std::vector<TaskOutcome>{});
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_STREQ(e.what(), "no tasks evaluated");
  }
}

TEST(SuccessRate, EqualsOneMinusFailureShare) {
  std::mt19937_64 rng(5);
  for (int round = 0; round < 200; ++round) {
    const auto n = 1 + rng() % 200;
    std::vector<TaskOutcome> in;
    for (std::size_t i = 0; i < n; ++i) in.push_back(outcome(std::to_string(i), rng() & 1));
    const auto fails = static_cast<std::int64_t>(filter_failures(in).size());
    EXPECT_EQ(compute_success_rate(in), Rate(static_cast<std::int64_t>(n) - fails, static_cast<std::int64_t>(n)));
    std::shuffle(in.begin(), in.end(), rng);
    EXPECT_EQ(compute_success_rate(in), Rate(static_cast<std::int64_t>(n) - fails, static_cast<std::int64_t>(n)));
  }
}

TEST(SearchHitRate, ChunkAlignment) {
  const RetrievalEvent miss{"Private", {0, 2, 7, 21, 38}, 4};
  const RetrievalEvent hit{"Disability case outpatient cost private hospital", {4, 2, 14, 30, 38}, 4};
  EXPECT_FALSE(miss.hit());
  EXPECT_TRUE(hit.hit());
  EXPECT_EQ(compute_search_hit_rate(std::vector<RetrievalEvent>{miss}), Rate(0, 1));
  EXPECT_EQ(compute_search_hit_rate(std::vector<RetrievalEvent>{miss, hit}), Rate(1, 2));
}

TEST(SearchHitRate, AllHits) {
  std::vector<RetrievalEvent> events;
  for (int i = 0; i < 50; ++i) events.push_back({"q", {i, i + 1}, i + 1});
  EXPECT_EQ(compute_search_hit_rate(events), Rate(1, 1));
}

TEST(SearchHitRate, Errors) {
  EXPECT_THROW(compute_search_hit_rate(std::vector<RetrievalEvent>{}), InvalidArgument);
  try {
    compute_search_hit_rate(std::vector<RetrievalEvent>{{"q", {1}, std::nullopt}});
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_STREQ(e.what(), "unlabeled retrieval event");
  }
}

TEST(Rate, CrossMultipliedOrdering) {
  EXPECT_GT(Rate(792, 1000), Rate(736, 1000));
  EXPECT_EQ(Rate(1, 3), Rate(2, 6));
  EXPECT_LT(Rate(1, 3), Rate(334, 1000));
  EXPECT_THROW(Rate(1, 0), InvalidArgument);
  EXPECT_THROW(Rate(3, 2), InvalidArgument);
}

TEST(Summarize, CountsHitsOverLabeledEventsOnly) {
  auto a = outcome("kb", true);
  a.retrieval_trace = std::vector<RetrievalEvent>{{"x", {1, 2}, 2}, {"y", {3}, std::nullopt}};
  auto b = outcome("kb2", false);
  b.retrieval_trace = std::vector<RetrievalEvent>{{"z", {5}, 6}};
  const auto s = summarize(std::vector<TaskOutcome>{a, b, outcome("rt", true)});
  EXPECT_EQ(s.n_tasks, 3);
  EXPECT_EQ(s.success_rate, Rate(2, 3));
  ASSERT_TRUE(s.search_hit_rate);
  EXPECT_EQ(*s.search_hit_rate, Rate(1, 2));
  EXPECT_FALSE(summarize(std::vector<TaskOutcome>{outcome("rt", true)}).search_hit_rate);
}

TEST(Summarize, JsonRoundTrip) {
  auto a = outcome("kb", true);
  a.retrieval_trace = std::vector<RetrievalEvent>{{"x", {1, 2}, 2}};
  const auto s = summarize(std::vector<TaskOutcome>{a, outcome("rt", false)});
  const nlohmann::json j = s;
  EXPECT_DOUBLE_EQ(j.at("success_rate").get<double>(), 0.5);
  EXPECT_TRUE(j.contains("per_task"));
  EXPECT_EQ(j.get<EvalSummary>(), s);
}

TEST(TaskOutcome, JsonRoundTrip) {
  TaskOutcome o = outcome("t", false);
  o.transcript.push_back({Speaker::assistant, "[tool(a=1)]", {{"tool", {{"a", "1"}}, false, "unknown tool"}}});
  o.judge_notes = "missing call";
  o.retrieval_trace = std::vector<RetrievalEvent>{{"q", {3, 1}, std::nullopt}};
  const nlohmann::json j = o;
  EXPECT_EQ(j.get<TaskOutcome>(), o);
}

TEST(RawLog, Deterministic) {
  TaskOutcome o = outcome("t-9", false);
  o.transcript.push_back({Speaker::assistant, "line one\nline two", {{"lookup", {{"k", "v"}}, true, "found"}}});
  o.judge_notes = "wrong order";
  const auto log = render_raw_log(o);
  EXPECT_EQ(log, render_raw_log(o));
  EXPECT_NE(log.find("task: t-9\n"), std::string::npos);
  EXPECT_NE(log.find("turn 1 [user]: hello\n"), std::string::npos);
  EXPECT_NE(log.find("turn 2 [assistant]: line one\n    line two\n"), std::string::npos);
  EXPECT_NE(log.find("  tool: lookup(k=v) -> ok: found\n"), std::string::npos);
  EXPECT_NE(log.find("wrong order"), std::string::npos);
}

}  // namespace
}  // namespace road
