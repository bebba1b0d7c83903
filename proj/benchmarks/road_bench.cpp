#include <benchmark/benchmark.h>

#include <fstream>
#include <random>
#include <sstream>

#include "road/environment.hpp"
#include "road/protocol.hpp"

namespace {

using namespace road;

const std::filesystem::path k_desk = ROAD_BENCH_DESK_DIR;
const std::filesystem::path k_trees = ROAD_BENCH_TREE_DIR;

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Corpus synthetic_corpus(std::size_t n) {
  const std::vector<std::string> words{"claim", "hospital", "private", "benefit", "outpatient", "leave",
                                       "maternity", "disability", "policy", "cost", "refund", "deadline"};
  std::mt19937_64 rng(1);
  Corpus c;
  for (std::size_t i = 0; i < n; ++i) {
    std::string text;
    for (int w = 0; w < 40; ++w) text += words[rng() % words.size()] + " ";
    c.chunks.push_back({static_cast<std::int64_t>(i), text});
  }
  return c;
}

void BM_Retrieve(benchmark::State& state) {
  const auto corpus = synthetic_corpus(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(retrieve("Disability case outpatient cost private hospital", corpus, 5));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Retrieve)->Arg(50)->Arg(1000)->Arg(10000);

void BM_ParseProtocol(benchmark::State& state) {
  const auto text = render_protocol(parse_protocol(slurp(k_trees / "retail_tree.txt")));
  for (auto _ : state) benchmark::DoNotOptimize(parse_protocol(text));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(text.size()));
}
BENCHMARK(BM_ParseProtocol);

void BM_RenderProtocol(benchmark::State& state) {
  const auto tree = parse_protocol(slurp(k_trees / "retail_tree.txt"));
  for (auto _ : state) benchmark::DoNotOptimize(render_protocol(tree));
}
BENCHMARK(BM_RenderProtocol);

void BM_DeskEval(benchmark::State& state) {
  const auto tasks = load_tasks(k_desk / "tasks.json");
  const DeskEnvironment env(ToolRegistry::retail(), load_retail_db(k_desk / "retail_db.json"),
                            load_corpus(k_desk / "corpus.json"));
  const auto prompt = PromptArtifact::initial(slurp(k_desk / "prompts" / "optimized.txt"));
  auto agent = ScriptedBackend::from_file(k_desk / "scripts" / "contestant.json");
  for (auto _ : state)
    for (const auto& t : tasks) benchmark::DoNotOptimize(env.run(prompt, t, *agent));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(tasks.size()));
}
BENCHMARK(BM_DeskEval);

}  // namespace

BENCHMARK_MAIN();
