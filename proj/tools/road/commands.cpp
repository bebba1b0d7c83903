#include "commands.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "config.hpp"
#include "road/errors.hpp"
#include "road/hash.hpp"
#include "road/protocol.hpp"
#include "road/run_store.hpp"

namespace road::cli {

namespace fs = std::filesystem;

namespace {

std::atomic<bool> g_interrupt{false};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw NotFound("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw PersistenceError("cannot write " + p.string());
  out << text;
}

std::string rate_or_dash(const std::optional<Rate>& r) { return r ? format_rate(*r) : "-"; }

void print_eval(std::ostream& out, const EvalSummary& s) {
  out << "success_rate    " << format_rate(s.success_rate) << " (" << s.success_rate.numerator() << "/"
      << s.success_rate.denominator() << ")\n";
  out << "search_hit_rate " << rate_or_dash(s.search_hit_rate);
  if (s.search_hit_rate) out << " (" << s.search_hit_rate->numerator() << "/" << s.search_hit_rate->denominator() << ")";
  out << "\n";
}

void print_table(std::ostream& out, const std::vector<IterationRecord>& iters) {
  out << std::left << std::setw(4) << "t" << std::setw(12) << "success_in" << std::setw(11) << "n_failures"
      << std::setw(10) << "accepted" << "patience\n";
  for (const auto& r : iters) {
    out << std::left << std::setw(4) << r.t << std::setw(12) << format_rate(r.eval_in.success_rate) << std::setw(11)
        << r.failures.size() << std::setw(10) << (r.accepted ? "yes" : "no") << r.patience_after << "\n";
  }
}

void print_run(std::ostream& out, const OptimizationRun& run, const fs::path& dir) {
  print_table(out, run.iterations);
  out << "stop_reason: " << to_string(run.stop_reason) << " at t=" << run.stopped_at_t << "\n";
  out << "final success rate: " << format_rate(run.final_eval.success_rate) << " (prompt v"
      << run.final_prompt.version << ")\n";
  if (run.final_eval.search_hit_rate) out << "final search hit rate: " << format_rate(*run.final_eval.search_hit_rate) << "\n";
  out << "run: " << dir.string() << "\n";
}

LoopHooks make_hooks(std::ostream& err) {
  LoopHooks h;
  h.log = [&err](const std::string& line) { err << line << "\n"; };
  h.on_iteration = [](const IterationRecord&) { return !g_interrupt.load(); };
  return h;
}

struct OptimizeArgs {
  std::string config;
  std::string runs_dir;
  std::string run_id;
  std::optional<int> t_max;
  std::optional<int> patience;
  std::optional<std::size_t> parallelism;
  std::optional<std::string> evolve_policy;
  std::optional<std::size_t> max_failures;
  bool dry_run = false;
};

int cmd_optimize(const OptimizeArgs& a, std::ostream& out, std::ostream& err) {
  auto c = load_config(a.config);
  if (!a.runs_dir.empty()) c.runs_dir = a.runs_dir;
  if (a.t_max) c.loop.t_max = *a.t_max;
  if (a.patience) c.loop.patience = *a.patience;
  if (a.parallelism) c.loop.parallelism = *a.parallelism;
  if (a.max_failures) c.loop.max_failures_analyzed = *a.max_failures;
  if (a.evolve_policy) {
    try {
      c.loop.evolve_policy = evolve_policy_from_string(*a.evolve_policy);
    } catch (const InvalidArgument&) {
      throw ConfigError({"--evolve-policy: must be 'append' or 'rewrite'"});
    }
  }
  check_config(c);
  auto w = open_workspace(c);

  const auto snapshot = config_snapshot(c);
  const std::string run_id = a.run_id.empty() ? RunStore::derive_run_id(snapshot, w.initial_prompt.text) : a.run_id;
  RunStore store(c.runs_dir, run_id);

  if (a.dry_run) {
    std::size_t n_tool = 0, n_retrieval = 0;
    for (const auto& t : w.tasks) ++(t.kind == TaskKind::retrieval ? n_retrieval : n_tool);
    out << "config:      " << c.source.string() << "\n";
    out << "tasks:       " << w.tasks.size() << " (" << n_tool << " tool, " << n_retrieval << " retrieval)\n";
    out << "corpus:      " << w.env->corpus().chunks.size() << " chunks\n";
    out << "backends:    contestant=" << c.contestant.type << " analyzer=" << c.analyzer.type
        << " optimizer=" << c.optimizer.type << " coach=" << (c.coach ? c.coach->type : "none") << "\n";
    out << "loop:        t_max=" << c.loop.t_max << " patience=" << c.loop.patience
        << " evolve_policy=" << to_string(c.loop.evolve_policy)
        << " max_failures_analyzed=" << c.loop.max_failures_analyzed << " parallelism=" << c.loop.parallelism << "\n";
    out << "run:         " << store.dir().string() << (store.exists() ? " (exists)" : "") << "\n";
    return k_exit_ok;
  }

  if (store.exists()) {
    err << "run " << run_id << " already exists in " << c.runs_dir.string() << "; continue it with: road resume "
        << run_id << "\n";
    return k_exit_failure;
  }
  store.create(c.loop, snapshot, w.initial_prompt, utc_timestamp());
  err << "run " << run_id << "\n";
  const auto run = run_road(w.initial_prompt, w.tasks, *w.env, w.agents, c.loop, &store, make_hooks(err));
  print_run(out, run, store.dir());
  return k_exit_ok;
}

fs::path runs_dir_for(const std::string& runs_dir, const std::string& config) {
  if (!runs_dir.empty()) return runs_dir;
  if (!config.empty()) return load_config(config).runs_dir;
  return "runs";
}

int cmd_resume(const std::string& run_id, const std::string& runs_dir, const std::string& config, std::ostream& out,
               std::ostream& err) {
  RunStore store(runs_dir_for(runs_dir, config), run_id);
  if (!store.exists()) throw NotFound("run " + run_id + " not found in " + store.dir().parent_path().string());
  auto c = config_from_json(store.read_context(), fs::path("/"));
  c.loop = store.read_loop_config();
  auto w = open_workspace(c);
  RoadSteps steps(w.tasks, *w.env, w.agents, c.loop);
  const auto run = resume_loop(store, steps, c.loop, make_hooks(err));
  print_run(out, run, store.dir());
  return k_exit_ok;
}

int cmd_inspect(const std::string& run_id, const std::string& runs_dir, const std::string& config, std::ostream& out) {
  RunStore store(runs_dir_for(runs_dir, config), run_id);
  if (!store.exists()) throw NotFound("run " + run_id + " not found in " + store.dir().parent_path().string());
  const auto meta = store.read_run_meta();
  const auto loop = store.read_loop_config();
  const auto iters = store.read_iterations();
  out << "run:        " << run_id << "\n";
  out << "created_at: " << meta.value("created_at", std::string("-")) << "\n";
  out << "status:     " << meta.value("status", std::string("-")) << "\n";
  out << "loop:       t_max=" << loop.t_max << " patience=" << loop.patience
      << " evolve_policy=" << to_string(loop.evolve_policy) << "\n";
  print_table(out, iters);
  for (const auto& r : iters) {
    out << "iter " << r.t << ":";
    if (r.eval_candidate) out << " candidate " << format_rate(r.eval_candidate->success_rate);
    if (r.proposal.protocol) out << " protocol " << protocol_content_id(*r.proposal.protocol);
    if (!r.proposal.error.empty()) out << " error: " << r.proposal.error;
    out << "\n";
  }
  if (meta.contains("stop_reason")) {
    out << "stop_reason: " << meta.at("stop_reason").get<std::string>() << " at t=" << meta.value("stopped_at_t", 0)
        << "\n";
    const auto final_eval = meta.at("final_eval").get<EvalSummary>();
    out << "final success rate: " << format_rate(final_eval.success_rate) << "\n";
  }
  return k_exit_ok;
}

int cmd_eval(const std::string& config, const std::string& prompt_path, const std::string& out_path,
             std::ostream& out) {
  auto c = load_config(config);
  if (!fs::exists(prompt_path)) throw ConfigError({"prompt: file not found: " + prompt_path});
  const auto text = read_file(prompt_path);
  if (text.empty()) throw ConfigError({"prompt: file is empty: " + prompt_path});
  auto w = open_workspace(c);
  RoadSteps steps(w.tasks, *w.env, w.agents, c.loop);
  const auto prompt = PromptArtifact::initial(text);
  const auto outcomes = steps.evaluate(prompt);
  const auto summary = summarize(outcomes);
  const fs::path dest =
      out_path.empty() ? c.runs_dir / "evals" / ("eval-" + content_hash(config_snapshot(c).dump() + '\n' + text) + ".json")
                       : fs::path(out_path);
  write_file(dest, eval_file_json(summary, outcomes, false).dump(2) + "\n");
  print_eval(out, summary);
  out << "eval: " << dest.string() << "\n";
  return k_exit_ok;
}

int cmd_protocol_validate(const std::string& file, std::ostream& out) {
  const auto tree = parse_protocol(read_file(file));
  const auto violations = validate_protocol(tree);
  if (violations.empty()) {
    out << "OK\n";
    return k_exit_ok;
  }
  for (const auto& v : violations) out << describe(v) << "\n";
  return k_exit_failure;
}

int cmd_protocol_render(const std::string& file, std::ostream& out) {
  out << render_protocol(parse_protocol(read_file(file)));
  return k_exit_ok;
}

}  // namespace

void request_interrupt() noexcept { g_interrupt.store(true); }

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"road: reflective prompt optimization"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  OptimizeArgs opt;
  auto* optimize = app.add_subcommand("optimize", "Run the optimization loop from a config file");
  optimize->add_option("config", opt.config, "Config file")->required();
  optimize->add_option("--runs-dir", opt.runs_dir, "Override the runs directory");
  optimize->add_option("--run-id", opt.run_id, "Use this run id instead of the derived one");
  optimize->add_option("--t-max", opt.t_max, "Maximum iterations");
  optimize->add_option("--patience", opt.patience, "Consecutive rejections tolerated");
  optimize->add_option("--parallelism", opt.parallelism, "Concurrent episodes and analyzer calls");
  optimize->add_option("--evolve-policy", opt.evolve_policy, "append or rewrite");
  optimize->add_option("--max-failures", opt.max_failures, "Failures analyzed per iteration");
  optimize->add_flag("--dry-run", opt.dry_run, "Validate the config and print the plan");

  std::string eval_config, eval_prompt, eval_out;
  auto* eval = app.add_subcommand("eval", "Evaluate one prompt on the dataset");
  eval->add_option("config", eval_config, "Config file")->required();
  eval->add_option("prompt", eval_prompt, "Prompt file")->required();
  eval->add_option("--out", eval_out, "Where to write the eval JSON");

  std::string protocol_file;
  auto* protocol = app.add_subcommand("protocol", "Decision-tree protocol tools");
  protocol->require_subcommand(1);
  auto* validate = protocol->add_subcommand("validate", "Parse and validate a protocol file");
  validate->add_option("file", protocol_file, "Protocol text file")->required();
  auto* render = protocol->add_subcommand("render", "Print the canonical form of a protocol file");
  render->add_option("file", protocol_file, "Protocol text file")->required();

  std::string run_id, runs_dir, run_config;
  auto* inspect = app.add_subcommand("inspect", "Summarize a stored run");
  auto* resume = app.add_subcommand("resume", "Continue a stored run");
  for (auto* sub : {inspect, resume}) {
    sub->add_option("run_id", run_id, "Run id")->required();
    sub->add_option("--runs-dir", runs_dir, "Runs directory (default: from --config, else ./runs)");
    sub->add_option("--config", run_config, "Config file whose runs_dir to use");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return k_exit_config;
  }

  try {
    if (*optimize) return cmd_optimize(opt, out, err);
    if (*eval) return cmd_eval(eval_config, eval_prompt, eval_out, out);
    if (*validate) return cmd_protocol_validate(protocol_file, out);
    if (*render) return cmd_protocol_render(protocol_file, out);
    if (*inspect) return cmd_inspect(run_id, runs_dir, run_config, out);
    if (*resume) return cmd_resume(run_id, runs_dir, run_config, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return k_exit_config;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return k_exit_failure;
  }
  return k_exit_failure;
}

}  // namespace road::cli
