// Command-line front end: run, compare and replay decoding experiments.
//
// Exit codes: 0 success, 1 validation error, 2 I/O error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "slowfast/slowfast.hpp"

namespace sf = slowfast;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(s)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw sf::ValidationError("bad seed '" + item + "'");
    }
  }
  if (out.empty()) throw sf::ValidationError("--seeds is empty");
  return out;
}

struct RunArgs {
  std::string config;
  std::string strategy;
  std::string seeds;
  std::string out;
  std::string trace_dir;
  std::string confmap_dir;
};

struct CompareArgs {
  std::string config;
  std::string strategies;
  std::string out;
  std::string metrics;
  std::string seeds;
};

struct ReplayArgs {
  std::string trace;
  std::string strategy;
  std::string config;
  std::string out;
};

int do_run(const RunArgs& a) {
  auto cfg = sf::load_experiment_config(a.config);
  if (!a.strategy.empty()) cfg.strategy = a.strategy;
  if (!a.seeds.empty()) cfg.seeds = parse_seeds(a.seeds);
  if (!a.out.empty()) cfg.metrics_csv = a.out;
  if (!a.trace_dir.empty()) {
    cfg.trace_dir = a.trace_dir;
    cfg.emit_trace = true;
  }
  if (!a.confmap_dir.empty()) {
    cfg.confmap_dir = a.confmap_dir;
    cfg.emit_confmap = true;
  }
  const auto metrics = sf::run_experiment(cfg);
  sf::write_metrics_csv_file(cfg.metrics_csv, metrics);
  for (const auto& m : metrics) {
    std::cout << m.strategy << " seed=" << m.seed << " forward_calls=" << m.forward_calls
              << " tokens/call=" << sf::format_fixed6(m.tokens_per_forward_call);
    if (m.token_accuracy) std::cout << " accuracy=" << sf::format_fixed6(*m.token_accuracy);
    std::cout << '\n';
  }
  return kExitOk;
}

int do_compare(const CompareArgs& a) {
  auto cfg = sf::load_experiment_config(a.config);
  if (!a.seeds.empty()) cfg.seeds = parse_seeds(a.seeds);
  const auto names = split_list(a.strategies);
  const auto metrics = sf::run_experiment(cfg, names);
  const auto report = sf::compare_report(metrics);
  {
    std::ofstream out(a.out, std::ios::binary);
    if (!out) throw sf::IoError("cannot open report for writing: " + a.out);
    sf::write_compare_csv(out, report);
    if (!out) throw sf::IoError("failed writing " + a.out);
  }
  const auto text_path = std::filesystem::path(a.out).replace_extension(".txt").string();
  {
    std::ofstream out(text_path, std::ios::binary);
    if (!out) throw sf::IoError("cannot open report for writing: " + text_path);
    sf::write_compare_text(out, report);
  }
  if (!a.metrics.empty()) sf::write_metrics_csv_file(a.metrics, metrics);
  sf::write_compare_text(std::cout, report);
  return kExitOk;
}

int do_replay(const ReplayArgs& a) {
  const auto trace = sf::read_trace_file(a.trace);
  sf::ExperimentConfig cfg;
  if (!a.config.empty()) cfg = sf::load_experiment_config(a.config);
  cfg.length = trace.header.length;
  cfg.total_steps = trace.header.total_steps;
  cfg.vocab_size = trace.header.vocab_size;
  cfg.seeds = {trace.header.seed};
  cfg.replay_trace = a.trace;
  cfg.emit_trace = false;
  cfg.emit_confmap = false;

  auto [metrics, run] = sf::run_one(cfg, a.strategy, trace.header.seed);
  if (a.strategy == trace.header.strategy) {
    // Replaying the recording strategy must reproduce every decision.
    if (run.records.size() != trace.records.size())
      throw sf::ValidationError("replay produced " + std::to_string(run.records.size()) +
                                " steps, trace has " + std::to_string(trace.records.size()));
    for (std::size_t i = 0; i < run.records.size(); ++i) {
      const auto& got = run.records[i];
      const auto& want = trace.records[i];
      bool same = got.step == want.step && got.phase == want.phase &&
                  got.unmasked.size() == want.unmasked.size();
      for (std::size_t u = 0; same && u < got.unmasked.size(); ++u)
        same = got.unmasked[u].position == want.unmasked[u].position &&
               got.unmasked[u].token == want.unmasked[u].token;
      if (!same)
        throw sf::ValidationError("replay diverged from the trace at record " + std::to_string(i));
    }
  }
  if (a.out.empty()) {
    sf::write_metrics_csv(std::cout, {metrics});
  } else {
    sf::write_metrics_csv_file(a.out, {metrics});
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SlowFast sampling scheduler: run, compare and replay decoding experiments"};
  app.require_subcommand(1);

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Run one strategy over the configured seeds");
  run->add_option("--config", run_args.config, "Experiment JSON")->required();
  run->add_option("--strategy", run_args.strategy, "Strategy name (overrides config)");
  run->add_option("--seeds", run_args.seeds, "Comma-separated seeds (overrides config)");
  run->add_option("--out", run_args.out, "Metrics CSV path (overrides config)");
  run->add_option("--trace-dir", run_args.trace_dir, "Write JSONL traces here");
  run->add_option("--confmap-dir", run_args.confmap_dir, "Write confidence-map TSVs here");

  CompareArgs cmp_args;
  auto* cmp = app.add_subcommand("compare", "Compare strategies on identical seeds");
  cmp->add_option("--config", cmp_args.config, "Experiment JSON")->required();
  cmp->add_option("--strategies", cmp_args.strategies, "Comma-separated strategy names")->required();
  cmp->add_option("--out", cmp_args.out, "Comparison CSV path")->required();
  cmp->add_option("--metrics", cmp_args.metrics, "Also write the per-run metrics CSV");
  cmp->add_option("--seeds", cmp_args.seeds, "Comma-separated seeds (overrides config)");

  ReplayArgs rep_args;
  auto* rep = app.add_subcommand("replay", "Re-run a strategy against a recorded trace");
  rep->add_option("--trace", rep_args.trace, "Trace JSONL")->required();
  rep->add_option("--strategy", rep_args.strategy, "Strategy name")->required();
  rep->add_option("--config", rep_args.config, "Experiment JSON supplying strategy parameters");
  rep->add_option("--out", rep_args.out, "Metrics CSV path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*run) return do_run(run_args);
    if (*cmp) return do_compare(cmp_args);
    if (*rep) return do_replay(rep_args);
  } catch (const sf::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitValidation;
}
