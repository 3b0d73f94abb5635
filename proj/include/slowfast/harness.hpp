// Experiment harness: JSON configuration, the (seed x strategy) run grid,
// metrics CSV, traces, confidence-map exports and strategy comparison.
#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "slowfast/cache.hpp"
#include "slowfast/core.hpp"
#include "slowfast/predictor.hpp"
#include "slowfast/scheduler.hpp"
#include "slowfast/strategies.hpp"
#include "slowfast/trace.hpp"

namespace slowfast {

inline constexpr std::string_view kCsvSchemaLine = "#schema=1";

/// Oracle knobs shared by every run; ground truth and seed are per run.
struct OracleParams {
  double base_noise = 0.05;
  double convergence_rate = 10.0;
  int neighbor_radius = 16;
  double neighbor_boost = 8.0;
  double error_rate_floor = 0.015;
  double logit_bias = -4.0;
};

struct SlowFastSpec {
  SlowFastConfig config;
  bool cache = false;
};

/// A named strategy plus its parameters.
struct StrategySpec {
  std::string label;
  std::variant<BaselineConfig, SlowFastSpec> params;
};

struct ExperimentConfig {
  std::size_t length = 256;
  int total_steps = 256;
  std::uint32_t vocab_size = 32000;
  std::size_t prompt_length = 16;
  std::string strategy = "slowfast";
  nlohmann::json strategy_params = nlohmann::json::object();
  OracleParams oracle;
  std::optional<std::string> replay_trace;
  std::vector<std::uint64_t> seeds{0};
  std::string metrics_csv = "metrics.csv";
  std::optional<std::string> trace_dir;
  std::optional<std::string> confmap_dir;
  bool emit_trace = false;
  bool emit_confmap = false;

  void validate() const {
    if (length < 1) throw ValidationError("L must be >= 1");
    if (total_steps < 1) throw ValidationError("N must be >= 1");
    if (vocab_size < 2) throw ValidationError("V must be >= 2");
    if (seeds.empty()) throw ValidationError("at least one seed is required");
    if (emit_trace && !trace_dir) throw ValidationError("emit_trace needs trace_dir");
    if (emit_confmap && !confmap_dir) throw ValidationError("emit_confmap needs confmap_dir");
  }
};

inline const std::vector<std::string>& known_strategies() {
  static const std::vector<std::string> names{"random",    "low_confidence", "semi_autoregressive",
                                              "threshold_parallel", "slowfast", "slowfast_cache"};
  return names;
}

namespace detail {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

inline void read_opt_path(const nlohmann::json& j, const char* key,
                          std::optional<std::string>& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<std::string>();
}

}  // namespace detail

/// Builds a strategy from its name and the config's per-strategy parameters.
inline StrategySpec make_strategy(const std::string& name, const nlohmann::json& all_params,
                                  std::uint64_t seed = 0) {
  const std::string key = name == "slowfast_cache" ? "slowfast" : name;
  const nlohmann::json params = all_params.contains(key) ? all_params.at(key)
                                                         : nlohmann::json::object();
  try {
    if (name == "slowfast" || name == "slowfast_cache") {
      SlowFastSpec spec;
      auto& c = spec.config;
      detail::read_opt(params, "tau_min_conf", c.tau_min_conf);
      detail::read_opt(params, "tau_high_conf", c.tau_high_conf);
      detail::read_opt(params, "max_exploratory_steps", c.max_exploratory_steps);
      detail::read_opt(params, "history_window", c.history_window);
      detail::read_opt(params, "stable_variance", c.stable_variance);
      detail::read_opt(params, "slow_top_k", c.slow_top_k);
      detail::read_opt(params, "fast_top_k", c.fast_top_k);
      detail::read_opt(params, "cache", spec.cache);
      if (name == "slowfast_cache") spec.cache = true;
      c.validate();
      return {name, spec};
    }
    BaselineConfig b;
    b.seed = seed;
    if (name == "random") {
      b.kind = BaselineKind::kRandom;
    } else if (name == "low_confidence") {
      b.kind = BaselineKind::kLowConfidence;
    } else if (name == "semi_autoregressive") {
      b.kind = BaselineKind::kSemiAutoregressive;
      detail::read_opt(params, "block_length", b.block_length);
    } else if (name == "threshold_parallel") {
      b.kind = BaselineKind::kThresholdParallel;
      detail::read_opt(params, "threshold", b.parallel_threshold);
    } else {
      throw ValidationError("unknown strategy '" + name + "'");
    }
    b.validate();
    return {name, b};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("bad parameters for strategy '" + name + "': " + e.what());
  }
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  try {
    detail::read_opt(j, "L", cfg.length);
    detail::read_opt(j, "N", cfg.total_steps);
    detail::read_opt(j, "V", cfg.vocab_size);
    detail::read_opt(j, "prompt_length", cfg.prompt_length);
    detail::read_opt(j, "strategy", cfg.strategy);
    if (j.contains("strategy_params")) cfg.strategy_params = j.at("strategy_params");
    if (j.contains("oracle")) {
      const auto& o = j.at("oracle");
      detail::read_opt(o, "base_noise", cfg.oracle.base_noise);
      detail::read_opt(o, "convergence_rate", cfg.oracle.convergence_rate);
      detail::read_opt(o, "neighbor_radius", cfg.oracle.neighbor_radius);
      detail::read_opt(o, "neighbor_boost", cfg.oracle.neighbor_boost);
      detail::read_opt(o, "error_rate_floor", cfg.oracle.error_rate_floor);
      detail::read_opt(o, "logit_bias", cfg.oracle.logit_bias);
    }
    detail::read_opt_path(j, "replay_trace", cfg.replay_trace);
    detail::read_opt(j, "seeds", cfg.seeds);
    detail::read_opt(j, "metrics_csv", cfg.metrics_csv);
    detail::read_opt_path(j, "trace_dir", cfg.trace_dir);
    detail::read_opt_path(j, "confmap_dir", cfg.confmap_dir);
    detail::read_opt(j, "emit_trace", cfg.emit_trace);
    detail::read_opt(j, "emit_confmap", cfg.emit_confmap);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid experiment config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config is not valid JSON: " + std::string(e.what()));
  }
  return experiment_config_from_json(j);
}

inline OracleConfig make_oracle(const ExperimentConfig& cfg, std::uint64_t seed) {
  OracleConfig o;
  o.ground_truth = seeded_tokens(seed, detail::kSaltTruth, cfg.length, cfg.vocab_size);
  o.seed = seed;
  o.vocab_size = cfg.vocab_size;
  o.base_noise = cfg.oracle.base_noise;
  o.convergence_rate = cfg.oracle.convergence_rate;
  o.neighbor_radius = cfg.oracle.neighbor_radius;
  o.neighbor_boost = cfg.oracle.neighbor_boost;
  o.error_rate_floor = cfg.oracle.error_rate_floor;
  o.logit_bias = cfg.oracle.logit_bias;
  return o;
}

struct RunMetrics {
  std::uint64_t seed = 0;
  std::string strategy;
  std::size_t length = 0;
  int total_steps = 0;
  std::size_t forward_calls = 0;
  std::size_t evaluated_positions_total = 0;
  std::size_t cached_positions_total = 0;
  double tokens_per_forward_call = 0.0;
  std::optional<double> token_accuracy;
  double wall_time_ms = 0.0;
};

/// Runs one strategy against any predictor.
template <MaskPredictor P>
RunResult run_strategy(P& predictor, const SequenceState& start, const StrategySpec& spec) {
  if (const auto* b = std::get_if<BaselineConfig>(&spec.params))
    return run_baseline(predictor, start, *b);
  const auto& sf = std::get<SlowFastSpec>(spec.params);
  CachePolicy cache;
  cache.enabled = sf.cache;
  return run_slowfast(predictor, start, sf.config, &cache);
}

inline RunMetrics summarize_run(const RunResult& run, std::uint64_t seed, const std::string& label,
                                const std::vector<TokenId>* ground_truth, double wall_time_ms) {
  const auto savings = accounting_report(run.records, run.final_state.length());
  RunMetrics m;
  m.seed = seed;
  m.strategy = label;
  m.length = run.final_state.length();
  m.total_steps = run.final_state.total_steps();
  m.forward_calls = savings.forward_calls;
  m.evaluated_positions_total = savings.evaluated_positions;
  m.cached_positions_total = savings.cached_positions;
  m.tokens_per_forward_call = savings.tokens_per_forward_call;
  if (ground_truth != nullptr) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < m.length; ++i)
      if (run.final_state.response()[i] == (*ground_truth)[i]) ++correct;
    m.token_accuracy = static_cast<double>(correct) / static_cast<double>(m.length);
  }
  m.wall_time_ms = wall_time_ms;
  return m;
}

// ---------------------------------------------------------------------------
// Confidence maps

/// (records x L) confidences as seen after each step (decoded positions read
/// 1), plus the step index at which each position was decoded (-1 while masked).
struct ConfidenceMap {
  std::vector<std::vector<double>> confidence;
  std::vector<std::vector<int>> decode_step;
};

inline ConfidenceMap export_confidence_map(const std::vector<StepRecord>& records,
                                           const std::vector<PredictionRow>& rows) {
  if (records.size() != rows.size())
    throw ValidationError("confidence map needs one row per step record");
  ConfidenceMap map;
  if (rows.empty()) return map;
  const std::size_t length = rows.front().size();
  std::vector<int> decoded_at(length, -1);
  for (std::size_t r = 0; r < records.size(); ++r) {
    if (rows[r].size() != length) throw ValidationError("prediction rows differ in length");
    for (const auto& u : records[r].unmasked) {
      if (u.position >= length) throw ValidationError("unmasked position outside the row");
      decoded_at[u.position] = records[r].step;
    }
    std::vector<double> conf(length);
    for (std::size_t i = 0; i < length; ++i)
      conf[i] = decoded_at[i] >= 0 ? 1.0 : rows[r][i].confidence;
    map.confidence.push_back(std::move(conf));
    map.decode_step.push_back(decoded_at);
  }
  return map;
}

inline void write_confidence_tsv(std::ostream& out, const ConfidenceMap& map) {
  for (const auto& row : map.confidence) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "\t" : "") << format_fixed6(row[i]);
    out << '\n';
  }
}

inline void write_decode_step_tsv(std::ostream& out, const ConfidenceMap& map) {
  for (const auto& row : map.decode_step) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "\t" : "") << row[i];
    out << '\n';
  }
}

template <typename T>
std::vector<std::vector<T>> read_tsv_matrix(std::istream& in) {
  std::vector<std::vector<T>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<T> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, '\t')) {
      try {
        if constexpr (std::is_floating_point_v<T>) row.push_back(std::stod(cell));
        else row.push_back(static_cast<T>(std::stoll(cell)));
      } catch (const std::exception&) {
        throw ValidationError("bad TSV cell '" + cell + "'");
      }
    }
    out.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics CSV

inline std::string metrics_csv_header() {
  return "seed,strategy,L,N,forward_calls,evaluated_positions_total,cached_positions_total,"
         "tokens_per_forward_call,token_accuracy,wall_time_ms";
}

/// wall_time_ms is the last column and the only non-deterministic field.
inline std::string metrics_csv_row(const RunMetrics& m) {
  std::ostringstream os;
  os << m.seed << ',' << m.strategy << ',' << m.length << ',' << m.total_steps << ','
     << m.forward_calls << ',' << m.evaluated_positions_total << ',' << m.cached_positions_total
     << ',' << format_fixed6(m.tokens_per_forward_call) << ','
     << (m.token_accuracy ? format_fixed6(*m.token_accuracy) : "") << ','
     << format_fixed6(m.wall_time_ms);
  return os.str();
}

inline void write_metrics_csv(std::ostream& out, const std::vector<RunMetrics>& metrics) {
  out << kCsvSchemaLine << '\n' << metrics_csv_header() << '\n';
  for (const auto& m : metrics) out << metrics_csv_row(m) << '\n';
}

inline void write_metrics_csv_file(const std::string& path, const std::vector<RunMetrics>& metrics) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open metrics CSV for writing: " + path);
  write_metrics_csv(out, metrics);
  if (!out) throw IoError("failed writing metrics CSV: " + path);
}

inline std::vector<RunMetrics> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvSchemaLine)
    throw ValidationError("metrics CSV lacks the #schema=1 line");
  if (!std::getline(in, line) || line != metrics_csv_header())
    throw ValidationError("metrics CSV header does not match schema 1");
  std::vector<RunMetrics> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 10) throw ValidationError("metrics CSV row has wrong field count");
    try {
      RunMetrics m;
      m.seed = std::stoull(f[0]);
      m.strategy = f[1];
      m.length = std::stoull(f[2]);
      m.total_steps = std::stoi(f[3]);
      m.forward_calls = std::stoull(f[4]);
      m.evaluated_positions_total = std::stoull(f[5]);
      m.cached_positions_total = std::stoull(f[6]);
      m.tokens_per_forward_call = std::stod(f[7]);
      if (!f[8].empty()) m.token_accuracy = std::stod(f[8]);
      m.wall_time_ms = std::stod(f[9]);
      out.push_back(std::move(m));
    } catch (const std::logic_error&) {
      throw ValidationError("unparsable metrics CSV row: " + line);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment grid

inline std::string run_file_stem(const std::string& strategy, std::uint64_t seed) {
  return strategy + "_seed" + std::to_string(seed);
}

namespace detail {

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

inline void write_text_file(const std::string& path, const auto& writer) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  writer(out);
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace detail

/// Writes the enabled per-run artifacts (trace, confidence maps).
inline void emit_run_artifacts(const ExperimentConfig& cfg, const std::string& label,
                               std::uint64_t seed, const RunResult& run) {
  const std::string stem = run_file_stem(label, seed);
  if (cfg.emit_trace) {
    detail::ensure_dir(*cfg.trace_dir);
    const TraceHeader header{cfg.length, cfg.total_steps, cfg.vocab_size, seed, label};
    write_trace_file((std::filesystem::path(*cfg.trace_dir) / (stem + ".jsonl")).string(), header,
                     run);
  }
  if (cfg.emit_confmap) {
    detail::ensure_dir(*cfg.confmap_dir);
    const auto map = export_confidence_map(run.records, run.rows);
    const auto base = std::filesystem::path(*cfg.confmap_dir);
    detail::write_text_file((base / (stem + ".conf.tsv")).string(),
                            [&](std::ostream& o) { write_confidence_tsv(o, map); });
    detail::write_text_file((base / (stem + ".decode.tsv")).string(),
                            [&](std::ostream& o) { write_decode_step_tsv(o, map); });
  }
}

/// One run of `strategy` on `seed`, oracle- or replay-backed per the config.
inline std::pair<RunMetrics, RunResult> run_one(const ExperimentConfig& cfg,
                                                const std::string& strategy, std::uint64_t seed) {
  const StrategySpec spec = make_strategy(strategy, cfg.strategy_params, seed);
  const auto prompt = seeded_tokens(seed, detail::kSaltPrompt, cfg.prompt_length, cfg.vocab_size);
  const auto start = init_masked_sequence(prompt, cfg.length, cfg.total_steps);
  const auto t0 = std::chrono::steady_clock::now();
  if (cfg.replay_trace) {
    ReplayPredictor replay(read_trace_file(*cfg.replay_trace));
    const auto& h = replay.trace().header;
    if (h.length != cfg.length || h.total_steps != cfg.total_steps)
      throw ValidationError("replay trace header (L, N) does not match the config");
    RunResult run = run_strategy(replay, start, spec);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return {summarize_run(run, seed, strategy, nullptr, ms), std::move(run)};
  }
  OraclePredictor oracle(make_oracle(cfg, seed));
  RunResult run = run_strategy(oracle, start, spec);
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return {summarize_run(run, seed, strategy, &oracle.config().ground_truth, ms), std::move(run)};
}

/// Runs every (strategy, seed) pair, writes per-run artifacts, and returns
/// the metrics in (strategy, seed) order. The CSV is written by the caller
/// once all runs are gathered.
inline std::vector<RunMetrics> run_experiment(const ExperimentConfig& cfg,
                                              const std::vector<std::string>& strategies) {
  cfg.validate();
  if (strategies.empty()) throw ValidationError("no strategy selected");
  for (const auto& s : strategies) make_strategy(s, cfg.strategy_params);
  std::vector<RunMetrics> metrics;
  for (const auto& s : strategies) {
    for (auto seed : cfg.seeds) {
      auto [m, run] = run_one(cfg, s, seed);
      emit_run_artifacts(cfg, s, seed, run);
      metrics.push_back(std::move(m));
    }
  }
  return metrics;
}

inline std::vector<RunMetrics> run_experiment(const ExperimentConfig& cfg) {
  return run_experiment(cfg, {cfg.strategy});
}

// ---------------------------------------------------------------------------
// Strategy comparison

struct StrategySummary {
  std::string strategy;
  std::size_t runs = 0;
  double forward_calls_mean = 0.0;
  double tokens_per_forward_call_mean = 0.0;
  double tokens_per_forward_call_std = 0.0;
  std::optional<double> token_accuracy_mean;
  std::optional<double> token_accuracy_std;
  std::optional<double> speedup_vs_low_confidence;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

}  // namespace detail

/// Per-strategy means and sample standard deviations, with speedup measured
/// as mean forward calls of low_confidence over those of the strategy.
inline std::vector<StrategySummary> compare_report(const std::vector<RunMetrics>& metrics) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const RunMetrics*>> groups;
  for (const auto& m : metrics) {
    if (!groups.contains(m.strategy)) order.push_back(m.strategy);
    groups[m.strategy].push_back(&m);
  }
  if (order.size() < 2) throw ValidationError("comparison needs at least two strategies");

  auto seed_set = [](const std::vector<const RunMetrics*>& g) {
    std::vector<std::uint64_t> s;
    for (auto* m : g) s.push_back(m->seed);
    std::ranges::sort(s);
    return s;
  };
  const auto reference_seeds = seed_set(groups[order.front()]);
  for (const auto& name : order)
    if (seed_set(groups[name]) != reference_seeds)
      throw ValidationError("strategies were run on different seed sets");

  std::vector<StrategySummary> out;
  for (const auto& name : order) {
    const auto& g = groups[name];
    std::vector<double> calls, tpf, acc;
    for (auto* m : g) {
      calls.push_back(static_cast<double>(m->forward_calls));
      tpf.push_back(m->tokens_per_forward_call);
      if (m->token_accuracy) acc.push_back(*m->token_accuracy);
    }
    StrategySummary s;
    s.strategy = name;
    s.runs = g.size();
    s.forward_calls_mean = detail::mean_std(calls).first;
    std::tie(s.tokens_per_forward_call_mean, s.tokens_per_forward_call_std) = detail::mean_std(tpf);
    if (acc.size() == g.size()) {
      const auto [am, as] = detail::mean_std(acc);
      s.token_accuracy_mean = am;
      s.token_accuracy_std = as;
    }
    out.push_back(std::move(s));
  }
  const auto base = std::ranges::find(out, std::string("low_confidence"), &StrategySummary::strategy);
  if (base != out.end())
    for (auto& s : out) s.speedup_vs_low_confidence = base->forward_calls_mean / s.forward_calls_mean;
  return out;
}

inline std::string compare_csv_header() {
  return "strategy,runs,forward_calls_mean,tokens_per_forward_call_mean,"
         "tokens_per_forward_call_std,token_accuracy_mean,token_accuracy_std,"
         "speedup_vs_low_confidence";
}

inline void write_compare_csv(std::ostream& out, const std::vector<StrategySummary>& rows) {
  auto opt = [](const std::optional<double>& v) { return v ? format_fixed6(*v) : std::string(); };
  out << kCsvSchemaLine << '\n' << compare_csv_header() << '\n';
  for (const auto& r : rows) {
    out << r.strategy << ',' << r.runs << ',' << format_fixed6(r.forward_calls_mean) << ','
        << format_fixed6(r.tokens_per_forward_call_mean) << ','
        << format_fixed6(r.tokens_per_forward_call_std) << ',' << opt(r.token_accuracy_mean) << ','
        << opt(r.token_accuracy_std) << ',' << opt(r.speedup_vs_low_confidence) << '\n';
  }
}

inline void write_compare_text(std::ostream& out, const std::vector<StrategySummary>& rows) {
  auto fmt = [](const std::optional<double>& v, int prec, const char* suffix = "") {
    if (!v) return std::string("-");
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << *v << suffix;
    return os.str();
  };
  std::size_t name_w = 8;
  for (const auto& r : rows) name_w = std::max(name_w, r.strategy.size());
  out << std::left << std::setw(static_cast<int>(name_w)) << "strategy" << std::right
      << std::setw(6) << "runs" << std::setw(10) << "calls" << std::setw(16) << "tokens/call"
      << std::setw(20) << "accuracy" << std::setw(10) << "speedup" << '\n';
  for (const auto& r : rows) {
    const std::string tpf = fmt(r.tokens_per_forward_call_mean, 3) + " +/- " +
                            fmt(r.tokens_per_forward_call_std, 3);
    const std::string acc = r.token_accuracy_mean ? fmt(r.token_accuracy_mean, 4) + " +/- " +
                                                        fmt(r.token_accuracy_std, 4)
                                                  : std::string("-");
    out << std::left << std::setw(static_cast<int>(name_w)) << r.strategy << std::right
        << std::setw(6) << r.runs << std::setw(10) << fmt(r.forward_calls_mean, 1)
        << std::setw(16) << tpf << std::setw(20) << acc << std::setw(10)
        << fmt(r.speedup_vs_low_confidence, 2, "x") << '\n';
  }
}

}  // namespace slowfast
