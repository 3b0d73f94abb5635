// Two-phase slow/fast decoding scheduler.
//
// Each cycle starts with an exploratory (slow) phase over [s_cycle, L-1]:
// every step commits the top-k_slow masked positions and records a
// candidate endpoint, the furthest position whose confidence exceeds
// tau_min_conf. Once the last W_hist endpoints have population variance
// below sigma2_stable (or K_max slow steps have run), the span
// [s_cycle, e_cycle] is fixed and the accelerated (fast) phase commits every
// in-span position above tau_high_conf per step, falling back to the
// top-k_fast when none qualifies. When the span is fully decoded the next
// cycle starts at e_cycle + 1.
#pragma once

#include <optional>
#include <tuple>
#include <vector>

#include "slowfast/cache.hpp"
#include "slowfast/core.hpp"
#include "slowfast/predictor.hpp"

namespace slowfast {

struct SlowFastConfig {
  double tau_min_conf = 0.1;
  double tau_high_conf = 0.85;
  int max_exploratory_steps = 8;  // K_max
  int history_window = 2;         // W_hist
  double stable_variance = 1.0;   // sigma^2_stable; 0 never fires
  std::size_t slow_top_k = 1;
  std::size_t fast_top_k = 1;

  void validate() const {
    if (!(tau_min_conf >= 0.0 && tau_min_conf <= 1.0))
      throw ValidationError("tau_min_conf must be in [0, 1]");
    if (!(tau_high_conf > 0.0 && tau_high_conf <= 1.0))
      throw ValidationError("tau_high_conf must be in (0, 1]");
    if (!(tau_min_conf < tau_high_conf))
      throw ValidationError("tau_min_conf must be below tau_high_conf");
    if (max_exploratory_steps < 1) throw ValidationError("max_exploratory_steps must be >= 1");
    if (history_window < 1) throw ValidationError("history_window must be >= 1");
    if (!(stable_variance >= 0.0)) throw ValidationError("stable_variance must be >= 0");
    if (slow_top_k < 1 || fast_top_k < 1) throw ValidationError("top-k sizes must be >= 1");
  }
};

struct CycleState {
  std::size_t s_cycle = 0;
  std::optional<std::size_t> e_cycle;
  std::vector<std::size_t> history;  // sliding, at most W_hist entries
  int exploratory_steps_used = 0;

  void push_endpoint(std::size_t e, int window) {
    history.push_back(e);
    if (history.size() > static_cast<std::size_t>(window))
      history.erase(history.begin(), history.end() - window);
  }

  void start_cycle(std::size_t start) {
    s_cycle = start;
    e_cycle.reset();
    history.clear();
    exploratory_steps_used = 0;
  }
};

/// Furthest position in [s_cycle, L-1] with confidence > tau_min_conf.
inline std::optional<std::size_t> predict_endpoint(const PredictionRow& row, std::size_t s_cycle,
                                                   double tau_min_conf) {
  if (s_cycle >= row.size()) throw ValidationError("s_cycle outside the sequence");
  for (std::size_t i = row.size(); i-- > s_cycle;)
    if (row[i].confidence > tau_min_conf) return i;
  return std::nullopt;
}

struct Stability {
  bool stable = false;
  double variance = 0.0;
};

/// Population variance of the last `window` endpoints. Stable only when the
/// window is full and the variance is strictly below the threshold.
inline Stability stability_check(const std::vector<std::size_t>& history, int window,
                                 double stable_variance) {
  if (history.empty() || window < 1) return {};
  const std::size_t n = std::min(history.size(), static_cast<std::size_t>(window));
  const auto first = history.end() - static_cast<std::ptrdiff_t>(n);
  double mean = 0.0;
  for (auto it = first; it != history.end(); ++it) mean += static_cast<double>(*it);
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (auto it = first; it != history.end(); ++it) {
    const double d = static_cast<double>(*it) - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  const bool full = history.size() >= static_cast<std::size_t>(window);
  return {full && var < stable_variance, var};
}

/// Span end for the fast phase: floor of the window mean when stable, the
/// last endpoint otherwise, clamped into [s_cycle, length-1].
inline std::size_t finalize_cycle_endpoint(const std::vector<std::size_t>& history, int window,
                                           bool stable, std::size_t s_cycle, std::size_t length) {
  if (history.empty())
    throw ValidationError("exploratory phase produced no endpoint candidate");
  std::size_t e = history.back();
  if (stable) {
    const std::size_t n = std::min(history.size(), static_cast<std::size_t>(window));
    std::size_t sum = 0;
    for (auto it = history.end() - static_cast<std::ptrdiff_t>(n); it != history.end(); ++it)
      sum += *it;
    e = sum / n;
  }
  return std::clamp(e, s_cycle, length - 1);
}

struct SlowStepResult {
  Choices choices;
  std::optional<std::size_t> e_cand;
  Stability stability;
};

/// One exploratory step. Updates `cycle` (history, step count) in place.
inline SlowStepResult slow_step(const PredictionRow& row, const SequenceState& state,
                                CycleState& cycle, const SlowFastConfig& cfg) {
  check_row(state, row);
  if (cycle.exploratory_steps_used >= cfg.max_exploratory_steps)
    throw ValidationError("exploratory step budget exhausted");
  SlowStepResult out;
  out.choices = top_masked(state, row, cycle.s_cycle, state.length() - 1, cfg.slow_top_k);
  out.e_cand = predict_endpoint(row, cycle.s_cycle, cfg.tau_min_conf);
  if (out.e_cand) cycle.push_endpoint(*out.e_cand, cfg.history_window);
  ++cycle.exploratory_steps_used;
  out.stability = stability_check(cycle.history, cfg.history_window, cfg.stable_variance);
  return out;
}

/// One accelerated step over [s_cycle, e_cycle].
inline Choices fast_step(const PredictionRow& row, const SequenceState& state,
                         const CycleState& cycle, const SlowFastConfig& cfg) {
  check_row(state, row);
  if (!cycle.e_cycle) throw ValidationError("fast step requires a finalized span");
  const std::size_t first = cycle.s_cycle;
  const std::size_t last = *cycle.e_cycle;
  if (first > last || last >= state.length()) throw ValidationError("invalid cycle span");

  Choices high;
  for (std::size_t i = first; i <= last; ++i)
    if (state.is_masked(i) && row[i].confidence > cfg.tau_high_conf)
      high.push_back({i, row[i].token});
  if (!high.empty()) return high;
  return top_masked(state, row, first, last, cfg.fast_top_k);
}

namespace detail {

inline bool span_has_mask(const SequenceState& state, Span span) {
  for (std::size_t i = span.start; i <= span.end; ++i)
    if (state.is_masked(i)) return true;
  return false;
}

}  // namespace detail

/// Runs the slow/fast cycle loop to completion. Every step costs one
/// forward call and yields one StepRecord; if k reaches 0 with masks left,
/// the last row's tokens are committed in a flush record. Pass an enabled
/// CachePolicy to reuse out-of-span predictions during fast phases.
template <MaskPredictor P>
RunResult run_slowfast(P& predictor, SequenceState state, const SlowFastConfig& cfg,
                       CachePolicy* cache = nullptr) {
  cfg.validate();
  const bool caching = cache != nullptr && cache->enabled;
  if (cache != nullptr) cache->clear();

  RunResult run{std::move(state), {}, {}};
  const std::size_t length = run.final_state.length();
  auto forward = [&](const PositionMask& skip) {
    PredictionRow row = predictor.predict(run.final_state, skip);
    check_row(run.final_state, row);
    apply_decoded_convention(run.final_state, row);
    return row;
  };
  auto commit = [&](StepRecord rec, const Choices& choices, PredictionRow row) {
    rec.step = run.final_state.step();
    rec.unmasked = describe(choices, row);
    run.final_state = apply_unmask(run.final_state, choices);
    run.records.push_back(std::move(rec));
    run.rows.push_back(std::move(row));
  };
  auto budget_left = [&] { return !run.final_state.complete() && run.final_state.step() > 0; };

  CycleState cycle;
  while (budget_left()) {
    // Exploratory phase.
    bool stable = false;
    while (cycle.exploratory_steps_used < cfg.max_exploratory_steps && budget_left()) {
      PredictionRow row = forward({});
      SlowStepResult res = slow_step(row, run.final_state, cycle, cfg);
      StepRecord rec;
      rec.phase = Phase::kSlow;
      rec.evaluated_positions = length;
      rec.e_cand = res.e_cand;
      commit(std::move(rec), res.choices, std::move(row));
      if (res.stability.stable) {
        stable = true;
        break;
      }
    }
    if (!budget_left()) break;

    if (cycle.history.empty()) {
      // No endpoint ever qualified: one cautious top-1 step, then a fresh cycle.
      PredictionRow row = forward({});
      Choices choices = top_masked(run.final_state, row, cycle.s_cycle, length - 1, 1);
      StepRecord rec;
      rec.phase = Phase::kFallback;
      rec.evaluated_positions = length;
      commit(std::move(rec), choices, std::move(row));
      cycle.start_cycle(cycle.s_cycle);
      continue;
    }

    // Accelerated phase.
    const std::size_t e_cycle = finalize_cycle_endpoint(cycle.history, cfg.history_window, stable,
                                                        cycle.s_cycle, length);
    cycle.e_cycle = e_cycle;
    const Span span{cycle.s_cycle, e_cycle};
    while (run.final_state.step() > 0 && detail::span_has_mask(run.final_state, span)) {
      std::size_t served = 0;
      PredictionRow row;
      if (caching) {
        cache_evict(*cache, run.final_state, e_cycle);
        row = forward(cache_skip_mask(*cache, length));
        std::tie(row, served) = cache_serve(row, run.final_state, e_cycle, *cache);
      } else {
        row = forward({});
      }
      Choices choices = fast_step(row, run.final_state, cycle, cfg);
      if (caching) cache_fill(row, e_cycle, cfg.tau_min_conf, *cache, run.final_state.step());
      StepRecord rec;
      rec.phase = Phase::kFast;
      rec.evaluated_positions = length - served;
      rec.cached_positions = served;
      rec.span = span;
      commit(std::move(rec), choices, std::move(row));
    }
    if (caching) cache->clear();
    if (detail::span_has_mask(run.final_state, span)) break;  // k exhausted mid-span
    cycle.start_cycle(e_cycle + 1);
    if (cycle.s_cycle >= length) break;
  }
  detail::finish_with_flush(run);
  return run;
}

}  // namespace slowfast
