// Static baseline remasking strategies: random, low-confidence,
// semi-autoregressive (block-wise low-confidence) and a confidence-threshold
// parallel decoder. Each step function is pure: (row, state, params) -> choices.
#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "slowfast/core.hpp"
#include "slowfast/hash.hpp"
#include "slowfast/predictor.hpp"

namespace slowfast {

enum class BaselineKind { kRandom, kLowConfidence, kSemiAutoregressive, kThresholdParallel };

inline std::string_view baseline_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::kRandom: return "random";
    case BaselineKind::kLowConfidence: return "low_confidence";
    case BaselineKind::kSemiAutoregressive: return "semi_autoregressive";
    case BaselineKind::kThresholdParallel: return "threshold_parallel";
  }
  return "low_confidence";
}

struct BaselineConfig {
  BaselineKind kind = BaselineKind::kLowConfidence;
  std::size_t block_length = 32;
  double parallel_threshold = 0.9;
  std::uint64_t seed = 0;

  void validate() const {
    if (block_length < 1) throw ValidationError("block_length must be >= 1");
    if (!(parallel_threshold > 0.0 && parallel_threshold <= 1.0))
      throw ValidationError("parallel_threshold must be in (0, 1]");
  }
};

/// Each masked position is unmasked with probability 1/k, drawn from a
/// hash keyed by (seed, position, k).
inline Choices random_remask_step(const PredictionRow& row, const SequenceState& state,
                                  std::uint64_t seed) {
  check_row(state, row);
  const int k = state.step();
  if (k < 1) throw ValidationError("no diffusion steps left");
  const double keep_mask = static_cast<double>(k - 1) / k;
  Choices out;
  for (std::size_t i = 0; i < state.length(); ++i) {
    if (!state.is_masked(i)) continue;
    const double u =
        detail::keyed_uniform(seed, {detail::kSaltRandom, i, static_cast<std::uint64_t>(k)});
    if (u >= keep_mask) out.push_back({i, row[i].token});
  }
  return out;
}

namespace detail {

/// Low-confidence selection over [first, first + length) with its own
/// schedule (length, steps, k). Decoded positions always fill the quota first.
inline Choices low_confidence_in_range(const PredictionRow& row, const SequenceState& state,
                                       std::size_t first, std::size_t length, int steps, int k) {
  const std::size_t quota = target_unmasked_count(length, steps, k);
  std::size_t decoded = 0;
  for (std::size_t i = first; i < first + length; ++i)
    if (!state.is_masked(i)) ++decoded;
  if (quota <= decoded) return {};
  return top_masked(state, row, first, first + length - 1, quota - decoded);
}

}  // namespace detail

/// Grows the decoded set to the n_un highest-confidence positions, where
/// n_un = target_unmasked_count(L, N, k). A no-op when the decoded count
/// already meets the quota.
inline Choices low_confidence_step(const PredictionRow& row, const SequenceState& state) {
  check_row(state, row);
  if (state.step() < 1) throw ValidationError("no diffusion steps left");
  return detail::low_confidence_in_range(row, state, 0, state.length(), state.total_steps(),
                                         state.step());
}

/// Step budget per block: N split evenly over ceil(L / block_length)
/// blocks, remainder to the earliest blocks.
inline std::vector<int> block_step_allocation(std::size_t length, int total_steps,
                                              std::size_t block_length) {
  const std::size_t blocks = (length + block_length - 1) / block_length;
  std::vector<int> steps(blocks, total_steps / static_cast<int>(blocks));
  const auto rem = static_cast<std::size_t>(total_steps % static_cast<int>(blocks));
  for (std::size_t b = 0; b < rem; ++b) ++steps[b];
  return steps;
}

/// Low-confidence remasking restricted to the first block that still holds
/// a mask, using that block's share of the step budget.
inline Choices semi_autoregressive_step(const PredictionRow& row, const SequenceState& state,
                                        std::size_t block_length) {
  check_row(state, row);
  if (block_length < 1) throw ValidationError("block_length must be >= 1");
  const int k = state.step();
  if (k < 1) throw ValidationError("no diffusion steps left");

  const std::size_t len = state.length();
  std::size_t block = 0;
  while (block * block_length < len) {
    const std::size_t first = block * block_length;
    const std::size_t last = std::min(len, first + block_length);
    bool has_mask = false;
    for (std::size_t i = first; i < last; ++i) has_mask = has_mask || state.is_masked(i);
    if (has_mask) break;
    ++block;
  }
  if (block * block_length >= len) return {};

  const auto alloc = block_step_allocation(len, state.total_steps(), block_length);
  int later_steps = 0;
  for (std::size_t b = block + 1; b < alloc.size(); ++b) later_steps += alloc[b];
  // With N < #blocks a block may get no steps; it then decodes in one step.
  const int block_steps = std::max(alloc[block], 1);
  const int local_k = std::clamp(k - later_steps, 1, block_steps);

  const std::size_t first = block * block_length;
  const std::size_t size = std::min(block_length, len - first);
  return detail::low_confidence_in_range(row, state, first, size, block_steps, local_k);
}

/// Unmasks every masked position with confidence > threshold; when none
/// qualifies, the single most confident masked position.
inline Choices threshold_parallel_step(const PredictionRow& row, const SequenceState& state,
                                       double threshold) {
  check_row(state, row);
  if (state.step() < 1) throw ValidationError("no diffusion steps left");
  Choices out;
  for (std::size_t i = 0; i < state.length(); ++i)
    if (state.is_masked(i) && row[i].confidence > threshold) out.push_back({i, row[i].token});
  if (out.empty() && !state.complete()) return top_masked(state, row, 0, state.length() - 1, 1);
  return out;
}

inline Choices baseline_step(const BaselineConfig& cfg, const PredictionRow& row,
                             const SequenceState& state) {
  switch (cfg.kind) {
    case BaselineKind::kRandom: return random_remask_step(row, state, cfg.seed);
    case BaselineKind::kLowConfidence: return low_confidence_step(row, state);
    case BaselineKind::kSemiAutoregressive:
      return semi_autoregressive_step(row, state, cfg.block_length);
    case BaselineKind::kThresholdParallel:
      return threshold_parallel_step(row, state, cfg.parallel_threshold);
  }
  return {};
}

/// Runs a baseline to completion: one forward call per step until no masks
/// remain or k reaches 0, then a terminal flush if needed.
template <MaskPredictor P>
RunResult run_baseline(P& predictor, SequenceState state, const BaselineConfig& cfg) {
  cfg.validate();
  RunResult run{std::move(state), {}, {}};
  while (!run.final_state.complete() && run.final_state.step() > 0) {
    const auto& cur = run.final_state;
    PredictionRow row = predictor.predict(cur, PositionMask{});
    check_row(cur, row);
    apply_decoded_convention(cur, row);

    const Choices choices = baseline_step(cfg, row, cur);
    StepRecord rec;
    rec.step = cur.step();
    rec.phase = Phase::kBaseline;
    rec.unmasked = describe(choices, row);
    rec.evaluated_positions = cur.length();
    run.final_state = apply_unmask(cur, choices);
    run.records.push_back(std::move(rec));
    run.rows.push_back(std::move(row));
  }
  detail::finish_with_flush(run);
  return run;
}

}  // namespace slowfast
