// Out-of-span prediction caching for the fast phase, and compute accounting.
//
// During a fast phase, positions beyond the span end whose confidence is
// below tau_min_conf are stored once and then served instead of being
// re-evaluated on later fast steps. Entries die as soon as their position is
// decoded or falls inside the active span, and the whole cache is cleared at
// every cycle boundary.
#pragma once

#include <map>
#include <utility>
#include <vector>

#include "slowfast/core.hpp"
#include "slowfast/predictor.hpp"

namespace slowfast {

struct CacheEntry {
  TokenId token{0};
  double confidence = 0.0;
  int cached_at_step = 0;

  friend bool operator==(const CacheEntry&, const CacheEntry&) = default;
};

struct CachePolicy {
  bool enabled = false;
  std::map<std::size_t, CacheEntry> entries;

  void clear() { entries.clear(); }
  bool contains(std::size_t i) const { return entries.contains(i); }
};

/// Drops entries whose position is decoded or not beyond span_end.
inline void cache_evict(CachePolicy& policy, const SequenceState& state, std::size_t span_end) {
  std::erase_if(policy.entries, [&](const auto& kv) {
    return kv.first <= span_end || kv.first >= state.length() || !state.is_masked(kv.first);
  });
}

/// Positions the predictor may skip this step.
inline PositionMask cache_skip_mask(const CachePolicy& policy, std::size_t length) {
  if (policy.entries.empty()) return {};
  PositionMask skip(length, false);
  for (const auto& [i, e] : policy.entries)
    if (i < length) skip[i] = true;
  return skip;
}

/// Stores low-confidence predictions beyond span_end that are not cached yet.
inline void cache_fill(const PredictionRow& row, std::size_t span_end, double tau_min_conf,
                       CachePolicy& policy, int step) {
  if (!policy.enabled) return;
  for (std::size_t i = span_end + 1; i < row.size(); ++i) {
    if (row[i].confidence < tau_min_conf && !policy.contains(i))
      policy.entries.emplace(i, CacheEntry{row[i].token, row[i].confidence, step});
  }
}

/// Substitutes live entries into `row`. Stale entries (decoded, or inside
/// the span) are evicted first and never served.
inline std::pair<PredictionRow, std::size_t> cache_serve(const PredictionRow& row,
                                                         const SequenceState& state,
                                                         std::size_t span_end,
                                                         CachePolicy& policy) {
  cache_evict(policy, state, span_end);
  PredictionRow merged = row;
  std::size_t served = 0;
  for (const auto& [i, e] : policy.entries) {
    merged[i] = Prediction{e.token, e.confidence};
    ++served;
  }
  return {std::move(merged), served};
}

struct ComputeSavings {
  std::size_t forward_calls = 0;
  std::size_t evaluated_positions = 0;
  std::size_t cached_positions = 0;
  std::size_t evaluations_saved = 0;
  double tokens_per_forward_call = 0.0;
};

inline ComputeSavings accounting_report(const std::vector<StepRecord>& records,
                                        std::size_t length) {
  if (records.empty()) throw ValidationError("accounting needs at least one step record");
  ComputeSavings s;
  for (const auto& r : records) {
    if (r.is_forward_call()) ++s.forward_calls;
    s.evaluated_positions += r.evaluated_positions;
    s.cached_positions += r.cached_positions;
  }
  s.evaluations_saved = s.cached_positions;
  if (s.forward_calls == 0) throw ValidationError("run performed no forward calls");
  s.tokens_per_forward_call = static_cast<double>(length) / static_cast<double>(s.forward_calls);
  return s;
}

}  // namespace slowfast
