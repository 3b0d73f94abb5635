// Foundational types shared by every decoding strategy: token ids, the
// evolving masked sequence, per-position predictions and step records.
//
// Positions are 0-indexed everywhere. The diffusion step counter k runs
// from N (fully masked) down to 0.
#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace slowfast {

/// Thrown for contract violations: bad configs, illegal transitions,
/// trace/strategy divergence.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when reading or writing an artifact fails.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TokenId : std::uint32_t {};

inline constexpr TokenId kMaskToken{0xFFFFFFFFu};

constexpr std::uint32_t to_uint(TokenId t) { return static_cast<std::uint32_t>(t); }
constexpr TokenId make_token(std::uint32_t v) { return TokenId{v}; }
constexpr bool is_mask(TokenId t) { return t == kMaskToken; }

struct Prediction {
  TokenId token{0};
  double confidence = 0.0;

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

/// One predictor output: a prediction at every response position,
/// including decoded ones (which carry confidence 1 and the committed token).
using PredictionRow = std::vector<Prediction>;

/// A committed (position, token) pair.
struct Choice {
  std::size_t position = 0;
  TokenId token{0};

  friend bool operator==(const Choice&, const Choice&) = default;
};

using Choices = std::vector<Choice>;

/// Response tokens plus the diffusion step counter. Transitions produce
/// new states; a state is never mutated in place by strategies.
class SequenceState {
 public:
  SequenceState(std::vector<TokenId> prompt, std::vector<TokenId> response, int step,
                int total_steps)
      : prompt_(std::move(prompt)),
        response_(std::move(response)),
        step_(step),
        total_steps_(total_steps) {
    if (response_.empty()) throw ValidationError("response length must be >= 1");
    if (total_steps_ < 1) throw ValidationError("total steps must be >= 1");
    if (step_ < 0 || step_ > total_steps_) throw ValidationError("step outside [0, N]");
    if (std::ranges::any_of(prompt_, is_mask))
      throw ValidationError("prompt must not contain the mask token");
    if (step_ == total_steps_ && !std::ranges::all_of(response_, is_mask))
      throw ValidationError("state at step N must be fully masked");
  }

  const std::vector<TokenId>& prompt() const { return prompt_; }
  const std::vector<TokenId>& response() const { return response_; }
  std::size_t length() const { return response_.size(); }
  int step() const { return step_; }
  int total_steps() const { return total_steps_; }

  bool is_masked(std::size_t i) const { return is_mask(response_[i]); }
  std::size_t masked_count() const {
    return static_cast<std::size_t>(std::ranges::count_if(response_, is_mask));
  }
  std::size_t decoded_count() const { return length() - masked_count(); }
  bool complete() const { return masked_count() == 0; }

  friend bool operator==(const SequenceState&, const SequenceState&) = default;

 private:
  friend SequenceState apply_unmask(const SequenceState&, const Choices&);
  friend SequenceState commit_terminal_flush(const SequenceState&, const Choices&);

  std::vector<TokenId> prompt_;
  std::vector<TokenId> response_;
  int step_;
  int total_steps_;
};

/// Fully masked response of length `length` at step `steps`.
inline SequenceState init_masked_sequence(std::vector<TokenId> prompt, std::size_t length,
                                          int steps) {
  if (length == 0) throw ValidationError("response length must be >= 1");
  if (steps < 1) throw ValidationError("step count must be >= 1");
  return SequenceState(std::move(prompt), std::vector<TokenId>(length, kMaskToken), steps,
                       steps);
}

/// Number of decoded positions the schedule asks for after step k:
/// floor(L * (1 - (k-1)/N)), computed in exact integer arithmetic.
inline std::size_t target_unmasked_count(std::size_t length, int total_steps, int k) {
  if (total_steps < 1) throw ValidationError("step count must be >= 1");
  if (k < 1 || k > total_steps) throw ValidationError("k outside [1, N]");
  const auto n = static_cast<std::uint64_t>(total_steps);
  const auto remaining = static_cast<std::uint64_t>(total_steps - k + 1);
  return static_cast<std::size_t>(static_cast<std::uint64_t>(length) * remaining / n);
}

namespace detail {

inline void check_choices(const SequenceState& state, const Choices& choices) {
  std::vector<bool> seen(state.length(), false);
  for (const auto& c : choices) {
    if (c.position >= state.length()) throw ValidationError("choice position out of range");
    if (seen[c.position]) throw ValidationError("duplicate choice position");
    seen[c.position] = true;
    if (!state.is_masked(c.position))
      throw ValidationError("position " + std::to_string(c.position) + " is already decoded");
    if (is_mask(c.token)) throw ValidationError("cannot write the mask token");
  }
}

}  // namespace detail

/// Commits `choices` and advances the step counter by one. An empty choice
/// list still consumes the step.
inline SequenceState apply_unmask(const SequenceState& state, const Choices& choices) {
  if (state.step() < 1) throw ValidationError("no diffusion steps left");
  detail::check_choices(state, choices);
  SequenceState next = state;
  for (const auto& c : choices) next.response_[c.position] = c.token;
  next.step_ = state.step() - 1;
  return next;
}

/// Commits the remaining masks once the step budget is spent (k == 0).
inline SequenceState commit_terminal_flush(const SequenceState& state, const Choices& choices) {
  if (state.step() != 0) throw ValidationError("terminal flush only allowed at k == 0");
  detail::check_choices(state, choices);
  SequenceState next = state;
  for (const auto& c : choices) next.response_[c.position] = c.token;
  return next;
}

enum class Phase { kSlow, kFast, kBaseline, kFallback, kFlush };

inline std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::kSlow: return "slow";
    case Phase::kFast: return "fast";
    case Phase::kBaseline: return "baseline";
    case Phase::kFallback: return "fallback";
    case Phase::kFlush: return "flush";
  }
  return "baseline";
}

inline Phase parse_phase(std::string_view s) {
  if (s == "slow") return Phase::kSlow;
  if (s == "fast") return Phase::kFast;
  if (s == "baseline") return Phase::kBaseline;
  if (s == "fallback") return Phase::kFallback;
  if (s == "flush") return Phase::kFlush;
  throw ValidationError("unknown phase '" + std::string(s) + "'");
}

struct Unmasked {
  std::size_t position = 0;
  TokenId token{0};
  double confidence = 0.0;

  friend bool operator==(const Unmasked&, const Unmasked&) = default;
};

/// Closed interval [start, end] of positions.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;

  bool contains(std::size_t i) const { return i >= start && i <= end; }
  friend bool operator==(const Span&, const Span&) = default;
};

/// What happened during one diffusion step. A flush record consumes no
/// forward call; every other phase consumes exactly one.
struct StepRecord {
  int step = 0;
  Phase phase = Phase::kBaseline;
  std::vector<Unmasked> unmasked;
  std::size_t evaluated_positions = 0;
  std::size_t cached_positions = 0;
  std::optional<std::size_t> e_cand;
  std::optional<Span> span;

  bool is_forward_call() const { return phase != Phase::kFlush; }
  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

/// Final state plus one record and one (effective) prediction row per step.
struct RunResult {
  SequenceState final_state;
  std::vector<StepRecord> records;
  std::vector<PredictionRow> rows;

  std::size_t forward_calls() const {
    return static_cast<std::size_t>(
        std::ranges::count_if(records, [](const StepRecord& r) { return r.is_forward_call(); }));
  }
};

/// Rewrites decoded positions of a fresh row to (committed token, 1).
inline void apply_decoded_convention(const SequenceState& state, PredictionRow& row) {
  for (std::size_t i = 0; i < state.length(); ++i) {
    if (!state.is_masked(i)) row[i] = Prediction{state.response()[i], 1.0};
  }
}

inline void check_row(const SequenceState& state, const PredictionRow& row) {
  if (row.size() != state.length()) throw ValidationError("prediction row length mismatch");
}

inline std::vector<Unmasked> describe(const Choices& choices, const PredictionRow& row) {
  std::vector<Unmasked> out;
  out.reserve(choices.size());
  for (const auto& c : choices) out.push_back({c.position, c.token, row[c.position].confidence});
  return out;
}

/// Masked positions in [first, last] ordered by confidence (descending),
/// lower position first on ties.
inline std::vector<std::size_t> ranked_masked(const SequenceState& state, const PredictionRow& row,
                                              std::size_t first, std::size_t last) {
  std::vector<std::size_t> idx;
  for (std::size_t i = first; i <= last && i < state.length(); ++i)
    if (state.is_masked(i)) idx.push_back(i);
  std::ranges::stable_sort(idx, [&](std::size_t a, std::size_t b) {
    return row[a].confidence > row[b].confidence;
  });
  return idx;
}

/// Top-`count` masked positions within [first, last], as choices.
inline Choices top_masked(const SequenceState& state, const PredictionRow& row, std::size_t first,
                          std::size_t last, std::size_t count) {
  auto idx = ranked_masked(state, row, first, last);
  if (idx.size() > count) idx.resize(count);
  std::ranges::sort(idx);
  Choices out;
  for (auto i : idx) out.push_back({i, row[i].token});
  return out;
}

/// Every still-masked position, with the row's token. Used at k == 0.
inline Choices flush_choices(const SequenceState& state, const PredictionRow& row) {
  Choices out;
  for (std::size_t i = 0; i < state.length(); ++i)
    if (state.is_masked(i)) out.push_back({i, row[i].token});
  return out;
}

namespace detail {

/// Appends a flush record committing the last row's tokens when the step
/// budget ran out with masks remaining.
inline void finish_with_flush(RunResult& run) {
  if (run.final_state.complete()) return;
  if (run.rows.empty()) throw ValidationError("step budget exhausted before any prediction");
  const PredictionRow last = run.rows.back();
  const Choices choices = flush_choices(run.final_state, last);
  StepRecord rec;
  rec.step = 0;
  rec.phase = Phase::kFlush;
  rec.unmasked = describe(choices, last);
  run.final_state = commit_terminal_flush(run.final_state, choices);
  run.records.push_back(std::move(rec));
  run.rows.push_back(last);
}

}  // namespace detail

}  // namespace slowfast
