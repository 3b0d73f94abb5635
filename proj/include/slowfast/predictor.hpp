// The mask-predictor contract and the synthetic oracle.
//
// A predictor is queried once per diffusion step (one "forward call") and
// returns a PredictionRow for the whole response. Callers may pass a skip
// mask naming positions whose values they will supply themselves (served
// from a cache); a predictor is free to leave those entries as placeholders.
#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <vector>

#include "slowfast/core.hpp"
#include "slowfast/hash.hpp"

namespace slowfast {

/// Positions the caller does not need evaluated. Empty means "evaluate all".
using PositionMask = std::vector<bool>;

template <typename P>
concept MaskPredictor = requires(P& p, const SequenceState& s, const PositionMask& skip) {
  { p.predict(s, skip) } -> std::same_as<PredictionRow>;
};

/// Knobs of the synthetic oracle. With base_noise == 0 every principle
/// (certainty, convergence, positional clustering) can be tested exactly.
struct OracleConfig {
  std::vector<TokenId> ground_truth;
  std::uint64_t seed = 0;
  std::uint32_t vocab_size = 32000;
  double base_noise = 0.0;        // jitter amplitude, uniform in [-a, a]
  double convergence_rate = 1.0;  // logistic gain on elapsed-step fraction
  int neighbor_radius = 0;
  double neighbor_boost = 0.0;    // logit bonus at full decoded-neighbor fraction
  double error_rate_floor = 0.0;  // P(wrong) never exceeds this
  double logit_bias = 0.0;        // constant logit offset; 0 keeps every masked confidence >= 1/2

  void validate() const {
    if (ground_truth.empty()) throw ValidationError("oracle ground truth is empty");
    if (vocab_size < 2) throw ValidationError("vocabulary size must be >= 2");
    for (auto t : ground_truth)
      if (is_mask(t) || to_uint(t) >= vocab_size)
        throw ValidationError("ground truth token outside vocabulary");
    if (!(base_noise >= 0.0)) throw ValidationError("base_noise must be >= 0");
    if (!(convergence_rate > 0.0)) throw ValidationError("convergence_rate must be > 0");
    if (neighbor_radius < 0) throw ValidationError("neighbor_radius must be >= 0");
    if (!(neighbor_boost >= 0.0)) throw ValidationError("neighbor_boost must be >= 0");
    if (!(error_rate_floor >= 0.0 && error_rate_floor <= 1.0))
      throw ValidationError("error_rate_floor must be in [0, 1]");
  }
};

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Confidences are emitted on a 1e-6 grid so they survive the 6-decimal
/// text formats unchanged.
inline double quantize_confidence(double c) { return std::round(c * 1e6) / 1e6; }

/// Fraction of the 2r neighbours of i that are decoded. Offsets left of
/// position 0 fall on the prompt (decoded when the prompt reaches that far);
/// offsets past the end count as undecoded.
inline double decoded_neighbor_fraction(const SequenceState& state, std::size_t i, int radius) {
  if (radius <= 0) return 0.0;
  const auto pos = static_cast<long long>(i);
  const auto len = static_cast<long long>(state.length());
  const auto prompt_len = static_cast<long long>(state.prompt().size());
  int decoded = 0;
  for (long long j = pos - radius; j <= pos + radius; ++j) {
    if (j == pos) continue;
    if (j < 0) {
      if (-j <= prompt_len) ++decoded;
    } else if (j < len && !state.is_masked(static_cast<std::size_t>(j))) {
      ++decoded;
    }
  }
  return static_cast<double>(decoded) / (2.0 * radius);
}

/// Noise-free confidence of masked position i.
inline double oracle_mean_confidence(const OracleConfig& cfg, const SequenceState& state,
                                     std::size_t i) {
  const double elapsed =
      static_cast<double>(state.total_steps() - state.step()) / state.total_steps();
  const double logit = cfg.logit_bias + cfg.convergence_rate * elapsed +
                       cfg.neighbor_boost * decoded_neighbor_fraction(state, i, cfg.neighbor_radius);
  return logistic(logit);
}

inline PredictionRow oracle_predict(const OracleConfig& cfg, const SequenceState& state,
                                    const PositionMask& skip = {}) {
  if (cfg.ground_truth.size() != state.length())
    throw ValidationError("oracle ground truth length does not match the sequence length");
  const auto k = static_cast<std::uint64_t>(state.step());
  PredictionRow row(state.length());
  for (std::size_t i = 0; i < state.length(); ++i) {
    if (!state.is_masked(i)) {
      row[i] = {state.response()[i], 1.0};
      continue;
    }
    if (!skip.empty() && skip[i]) {
      row[i] = {TokenId{0}, 0.0};
      continue;
    }
    const double jitter =
        cfg.base_noise * (2.0 * detail::keyed_uniform(cfg.seed, {detail::kSaltJitter, i, k}) - 1.0);
    const double conf =
        quantize_confidence(std::clamp(oracle_mean_confidence(cfg, state, i) + jitter, 0.0, 1.0));

    // The correctness draw is keyed by position only: a position's token
    // flips from wrong to right at most once as its confidence rises.
    const double u = detail::keyed_uniform(cfg.seed, {detail::kSaltCorrect, i});
    TokenId token = cfg.ground_truth[i];
    if (u >= std::max(conf, 1.0 - cfg.error_rate_floor)) {
      auto wrong = static_cast<std::uint32_t>(
          detail::keyed_hash(cfg.seed, {detail::kSaltWrong, i}) % (cfg.vocab_size - 1));
      if (wrong >= to_uint(token)) ++wrong;
      token = TokenId{wrong};
    }
    row[i] = {token, conf};
  }
  return row;
}

/// Oracle bound to one configuration.
class OraclePredictor {
 public:
  explicit OraclePredictor(OracleConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  PredictionRow predict(const SequenceState& state, const PositionMask& skip = {}) const {
    return oracle_predict(cfg_, state, skip);
  }

  const OracleConfig& config() const { return cfg_; }

 private:
  OracleConfig cfg_;
};

/// Deterministic ground truth / prompt for a seed.
inline std::vector<TokenId> seeded_tokens(std::uint64_t seed, std::uint64_t salt, std::size_t n,
                                          std::uint32_t vocab_size) {
  std::vector<TokenId> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = TokenId{static_cast<std::uint32_t>(detail::keyed_hash(seed, {salt, i}) % vocab_size)};
  return out;
}

}  // namespace slowfast
