// Decodes one 64-token sequence from the synthetic oracle with the
// low-confidence baseline and the slow/fast scheduler, then prints the
// phase timeline of the latter.

#include <iostream>

#include "slowfast/slowfast.hpp"

int main() {
  namespace sf = slowfast;

  sf::ExperimentConfig cfg;
  cfg.length = 64;
  cfg.total_steps = 64;
  const std::uint64_t seed = 7;

  sf::OraclePredictor oracle(sf::make_oracle(cfg, seed));
  const auto start = sf::init_masked_sequence(
      sf::seeded_tokens(seed, sf::detail::kSaltPrompt, cfg.prompt_length, cfg.vocab_size),
      cfg.length, cfg.total_steps);

  sf::BaselineConfig low_conf;
  const auto baseline = sf::run_baseline(oracle, start, low_conf);

  sf::CachePolicy cache{.enabled = true, .entries = {}};
  const auto fast = sf::run_slowfast(oracle, start, sf::SlowFastConfig{}, &cache);

  std::cout << "low_confidence forward calls: " << baseline.forward_calls() << '\n'
            << "slowfast forward calls:       " << fast.forward_calls() << '\n';

  for (const auto& rec : fast.records) {
    std::cout << "k=" << rec.step << ' ' << sf::phase_name(rec.phase)
              << " unmasked=" << rec.unmasked.size();
    if (rec.e_cand) std::cout << " e_cand=" << *rec.e_cand;
    if (rec.span) std::cout << " span=[" << rec.span->start << ',' << rec.span->end << ']';
    if (rec.cached_positions) std::cout << " cached=" << rec.cached_positions;
    std::cout << '\n';
  }
  return 0;
}
