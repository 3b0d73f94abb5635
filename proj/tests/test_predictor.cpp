#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "slowfast/slowfast.hpp"
#include "test_support.hpp"

namespace sf = slowfast;
using sf::kMaskToken;
using sf::TokenId;

namespace {

sf::OracleConfig base_oracle(std::size_t len, std::uint64_t seed = 3) {
  sf::OracleConfig c;
  c.ground_truth = sf::seeded_tokens(seed, sf::detail::kSaltTruth, len, 500);
  c.vocab_size = 500;
  c.seed = seed;
  return c;
}

long double scalar_logistic(long double x) { return 1.0L / (1.0L + std::exp(-x)); }

}  // namespace

TEST(Oracle, SaturationLimitGivesCertainGroundTruth) {
  auto cfg = base_oracle(12);
  cfg.convergence_rate = 1e9;
  cfg.error_rate_floor = 0.7;
  const sf::SequenceState s({}, std::vector<TokenId>(12, kMaskToken), 1, 8);
  const auto row = sf::oracle_predict(cfg, s);
  for (std::size_t i = 0; i < row.size(); ++i) {
    EXPECT_EQ(row[i].confidence, 1.0);
    EXPECT_EQ(row[i].token, cfg.ground_truth[i]);
  }
}

TEST(Oracle, ZeroErrorConfigurationAlwaysEmitsGroundTruth) {
  auto cfg = base_oracle(64);
  cfg.logit_bias = -5.0;  // low confidences everywhere
  cfg.error_rate_floor = 0.0;
  for (int k = 1; k <= 16; ++k) {
    const sf::SequenceState s({}, std::vector<TokenId>(64, kMaskToken), k, 16);
    const auto row = sf::oracle_predict(cfg, s);
    for (std::size_t i = 0; i < row.size(); ++i) ASSERT_EQ(row[i].token, cfg.ground_truth[i]);
  }
}

TEST(Oracle, DeterministicForFixedInputs) {
  auto cfg = base_oracle(32);
  cfg.base_noise = 0.2;
  cfg.neighbor_radius = 2;
  cfg.neighbor_boost = 1.0;
  cfg.error_rate_floor = 0.5;
  std::vector<TokenId> resp(32, kMaskToken);
  resp[4] = TokenId{9};
  const sf::SequenceState s({TokenId{1}}, resp, 7, 20);
  EXPECT_EQ(sf::oracle_predict(cfg, s), sf::oracle_predict(cfg, s));
}

TEST(Oracle, DecodedPositionsFollowTheRowConvention) {
  auto cfg = base_oracle(6);
  std::vector<TokenId> resp(6, kMaskToken);
  resp[2] = TokenId{42};
  const sf::SequenceState s({}, resp, 3, 6);
  const auto row = sf::oracle_predict(cfg, s);
  EXPECT_EQ(row[2], (sf::Prediction{TokenId{42}, 1.0}));
}

TEST(Oracle, OneDecodedNeighbourShiftsTheLogitByAQuarter) {
  auto cfg = base_oracle(8);
  cfg.convergence_rate = 1.0;
  cfg.neighbor_boost = 0.5;
  cfg.neighbor_radius = 1;
  std::vector<TokenId> resp(8, kMaskToken);
  resp[1] = TokenId{5};
  const sf::SequenceState s({}, resp, 6, 10);
  const auto row = sf::oracle_predict(cfg, s);

  // Independent scalar evaluation: elapsed fraction 4/10, one of two
  // neighbours decoded for position 2, none for position 5.
  const long double base = 0.4L;
  const long double expected = scalar_logistic(base + 0.25L) - scalar_logistic(base);
  EXPECT_NEAR(row[2].confidence - row[5].confidence, static_cast<double>(expected), 1.5e-6);
}

TEST(Oracle, LengthMismatchIsRejected) {
  auto cfg = base_oracle(8);
  const auto s = sf::init_masked_sequence({}, 9, 4);
  EXPECT_THROW(sf::oracle_predict(cfg, s), sf::ValidationError);
}

TEST(Oracle, SkippedPositionsAreNotEvaluated) {
  auto cfg = base_oracle(6);
  const auto s = sf::init_masked_sequence({}, 6, 4);
  sf::PositionMask skip(6, false);
  skip[3] = true;
  const auto row = sf::oracle_predict(cfg, s, skip);
  EXPECT_EQ(row[3].confidence, 0.0);
  EXPECT_GT(row[2].confidence, 0.0);
}

TEST(Oracle, ConfigValidation) {
  auto cfg = base_oracle(4);
  cfg.ground_truth[0] = kMaskToken;
  EXPECT_THROW(sf::OraclePredictor{cfg}, sf::ValidationError);
  cfg = base_oracle(4);
  cfg.convergence_rate = 0.0;
  EXPECT_THROW(sf::OraclePredictor{cfg}, sf::ValidationError);
  cfg = base_oracle(4);
  cfg.error_rate_floor = 1.5;
  EXPECT_THROW(sf::OraclePredictor{cfg}, sf::ValidationError);
}

// Certainty: confident tokens are right more often than unconfident ones.
TEST(OraclePrinciples, CertaintyOrdering) {
  std::size_t hi_n = 0, hi_ok = 0, lo_n = 0, lo_ok = 0;
  std::mt19937_64 rng(99);
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    auto cfg = base_oracle(64, seed);
    cfg.logit_bias = -1.5;
    cfg.convergence_rate = 5.0;
    cfg.base_noise = 0.1;
    cfg.neighbor_radius = 2;
    cfg.neighbor_boost = 2.0;
    cfg.error_rate_floor = 0.6;
    for (int k = 1; k <= 32; k += 3) {
      std::vector<TokenId> resp(64, kMaskToken);
      for (std::size_t i = 0; i < 64; ++i)
        if (rng() % 3 == 0) resp[i] = cfg.ground_truth[i];
      const sf::SequenceState s({TokenId{1}}, resp, k, 32);
      const auto row = sf::oracle_predict(cfg, s);
      for (std::size_t i = 0; i < 64; ++i) {
        if (!s.is_masked(i)) continue;
        const bool ok = row[i].token == cfg.ground_truth[i];
        if (row[i].confidence >= 0.9) { ++hi_n; hi_ok += ok; }
        if (row[i].confidence < 0.5) { ++lo_n; lo_ok += ok; }
      }
    }
  }
  ASSERT_GE(hi_n + lo_n, 1000u);
  ASSERT_GT(hi_n, 100u);
  ASSERT_GT(lo_n, 100u);
  EXPECT_GT(static_cast<double>(hi_ok) / hi_n, static_cast<double>(lo_ok) / lo_n);
}

// Convergence: with no jitter and frozen context, confidence never drops as k falls.
TEST(OraclePrinciples, ConvergenceMonotoneInStep) {
  std::mt19937_64 rng(5);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto cfg = base_oracle(32, seed);
    cfg.logit_bias = -3.0;
    cfg.convergence_rate = 6.0;
    cfg.neighbor_radius = 3;
    cfg.neighbor_boost = 2.0;
    std::vector<TokenId> resp(32, kMaskToken);
    for (std::size_t i = 0; i < 32; ++i)
      if (rng() % 4 == 0) resp[i] = TokenId{1};
    std::vector<double> prev(32, -1.0);
    for (int k = 40; k >= 1; --k) {
      const sf::SequenceState s({}, resp, k, 41);
      const auto row = sf::oracle_predict(cfg, s);
      for (std::size_t i = 0; i < 32; ++i) {
        ASSERT_GE(row[i].confidence, prev[i]) << "position " << i << " k " << k;
        prev[i] = row[i].confidence;
      }
    }
  }
}

// Positional: every extra decoded neighbour strictly raises confidence.
TEST(OraclePrinciples, PositionalStrictlyIncreasingInDecodedNeighbours) {
  auto cfg = base_oracle(21);
  cfg.logit_bias = -2.0;
  cfg.neighbor_radius = 3;
  cfg.neighbor_boost = 1.5;
  const std::size_t target = 10;
  const std::size_t order[] = {7, 8, 9, 11, 12, 13};
  std::vector<TokenId> resp(21, kMaskToken);
  double prev = -1.0;
  for (std::size_t d = 0; d <= 6; ++d) {
    if (d > 0) resp[order[d - 1]] = TokenId{2};
    const sf::SequenceState s({}, resp, 5, 10);
    const double c = sf::oracle_predict(cfg, s)[target].confidence;
    EXPECT_GT(c, prev) << d << " decoded neighbours";
    prev = c;
  }
}

TEST(NeighbourFraction, PromptCountsAsDecodedContext) {
  const auto s = sf::init_masked_sequence({TokenId{1}, TokenId{2}}, 5, 4);
  EXPECT_DOUBLE_EQ(sf::decoded_neighbor_fraction(s, 0, 2), 0.5);
  EXPECT_DOUBLE_EQ(sf::decoded_neighbor_fraction(s, 1, 2), 0.25);
  EXPECT_DOUBLE_EQ(sf::decoded_neighbor_fraction(s, 4, 2), 0.0);
  EXPECT_DOUBLE_EQ(sf::decoded_neighbor_fraction(s, 2, 0), 0.0);
}

// ---------------------------------------------------------------------------
// Replay

namespace {

sf::TraceFile tiny_trace() {
  sf::TraceFile t;
  t.header = {3, 5, 10, 1, "low_confidence"};
  sf::StepRecord rec;
  rec.step = 5;
  rec.evaluated_positions = 3;
  t.records.push_back(rec);
  t.rows.push_back({{TokenId{1}, 0.2}, {TokenId{2}, 0.7}, {TokenId{3}, 0.4}});
  return t;
}

}  // namespace

TEST(Replay, ServesRecordedRowVerbatim) {
  sf::ReplayPredictor replay(tiny_trace());
  const auto s = sf::init_masked_sequence({}, 3, 5);
  EXPECT_EQ(replay.predict(s), tiny_trace().rows[0]);
  EXPECT_EQ(replay.consumed(), 1u);
}

TEST(Replay, StepMismatchIsAnError) {
  sf::ReplayPredictor replay(tiny_trace());
  const sf::SequenceState s({}, std::vector<TokenId>(3, kMaskToken), 4, 5);
  EXPECT_THROW(replay.predict(s), sf::ValidationError);
}

TEST(Replay, ExhaustedTraceIsAnError) {
  sf::ReplayPredictor replay(tiny_trace());
  const auto s = sf::init_masked_sequence({}, 3, 5);
  replay.predict(s);
  EXPECT_THROW(replay.predict(s), sf::ValidationError);
}

TEST(Replay, ReproducesARecordedRun) {
  auto cfg = base_oracle(48);
  cfg.logit_bias = -3.0;
  cfg.convergence_rate = 8.0;
  cfg.base_noise = 0.05;
  cfg.neighbor_radius = 6;
  cfg.neighbor_boost = 6.0;
  sf::OraclePredictor oracle(cfg);
  const auto start = sf::init_masked_sequence({TokenId{1}, TokenId{2}}, 48, 48);
  sf::CachePolicy cache{.enabled = true, .entries = {}};
  const auto run = sf::run_slowfast(oracle, start, sf::SlowFastConfig{}, &cache);

  std::stringstream buf;
  sf::write_trace(buf, {48, 48, 500, 3, "slowfast_cache"}, run);
  sf::ReplayPredictor replay(sf::read_trace(buf));
  sf::CachePolicy cache2{.enabled = true, .entries = {}};
  const auto again = sf::run_slowfast(replay, start, sf::SlowFastConfig{}, &cache2);
  EXPECT_EQ(again.records, run.records);
  EXPECT_EQ(again.final_state, run.final_state);
}

// ---------------------------------------------------------------------------
// Trace format

TEST(TraceFormat, HeaderAndRecordLayout) {
  sf::RunResult run{sf::init_masked_sequence({}, 2, 2), {}, {}};
  sf::StepRecord rec;
  rec.step = 2;
  rec.phase = sf::Phase::kFast;
  rec.unmasked = {{1, TokenId{7}, 0.9}};
  rec.evaluated_positions = 1;
  rec.cached_positions = 1;
  rec.span = sf::Span{0, 1};
  run.records.push_back(rec);
  run.rows.push_back({{TokenId{3}, 0.05}, {TokenId{7}, 0.9}});
  std::stringstream out;
  sf::write_trace(out, {2, 2, 10, 4, "slowfast"}, run);
  EXPECT_EQ(out.str(),
            "{\"L\":2,\"N\":2,\"V\":10,\"seed\":4,\"strategy\":\"slowfast\"}\n"
            "{\"k\":2,\"conf\":[0.050000,0.900000],\"tok\":[3,7],\"unmasked\":[[1,7,0.900000]],"
            "\"phase\":\"fast\",\"e_cand\":null,\"span\":[0,1],\"evaluated\":1,\"cached\":1}\n");
}

// Any oracle-driven run survives a write/read cycle exactly.
TEST(TraceFormat, RoundTripProperty) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t len = 4 + rng() % 40;
    const int steps = 2 + static_cast<int>(rng() % 40);
    auto cfg = base_oracle(len, rng());
    cfg.logit_bias = -static_cast<double>(rng() % 5);
    cfg.convergence_rate = 1.0 + rng() % 10;
    cfg.base_noise = (rng() % 10) / 50.0;
    cfg.neighbor_radius = static_cast<int>(rng() % 6);
    cfg.neighbor_boost = static_cast<double>(rng() % 8);
    sf::OraclePredictor oracle(cfg);
    const auto start = sf::init_masked_sequence({TokenId{9}}, len, steps);
    sf::RunResult run = trial % 2 ? sf::run_slowfast(oracle, start, sf::SlowFastConfig{})
                                  : sf::run_baseline(oracle, start, sf::BaselineConfig{});
    std::stringstream buf;
    const sf::TraceHeader header{len, steps, 500, cfg.seed, "x"};
    sf::write_trace(buf, header, run);
    const auto back = sf::read_trace(buf);
    ASSERT_EQ(back.header, header);
    ASSERT_EQ(back.records, run.records);
    ASSERT_EQ(back.rows, run.rows);
  }
}

TEST(TraceFormat, MalformedInputIsRejected) {
  std::stringstream empty;
  EXPECT_THROW(sf::read_trace(empty), sf::ValidationError);
  std::stringstream short_row(
      "{\"L\":3,\"N\":3,\"V\":10,\"seed\":0,\"strategy\":\"s\"}\n"
      "{\"k\":3,\"conf\":[0.1],\"tok\":[1],\"unmasked\":[],\"phase\":\"baseline\","
      "\"e_cand\":null,\"span\":null,\"evaluated\":3,\"cached\":0}\n");
  EXPECT_THROW(sf::read_trace(short_row), sf::ValidationError);
  std::stringstream garbage("{\"L\":3,\n");
  EXPECT_THROW(sf::read_trace(garbage), sf::ValidationError);
  EXPECT_THROW(sf::read_trace_file("/nonexistent/trace.jsonl"), sf::IoError);
}
