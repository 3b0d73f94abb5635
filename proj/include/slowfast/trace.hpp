// JSON-lines decoding traces and the replay predictor that serves them.
//
// Line 1:  {"L":..,"N":..,"V":..,"seed":..,"strategy":".."}
// Line 2+: {"k":..,"conf":[..],"tok":[..],"unmasked":[[pos,tok,conf],..],
//           "phase":"..","e_cand":int|null,"span":[s,e]|null,
//           "evaluated":..,"cached":..}
// Positions are 0-indexed; reals are written with 6 decimals; LF endings.
#pragma once

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "slowfast/core.hpp"
#include "slowfast/predictor.hpp"

namespace slowfast {

struct TraceHeader {
  std::size_t length = 0;
  int total_steps = 0;
  std::uint32_t vocab_size = 0;
  std::uint64_t seed = 0;
  std::string strategy;

  friend bool operator==(const TraceHeader&, const TraceHeader&) = default;
};

struct TraceFile {
  TraceHeader header;
  std::vector<StepRecord> records;
  std::vector<PredictionRow> rows;
};

inline std::string format_fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

namespace detail {

inline std::string json_string(const std::string& s) { return nlohmann::json(s).dump(); }

}  // namespace detail

inline void write_trace_header(std::ostream& out, const TraceHeader& h) {
  out << "{\"L\":" << h.length << ",\"N\":" << h.total_steps << ",\"V\":" << h.vocab_size
      << ",\"seed\":" << h.seed << ",\"strategy\":" << detail::json_string(h.strategy) << "}\n";
}

inline void write_trace_record(std::ostream& out, const StepRecord& rec, const PredictionRow& row) {
  out << "{\"k\":" << rec.step << ",\"conf\":[";
  for (std::size_t i = 0; i < row.size(); ++i)
    out << (i ? "," : "") << format_fixed6(row[i].confidence);
  out << "],\"tok\":[";
  for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << to_uint(row[i].token);
  out << "],\"unmasked\":[";
  for (std::size_t i = 0; i < rec.unmasked.size(); ++i) {
    const auto& u = rec.unmasked[i];
    out << (i ? "," : "") << "[" << u.position << "," << to_uint(u.token) << ","
        << format_fixed6(u.confidence) << "]";
  }
  out << "],\"phase\":\"" << phase_name(rec.phase) << "\",\"e_cand\":";
  if (rec.e_cand) out << *rec.e_cand; else out << "null";
  out << ",\"span\":";
  if (rec.span) out << "[" << rec.span->start << "," << rec.span->end << "]"; else out << "null";
  out << ",\"evaluated\":" << rec.evaluated_positions << ",\"cached\":" << rec.cached_positions
      << "}\n";
}

inline void write_trace(std::ostream& out, const TraceHeader& header, const RunResult& run) {
  write_trace_header(out, header);
  for (std::size_t i = 0; i < run.records.size(); ++i)
    write_trace_record(out, run.records[i], run.rows[i]);
}

inline void write_trace_file(const std::string& path, const TraceHeader& header,
                             const RunResult& run) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open trace for writing: " + path);
  write_trace(out, header, run);
  if (!out) throw IoError("failed writing trace: " + path);
}

inline TraceFile read_trace(std::istream& in) {
  TraceFile trace;
  std::string line;
  std::size_t line_no = 0;
  try {
    if (!std::getline(in, line)) throw ValidationError("trace is empty");
    ++line_no;
    const auto h = nlohmann::json::parse(line);
    trace.header = {h.at("L").get<std::size_t>(), h.at("N").get<int>(),
                    h.at("V").get<std::uint32_t>(), h.at("seed").get<std::uint64_t>(),
                    h.at("strategy").get<std::string>()};
    if (trace.header.length == 0 || trace.header.total_steps < 1)
      throw ValidationError("trace header has invalid L or N");

    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      StepRecord rec;
      rec.step = j.at("k").get<int>();
      rec.phase = parse_phase(j.at("phase").get<std::string>());
      const auto& conf = j.at("conf");
      const auto& tok = j.at("tok");
      if (conf.size() != trace.header.length || tok.size() != trace.header.length)
        throw ValidationError("record does not cover positions 0..L-1");
      PredictionRow row(trace.header.length);
      for (std::size_t i = 0; i < row.size(); ++i)
        row[i] = {TokenId{tok[i].get<std::uint32_t>()}, conf[i].get<double>()};
      for (const auto& u : j.at("unmasked"))
        rec.unmasked.push_back(
            {u.at(0).get<std::size_t>(), TokenId{u.at(1).get<std::uint32_t>()}, u.at(2).get<double>()});
      if (!j.at("e_cand").is_null()) rec.e_cand = j.at("e_cand").get<std::size_t>();
      if (!j.at("span").is_null())
        rec.span = Span{j.at("span").at(0).get<std::size_t>(), j.at("span").at(1).get<std::size_t>()};
      rec.evaluated_positions = j.at("evaluated").get<std::size_t>();
      rec.cached_positions = j.at("cached").get<std::size_t>();
      trace.records.push_back(std::move(rec));
      trace.rows.push_back(std::move(row));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed trace at line " + std::to_string(line_no) + ": " + e.what());
  }
  return trace;
}

inline TraceFile read_trace_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open trace: " + path);
  return read_trace(in);
}

/// Serves recorded rows in order. The next record's k must equal the
/// requesting state's step; anything else means the strategy diverged.
class ReplayPredictor {
 public:
  explicit ReplayPredictor(TraceFile trace) : trace_(std::move(trace)) {}

  PredictionRow predict(const SequenceState& state, const PositionMask& /*skip*/ = {}) {
    while (cursor_ < trace_.records.size() && !trace_.records[cursor_].is_forward_call())
      ++cursor_;
    if (cursor_ >= trace_.records.size()) throw ValidationError("replay trace exhausted");
    const auto& rec = trace_.records[cursor_];
    if (rec.step != state.step())
      throw ValidationError("replay step mismatch: trace has k=" + std::to_string(rec.step) +
                            ", strategy is at k=" + std::to_string(state.step()));
    if (trace_.rows[cursor_].size() != state.length())
      throw ValidationError("replay row length does not match the sequence length");
    return trace_.rows[cursor_++];
  }

  std::size_t consumed() const { return cursor_; }
  const TraceFile& trace() const { return trace_; }

 private:
  TraceFile trace_;
  std::size_t cursor_ = 0;
};

}  // namespace slowfast
