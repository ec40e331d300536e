#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wheelbot/errors.hpp"
#include "wheelbot/simloop.hpp"

namespace wheelbot {

inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols = {
      "t",   "q1",  "q2",  "q3",  "q4",     "q5",     "dq1",      "dq2", "dq3", "dq4", "dq5", "x",     "y",
      "q1A", "q2A", "q1G", "q2G", "q3G",    "q1_hat", "q2_hat",   "pivot_ax", "u1", "u2",  "i1",  "i2", "phase",
      "dist_flag"};
  return cols;
}

/// Shortest representation that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("bad number in CSV: '" + s + "'");
  return v;
}

inline void write_csv(std::ostream& out, const std::vector<LogRow>& rows) {
  const auto& cols = csv_columns();
  for (size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const LogRow& r : rows) {
    std::vector<double> v = {r.t};
    for (int i = 0; i < 5; ++i) v.push_back(r.q(i));
    for (int i = 0; i < 5; ++i) v.push_back(r.dq(i));
    for (double x : {r.x, r.y, r.q1A, r.q2A, r.q1G, r.q2G, r.q3G, r.q1_hat, r.q2_hat, r.pivot_ax, r.u1, r.u2, r.i1, r.i2})
      v.push_back(x);
    for (double x : v) out << format_double(x) << ',';
    out << to_string(r.phase) << ',' << r.dist_flag << '\n';
  }
}

inline void write_csv(const std::string& path, const std::vector<LogRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  write_csv(out, rows);
}

inline std::vector<LogRow> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty CSV");
  const auto& cols = csv_columns();
  {
    std::vector<std::string> header;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
    if (header != cols) throw ConfigError("CSV header does not match the expected columns");
  }
  std::vector<LogRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != cols.size()) throw ConfigError("CSV row has " + std::to_string(cells.size()) + " cells");
    LogRow r;
    size_t c = 0;
    r.t = parse_double(cells[c++]);
    for (int i = 0; i < 5; ++i) r.q(i) = parse_double(cells[c++]);
    for (int i = 0; i < 5; ++i) r.dq(i) = parse_double(cells[c++]);
    for (double* x : {&r.x, &r.y, &r.q1A, &r.q2A, &r.q1G, &r.q2G, &r.q3G, &r.q1_hat, &r.q2_hat, &r.pivot_ax, &r.u1,
                      &r.u2, &r.i1, &r.i2})
      *x = parse_double(cells[c++]);
    r.phase = phase_from_string(cells[c++]);
    r.dist_flag = static_cast<int>(parse_double(cells[c++]));
    rows.push_back(r);
  }
  return rows;
}

inline std::vector<LogRow> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  return read_csv(in);
}

inline constexpr double kSettledTiltDeg = 0.5;

struct PhaseEntry {
  ManeuverPhase phase;
  double t;
};

/// Everything here is a function of the CSV rows plus the scenario name,
/// maneuver and expected row count.
struct RunSummary {
  std::string name;
  Maneuver maneuver = Maneuver::Balance;
  bool success = false;
  bool complete = false;
  bool fallen = false;
  ManeuverPhase final_phase = ManeuverPhase::Idle;
  int rows = 0;
  int expected_rows = 0;
  double peak_abs_q1 = 0.0;
  double peak_abs_q2 = 0.0;
  double peak_abs_u = 0.0;
  /// Seconds from the last disturbance onset (or t = 0) until the true tilt
  /// stays below 0.5 deg; negative when it never settles.
  double recovery_time = -1.0;
  std::vector<PhaseEntry> timeline;
};

inline RunSummary summarize(const std::string& name, Maneuver maneuver, int expected_rows,
                            const std::vector<LogRow>& rows) {
  RunSummary s;
  s.name = name;
  s.maneuver = maneuver;
  s.rows = static_cast<int>(rows.size());
  s.expected_rows = expected_rows;
  s.complete = s.rows == expected_rows;
  size_t ref = 0;
  for (size_t i = 0; i < rows.size(); ++i) {
    const LogRow& r = rows[i];
    s.peak_abs_q1 = std::max(s.peak_abs_q1, std::abs(r.q(0)));
    s.peak_abs_q2 = std::max(s.peak_abs_q2, std::abs(r.q(1)));
    s.peak_abs_u = std::max({s.peak_abs_u, std::abs(r.u1), std::abs(r.u2)});
    if (r.phase == ManeuverPhase::Fallen) s.fallen = true;
    if (s.timeline.empty() || s.timeline.back().phase != r.phase) s.timeline.push_back({r.phase, r.t});
    if (r.dist_flag && (i == 0 || !rows[i - 1].dist_flag)) ref = i;
  }
  if (!rows.empty()) {
    s.final_phase = rows.back().phase;
    const double tol = deg2rad(kSettledTiltDeg);
    size_t settled = rows.size();
    for (size_t i = rows.size(); i-- > ref;) {
      if (std::abs(rows[i].q(0)) >= tol || std::abs(rows[i].q(1)) >= tol) break;
      settled = i;
    }
    if (settled < rows.size()) s.recovery_time = rows[settled].t - rows[ref].t;
  }
  const bool goal = maneuver == Maneuver::EstimatorAblation || s.final_phase == ManeuverPhase::BalanceFull;
  s.success = s.complete && !s.fallen && goal;
  return s;
}

inline RunSummary summarize(const SimLog& log) {
  return summarize(log.name, log.maneuver, log.expected_rows, log.rows);
}

inline nlohmann::json to_json(const RunSummary& s) {
  nlohmann::json timeline = nlohmann::json::array();
  for (const auto& e : s.timeline) timeline.push_back({{"phase", to_string(e.phase)}, {"t", e.t}});
  return {{"name", s.name},
          {"maneuver", to_string(s.maneuver)},
          {"success", s.success},
          {"complete", s.complete},
          {"fallen", s.fallen},
          {"final_phase", to_string(s.final_phase)},
          {"rows", s.rows},
          {"expected_rows", s.expected_rows},
          {"peak_abs_q1", s.peak_abs_q1},
          {"peak_abs_q2", s.peak_abs_q2},
          {"peak_abs_u", s.peak_abs_u},
          {"recovery_time", s.recovery_time < 0.0 ? nlohmann::json(nullptr) : nlohmann::json(s.recovery_time)},
          {"timeline", timeline}};
}

}  // namespace wheelbot
