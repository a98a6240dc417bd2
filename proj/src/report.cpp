#include "fluidnet/report.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <ostream>

namespace fluidnet {

namespace {

using nlohmann::ordered_json;

/// Rounded to 9 significant digits, so the shortest round-trip form the JSON
/// writer emits has at most 9 digits too.
double rounded(double x) {
  if (!std::isfinite(x) || x == 0) return x;
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 9);
  double y = x;
  std::from_chars(buf, res.ptr, y);
  return y;
}

ordered_json num(double x) {
  if (!std::isfinite(x)) return ordered_json(format_number(x));
  return ordered_json(rounded(x));
}

std::string dump(const ordered_json& j) { return j.dump() + "\n"; }

}  // namespace

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, rounded(x));
  return std::string(buf, res.ptr);
}

void write_trajectory_csv(std::ostream& out, const std::vector<PathSample>& path) {
  out << "t,mode,q1,q2,q31,q32,f13,f23,f34,f35\n";
  for (const PathSample& s : path) {
    out << format_number(s.t) << ',' << to_string(s.mode);
    for (int i = 0; i < 4; ++i) out << ',' << format_number(s.q(i));
    out << ',' << format_number(s.f.f13) << ',' << format_number(s.f.f23) << ',' << format_number(s.f.f34) << ','
        << format_number(s.f.f35) << '\n';
  }
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepCell<double>>& cells) {
  out << "F3,phi1,in_phi0,in_phi1,in_phi2,verdict\n";
  for (const SweepCell<double>& c : cells) {
    out << format_number(c.F3) << ',' << format_number(c.phi1) << ',' << int(c.result.in_phi0) << ','
        << int(c.result.in_phi1) << ',' << int(c.result.in_phi2) << ',' << to_string(c.result.verdict) << '\n';
  }
}

std::string stats_json(const TrajectoryStats& stats) {
  const OccupancyFractions occ = occupancy_fractions(stats);
  ordered_json j;
  j["elapsed"] = num(stats.elapsed);
  j["time_avg_q1"] = num(stats.time_avg_q1);
  j["time_avg_q2"] = num(stats.time_avg_q2);
  j["time_avg_q3"] = num(stats.time_avg_q3);
  j["occupancy"] = {{"p00", num(occ.p00)}, {"p01", num(occ.p01)}, {"p10", num(occ.p10)}, {"p11", num(occ.p11)}};
  j["mean_throughput"] = num(stats.mean_throughput);
  j["mean_inflow"] = {num(stats.mean_inflow(0)), num(stats.mean_inflow(1))};
  j["mean_merge_flow"] = {num(stats.mean_merge_flow(0)), num(stats.mean_merge_flow(1))};
  j["cumulative_inflow"] = num(stats.cumulative_inflow);
  j["cumulative_outflow"] = num(stats.cumulative_outflow);
  j["event_count"] = stats.event_count;
  j["jump_count"] = stats.jump_count;
  j["boundary_count"] = stats.boundary_count;
  ordered_json q = ordered_json::array();
  for (int i = 0; i < 4; ++i) q.push_back(num(stats.final_queues(i)));
  j["final_state"] = {{"mode", std::string(to_string(stats.final_mode))}, {"q", q}};
  return dump(j);
}

std::string classification_json(const Classification<double>& c) {
  ordered_json j;
  j["verdict"] = std::string(to_string(c.verdict));
  j["in_phi0"] = int(c.in_phi0);
  j["in_phi1"] = int(c.in_phi1);
  j["in_phi2"] = int(c.in_phi2);
  j["existence"] = int(c.existence);
  j["uniform"] = int(c.uniform);
  return dump(j);
}

std::string drift_report_json(const DriftReport& r) {
  ordered_json j;
  j["cert"] = r.cert;
  j["c"] = num(r.c);
  j["d"] = num(r.d);
  j["max_lhs"] = num(r.max_lhs);
  j["samples"] = r.samples;
  j["pass"] = r.pass;
  ordered_json rem = ordered_json::array();
  for (double x : r.per_mode_remainder) rem.push_back(num(x));
  j["per_mode_remainder"] = rem;
  j["region"] = r.region;
  return dump(j);
}

std::string estimate_json(const StabilityEstimate& e) {
  ordered_json j;
  j["verdict"] = std::string(to_string(e.verdict));
  j["slope"] = num(e.slope);
  j["slope_threshold"] = num(e.slope_threshold);
  j["relative_change"] = num(e.relative_change);
  j["bound_estimate"] = num(e.bound_estimate);
  j["runs"] = e.runs;
  ordered_json avg = ordered_json::array();
  for (const Checkpoint& c : e.running_average) avg.push_back({num(c.t), num(c.queue_integral)});
  j["running_average"] = avg;
  return dump(j);
}

}  // namespace fluidnet
