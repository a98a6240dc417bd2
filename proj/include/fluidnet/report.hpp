#pragma once

// CSV and JSON emission. Numbers carry 9 significant digits and never depend
// on the process locale.

#include "fluidnet/lyapunov.hpp"
#include "fluidnet/simulator.hpp"
#include "fluidnet/stability.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace fluidnet {

std::string format_number(double x);

/// Header: t,mode,q1,q2,q31,q32,f13,f23,f34,f35
void write_trajectory_csv(std::ostream& out, const std::vector<PathSample>& path);

/// Header: F3,phi1,in_phi0,in_phi1,in_phi2,verdict
void write_sweep_csv(std::ostream& out, const std::vector<SweepCell<double>>& cells);

// Single JSON documents, newline-terminated.
std::string stats_json(const TrajectoryStats& stats);
std::string classification_json(const Classification<double>& c);
std::string drift_report_json(const DriftReport& r);
std::string estimate_json(const StabilityEstimate& e);

}  // namespace fluidnet
