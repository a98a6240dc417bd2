#pragma once

// Event-driven simulation of the piecewise-deterministic queue process.
//
// Between inflow-mode jumps the queues follow the deterministic fluid law.
// Segments on which every flow is constant are advanced exactly, with
// boundary-hit times solved in closed form. Segments where the link-3 class
// mix varies are integrated with classical RK4 and boundary crossings are
// located by bisection on the step length.

#include "fluidnet/model.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace fluidnet {

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) from the top 53 bits; portable across standard
/// library implementations, unlike std::uniform_real_distribution.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Exponential variate with the given rate by inversion.
double exponential(Rng& rng, double rate);

/// Counter-based child seed: splitmix64 of master + index.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

class IntegrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SimConfig {
  NetworkParamsd network{};
  ProductChain<double> chains{};
  double horizon{0};
  Mode initial_mode{Mode::k00};
  QueueVectord initial_queues{QueueVectord::Zero()};
  std::uint64_t seed{1};
  double max_step{1e-3};
  // Fixed inflows; the mode never jumps. Test hook for deterministic runs.
  std::optional<Vector2d> constant_inflow{};
  // > 0 records the state every sample_interval hours.
  double sample_interval{0};
  // > 0 records the running integral of q1 + q2 at horizon / checkpoints spacing.
  int checkpoints{0};

  void validate() const;
};

struct PathSample {
  double t{};
  Mode mode{};
  QueueVectord q{QueueVectord::Zero()};
  FlowVector<double> f{};
};

struct Checkpoint {
  double t{};
  double queue_integral{};  // integral of q1 + q2 over [0, t]
};

struct OccupancyFractions {
  double p00{};  // q1 = 0, q2 = 0
  double p01{};  // q1 = 0, q2 > 0
  double p10{};  // q1 > 0, q2 = 0
  double p11{};  // q1 > 0, q2 > 0
};

struct TrajectoryStats {
  double elapsed{0};
  double time_avg_q1{0};
  double time_avg_q2{0};
  double time_avg_q3{0};
  // Time spent in each queue-emptiness pattern, ordered 00, 01, 10, 11.
  std::array<double, 4> occupancy_time{};
  // Time spent in each inflow mode, indexed by index(Mode).
  std::array<double, 4> mode_time{};
  double mean_throughput{0};
  Vector2d mean_inflow{Vector2d::Zero()};
  Vector2d mean_merge_flow{Vector2d::Zero()};
  double cumulative_inflow{0};
  double cumulative_outflow{0};
  std::uint64_t jump_count{0};
  std::uint64_t boundary_count{0};
  std::uint64_t event_count{0};
  Mode final_mode{Mode::k00};
  QueueVectord final_queues{QueueVectord::Zero()};
  std::vector<PathSample> path;
  std::vector<Checkpoint> checkpoints;
};

OccupancyFractions occupancy_fractions(const TrajectoryStats& stats);

struct HoldingSample {
  double duration{};
  Mode next{};
};

/// Holding time in `mode` and the mode it jumps to.
HoldingSample sample_mode_holding(Mode mode, const ProductChain<double>& chains, Rng& rng);

/// Integrals accumulated over one advance.
struct SegmentIntegrals {
  Vector2d q{Vector2d::Zero()};  // integral of q1, q2
  double q3{0};                  // integral of q31 + q32
  FlowVector<double> flow{};     // integral of each flow
};

struct AdvanceResult {
  QueueVectord q{QueueVectord::Zero()};
  double elapsed{0};
  Regime regime{};
  bool boundary_hit{false};
  SegmentIntegrals integrals{};
};

/// Bare merge: exact piecewise-linear advance until dt_max or the first queue
/// reaching zero.
AdvanceResult advance_merge(const NetworkParamsd& p, const Vector2d& a, const QueueVectord& q, double dt_max);

/// Merge-diverge advance. Never returns negative queues or q31 + q32 > theta.
/// Throws IntegrationError if a boundary crossing cannot be localized.
AdvanceResult advance_merge_diverge(const NetworkParamsd& p, const Vector2d& a, const QueueVectord& q,
                                    double dt_max, double max_step);

TrajectoryStats simulate(const SimConfig& config);

// ---------------------------------------------------------------------------
// Platoon inflow

/// Platoons arrive with exponential headways and have exponential lengths;
/// during a platoon the inflow is platoon_flow, otherwise background_flow.
struct PlatoonProcess {
  double headway_rate{1};
  double length_rate{1};
  double platoon_flow{1};
  double background_flow{0};

  void validate() const;

  /// Two-state chain with the same switching law; the background level is
  /// dropped, so it is exact only when background_flow is zero.
  InflowChain<double> equivalent_chain() const { return {platoon_flow, headway_rate, length_rate}; }
};

/// Piecewise-constant inflow: flows[i] holds on [times[i], times[i+1]).
struct InflowPath {
  std::vector<double> times;
  std::vector<double> flows;
  double horizon{0};

  double mean() const;
  double fraction_at_or_above(double level) const;
};

/// Starts in a headway (background level).
InflowPath platoon_process(const PlatoonProcess& p, double horizon, Rng& rng);

// ---------------------------------------------------------------------------
// Monte Carlo stability estimation

enum class EstimateVerdict { Stable, Unstable, Inconclusive };

std::string_view to_string(EstimateVerdict v);

struct EstimateOptions {
  int ensemble{8};
  double horizon{1000};
  // Slope threshold as a fraction of the total mean inflow (veh/hr per hr).
  double slope_threshold_frac{0.01};
  // Allowed relative growth of the running average over the last half-horizon.
  double avg_tol{0.05};
  int checkpoints{200};
  unsigned threads{0};  // 0: hardware concurrency
};

struct StabilityEstimate {
  EstimateVerdict verdict{EstimateVerdict::Inconclusive};
  double slope{0};           // d/dt of the ensemble running average over the second half
  double slope_threshold{0};
  double relative_change{0}; // (A(T) - A(T/2)) / max(A(T), A(T/2))
  double bound_estimate{0};  // A(T)
  int runs{0};
  std::vector<Checkpoint> running_average;  // t, ensemble mean of (1/t) * integral
};

/// Runs `ensemble` independent replicas from the configured initial state,
/// seeds derived from config.seed, and applies the slope/convergence test.
StabilityEstimate estimate_stability(const SimConfig& config, const EstimateOptions& options);

}  // namespace fluidnet
