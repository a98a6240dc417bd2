#pragma once

// Piecewise-quadratic Lyapunov certificates for the merge (V1) and the
// merge-diverge network (V2), the PDMP generator applied to them, and a
// sampled Foster-Lyapunov drift check  L V <= -c |q| + d.
//
// Both certificates have the form  s * y^2 + beta_mode * y  with a scalar
// load y = x1 + alpha * x2.  For V1, x = (q1, q2).  For V2,
// x = ((q1 - hat_q1)_+ + q31, (q2 - hat_q2)_+ + q32).  The quadratic scale s
// is 1/2 by default, under which the generator equals
//   y * [(a_bar1 - f1) + alpha (a_bar2 - f2)]
// plus a term that is constant within each flow regime.

#include "fluidnet/model.hpp"
#include "fluidnet/simulator.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace fluidnet {

enum class QuadraticScale {
  Half,       // (1/2) y^2
  AsPrinted,  // y^2, i.e. q^T [[1, a], [a, a^2]] q
};

struct LyapunovV1 {
  double alpha{};
  Eigen::Vector4d beta{Eigen::Vector4d::Ones()};  // indexed by index(Mode)
  QuadraticScale scale{QuadraticScale::Half};

  /// Matrix of the quadratic part in q.
  Eigen::Matrix2d weight() const;
};

struct LyapunovV2 {
  double alpha_tilde{};
  Eigen::Vector4d beta{Eigen::Vector4d::Ones()};
  // Queue thresholds past which the link-3 class share is bounded below;
  // +inf when the bound is not attainable for these parameters.
  Vector2d hat_q{Vector2d::Zero()};
  Vector2d service{Vector2d::Zero()};  // effective long-run discharge per class
  QuadraticScale scale{QuadraticScale::Half};
};

/// Beta coefficients for a given alpha. The jump term they generate turns the
/// mode inflow into the mean inflow in the linear drift coefficient.
Eigen::Vector4d mode_offsets(double alpha, const Vector2d& a_bar, const ProductChain<double>& chains);

/// Requires a_bar1/F1 + a_bar2/F2 < 1; throws std::invalid_argument otherwise.
LyapunovV1 build_v1(const Vector2d& a_bar, double F1, double F2, const ProductChain<double>& chains,
                    QuadraticScale scale = QuadraticScale::Half);

double eval_v(const LyapunovV1& v, Mode mode, const Vector2d& q);
double eval_v(const LyapunovV2& v, Mode mode, const QueueVectord& q);

/// Gradient in q; for V2 the kink of (q_k - hat_q_k)_+ takes the right derivative.
Vector2d gradient(const LyapunovV1& v, Mode mode, const Vector2d& q);
QueueVectord gradient(const LyapunovV2& v, Mode mode, const QueueVectord& q);

/// Generator under an explicit regime (used for one-sided limits at boundaries).
double generator(const LyapunovV1& v, Mode mode, const Vector2d& q, const Regime& regime, const NetworkParamsd& p,
                 const ProductChain<double>& chains);

/// Generator under the regime the state actually follows.
double generator(const LyapunovV1& v, Mode mode, const Vector2d& q, const NetworkParamsd& p,
                 const ProductChain<double>& chains);
double generator(const LyapunovV2& v, Mode mode, const QueueVectord& q, const NetworkParamsd& p,
                 const ProductChain<double>& chains);

/// Generator at an interior state. Throws std::domain_error when q lies within
/// eps_q of a regime boundary.
double numeric_generator(const LyapunovV1& v, Mode mode, const Vector2d& q, const NetworkParamsd& p,
                         const ProductChain<double>& chains);
double numeric_generator(const LyapunovV2& v, Mode mode, const QueueVectord& q, const NetworkParamsd& p,
                         const ProductChain<double>& chains);

/// y * [(a_bar1 - f1) + alpha (a_bar2 - f2)] at q with the merge flows f.
double linear_drift_term(const LyapunovV1& v, const Vector2d& q, const Vector2d& a_bar, const NetworkParamsd& p,
                         const Vector2d& a);

struct DriftConstants {
  double c{};
  double d{};
};

/// c from the closed form; d as the largest L V + c |q| over a (grid+1)^2
/// lattice on [0, box]^2 in every mode, including one-sided limits on the axes.
DriftConstants drift_constants_v1(const LyapunovV1& v, const Vector2d& a_bar, const NetworkParamsd& p,
                                  const ProductChain<double>& chains, double box, int grid = 200);

// ---------------------------------------------------------------------------
// Link-3 class-share bound

/// theta_s = (theta * m / F3) * (1 - exp(-F3 s / theta)), the solution of
/// d theta/ds = m - (theta_s / theta) F3 from zero.
struct ThetaProfile {
  double storage{};  // theta of link 3
  double inflow{};   // m = min{F_k, phi_k F3}
  double F3{};

  double operator()(double s) const;
  double derivative(double s) const;
  double limit() const { return storage * inflow / F3; }
};

/// Requires phi in Phi2 and a_plus_k > min{F_k, phi_k F3}; k is 0 or 1.
ThetaProfile theta_profile(int k, const NetworkParamsd& p, const ProductChain<double>& chains);

/// Lower bound on class k's link-3 share once its upstream queue reaches q_tilde.
double psi_lower_bound(int k, double q_tilde, const NetworkParamsd& p, const ProductChain<double>& chains);

/// Smallest (hat_q1, hat_q2) with share bounds 1 - R5/F3 and 1 - R4/F3.
/// Throws std::domain_error if the profile's limit does not exceed the target.
Vector2d hat_thresholds(const NetworkParamsd& p, const ProductChain<double>& chains);

/// Requires phi in Phi2 (throws std::invalid_argument otherwise). Thresholds
/// that cannot be attained are stored as +inf.
LyapunovV2 build_v2(const NetworkParamsd& p, const ProductChain<double>& chains,
                    QuadraticScale scale = QuadraticScale::Half);

/// c by the V1 formula with the effective service in place of F_k; d as the
/// largest L V + c |q| over a lattice of (q1, q2) in [0, box]^2 and link-3
/// states on a 5-level simplex, restricted to the invariant set (a queue past
/// its threshold keeps its link-3 share bound). Throws std::domain_error when
/// c is not positive, which happens whenever a_bar1/m1 + a_bar2/m2 >= 1, or
/// when a threshold is infinite.
DriftConstants drift_constants_v2(const LyapunovV2& v, const Vector2d& a_bar, const NetworkParamsd& p,
                                  const ProductChain<double>& chains, double box, int grid = 200);

// ---------------------------------------------------------------------------
// Drift verification

struct DriftReport {
  std::string cert;
  std::string region;
  double c{};
  double d{};
  double max_lhs{};  // max of L V + c |q| over the samples
  int samples{};
  bool pass{};
  std::array<double, 4> per_mode_remainder{};  // mean of L V - linear term (V1 only)
};

/// Uniform samples on [0, box]^2 with uniformly drawn modes.
DriftReport verify_drift(const LyapunovV1& v, const Vector2d& a_bar, const NetworkParamsd& p,
                         const ProductChain<double>& chains, const DriftConstants& constants, double box,
                         int samples, std::uint64_t seed);

struct NetworkSample {
  Mode mode{};
  QueueVectord q{QueueVectord::Zero()};
};

/// States visited by simulated network trajectories: `runs` replicas of
/// `horizon` hours each, sampled every `interval` hours, starting from the
/// configured initial state.
std::vector<NetworkSample> sample_trajectory_states(const SimConfig& config, int runs, double horizon,
                                                    double interval);

DriftReport verify_drift(const LyapunovV2& v, const NetworkParamsd& p, const ProductChain<double>& chains,
                         const DriftConstants& constants, const std::vector<NetworkSample>& region);

}  // namespace fluidnet
