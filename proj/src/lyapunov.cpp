#include "fluidnet/lyapunov.hpp"

#include "fluidnet/stability.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>

namespace fluidnet {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double quadratic(QuadraticScale s, double y) { return s == QuadraticScale::Half ? 0.5 * y * y : y * y; }
double quadratic_slope(QuadraticScale s, double y) { return s == QuadraticScale::Half ? y : 2 * y; }

double jump_term(const Eigen::Vector4d& beta, Mode mode, double y, const ProductChain<double>& chains) {
  double sum = 0;
  for (Mode j : kModes) {
    if (j != mode) sum += chains.rate(mode, j) * (beta(index(j)) - beta(index(mode)));
  }
  return sum * y;
}

QueueVectord lift(const Vector2d& q) {
  QueueVectord q4 = QueueVectord::Zero();
  q4.head<2>() = q;
  return q4;
}

void require_merge(const NetworkParamsd& p) {
  if (p.topology != Topology::Merge) throw std::invalid_argument("V1 applies to the merge topology only");
}

void require_network(const NetworkParamsd& p) {
  if (p.topology != Topology::MergeDiverge) throw std::invalid_argument("V2 applies to the merge-diverge topology only");
}

Vector2d service_of(const NetworkParamsd& p) {
  return network_service(p.merge.phi, p.merge.F1, p.merge.F2, p.diverge.F3, p.diverge.R4, p.diverge.R5);
}

bool phi2_holds(const NetworkParamsd& p, const Vector2d& a_bar) {
  return in_phi2(p.merge.phi, a_bar(0), a_bar(1), p.merge.F1, p.merge.F2, p.diverge.F3, p.diverge.R4, p.diverge.R5);
}

/// Inflow to link 3 while class k is queued and the other is not competing.
double profile_inflow(int k, const NetworkParamsd& p) {
  const double phi = k == 0 ? p.merge.phi.phi1 : p.merge.phi.phi2;
  return std::min(p.merge.capacity(k), phi * p.diverge.F3);
}

double share_target(int k, const NetworkParamsd& p) {
  return 1 - (k == 0 ? p.diverge.R5 : p.diverge.R4) / p.diverge.F3;
}

/// Threshold for class k, or nullopt when the profile never reaches the target.
std::optional<double> hat_threshold(int k, const NetworkParamsd& p, const ProductChain<double>& chains) {
  const double target = share_target(k, p);
  if (target <= 0) return 0.0;
  const double m = profile_inflow(k, p);
  const double a_plus = chains.links[static_cast<std::size_t>(k)].a_plus;
  if (!(a_plus > m)) return std::nullopt;
  if (!(m / p.diverge.F3 > target)) return std::nullopt;
  const double s = -(p.diverge.theta / p.diverge.F3) * std::log1p(-target * p.diverge.F3 / m);
  return s * (a_plus - m);
}

Vector2d x_of(const LyapunovV2& v, const QueueVectord& q) {
  auto excess = [](double qk, double hat) { return std::isinf(hat) ? 0.0 : std::max(qk - hat, 0.0); };
  return {excess(q(0), v.hat_q(0)) + q(2), excess(q(1), v.hat_q(1)) + q(3)};
}

double l1_norm(const QueueVectord& q) { return q.cwiseAbs().sum(); }

}  // namespace

// ---------------------------------------------------------------------------
// V1

Eigen::Matrix2d LyapunovV1::weight() const {
  Eigen::Matrix2d w;
  w << 1, alpha, alpha, alpha * alpha;
  return scale == QuadraticScale::Half ? Eigen::Matrix2d(0.5 * w) : w;
}

Eigen::Vector4d mode_offsets(double alpha, const Vector2d& a_bar, const ProductChain<double>& chains) {
  Eigen::Vector4d beta;
  for (Mode m : kModes) {
    double b = 1;
    if (link1_high(m)) b += a_bar(0) / chains.links[0].lambda;
    if (link2_high(m)) b += alpha * a_bar(1) / chains.links[1].lambda;
    beta(index(m)) = b;
  }
  return beta;
}

LyapunovV1 build_v1(const Vector2d& a_bar, double F1, double F2, const ProductChain<double>& chains,
                    QuadraticScale scale) {
  if (!(a_bar(0) > 0 && a_bar(1) > 0)) throw std::invalid_argument("V1 requires positive mean inflows");
  if (!check_uniform(a_bar(0), a_bar(1), F1, F2)) {
    throw std::invalid_argument("V1 requires a_bar1/F1 + a_bar2/F2 < 1");
  }
  LyapunovV1 v;
  v.alpha = 0.5 * (a_bar(0) / (F2 - a_bar(1)) + (F1 - a_bar(0)) / a_bar(1));
  v.beta = mode_offsets(v.alpha, a_bar, chains);
  v.scale = scale;
  return v;
}

double eval_v(const LyapunovV1& v, Mode mode, const Vector2d& q) {
  const double y = q(0) + v.alpha * q(1);
  return quadratic(v.scale, y) + v.beta(index(mode)) * y;
}

Vector2d gradient(const LyapunovV1& v, Mode mode, const Vector2d& q) {
  const double y = q(0) + v.alpha * q(1);
  const double slope = quadratic_slope(v.scale, y) + v.beta(index(mode));
  return {slope, slope * v.alpha};
}

double generator(const LyapunovV1& v, Mode mode, const Vector2d& q, const Regime& regime, const NetworkParamsd& p,
                 const ProductChain<double>& chains) {
  require_merge(p);
  const Vector2d a = chains.inflow(mode);
  const QueueVectord q4 = lift(q);
  const QueueVectord dq = queue_rates(p, a, evaluate_flows(p, a, q4, regime));
  const double y = q(0) + v.alpha * q(1);
  return gradient(v, mode, q).dot(dq.head<2>()) + jump_term(v.beta, mode, y, chains);
}

double generator(const LyapunovV1& v, Mode mode, const Vector2d& q, const NetworkParamsd& p,
                 const ProductChain<double>& chains) {
  require_merge(p);
  return generator(v, mode, q, resolve_regime(p, chains.inflow(mode), lift(q)), p, chains);
}

double numeric_generator(const LyapunovV1& v, Mode mode, const Vector2d& q, const NetworkParamsd& p,
                         const ProductChain<double>& chains) {
  if (!(q(0) > p.eps_q && q(1) > p.eps_q)) {
    throw std::domain_error("generator requested within eps_q of a queue boundary");
  }
  return generator(v, mode, q, p, chains);
}

double linear_drift_term(const LyapunovV1& v, const Vector2d& q, const Vector2d& a_bar, const NetworkParamsd& p,
                         const Vector2d& a) {
  const QueueVectord q4 = lift(q);
  const FlowVector<double> f = evaluate_flows(p, a, q4, resolve_regime(p, a, q4));
  const double y = q(0) + v.alpha * q(1);
  return y * ((a_bar(0) - f.f13) + v.alpha * (a_bar(1) - f.f23));
}

DriftConstants drift_constants_v1(const LyapunovV1& v, const Vector2d& a_bar, const NetworkParamsd& p,
                                  const ProductChain<double>& chains, double box, int grid) {
  require_merge(p);
  if (!(box > 0) || grid < 1) throw std::invalid_argument("drift grid needs box > 0 and at least one interval");
  const double load = a_bar(0) + v.alpha * a_bar(1);
  DriftConstants k;
  k.c = std::min(p.merge.F1 - load, v.alpha * p.merge.F2 - load) * std::min(1.0, v.alpha);
  if (!(k.c > 0)) throw std::domain_error("drift constant c is not positive for these parameters");

  const double pitch = box / grid;
  k.d = -kInf;
  for (int i = 0; i <= grid; ++i) {
    for (int j = 0; j <= grid; ++j) {
      const Vector2d q(i * pitch, j * pitch);
      const double norm = q.sum();
      for (Mode mode : kModes) {
        const Vector2d a = chains.inflow(mode);
        const Regime resolved = resolve_regime(p, a, lift(q));
        double worst = generator(v, mode, q, resolved, p, chains);
        // One-sided limits from the interior along each empty axis.
        for (int flags = 1; flags < 4; ++flags) {
          Regime r = resolved;
          if ((flags & 1) && i == 0) r.queued1 = true;
          if ((flags & 2) && j == 0) r.queued2 = true;
          if (r == resolved) continue;
          worst = std::max(worst, generator(v, mode, q, r, p, chains));
        }
        k.d = std::max(k.d, worst + k.c * norm);
      }
    }
  }
  return k;
}

// ---------------------------------------------------------------------------
// Link-3 share bound

double ThetaProfile::operator()(double s) const { return limit() * -std::expm1(-F3 * s / storage); }

double ThetaProfile::derivative(double s) const { return inflow * std::exp(-F3 * s / storage); }

ThetaProfile theta_profile(int k, const NetworkParamsd& p, const ProductChain<double>& chains) {
  require_network(p);
  if (k != 0 && k != 1) throw std::invalid_argument("class index must be 0 or 1");
  if (!phi2_holds(p, chains.mean_inflows())) throw std::invalid_argument("priority vector is not in Phi2");
  const double m = profile_inflow(k, p);
  if (!(chains.links[static_cast<std::size_t>(k)].a_plus > m)) {
    throw std::invalid_argument("share bound needs a_plus above min{F_k, phi_k F3}");
  }
  return {p.diverge.theta, m, p.diverge.F3};
}

double psi_lower_bound(int k, double q_tilde, const NetworkParamsd& p, const ProductChain<double>& chains) {
  const ThetaProfile profile = theta_profile(k, p, chains);
  const double T = q_tilde / (chains.links[static_cast<std::size_t>(k)].a_plus - profile.inflow);
  return profile(T) / profile.storage;
}

Vector2d hat_thresholds(const NetworkParamsd& p, const ProductChain<double>& chains) {
  Vector2d hat;
  for (int k = 0; k < 2; ++k) {
    if (share_target(k, p) > 0) theta_profile(k, p, chains);  // precondition checks
    const std::optional<double> h = hat_threshold(k, p, chains);
    if (!h) {
      throw std::domain_error(k == 0 ? "class 1 share bound 1 - R5/F3 is not attainable"
                                     : "class 2 share bound 1 - R4/F3 is not attainable");
    }
    hat(k) = *h;
  }
  return hat;
}

// ---------------------------------------------------------------------------
// V2

LyapunovV2 build_v2(const NetworkParamsd& p, const ProductChain<double>& chains, QuadraticScale scale) {
  require_network(p);
  const Vector2d a_bar = chains.mean_inflows();
  if (!phi2_holds(p, a_bar)) throw std::invalid_argument("priority vector is not in Phi2");
  LyapunovV2 v;
  v.service = service_of(p);
  v.alpha_tilde = 0.5 * (a_bar(0) / (v.service(1) - a_bar(1)) + (v.service(0) - a_bar(0)) / a_bar(1));
  v.beta = mode_offsets(v.alpha_tilde, a_bar, chains);
  for (int k = 0; k < 2; ++k) v.hat_q(k) = hat_threshold(k, p, chains).value_or(kInf);
  v.scale = scale;
  return v;
}

double eval_v(const LyapunovV2& v, Mode mode, const QueueVectord& q) {
  const Vector2d x = x_of(v, q);
  const double y = x(0) + v.alpha_tilde * x(1);
  return quadratic(v.scale, y) + v.beta(index(mode)) * y;
}

QueueVectord gradient(const LyapunovV2& v, Mode mode, const QueueVectord& q) {
  const Vector2d x = x_of(v, q);
  const double y = x(0) + v.alpha_tilde * x(1);
  const double slope = quadratic_slope(v.scale, y) + v.beta(index(mode));
  auto past = [](double qk, double hat) { return !std::isinf(hat) && qk >= hat ? 1.0 : 0.0; };
  QueueVectord g;
  g << past(q(0), v.hat_q(0)), v.alpha_tilde * past(q(1), v.hat_q(1)), 1, v.alpha_tilde;
  return slope * g;
}

double generator(const LyapunovV2& v, Mode mode, const QueueVectord& q, const NetworkParamsd& p,
                 const ProductChain<double>& chains) {
  require_network(p);
  const Vector2d x = x_of(v, q);
  const QueueVectord dq = drift(p, chains.inflow(mode), q);
  return gradient(v, mode, q).dot(dq) + jump_term(v.beta, mode, x(0) + v.alpha_tilde * x(1), chains);
}

double numeric_generator(const LyapunovV2& v, Mode mode, const QueueVectord& q, const NetworkParamsd& p,
                         const ProductChain<double>& chains) {
  const double eps = p.eps_q;
  const double q3 = q(2) + q(3);
  bool near = q(0) <= eps || q(1) <= eps || q(2) <= eps || q(3) <= eps || q3 >= p.diverge.theta - eps;
  for (int k = 0; k < 2; ++k) near = near || std::abs(q(k) - v.hat_q(k)) <= eps;
  if (near) throw std::domain_error("generator requested within eps_q of a regime boundary");
  return generator(v, mode, q, p, chains);
}

DriftConstants drift_constants_v2(const LyapunovV2& v, const Vector2d& a_bar, const NetworkParamsd& p,
                                  const ProductChain<double>& chains, double box, int grid) {
  require_network(p);
  if (!(box > 0) || grid < 1) throw std::invalid_argument("drift grid needs box > 0 and at least one interval");
  if (!v.hat_q.allFinite()) {
    throw std::domain_error("link-3 share bound is not attainable, so the certificate ignores the upstream queues");
  }
  const double load = a_bar(0) + v.alpha_tilde * a_bar(1);
  constexpr int kLevels = 4;
  const double pitch = box / grid;
  const double step3 = p.diverge.theta / kLevels;
  // States outside the invariant set, where a long upstream queue coexists
  // with a link-3 share below its lower bound, are never visited.
  const Vector2d share_floor(1 - p.diverge.R5 / p.diverge.F3, 1 - p.diverge.R4 / p.diverge.F3);
  auto invariant = [&](const QueueVectord& q) {
    const double q3 = q(2) + q(3);
    if (q3 <= 0) return true;
    for (int c = 0; c < 2; ++c) {
      if (q(c) >= v.hat_q(c) && q(2 + c) / q3 < share_floor(c)) return false;
    }
    return true;
  };
  auto for_each_state = [&](auto&& visit) {
    for (int i = 0; i <= grid; ++i) {
      for (int j = 0; j <= grid; ++j) {
        for (int u = 0; u <= kLevels; ++u) {
          for (int w = 0; u + w <= kLevels; ++w) {
            QueueVectord q;
            q << i * pitch, j * pitch, u * step3, w * step3;
            if (invariant(q)) visit(q);
          }
        }
      }
    }
  };

  DriftConstants k;
  k.c = std::min(v.service(0) - load, v.alpha_tilde * v.service(1) - load) * std::min(1.0, v.alpha_tilde);
  if (!(k.c > 0)) {
    throw std::domain_error("drift constant c is not positive: the certificate needs a_bar1/m1 + a_bar2/m2 < 1 "
                            "with m the effective network service");
  }

  k.d = -kInf;
  for_each_state([&](const QueueVectord& q) {
    const double norm = l1_norm(q);
    for (Mode mode : kModes) k.d = std::max(k.d, generator(v, mode, q, p, chains) + k.c * norm);
  });
  return k;
}

// ---------------------------------------------------------------------------
// Verification

DriftReport verify_drift(const LyapunovV1& v, const Vector2d& a_bar, const NetworkParamsd& p,
                         const ProductChain<double>& chains, const DriftConstants& constants, double box,
                         int samples, std::uint64_t seed) {
  require_merge(p);
  if (samples < 1) throw std::invalid_argument("drift check needs at least one sample");
  Rng rng(seed);
  DriftReport r;
  r.cert = "V1";
  char text[32];
  const auto end = std::to_chars(text, text + sizeof text, box).ptr;
  r.region = "uniform on [0, " + std::string(text, end) + "]^2, uniform mode";
  r.c = constants.c;
  r.d = constants.d;
  r.samples = samples;
  r.max_lhs = -kInf;
  std::array<double, 4> remainder_sum{};
  std::array<int, 4> remainder_count{};
  for (int n = 0; n < samples; ++n) {
    const Vector2d q(box * uniform01(rng), box * uniform01(rng));
    const Mode mode = kModes[static_cast<std::size_t>(rng() >> 62)];
    const double lv = generator(v, mode, q, p, chains);
    r.max_lhs = std::max(r.max_lhs, lv + constants.c * q.sum());
    if (q.minCoeff() > p.eps_q) {
      remainder_sum[index(mode)] += lv - linear_drift_term(v, q, a_bar, p, chains.inflow(mode));
      ++remainder_count[index(mode)];
    }
  }
  for (std::size_t i = 0; i < 4; ++i) {
    r.per_mode_remainder[i] = remainder_count[i] > 0 ? remainder_sum[i] / remainder_count[i] : 0.0;
  }
  r.pass = r.max_lhs <= r.d;
  return r;
}

std::vector<NetworkSample> sample_trajectory_states(const SimConfig& config, int runs, double horizon,
                                                    double interval) {
  if (runs < 1 || !(horizon > 0) || !(interval > 0)) {
    throw std::invalid_argument("trajectory sampling needs runs >= 1, horizon > 0 and interval > 0");
  }
  std::vector<NetworkSample> out;
  for (int i = 0; i < runs; ++i) {
    SimConfig c = config;
    c.horizon = horizon;
    c.sample_interval = interval;
    c.checkpoints = 0;
    c.seed = derive_seed(config.seed, static_cast<std::uint64_t>(i));
    const TrajectoryStats stats = simulate(c);
    for (const PathSample& s : stats.path) out.push_back({s.mode, s.q});
  }
  return out;
}

DriftReport verify_drift(const LyapunovV2& v, const NetworkParamsd& p, const ProductChain<double>& chains,
                         const DriftConstants& constants, const std::vector<NetworkSample>& region) {
  require_network(p);
  if (region.empty()) throw std::invalid_argument("drift check needs at least one sample");
  DriftReport r;
  r.cert = "V2";
  r.region = "simulated trajectory states";
  r.c = constants.c;
  r.d = constants.d;
  r.samples = static_cast<int>(region.size());
  r.max_lhs = -kInf;
  for (const NetworkSample& s : region) {
    r.max_lhs = std::max(r.max_lhs, generator(v, s.mode, s.q, p, chains) + constants.c * l1_norm(s.q));
  }
  r.pass = r.max_lhs <= r.d;
  return r;
}

}  // namespace fluidnet
