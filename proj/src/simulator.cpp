#include "fluidnet/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <sstream>
#include <thread>

namespace fluidnet {

namespace {

constexpr double kTieTol = 1e-12;      // hr; boundary-first tie window
constexpr double kEventTol = 1e-9;     // veh; bisection target distance
constexpr int kMaxStalls = 1000;       // consecutive zero-length advances

// Augmented RK4 state: q1, q2, q31, q32, then integrals of q1, q2, q3,
// f13, f23, f34, f35.
using Augmented = Eigen::Matrix<double, 11, 1>;

QueueVectord clamp_queues(const NetworkParamsd& p, QueueVectord q) {
  q = q.cwiseMax(0.0);
  const double q3 = q(2) + q(3);
  if (q3 > p.diverge.theta) {
    q(2) *= p.diverge.theta / q3;
    q(3) = p.diverge.theta - q(2);
  }
  return q;
}

Augmented augmented_rate(const NetworkParamsd& p, const Vector2d& a, const Regime& r, const Augmented& y) {
  const QueueVectord q = clamp_queues(p, y.head<4>());
  const FlowVector<double> f = evaluate_flows(p, a, q, r);
  Augmented dy;
  dy.head<4>() = queue_rates(p, a, f);
  dy(4) = q(0);
  dy(5) = q(1);
  dy(6) = q(2) + q(3);
  dy(7) = f.f13;
  dy(8) = f.f23;
  dy(9) = f.f34;
  dy(10) = f.f35;
  return dy;
}

Augmented rk4(const NetworkParamsd& p, const Vector2d& a, const Regime& r, const Augmented& y, double h) {
  const Augmented k1 = augmented_rate(p, a, r, y);
  const Augmented k2 = augmented_rate(p, a, r, y + 0.5 * h * k1);
  const Augmented k3 = augmented_rate(p, a, r, y + 0.5 * h * k2);
  const Augmented k4 = augmented_rate(p, a, r, y + h * k3);
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// Distance past each boundary the frozen regime must not cross; positive means
// crossed.
struct Crossing {
  double q1{-1};
  double q2{-1};
  double empty{-1};
  double full{-1};

  bool any() const { return q1 > 0 || q2 > 0 || empty > 0 || full > 0; }
};

Crossing crossing(const NetworkParamsd& p, const Regime& r, const Augmented& y) {
  Crossing c;
  if (r.queued1) c.q1 = -y(0);
  if (r.queued2) c.q2 = -y(1);
  if (r.buffer == BufferRegime::Partial) {
    const double q3 = y(2) + y(3);
    c.empty = -q3;
    c.full = q3 - p.diverge.theta;
  }
  return c;
}

// Distance to the boundaries flagged in `which` at state y.
double gap(const NetworkParamsd& p, const Crossing& which, const Augmented& y) {
  double g = std::numeric_limits<double>::infinity();
  if (which.q1 > 0) g = std::min(g, std::abs(y(0)));
  if (which.q2 > 0) g = std::min(g, std::abs(y(1)));
  if (which.empty > 0) g = std::min(g, std::abs(y(2) + y(3)));
  if (which.full > 0) g = std::min(g, std::abs(p.diverge.theta - y(2) - y(3)));
  return g;
}

std::string dump(const Vector2d& a, const QueueVectord& q, const Regime& r) {
  std::ostringstream os;
  os.precision(17);
  os << "a=(" << a(0) << "," << a(1) << ") q=(" << q(0) << "," << q(1) << "," << q(2) << "," << q(3)
     << ") queued=(" << r.queued1 << "," << r.queued2 << ") buffer=" << static_cast<int>(r.buffer);
  return os.str();
}

// Exact advance for a regime whose flows do not depend on q.
AdvanceResult advance_constant(const NetworkParamsd& p, const Vector2d& a, const QueueVectord& q,
                               const Regime& r, double dt_max) {
  const FlowVector<double> f = evaluate_flows(p, a, q, r);
  const QueueVectord dq = queue_rates(p, a, f);

  std::array<double, 2> hit{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  const std::array<bool, 2> queued{r.queued1, r.queued2};
  for (int k = 0; k < 2; ++k) {
    if (queued[static_cast<std::size_t>(k)] && dq(k) < 0) hit[static_cast<std::size_t>(k)] = q(k) / -dq(k);
  }
  const double first_hit = std::min(hit[0], hit[1]);

  AdvanceResult res;
  res.regime = r;
  res.elapsed = dt_max;
  if (first_hit <= dt_max + kTieTol) {
    res.elapsed = first_hit;
    res.boundary_hit = true;
  }
  const double dt = res.elapsed;
  QueueVectord next = q + dt * dq;
  for (int k = 0; k < 2; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    if (res.boundary_hit && hit[ku] <= first_hit + kTieTol) next(k) = 0;
    if (!queued[ku] && q(k) <= p.eps_q) next(k) = 0;
  }
  res.q = next.cwiseMax(0.0);

  res.integrals.q = 0.5 * dt * (q.head<2>() + res.q.head<2>());
  res.integrals.q3 = 0.5 * dt * (q(2) + q(3) + res.q(2) + res.q(3));
  res.integrals.flow = {f.f13 * dt, f.f23 * dt, f.f34 * dt, f.f35 * dt};
  return res;
}

}  // namespace

double exponential(Rng& rng, double rate) { return -std::log1p(-uniform01(rng)) / rate; }

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

void SimConfig::validate() const {
  if (!(horizon >= 0)) throw std::invalid_argument("horizon must be >= 0");
  if (!(max_step > 0)) throw std::invalid_argument("max_step must be > 0");
  if (!(sample_interval >= 0)) throw std::invalid_argument("sample_interval must be >= 0");
  if (checkpoints < 0) throw std::invalid_argument("checkpoints must be >= 0");
  network.merge.validate();
  if (network.topology == Topology::MergeDiverge) network.diverge.validate();
  if (constant_inflow) {
    if ((*constant_inflow).minCoeff() < 0) throw std::invalid_argument("constant_inflow must be >= 0");
  } else {
    chains.validate();
  }
  if (initial_queues.minCoeff() < 0) throw std::invalid_argument("initial queues must be >= 0");
  if (network.topology == Topology::Merge && (initial_queues(2) != 0 || initial_queues(3) != 0)) {
    throw std::invalid_argument("initial link-3 queues must be zero in the merge topology");
  }
  if (network.topology == Topology::MergeDiverge &&
      initial_queues(2) + initial_queues(3) > network.diverge.theta + network.eps_q) {
    throw std::invalid_argument("initial q31 + q32 must not exceed theta");
  }
}

OccupancyFractions occupancy_fractions(const TrajectoryStats& stats) {
  if (!(stats.elapsed > 0)) return {};
  const double T = stats.elapsed;
  return {stats.occupancy_time[0] / T, stats.occupancy_time[1] / T, stats.occupancy_time[2] / T,
          stats.occupancy_time[3] / T};
}

HoldingSample sample_mode_holding(Mode mode, const ProductChain<double>& chains, Rng& rng) {
  const double exit = chains.exit_rate(mode);
  HoldingSample s;
  s.duration = exponential(rng, exit);
  double u = uniform01(rng) * exit;
  s.next = mode;
  for (Mode j : kModes) {
    if (j == mode) continue;
    const double r = chains.rate(mode, j);
    if (r <= 0) continue;
    s.next = j;
    if (u < r) break;
    u -= r;
  }
  return s;
}

AdvanceResult advance_merge(const NetworkParamsd& p, const Vector2d& a, const QueueVectord& q, double dt_max) {
  return advance_constant(p, a, q, resolve_regime(p, a, q), dt_max);
}

AdvanceResult advance_merge_diverge(const NetworkParamsd& p, const Vector2d& a, const QueueVectord& q,
                                    double dt_max, double max_step) {
  const Regime r = resolve_regime(p, a, q);
  if (r.buffer == BufferRegime::Empty) return advance_constant(p, a, q, r, dt_max);

  Augmented y0 = Augmented::Zero();
  y0.head<4>() = q;
  double h = std::min(dt_max, max_step);
  Augmented y = rk4(p, a, r, y0, h);
  const Crossing first = crossing(p, r, y);

  AdvanceResult res;
  res.regime = r;
  if (first.any()) {
    double lo = 0;
    double hi = h;
    Augmented y_lo = y0;
    bool located = true;
    // A step that starts on the boundary it re-crosses must still make
    // progress, so lo = 0 never counts as located.
    while (lo == 0 || gap(p, first, y_lo) > kEventTol) {
      if (hi - lo <= 1e-15 * std::max(1.0, h)) {
        // The step map jumps across the boundary, typically where a class
        // share of an emptying buffer is singular. Stop at the last accurate
        // state; the next advance starts in the regime it has reached.
        if (lo == 0) throw IntegrationError("boundary event could not be localized: " + dump(a, q, r));
        located = false;
        break;
      }
      const double mid = 0.5 * (lo + hi);
      const Augmented y_mid = rk4(p, a, r, y0, mid);
      if (crossing(p, r, y_mid).any()) {
        hi = mid;
      } else {
        lo = mid;
        y_lo = y_mid;
      }
    }
    h = lo;
    y = y_lo;
    res.boundary_hit = located;
  }

  QueueVectord next = y.head<4>();
  if (res.boundary_hit) {
    if (first.q1 > 0) next(0) = 0;
    if (first.q2 > 0) next(1) = 0;
    if (first.empty > 0) next(2) = next(3) = 0;
  }
  if (!r.queued1 && q(0) <= p.eps_q && next(0) <= p.eps_q) next(0) = 0;
  if (!r.queued2 && q(1) <= p.eps_q && next(1) <= p.eps_q) next(1) = 0;
  next = clamp_queues(p, next);
  const double q3 = next(2) + next(3);
  if ((res.boundary_hit && first.full > 0) || r.buffer == BufferRegime::Full) {
    if (q3 >= p.diverge.theta - kEventTol && q3 > 0) {
      next(2) *= p.diverge.theta / q3;
      next(3) = p.diverge.theta - next(2);
    }
  }

  res.q = next;
  res.elapsed = h;
  res.integrals.q = y.segment<2>(4);
  res.integrals.q3 = y(6);
  res.integrals.flow = {y(7), y(8), y(9), y(10)};
  return res;
}

TrajectoryStats simulate(const SimConfig& config) {
  config.validate();
  const NetworkParamsd& p = config.network;
  TrajectoryStats stats;
  stats.final_mode = config.initial_mode;
  stats.final_queues = config.initial_queues;
  const double T = config.horizon;
  if (!(T > 0)) return stats;

  Rng rng(config.seed);
  Mode mode = config.initial_mode;
  QueueVectord q = config.initial_queues;
  const bool jumping = !config.constant_inflow.has_value();
  constexpr double inf = std::numeric_limits<double>::infinity();

  HoldingSample holding{inf, mode};
  double jump_time = inf;
  if (jumping) {
    holding = sample_mode_holding(mode, config.chains, rng);
    jump_time = holding.duration;
  }
  auto inflow = [&](Mode m) { return jumping ? config.chains.inflow(m) : *config.constant_inflow; };

  const bool sampling = config.sample_interval > 0;
  std::uint64_t next_sample = 0;
  auto sample_time = [&](std::uint64_t k) { return static_cast<double>(k) * config.sample_interval; };
  std::uint64_t next_checkpoint = 1;
  auto checkpoint_time = [&](std::uint64_t k) {
    return static_cast<double>(k) * T / static_cast<double>(config.checkpoints);
  };

  auto record = [&](double t) {
    const Vector2d a = inflow(mode);
    const Regime r = resolve_regime(p, a, q);
    stats.path.push_back({t, mode, q, evaluate_flows(p, a, q, r)});
  };

  double t = 0;
  double q_integral = 0;  // running integral of q1 + q2
  int stalls = 0;
  while (t < T) {
    while (sampling && sample_time(next_sample) <= t + kTieTol) {
      record(t);
      ++next_sample;
    }
    if (jumping && jump_time <= t + kTieTol) {
      mode = holding.next;
      ++stats.jump_count;
      holding = sample_mode_holding(mode, config.chains, rng);
      jump_time = t + holding.duration;
      continue;
    }

    double target = std::min(T, jump_time);
    if (sampling) target = std::min(target, sample_time(next_sample));
    if (config.checkpoints > 0) target = std::min(target, checkpoint_time(next_checkpoint));

    const Vector2d a = inflow(mode);
    const double dt_max = target - t;
    const AdvanceResult res = p.topology == Topology::Merge
                                  ? advance_merge(p, a, q, dt_max)
                                  : advance_merge_diverge(p, a, q, dt_max, config.max_step);
    const double dt = res.elapsed;
    if (dt <= 0) {
      if (++stalls > kMaxStalls) throw IntegrationError("simulation stalled: " + dump(a, q, res.regime));
    } else {
      stalls = 0;
    }

    const int pattern = (res.regime.queued1 ? 2 : 0) + (res.regime.queued2 ? 1 : 0);
    stats.occupancy_time[static_cast<std::size_t>(pattern)] += dt;
    stats.mode_time[static_cast<std::size_t>(index(mode))] += dt;
    stats.time_avg_q1 += res.integrals.q(0);
    stats.time_avg_q2 += res.integrals.q(1);
    stats.time_avg_q3 += res.integrals.q3;
    stats.mean_inflow += a * dt;
    stats.mean_merge_flow += Vector2d(res.integrals.flow.f13, res.integrals.flow.f23);
    stats.cumulative_outflow += p.topology == Topology::Merge
                                    ? res.integrals.flow.f13 + res.integrals.flow.f23
                                    : res.integrals.flow.f34 + res.integrals.flow.f35;
    q_integral += res.integrals.q.sum();
    if (res.boundary_hit) ++stats.boundary_count;

    q = res.q;
    t = dt >= dt_max ? target : t + dt;

    while (config.checkpoints > 0 && next_checkpoint <= static_cast<std::uint64_t>(config.checkpoints) &&
           checkpoint_time(next_checkpoint) <= t + kTieTol) {
      stats.checkpoints.push_back({checkpoint_time(next_checkpoint), q_integral});
      ++next_checkpoint;
    }
  }
  while (sampling && sample_time(next_sample) <= T + kTieTol) {
    record(sample_time(next_sample));
    ++next_sample;
  }

  stats.elapsed = T;
  stats.cumulative_inflow = stats.mean_inflow.sum();
  stats.time_avg_q1 /= T;
  stats.time_avg_q2 /= T;
  stats.time_avg_q3 /= T;
  stats.mean_throughput = stats.cumulative_outflow / T;
  stats.mean_inflow /= T;
  stats.mean_merge_flow /= T;
  stats.event_count = stats.jump_count + stats.boundary_count;
  stats.final_mode = mode;
  stats.final_queues = q;
  return stats;
}

// ---------------------------------------------------------------------------

void PlatoonProcess::validate() const {
  if (!(headway_rate > 0)) throw std::invalid_argument("headway_rate must be > 0");
  if (!(length_rate > 0)) throw std::invalid_argument("length_rate must be > 0");
  if (!(background_flow >= 0)) throw std::invalid_argument("background_flow must be >= 0");
  if (!(platoon_flow > background_flow)) throw std::invalid_argument("platoon_flow must exceed background_flow");
}

double InflowPath::mean() const {
  if (!(horizon > 0)) return 0;
  double total = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double end = i + 1 < times.size() ? times[i + 1] : horizon;
    total += flows[i] * (end - times[i]);
  }
  return total / horizon;
}

double InflowPath::fraction_at_or_above(double level) const {
  if (!(horizon > 0)) return 0;
  double total = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double end = i + 1 < times.size() ? times[i + 1] : horizon;
    if (flows[i] >= level) total += end - times[i];
  }
  return total / horizon;
}

InflowPath platoon_process(const PlatoonProcess& p, double horizon, Rng& rng) {
  p.validate();
  InflowPath path;
  path.horizon = horizon;
  double t = 0;
  bool platoon = false;
  while (t < horizon) {
    path.times.push_back(t);
    path.flows.push_back(platoon ? p.platoon_flow : p.background_flow);
    t += exponential(rng, platoon ? p.length_rate : p.headway_rate);
    platoon = !platoon;
  }
  return path;
}

// ---------------------------------------------------------------------------

std::string_view to_string(EstimateVerdict v) {
  switch (v) {
    case EstimateVerdict::Stable: return "stable";
    case EstimateVerdict::Unstable: return "unstable";
    case EstimateVerdict::Inconclusive: return "inconclusive";
  }
  return "?";
}

StabilityEstimate estimate_stability(const SimConfig& config, const EstimateOptions& options) {
  if (options.ensemble < 1) throw std::invalid_argument("ensemble size must be >= 1");
  if (!(options.horizon > 0)) throw std::invalid_argument("estimate horizon must be > 0");
  if (options.checkpoints < 4) throw std::invalid_argument("estimate checkpoints must be >= 4");

  const auto n = static_cast<std::size_t>(options.ensemble);
  std::vector<std::vector<Checkpoint>> runs(n);
  auto run_one = [&](std::size_t i) {
    SimConfig c = config;
    c.seed = derive_seed(config.seed, i);
    c.horizon = options.horizon;
    c.checkpoints = options.checkpoints;
    c.sample_interval = 0;
    runs[i] = simulate(c).checkpoints;
  };

  unsigned workers = options.threads != 0 ? options.threads : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) run_one(i);
  } else {
    std::vector<std::future<void>> pending;
    for (unsigned w = 0; w < workers; ++w) {
      pending.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t i = w; i < n; i += workers) run_one(i);
      }));
    }
    for (auto& f : pending) f.get();
  }

  // Reduction in run order, independent of scheduling.
  const std::size_t K = runs.front().size();
  StabilityEstimate est;
  est.runs = options.ensemble;
  est.running_average.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    double sum = 0;
    for (const auto& run : runs) sum += run[k].queue_integral / run[k].t;
    est.running_average[k] = {runs.front()[k].t, sum / static_cast<double>(n)};
  }

  // Least-squares slope over the second half.
  double st = 0, sa = 0, stt = 0, sta = 0, m = 0;
  for (const Checkpoint& c : est.running_average) {
    if (c.t < 0.5 * options.horizon - kTieTol) continue;
    st += c.t;
    sa += c.queue_integral;
    stt += c.t * c.t;
    sta += c.t * c.queue_integral;
    m += 1;
  }
  est.slope = (m * sta - st * sa) / (m * stt - st * st);

  const double a_end = est.running_average.back().queue_integral;
  const double a_mid = est.running_average[K / 2 - 1].queue_integral;
  const double scale = std::max(a_end, a_mid);
  est.relative_change = scale > 0 ? (a_end - a_mid) / scale : 0;
  est.bound_estimate = a_end;

  const Vector2d a_bar = config.constant_inflow ? *config.constant_inflow : config.chains.mean_inflows();
  est.slope_threshold = options.slope_threshold_frac * a_bar.sum();
  if (!(est.slope_threshold > 0)) {
    est.slope_threshold = options.slope_threshold_frac * (config.network.merge.F1 + config.network.merge.F2);
  }

  if (est.slope > est.slope_threshold) {
    est.verdict = EstimateVerdict::Unstable;
  } else if (std::abs(est.slope) <= est.slope_threshold && est.relative_change < options.avg_tol) {
    est.verdict = EstimateVerdict::Stable;
  } else {
    est.verdict = EstimateVerdict::Inconclusive;
  }
  return est;
}

}  // namespace fluidnet
