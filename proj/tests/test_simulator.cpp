#include "fluidnet/simulator.hpp"

#include <doctest.h>

#include <cmath>

using namespace fluidnet;

namespace {

ProductChain<double> table1_chains() {
  ProductChain<double> c;
  c.links = {InflowChain<double>{3000, 1, 1.5}, InflowChain<double>{3000, 1, 1.5}};
  return c;
}

SimConfig merge_config(double phi1 = 0.5, double R3 = 2500) {
  SimConfig c;
  c.network.merge = {1500, 1500, R3, PriorityVector<double>::from_phi1(phi1)};
  c.chains = table1_chains();
  return c;
}

SimConfig network_config(double F3 = 2600, double phi1 = 0.5) {
  SimConfig c;
  c.network.topology = Topology::MergeDiverge;
  c.network.merge = {1500, 1500, F3, PriorityVector<double>::from_phi1(phi1)};
  c.network.diverge = {F3, 40, 1400, 1400};
  c.chains = table1_chains();
  return c;
}

/// Fixed-step Euler on the resolved drift. Steps across which the regime
/// changes are re-done in 1000 sub-steps, so the per-event error is h/1000
/// times the flow jump.
QueueVectord reference_step(const NetworkParamsd& p, const Vector2d& a, QueueVectord q, double h) {
  const Regime r0 = resolve_regime(p, a, q);
  const QueueVectord trial = (q + h * drift(p, a, q)).cwiseMax(0.0);
  if (resolve_regime(p, a, trial) == r0 && (q + h * drift(p, a, q)).minCoeff() >= 0) return trial;
  const double dt = h / 1000;
  for (int i = 0; i < 1000; ++i) q = (q + dt * drift(p, a, q)).cwiseMax(0.0);
  return q;
}

}  // namespace

TEST_CASE("mode holding times and successors") {
  ProductChain<double> c;
  c.links = {InflowChain<double>{1, 1, 1}, InflowChain<double>{1, 1, 1}};
  Rng rng(42);
  const int n = 1000000;
  double total = 0;
  int to10 = 0;
  for (int i = 0; i < n; ++i) {
    const HoldingSample s = sample_mode_holding(Mode::k00, c, rng);
    total += s.duration;
    if (s.next == Mode::k10) ++to10;
    CHECK_UNARY(s.next == Mode::k10 || s.next == Mode::k01);
  }
  CHECK(total / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(double(to10) / n == doctest::Approx(0.5).epsilon(0.01));

  c.links = {InflowChain<double>{1, 1, 2}, InflowChain<double>{1, 1, 1e-6}};
  int to01 = 0;
  for (int i = 0; i < 1000; ++i) to01 += sample_mode_holding(Mode::k11, c, rng).next == Mode::k01;
  CHECK(to01 == 1000);

  Rng a(9), b(9);
  for (int i = 0; i < 100; ++i) {
    const HoldingSample x = sample_mode_holding(Mode::k10, c, a);
    const HoldingSample y = sample_mode_holding(Mode::k10, c, b);
    CHECK(x.duration == y.duration);
    CHECK(x.next == y.next);
  }
}

TEST_CASE("derived seeds differ and are stable") {
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
  CHECK(derive_seed(7, 3) == derive_seed(7, 3));
}

TEST_CASE("exact merge advance hits boundaries analytically") {
  NetworkParamsd p;
  p.merge = {1, 1, 2, {0.5, 0.5}};
  QueueVectord q;
  q << 5, 3, 0, 0;
  const Vector2d a(0, 0);
  AdvanceResult r = advance_merge(p, a, q, 10);
  CHECK(r.boundary_hit);
  CHECK(std::abs(r.elapsed - 3) <= 1e-9);
  CHECK(r.q(1) == 0);
  CHECK(r.q(0) == doctest::Approx(2));
  r = advance_merge(p, a, r.q, 10);
  CHECK(std::abs(r.elapsed - 2) <= 1e-9);
  CHECK(r.q.isZero());
  r = advance_merge(p, a, r.q, 10);
  CHECK(r.elapsed == 10);
  CHECK(r.q.isZero());
}

TEST_CASE("a queue leaving zero takes the interior drift immediately") {
  NetworkParamsd p;
  p.merge = {1500, 1500, 2500, {0.5, 0.5}};
  const Vector2d a(3000, 3000);
  const AdvanceResult r = advance_merge(p, a, QueueVectord::Zero(), 0.01);
  CHECK(r.q(0) == doctest::Approx(17.5));
  CHECK(r.q(1) == doctest::Approx(17.5));

  QueueVectord ref = QueueVectord::Zero();
  for (int i = 0; i < 100000; ++i) ref = reference_step(p, a, ref, 1e-7);
  CHECK(std::abs(ref(0) - r.q(0)) < 1e-6);
  CHECK(std::abs(ref(1) - r.q(1)) < 1e-6);
}

TEST_CASE("constant-inflow simulation reproduces the drain schedule") {
  SimConfig c;
  c.network.merge = {1, 1, 2, {0.5, 0.5}};
  c.constant_inflow = Vector2d(0, 0);
  c.initial_queues << 5, 3, 0, 0;
  c.horizon = 6;
  c.sample_interval = 0.5;
  const TrajectoryStats s = simulate(c);
  CHECK(s.boundary_count == 2);
  CHECK(s.jump_count == 0);
  // Time with q1 > 0 and q2 > 0 is exactly [0, 3); q1 alone until 5.
  CHECK(std::abs(s.occupancy_time[3] - 3) <= 1e-9);
  CHECK(std::abs(s.occupancy_time[2] - 2) <= 1e-9);
  CHECK(std::abs(s.occupancy_time[0] - 1) <= 1e-9);
  for (const PathSample& x : s.path) {
    CHECK(x.q(0) == doctest::Approx(std::max(0.0, 5 - x.t)).epsilon(1e-12));
    CHECK(x.q(1) == doctest::Approx(std::max(0.0, 3 - x.t)).epsilon(1e-12));
  }
  // Integral of q1 + q2 = 12.5 + 4.5.
  CHECK((s.time_avg_q1 + s.time_avg_q2) * 6 == doctest::Approx(17).epsilon(1e-12));
}

TEST_CASE("horizon zero gives empty statistics") {
  SimConfig c = merge_config();
  c.initial_queues << 4, 2, 0, 0;
  c.initial_mode = Mode::k11;
  const TrajectoryStats s = simulate(c);
  CHECK(s.elapsed == 0);
  CHECK(s.event_count == 0);
  CHECK(s.path.empty());
  CHECK(s.final_queues == c.initial_queues);
  CHECK(s.final_mode == Mode::k11);
  const OccupancyFractions f = occupancy_fractions(s);
  CHECK(f.p00 + f.p01 + f.p10 + f.p11 == 0);
}

TEST_CASE("simulation is deterministic for a seed") {
  for (SimConfig c : {merge_config(), network_config()}) {
    c.horizon = 50;
    c.seed = 123;
    c.sample_interval = 0.25;
    const TrajectoryStats a = simulate(c);
    const TrajectoryStats b = simulate(c);
    CHECK(a.time_avg_q1 == b.time_avg_q1);
    CHECK(a.time_avg_q3 == b.time_avg_q3);
    CHECK(a.final_queues == b.final_queues);
    REQUIRE(a.path.size() == b.path.size());
    for (std::size_t i = 0; i < a.path.size(); ++i) CHECK(a.path[i].q == b.path[i].q);
    c.seed = 124;
    CHECK(simulate(c).time_avg_q1 != a.time_avg_q1);
  }
}

TEST_CASE("merge paths agree with a fixed-step reference integrator") {
  SimConfig c = merge_config();
  c.horizon = 100;
  c.seed = 77;
  c.sample_interval = 1;
  const TrajectoryStats s = simulate(c);

  // Replay the same mode path: the simulator draws only holding samples.
  Rng rng(c.seed);
  Mode mode = c.initial_mode;
  HoldingSample hold = sample_mode_holding(mode, c.chains, rng);
  double next_jump = hold.duration;
  QueueVectord q = c.initial_queues;
  const double h = 1e-5;
  double worst = 0;
  std::size_t k = 1;
  const auto steps = static_cast<long>(std::llround(c.horizon / h));
  for (long n = 0; n < steps; ++n) {
    const double t0 = n * h;
    double t = t0;
    const double t1 = (n + 1) * h;
    while (next_jump < t1) {
      q = reference_step(c.network, c.chains.inflow(mode), q, next_jump - t);
      t = next_jump;
      mode = hold.next;
      hold = sample_mode_holding(mode, c.chains, rng);
      next_jump += hold.duration;
    }
    q = reference_step(c.network, c.chains.inflow(mode), q, t1 - t);
    if (k < s.path.size() && std::abs(t1 - s.path[k].t) < h / 2) {
      worst = std::max(worst, (q - s.path[k].q).cwiseAbs().maxCoeff());
      ++k;
    }
  }
  CHECK(k == s.path.size());
  CHECK(worst < 1e-4);
}

TEST_CASE("network runs conserve mass and respect storage") {
  for (double phi1 : {0.2, 0.5, 0.8}) {
    SimConfig c = network_config(2600, phi1);
    c.horizon = 200;
    c.seed = 5;
    c.sample_interval = 0.05;
    const TrajectoryStats s = simulate(c);
    const double change = s.final_queues.sum() - c.initial_queues.sum();
    CHECK(std::abs(s.cumulative_inflow - s.cumulative_outflow - change) <= 1e-6 * s.cumulative_inflow);
    for (const PathSample& x : s.path) {
      CHECK(x.q.minCoeff() >= 0);
      CHECK(x.q(2) + x.q(3) <= c.network.diverge.theta + 1e-9);
    }
    const OccupancyFractions f = occupancy_fractions(s);
    CHECK(std::abs(f.p00 + f.p01 + f.p10 + f.p11 - 1) <= 1e-9);
    CHECK(s.time_avg_q3 >= 0);
  }
}

TEST_CASE("symmetric link-3 state matches the merge on the upstream queues") {
  SimConfig n = network_config(2600, 0.5);
  n.constant_inflow = Vector2d(1000, 1000);
  n.initial_queues << 30, 30, 10, 10;
  n.horizon = 0.004;  // buffer stays below theta
  SimConfig m = n;
  m.network.topology = Topology::Merge;
  m.initial_queues << 30, 30, 0, 0;
  const TrajectoryStats a = simulate(n);
  const TrajectoryStats b = simulate(m);
  CHECK(a.final_queues(2) == doctest::Approx(a.final_queues(3)));
  CHECK(a.final_queues(2) + a.final_queues(3) < n.network.diverge.theta);
  CHECK(a.final_queues(0) == doctest::Approx(b.final_queues(0)).epsilon(1e-9));
  CHECK(a.final_queues(1) == doctest::Approx(b.final_queues(1)).epsilon(1e-9));
}

TEST_CASE("full buffer never refills past storage") {
  SimConfig c = network_config(2600, 0.5);
  c.constant_inflow = Vector2d(3000, 3000);
  c.initial_queues << 100, 100, 30, 10;
  c.horizon = 2;
  c.sample_interval = 0.01;
  const TrajectoryStats s = simulate(c);
  for (const PathSample& x : s.path) CHECK(x.q(2) + x.q(3) <= c.network.diverge.theta + 1e-9);
  const PathSample& last = s.path.back();
  CHECK(last.q(2) + last.q(3) == doctest::Approx(c.network.diverge.theta));
  CHECK(last.f.f13 + last.f.f23 <= last.f.f34 + last.f.f35 + 1e-6);
}

TEST_CASE("chain occupancy and mean inflow match the stationary law") {
  // Fast switching keeps the 1% tolerance near three standard deviations.
  SimConfig c = merge_config();
  c.chains.links = {InflowChain<double>{3000, 10, 15}, InflowChain<double>{2000, 12, 8}};
  c.horizon = 10000;
  c.seed = 2;
  const TrajectoryStats s = simulate(c);
  const Eigen::Vector4d pi = c.chains.stationary();
  for (Mode m : kModes) {
    CHECK(std::abs(s.mode_time[static_cast<std::size_t>(index(m))] / s.elapsed - pi(index(m))) < 0.01);
  }
  const Vector2d a_bar = c.chains.mean_inflows();
  CHECK(std::abs(s.mean_inflow(0) / a_bar(0) - 1) < 0.01);
  CHECK(std::abs(s.mean_inflow(1) / a_bar(1) - 1) < 0.01);
}

TEST_CASE("platoon process") {
  Rng rng(8);
  const PlatoonProcess even{5, 5, 3000, 0};
  const InflowPath path = platoon_process(even, 10000, rng);
  CHECK(path.fraction_at_or_above(3000) == doctest::Approx(0.5).epsilon(0.01));

  const PlatoonProcess floor{5, 5, 3000, 600};
  const InflowPath p2 = platoon_process(floor, 10000, rng);
  CHECK(p2.mean() == doctest::Approx(600 + 0.5 * 2400).epsilon(0.01));

  const PlatoonProcess brief{1, 1e6, 3000, 600};
  CHECK(platoon_process(brief, 1000, rng).mean() == doctest::Approx(600).epsilon(0.01));

  const InflowChain<double> eq = PlatoonProcess{1, 1.5, 3000, 0}.equivalent_chain();
  CHECK(eq.lambda == 1);
  CHECK(eq.mu == 1.5);
  CHECK(mean_inflow(eq) == doctest::Approx(1200));
  CHECK_THROWS(PlatoonProcess{1, 1, 100, 200}.validate());
}

TEST_CASE("stability estimate on the bare merge") {
  EstimateOptions o;
  o.horizon = 5000;
  SimConfig stable = merge_config(0.5);
  stable.seed = 1;
  const StabilityEstimate a = estimate_stability(stable, o);
  CHECK(a.verdict == EstimateVerdict::Stable);
  CHECK(a.runs == 8);
  CHECK(a.bound_estimate > 0);

  SimConfig unstable = merge_config(0.1);
  unstable.seed = 1;
  const StabilityEstimate b = estimate_stability(unstable, o);
  CHECK(b.verdict == EstimateVerdict::Unstable);
  CHECK(b.slope > b.slope_threshold);

  SimConfig drain = merge_config(0.5);
  drain.constant_inflow = Vector2d(0, 0);
  drain.initial_queues << 100, 100, 0, 0;
  const StabilityEstimate c = estimate_stability(drain, o);
  CHECK(c.verdict == EstimateVerdict::Stable);
  CHECK(c.bound_estimate < 1);
}

TEST_CASE("estimate is independent of the thread count") {
  SimConfig c = merge_config(0.5);
  EstimateOptions o;
  o.horizon = 200;
  o.ensemble = 4;
  o.threads = 1;
  const StabilityEstimate a = estimate_stability(c, o);
  o.threads = 3;
  const StabilityEstimate b = estimate_stability(c, o);
  CHECK(a.slope == b.slope);
  CHECK(a.bound_estimate == b.bound_estimate);
  REQUIRE(a.running_average.size() == b.running_average.size());
  for (std::size_t i = 0; i < a.running_average.size(); ++i) {
    CHECK(a.running_average[i].queue_integral == b.running_average[i].queue_integral);
  }
}
