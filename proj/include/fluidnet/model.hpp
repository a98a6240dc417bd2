#pragma once

// Fluid model of two Markov-modulated traffic classes sharing a common link.
//
// Link 1 and link 2 feed the common link 3 through a merge with static
// priorities; in the merge-diverge topology link 3 holds a two-class buffer
// that discharges into links 4 and 5 by a proportional rule.  Everything in
// this header is a pure function of its arguments.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fluidnet {

template <typename Scalar>
using Vector2 = Eigen::Matrix<Scalar, 2, 1>;

// (q1, q2, q3 class 1, q3 class 2); the last two stay zero for a bare merge.
template <typename Scalar>
using QueueVector = Eigen::Matrix<Scalar, 4, 1>;

using Vector2d = Vector2<double>;
using QueueVectord = QueueVector<double>;

// ---------------------------------------------------------------------------
// Inflow modes

/// Joint inflow mode. Bit 0 is link 1 high, bit 1 is link 2 high, so the
/// underlying values index arrays ordered (00, 10, 01, 11).
enum class Mode : std::uint8_t { k00 = 0, k10 = 1, k01 = 2, k11 = 3 };

inline constexpr std::array<Mode, 4> kModes{Mode::k00, Mode::k10, Mode::k01, Mode::k11};

constexpr int index(Mode m) { return static_cast<int>(m); }
constexpr bool link1_high(Mode m) { return (static_cast<unsigned>(m) & 1u) != 0; }
constexpr bool link2_high(Mode m) { return (static_cast<unsigned>(m) & 2u) != 0; }
constexpr Mode make_mode(bool high1, bool high2) {
  return static_cast<Mode>((high1 ? 1u : 0u) | (high2 ? 2u : 0u));
}

inline std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::k00: return "00";
    case Mode::k10: return "10";
    case Mode::k01: return "01";
    case Mode::k11: return "11";
  }
  return "??";
}

inline Mode parse_mode(std::string_view text) {
  for (Mode m : kModes) {
    if (to_string(m) == text) return m;
  }
  throw std::invalid_argument("mode must be one of 00, 10, 01, 11 (got '" + std::string(text) + "')");
}

// ---------------------------------------------------------------------------
// Parameters

/// Two-state inflow: 0 or a_plus, switching up at rate lambda and down at mu.
template <typename Scalar>
struct InflowChain {
  Scalar a_plus{};
  Scalar lambda{};
  Scalar mu{};

  void validate() const {
    if (!(a_plus > 0)) throw std::invalid_argument("a_plus must be > 0");
    if (!(lambda > 0)) throw std::invalid_argument("lambda must be > 0");
    if (!(mu > 0)) throw std::invalid_argument("mu must be > 0");
  }
};

template <typename Scalar>
Scalar mean_inflow(const InflowChain<Scalar>& chain) {
  return chain.lambda / (chain.lambda + chain.mu) * chain.a_plus;
}

/// Independent product of the two link chains on the four joint modes.
template <typename Scalar>
struct ProductChain {
  std::array<InflowChain<Scalar>, 2> links{};

  /// Transition rate between distinct modes; zero unless exactly one link flips.
  Scalar rate(Mode from, Mode to) const {
    const bool flip1 = link1_high(from) != link1_high(to);
    const bool flip2 = link2_high(from) != link2_high(to);
    if (flip1 == flip2) return Scalar(0);
    const auto& chain = flip1 ? links[0] : links[1];
    const bool was_high = flip1 ? link1_high(from) : link2_high(from);
    return was_high ? chain.mu : chain.lambda;
  }

  Scalar exit_rate(Mode m) const {
    Scalar total(0);
    for (Mode j : kModes) {
      if (j != m) total += rate(m, j);
    }
    return total;
  }

  Vector2<Scalar> inflow(Mode m) const {
    return {link1_high(m) ? links[0].a_plus : Scalar(0), link2_high(m) ? links[1].a_plus : Scalar(0)};
  }

  Vector2<Scalar> mean_inflows() const { return {mean_inflow(links[0]), mean_inflow(links[1])}; }

  Eigen::Matrix<Scalar, 4, 4> generator() const {
    Eigen::Matrix<Scalar, 4, 4> g = Eigen::Matrix<Scalar, 4, 4>::Zero();
    for (Mode i : kModes) {
      for (Mode j : kModes) {
        if (i != j) g(index(i), index(j)) = rate(i, j);
      }
      g(index(i), index(i)) = -exit_rate(i);
    }
    return g;
  }

  /// Stationary law as the product of the per-link on-fractions.
  Eigen::Matrix<Scalar, 4, 1> stationary() const {
    const Scalar p1 = links[0].lambda / (links[0].lambda + links[0].mu);
    const Scalar p2 = links[1].lambda / (links[1].lambda + links[1].mu);
    Eigen::Matrix<Scalar, 4, 1> pi;
    for (Mode m : kModes) {
      pi(index(m)) = (link1_high(m) ? p1 : 1 - p1) * (link2_high(m) ? p2 : 1 - p2);
    }
    return pi;
  }

  void validate() const {
    links[0].validate();
    links[1].validate();
  }
};

/// Share of link 3's receiving flow granted to each upstream link when both
/// are queued.
template <typename Scalar>
struct PriorityVector {
  Scalar phi1{0.5};
  Scalar phi2{0.5};

  static PriorityVector from_phi1(Scalar p1) { return {p1, Scalar(1) - p1}; }

  bool valid() const {
    using std::abs;
    return phi1 >= 0 && phi2 >= 0 && abs(phi1 + phi2 - Scalar(1)) <= Scalar(1e-12);
  }

  void validate() const {
    if (!valid()) {
      throw std::invalid_argument("priority vector must satisfy phi1, phi2 >= 0 and phi1 + phi2 = 1");
    }
  }
};

template <typename Scalar>
struct MergeParams {
  Scalar F1{};
  Scalar F2{};
  Scalar R3{};
  PriorityVector<Scalar> phi{};

  Scalar capacity(int k) const { return k == 0 ? F1 : F2; }

  void validate() const {
    if (!(F1 > 0)) throw std::invalid_argument("F1 must be > 0");
    if (!(F2 > 0)) throw std::invalid_argument("F2 must be > 0");
    if (!(R3 > 0)) throw std::invalid_argument("R3 must be > 0");
    phi.validate();
  }
};

template <typename Scalar>
struct DivergeParams {
  Scalar F3{};
  Scalar theta{};
  Scalar R4{};
  Scalar R5{};

  void validate() const {
    if (!(F3 > 0)) throw std::invalid_argument("F3 must be > 0");
    if (!(theta > 0)) throw std::invalid_argument("theta must be > 0");
    if (!(R4 > 0)) throw std::invalid_argument("R4 must be > 0");
    if (!(R5 > 0)) throw std::invalid_argument("R5 must be > 0");
  }

  /// R4 < F3, R5 < F3 and F3 < R4 + R5.
  bool standing_assumption() const { return R4 < F3 && R5 < F3 && F3 < R4 + R5; }
};

// ---------------------------------------------------------------------------
// Flow functions

inline constexpr double kDefaultEpsQ = 1e-9;

template <typename Scalar>
Scalar sending_flow(Scalar q, Scalar a, Scalar F, Scalar eps_q = Scalar(kDefaultEpsQ)) {
  return q <= eps_q ? a : F;
}

/// Receiving flow of the common link: R3 below the storage limit, F3 at it.
template <typename Scalar>
Scalar receiving_flow_3(Scalar q3, const DivergeParams<Scalar>& p, Scalar R3,
                        Scalar eps_q = Scalar(kDefaultEpsQ)) {
  if (q3 > p.theta + eps_q) {
    throw std::domain_error("link-3 queue exceeds its storage theta");
  }
  return q3 >= p.theta - eps_q ? p.F3 : R3;
}

/// How the common link's receiving flow is split at the merge.
enum class MergeRule {
  // min{s_k, r3} when the other link is empty, min{s_k, phi_k r3} when both
  // are queued. With r3 = R3 this is the bare-merge law.
  Priority,
  // min{s_1, (r3 - phi_2 s_2)_+}, the positive-part form; kept for comparison.
  PositivePart,
};

template <typename Scalar>
Vector2<Scalar> merge_split(Scalar s1, Scalar s2, bool queued1, bool queued2, Scalar r3,
                            const PriorityVector<Scalar>& phi, MergeRule rule = MergeRule::Priority) {
  using std::max;
  using std::min;
  if (rule == MergeRule::PositivePart) {
    return {min(s1, max(r3 - phi.phi2 * s2, Scalar(0))), min(s2, max(r3 - phi.phi1 * s1, Scalar(0)))};
  }
  return {min(s1, queued2 ? phi.phi1 * r3 : r3), min(s2, queued1 ? phi.phi2 * r3 : r3)};
}

/// Merge flows (f13, f23) from the current inflows and upstream queues.
template <typename Scalar>
Vector2<Scalar> merge_flows(const Vector2<Scalar>& a, Scalar q1, Scalar q2, Scalar r3,
                            const MergeParams<Scalar>& p, MergeRule rule = MergeRule::Priority,
                            Scalar eps_q = Scalar(kDefaultEpsQ)) {
  const Scalar s1 = sending_flow(q1, a(0), p.F1, eps_q);
  const Scalar s2 = sending_flow(q2, a(1), p.F2, eps_q);
  return merge_split(s1, s2, q1 > eps_q, q2 > eps_q, r3, p.phi, rule);
}

/// Proportional discharge rule: class shares of the link-3 buffer, else of
/// its inflow, else one half each. The pair sums to exactly one.
template <typename Scalar>
Vector2<Scalar> discharge_split(Scalar q31, Scalar q32, Scalar f13, Scalar f23) {
  Scalar x1, x2;
  if (q31 + q32 > 0) {
    x1 = q31;
    x2 = q32;
  } else if (f13 + f23 > 0) {
    x1 = f13;
    x2 = f23;
  } else {
    return {Scalar(0.5), Scalar(0.5)};
  }
  const Scalar total = x1 + x2;
  if (x1 <= x2) {
    const Scalar psi1 = x1 / total;
    return {psi1, Scalar(1) - psi1};
  }
  const Scalar psi2 = x2 / total;
  return {Scalar(1) - psi2, psi2};
}

enum class DivergeRule {
  // f35 demand term uses the class-2 share (1 - psi) s3.
  Symmetric,
  // f35 demand term uses psi s3 literally.
  AsPrinted,
};

namespace detail {
template <typename Scalar>
Scalar share_ratio(Scalar num, Scalar den) {
  return den == 0 ? std::numeric_limits<Scalar>::infinity() : num / den;
}
}  // namespace detail

/// Diverge flows (f34, f35) for class-1 share psi1 of the sending flow s3.
template <typename Scalar>
Vector2<Scalar> diverge_flows(Scalar psi1, Scalar s3, const DivergeParams<Scalar>& p,
                              DivergeRule rule = DivergeRule::Symmetric) {
  using std::min;
  const Scalar psi2 = Scalar(1) - psi1;
  // x/0 is +inf; 0 * R stays 0 when the numerator vanishes.
  const Scalar r12 = detail::share_ratio(psi1, psi2);
  const Scalar r21 = detail::share_ratio(psi2, psi1);
  const Scalar bound34 = r12 == 0 ? Scalar(0) : r12 * p.R5;
  const Scalar bound35 = r21 == 0 ? Scalar(0) : r21 * p.R4;
  const Scalar demand35 = rule == DivergeRule::Symmetric ? psi2 * s3 : psi1 * s3;
  return {min({psi1 * s3, p.R4, bound34}), min({demand35, p.R5, bound35})};
}

// ---------------------------------------------------------------------------
// Network dynamics

enum class Topology { Merge, MergeDiverge };

inline std::string_view to_string(Topology t) { return t == Topology::Merge ? "merge" : "merge-diverge"; }

template <typename Scalar>
struct NetworkParams {
  Topology topology{Topology::Merge};
  MergeParams<Scalar> merge{};
  DivergeParams<Scalar> diverge{};
  MergeRule merge_rule{MergeRule::Priority};
  DivergeRule diverge_rule{DivergeRule::Symmetric};
  Scalar eps_q{Scalar(kDefaultEpsQ)};
};

using NetworkParamsd = NetworkParams<double>;

template <typename Scalar>
struct FlowVector {
  Scalar f13{};
  Scalar f23{};
  Scalar f34{};
  Scalar f35{};
};

enum class BufferRegime {
  Empty,    // link 3 empty and passing its inflow straight through
  Partial,  // strictly between empty and full (or leaving a boundary)
  Full,     // at storage, inflow limited to what the diverge discharges
};

/// Which flow law is in force: upstream queues treated as occupied, and the
/// link-3 buffer regime. Boundary states are resolved by the direction the
/// state actually moves, so a queue at zero with excess inflow is "queued".
struct Regime {
  bool queued1{false};
  bool queued2{false};
  BufferRegime buffer{BufferRegime::Empty};

  friend bool operator==(const Regime&, const Regime&) = default;
};

inline constexpr double kFlowTol = 1e-9;

namespace detail {

template <typename Scalar>
Scalar median3(Scalar a, Scalar b, Scalar c) {
  using std::max;
  using std::min;
  return max(min(a, b), min(max(a, b), c));
}

/// Reduce merge inflows to a total of `cap`, respecting priority when both
/// exceed their share.
template <typename Scalar>
Vector2<Scalar> cap_inflow(const Vector2<Scalar>& f, Scalar cap, const PriorityVector<Scalar>& phi) {
  if (f.sum() <= cap) return f;
  const Scalar f13 = median3(f(0), cap - f(1), phi.phi1 * cap);
  return {f13, cap - f13};
}

template <typename Scalar>
Vector2<Scalar> sending(const NetworkParams<Scalar>& p, const Vector2<Scalar>& a, const Regime& r) {
  return {r.queued1 ? p.merge.F1 : a(0), r.queued2 ? p.merge.F2 : a(1)};
}

template <typename Scalar>
Vector2<Scalar> split(const NetworkParams<Scalar>& p, const Vector2<Scalar>& s, const Regime& r, Scalar r3) {
  return merge_split(s(0), s(1), r.queued1, r.queued2, r3, p.merge.phi, p.merge_rule);
}

/// Link-3 inflow at the storage limit, given the discharge `cap`.
template <typename Scalar>
Vector2<Scalar> full_buffer_inflow(const NetworkParams<Scalar>& p, const Vector2<Scalar>& s, const Regime& r,
                                   Scalar cap) {
  Vector2<Scalar> at_limit = split(p, s, r, p.diverge.F3);
  if (at_limit.sum() > cap) {
    at_limit = cap_inflow(split(p, s, r, cap), cap, p.merge.phi);
  }
  if (at_limit.sum() >= cap - Scalar(kFlowTol)) return at_limit;
  // Below the limit the buffer refills; if it would, the state slides along
  // q3 = theta with the convex combination that keeps the total at cap.
  const Vector2<Scalar> below = split(p, s, r, p.merge.R3);
  if (below.sum() > cap) {
    const Scalar w = (below.sum() - cap) / (below.sum() - at_limit.sum());
    return w * at_limit + (Scalar(1) - w) * below;
  }
  return at_limit;
}

}  // namespace detail

/// Flows under a fixed regime at queue state q.
template <typename Scalar>
FlowVector<Scalar> evaluate_flows(const NetworkParams<Scalar>& p, const Vector2<Scalar>& a,
                                  const QueueVector<Scalar>& q, const Regime& r) {
  const Vector2<Scalar> s = detail::sending(p, a, r);
  FlowVector<Scalar> f;
  if (p.topology == Topology::Merge) {
    const Vector2<Scalar> m = detail::split(p, s, r, p.merge.R3);
    f.f13 = m(0);
    f.f23 = m(1);
    return f;
  }

  const DivergeParams<Scalar>& d = p.diverge;
  switch (r.buffer) {
    case BufferRegime::Empty: {
      const Vector2<Scalar> m = detail::split(p, s, r, p.merge.R3);
      f = {m(0), m(1), m(0), m(1)};
      break;
    }
    case BufferRegime::Partial: {
      const Vector2<Scalar> m = detail::split(p, s, r, p.merge.R3);
      const Vector2<Scalar> psi = discharge_split(q(2), q(3), m(0), m(1));
      const Vector2<Scalar> out = diverge_flows(psi(0), d.F3, d, p.diverge_rule);
      f = {m(0), m(1), out(0), out(1)};
      break;
    }
    case BufferRegime::Full: {
      const Vector2<Scalar> psi = discharge_split(q(2), q(3), Scalar(0), Scalar(0));
      const Vector2<Scalar> out = diverge_flows(psi(0), d.F3, d, p.diverge_rule);
      const Vector2<Scalar> m = detail::full_buffer_inflow(p, s, r, out.sum());
      f = {m(0), m(1), out(0), out(1)};
      break;
    }
  }
  return f;
}

/// Queue derivative for given flows.
template <typename Scalar>
QueueVector<Scalar> queue_rates(const NetworkParams<Scalar>& p, const Vector2<Scalar>& a,
                                const FlowVector<Scalar>& f) {
  QueueVector<Scalar> dq;
  dq << a(0) - f.f13, a(1) - f.f23, Scalar(0), Scalar(0);
  if (p.topology == Topology::MergeDiverge) {
    dq(2) = f.f13 - f.f34;
    dq(3) = f.f23 - f.f35;
  }
  return dq;
}

namespace detail {

template <typename Scalar>
BufferRegime classify_buffer(const NetworkParams<Scalar>& p, const QueueVector<Scalar>& q) {
  const Scalar q3 = q(2) + q(3);
  if (q3 <= p.eps_q) return BufferRegime::Empty;
  if (q3 >= p.diverge.theta - p.eps_q) return BufferRegime::Full;
  return BufferRegime::Partial;
}

/// Decide whether a buffer sitting on a boundary stays there or leaves.
template <typename Scalar>
BufferRegime resolve_buffer(const NetworkParams<Scalar>& p, const Vector2<Scalar>& a, const QueueVector<Scalar>& q,
                            Regime r) {
  const DivergeParams<Scalar>& d = p.diverge;
  const Vector2<Scalar> s = sending(p, a, r);
  if (r.buffer == BufferRegime::Empty) {
    // Boundary law: link 3 offers exactly what it receives.
    const Vector2<Scalar> in = split(p, s, r, p.merge.R3);
    const Vector2<Scalar> psi = discharge_split(Scalar(0), Scalar(0), in(0), in(1));
    const Vector2<Scalar> pass = diverge_flows(psi(0), in.sum(), d, p.diverge_rule);
    if ((in - pass).maxCoeff() <= Scalar(kFlowTol)) return BufferRegime::Empty;
    // It only fills if the interior law also accumulates.
    const Vector2<Scalar> out = diverge_flows(psi(0), d.F3, d, p.diverge_rule);
    return in.sum() - out.sum() > Scalar(kFlowTol) ? BufferRegime::Partial : BufferRegime::Empty;
  }
  if (r.buffer == BufferRegime::Full) {
    const Vector2<Scalar> psi = discharge_split(q(2), q(3), Scalar(0), Scalar(0));
    const Scalar cap = diverge_flows(psi(0), d.F3, d, p.diverge_rule).sum();
    const Vector2<Scalar> in = full_buffer_inflow(p, s, r, cap);
    return in.sum() >= cap - Scalar(kFlowTol) ? BufferRegime::Full : BufferRegime::Partial;
  }
  return BufferRegime::Partial;
}

}  // namespace detail

/// Regime in force at (a, q). Queues within eps_q of zero count as empty
/// unless their inflow exceeds what the merge lets through, in which case they
/// are leaving zero and the interior law applies.
template <typename Scalar>
Regime resolve_regime(const NetworkParams<Scalar>& p, const Vector2<Scalar>& a, const QueueVector<Scalar>& q) {
  Regime r;
  r.queued1 = q(0) > p.eps_q;
  r.queued2 = q(1) > p.eps_q;
  const BufferRegime boundary =
      p.topology == Topology::MergeDiverge ? detail::classify_buffer(p, q) : BufferRegime::Empty;
  // Marking a queue occupied only lowers the other link's share, so this
  // settles after at most two flips.
  for (int pass = 0; pass < 4; ++pass) {
    r.buffer = boundary;
    if (p.topology == Topology::MergeDiverge) r.buffer = detail::resolve_buffer(p, a, q, r);
    const FlowVector<Scalar> f = evaluate_flows(p, a, q, r);
    bool changed = false;
    if (!r.queued1 && a(0) - f.f13 > Scalar(kFlowTol)) {
      r.queued1 = true;
      changed = true;
    }
    if (!r.queued2 && a(1) - f.f23 > Scalar(kFlowTol)) {
      r.queued2 = true;
      changed = true;
    }
    if (!changed) break;
  }
  return r;
}

/// Queue derivative at (a, q) under the resolved regime.
template <typename Scalar>
QueueVector<Scalar> drift(const NetworkParams<Scalar>& p, const Vector2<Scalar>& a, const QueueVector<Scalar>& q) {
  const Regime r = resolve_regime(p, a, q);
  return queue_rates(p, a, evaluate_flows(p, a, q, r));
}

}  // namespace fluidnet
