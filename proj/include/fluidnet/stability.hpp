#pragma once

// Closed-form stability tests for the merge and merge-diverge networks and
// the (F3, phi1) region sweep.  All comparisons are exact: strict where the
// sufficient conditions are strict, non-strict for the necessary condition.

#include "fluidnet/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace fluidnet {

enum class StabilityVerdict { Unstable, Unknown, MergeStable, MergeDivergeStable };

inline std::string_view to_string(StabilityVerdict v) {
  switch (v) {
    case StabilityVerdict::Unstable: return "unstable";
    case StabilityVerdict::Unknown: return "unknown";
    case StabilityVerdict::MergeStable: return "merge stable";
    case StabilityVerdict::MergeDivergeStable: return "merge-diverge stable";
  }
  return "?";
}

/// Ordering used by the sweep monotonicity check.
constexpr int rank(StabilityVerdict v) { return static_cast<int>(v); }

/// Some priority stabilizes the merge iff each mean is below its capacity and
/// the total is below R3.
template <typename Scalar>
bool check_existence_merge(Scalar a_bar1, Scalar a_bar2, Scalar F1, Scalar F2, Scalar R3) {
  return a_bar1 < F1 && a_bar2 < F2 && a_bar1 + a_bar2 < R3;
}

/// Every priority stabilizes the merge.
template <typename Scalar>
bool check_uniform(Scalar a_bar1, Scalar a_bar2, Scalar F1, Scalar F2) {
  return a_bar1 / F1 + a_bar2 / F2 < 1;
}

template <typename Scalar>
bool in_phi1(const PriorityVector<Scalar>& phi, Scalar a_bar1, Scalar a_bar2, Scalar R3) {
  return phi.phi1 > a_bar1 / R3 && phi.phi2 > a_bar2 / R3;
}

template <typename Scalar>
bool merge_sufficient(const PriorityVector<Scalar>& phi, Scalar a_bar1, Scalar a_bar2, Scalar F1, Scalar F2,
                      Scalar R3) {
  using std::min;
  return a_bar1 < min(F1, phi.phi1 * R3) && a_bar2 < min(F2, phi.phi2 * R3);
}

/// Left-hand side of the necessary condition; membership in Phi0 is lhs <= 1.
/// A zero priority makes its ratio +inf, which drops out of the min.
template <typename Scalar>
Scalar phi0_lhs(const PriorityVector<Scalar>& phi, Scalar a_bar1, Scalar a_bar2, Scalar F1, Scalar F2, Scalar R3) {
  constexpr Scalar inf = std::numeric_limits<Scalar>::infinity();
  auto ratio = [](Scalar a_bar, Scalar share) {
    if (a_bar == 0) return Scalar(0);
    return share == 0 ? inf : a_bar / share;
  };
  const Scalar load = a_bar1 / F1 + a_bar2 / F2;
  const Scalar slack = 1 - phi.phi1 * R3 / F1 - phi.phi2 * R3 / F2;
  const Scalar m = std::min(ratio(a_bar1, phi.phi1 * R3), ratio(a_bar2, phi.phi2 * R3));
  if (slack == 0) return load;
  return load + slack * m;
}

template <typename Scalar>
bool in_phi0(const PriorityVector<Scalar>& phi, Scalar a_bar1, Scalar a_bar2, Scalar F1, Scalar F2, Scalar R3) {
  return phi0_lhs(phi, a_bar1, a_bar2, F1, F2, R3) <= 1;
}

template <typename Scalar>
bool check_existence_network(Scalar a_bar1, Scalar a_bar2, Scalar F1, Scalar F2, Scalar F3, Scalar R4, Scalar R5) {
  using std::min;
  return a_bar1 < min(F1, R4) && a_bar2 < min(F2, R5) && a_bar1 + a_bar2 < F3;
}

/// Effective long-run discharge available to each class in the merge-diverge
/// network: min{F_k, phi_k F3, R_k', (phi_k / phi_other) R_other'}.
template <typename Scalar>
Vector2<Scalar> network_service(const PriorityVector<Scalar>& phi, Scalar F1, Scalar F2, Scalar F3, Scalar R4,
                                Scalar R5) {
  using std::min;
  constexpr Scalar inf = std::numeric_limits<Scalar>::infinity();
  auto scaled = [](Scalar num, Scalar den, Scalar r) {
    if (num == 0) return Scalar(0);
    return den == 0 ? inf : num / den * r;
  };
  return {min({F1, phi.phi1 * F3, R4, scaled(phi.phi1, phi.phi2, R5)}),
          min({F2, phi.phi2 * F3, R5, scaled(phi.phi2, phi.phi1, R4)})};
}

template <typename Scalar>
bool in_phi2(const PriorityVector<Scalar>& phi, Scalar a_bar1, Scalar a_bar2, Scalar F1, Scalar F2, Scalar F3,
             Scalar R4, Scalar R5) {
  const Vector2<Scalar> m = network_service(phi, F1, F2, F3, R4, R5);
  return a_bar1 < m(0) && a_bar2 < m(1);
}

template <typename Scalar>
struct Classification {
  bool existence{false};
  bool uniform{false};
  bool in_phi0{false};
  bool in_phi1{false};
  bool in_phi2{false};
  StabilityVerdict verdict{StabilityVerdict::Unstable};
};

/// Region of a priority vector. With diverge parameters present, F3 stands in
/// for R3 in the merge sets and existence is the network condition.
template <typename Scalar>
Classification<Scalar> classify(const PriorityVector<Scalar>& phi, const Vector2<Scalar>& a_bar,
                                const MergeParams<Scalar>& merge,
                                const std::optional<DivergeParams<Scalar>>& diverge = std::nullopt) {
  if (!phi.valid()) {
    throw std::invalid_argument("priority vector must satisfy phi1, phi2 >= 0 and phi1 + phi2 = 1");
  }
  const Scalar a1 = a_bar(0), a2 = a_bar(1);
  const Scalar R = diverge ? diverge->F3 : merge.R3;

  Classification<Scalar> c;
  const bool merge_exists = check_existence_merge(a1, a2, merge.F1, merge.F2, R);
  c.uniform = check_uniform(a1, a2, merge.F1, merge.F2);
  c.in_phi0 = in_phi0(phi, a1, a2, merge.F1, merge.F2, R);
  c.in_phi1 = in_phi1(phi, a1, a2, R);
  if (diverge) {
    c.existence = check_existence_network(a1, a2, merge.F1, merge.F2, diverge->F3, diverge->R4, diverge->R5);
    c.in_phi2 = in_phi2(phi, a1, a2, merge.F1, merge.F2, diverge->F3, diverge->R4, diverge->R5);
  } else {
    c.existence = merge_exists;
  }

  if (diverge && c.in_phi2 && c.existence) {
    c.verdict = StabilityVerdict::MergeDivergeStable;
  } else if ((c.in_phi1 || c.uniform) && merge_exists) {
    c.verdict = StabilityVerdict::MergeStable;
  } else if (c.in_phi0) {
    c.verdict = StabilityVerdict::Unknown;
  } else {
    c.verdict = StabilityVerdict::Unstable;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Sweep

template <typename Scalar>
struct SweepGrid {
  std::vector<Scalar> F3;
  std::vector<Scalar> phi1;
  Vector2<Scalar> a_bar{Vector2<Scalar>::Zero()};
  MergeParams<Scalar> merge{};      // R3 is ignored; F3 takes its place
  DivergeParams<Scalar> diverge{};  // F3 is overwritten per row

  void validate() const {
    auto ascending = [](const std::vector<Scalar>& v) {
      return !v.empty() && std::adjacent_find(v.begin(), v.end(), std::greater_equal<Scalar>()) == v.end();
    };
    if (!ascending(F3)) throw std::invalid_argument("sweep.F3 values must be non-empty and strictly ascending");
    if (!ascending(phi1)) throw std::invalid_argument("sweep.phi1 values must be non-empty and strictly ascending");
    if (phi1.front() < 0 || phi1.back() > 1) throw std::invalid_argument("sweep.phi1 values must lie in [0, 1]");
  }
};

template <typename Scalar>
struct SweepCell {
  Scalar F3{};
  Scalar phi1{};
  Classification<Scalar> result{};
};

/// Values first, first + step, ... up to last inclusive. Each point is
/// first + i * step rounded to 12 significant decimal digits, so 0.48 on a
/// 0.01 grid is the same double as the literal 0.48.
inline std::vector<double> grid_range(double first, double last, double step) {
  if (!(step > 0)) throw std::invalid_argument("grid step must be > 0");
  const auto count = static_cast<long>(std::floor((last - first) / step + 1e-9)) + 1;
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(std::max(count, 0L)));
  for (long i = 0; i < count; ++i) {
    const double x = first + static_cast<double>(i) * step;
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 12);
    double snapped = x;
    std::from_chars(buf, res.ptr, snapped);
    v.push_back(snapped);
  }
  return v;
}

/// Row-major over F3, then phi1.
template <typename Scalar>
std::vector<SweepCell<Scalar>> sweep(const SweepGrid<Scalar>& grid) {
  grid.validate();
  std::vector<SweepCell<Scalar>> cells;
  cells.reserve(grid.F3.size() * grid.phi1.size());
  DivergeParams<Scalar> d = grid.diverge;
  for (Scalar F3 : grid.F3) {
    d.F3 = F3;
    for (Scalar p1 : grid.phi1) {
      cells.push_back({F3, p1, classify(PriorityVector<Scalar>::from_phi1(p1), grid.a_bar, grid.merge,
                                        std::optional<DivergeParams<Scalar>>(d))});
    }
  }
  return cells;
}

}  // namespace fluidnet
