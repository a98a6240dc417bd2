#include "fluidnet/stability.hpp"

#include <doctest.h>

#include <random>

using namespace fluidnet;

namespace {

const MergeParams<double> kMerge{1500, 1500, 2500, {0.5, 0.5}};
const Vector2d kTable1Mean(1200, 1200);

DivergeParams<double> table1_diverge(double F3) { return {F3, 40, 1400, 1400}; }

SweepGrid<double> table1_grid(std::vector<double> F3, std::vector<double> phi1) {
  SweepGrid<double> g;
  g.F3 = std::move(F3);
  g.phi1 = std::move(phi1);
  g.a_bar = kTable1Mean;
  g.merge = kMerge;
  g.diverge = table1_diverge(0);
  return g;
}

}  // namespace

TEST_CASE("merge existence and uniform conditions") {
  CHECK(check_existence_merge(1200.0, 1200.0, 1500.0, 1500.0, 2500.0));
  CHECK_FALSE(check_existence_merge(1200.0, 1200.0, 1500.0, 1500.0, 2400.0));
  CHECK_FALSE(check_existence_merge(1500.0, 100.0, 1500.0, 1500.0, 5000.0));
  CHECK(check_uniform(500.0, 500.0, 1500.0, 1500.0));
  CHECK_FALSE(check_uniform(750.0, 750.0, 1500.0, 1500.0));
}

TEST_CASE("priority set membership on the merge") {
  const auto half = PriorityVector<double>::from_phi1(0.5);
  const auto low = PriorityVector<double>::from_phi1(0.1);
  CHECK(in_phi1(half, 1200.0, 1200.0, 2500.0));
  CHECK_FALSE(in_phi1(low, 1200.0, 1200.0, 2500.0));
  // 1.6 + (1 - 2500/1500) * min(1200/250, 1200/2250)
  CHECK(phi0_lhs(low, 1200.0, 1200.0, 1500.0, 1500.0, 2500.0) == doctest::Approx(1.6 - 2.0 / 3 * 1200 / 2250));
  CHECK(phi0_lhs(low, 1200.0, 1200.0, 1500.0, 1500.0, 2500.0) == doctest::Approx(1.2444).epsilon(1e-4));
  CHECK_FALSE(in_phi0(low, 1200.0, 1200.0, 1500.0, 1500.0, 2500.0));
  CHECK(in_phi0(half, 1200.0, 1200.0, 1500.0, 1500.0, 2500.0));

  // A zero priority drops out of the min instead of producing nan.
  const auto edge = PriorityVector<double>::from_phi1(0.0);
  CHECK(std::isfinite(phi0_lhs(edge, 1200.0, 1200.0, 1500.0, 1500.0, 2500.0)));
}

TEST_CASE("network service and Phi2") {
  const auto half = PriorityVector<double>::from_phi1(0.5);
  const Vector2d m = network_service(half, 1500.0, 1500.0, 2600.0, 1400.0, 1400.0);
  CHECK(m == Vector2d(1300, 1300));
  CHECK(in_phi2(half, 1200.0, 1200.0, 1500.0, 1500.0, 2600.0, 1400.0, 1400.0));
  CHECK_FALSE(in_phi2(PriorityVector<double>::from_phi1(0.4), 1200.0, 1200.0, 1500.0, 1500.0, 2600.0, 1400.0,
                      1400.0));
  // Span edges at F3 >= 2600: phi1/phi2 * 1400 > 1200 needs phi1 > 6/13.
  CHECK_FALSE(in_phi2(PriorityVector<double>{6.0 / 13, 7.0 / 13}, 1200.0, 1200.0, 1500.0, 1500.0, 3000.0, 1400.0,
                      1400.0));
  CHECK(check_existence_network(1200.0, 1200.0, 1500.0, 1500.0, 2500.0, 1400.0, 1400.0));
  CHECK_FALSE(check_existence_network(1200.0, 1200.0, 1500.0, 1500.0, 2400.0, 1400.0, 1400.0));
}

TEST_CASE("classify follows the region table") {
  auto verdict = [](double phi1, double F3) {
    return classify(PriorityVector<double>::from_phi1(phi1), kTable1Mean, kMerge,
                    std::optional<DivergeParams<double>>(table1_diverge(F3)))
        .verdict;
  };
  CHECK(verdict(0.5, 2600) == StabilityVerdict::MergeDivergeStable);
  // phi0_lhs is exactly 1 here and the necessary condition is non-strict.
  CHECK(verdict(0.5, 2400) == StabilityVerdict::Unknown);
  CHECK(verdict(0.5, 2300) == StabilityVerdict::Unstable);
  CHECK(verdict(0.1, 3000) == StabilityVerdict::Unstable);
  CHECK(verdict(0.4, 3500) == StabilityVerdict::MergeStable);
  CHECK(verdict(0.4, 3000) == StabilityVerdict::Unknown);

  const auto merge_only = classify(PriorityVector<double>::from_phi1(0.5), kTable1Mean, kMerge);
  CHECK(merge_only.verdict == StabilityVerdict::MergeStable);
  CHECK_FALSE(merge_only.in_phi2);
  CHECK_THROWS_AS(classify(PriorityVector<double>{0.7, 0.7}, kTable1Mean, kMerge), std::invalid_argument);
}

TEST_CASE("grid points snap to their decimal literals") {
  const auto v = grid_range(0, 1, 0.01);
  REQUIRE(v.size() == 101);
  CHECK(v[48] == 0.48);
  CHECK(v[7] == 0.07);
  CHECK(v.back() == 1.0);
  CHECK(grid_range(0, 1, 0.001).size() == 1001);
  CHECK_THROWS(grid_range(0, 1, 0));
}

TEST_CASE("sweep reproduces the region thresholds") {
  const auto cells = sweep(table1_grid(grid_range(2000, 3500, 100), grid_range(0, 1, 0.001)));
  REQUIRE(cells.size() == 16 * 1001);
  for (const auto& c : cells) {
    const bool stable =
        c.result.verdict == StabilityVerdict::MergeStable || c.result.verdict == StabilityVerdict::MergeDivergeStable;
    if (c.F3 <= 2400) CHECK_FALSE(stable);
    if (c.F3 >= 2600) {
      const bool mds = c.result.verdict == StabilityVerdict::MergeDivergeStable;
      CHECK(mds == (c.phi1 > 6.0 / 13 && c.phi1 < 7.0 / 13));
    }
  }
  bool unknown_band = false;
  for (const auto& c : cells)
    if (c.F3 > 2400 && c.F3 <= 2600 && c.result.verdict == StabilityVerdict::Unknown) unknown_band = true;
  CHECK(unknown_band);
}

TEST_CASE("sweep verdicts are monotone in F3 and symmetric in phi1") {
  const auto phi = grid_range(0, 1, 0.01);
  const auto F3 = grid_range(2000, 3500, 50);
  const auto cells = sweep(table1_grid(F3, phi));
  const std::size_t cols = phi.size();
  for (std::size_t r = 1; r < F3.size(); ++r) {
    for (std::size_t j = 0; j < cols; ++j) {
      CHECK(rank(cells[r * cols + j].result.verdict) >= rank(cells[(r - 1) * cols + j].result.verdict));
    }
  }
  for (std::size_t r = 0; r < F3.size(); ++r) {
    for (std::size_t j = 0; j < cols; ++j) {
      CHECK(cells[r * cols + j].result.verdict == cells[r * cols + (cols - 1 - j)].result.verdict);
    }
  }
  CHECK_THROWS(sweep(table1_grid({3000, 2000}, phi)));
}

TEST_CASE("set inclusions over random parameters") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0, 1);
  int existence = 0, phi2_not_phi1 = 0, phi1_not_phi0 = 0, sufficient_mismatch = 0;
  for (int n = 0; n < 10000; ++n) {
    const double F1 = 500 + 2000 * u(rng), F2 = 500 + 2000 * u(rng);
    const double F3 = 500 + 4000 * u(rng);
    const double R4 = 500 + 2000 * u(rng), R5 = 500 + 2000 * u(rng);
    const double a1 = 2000 * u(rng), a2 = 2000 * u(rng);
    const auto phi = PriorityVector<double>::from_phi1(u(rng));
    if (!check_existence_network(a1, a2, F1, F2, F3, R4, R5)) continue;
    ++existence;
    const bool p2 = in_phi2(phi, a1, a2, F1, F2, F3, R4, R5);
    const bool p1 = in_phi1(phi, a1, a2, F3);
    if (p2 && !p1) ++phi2_not_phi1;
    if (p1 && !in_phi0(phi, a1, a2, F1, F2, F3)) ++phi1_not_phi0;
    // Under the nominal capacities ā_k < F_k, merge sufficiency reduces to Phi1.
    if (a1 < F1 && a2 < F2 && merge_sufficient(phi, a1, a2, F1, F2, F3) != p1) ++sufficient_mismatch;
  }
  CHECK(existence > 500);
  CHECK(phi2_not_phi1 == 0);
  CHECK(phi1_not_phi0 == 0);
  CHECK(sufficient_mismatch == 0);
}
