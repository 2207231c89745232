#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "nhmpc/dmpc.hpp"

using namespace nhmpc;

TEST_CASE("quantization and cell centers") {
  const auto g = GridSpec::make(2.0, 6.0, 6.0);
  CHECK(g.a_max == 6);
  CHECK(g.b_max == 6);
  CHECK(quantize(g, -6.0, -6.0) == CellIndex{0, 0});
  CHECK(quantize(g, 0.0, 0.0) == CellIndex{3, 3});
  CHECK(quantize(g, 6.0, 6.0) == CellIndex{5, 5});
  CHECK_THROWS(quantize(g, 6.01, 0.0));
  CHECK_THROWS(quantize(g, 0.0, std::nan("")));

  const Eigen::Vector2d c00 = cell_center(g, {0, 0});
  CHECK(c00.x() == doctest::Approx(-5.0));
  CHECK(c00.y() == doctest::Approx(-5.0));
  CHECK_THROWS(cell_center(g, {6, 0}));
  CHECK_THROWS(cell_center(g, {0, -1}));

  CHECK_THROWS(GridSpec::make(0.7, 6.0, 6.0));
  CHECK(GridSpec::make(1.5, 6.0, 6.0).a_max == 8);
}

TEST_CASE("quantization round trips") {
  std::mt19937_64 rng(7);
  for (double cell : {0.5, 1.0, 1.5, 2.0}) {
    const auto g = GridSpec::make(cell, 6.0, 6.0);
    for (int a = 0; a < g.a_max; ++a) {
      for (int b = 0; b < g.b_max; ++b) {
        const Eigen::Vector2d c = cell_center(g, {a, b});
        CHECK(quantize(g, c.x(), c.y()) == CellIndex{a, b});
      }
    }
    std::uniform_real_distribution<double> pos(-6.0, 6.0);
    for (int i = 0; i < 1000; ++i) {
      const double x = pos(rng), y = pos(rng);
      const Eigen::Vector2d c = cell_center(g, quantize(g, x, y));
      CHECK(std::max(std::abs(x - c.x()), std::abs(y - c.y())) <= cell / 2 + 1e-12);
    }
  }
}

TEST_CASE("safety margin") {
  const auto g = GridSpec::make(0.5, 6.0, 6.0);
  CHECK(minimal_cell_width(1.0, 0.5) == 0.5);
  CHECK(safety_margin(g, 1.0, 0.5, 0.5) == doctest::Approx(0.5 + 1.0 + 0.5 * std::sqrt(0.5) + 0.001));
  CHECK(safety_margin(g, 1.0, 0.5, 0.5) == doctest::Approx(1.8546).epsilon(1e-4));
  CHECK(safety_margin(g, 1.0, 0.5, 0.0) == doctest::Approx(0.5 + 1.0 + 0.5 * std::sqrt(0.5) + 0.001));
  const auto wide = GridSpec::make(2.0, 6.0, 6.0);
  CHECK(safety_margin(wide, 1.0, 0.5, 0.0) == doctest::Approx(2.0 + 1.0 + 0.5 * std::sqrt(0.5) + 0.001));
  CHECK_THROWS(safety_margin(g, 1.0, 1.0, 0.5));
  CHECK_THROWS(safety_margin(g, 1.0, 0.5, -1.0));
}

TEST_CASE("squircle constraint") {
  const double psi = 1.8546;
  const double axis = psi / std::pow(2.0, 0.75);
  const Eigen::Vector2d center(1.0, -2.0);
  // The smoothing of |.| shifts the boundary by O(sqrt(1e-6)).
  CHECK(std::abs(squircle_constraint(center + Eigen::Vector2d(axis, 0), center, psi)) < 1e-3 * psi);
  CHECK(std::abs(squircle_constraint(center + Eigen::Vector2d(0, -axis), center, psi)) < 1e-3 * psi);
  const double diag = psi / std::sqrt(2.0);
  const Eigen::Vector2d corner = center + Eigen::Vector2d(diag, diag) / std::sqrt(2.0);
  CHECK(std::abs(squircle_constraint(corner, center, psi)) < 1e-3 * psi);
  CHECK(squircle_constraint(center + Eigen::Vector2d(10 * psi, 0), center, psi) < 0.0);
  CHECK(squircle_constraint(center, center, psi) == doctest::Approx(axis));
  CHECK_THROWS(squircle_constraint(center, center, 0.0));

  // The square of side psi sits inside the squircle.
  for (int i = 0; i < 64; ++i) {
    const double t = -psi / 2 + psi * i / 63.0;
    CHECK(squircle_constraint(center + Eigen::Vector2d(psi / 2, t), center, psi) > -1e-3 * psi);
  }
}

namespace {

OccupancyGrid straight_grid(std::uint32_t first, int horizon, std::uint32_t a0) {
  OccupancyGrid g;
  for (int k = 0; k <= horizon; ++k) g.push_back({first + static_cast<std::uint32_t>(k), a0 + k, 3});
  return g;
}

}  // namespace

TEST_CASE("differential encoding hand examples") {
  const int N = 5;
  DiffEncoder enc;
  DiffDecoder dec(N);

  const auto g0 = straight_grid(0, N, 0);
  const auto u0 = enc.encode(g0);
  CHECK(u0.size() == N + 1);
  CHECK(dec.decode(u0) == g0);

  // Same cells, one step later: only the new tail is new.
  OccupancyGrid g1(g0.begin() + 1, g0.end());
  g1.push_back({static_cast<std::uint32_t>(N + 1), N + 1, 3});
  const auto u1 = enc.encode(g1);
  REQUIRE(u1.size() == 1);
  CHECK(u1[0] == Occupancy{static_cast<std::uint32_t>(N + 1), N + 1, 3});
  CHECK(dec.decode(u1) == g1);

  // Full re-plan.
  OccupancyGrid g2;
  for (int k = 0; k <= N; ++k) g2.push_back({static_cast<std::uint32_t>(2 + k), 20, static_cast<std::uint32_t>(k)});
  const auto u2 = enc.encode(g2);
  CHECK(u2.size() == N + 1);
  CHECK(dec.decode(u2) == g2);

  // A lost tail leaves a short grid.
  CHECK_THROWS_AS(dec.decode({}), std::runtime_error);
}

TEST_CASE("wire format") {
  const OccupancyGrid update{{1, 2, 3}, {0x01020304u, 0, 255}};
  const auto bytes = serialize(update);
  REQUIRE(bytes.size() == 4 + 2 * 12);
  CHECK(bytes[0] == 2);
  CHECK(bytes[1] == 0);
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == 2);
  CHECK(bytes[12] == 3);
  CHECK(bytes[16] == 0x04);
  CHECK(bytes[19] == 0x01);
  CHECK(bytes[24] == 255);
  CHECK(deserialize(bytes) == update);
  CHECK(deserialize(serialize({})).empty());

  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS(deserialize(truncated));
  CHECK_THROWS(deserialize(std::vector<std::uint8_t>{1, 0}));
}

TEST_CASE("codec is lossless on random prediction streams") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> horizon_dist(1, 12);
  std::uniform_int_distribution<int> len_dist(1, 30);
  std::uniform_int_distribution<int> cell(0, 23);
  std::uniform_int_distribution<int> move(-1, 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::size_t sent = 0, full = 0;
  for (int stream = 0; stream < 10000; ++stream) {
    const int N = horizon_dist(rng);
    const double replan = coin(rng);
    DiffEncoder enc;
    DiffDecoder dec(static_cast<std::size_t>(N));
    OccupancyGrid prev;
    const int length = len_dist(rng);
    for (int n = 0; n < length; ++n) {
      OccupancyGrid cur;
      for (int k = 0; k <= N; ++k) {
        const auto step = static_cast<std::uint32_t>(n + k);
        if (!prev.empty() && k < N && coin(rng) > replan) {
          cur.push_back(prev[static_cast<std::size_t>(k + 1)]);
        } else {
          const Occupancy base = cur.empty() ? Occupancy{step, static_cast<std::uint32_t>(cell(rng)),
                                                         static_cast<std::uint32_t>(cell(rng))}
                                             : cur.back();
          cur.push_back({step, static_cast<std::uint32_t>(std::clamp<int>(base.a + move(rng), 0, 23)),
                         static_cast<std::uint32_t>(std::clamp<int>(base.b + move(rng), 0, 23))});
        }
      }
      const auto update = enc.encode(cur);
      CHECK(update.size() <= static_cast<std::size_t>(N + 1));
      if (n == 0) CHECK(update.size() == static_cast<std::size_t>(N + 1));
      const auto rebuilt = dec.decode(deserialize(serialize(update)));
      if (rebuilt != cur) {
        FAIL("stream " << stream << " step " << n << " not reconstructed");
      }
      sent += update.size();
      full += cur.size();
      prev = cur;
    }
  }
  CHECK(sent < full);
}

TEST_CASE("single robot regulates without communication") {
  DmpcScenario sc = DmpcScenario::four_corners(0.5);
  sc.robots = {{{2.0, 1.0, std::numbers::pi / 2}, {0.0, 0.0, 0.0}}};
  const auto res = run_dmpc(sc);
  CHECK_FALSE(res.failure);
  CHECK(res.metrics.converged);
  CHECK(res.metrics.k_diff == 0);
  CHECK(res.metrics.k_full == 0);
  const auto& last = res.final_states[0];
  CHECK(std::hypot(std::hypot(last.x, last.y), last.theta) <= sc.threshold);
}

TEST_CASE("scenario validation") {
  DmpcScenario sc = DmpcScenario::four_corners(0.5);
  sc.robots[0].initial.x = 7.0;
  CHECK_THROWS(run_dmpc(sc));
  sc = DmpcScenario::four_corners(0.5);
  sc.grid = GridSpec::make(0.25, 6.0, 6.0);
  CHECK_THROWS(run_dmpc(sc));
  sc = DmpcScenario::four_corners(0.5);
  sc.robots.clear();
  CHECK_THROWS(run_dmpc(sc));
}

TEST_CASE("coupling constraints follow the other robots' timestamps") {
  DmpcScenario sc = DmpcScenario::four_corners(1.0, 3);
  const auto& g = sc.grid;
  // The other robot sits in cell (2, 2) until step 6 and is held there afterwards.
  OccupancyGrid other;
  for (std::uint32_t t = 4; t <= 6; ++t) other.push_back({t, 2, 2});
  const OcpSpec spec = dmpc_ocp(sc, 0, sc.robots[0].initial, {other}, 5);
  REQUIRE(spec.path_constraint_dim == 1);
  const Eigen::Vector2d c = cell_center(g, {2, 2});
  Eigen::VectorXd x(3), out(1);
  x << c.x(), c.y(), 0.0;
  for (int k = 1; k <= 3; ++k) {
    spec.path_constraints(x, k, out);
    CHECK(out[0] > 0.0);
  }
}

TEST_CASE("four robots swap corners at the finest grid") {
  const DmpcScenario sc = DmpcScenario::four_corners(0.5, 9);
  const auto res = run_dmpc(sc);
  REQUIRE_FALSE(res.failure);
  CHECK(res.metrics.converged);
  CHECK(res.metrics.n_sharp <= 55);
  CHECK(res.metrics.reduction_pct >= 60.0);
  CHECK(res.metrics.k_full == 4 * 10 * static_cast<std::size_t>(res.metrics.n_sharp));

  double prev_total = -1.0;
  bool individual_increase = false;
  for (std::size_t n = 0; n < res.steps.size(); ++n) {
    const auto& s = res.steps[n];
    CHECK(min_pairwise_distance(s.states) >= sc.d_min - 1e-3);
    for (std::size_t i = 0; i < s.broadcast.size(); ++i) {
      CHECK(s.broadcast[i] <= 10);
      if (n == 0) CHECK(s.broadcast[i] == 10);
      if (n > 0 && s.stage_costs[i] > res.steps[n - 1].stage_costs[i]) individual_increase = true;
    }
    double total = 0.0;
    for (double l : s.stage_costs) total += l;
    if (prev_total >= 0.0) CHECK(total <= 1.05 * prev_total);
    prev_total = total;
  }
  CHECK(individual_increase);
  CHECK(min_pairwise_distance(res.final_states) >= sc.d_min - 1e-3);
}
