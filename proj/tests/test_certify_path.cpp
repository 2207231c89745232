#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "nhmpc/certify_path.hpp"

using namespace nhmpc;
using std::numbers::pi;

namespace {

PathCertificateParams standard(double q_hat = 20.0, double epsilon = 2.0) {
  PathWeights w;
  w.q_hat = q_hat;
  return PathCertificateParams::from_path(PathSpec::sine(), w, epsilon, 0.1);
}

}  // namespace

TEST_CASE("reference input along the path") {
  const auto path = PathSpec::sine();
  const auto stop = path_reference(path, -3.0, 0.0);
  CHECK(stop.v == 0.0);
  CHECK(stop.omega == 0.0);
  const auto at_end = path_reference(path, 0.0, 1.0);
  CHECK(at_end.v == doctest::Approx(std::sqrt(1.0 + 0.15 * 0.15)).epsilon(1e-12));
  CHECK(at_end.v == doctest::Approx(1.01119).epsilon(1e-5));
  CHECK(at_end.omega == doctest::Approx(0.0));

  const auto line = PathSpec::straight(-10.0, 2.0, 1.0, 3.0);
  const auto u = path_reference(line, -4.0, 1.0);
  CHECK(u.v == 1.0);
  CHECK(u.omega == 0.0);
}

TEST_CASE("largest admissible timing speed") {
  CHECK(g_hat(PathSpec::sine()) == doctest::Approx(3.9557).epsilon(1e-4));
  CHECK(g_hat(PathSpec::sine()) == doctest::Approx(4.0 / std::sqrt(1.0225)).epsilon(1e-9));
  CHECK(g_hat(PathSpec::straight(-10.0, 3.0, 1.0, 3.0)) == doctest::Approx(3.0));
  CHECK(g_hat(PathSpec::straight(-10.0, 2.0, 1.0, 3.0)) == doctest::Approx(2.0));

  // Curvy path where the turn-rate bound is active: omega_ref per unit g peaks at
  // |rho''| / (1 + rho'^2) and g_hat scales with the omega bound.
  auto curvy = PathSpec::sine(0.6, 2.0);
  curvy.input_box.upper[0] = curvy.input_box.upper[2] = 100.0;
  curvy.input_box.lower[0] = -100.0;
  double peak = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double l = -20.0 * (1.0 - i / 9999.0);
    const double s = 1.2 * std::cos(2.0 * l);
    peak = std::max(peak, std::abs(-2.4 * std::sin(2.0 * l)) / (1.0 + s * s));
  }
  const double wide = g_hat(curvy);
  CHECK(wide == doctest::Approx((pi / 2) / peak).epsilon(1e-9));
  curvy.input_box.upper[1] = pi / 4;
  curvy.input_box.lower[1] = -pi / 4;
  CHECK(g_hat(curvy) == doctest::Approx(wide / 2).epsilon(1e-9));
}

TEST_CASE("maneuver times") {
  const auto p = standard();
  CHECK(p.t_r == doctest::Approx(1.0));
  CHECK(p.t_l == doctest::Approx(std::sqrt(328.0) / 4.0));
  CHECK(p.t_g == doctest::Approx(5.055937104).epsilon(1e-8));
  PathWeights bad;
  bad.r2 = 0.01;
  CHECK_THROWS(PathCertificateParams::from_path(PathSpec::sine(), bad, 2.0, 0.1));
  CHECK_THROWS(PathCertificateParams::from_path(PathSpec::sine(), PathWeights{}, 25.0, 0.1));
}

TEST_CASE("growth coefficient pieces") {
  const auto p = standard();
  const auto& w = p.weights;
  CHECK(c_of_t(p, 0.0) == doctest::Approx(1 + w.q3 * pi * pi * 0.5 / (4 * p.t_r * p.t_r * w.q_hat * 4.0)));
  CHECK(c_of_t(p, 0.0) == doctest::Approx(1.000154212568767).epsilon(1e-12));
  CHECK(c_of_t(p, p.support_end()) == 0.0);
  CHECK(c_of_t(p, 1e3) == 0.0);
  // Verbatim last piece keeps (2 t_r)^2 at its right end.
  const double right = c_of_t(p, p.support_end() - 1e-9);
  CHECK(right == doctest::Approx((4 * p.t_r * p.t_r + w.r_hat / w.q_hat) / (p.t_g * p.t_g)).epsilon(1e-8));
  CHECK(right == doctest::Approx(0.1566748167823961).epsilon(1e-8));
  CHECK_THROWS(c_of_t(p, -1.0));
}

TEST_CASE("growth bound") {
  const auto p = standard();
  CHECK(growth_B(p, 0.0) == 0.0);
  CHECK(growth_B(p, 0.01) == 0.01);
  CHECK(growth_B(p, 20.0) == doctest::Approx(11.1116).epsilon(1e-5));
  CHECK(growth_B(p, 1e6) == growth_B(p, 20.0));
  const double cross = growth_crossover(p);
  CHECK(integral_c(p, cross) == doctest::Approx(cross).epsilon(1e-12));
  CHECK(cross > 10.0);
}

TEST_CASE("closed-form integral matches quadrature") {
  const auto p = standard(0.2, 1.0);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(0.0, 1.2 * p.support_end());
  const double knots[] = {p.t_r, p.t_r + p.t_l, 2 * p.t_r + p.t_l, p.support_end()};
  for (int i = 0; i < 100; ++i) {
    const double t = dist(rng);
    double numeric = 0.0;
    double from = 0.0;
    for (double k : knots) {
      const double to = std::min(k, t);
      if (to > from) numeric += adaptive_simpson([&](double s) { return c_of_t(p, s); }, from, to, 1e-12);
      from = std::max(from, to);
    }
    CHECK(integral_c(p, t) == doctest::Approx(numeric).epsilon(1e-8));
  }
}

TEST_CASE("shape invariants") {
  const auto p = standard(0.1, 0.5);
  double prev = 0.0;
  for (int i = 0; i <= 4000; ++i) {
    const double t = 0.01 * i;
    CHECK(c_of_t(p, t) >= 0.0);
    const double b = growth_B(p, t);
    CHECK(b >= prev);
    prev = b;
  }
  CHECK(prev < 1e3);
}

TEST_CASE("alpha for the identity bound vanishes") {
  const auto p = standard();
  // B(t) = t before the crossover, which makes both exponentials ratios of T.
  for (double horizon : {0.5, 2.0, 7.5}) CHECK(std::abs(alpha_T_delta(p, horizon, 0.1)) < PATH_ALPHA_TOL);
  CHECK_THROWS(alpha_T_delta(p, 0.1, 0.1));
}

TEST_CASE("alpha against the quadrature oracle") {
  const auto p = standard();
  CHECK(alpha_T_delta(p, 12.0, 0.1) == doctest::Approx(0.0734912729680951).epsilon(1e-7));
  CHECK(alpha_T_delta(p, 15.0, 0.1) == doctest::Approx(0.29411356306253134).epsilon(1e-7));
}

TEST_CASE("alpha nondecreasing in the horizon") {
  const auto sweep = alpha_sweep(standard(), 200);
  for (size_t i = 1; i < sweep.size(); ++i) CHECK(sweep[i].alpha >= sweep[i - 1].alpha - PATH_ALPHA_TOL);
  CHECK(sweep.back().alpha > 0.5);
}

TEST_CASE("minimal horizon trends") {
  CHECK(minimal_T(standard(0.1)) == doctest::Approx(32.5));
  CHECK(minimal_T(standard(0.2)) == doctest::Approx(21.8));
  CHECK(minimal_T(standard(20.0)) == doctest::Approx(11.0));
  CHECK(minimal_T(standard(20.0, 0.5)) == doctest::Approx(13.3));
  CHECK(minimal_T(standard(20.0, 1.0)) == doctest::Approx(11.7));
  CHECK(minimal_T(standard(20.0, 4.0)) == doctest::Approx(10.4));
  CHECK_THROWS(minimal_T(standard(), 50));
}
