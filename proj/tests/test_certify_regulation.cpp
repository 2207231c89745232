#include <doctest.h>

#include <cmath>
#include <numbers>

#include "nhmpc/certify_regulation.hpp"

using namespace nhmpc;
using std::numbers::pi;

TEST_CASE("maneuver step counts") {
  const auto p = CertificateParams::table_cell(1.0, 5.0);
  const auto m = maneuver_steps(p, 1.0);
  CHECK(m.k_star_n2 == 2);
  CHECK(m.l_star_n2 == 5);   // ceil(2 sqrt(2) / 0.6)
  CHECK(m.k_star_n1 == 4);   // pi / (pi/4)
  CHECK(m.l_star_n1 == 2);   // ceil(1 / 0.6)
  const auto fine = maneuver_steps(CertificateParams::table_cell(0.25, 5.0), 16.0);
  CHECK(fine.k_star_n2 == 8);
  CHECK(fine.k_star_n1 == 16);
  CHECK(fine.l_star_n1 == 14);  // ceil(2 / 0.15)
}

TEST_CASE("far maneuver coefficients") {
  const auto p = CertificateParams::table_cell(0.5, 2.0);
  const double s = 0.7;
  const auto c = coeffs_n2(p, s);
  const auto m = maneuver_steps(p, s);
  REQUIRE(c.size() == static_cast<size_t>(3 * m.k_star_n2 + m.l_star_n2));
  for (int i = 0; i < m.k_star_n2; ++i) CHECK(c[i] == 1.0);
  const double k4 = std::pow(m.k_star_n2, 4);
  CHECK(c[m.k_star_n2] == doctest::Approx(1 + p.q3 * std::pow(pi, 4) / (16 * k4 * s) / (2 * 0.125)));
  CHECK_THROWS(coeffs_n2(p, 0.0));

  // Far away the excess terms vanish and only the geometric drive part stays.
  const auto far = coeffs_n2(p, 1e12);
  for (int i = 0; i < m.l_star_n2; ++i) {
    const double left = static_cast<double>(m.l_star_n2 - i) / m.l_star_n2;
    CHECK(far[2 * m.k_star_n2 + i] == doctest::Approx(left * left));
  }
  CHECK(far.back() == doctest::Approx(0.0));
}

TEST_CASE("near maneuver coefficients") {
  const auto p = CertificateParams::table_cell(0.25, 5.0);
  const double s = 1.1;
  const auto c = coeffs_n1(p, s);
  const auto m = maneuver_steps(p, s);
  const int per_second = 4;
  REQUIRE(c.size() == static_cast<size_t>(m.k_star_n1 + m.l_star_n1 + 4 * per_second));
  const double ld = m.l_star_n1 * p.delta;
  CHECK(c[0] == doctest::Approx(1 + 1 / (2 * m.l_star_n1 * ld * ld * ld)));
  for (int i = 1; i < m.k_star_n1 + m.l_star_n1; ++i) CHECK(c[i] == 1.0);

  const double bound = std::pow(std::sqrt(s / p.q2) + 1.5, 4) / 64;
  const size_t base = static_cast<size_t>(m.k_star_n1 + m.l_star_n1);
  CHECK(c[base + 2 * per_second] == doctest::Approx(0.25 + (p.r2 + (16 * p.q1 + p.r1) * bound) / p.q2));
  const double last_anchor = c[base + 3 * per_second];
  for (int i = 1; i < per_second; ++i) CHECK(c[base + 3 * per_second + i] == last_anchor);
  CHECK(c[base + 1] - c[base] == doctest::Approx((p.q1 * bound + p.q3) / p.q2));
}

TEST_CASE("gamma accumulation") {
  const double ones[] = {1, 1, 1};
  const auto g1 = gamma_from_coeffs(ones);
  CHECK(gamma_at(g1, 2) == 2.0);
  CHECK(gamma_at(g1, 3) == 3.0);
  CHECK(gamma_at(g1, 10) == 3.0);

  const double mixed[] = {1, 0.2, 0.9};
  const auto g2 = gamma_from_coeffs(mixed);
  CHECK(gamma_at(g2, 2) == doctest::Approx(1.9));
  CHECK(gamma_at(g2, 3) == doctest::Approx(2.1));
  CHECK(gamma_at(g2, 50) == doctest::Approx(2.1));

  const double bad[] = {1, -0.1};
  CHECK_THROWS(gamma_from_coeffs(bad));
}

TEST_CASE("performance index") {
  const double trivial[] = {1.0, 1.0, 1.0};
  CHECK(alpha_n(trivial) == 1.0);

  // Geometric bounds c_n = 1.025 * 0.25^n.
  const double gamma2[] = {1.025 + 1.025 * 0.25};
  CHECK(gamma2[0] == doctest::Approx(1.28125));
  CHECK(alpha_n(gamma2) == doctest::Approx(0.9209).epsilon(5e-5 / 0.9209));

  // gamma_k = k sits exactly on the stability boundary.
  const double linear[] = {2, 3, 4, 5, 6};
  CHECK(std::abs(alpha_n(linear)) < ALPHA_TOL);

  // Long products do not overflow.
  std::vector<double> big(400, 50.0);
  CHECK(std::isfinite(alpha_n(big)));
  const double r = std::pow(0.98, 400);
  CHECK(alpha_n(big) == doctest::Approx(1.0 - 49.0 * r / (1.0 - r)).epsilon(1e-12));
}

TEST_CASE("table cells quoted in the text") {
  CHECK(minimal_horizon(CertificateParams::table_cell(1.0, 2.0)).n_hat == 12);
  CHECK(minimal_horizon(CertificateParams::table_cell(1.0, 10.0)).n_hat == 8);
  CHECK(minimal_horizon(CertificateParams::table_cell(0.25, 5.0)).n_hat == 37);
}

TEST_CASE("frozen horizon table") {
  // Produced by an independent re-implementation of the coefficient formulas
  // with the same s line search.
  const double deltas[] = {1.0, 0.5, 0.25, 0.1};
  const double q2s[] = {2, 5, 10, 100};
  const int expected[4][4] = {{12, 9, 8, 8}, {25, 19, 15, 15}, {48, 37, 29, 29}, {121, 91, 72, 70}};
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      CAPTURE(deltas[i]);
      CAPTURE(q2s[j]);
      CHECK(minimal_horizon(CertificateParams::table_cell(deltas[i], q2s[j])).n_hat == expected[i][j]);
    }
  }
}

TEST_CASE("certificate invariants") {
  for (double delta : {1.0, 0.5, 0.25}) {
    for (double q2 : {2.0, 5.0, 10.0, 100.0}) {
      const auto p = CertificateParams::table_cell(delta, q2);
      const auto cert = minimal_horizon(p);
      for (size_t i = 1; i < cert.gamma.size(); ++i) CHECK(cert.gamma[i] >= cert.gamma[i - 1]);
      for (size_t i = 0; i + 1 < cert.alpha.size(); ++i) CHECK(cert.alpha[i] <= ALPHA_TOL);
      CHECK(cert.alpha_n_hat > 0.0);
      CHECK(cert.alpha_n_hat <= 1.0);
      // All coefficients are ratios of weights.
      CHECK(minimal_horizon(p.scaled(10.0)).n_hat == cert.n_hat);
    }
  }
}

TEST_CASE("alpha approaches one beyond the minimal horizon") {
  for (double q2 : {2.0, 5.0, 10.0}) {
    const auto p = CertificateParams::table_cell(1.0, q2);
    const int n_hat = minimal_horizon(p).n_hat;
    const auto curve = alpha_curve(p, 200);
    for (int n = n_hat + 1; n <= 200; ++n) CHECK(curve.deficit[n - 2] < curve.deficit[n - 3]);
    CHECK(curve.alpha.back() >= 0.99);
    double prev = 0.0;
    for (double g : curve.gamma) {
      CHECK(g >= prev);
      prev = g;
    }
    CHECK(curve.gamma.back() < 20.0);
  }
}

TEST_CASE("s trend diagnostic") {
  // gamma^N2 never grows with s on the table grid; gamma^N1 may dip where the
  // integer drive length l* jumps, which is reported rather than asserted.
  for (double q2 : {2.0, 5.0, 10.0}) {
    const auto rep = s_monotonicity(CertificateParams::table_cell(1.0, q2), 6);
    CHECK(rep.samples > 100);
    CHECK(rep.n2_increases == 0);
    CHECK(rep.n1_decreases <= 3);
  }
}

TEST_CASE("invalid parameters") {
  auto p = CertificateParams::table_cell(1.0, 2.0);
  p.delta = 0.3;
  CHECK_THROWS(minimal_horizon(p));
  p = CertificateParams::table_cell(1.0, 2.0);
  p.r2 = 1.0;
  CHECK_THROWS(minimal_horizon(p));
  p = CertificateParams::table_cell(1.0, 2.0);
  p.q3 = 100.0;
  p.r2 = 0.05;
  HorizonSearchOptions tight;
  tight.n_cap = 5;
  CHECK_THROWS(minimal_horizon(p, tight));
}
