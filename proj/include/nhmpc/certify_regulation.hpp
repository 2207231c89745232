#pragma once

#include <span>
#include <string>
#include <vector>

namespace nhmpc {

struct CertificateParams {
  double delta = 1.0;  // sampling time; 1/delta must be an integer
  double q1 = 1.0, q2 = 1.0, q3 = 0.1;
  double r1 = 0.5, r2 = 0.05;
  double x_bar = 2.0, y_bar = 2.0;
  double v_bar = 0.6;
  double omega_bar = 0.7853981633974483;

  void validate() const;
  // Grid cell used throughout the horizon table: q1 = 1, q3 = 0.1,
  // r1 = q1 delta / 2, r2 = q3 delta / 2, X = [-2, 2]^2, U = [-0.6, 0.6] x [-pi/4, pi/4].
  static CertificateParams table_cell(double delta, double q2);
  [[nodiscard]] CertificateParams scaled(double factor) const;
  [[nodiscard]] int steps_per_second() const;
};

struct ManeuverSteps {
  int k_star_n2 = 0;
  int l_star_n2 = 0;
  int k_star_n1 = 0;
  int l_star_n1 = 0;
};

ManeuverSteps maneuver_steps(const CertificateParams& p, double s);

// Coefficient sequences of the far (turn, drive, turn) and near (sideways
// shuffle) maneuvers; entry n bounds l(x_u(n), u(n)) / l*(x0).
std::vector<double> coeffs_n2(const CertificateParams& p, double s);
std::vector<double> coeffs_n1(const CertificateParams& p, double s);

// Accumulated bounds: element i holds gamma_i = sum_{n<i} cbar_n for
// i = 0..c.size(); gamma stays constant beyond the last index.
std::vector<double> gamma_from_coeffs(std::span<const double> c);
double gamma_at(std::span<const double> gamma, int i);

// Performance index for gamma_2..gamma_N; -infinity when the denominator is
// not positive.
double alpha_n(std::span<const double> gamma_2_to_n);
// 1 - alpha_N without cancellation; stays informative once alpha rounds to 1.
double alpha_deficit(std::span<const double> gamma_2_to_n);

// alpha must exceed this to count as stabilizing (gamma_k = k gives 0 up to roundoff).
inline constexpr double ALPHA_TOL = 1e-9;

enum class SGrid { Linear, Geometric };

struct HorizonSearchOptions {
  SGrid grid = SGrid::Linear;
  double linear_step = 0.1;  // in units of q1
  int geometric_points = 400;
  double geometric_min = 1e-4;
  int n_cap = 500;
};

struct HorizonCertificate {
  std::vector<double> gamma;   // gamma_2 .. gamma_Nhat
  std::vector<double> alpha;   // alpha_2 .. alpha_Nhat
  std::vector<double> s_at;    // minimizing s for each N
  int n_hat = 0;
  double alpha_n_hat = 0.0;
  double s_opt = 0.0;
};

std::vector<double> s_grid(const CertificateParams& p, const HorizonSearchOptions& opts = {});

HorizonCertificate minimal_horizon(const CertificateParams& p, const HorizonSearchOptions& opts = {});

struct AlphaCurve {
  std::vector<double> gamma;    // gamma_2 .. gamma_nmax
  std::vector<double> alpha;    // alpha_2 .. alpha_nmax
  std::vector<double> deficit;  // 1 - alpha
};
// Continues the same search past N-hat up to n_max.
AlphaCurve alpha_curve(const CertificateParams& p, int n_max, const HorizonSearchOptions& opts = {});

struct MonotonicityReport {
  int samples = 0;
  int n2_increases = 0;  // gamma^N2 should not increase with s
  int n1_decreases = 0;  // gamma^N1 should not decrease with s
};
MonotonicityReport s_monotonicity(const CertificateParams& p, int horizon, const HorizonSearchOptions& opts = {});

}  // namespace nhmpc
