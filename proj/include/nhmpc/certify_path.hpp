#pragma once

#include <functional>
#include <vector>

#include <Eigen/Core>

#include "nhmpc/dynamics.hpp"

namespace nhmpc {

// Path y = rho(x) for x = lambda in [lambda_bar, 0], heading atan(rho').
struct PathSpec {
  std::function<double(double)> rho;
  std::function<double(double)> d_rho;
  std::function<double(double)> dd_rho;
  double lambda_bar = -20.0;
  BoxConstraints state_box;  // x, y, theta (theta bounds may be infinite)
  BoxConstraints input_box;  // v, omega, g

  // rho = amplitude * sin(frequency * lambda) with the box setup used for the
  // path-following experiments.
  static PathSpec sine(double amplitude = 0.6, double frequency = 0.25);
  static PathSpec straight(double lambda_bar, double v_max, double omega_max, double g_max);

  void validate() const;
  [[nodiscard]] Eigen::Vector3d point(double lambda) const;
  [[nodiscard]] double v_bar() const;
  [[nodiscard]] double omega_bar() const;
  [[nodiscard]] double y_bar() const;
  [[nodiscard]] double g_bar() const;
};

ControlInput path_reference(const PathSpec& path, double lambda, double g);

double g_hat(const PathSpec& path, int grid_points = 10000);

struct PathWeights {
  double q1 = 1e4, q2 = 1e4, q3 = 0.01, q_hat = 20.0;
  double r1 = 0.1, r2 = 0.005, r_hat = 0.1;
};

struct PathCertificateParams {
  double epsilon = 2.0;
  double delta = 0.1;
  PathWeights weights;
  double t_r = 0.0;  // quarter turn
  double t_l = 0.0;  // straight drive to the end segment
  double t_g = 0.0;  // path traversal at g-hat
  double v_bar = 0.0;

  static PathCertificateParams from_path(const PathSpec& path, const PathWeights& w, double epsilon,
                                         double delta);
  void validate() const;
  // End of the support of c.
  [[nodiscard]] double support_end() const { return 2.0 * t_r + t_l + t_g; }
};

double c_of_t(const PathCertificateParams& p, double t);
// Closed-form running integral of c over [0, t].
double integral_c(const PathCertificateParams& p, double t);
double growth_B(const PathCertificateParams& p, double t);
// First t > 0 with integral_c(t) = t; B is the identity before it.
double growth_crossover(const PathCertificateParams& p);

// Integral of 1/B over [a, b], 0 < a <= b.
double inverse_growth_integral(const PathCertificateParams& p, double a, double b);
double alpha_T_delta(const PathCertificateParams& p, double horizon, double delta);

// alpha must exceed this to count as stabilizing; B(t) = t gives 0 up to roundoff.
inline constexpr double PATH_ALPHA_TOL = 1e-9;

double minimal_T(const PathCertificateParams& p, int step_cap = 10000);

struct AlphaSample {
  double horizon;
  double alpha;
};
std::vector<AlphaSample> alpha_sweep(const PathCertificateParams& p, int n_max);

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol);

}  // namespace nhmpc
