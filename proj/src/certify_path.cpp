#include "nhmpc/certify_path.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace nhmpc {

namespace {

using std::numbers::pi;
constexpr double inf = std::numeric_limits<double>::infinity();

double cube(double x) { return x * x * x; }

double simpson_step(const std::function<double(double)>& f, double a, double fa, double m, double fm, double b,
                    double fb, double whole, double tol, int depth) {
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double diff = left + right - whole;
  if (depth <= 0 || std::abs(diff) <= 15.0 * tol) return left + right + diff / 15.0;
  return simpson_step(f, a, fa, lm, flm, m, fm, left, 0.5 * tol, depth - 1) +
         simpson_step(f, m, fm, rm, frm, b, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol) {
  if (b == a) return 0.0;
  const double m = 0.5 * (a + b);
  const double fa = f(a);
  const double fm = f(m);
  const double fb = f(b);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_step(f, a, fa, m, fm, b, fb, whole, tol, 50);
}

PathSpec PathSpec::sine(double amplitude, double frequency) {
  PathSpec p;
  p.rho = [=](double l) { return amplitude * std::sin(frequency * l); };
  p.d_rho = [=](double l) { return amplitude * frequency * std::cos(frequency * l); };
  p.dd_rho = [=](double l) { return -amplitude * frequency * frequency * std::sin(frequency * l); };
  p.lambda_bar = -20.0;
  p.state_box = BoxConstraints(Eigen::Vector3d(-20.0, -1.0, -inf), Eigen::Vector3d(0.0, 1.0, inf));
  p.input_box = BoxConstraints(Eigen::Vector3d(-4.0, -pi / 2, 0.0), Eigen::Vector3d(4.0, pi / 2, 4.0));
  return p;
}

PathSpec PathSpec::straight(double lambda_bar, double v_max, double omega_max, double g_max) {
  PathSpec p;
  p.rho = [](double) { return 0.0; };
  p.d_rho = [](double) { return 0.0; };
  p.dd_rho = [](double) { return 0.0; };
  p.lambda_bar = lambda_bar;
  p.state_box = BoxConstraints(Eigen::Vector3d(lambda_bar, -1.0, -inf), Eigen::Vector3d(0.0, 1.0, inf));
  p.input_box = BoxConstraints(Eigen::Vector3d(-v_max, -omega_max, 0.0), Eigen::Vector3d(v_max, omega_max, g_max));
  return p;
}

void PathSpec::validate() const {
  if (!rho || !d_rho || !dd_rho) throw std::invalid_argument("path: rho and its derivatives are required");
  if (!(lambda_bar < 0.0)) throw std::invalid_argument("path: lambda_bar must be negative");
  if (state_box.size() != 3 || input_box.size() != 3) throw std::invalid_argument("path: box dimensions");
  if (!(input_box.upper[2] > 0.0) || input_box.lower[2] > 0.0) {
    throw std::invalid_argument("path: g range must be [0, g_bar] with g_bar > 0");
  }
  // Path inside the state box, checked on a grid.
  const int samples = 1000;
  for (int i = 0; i <= samples; ++i) {
    const double l = lambda_bar * (1.0 - static_cast<double>(i) / samples);
    const Eigen::Vector3d pt = point(l);
    if (state_box.violation(pt) > 1e-12) throw std::invalid_argument("path: leaves the state box");
  }
}

Eigen::Vector3d PathSpec::point(double lambda) const {
  return {lambda, rho(lambda), std::atan(d_rho(lambda))};
}

double PathSpec::v_bar() const { return std::max(std::abs(input_box.lower[0]), std::abs(input_box.upper[0])); }
double PathSpec::omega_bar() const {
  return std::max(std::abs(input_box.lower[1]), std::abs(input_box.upper[1]));
}
double PathSpec::y_bar() const { return std::max(std::abs(state_box.lower[1]), std::abs(state_box.upper[1])); }
double PathSpec::g_bar() const { return input_box.upper[2]; }

ControlInput path_reference(const PathSpec& path, double lambda, double g) {
  const double slope = path.d_rho(lambda);
  const double stretch = 1.0 + slope * slope;
  return {g * std::sqrt(stretch), g * path.dd_rho(lambda) / stretch};
}

double g_hat(const PathSpec& path, int grid_points) {
  if (grid_points < 2) throw std::invalid_argument("g_hat: need at least two grid points");
  double best = path.g_bar();
  // u_ref is linear in g, so every grid point yields an upper bound on g.
  const auto limit = [&](double per_unit, double lo, double hi) {
    if (per_unit > 0.0) best = std::min(best, hi / per_unit);
    if (per_unit < 0.0) best = std::min(best, lo / per_unit);
  };
  for (int i = 0; i < grid_points; ++i) {
    const double l = path.lambda_bar * (1.0 - static_cast<double>(i) / (grid_points - 1));
    const ControlInput unit = path_reference(path, l, 1.0);
    limit(unit.v, path.input_box.lower[0], path.input_box.upper[0]);
    limit(unit.omega, path.input_box.lower[1], path.input_box.upper[1]);
  }
  return std::max(best, 0.0);
}

PathCertificateParams PathCertificateParams::from_path(const PathSpec& path, const PathWeights& w, double epsilon,
                                                       double delta) {
  path.validate();
  PathCertificateParams p;
  p.epsilon = epsilon;
  p.delta = delta;
  p.weights = w;
  p.v_bar = path.v_bar();
  p.t_r = (pi / 2) / path.omega_bar();
  const double y = path.y_bar();
  const double gap = path.lambda_bar + epsilon;
  p.t_l = std::sqrt(4.0 * y * y + gap * gap) / p.v_bar;
  const double g = g_hat(path);
  if (!(g > 0.0)) throw std::invalid_argument("path certificate: g_hat must be positive");
  p.t_g = std::abs(path.lambda_bar) / g;
  if (!(epsilon < std::abs(path.lambda_bar))) throw std::invalid_argument("path certificate: epsilon too large");
  p.validate();
  return p;
}

void PathCertificateParams::validate() const {
  const auto& w = weights;
  for (double v : {epsilon, delta, w.q1, w.q2, w.q3, w.q_hat, w.r1, w.r2, w.r_hat, t_r, t_l, t_g, v_bar}) {
    if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("path certificate: parameters must be positive");
  }
  if (w.r2 > w.q3 / 2.0 * (1.0 + 1e-12)) throw std::invalid_argument("path certificate: r2 <= q3 / 2 violated");
}

double c_of_t(const PathCertificateParams& p, double t) {
  if (t < 0.0) throw std::invalid_argument("c_of_t: t must be nonnegative");
  const auto& w = p.weights;
  const double scale = w.q_hat * p.epsilon * p.epsilon;
  const double turn = w.q3 * pi * pi / (4.0 * p.t_r * p.t_r * scale);
  const double t1 = p.t_r;
  const double t2 = p.t_r + p.t_l;
  const double t3 = 2.0 * p.t_r + p.t_l;
  const double t4 = p.support_end();
  if (t < t1) return 1.0 + turn * (t * t + 6.0 * p.t_r * t + 0.5);
  if (t < t2) return 1.0 + (w.q3 * std::pow(1.5 * pi, 2) + w.r1 * p.v_bar * p.v_bar) / scale;
  if (t < t3) return 1.0 + turn * (std::pow(4.0 * p.t_r + p.t_l - t, 2) + 0.5);
  if (t < t4) return (std::pow(4.0 * p.t_r + p.t_l + p.t_g - t, 2) + w.r_hat / w.q_hat) / (p.t_g * p.t_g);
  return 0.0;
}

double integral_c(const PathCertificateParams& p, double t) {
  if (t < 0.0) throw std::invalid_argument("integral_c: t must be nonnegative");
  const auto& w = p.weights;
  const double scale = w.q_hat * p.epsilon * p.epsilon;
  const double turn = w.q3 * pi * pi / (4.0 * p.t_r * p.t_r * scale);
  const double bp[5] = {0.0, p.t_r, p.t_r + p.t_l, 2.0 * p.t_r + p.t_l, p.support_end()};
  const double turn_end = 4.0 * p.t_r + p.t_l;
  const double ramp_end = turn_end + p.t_g;

  double total = 0.0;
  for (int piece = 0; piece < 4; ++piece) {
    const double a = bp[piece];
    const double b = std::min(bp[piece + 1], t);
    if (b <= a) break;
    switch (piece) {
      case 0:
        total += (b - a) + turn * ((cube(b) - cube(a)) / 3.0 + 3.0 * p.t_r * (b * b - a * a) + 0.5 * (b - a));
        break;
      case 1:
        total += (b - a) * (1.0 + (w.q3 * std::pow(1.5 * pi, 2) + w.r1 * p.v_bar * p.v_bar) / scale);
        break;
      case 2:
        total += (b - a) + turn * ((cube(turn_end - a) - cube(turn_end - b)) / 3.0 + 0.5 * (b - a));
        break;
      default:
        total += ((cube(ramp_end - a) - cube(ramp_end - b)) / 3.0 + w.r_hat / w.q_hat * (b - a)) /
                 (p.t_g * p.t_g);
        break;
    }
  }
  return total;
}

double growth_B(const PathCertificateParams& p, double t) { return std::min(t, integral_c(p, t)); }

double growth_crossover(const PathCertificateParams& p) {
  // integral_c - t grows while c >= 1 and shrinks afterwards, so there is a
  // single sign change; c >= 1 on the first three pieces.
  const auto gap = [&](double t) { return integral_c(p, t) - t; };
  double lo = 2.0 * p.t_r + p.t_l;
  double hi = std::max(p.support_end(), integral_c(p, p.support_end())) + 1.0;
  if (gap(lo) < 0.0) throw std::logic_error("growth_crossover: c below one before the last piece");
  for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (gap(mid) >= 0.0 ? lo : hi) = mid;
  }
  return lo;
}

double inverse_growth_integral(const PathCertificateParams& p, double a, double b) {
  if (!(a > 0.0) || b < a) throw std::invalid_argument("inverse_growth_integral: need 0 < a <= b");
  const double cross = growth_crossover(p);
  const double end = p.support_end();
  const double plateau = integral_c(p, end);
  double sum = 0.0;
  if (a < cross) sum += std::log(std::min(b, cross) / a);  // B(t) = t
  // Piecewise smooth region between the crossover and the end of c's support.
  std::vector<double> knots = {cross, 2.0 * p.t_r + p.t_l, end};
  std::sort(knots.begin(), knots.end());
  for (size_t i = 0; i + 1 < knots.size(); ++i) {
    const double lo = std::max({a, cross, knots[i]});
    const double hi = std::min(b, knots[i + 1]);
    if (hi > lo) sum += adaptive_simpson([&](double t) { return 1.0 / growth_B(p, t); }, lo, hi, 1e-10);
  }
  const double tail_lo = std::max({a, cross, end});
  if (b > tail_lo) sum += (b - tail_lo) / plateau;
  return sum;
}

double alpha_T_delta(const PathCertificateParams& p, double horizon, double delta) {
  if (!(delta > 0.0) || !(delta < horizon)) throw std::invalid_argument("alpha_T_delta: need 0 < delta < T");
  const double whole = std::exp(-inverse_growth_integral(p, delta, horizon));
  const double last = std::exp(-inverse_growth_integral(p, horizon - delta, horizon));
  return 1.0 - whole * last / ((1.0 - whole) * (1.0 - last));
}

double minimal_T(const PathCertificateParams& p, int step_cap) {
  p.validate();
  for (int n = 2; n <= step_cap; ++n) {
    const double horizon = n * p.delta;
    if (alpha_T_delta(p, horizon, p.delta) > PATH_ALPHA_TOL) return horizon;
  }
  throw std::runtime_error("minimal_T: no stabilizing horizon within the step cap");
}

std::vector<AlphaSample> alpha_sweep(const PathCertificateParams& p, int n_max) {
  p.validate();
  std::vector<AlphaSample> out;
  for (int n = 2; n <= n_max; ++n) {
    const double horizon = n * p.delta;
    out.push_back({horizon, alpha_T_delta(p, horizon, p.delta)});
  }
  return out;
}

}  // namespace nhmpc
