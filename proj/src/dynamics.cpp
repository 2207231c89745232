#include "nhmpc/dynamics.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace nhmpc {

namespace {

void require_finite(std::initializer_list<double> values, const char* where) {
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(where) + ": non-finite input");
  }
}

void require_positive_step(double delta, const char* where) {
  if (!(delta > 0.0)) throw std::invalid_argument(std::string(where) + ": delta must be positive");
}

}  // namespace

BoxConstraints::BoxConstraints(Eigen::VectorXd lo, Eigen::VectorXd hi)
    : lower(std::move(lo)), upper(std::move(hi)) {
  if (lower.size() != upper.size()) throw std::invalid_argument("box: dimension mismatch");
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    if (lower[i] > upper[i]) throw std::invalid_argument("box: lower exceeds upper");
  }
}

bool BoxConstraints::contains(const Eigen::VectorXd& v, double tol) const {
  return violation(v) <= tol;
}

Eigen::VectorXd BoxConstraints::clamp(const Eigen::VectorXd& v) const {
  return v.cwiseMax(lower).cwiseMin(upper);
}

double BoxConstraints::violation(const Eigen::VectorXd& v) const {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    worst = std::max({worst, lower[i] - v[i], v[i] - upper[i]});
  }
  return worst;
}

RobotState exact_step(const RobotState& s, const ControlInput& u, double delta) {
  require_finite({s.x, s.y, s.theta, u.v, u.omega, delta}, "exact_step");
  require_positive_step(delta, "exact_step");
  // v/w (sin(th + dw) - sin th) rewritten as a chord along the mid heading,
  // which keeps the rotational branch accurate for tiny w. Below OMEGA_EPS the
  // chord factor is replaced by its limit v*dt.
  const double half = 0.5 * delta * u.omega;
  const double chord = std::abs(u.omega) < OMEGA_EPS ? delta * u.v : delta * u.v * std::sin(half) / half;
  const double mid = s.theta + half;
  return {s.x + chord * std::cos(mid), s.y + chord * std::sin(mid), s.theta + delta * u.omega};
}

RobotState euler_step(const RobotState& s, const ControlInput& u, double delta) {
  require_finite({s.x, s.y, s.theta, u.v, u.omega, delta}, "euler_step");
  require_positive_step(delta, "euler_step");
  return {s.x + delta * u.v * std::cos(s.theta), s.y + delta * u.v * std::sin(s.theta),
          s.theta + delta * u.omega};
}

RelState rel_step(const RelState& s, const RelVelocities& own, const RelVelocities& observer,
                  double delta, RelMode mode) {
  require_finite({s.x, s.y, s.z, s.theta, own.vx, own.vy, own.vz, own.wz, observer.vx, observer.vy,
                  observer.vz, observer.wz, delta},
                 "rel_step");
  require_positive_step(delta, "rel_step");
  const double c = std::cos(s.theta);
  const double sn = std::sin(s.theta);
  RelState next;
  next.x = s.x + delta * (own.vx * c - own.vy * sn - observer.vx + s.y * observer.wz);
  next.y = s.y + delta * (own.vy * c + own.vx * sn - observer.vy - s.x * observer.wz);
  next.z = mode == RelMode::Ground ? 0.0 : s.z + delta * (own.vz - observer.vz);
  next.theta = s.theta + delta * (own.wz - observer.wz);
  return next;
}

Measurement measure(const RelState& s) {
  const double planar = std::hypot(s.x, s.y);
  const double range = std::hypot(planar, s.z);
  if (range == 0.0) throw std::domain_error("measure: bearing undefined at zero relative position");
  return {range, std::atan2(s.y, s.x), std::atan2(s.z, planar)};
}

RelState inverse_measure(const Measurement& m) {
  const double planar = m.r * std::cos(m.alpha);
  return {planar * std::cos(m.phi), planar * std::sin(m.phi), m.r * std::sin(m.alpha), 0.0};
}

double wrap_to_pi(double angle) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double wrapped = std::fmod(angle + std::numbers::pi, two_pi);
  if (wrapped <= 0.0) wrapped += two_pi;
  return wrapped - std::numbers::pi;
}

Eigen::Vector3d to_vec(const RobotState& s) { return {s.x, s.y, s.theta}; }
RobotState robot_state_from(const Eigen::Ref<const Eigen::VectorXd>& v) { return {v[0], v[1], v[2]}; }
Eigen::Vector4d to_vec(const RelState& s) { return {s.x, s.y, s.z, s.theta}; }
RelState rel_state_from(const Eigen::Ref<const Eigen::VectorXd>& v) { return {v[0], v[1], v[2], v[3]}; }
Eigen::Vector4d to_vec(const RelVelocities& u) { return {u.vx, u.vy, u.vz, u.wz}; }
RelVelocities rel_velocities_from(const Eigen::Ref<const Eigen::VectorXd>& v) {
  return {v[0], v[1], v[2], v[3]};
}
Eigen::Vector3d to_vec(const Measurement& m) { return {m.r, m.phi, m.alpha}; }

}  // namespace nhmpc
