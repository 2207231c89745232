#pragma once

#include <Eigen/Core>

namespace nhmpc {

// Below this turn rate the exact step uses its straight-line limit.
inline constexpr double OMEGA_EPS = 1e-8;

struct RobotState {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;  // not wrapped
};

struct ControlInput {
  double v = 0.0;
  double omega = 0.0;
};

// Pose of an observed robot expressed in the observing robot's frame.
struct RelState {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double theta = 0.0;
};

struct RelVelocities {
  double vx = 0.0;
  double vy = 0.0;
  double vz = 0.0;
  double wz = 0.0;
};

// Range, azimuth and elevation of an observed robot.
struct Measurement {
  double r = 0.0;
  double phi = 0.0;
  double alpha = 0.0;
};

struct BoxConstraints {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  BoxConstraints() = default;
  BoxConstraints(Eigen::VectorXd lo, Eigen::VectorXd hi);

  [[nodiscard]] Eigen::Index size() const { return lower.size(); }
  [[nodiscard]] bool contains(const Eigen::VectorXd& v, double tol = 0.0) const;
  [[nodiscard]] Eigen::VectorXd clamp(const Eigen::VectorXd& v) const;
  // Largest componentwise excursion outside the box (0 when inside).
  [[nodiscard]] double violation(const Eigen::VectorXd& v) const;
};

RobotState exact_step(const RobotState& s, const ControlInput& u, double delta);
RobotState euler_step(const RobotState& s, const ControlInput& u, double delta);

enum class RelMode { Aerial, Ground };

// One Euler step of the relative kinematics. `own` are the observed robot's
// body velocities, `observer` those of the observing robot.
RelState rel_step(const RelState& s, const RelVelocities& own, const RelVelocities& observer,
                  double delta, RelMode mode = RelMode::Aerial);

Measurement measure(const RelState& s);
RelState inverse_measure(const Measurement& m);

double wrap_to_pi(double angle);

Eigen::Vector3d to_vec(const RobotState& s);
RobotState robot_state_from(const Eigen::Ref<const Eigen::VectorXd>& v);
Eigen::Vector4d to_vec(const RelState& s);
RelState rel_state_from(const Eigen::Ref<const Eigen::VectorXd>& v);
Eigen::Vector4d to_vec(const RelVelocities& u);
RelVelocities rel_velocities_from(const Eigen::Ref<const Eigen::VectorXd>& v);
Eigen::Vector3d to_vec(const Measurement& m);

}  // namespace nhmpc
