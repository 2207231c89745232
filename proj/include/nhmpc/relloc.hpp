#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nhmpc/dynamics.hpp"
#include "nhmpc/ocp.hpp"

namespace nhmpc {

using Vector8d = Eigen::Matrix<double, 8, 1>;

struct NoiseConfig {
  double sigma_r = 0.0167;
  double sigma_phi = 0.0175;
  double sigma_alpha = 0.0175;
  double sigma_v = 0.01;         // every linear odometry channel
  double sigma_omega = 0.0873;   // both yaw-rate channels
  Eigen::Vector4d process_sigma{0.01, 0.01, 0.01, 0.02};  // per step

  // Relative-measurement noise cases 1..3; odometry and process noise as above.
  static NoiseConfig table_case(int which);
  static NoiseConfig noiseless();
  void validate() const;
  [[nodiscard]] Eigen::Vector3d measurement_sigma() const;
  // Observed robot (vx, vy, vz, wz) followed by the observing robot's.
  [[nodiscard]] Vector8d input_sigma() const;
};

struct RelBoxes {
  BoxConstraints state;     // X
  BoxConstraints observed;  // U
  BoxConstraints observer;  // W

  // X = [0,6] x [-3,3] x [0,1] x R, U = W = [-0.25,0.6] x [0,0] x [-0.25,0.6] x [-0.7,0.7].
  static RelBoxes standard();
};

struct EstimatorConfig {
  double delta = 0.1;
  int horizon = 30;  // MHE window length N_E
  RelMode mode = RelMode::Aerial;
  NoiseConfig noise;
  RelBoxes boxes = RelBoxes::standard();
  // Spread assumed for the bootstrap estimate (position from one measurement, heading 0).
  Eigen::Vector4d initial_sigma{0.1, 0.1, 0.1, 1.0};
  OcpOptions ocp{.lsq = {.max_iterations = 50}};

  void validate() const;
  [[nodiscard]] Eigen::Matrix4d process_covariance() const;
};

// Position from one range/bearing/elevation sample, heading 0.
RelState bootstrap_estimate(const Measurement& y);

struct RelJacobians {
  Eigen::Matrix4d state;                  // d f / d x
  Eigen::Matrix<double, 4, 8> inputs;     // d f / d (u, w)
};
RelJacobians rel_step_jacobians(const RelState& x, const RelVelocities& u, const RelVelocities& w, double delta,
                                RelMode mode);
Eigen::Matrix<double, 3, 4> measurement_jacobian(const RelState& x);

// Measurement residual with the azimuth difference wrapped.
Eigen::Vector3d measurement_error(const RelState& x, const Measurement& y);

struct EkfState {
  Eigen::Vector4d mean;
  Eigen::Matrix4d covariance;
};

EkfState ekf_init(const EstimatorConfig& cfg, const Measurement& y0);
// Prediction with the measured inputs of the last period, then the update with y.
EkfState ekf_step(const EstimatorConfig& cfg, const EkfState& s, const RelVelocities& u_meas,
                  const RelVelocities& w_meas, const Measurement& y);

struct MheWindow {
  std::vector<Measurement> outputs;  // n + 1 samples
  std::vector<Vector8d> inputs;      // n measured (u, w)
  Eigen::Vector4d anchor = Eigen::Vector4d::Zero();
  Eigen::Vector4d arrival_weight = Eigen::Vector4d::Zero();  // diagonal of A
  Eigen::Vector3d output_weight = Eigen::Vector3d::Ones();   // diagonal of B
  Vector8d input_weight = Vector8d::Ones();                  // diagonal of C
};

// Decision: window-start state (initial guess x_start) and the n input pairs.
OcpSpec mhe_ocp(const EstimatorConfig& cfg, const MheWindow& window, const Eigen::Vector4d& x_start);

struct MheEstimate {
  RelState state;
  // Filter-style covariance of `state`: the arrival covariance carried through the window.
  Eigen::Matrix4d covariance = Eigen::Matrix4d::Identity();
  int window = 0;  // inputs in the window; 0 for the bootstrap
  SolveStatus status = SolveStatus::Converged;
  int iterations = 0;
  bool held = false;  // solver failed and the previous estimate was kept
};

class MovingHorizonEstimator {
 public:
  explicit MovingHorizonEstimator(EstimatorConfig cfg);

  MheEstimate start(const Measurement& y0);
  // Inputs measured over the last period and the new output sample.
  MheEstimate update(const RelVelocities& u_meas, const RelVelocities& w_meas, const Measurement& y);

  [[nodiscard]] const Eigen::Vector4d& arrival_weight() const { return arrival_weight_; }
  [[nodiscard]] const Eigen::Vector4d& anchor() const { return anchor_; }
  [[nodiscard]] int window() const { return static_cast<int>(inputs_.size()); }

 private:
  void slide(const Eigen::Vector4d& old_start, const Vector8d& first_inputs, const Eigen::Vector4d& new_start);
  [[nodiscard]] Eigen::Matrix4d window_covariance(const MatrixXd& trajectory, const MatrixXd& controls) const;

  EstimatorConfig cfg_;
  std::vector<Measurement> outputs_;
  std::vector<Vector8d> inputs_;
  Eigen::Vector4d anchor_ = Eigen::Vector4d::Zero();
  Eigen::Matrix4d anchor_cov_ = Eigen::Matrix4d::Identity();
  Eigen::Vector4d arrival_weight_ = Eigen::Vector4d::Ones();
  Eigen::Vector4d start_guess_ = Eigen::Vector4d::Zero();
  MatrixXd input_guess_;
  MheEstimate last_;
  bool started_ = false;
};

// x = cx + ax sin(f t), y = cy + ay cos(f t), z constant, in the observing robot's frame.
struct SinusoidReference {
  double cx = 0.0, ax = 0.0, cy = 0.0, ay = 0.0, freq = 0.0, z = 0.5;

  [[nodiscard]] Eigen::Vector3d position(double t) const;
  [[nodiscard]] Eigen::Vector3d velocity(double t) const;
  [[nodiscard]] Eigen::Vector3d acceleration(double t) const;
};

struct TrackingReference {
  RelState state;
  RelVelocities input;
};
// Heading and body speeds that make the observed robot follow the reference
// while the observer moves with constant speeds w.
TrackingReference reference_at(const SinusoidReference& ref, double t, const RelVelocities& observer);

struct ObservedRobot {
  SinusoidReference reference;
  RelState initial;
};

struct MrsScenario {
  std::vector<ObservedRobot> robots;
  RelVelocities observer;
  RelMode mode = RelMode::Aerial;
  double delta = 0.2;
  double duration = 75.0;
  int estimation_horizon = 20;
  int control_horizon = 20;
  Eigen::Vector4d q{10.0, 10.0, 10.0, 0.1};
  Eigen::Vector4d r{25.0, 25.0, 25.0, 25.0};
  Eigen::Vector4d p{50.0, 50.0, 50.0, 0.5};
  double r_c = 0.225;
  double r_p = 0.3;
  // Extra clearance (m) the controller keeps on top of the collision radii.
  double collision_margin = 0.1;
  RelBoxes boxes = RelBoxes::standard();
  NoiseConfig noise = NoiseConfig::table_case(2);
  Eigen::Vector4d estimator_initial_sigma{0.1, 0.1, 0.1, 1.0};
  std::uint64_t seed = 1;
  OcpOptions mhe_ocp{.lsq = {.max_iterations = 50}};
  OcpOptions mpc_ocp{.lsq = {.max_iterations = 30}};

  // Reference set 1 (straight observer) or 2 (circling observer).
  static MrsScenario table_case(int which);
  void validate() const;
  [[nodiscard]] int steps() const;
  [[nodiscard]] EstimatorConfig estimator_config() const;
};

// Stacked OCP of all observed robots from x_hat at time t.
OcpSpec tracking_ocp(const MrsScenario& sc, const std::vector<RelState>& x_hat, double t);

// g1 (pairs of observed robots) followed by g2 (each observed robot vs the observer); <= 0 is safe.
VectorXd collision_constraints(const MrsScenario& sc, const std::vector<RelState>& states);

struct TrackingResult {
  std::vector<RelVelocities> controls;
  MatrixXd plan;  // stacked controls over the horizon
  SolveStatus status = SolveStatus::Converged;
  bool failed = false;
};
TrackingResult tracking_mpc(const MrsScenario& sc, const std::vector<RelState>& x_hat, double t,
                            const std::optional<MatrixXd>& warm = std::nullopt);

struct MrsStep {
  double t = 0.0;
  std::vector<RelState> truth;
  std::vector<RelState> estimate;
  std::vector<Eigen::Vector4d> estimate_sigma;  // square roots of the covariance diagonal
  std::vector<RelState> reference;
  std::vector<RelVelocities> controls;
  SolveStatus mpc_status = SolveStatus::Converged;
  bool mhe_held = false;
};

struct MrsReport {
  double steady_tracking_error = 0.0;  // max position error outside collision windows
  double steady_orientation_error = 0.0;
  double estimation_position_rmse = 0.0;
  double three_sigma_coverage = 1.0;  // worst robot/component share of steps inside +-3 sigma
  double max_constraint = 0.0;        // largest realized g1/g2
  bool controls_in_bounds = true;
  int collision_window_steps = 0;
  int steady_steps = 0;
};

struct MrsResult {
  std::vector<MrsStep> steps;
  MrsReport report;
};

struct MrsReportOptions {
  double settle_time = 20.0;        // initial transient excluded from the steady error
  double window_factor = 2.0;       // references closer than factor * (minimum distance)
  double window_release = 5.0;      // seconds kept after such an encounter
};

MrsResult run_mrs(const MrsScenario& sc, const MrsReportOptions& report_opts = {});
MrsReport mrs_report(const MrsScenario& sc, const std::vector<MrsStep>& steps, const MrsReportOptions& opts = {});

// Open-loop motion of one observed robot: constant forward speed and turn
// rate with a sinusoidal climb rate.
struct OpenLoopProfile {
  RelState initial;
  double vx = 0.3;
  double wz = 0.0;
  double vz_amplitude = 0.0;
  double vz_frequency = 0.0;

  [[nodiscard]] RelVelocities input(double t) const;
};

struct RmseScenario {
  std::vector<OpenLoopProfile> robots;
  RelVelocities observer;
  RelMode mode = RelMode::Aerial;
  double delta = 0.1;
  int steps = 80;
  int horizon = 30;
  int trials = 15;
  NoiseConfig noise = NoiseConfig::table_case(2);
  Eigen::Vector4d initial_sigma{0.1, 0.1, 0.1, 1.0};
  std::uint64_t seed = 1;
  OcpOptions mhe_ocp{.lsq = {.max_iterations = 50}};

  // Ground observer driving straight, three aerial robots at different heights.
  static RmseScenario comparison(int noise_case);
  void validate() const;
  [[nodiscard]] EstimatorConfig estimator_config() const;
};

struct RmseTable {
  std::vector<double> mhe_position, ekf_position;        // per step, pooled over robots and trials
  std::vector<double> mhe_orientation, ekf_orientation;  // wrapped heading error
  double mhe_position_mean = 0.0, ekf_position_mean = 0.0;
  double mhe_orientation_mean = 0.0, ekf_orientation_mean = 0.0;
  int mhe_held = 0;
};

RmseTable rmse_harness(const RmseScenario& sc);

// First step at which `series` is at or below `level`; -1 if never.
int first_step_below(const std::vector<double>& series, double level);

}  // namespace nhmpc
