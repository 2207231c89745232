#include "nhmpc/relloc.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

namespace nhmpc {

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();
constexpr double kJitter = 1e-9;
// Weights 1/sigma^2 are capped so that noiseless configurations stay finite.
constexpr double kMinSigma = 1e-4;

double inverse_variance(double sigma) {
  const double s = std::max(sigma, kMinSigma);
  return 1.0 / (s * s);
}

Eigen::Matrix4d symmetrized(const Eigen::Matrix4d& p) {
  Eigen::Matrix4d s = 0.5 * (p + p.transpose());
  if (Eigen::LLT<Eigen::Matrix4d>(s).info() != Eigen::Success) s += kJitter * Eigen::Matrix4d::Identity();
  return s;
}

RelVelocities head_of(const Vector8d& v) { return {v[0], v[1], v[2], v[3]}; }
RelVelocities tail_of(const Vector8d& v) { return {v[4], v[5], v[6], v[7]}; }

Vector8d stack(const RelVelocities& u, const RelVelocities& w) {
  Vector8d v;
  v << to_vec(u), to_vec(w);
  return v;
}

BoxConstraints stacked_inputs(const RelBoxes& b) {
  Vector8d lo, hi;
  lo << b.observed.lower, b.observer.lower;
  hi << b.observed.upper, b.observer.upper;
  return {lo, hi};
}

BoxConstraints estimator_state_box(const EstimatorConfig& cfg) {
  BoxConstraints box = cfg.boxes.state;
  if (cfg.mode == RelMode::Ground) box.lower[2] = box.upper[2] = 0.0;
  return box;
}

// Joseph-form measurement update of a covariance at x.
Eigen::Matrix4d updated_covariance(const Eigen::Matrix4d& p, const RelState& x, const Eigen::Vector3d& meas_var,
                                   Eigen::Matrix<double, 4, 3>* gain = nullptr) {
  const Eigen::Matrix<double, 3, 4> h = measurement_jacobian(x);
  const Eigen::Matrix3d r = meas_var.asDiagonal();
  Eigen::Matrix3d s = h * p * h.transpose() + r;
  s = 0.5 * (s + s.transpose());
  Eigen::LDLT<Eigen::Matrix3d> ldlt(s);
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14) {
    s += kJitter * Eigen::Matrix3d::Identity();
    ldlt.compute(s);
  }
  const Eigen::Matrix<double, 4, 3> k = ldlt.solve(h * p).transpose();
  const Eigen::Matrix4d ikh = Eigen::Matrix4d::Identity() - k * h;
  if (gain) *gain = k;
  return symmetrized(ikh * p * ikh.transpose() + k * r * k.transpose());
}

Eigen::Matrix<double, 8, 8> input_covariance(const NoiseConfig& n);

Eigen::Matrix4d propagated_covariance(const EstimatorConfig& cfg, const Eigen::Matrix4d& p, const RelState& x,
                                      const RelVelocities& u, const RelVelocities& w) {
  const RelJacobians j = rel_step_jacobians(x, u, w, cfg.delta, cfg.mode);
  return symmetrized(j.state * p * j.state.transpose() +
                     j.inputs * input_covariance(cfg.noise) * j.inputs.transpose() + cfg.process_covariance());
}

Eigen::Vector3d measurement_variance(const NoiseConfig& n) { return n.measurement_sigma().array().square(); }

Eigen::Matrix<double, 8, 8> input_covariance(const NoiseConfig& n) {
  return n.input_sigma().array().square().matrix().asDiagonal();
}

double sample(std::mt19937_64& rng, double sigma) {
  if (sigma <= 0.0) return 0.0;
  return std::normal_distribution<double>(0.0, sigma)(rng);
}

Measurement noisy_measurement(const RelState& x, const NoiseConfig& n, std::mt19937_64& rng) {
  Measurement y = measure(x);
  y.r += sample(rng, n.sigma_r);
  y.phi += sample(rng, n.sigma_phi);
  y.alpha += sample(rng, n.sigma_alpha);
  return y;
}

RelVelocities noisy_odometry(const RelVelocities& u, const NoiseConfig& n, std::mt19937_64& rng) {
  return {u.vx + sample(rng, n.sigma_v), u.vy + sample(rng, n.sigma_v), u.vz + sample(rng, n.sigma_v),
          u.wz + sample(rng, n.sigma_omega)};
}

RelState plant_step(const RelState& x, const RelVelocities& u, const RelVelocities& w, double delta, RelMode mode,
                    const NoiseConfig& n, std::mt19937_64& rng) {
  RelState next = rel_step(x, u, w, delta, mode);
  next.x += sample(rng, n.process_sigma[0]);
  next.y += sample(rng, n.process_sigma[1]);
  if (mode == RelMode::Aerial) next.z += sample(rng, n.process_sigma[2]);
  next.theta += sample(rng, n.process_sigma[3]);
  return next;
}

Eigen::Vector4d state_error(const RelState& est, const RelState& truth) {
  return {est.x - truth.x, est.y - truth.y, est.z - truth.z, wrap_to_pi(est.theta - truth.theta)};
}

}  // namespace

NoiseConfig NoiseConfig::table_case(int which) {
  NoiseConfig n;
  switch (which) {
    case 1:
      n.sigma_r = 0.0068;
      n.sigma_phi = n.sigma_alpha = 0.0036;
      break;
    case 2:
      n.sigma_r = 0.0167;
      n.sigma_phi = n.sigma_alpha = 0.0175;
      break;
    case 3:
      n.sigma_r = 0.1466;
      n.sigma_phi = n.sigma_alpha = 0.1;
      break;
    default:
      throw std::invalid_argument("noise case must be 1, 2 or 3");
  }
  return n;
}

NoiseConfig NoiseConfig::noiseless() {
  NoiseConfig n;
  n.sigma_r = n.sigma_phi = n.sigma_alpha = 0.0;
  n.sigma_v = n.sigma_omega = 0.0;
  n.process_sigma.setZero();
  return n;
}

void NoiseConfig::validate() const {
  for (double s : {sigma_r, sigma_phi, sigma_alpha, sigma_v, sigma_omega}) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw std::invalid_argument("noise: sigmas must be nonnegative");
  }
  if (!(process_sigma.array() >= 0.0).all() || !process_sigma.allFinite()) {
    throw std::invalid_argument("noise: process sigmas must be nonnegative");
  }
}

Eigen::Vector3d NoiseConfig::measurement_sigma() const { return {sigma_r, sigma_phi, sigma_alpha}; }

Vector8d NoiseConfig::input_sigma() const {
  Vector8d s;
  s << sigma_v, sigma_v, sigma_v, sigma_omega, sigma_v, sigma_v, sigma_v, sigma_omega;
  return s;
}

RelBoxes RelBoxes::standard() {
  RelBoxes b;
  b.state = BoxConstraints(Eigen::Vector4d(0.0, -3.0, 0.0, -inf), Eigen::Vector4d(6.0, 3.0, 1.0, inf));
  b.observed = BoxConstraints(Eigen::Vector4d(-0.25, 0.0, -0.25, -0.7), Eigen::Vector4d(0.6, 0.0, 0.6, 0.7));
  b.observer = b.observed;
  return b;
}

void EstimatorConfig::validate() const {
  if (!(delta > 0.0)) throw std::invalid_argument("estimator: delta must be positive");
  if (horizon < 1) throw std::invalid_argument("estimator: horizon must be >= 1");
  noise.validate();
  if (!(initial_sigma.array() > 0.0).all()) throw std::invalid_argument("estimator: initial sigmas must be positive");
}

Eigen::Matrix4d EstimatorConfig::process_covariance() const {
  Eigen::Vector4d var = noise.process_sigma.array().square();
  if (mode == RelMode::Ground) var[2] = 0.0;
  return var.asDiagonal();
}

RelState bootstrap_estimate(const Measurement& y) { return inverse_measure(y); }

RelJacobians rel_step_jacobians(const RelState& x, const RelVelocities& u, const RelVelocities& w, double delta,
                                RelMode mode) {
  const double c = std::cos(x.theta);
  const double s = std::sin(x.theta);
  RelJacobians j;
  j.state.setIdentity();
  j.state(0, 1) = delta * w.wz;
  j.state(0, 3) = delta * (-u.vx * s - u.vy * c);
  j.state(1, 0) = -delta * w.wz;
  j.state(1, 3) = delta * (-u.vy * s + u.vx * c);
  j.inputs.setZero();
  j.inputs(0, 0) = delta * c;
  j.inputs(0, 1) = -delta * s;
  j.inputs(1, 0) = delta * s;
  j.inputs(1, 1) = delta * c;
  j.inputs(2, 2) = delta;
  j.inputs(3, 3) = delta;
  j.inputs(0, 4) = -delta;
  j.inputs(0, 7) = delta * x.y;
  j.inputs(1, 5) = -delta;
  j.inputs(1, 7) = -delta * x.x;
  j.inputs(2, 6) = -delta;
  j.inputs(3, 7) = -delta;
  if (mode == RelMode::Ground) {
    j.state.row(2).setZero();
    j.inputs.row(2).setZero();
  }
  return j;
}

Eigen::Matrix<double, 3, 4> measurement_jacobian(const RelState& x) {
  const double rho2 = x.x * x.x + x.y * x.y;
  const double rho = std::sqrt(rho2);
  const double r2 = rho2 + x.z * x.z;
  const double r = std::sqrt(r2);
  if (rho == 0.0) throw std::domain_error("measurement_jacobian: azimuth undefined on the vertical axis");
  Eigen::Matrix<double, 3, 4> h = Eigen::Matrix<double, 3, 4>::Zero();
  h(0, 0) = x.x / r;
  h(0, 1) = x.y / r;
  h(0, 2) = x.z / r;
  h(1, 0) = -x.y / rho2;
  h(1, 1) = x.x / rho2;
  h(2, 0) = -x.z * x.x / (rho * r2);
  h(2, 1) = -x.z * x.y / (rho * r2);
  h(2, 2) = rho / r2;
  return h;
}

Eigen::Vector3d measurement_error(const RelState& x, const Measurement& y) {
  const Measurement h = measure(x);
  return {h.r - y.r, wrap_to_pi(h.phi - y.phi), h.alpha - y.alpha};
}

EkfState ekf_init(const EstimatorConfig& cfg, const Measurement& y0) {
  cfg.validate();
  RelState x = bootstrap_estimate(y0);
  Eigen::Vector4d var = cfg.initial_sigma.array().square();
  if (cfg.mode == RelMode::Ground) {
    x.z = 0.0;
    var[2] = 0.0;
  }
  return {to_vec(x), var.asDiagonal()};
}

EkfState ekf_step(const EstimatorConfig& cfg, const EkfState& s, const RelVelocities& u_meas,
                  const RelVelocities& w_meas, const Measurement& y) {
  const RelState x = rel_state_from(s.mean);
  const RelState pred = rel_step(x, u_meas, w_meas, cfg.delta, cfg.mode);
  const Eigen::Matrix4d p_pred = propagated_covariance(cfg, s.covariance, x, u_meas, w_meas);
  Eigen::Matrix<double, 4, 3> gain;
  EkfState out;
  out.covariance = updated_covariance(p_pred, pred, measurement_variance(cfg.noise), &gain);
  out.mean = to_vec(pred) - gain * measurement_error(pred, y);
  if (cfg.mode == RelMode::Ground) out.mean[2] = 0.0;
  return out;
}

OcpSpec mhe_ocp(const EstimatorConfig& cfg, const MheWindow& window, const Eigen::Vector4d& x_start) {
  const auto n = static_cast<int>(window.inputs.size());
  if (n < 1 || window.outputs.size() != static_cast<size_t>(n + 1)) {
    throw std::invalid_argument("mhe_ocp: need n >= 1 inputs and n + 1 outputs");
  }
  OcpSpec spec;
  spec.horizon = n;
  spec.state_dim = 4;
  spec.control_dim = 8;
  spec.x0 = x_start;
  const double delta = cfg.delta;
  const RelMode mode = cfg.mode;
  spec.dynamics = [delta, mode](const VectorXd& x, const VectorXd& u, int) {
    return VectorXd(to_vec(rel_step(rel_state_from(x), rel_velocities_from(u.head<4>()),
                                    rel_velocities_from(u.tail<4>()), delta, mode)));
  };
  const Eigen::Vector3d root_b = window.output_weight.cwiseSqrt();
  const Vector8d root_c = window.input_weight.cwiseSqrt();
  const auto outputs = window.outputs;
  const auto inputs = window.inputs;
  spec.stage_residual_dim = 11;
  spec.stage_residual = [=](const VectorXd& x, const VectorXd& u, int k, VectorXd& r) {
    const auto idx = static_cast<size_t>(k);
    r.head<3>() = root_b.cwiseProduct(measurement_error(rel_state_from(x), outputs[idx]));
    r.tail<8>() = root_c.cwiseProduct(u - inputs[idx]);
  };
  spec.terminal_residual_dim = 3;
  spec.terminal_residual = [=](const VectorXd& x, VectorXd& r) {
    r = root_b.cwiseProduct(measurement_error(rel_state_from(x), outputs.back()));
  };
  spec.state_box = estimator_state_box(cfg);
  spec.control_box = stacked_inputs(cfg.boxes);
  spec.free_initial_state = true;
  spec.initial_box = estimator_state_box(cfg);
  const Eigen::Vector4d root_a = window.arrival_weight.cwiseSqrt();
  const Eigen::Vector4d anchor = window.anchor;
  spec.initial_residual_dim = 4;
  spec.initial_residual = [=](const VectorXd& x, VectorXd& r) {
    Eigen::Vector4d e = x - anchor;
    e[3] = wrap_to_pi(e[3]);
    r = root_a.cwiseProduct(e);
  };
  spec.validate();
  return spec;
}

MovingHorizonEstimator::MovingHorizonEstimator(EstimatorConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

MheEstimate MovingHorizonEstimator::start(const Measurement& y0) {
  outputs_ = {y0};
  inputs_.clear();
  RelState x = bootstrap_estimate(y0);
  Eigen::Vector4d var = cfg_.initial_sigma.array().square();
  if (cfg_.mode == RelMode::Ground) {
    x.z = 0.0;
    var[2] = kJitter;
  }
  anchor_ = to_vec(x);
  anchor_cov_ = var.asDiagonal();
  arrival_weight_ = var.cwiseInverse();
  start_guess_ = anchor_;
  input_guess_.resize(8, 0);
  last_ = {};
  last_.state = x;
  last_.covariance = anchor_cov_;
  started_ = true;
  return last_;
}

void MovingHorizonEstimator::slide(const Eigen::Vector4d& old_start, const Vector8d& first_inputs,
                                   const Eigen::Vector4d& new_start) {
  const RelState x = rel_state_from(old_start);
  Eigen::Matrix4d p = anchor_cov_;
  try {
    p = updated_covariance(p, x, measurement_variance(cfg_.noise));
  } catch (const std::domain_error&) {
    // Degenerate geometry: skip the measurement part of the update.
  }
  p = propagated_covariance(cfg_, p, x, head_of(first_inputs), tail_of(first_inputs));
  anchor_cov_ = symmetrized(p + kJitter * Eigen::Matrix4d::Identity());
  arrival_weight_ = anchor_cov_.inverse().diagonal().cwiseMax(0.0);
  anchor_ = new_start;
}

Eigen::Matrix4d MovingHorizonEstimator::window_covariance(const MatrixXd& trajectory, const MatrixXd& controls) const {
  Eigen::Matrix4d p = anchor_cov_;
  const Eigen::Vector3d meas_var = measurement_variance(cfg_.noise);
  for (Eigen::Index k = 0; k < trajectory.cols(); ++k) {
    const RelState x = rel_state_from(trajectory.col(k));
    try {
      p = updated_covariance(p, x, meas_var);
    } catch (const std::domain_error&) {
    }
    if (k < controls.cols()) {
      const Vector8d u = controls.col(k);
      p = propagated_covariance(cfg_, p, x, head_of(u), tail_of(u));
    }
  }
  return p;
}

MheEstimate MovingHorizonEstimator::update(const RelVelocities& u_meas, const RelVelocities& w_meas,
                                           const Measurement& y) {
  if (!started_) throw std::logic_error("mhe: update before start");
  const Vector8d measured = stack(u_meas, w_meas);
  if (static_cast<int>(inputs_.size()) == cfg_.horizon) {
    // The oldest sample leaves the window; its information moves into the arrival cost.
    Eigen::Vector4d new_start = start_guess_;
    Vector8d first = input_guess_.cols() > 0 ? Vector8d(input_guess_.col(0)) : inputs_.front();
    if (input_guess_.cols() > 0) {
      new_start = to_vec(rel_step(rel_state_from(start_guess_), head_of(first), tail_of(first), cfg_.delta, cfg_.mode));
    }
    slide(start_guess_, first, new_start);
    outputs_.erase(outputs_.begin());
    inputs_.erase(inputs_.begin());
    start_guess_ = new_start;
    if (input_guess_.cols() > 0) input_guess_ = MatrixXd(input_guess_.rightCols(input_guess_.cols() - 1));
  }
  inputs_.push_back(measured);
  outputs_.push_back(y);
  const BoxConstraints input_box = stacked_inputs(cfg_.boxes);
  MatrixXd guess(8, input_guess_.cols() + 1);
  guess << input_guess_, input_box.clamp(measured);

  MheWindow window;
  window.outputs = outputs_;
  window.inputs = inputs_;
  window.anchor = anchor_;
  window.arrival_weight = arrival_weight_;
  for (int i = 0; i < 3; ++i) window.output_weight[i] = inverse_variance(cfg_.noise.measurement_sigma()[i]);
  for (int i = 0; i < 8; ++i) window.input_weight[i] = inverse_variance(cfg_.noise.input_sigma()[i]);

  MheEstimate est;
  est.window = static_cast<int>(inputs_.size());
  try {
    // While the window grows the heading is barely constrained, so every
    // quadrant is tried as a starting point.
    const bool growing = static_cast<int>(inputs_.size()) < cfg_.horizon;
    std::optional<OcpSolution> best;
    for (int quadrant = 0; quadrant < (growing ? 4 : 1); ++quadrant) {
      Eigen::Vector4d x_start = estimator_state_box(cfg_).clamp(start_guess_);
      x_start[3] = wrap_to_pi(x_start[3] + quadrant * std::numbers::pi / 2);
      OcpSolution candidate = solve(mhe_ocp(cfg_, window, x_start), guess, cfg_.ocp);
      if (!best || candidate.objective < best->objective) best = std::move(candidate);
    }
    const OcpSolution& sol = *best;
    start_guess_ = sol.trajectory.col(0);
    input_guess_ = sol.controls;
    est.state = rel_state_from(sol.trajectory.col(sol.trajectory.cols() - 1));
    est.covariance = window_covariance(sol.trajectory, sol.controls);
    est.status = sol.status;
    est.iterations = sol.iterations;
  } catch (const std::exception&) {
    // Hold the previous estimate, advanced with the measured inputs.
    est.state = rel_step(last_.state, u_meas, w_meas, cfg_.delta, cfg_.mode);
    est.covariance = propagated_covariance(cfg_, last_.covariance, last_.state, u_meas, w_meas);
    est.held = true;
    input_guess_ = guess;
  }
  last_ = est;
  return est;
}

Eigen::Vector3d SinusoidReference::position(double t) const {
  return {cx + ax * std::sin(freq * t), cy + ay * std::cos(freq * t), z};
}

Eigen::Vector3d SinusoidReference::velocity(double t) const {
  return {ax * freq * std::cos(freq * t), -ay * freq * std::sin(freq * t), 0.0};
}

Eigen::Vector3d SinusoidReference::acceleration(double t) const {
  return {-ax * freq * freq * std::sin(freq * t), -ay * freq * freq * std::cos(freq * t), 0.0};
}

TrackingReference reference_at(const SinusoidReference& ref, double t, const RelVelocities& w) {
  const Eigen::Vector3d p = ref.position(t);
  const Eigen::Vector3d v = ref.velocity(t);
  const Eigen::Vector3d a = ref.acceleration(t);
  // Body-frame forward velocity rotated into the observer frame, with vy = 0.
  const double cx = v.x() + w.vx - p.y() * w.wz;
  const double cy = v.y() + w.vy + p.x() * w.wz;
  const double dcx = a.x() - v.y() * w.wz;
  const double dcy = a.y() + v.x() * w.wz;
  const double speed2 = cx * cx + cy * cy;
  if (speed2 < 1e-12) throw std::domain_error("reference_at: reference requires zero forward speed");
  TrackingReference out;
  out.state = {p.x(), p.y(), p.z(), std::atan2(cy, cx)};
  out.input.vx = std::sqrt(speed2);
  out.input.vy = 0.0;
  out.input.vz = v.z() + w.vz;
  out.input.wz = (cx * dcy - cy * dcx) / speed2 + w.wz;
  return out;
}

MrsScenario MrsScenario::table_case(int which) {
  MrsScenario sc;
  if (which == 1) {
    sc.observer = {0.1, 0.0, 0.0, 0.0};
    sc.robots = {
        {{4.0, 1.5, 0.0, 1.5, 0.22, 0.5}, {5.0, -1.0, 0.2, 1.0}},
        {{2.0, 1.5, -1.0, 1.5, 0.13, 0.5}, {1.0, -2.0, 0.8, 0.5}},
        {{2.0, 1.5, 0.5, 1.5, 0.14, 0.5}, {3.0, 2.5, 0.3, -1.0}},
    };
  } else if (which == 2) {
    sc.observer = {0.1, 0.0, 0.0, -0.05};
    sc.robots = {
        {{4.0, 1.5, 0.0, 1.5, 0.2, 0.5}, {5.0, -1.0, 0.2, 1.0}},
        {{2.0, 1.5, -1.0, 1.5, 0.1, 0.5}, {1.0, -2.0, 0.8, 0.5}},
        {{2.0, 1.5, 0.5, 1.5, 0.12, 0.5}, {3.0, 2.5, 0.3, -1.0}},
    };
  } else {
    throw std::invalid_argument("mrs: reference case must be 1 or 2");
  }
  return sc;
}

int MrsScenario::steps() const { return static_cast<int>(std::lround(duration / delta)); }

void MrsScenario::validate() const {
  if (robots.empty()) throw std::invalid_argument("mrs: need at least one observed robot");
  if (!(delta > 0.0) || !(duration > 0.0)) throw std::invalid_argument("mrs: delta and duration must be positive");
  if (estimation_horizon < 1 || control_horizon < 1) throw std::invalid_argument("mrs: horizons must be >= 1");
  if (!(r_c > 0.0) || !(r_p > 0.0)) throw std::invalid_argument("mrs: radii must be positive");
  if (!(q.array() >= 0.0).all() || !(r.array() >= 0.0).all() || !(p.array() >= 0.0).all()) {
    throw std::invalid_argument("mrs: weights must be nonnegative");
  }
  noise.validate();
  if (!boxes.observer.contains(to_vec(observer), 1e-12)) throw std::invalid_argument("mrs: observer speeds outside W");
  for (const auto& robot : robots) {
    for (int n = 0; n <= steps(); ++n) {
      const TrackingReference ref = reference_at(robot.reference, n * delta, observer);
      if (!boxes.observed.contains(to_vec(ref.input), 1e-9)) {
        throw std::invalid_argument("mrs: reference speeds violate the input box");
      }
    }
  }
}

EstimatorConfig MrsScenario::estimator_config() const {
  EstimatorConfig cfg;
  cfg.delta = delta;
  cfg.horizon = estimation_horizon;
  cfg.mode = mode;
  cfg.noise = noise;
  cfg.boxes = boxes;
  cfg.initial_sigma = estimator_initial_sigma;
  cfg.ocp = mhe_ocp;
  return cfg;
}

namespace {

VectorXd clearance_constraints(const std::vector<RelState>& s, double pair_distance, double observer_distance) {
  const auto m = s.size();
  VectorXd g(static_cast<Eigen::Index>(m * (m - 1) / 2 + m));
  Eigen::Index row = 0;
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = i + 1; j < m; ++j) {
      const double d2 = (to_vec(s[i]).head<3>() - to_vec(s[j]).head<3>()).squaredNorm();
      g[row++] = 1.0 - d2 / (pair_distance * pair_distance);
    }
  }
  for (size_t i = 0; i < m; ++i) {
    const double d2 = to_vec(s[i]).head<3>().squaredNorm();
    g[row++] = 1.0 - d2 / (observer_distance * observer_distance);
  }
  return g;
}

}  // namespace

VectorXd collision_constraints(const MrsScenario& sc, const std::vector<RelState>& s) {
  return clearance_constraints(s, 2.0 * sc.r_c, sc.r_c + sc.r_p);
}

OcpSpec tracking_ocp(const MrsScenario& sc, const std::vector<RelState>& x_hat, double t) {
  const auto m = static_cast<Eigen::Index>(sc.robots.size());
  if (static_cast<Eigen::Index>(x_hat.size()) != m) throw std::invalid_argument("tracking_ocp: one estimate per robot");
  const int N = sc.control_horizon;
  OcpSpec spec;
  spec.horizon = N;
  spec.state_dim = 4 * m;
  spec.control_dim = 4 * m;
  spec.x0.resize(4 * m);
  for (Eigen::Index i = 0; i < m; ++i) spec.x0.segment<4>(4 * i) = to_vec(x_hat[static_cast<size_t>(i)]);

  const RelVelocities w = sc.observer;
  const double delta = sc.delta;
  const RelMode mode = sc.mode;
  spec.dynamics = [=](const VectorXd& x, const VectorXd& u, int) {
    VectorXd next(x.size());
    for (Eigen::Index i = 0; i < m; ++i) {
      next.segment<4>(4 * i) = to_vec(rel_step(rel_state_from(x.segment<4>(4 * i)),
                                               rel_velocities_from(u.segment<4>(4 * i)), w, delta, mode));
    }
    return next;
  };

  // References over the horizon: column k holds stacked states / inputs at t + k delta.
  MatrixXd ref_x(4 * m, N + 1), ref_u(4 * m, N + 1);
  for (int k = 0; k <= N; ++k) {
    for (Eigen::Index i = 0; i < m; ++i) {
      const TrackingReference r = reference_at(sc.robots[static_cast<size_t>(i)].reference, t + k * delta, w);
      ref_x.block<4, 1>(4 * i, k) = to_vec(r.state);
      ref_u.block<4, 1>(4 * i, k) = to_vec(r.input);
    }
  }
  const Eigen::Vector4d rq = sc.q.cwiseSqrt(), rr = sc.r.cwiseSqrt(), rp = sc.p.cwiseSqrt();
  auto state_residual = [m](const VectorXd& x, const VectorXd& ref, const Eigen::Vector4d& root, auto out) {
    for (Eigen::Index i = 0; i < m; ++i) {
      Eigen::Vector4d e = x.segment<4>(4 * i) - ref.segment<4>(4 * i);
      e[3] = wrap_to_pi(e[3]);
      out.template segment<4>(4 * i) = root.cwiseProduct(e);
    }
  };
  spec.stage_residual_dim = 8 * m;
  spec.stage_residual = [=](const VectorXd& x, const VectorXd& u, int k, VectorXd& r) {
    state_residual(x, ref_x.col(k), rq, r.head(4 * m));
    for (Eigen::Index i = 0; i < m; ++i) {
      r.segment<4>(4 * m + 4 * i) = rr.cwiseProduct(u.segment<4>(4 * i) - ref_u.block<4, 1>(4 * i, k));
    }
  };
  spec.terminal_residual_dim = 4 * m;
  spec.terminal_residual = [=](const VectorXd& x, VectorXd& r) { state_residual(x, ref_x.col(N), rp, r.head(4 * m)); };

  VectorXd xlo(4 * m), xhi(4 * m), ulo(4 * m), uhi(4 * m);
  for (Eigen::Index i = 0; i < m; ++i) {
    xlo.segment<4>(4 * i) = sc.boxes.state.lower;
    xhi.segment<4>(4 * i) = sc.boxes.state.upper;
    ulo.segment<4>(4 * i) = sc.boxes.observed.lower;
    uhi.segment<4>(4 * i) = sc.boxes.observed.upper;
  }
  spec.state_box = BoxConstraints(xlo, xhi);
  spec.control_box = BoxConstraints(ulo, uhi);

  spec.path_constraint_dim = m * (m - 1) / 2 + m;
  const double pair_distance = 2.0 * sc.r_c + sc.collision_margin;
  const double observer_distance = sc.r_c + sc.r_p + sc.collision_margin;
  spec.path_constraints = [=](const VectorXd& x, int, VectorXd& g) {
    std::vector<RelState> states(static_cast<size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) states[static_cast<size_t>(i)] = rel_state_from(x.segment<4>(4 * i));
    g = clearance_constraints(states, pair_distance, observer_distance);
  };
  spec.validate();
  return spec;
}

TrackingResult tracking_mpc(const MrsScenario& sc, const std::vector<RelState>& x_hat, double t,
                            const std::optional<MatrixXd>& warm) {
  const auto m = sc.robots.size();
  TrackingResult out;
  try {
    const OcpSpec spec = tracking_ocp(sc, x_hat, t);
    MatrixXd guess;
    if (warm) {
      guess = *warm;
    } else {
      guess.resize(spec.control_dim, spec.horizon);
      for (int k = 0; k < spec.horizon; ++k) {
        for (size_t i = 0; i < m; ++i) {
          const TrackingReference r = reference_at(sc.robots[i].reference, t + k * sc.delta, sc.observer);
          guess.block<4, 1>(4 * static_cast<Eigen::Index>(i), k) = to_vec(r.input);
        }
      }
    }
    const OcpSolution sol = solve(spec, guess, sc.mpc_ocp);
    out.plan = sol.controls;
    out.status = sol.status;
    for (size_t i = 0; i < m; ++i) {
      const VectorXd u = sc.boxes.observed.clamp(sol.controls.block<4, 1>(4 * static_cast<Eigen::Index>(i), 0));
      out.controls.push_back(rel_velocities_from(u));
    }
  } catch (const std::exception&) {
    out.failed = true;
    out.controls.assign(m, RelVelocities{});
    out.plan = MatrixXd::Zero(4 * static_cast<Eigen::Index>(m), sc.control_horizon);
  }
  return out;
}

MrsReport mrs_report(const MrsScenario& sc, const std::vector<MrsStep>& steps, const MrsReportOptions& opts) {
  MrsReport rep;
  if (steps.empty()) return rep;
  const size_t m = sc.robots.size();

  // Collision windows: references of two robots (or a robot and the observer)
  // come close, plus a release period afterwards.
  std::vector<bool> in_window(steps.size(), false);
  double last_encounter = -inf;
  for (size_t n = 0; n < steps.size(); ++n) {
    const auto& ref = steps[n].reference;
    bool close = false;
    for (size_t i = 0; i < m && !close; ++i) {
      if (to_vec(ref[i]).head<3>().norm() < opts.window_factor * (sc.r_c + sc.r_p)) close = true;
      for (size_t j = i + 1; j < m && !close; ++j) {
        if ((to_vec(ref[i]).head<3>() - to_vec(ref[j]).head<3>()).norm() < opts.window_factor * 2 * sc.r_c) {
          close = true;
        }
      }
    }
    if (close) last_encounter = steps[n].t;
    in_window[n] = steps[n].t - last_encounter <= opts.window_release;
    if (in_window[n]) ++rep.collision_window_steps;
  }

  std::vector<int> inside(m * 4, 0);
  int estimated_steps = 0;
  double sq_pos = 0.0;
  int pos_count = 0;
  for (size_t n = 0; n < steps.size(); ++n) {
    const auto& s = steps[n];
    rep.max_constraint = std::max(rep.max_constraint, collision_constraints(sc, s.truth).maxCoeff());
    for (size_t i = 0; i < m; ++i) {
      if (!sc.boxes.observed.contains(to_vec(s.controls[i]), 1e-9)) rep.controls_in_bounds = false;
      const Eigen::Vector4d e = state_error(s.estimate[i], s.truth[i]);
      if (n > 0) {
        for (int c = 0; c < 4; ++c) inside[4 * i + static_cast<size_t>(c)] += std::abs(e[c]) <= 3 * s.estimate_sigma[i][c];
        sq_pos += e.head<3>().squaredNorm();
        ++pos_count;
      }
    }
    if (n > 0) ++estimated_steps;
    if (s.t >= opts.settle_time && !in_window[n]) {
      ++rep.steady_steps;
      for (size_t i = 0; i < m; ++i) {
        const Eigen::Vector4d e = state_error(s.truth[i], s.reference[i]);
        rep.steady_tracking_error = std::max(rep.steady_tracking_error, e.head<3>().norm());
        rep.steady_orientation_error = std::max(rep.steady_orientation_error, std::abs(e[3]));
      }
    }
  }
  if (pos_count > 0) rep.estimation_position_rmse = std::sqrt(sq_pos / pos_count);

  if (estimated_steps > 0) {
    const int worst = *std::min_element(inside.begin(), inside.end());
    rep.three_sigma_coverage = static_cast<double>(worst) / estimated_steps;
  }
  return rep;
}

MrsResult run_mrs(const MrsScenario& sc, const MrsReportOptions& report_opts) {
  sc.validate();
  const size_t m = sc.robots.size();
  std::mt19937_64 rng(sc.seed);
  std::vector<RelState> truth(m);
  std::vector<MovingHorizonEstimator> mhe;
  for (size_t i = 0; i < m; ++i) {
    truth[i] = sc.robots[i].initial;
    mhe.emplace_back(sc.estimator_config());
  }
  std::vector<RelVelocities> u_meas(m);
  RelVelocities w_meas;
  std::optional<MatrixXd> warm;

  MrsResult result;
  for (int n = 0; n < sc.steps(); ++n) {
    const double t = n * sc.delta;
    MrsStep row;
    row.t = t;
    row.truth = truth;
    for (size_t i = 0; i < m; ++i) {
      const Measurement y = noisy_measurement(truth[i], sc.noise, rng);
      const MheEstimate est = n == 0 ? mhe[i].start(y) : mhe[i].update(u_meas[i], w_meas, y);
      row.estimate.push_back(est.state);
      row.estimate_sigma.push_back(est.covariance.diagonal().cwiseMax(0.0).cwiseSqrt());
      row.mhe_held = row.mhe_held || est.held;
      row.reference.push_back(reference_at(sc.robots[i].reference, t, sc.observer).state);
    }
    TrackingResult ctrl = tracking_mpc(sc, row.estimate, t, warm);
    row.controls = ctrl.controls;
    row.mpc_status = ctrl.status;
    MatrixXd next_warm(ctrl.plan.rows(), ctrl.plan.cols());
    next_warm << ctrl.plan.rightCols(ctrl.plan.cols() - 1), ctrl.plan.rightCols(1);
    warm = std::move(next_warm);

    for (size_t i = 0; i < m; ++i) {
      truth[i] = plant_step(truth[i], row.controls[i], sc.observer, sc.delta, sc.mode, sc.noise, rng);
      u_meas[i] = noisy_odometry(row.controls[i], sc.noise, rng);
    }
    w_meas = noisy_odometry(sc.observer, sc.noise, rng);
    result.steps.push_back(std::move(row));
  }
  result.report = mrs_report(sc, result.steps, report_opts);
  return result;
}

RelVelocities OpenLoopProfile::input(double t) const {
  return {vx, 0.0, vz_amplitude * std::sin(vz_frequency * t), wz};
}

RmseScenario RmseScenario::comparison(int noise_case) {
  RmseScenario sc;
  sc.noise = NoiseConfig::table_case(noise_case);
  sc.observer = {0.1, 0.0, 0.0, 0.0};
  sc.robots = {
      {{3.0, 1.2, 0.3, 2.2}, 0.3, 0.15, 0.05, 0.5},
      {{4.0, -1.0, 0.6, -2.4}, 0.25, -0.1, 0.04, 0.4},
      {{2.5, -0.2, 0.8, 1.0}, 0.35, 0.2, 0.03, 0.6},
  };
  return sc;
}

void RmseScenario::validate() const {
  if (robots.empty()) throw std::invalid_argument("rmse: need at least one observed robot");
  if (steps < 2 || trials < 1 || horizon < 1) throw std::invalid_argument("rmse: steps, trials and horizon");
  if (!(delta > 0.0)) throw std::invalid_argument("rmse: delta must be positive");
  noise.validate();
}

EstimatorConfig RmseScenario::estimator_config() const {
  EstimatorConfig cfg;
  cfg.delta = delta;
  cfg.horizon = horizon;
  cfg.mode = mode;
  cfg.noise = noise;
  cfg.initial_sigma = initial_sigma;
  cfg.ocp = mhe_ocp;
  return cfg;
}

RmseTable rmse_harness(const RmseScenario& sc) {
  sc.validate();
  const auto steps = static_cast<size_t>(sc.steps);
  const size_t m = sc.robots.size();
  const EstimatorConfig cfg = sc.estimator_config();
  std::vector<double> mhe_pos(steps, 0.0), ekf_pos(steps, 0.0), mhe_ori(steps, 0.0), ekf_ori(steps, 0.0);
  RmseTable table;

  for (int trial = 0; trial < sc.trials; ++trial) {
    std::mt19937_64 rng(sc.seed * 1000003ULL + static_cast<std::uint64_t>(trial));
    for (size_t i = 0; i < m; ++i) {
      const auto& robot = sc.robots[i];
      RelState truth = robot.initial;
      MovingHorizonEstimator mhe(cfg);
      Measurement y = noisy_measurement(truth, sc.noise, rng);
      RelState mhe_est = mhe.start(y).state;
      EkfState ekf = ekf_init(cfg, y);
      for (size_t n = 0;; ++n) {
        const Eigen::Vector4d em = state_error(mhe_est, truth);
        const Eigen::Vector4d ee = state_error(rel_state_from(ekf.mean), truth);
        mhe_pos[n] += em.head<3>().squaredNorm();
        ekf_pos[n] += ee.head<3>().squaredNorm();
        mhe_ori[n] += em[3] * em[3];
        ekf_ori[n] += ee[3] * ee[3];
        if (n + 1 == steps) break;
        const RelVelocities u = robot.input(static_cast<double>(n) * sc.delta);
        truth = plant_step(truth, u, sc.observer, sc.delta, sc.mode, sc.noise, rng);
        const RelVelocities u_meas = noisy_odometry(u, sc.noise, rng);
        const RelVelocities w_meas = noisy_odometry(sc.observer, sc.noise, rng);
        y = noisy_measurement(truth, sc.noise, rng);
        const MheEstimate est = mhe.update(u_meas, w_meas, y);
        if (est.held) ++table.mhe_held;
        mhe_est = est.state;
        ekf = ekf_step(cfg, ekf, u_meas, w_meas, y);
      }
    }
  }
  const double count = static_cast<double>(m) * sc.trials;
  auto finish = [&](std::vector<double>& acc, std::vector<double>& out, double& mean) {
    out.resize(steps);
    double sum = 0.0;
    for (size_t n = 0; n < steps; ++n) {
      out[n] = std::sqrt(acc[n] / count);
      sum += out[n];
    }
    mean = sum / static_cast<double>(steps);
  };
  finish(mhe_pos, table.mhe_position, table.mhe_position_mean);
  finish(ekf_pos, table.ekf_position, table.ekf_position_mean);
  finish(mhe_ori, table.mhe_orientation, table.mhe_orientation_mean);
  finish(ekf_ori, table.ekf_orientation, table.ekf_orientation_mean);
  return table;
}

int first_step_below(const std::vector<double>& series, double level) {
  for (size_t n = 0; n < series.size(); ++n) {
    if (series[n] <= level) return static_cast<int>(n);
  }
  return -1;
}

}  // namespace nhmpc
