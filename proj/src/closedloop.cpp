#include "nhmpc/closedloop.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace nhmpc {

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();

RobotState difference(const RobotState& a, const RobotState& b) { return {a.x - b.x, a.y - b.y, a.theta - b.theta}; }

double sq(double v) { return v * v; }

MatrixXd shifted(const MatrixXd& controls) {
  MatrixXd out = MatrixXd::Zero(controls.rows(), controls.cols());
  if (controls.cols() > 1) out.leftCols(controls.cols() - 1) = controls.rightCols(controls.cols() - 1);
  return out;
}

// Turn / drive / turn back sequences at amplitudes matched to the state size.
std::vector<MatrixXd> maneuver_guesses(const CertificateParams& p, const RobotState& error, int horizon) {
  const double size = std::max({std::abs(error.x), std::abs(error.y), std::abs(error.theta)});
  const double amp = std::min(1.0, std::sqrt(size));
  const double v = 0.8 * p.v_bar * amp;
  const double w = 0.8 * p.omega_bar * amp;
  const int third = std::max(1, horizon / 3);
  std::vector<MatrixXd> out;
  for (double turn : {1.0, -1.0}) {
    for (double drive : {1.0, -1.0}) {
      MatrixXd u = MatrixXd::Zero(2, horizon);
      for (int k = 0; k < horizon; ++k) {
        if (k < third) {
          u(1, k) = turn * w;
        } else if (k < horizon - third) {
          u(0, k) = drive * v;
        } else {
          u(1, k) = -turn * w;
        }
      }
      out.push_back(std::move(u));
    }
  }
  return out;
}

}  // namespace

double regulation_stage_cost(const CertificateParams& p, RunningCost cost, const RobotState& e,
                             const ControlInput& u) {
  if (cost == RunningCost::Proposed) {
    return p.q1 * sq(sq(e.x)) + p.q2 * sq(e.y) + p.q3 * sq(sq(e.theta)) + p.r1 * sq(sq(u.v)) +
           p.r2 * sq(sq(u.omega));
  }
  return p.q1 * sq(e.x) + p.q2 * sq(e.y) + p.q3 * sq(e.theta) + p.r1 * sq(u.v) + p.r2 * sq(u.omega);
}

double regulation_ell_star(const CertificateParams& p, RunningCost cost, const RobotState& e) {
  return regulation_stage_cost(p, cost, e, {});
}

OcpSpec regulation_ocp(const CertificateParams& p, RunningCost cost, const RobotState& x0,
                       const RobotState& reference, int horizon, double cost_scale) {
  if (!(cost_scale > 0.0)) throw std::invalid_argument("regulation_ocp: cost scale must be positive");
  OcpSpec spec;
  spec.horizon = horizon;
  spec.state_dim = 3;
  spec.control_dim = 2;
  spec.x0 = to_vec(x0);
  const double delta = p.delta;
  spec.dynamics = [delta](const VectorXd& x, const VectorXd& u, int) {
    return VectorXd(to_vec(exact_step(robot_state_from(x), {u[0], u[1]}, delta)));
  };
  const Eigen::Vector3d ref = to_vec(reference);
  const double unit = 1.0 / std::sqrt(cost_scale);
  const Eigen::Matrix<double, 5, 1> root{std::sqrt(p.q1) * unit, std::sqrt(p.q2) * unit, std::sqrt(p.q3) * unit,
                                         std::sqrt(p.r1) * unit, std::sqrt(p.r2) * unit};
  spec.stage_residual_dim = 5;
  if (cost == RunningCost::Proposed) {
    spec.stage_residual = [=](const VectorXd& x, const VectorXd& u, int, VectorXd& r) {
      const Eigen::Vector3d e = x - ref;
      r << root[0] * sq(e[0]), root[1] * e[1], root[2] * sq(e[2]), root[3] * sq(u[0]), root[4] * sq(u[1]);
    };
  } else {
    spec.stage_residual = [=](const VectorXd& x, const VectorXd& u, int, VectorXd& r) {
      const Eigen::Vector3d e = x - ref;
      r << root[0] * e[0], root[1] * e[1], root[2] * e[2], root[3] * u[0], root[4] * u[1];
    };
  }
  spec.state_box = BoxConstraints(Eigen::Vector3d(-p.x_bar, -p.y_bar, -inf), Eigen::Vector3d(p.x_bar, p.y_bar, inf));
  spec.control_box = BoxConstraints(Eigen::Vector2d(-p.v_bar, -p.omega_bar), Eigen::Vector2d(p.v_bar, p.omega_bar));
  spec.validate();
  return spec;
}

OcpSolution solve_regulation(const CertificateParams& p, RunningCost cost, const RobotState& x0,
                             const RobotState& reference, int horizon, const std::optional<MatrixXd>& warm,
                             const RegulationSolverOptions& opts) {
  const RobotState error = difference(x0, reference);
  const double scale = regulation_ell_star(p, cost, error);
  if (scale == 0.0) {
    OcpSpec spec = regulation_ocp(p, cost, x0, reference, horizon);
    OcpSolution rest;
    rest.controls = MatrixXd::Zero(2, horizon);
    rest.trajectory = evaluate_cost(spec, rest.controls).trajectory;
    return rest;
  }
  const OcpSpec spec = regulation_ocp(p, cost, x0, reference, horizon, scale);

  std::vector<MatrixXd> guesses;
  if (warm) guesses.push_back(*warm);
  for (auto& g : maneuver_guesses(p, error, horizon)) guesses.push_back(std::move(g));
  std::mt19937_64 rng(opts.seed);
  const double size = std::max({std::abs(error.x), std::abs(error.y), std::abs(error.theta)});
  const double amp = std::min(1.0, std::sqrt(size));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int i = 0; i < opts.random_starts; ++i) {
    MatrixXd u(2, horizon);
    for (int k = 0; k < horizon; ++k) {
      u(0, k) = amp * p.v_bar * unit(rng);
      u(1, k) = amp * p.omega_bar * unit(rng);
    }
    guesses.push_back(std::move(u));
  }
  OcpSolution best = solve_multistart(spec, guesses, opts.ocp);
  best.objective *= scale;
  return best;
}

double value_ratio(const CertificateParams& p, RunningCost cost, const RobotState& x0, int horizon,
                   const RegulationSolverOptions& opts, const std::optional<MatrixXd>& warm, MatrixXd* controls_out) {
  const double lstar = regulation_ell_star(p, cost, x0);
  if (!(lstar > 0.0)) throw std::invalid_argument("value_ratio: state must differ from the origin");
  const OcpSolution sol = solve_regulation(p, cost, x0, {}, horizon, warm, opts);
  if (controls_out) *controls_out = sol.controls;
  return sol.objective / lstar;
}

std::string to_string(LoopStatus s) { return s == LoopStatus::Converged ? "converged" : "step-cap"; }

void RegulationScenario::validate() const {
  params.validate();
  if (horizon < 2) throw std::invalid_argument("regulation: horizon must be >= 2");
  if (max_steps < 1) throw std::invalid_argument("regulation: max_steps must be positive");
  if (std::abs(initial.x) > params.x_bar || std::abs(initial.y) > params.y_bar) {
    throw std::invalid_argument("regulation: initial state outside X");
  }
}

ClosedLoopTrace run_regulation(const RegulationScenario& sc) {
  sc.validate();
  const auto& p = sc.params;
  const BoxConstraints input_box(Eigen::Vector2d(-p.v_bar, -p.omega_bar), Eigen::Vector2d(p.v_bar, p.omega_bar));
  ClosedLoopTrace trace;
  RobotState x = sc.initial;
  std::optional<MatrixXd> warm;
  for (int n = 0; n < sc.max_steps; ++n) {
    RegulationSolverOptions opts = sc.solver;
    opts.seed = sc.solver.seed * 1000003ULL + static_cast<std::uint64_t>(n);
    OcpSolution sol;
    try {
      sol = solve_regulation(p, sc.cost, x, sc.reference, sc.horizon, warm, opts);
    } catch (const std::exception& e) {
      throw std::runtime_error("run_regulation: step " + std::to_string(n) + ": " + e.what());
    }
    const VectorXd u = input_box.clamp(sol.controls.col(0));
    TraceStep row;
    row.step = n;
    row.state = x;
    row.control = {u[0], u[1]};
    row.value = sol.objective;
    row.stage_cost = regulation_stage_cost(p, sc.cost, difference(x, sc.reference), row.control);
    row.solver_status = sol.status;
    row.solver_iterations = sol.iterations;
    trace.steps.push_back(row);
    if (row.value <= sc.threshold) {
      trace.status = LoopStatus::Converged;
      break;
    }
    x = exact_step(x, row.control, p.delta);
    warm = shifted(sol.controls);
  }
  return trace;
}

LyapunovReport relaxed_lyapunov_check(const ClosedLoopTrace& trace, double alpha, double tol) {
  if (trace.steps.size() < 2) throw std::invalid_argument("relaxed_lyapunov_check: need at least two steps");
  LyapunovReport rep;
  for (size_t n = 0; n + 1 < trace.steps.size(); ++n) {
    const auto& now = trace.steps[n];
    const bool ok = trace.steps[n + 1].value <= now.value - alpha * now.stage_cost + tol;
    rep.satisfied.push_back(ok);
    if (!ok) ++rep.violations;
  }
  rep.fraction = 1.0 - static_cast<double>(rep.violations) / static_cast<double>(rep.satisfied.size());
  return rep;
}

int MpfcScenario::horizon_steps() const { return static_cast<int>(std::lround(horizon_time / delta)); }

void MpfcScenario::validate() const {
  path.validate();
  if (!(delta > 0.0)) throw std::invalid_argument("mpfc: delta must be positive");
  if (std::abs(horizon_time / delta - horizon_steps()) > 1e-9 || horizon_steps() < 1) {
    throw std::invalid_argument("mpfc: horizon must be a multiple of delta");
  }
  if (!(epsilon > 0.0) || !(epsilon < std::abs(path.lambda_bar))) throw std::invalid_argument("mpfc: bad epsilon");
  if (weights.r2 > weights.q3 / 2.0 * (1.0 + 1e-12)) throw std::invalid_argument("mpfc: r2 <= q3 / 2 violated");
}

double closest_path_parameter(const PathSpec& path, const RobotState& x, double lambda_hi) {
  const Eigen::Vector3d pos = to_vec(x);
  const auto dist = [&](double l) { return (pos - path.point(l)).squaredNorm(); };
  const double lo = path.lambda_bar;
  const int samples = 4000;
  double best = lo;
  double best_d = dist(lo);
  for (int i = 1; i <= samples; ++i) {
    const double l = lo + (lambda_hi - lo) * i / samples;
    if (const double d = dist(l); d < best_d) {
      best_d = d;
      best = l;
    }
  }
  // Golden-section refinement inside the bracketing grid cell.
  const double h = (lambda_hi - lo) / samples;
  double a = std::max(lo, best - h);
  double b = std::min(lambda_hi, best + h);
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int i = 0; i < 100; ++i) {
    const double c = b - ratio * (b - a);
    const double d = a + ratio * (b - a);
    (dist(c) < dist(d) ? b : a) = (dist(c) < dist(d) ? d : c);
  }
  const double refined = 0.5 * (a + b);
  return dist(refined) < best_d ? refined : best;
}

namespace {

struct MpfcModel {
  const MpfcScenario& sc;
  double root_delta;

  // Residual with ||r||^2 = delta * l(z, w).
  void residual(const VectorXd& z, const VectorXd& w, VectorXd& r) const {
    const auto& q = sc.weights;
    const double lambda = z[3];
    const Eigen::Vector3d target = sc.path.point(lambda);
    const ControlInput ref = path_reference(sc.path, lambda, w[2]);
    r.resize(7);
    r << std::sqrt(q.q1) * (z[0] - target[0]), std::sqrt(q.q2) * (z[1] - target[1]),
        std::sqrt(q.q3) * (z[2] - target[2]), std::sqrt(q.q_hat) * lambda, std::sqrt(q.r1) * (w[0] - ref.v),
        std::sqrt(q.r2) * (w[1] - ref.omega), std::sqrt(q.r_hat) * w[2];
    r *= root_delta;
  }

  VectorXd step(const VectorXd& z, const VectorXd& w) const {
    const RobotState next = exact_step({z[0], z[1], z[2]}, {w[0], w[1]}, sc.delta);
    return Eigen::Vector4d(next.x, next.y, next.theta, z[3] + sc.delta * w[2]);
  }

  // Z_eps membership as a single inequality: the smaller of the two branch
  // violations (box branch, on-path branch).
  double zone_violation(const VectorXd& z) const {
    const double lambda = z[3];
    const double box_branch = std::max(z[0] + sc.epsilon, lambda + sc.epsilon);
    const Eigen::Vector3d gap = z.head<3>() - sc.path.point(lambda);
    const double path_branch = std::max(-(lambda + sc.epsilon), gap.norm() - ON_PATH_TOL);
    return std::min(box_branch, path_branch);
  }
};

}  // namespace

double mpfc_stage_cost(const MpfcScenario& sc, const Eigen::Vector4d& z, const Eigen::Vector3d& w) {
  const MpfcModel model{sc, std::sqrt(sc.delta)};
  VectorXd r;
  model.residual(z, w, r);
  return r.squaredNorm();
}

OcpSpec mpfc_ocp(const MpfcScenario& sc, const Eigen::Vector4d& z0) {
  const auto model = std::make_shared<MpfcModel>(MpfcModel{sc, std::sqrt(sc.delta)});
  OcpSpec spec;
  spec.horizon = sc.horizon_steps();
  spec.state_dim = 4;
  spec.control_dim = 3;
  spec.x0 = z0;
  spec.dynamics = [model](const VectorXd& z, const VectorXd& w, int) { return model->step(z, w); };
  spec.stage_residual_dim = 7;
  spec.stage_residual = [model](const VectorXd& z, const VectorXd& w, int, VectorXd& r) { model->residual(z, w, r); };
  const auto& xb = sc.path.state_box;
  spec.state_box = BoxConstraints(Eigen::Vector4d(xb.lower[0], xb.lower[1], xb.lower[2], sc.path.lambda_bar),
                                  Eigen::Vector4d(xb.upper[0], xb.upper[1], xb.upper[2], 0.0));
  spec.control_box = sc.path.input_box;
  spec.path_constraint_dim = 1;
  spec.path_constraints = [model](const VectorXd& z, int, VectorXd& g) { g[0] = model->zone_violation(z); };
  spec.validate();
  return spec;
}

ClosedLoopTrace run_mpfc(const MpfcScenario& sc) {
  sc.validate();
  const int horizon = sc.horizon_steps();
  const double lambda0 =
      sc.initial_lambda ? *sc.initial_lambda : closest_path_parameter(sc.path, sc.initial, -sc.epsilon);
  ClosedLoopTrace trace;
  trace.path_following = true;
  RobotState x = sc.initial;
  double lambda = lambda0;
  std::optional<MatrixXd> warm;
  const double g_max = g_hat(sc.path);
  for (int n = 0; n < sc.max_steps; ++n) {
    const Eigen::Vector4d z0(x.x, x.y, x.theta, lambda);
    const OcpSpec spec = mpfc_ocp(sc, z0);
    std::vector<MatrixXd> guesses;
    if (warm) {
      guesses.push_back(*warm);
    } else {
      // Ride the reference at a constant timing speed that reaches the end
      // of the path within the horizon, and standing still.
      const double g = std::min(g_max, -lambda / sc.horizon_time);
      MatrixXd ride(3, horizon);
      double l = lambda;
      for (int k = 0; k < horizon; ++k) {
        const ControlInput u = path_reference(sc.path, l, g);
        ride.col(k) << u.v, u.omega, g;
        l += sc.delta * g;
      }
      guesses.push_back(ride);
      guesses.push_back(MatrixXd::Zero(3, horizon));
    }
    OcpSolution sol;
    try {
      sol = solve_multistart(spec, guesses, sc.ocp);
    } catch (const std::exception& e) {
      throw std::runtime_error("run_mpfc: step " + std::to_string(n) + ": " + e.what());
    }
    const VectorXd w = spec.control_box.clamp(sol.controls.col(0));
    TraceStep row;
    row.step = n;
    row.state = x;
    row.control = {w[0], w[1]};
    row.lambda = lambda;
    row.g = w[2];
    row.value = sol.objective;
    row.stage_cost = mpfc_stage_cost(sc, z0, w) / sc.delta;
    row.solver_status = sol.status;
    row.solver_iterations = sol.iterations;
    trace.steps.push_back(row);
    if (row.value <= sc.threshold) {
      trace.status = LoopStatus::Converged;
      break;
    }
    x = exact_step(x, row.control, sc.delta);
    lambda = std::min(0.0, lambda + sc.delta * w[2]);
    MatrixXd next = shifted(sol.controls);
    next.col(horizon - 1) = sol.controls.col(horizon - 1);
    warm = next;
  }
  return trace;
}

}  // namespace nhmpc
