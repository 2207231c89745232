#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nhmpc/certify_path.hpp"
#include "nhmpc/certify_regulation.hpp"
#include "nhmpc/dynamics.hpp"
#include "nhmpc/ocp.hpp"

namespace nhmpc {

enum class RunningCost {
  Proposed,   // q1 x^4 + q2 y^2 + q3 theta^4 + r1 v^4 + r2 omega^4
  Quadratic,  // x'Qx + u'Ru with the same diagonal weights
};

double regulation_stage_cost(const CertificateParams& p, RunningCost cost, const RobotState& error,
                             const ControlInput& u);
// min over u in U of the stage cost (attained at u = 0).
double regulation_ell_star(const CertificateParams& p, RunningCost cost, const RobotState& error);

// OCP over N steps of the exact unicycle map with the stage cost divided by
// `cost_scale`; state box [-x_bar, x_bar] x [-y_bar, y_bar], input box U.
OcpSpec regulation_ocp(const CertificateParams& p, RunningCost cost, const RobotState& x0,
                       const RobotState& reference, int horizon, double cost_scale = 1.0);

struct RegulationSolverOptions {
  int random_starts = 3;
  std::uint64_t seed = 1;
  OcpOptions ocp;
};

// Best of a warm start, maneuver-shaped guesses and random guesses. The
// objective of the returned solution is in original (unscaled) units.
OcpSolution solve_regulation(const CertificateParams& p, RunningCost cost, const RobotState& x0,
                             const RobotState& reference, int horizon, const std::optional<MatrixXd>& warm,
                             const RegulationSolverOptions& opts = {});

// V_N(x0) / l*(x0) for the reference at the origin.
double value_ratio(const CertificateParams& p, RunningCost cost, const RobotState& x0, int horizon,
                   const RegulationSolverOptions& opts = {}, const std::optional<MatrixXd>& warm = std::nullopt,
                   MatrixXd* controls_out = nullptr);

struct TraceStep {
  int step = 0;
  RobotState state;
  ControlInput control;
  double value = 0.0;
  double stage_cost = 0.0;
  std::optional<double> lambda;  // path following only
  std::optional<double> g;
  SolveStatus solver_status = SolveStatus::Converged;
  int solver_iterations = 0;
};

enum class LoopStatus { Converged, StepCap };
std::string to_string(LoopStatus s);

struct ClosedLoopTrace {
  std::vector<TraceStep> steps;
  LoopStatus status = LoopStatus::StepCap;
  bool path_following = false;
};

struct RegulationScenario {
  RobotState initial;
  RobotState reference;
  CertificateParams params;
  RunningCost cost = RunningCost::Proposed;
  int horizon = 7;
  int max_steps = 400;
  double threshold = 1e-9;
  RegulationSolverOptions solver;

  void validate() const;
};

ClosedLoopTrace run_regulation(const RegulationScenario& sc);

struct LyapunovReport {
  std::vector<bool> satisfied;  // entry n: V(n+1) <= V(n) - alpha l(n) + tol
  double fraction = 1.0;
  int violations = 0;
};
LyapunovReport relaxed_lyapunov_check(const ClosedLoopTrace& trace, double alpha, double tol = 1e-8);

// Tube half-width standing in for the exact on-path branch of Z_eps.
inline constexpr double ON_PATH_TOL = 1e-3;

struct MpfcScenario {
  PathSpec path;
  PathWeights weights;
  double epsilon = 2.0;
  double delta = 0.1;
  double horizon_time = 7.5;
  RobotState initial;
  std::optional<double> initial_lambda;  // default: closest path point on [lambda_bar, -eps]
  int max_steps = 400;
  double threshold = 1e-6;
  OcpOptions ocp{.lsq = {.relative_reduction_tol = 1e-10}};

  [[nodiscard]] int horizon_steps() const;
  void validate() const;
};

double closest_path_parameter(const PathSpec& path, const RobotState& x, double lambda_hi);

// Stage cost of the augmented system integrated over one sampling period.
double mpfc_stage_cost(const MpfcScenario& sc, const Eigen::Vector4d& z, const Eigen::Vector3d& w);
OcpSpec mpfc_ocp(const MpfcScenario& sc, const Eigen::Vector4d& z0);

ClosedLoopTrace run_mpfc(const MpfcScenario& sc);

}  // namespace nhmpc
