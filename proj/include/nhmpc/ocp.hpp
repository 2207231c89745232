#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nhmpc/dynamics.hpp"

namespace nhmpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Bounded nonlinear least squares: minimize ||r(z)||^2 subject to lo <= z <= hi.
struct LsqProblem {
  Eigen::Index num_vars = 0;
  Eigen::Index num_residuals = 0;
  VectorXd lower;
  VectorXd upper;
  // Fills r (and J when non-null) at z.
  std::function<void(const VectorXd& z, VectorXd& r, MatrixXd* jac)> evaluate;
};

struct LsqOptions {
  int max_iterations = 200;
  int max_damping_trials = 50;
  double step_tol = 1e-8;
  double gradient_tol = 1e-6;
  // Stop once an accepted step reduces the cost by less than this fraction,
  // both actually and as predicted by the model (0 disables).
  double relative_reduction_tol = 0.0;
  double initial_damping = 1e-4;
};

struct LsqResult {
  VectorXd z;
  double cost = 0.0;
  int iterations = 0;
  bool converged = false;
};

LsqResult solve_bounded_lsq(const LsqProblem& problem, VectorXd z0, const LsqOptions& opts = {});

using DynamicsFn = std::function<VectorXd(const VectorXd& x, const VectorXd& u, int k)>;
// Stage cost is written as a residual: l(x, u) = ||r(x, u, k)||^2.
using StageResidualFn = std::function<void(const VectorXd& x, const VectorXd& u, int k, VectorXd& r)>;
using TerminalResidualFn = std::function<void(const VectorXd& x, VectorXd& r)>;
// Inequalities g(x, k) <= 0, imposed on the predicted states 1..N.
using PathConstraintFn = std::function<void(const VectorXd& x, int k, VectorXd& g)>;

struct OcpSpec {
  int horizon = 1;
  Eigen::Index state_dim = 0;
  Eigen::Index control_dim = 0;
  VectorXd x0;
  DynamicsFn dynamics;

  Eigen::Index stage_residual_dim = 0;
  StageResidualFn stage_residual;
  Eigen::Index terminal_residual_dim = 0;
  TerminalResidualFn terminal_residual;

  std::optional<BoxConstraints> state_box;
  BoxConstraints control_box;

  Eigen::Index path_constraint_dim = 0;
  PathConstraintFn path_constraints;

  // When set, x0 becomes a decision variable inside `initial_box` and the
  // residual below (an arrival cost) is added to the objective.
  bool free_initial_state = false;
  BoxConstraints initial_box;
  Eigen::Index initial_residual_dim = 0;
  TerminalResidualFn initial_residual;

  void validate() const;
};

enum class SolveStatus { Converged, MaxIter, InfeasibleRelaxed };
std::string to_string(SolveStatus s);

struct OcpSolution {
  MatrixXd controls;    // control_dim x N
  MatrixXd trajectory;  // state_dim x (N + 1)
  double objective = 0.0;
  SolveStatus status = SolveStatus::Converged;
  int iterations = 0;
  double max_violation = 0.0;
};

struct OcpOptions {
  LsqOptions lsq;
  std::vector<double> penalty_schedule{1e2, 1e3, 1e4, 1e5, 1e6};
  double feasibility_tol = 1e-4;
  double fd_relative_step = 1e-6;
};

struct CostEvaluation {
  double cost = 0.0;
  MatrixXd trajectory;
};

CostEvaluation evaluate_cost(const OcpSpec& spec, const MatrixXd& controls);
CostEvaluation evaluate_cost(const OcpSpec& spec, const VectorXd& x0, const MatrixXd& controls);

// Largest violation of state box and path constraints along a trajectory.
double constraint_violation(const OcpSpec& spec, const MatrixXd& trajectory);

OcpSolution solve(const OcpSpec& spec, const std::optional<MatrixXd>& warm_start = std::nullopt,
                  const OcpOptions& opts = {});

// Runs solve() from every guess and keeps the best: feasible before
// infeasible, then lowest objective, first guess wins ties.
OcpSolution solve_multistart(const OcpSpec& spec, const std::vector<MatrixXd>& guesses,
                             const OcpOptions& opts = {});

OcpSolution brute_force_solve(const OcpSpec& spec, int grid_points_per_control_dim);

// Penalized residual vector and its sensitivity Jacobian at a given decision
// (exposed for derivative checks).
struct ShootingLinearization {
  VectorXd residual;
  MatrixXd jacobian;
};
ShootingLinearization linearize_shooting(const OcpSpec& spec, const VectorXd& x0, const MatrixXd& controls,
                                         double penalty_weight, double fd_relative_step = 1e-6);

// Initial state estimate the solver returned when free_initial_state is set.
inline VectorXd initial_state_of(const OcpSolution& s) { return s.trajectory.col(0); }

}  // namespace nhmpc
