#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "nhmpc/ocp.hpp"

using namespace nhmpc;

namespace {

OcpSpec integrator_spec(int horizon, const Eigen::Vector2d& x0, const Eigen::Vector2d& ref, double lambda) {
  OcpSpec spec;
  spec.horizon = horizon;
  spec.state_dim = 2;
  spec.control_dim = 2;
  spec.x0 = x0;
  spec.dynamics = [](const VectorXd& x, const VectorXd& u, int) -> VectorXd { return x + u; };
  spec.stage_residual_dim = 4;
  spec.stage_residual = [ref, lambda](const VectorXd& x, const VectorXd& u, int, VectorXd& r) {
    r.head(2) = x - ref;
    r.tail(2) = std::sqrt(lambda) * u;
  };
  spec.state_box = BoxConstraints(Eigen::Vector2d(-1, -1), Eigen::Vector2d(1, 1));
  spec.control_box = BoxConstraints(Eigen::Vector2d(-0.5, -0.5), Eigen::Vector2d(0.5, 0.5));
  return spec;
}

// Unicycle with exact discretization and the quartic regulation cost.
OcpSpec unicycle_spec(int horizon, double delta, const Eigen::Vector3d& x0, double q2 = 5.0) {
  const double q1 = 1.0, q3 = 0.1, r1 = q1 * delta / 2, r2 = q3 * delta / 2;
  OcpSpec spec;
  spec.horizon = horizon;
  spec.state_dim = 3;
  spec.control_dim = 2;
  spec.x0 = x0;
  spec.dynamics = [delta](const VectorXd& x, const VectorXd& u, int) -> VectorXd {
    return to_vec(exact_step(robot_state_from(x), {u[0], u[1]}, delta));
  };
  spec.stage_residual_dim = 5;
  spec.stage_residual = [=](const VectorXd& x, const VectorXd& u, int, VectorXd& r) {
    r << std::sqrt(q1) * x[0] * x[0], std::sqrt(q2) * x[1], std::sqrt(q3) * x[2] * x[2],
        std::sqrt(r1) * u[0] * u[0], std::sqrt(r2) * u[1] * u[1];
  };
  spec.state_box = BoxConstraints(Eigen::Vector3d(-2, -2, -1e9), Eigen::Vector3d(2, 2, 1e9));
  spec.control_box =
      BoxConstraints(Eigen::Vector2d(-0.6, -std::numbers::pi / 4), Eigen::Vector2d(0.6, std::numbers::pi / 4));
  return spec;
}

std::vector<MatrixXd> random_guesses(const OcpSpec& spec, int count, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::vector<MatrixXd> out{MatrixXd::Zero(spec.control_dim, spec.horizon)};
  for (int i = 0; i < count; ++i) {
    MatrixXd g(spec.control_dim, spec.horizon);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      std::uniform_real_distribution<double> d(spec.control_box.lower[r], spec.control_box.upper[r]);
      for (Eigen::Index c = 0; c < g.cols(); ++c) g(r, c) = d(rng);
    }
    out.push_back(g);
  }
  return out;
}

}  // namespace

TEST_CASE("pure control penalty is minimized at zero") {
  OcpSpec spec;
  spec.horizon = 1;
  spec.state_dim = 1;
  spec.control_dim = 2;
  spec.x0 = VectorXd::Zero(1);
  spec.dynamics = [](const VectorXd& x, const VectorXd&, int) -> VectorXd { return x; };
  spec.stage_residual_dim = 2;
  spec.stage_residual = [](const VectorXd&, const VectorXd& u, int, VectorXd& r) { r = u; };
  spec.control_box = BoxConstraints(Eigen::Vector2d(-1, -1), Eigen::Vector2d(1, 1));
  const auto sol = solve(spec, MatrixXd::Constant(2, 1, 0.7));
  CHECK(sol.controls.norm() < 1e-6);
  CHECK(sol.objective < 1e-12);
  CHECK(sol.status == SolveStatus::Converged);

  const auto oracle = brute_force_solve(spec, 5);
  CHECK(oracle.controls.norm() == 0.0);
}

TEST_CASE("integrator with boxes stays feasible") {
  const auto spec = integrator_spec(6, {-0.9, 0.8}, {0.7, -0.6}, 0.1);
  const auto sol = solve(spec);
  CHECK(sol.status == SolveStatus::Converged);
  for (int k = 0; k < spec.horizon; ++k) CHECK(spec.control_box.contains(sol.controls.col(k), 1e-12));
  for (int k = 0; k <= spec.horizon; ++k) CHECK(spec.state_box->contains(sol.trajectory.col(k), 1e-4));
  CHECK(sol.trajectory.col(spec.horizon).isApprox(Eigen::Vector2d(0.7, -0.6), 0.05));
}

TEST_CASE("geometric decay of the proportional feedback") {
  // u = kappa (ref - x) with kappa = 0.5 and control weight 0.1 gives
  // l(x_k, u_k) = 1.025 * 0.25^k * l*(x0).
  const Eigen::Vector2d ref(0.3, -0.2), x0(-0.5, 0.6);
  const auto spec = integrator_spec(8, x0, ref, 0.1);
  MatrixXd controls(2, 8);
  Eigen::Vector2d x = x0;
  for (int k = 0; k < 8; ++k) {
    controls.col(k) = 0.5 * (ref - x);
    x += controls.col(k);
  }
  const double l_star = (x0 - ref).squaredNorm();
  const auto ev = evaluate_cost(spec, controls);
  VectorXd r(4);
  for (int k = 0; k < 8; ++k) {
    spec.stage_residual(ev.trajectory.col(k), controls.col(k), k, r);
    CHECK(r.squaredNorm() == doctest::Approx(1.025 * std::pow(0.25, k) * l_star).epsilon(1e-12));
    CHECK(spec.control_box.contains(controls.col(k)));
  }
}

TEST_CASE("evaluate_cost trivial values") {
  auto spec = unicycle_spec(5, 0.25, Eigen::Vector3d::Zero());
  CHECK(evaluate_cost(spec, MatrixXd::Zero(2, 5)).cost == 0.0);
  spec.stage_residual = [](const VectorXd&, const VectorXd&, int, VectorXd& r) { r.setZero(); };
  CHECK(evaluate_cost(spec, MatrixXd::Ones(2, 5)).cost == 0.0);
  CHECK_THROWS(evaluate_cost(spec, MatrixXd::Ones(2, 4)));
}

TEST_CASE("returned solution is an exact rollout") {
  const auto spec = unicycle_spec(6, 0.5, {0.8, -0.4, 0.3});
  const auto sol = solve_multistart(spec, random_guesses(spec, 3, 7));
  const auto ev = evaluate_cost(spec, sol.controls);
  CHECK((ev.trajectory - sol.trajectory).cwiseAbs().maxCoeff() == 0.0);
  CHECK(std::abs(ev.cost - sol.objective) <= 1e-10);
}

TEST_CASE("sensitivity Jacobian matches central differences") {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> d(-0.5, 0.5);
  for (int trial = 0; trial < 10; ++trial) {
    auto spec = unicycle_spec(5, 0.5, {1.2 + d(rng), 1.2 + d(rng), d(rng)});
    spec.path_constraint_dim = 1;
    spec.path_constraints = [](const VectorXd& x, int, VectorXd& g) { g[0] = 1.0 - x.head(2).squaredNorm(); };
    spec.terminal_residual_dim = 1;
    spec.terminal_residual = [](const VectorXd& x, VectorXd& r) { r[0] = std::sin(x[2]) + x[0] * x[1]; };
    MatrixXd u(2, 5);
    for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = d(rng);
    const auto lin = linearize_shooting(spec, spec.x0, u, 1e3);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      MatrixXd up = u, um = u;
      up(i) += h;
      um(i) -= h;
      const VectorXd fd =
          (linearize_shooting(spec, spec.x0, up, 1e3).residual - linearize_shooting(spec, spec.x0, um, 1e3).residual) /
          (2 * h);
      CHECK((fd - lin.jacobian.col(i)).cwiseAbs().maxCoeff() <= 1e-5);
    }
  }
}

TEST_CASE("local solve agrees with the grid oracle on small unicycle problems") {
  const auto spec = unicycle_spec(2, 1.0, {0.5, 0, 0});
  const auto oracle = brute_force_solve(spec, 21);
  const auto sol = solve_multistart(spec, random_guesses(spec, 8, 3));
  CHECK(oracle.status == SolveStatus::Converged);
  CHECK(sol.objective <= oracle.objective * 1.02 + 1e-12);
}

TEST_CASE("grid oracle reports infeasibility") {
  auto spec = integrator_spec(2, {0, 0}, {0, 0}, 0.1);
  spec.path_constraint_dim = 1;
  spec.path_constraints = [](const VectorXd& x, int, VectorXd& g) { g[0] = 5.0 - x[0]; };
  const auto oracle = brute_force_solve(spec, 5);
  CHECK(oracle.status == SolveStatus::InfeasibleRelaxed);
  CHECK(oracle.max_violation > 0.0);
  const auto sol = solve(spec);
  CHECK(sol.status == SolveStatus::InfeasibleRelaxed);
}

TEST_CASE("grid oracle enforces its budget") {
  auto spec = integrator_spec(4, {0, 0}, {0, 0}, 0.1);
  CHECK_THROWS(brute_force_solve(spec, 10));
  spec.horizon = 5;
  CHECK_THROWS(brute_force_solve(spec, 2));
}

TEST_CASE("penalties drive path constraints to tolerance") {
  // Keep out of the unit disc around (0, 0) while travelling across it.
  auto spec = integrator_spec(10, {-0.95, 0.05}, {0.95, 0.0}, 0.01);
  spec.state_box.reset();
  spec.path_constraint_dim = 1;
  spec.path_constraints = [](const VectorXd& x, int, VectorXd& g) { g[0] = 0.25 - x.squaredNorm(); };
  const auto sol = solve(spec, MatrixXd::Constant(2, 10, 0.05));
  CHECK(sol.status != SolveStatus::InfeasibleRelaxed);
  CHECK(sol.max_violation <= 1e-4);
  CHECK(constraint_violation(spec, sol.trajectory) == doctest::Approx(sol.max_violation));
}

TEST_CASE("free initial state recovers a consistent start") {
  // Noise-free position data of a drifting point: the estimated start matches.
  const Eigen::Vector2d truth(0.4, -0.3), drift(0.1, 0.05);
  OcpSpec spec;
  spec.horizon = 5;
  spec.state_dim = 2;
  spec.control_dim = 2;
  spec.x0 = Eigen::Vector2d::Zero();
  spec.free_initial_state = true;
  spec.initial_box = BoxConstraints(Eigen::Vector2d(-5, -5), Eigen::Vector2d(5, 5));
  spec.dynamics = [](const VectorXd& x, const VectorXd& u, int) -> VectorXd { return x + u; };
  spec.stage_residual_dim = 4;
  spec.stage_residual = [=](const VectorXd& x, const VectorXd& u, int k, VectorXd& r) {
    r.head(2) = x - (truth + k * drift);
    r.tail(2) = 10.0 * (u - drift);
  };
  spec.control_box = BoxConstraints(Eigen::Vector2d(-1, -1), Eigen::Vector2d(1, 1));
  const auto sol = solve(spec);
  CHECK((initial_state_of(sol) - truth).norm() < 1e-6);
}

TEST_CASE("invalid specs are rejected") {
  auto spec = integrator_spec(3, {2, 0}, {0, 0}, 0.1);
  CHECK_THROWS(solve(spec));
  spec = integrator_spec(0, {0, 0}, {0, 0}, 0.1);
  CHECK_THROWS(solve(spec));
}
