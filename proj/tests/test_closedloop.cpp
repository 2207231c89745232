#include <doctest.h>

#include <cmath>
#include <numbers>

#include "nhmpc/closedloop.hpp"

using namespace nhmpc;
using std::numbers::pi;

namespace {

CertificateParams reg_params() { return CertificateParams::table_cell(0.25, 5.0); }

void check_rollout(const ClosedLoopTrace& tr, double delta) {
  for (size_t i = 0; i + 1 < tr.steps.size(); ++i) {
    const RobotState next = exact_step(tr.steps[i].state, tr.steps[i].control, delta);
    CHECK(next.x == tr.steps[i + 1].state.x);
    CHECK(next.y == tr.steps[i + 1].state.y);
    CHECK(next.theta == tr.steps[i + 1].state.theta);
  }
}

}  // namespace

TEST_CASE("regulation stage costs") {
  const auto p = reg_params();
  const RobotState e{0.5, -0.2, 1.0};
  const ControlInput u{0.3, -0.4};
  CHECK(regulation_stage_cost(p, RunningCost::Proposed, e, u) ==
        doctest::Approx(0.0625 + 5 * 0.04 + 0.1 + 0.125 * 0.0081 + 0.0125 * 0.0256));
  CHECK(regulation_stage_cost(p, RunningCost::Quadratic, e, u) ==
        doctest::Approx(0.25 + 5 * 0.04 + 0.1 + 0.125 * 0.09 + 0.0125 * 0.16));
  CHECK(regulation_ell_star(p, RunningCost::Proposed, {0, 0.1, 0}) == doctest::Approx(0.05));
  CHECK(regulation_ell_star(p, RunningCost::Proposed, {}) == 0.0);
}

TEST_CASE("regulation from the reference stays put") {
  RegulationScenario sc;
  sc.params = reg_params();
  sc.horizon = 7;
  const auto tr = run_regulation(sc);
  REQUIRE(tr.steps.size() == 1);
  CHECK(tr.status == LoopStatus::Converged);
  CHECK(tr.steps[0].value == 0.0);
  CHECK(tr.steps[0].control.v == 0.0);
  CHECK(tr.steps[0].control.omega == 0.0);
}

TEST_CASE("regulation from the large circle") {
  RegulationScenario sc;
  sc.params = reg_params();
  sc.horizon = 7;
  sc.threshold = 1e-9;
  sc.initial = {1.9 * std::cos(3 * pi / 4), 1.9 * std::sin(3 * pi / 4), pi / 4};
  const auto tr = run_regulation(sc);
  CHECK(tr.status == LoopStatus::Converged);
  CHECK(tr.steps.back().value <= 1e-9);
  check_rollout(tr, sc.params.delta);
  for (const auto& s : tr.steps) {
    CHECK(std::abs(s.control.v) <= sc.params.v_bar);
    CHECK(std::abs(s.control.omega) <= sc.params.omega_bar);
    CHECK(std::abs(s.state.x) <= sc.params.x_bar + 1e-4);
    CHECK(std::abs(s.state.y) <= sc.params.y_bar + 1e-4);
  }
  CHECK(relaxed_lyapunov_check(tr, 0.0).violations == 0);
}

TEST_CASE("proposed cost reaches the origin where the quadratic cost stalls") {
  RegulationScenario sc;
  sc.params = reg_params();
  sc.initial = {0.0, 0.1, 0.0};
  sc.horizon = 37;
  sc.threshold = 3e-11;
  sc.max_steps = 60;
  const auto proposed = run_regulation(sc);
  CHECK(proposed.status == LoopStatus::Converged);
  CHECK(proposed.steps.back().value < 3e-11);
  const auto rep = relaxed_lyapunov_check(proposed, 0.0);
  CHECK(rep.violations == 0);

  sc.cost = RunningCost::Quadratic;
  sc.max_steps = 30;
  const auto quadratic = run_regulation(sc);
  CHECK(quadratic.status == LoopStatus::StepCap);
  // V stops decreasing with the robot left beside the origin.
  const double late = quadratic.steps.back().value;
  CHECK(late > 1e-3);
  CHECK(late == doctest::Approx(quadratic.steps[20].value).epsilon(1e-2));
  CHECK(std::abs(quadratic.steps.back().state.y) > 1e-3);
}

TEST_CASE("shifted solution stays feasible") {
  const auto p = reg_params();
  const RobotState x{1.2, -0.9, 2.0};
  const auto sol = solve_regulation(p, RunningCost::Proposed, x, {}, 10, std::nullopt);
  const RobotState next = exact_step(x, {sol.controls(0, 0), sol.controls(1, 0)}, p.delta);
  MatrixXd shifted = MatrixXd::Zero(2, 10);
  shifted.leftCols(9) = sol.controls.rightCols(9);
  const OcpSpec spec = regulation_ocp(p, RunningCost::Proposed, next, {}, 10);
  const auto ev = evaluate_cost(spec, shifted);
  CHECK(constraint_violation(spec, ev.trajectory) <= 1e-4);
  // Dropping the first stage can only lower the cost.
  CHECK(ev.cost <= sol.objective + 1e-9);
}

TEST_CASE("value ratio separates the two costs") {
  const auto p = reg_params();
  const double proposed = value_ratio(p, RunningCost::Proposed, {0, 0.01, 0}, 20);
  const double quadratic = value_ratio(p, RunningCost::Quadratic, {0, 0.01, 0}, 20);
  CHECK(proposed < 5.0);
  CHECK(quadratic > 15.0);
  CHECK(quadratic <= 20.0 + 1e-9);  // zero input bound N
  CHECK_THROWS(value_ratio(p, RunningCost::Proposed, {}, 5));
}

TEST_CASE("relaxed Lyapunov monitor") {
  ClosedLoopTrace still;
  for (int i = 0; i < 5; ++i) still.steps.push_back(TraceStep{i, {}, {}, 0.0, 0.0});
  auto rep = relaxed_lyapunov_check(still, 1.0);
  CHECK(rep.violations == 0);
  CHECK(rep.fraction == 1.0);

  ClosedLoopTrace rising;
  for (int i = 0; i < 4; ++i) rising.steps.push_back(TraceStep{i, {}, {}, 1.0 + i, 0.5});
  rep = relaxed_lyapunov_check(rising, 0.0);
  CHECK(rep.violations == 3);
  CHECK(rep.fraction == 0.0);

  ClosedLoopTrace decay;
  for (int i = 0; i < 4; ++i) decay.steps.push_back(TraceStep{i, {}, {}, std::pow(0.5, i), 0.25 * std::pow(0.5, i)});
  CHECK(relaxed_lyapunov_check(decay, 1.0).violations == 0);
  CHECK(relaxed_lyapunov_check(decay, 3.0).violations == 3);
  CHECK_THROWS(relaxed_lyapunov_check(ClosedLoopTrace{}, 0.0));
}

TEST_CASE("invalid regulation scenarios") {
  RegulationScenario sc;
  sc.params = reg_params();
  sc.horizon = 1;
  CHECK_THROWS(run_regulation(sc));
  sc.horizon = 5;
  sc.initial = {3.0, 0.0, 0.0};
  CHECK_THROWS(run_regulation(sc));
}

TEST_CASE("closest path parameter") {
  const auto path = PathSpec::sine();
  const Eigen::Vector3d on = path.point(-7.3);
  CHECK(closest_path_parameter(path, {on[0], on[1], on[2]}, -2.0) == doctest::Approx(-7.3).epsilon(1e-8));
  CHECK(closest_path_parameter(path, {-20, 0, 0}, -2.0) == doctest::Approx(-20.0));
  // Restricted to lambda <= -eps even when the robot sits further along.
  CHECK(closest_path_parameter(path, {-0.5, 0, 0}, -2.0) == doctest::Approx(-2.0));
}

TEST_CASE("path following stage cost") {
  MpfcScenario sc;
  sc.path = PathSpec::sine();
  const Eigen::Vector3d end = sc.path.point(0.0);
  CHECK(mpfc_stage_cost(sc, Eigen::Vector4d(end[0], end[1], end[2], 0.0), Eigen::Vector3d::Zero()) == 0.0);
  // lambda only: q_hat lambda^2 delta.
  const Eigen::Vector3d mid = sc.path.point(-1.0);
  CHECK(mpfc_stage_cost(sc, Eigen::Vector4d(mid[0], mid[1], mid[2], -1.0), Eigen::Vector3d::Zero()) ==
        doctest::Approx(20.0 * 0.1));
}

TEST_CASE("path following from the path end") {
  MpfcScenario sc;
  sc.path = PathSpec::sine();
  const Eigen::Vector3d end = sc.path.point(0.0);
  sc.initial = {end[0], end[1], end[2]};
  sc.initial_lambda = 0.0;
  const auto tr = run_mpfc(sc);
  REQUIRE(tr.steps.size() == 1);
  CHECK(tr.status == LoopStatus::Converged);
  CHECK(tr.steps[0].value == 0.0);
}

TEST_CASE("path following closed loop") {
  MpfcScenario sc;
  sc.path = PathSpec::sine();
  sc.initial = {-4.0, -0.7, 0.0};
  sc.max_steps = 60;
  const auto tr = run_mpfc(sc);
  CHECK(tr.path_following);
  CHECK(tr.status == LoopStatus::Converged);
  check_rollout(tr, sc.delta);
  for (size_t i = 0; i < tr.steps.size(); ++i) {
    CHECK(*tr.steps[i].g >= 0.0);
    if (i > 0) {
      CHECK(*tr.steps[i].lambda >= *tr.steps[i - 1].lambda);
      CHECK(tr.steps[i].value <= tr.steps[i - 1].value + 1e-8);
    }
  }
  const auto& last = tr.steps.back();
  CHECK((to_vec(last.state) - sc.path.point(0.0)).norm() <= ON_PATH_TOL);
}
