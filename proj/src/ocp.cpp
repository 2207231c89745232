#include "nhmpc/ocp.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace nhmpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double projected_gradient_norm(const VectorXd& z, const VectorXd& grad, const VectorXd& lo,
                               const VectorXd& hi) {
  double sq = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double moved = std::clamp(z[i] - grad[i], lo[i], hi[i]) - z[i];
    sq += moved * moved;
  }
  return std::sqrt(sq);
}

}  // namespace

LsqResult solve_bounded_lsq(const LsqProblem& problem, VectorXd z0, const LsqOptions& opts) {
  const Eigen::Index n = problem.num_vars;
  if (z0.size() != n || problem.lower.size() != n || problem.upper.size() != n) {
    throw std::invalid_argument("lsq: dimension mismatch");
  }
  LsqResult out;
  VectorXd z = z0.cwiseMax(problem.lower).cwiseMin(problem.upper);
  VectorXd r(problem.num_residuals);
  MatrixXd jac(problem.num_residuals, n);
  problem.evaluate(z, r, &jac);
  double cost = r.squaredNorm();
  if (!std::isfinite(cost)) throw std::runtime_error("lsq: non-finite cost at start");

  VectorXd r_trial(problem.num_residuals);
  double damping = -1.0;
  double growth = 2.0;
  for (out.iterations = 0; out.iterations < opts.max_iterations; ++out.iterations) {
    const VectorXd grad = jac.transpose() * r;  // half gradient of ||r||^2
    if (projected_gradient_norm(z, 2.0 * grad, problem.lower, problem.upper) < opts.gradient_tol) {
      out.converged = true;
      break;
    }
    MatrixXd hess = MatrixXd::Zero(n, n);
    hess.selfadjointView<Eigen::Lower>().rankUpdate(jac.transpose());
    hess = hess.selfadjointView<Eigen::Lower>();
    const double diag_max = hess.diagonal().maxCoeff();
    if (damping < 0.0) damping = opts.initial_damping;

    // Variables pinned at a bound by the gradient are held fixed this iteration.
    std::vector<Eigen::Index> free;
    free.reserve(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool at_lo = z[i] <= problem.lower[i] && grad[i] > 0.0;
      const bool at_hi = z[i] >= problem.upper[i] && grad[i] < 0.0;
      if (!at_lo && !at_hi && problem.lower[i] < problem.upper[i]) free.push_back(i);
    }
    if (free.empty()) {
      out.converged = true;
      break;
    }
    const auto nf = static_cast<Eigen::Index>(free.size());
    MatrixXd hff(nf, nf);
    VectorXd gf(nf);
    for (Eigen::Index a = 0; a < nf; ++a) {
      gf[a] = grad[free[a]];
      for (Eigen::Index b = 0; b < nf; ++b) hff(a, b) = hess(free[a], free[b]);
    }
    const double floor = 1e-10 * std::max(diag_max, 1e-300);

    bool accepted = false;
    bool tiny_step = false;
    bool stalled = false;
    for (int trial = 0; trial < opts.max_damping_trials; ++trial) {
      MatrixXd sys = hff;
      for (Eigen::Index a = 0; a < nf; ++a) sys(a, a) += damping * std::max(hff(a, a), floor);
      const VectorXd pf = sys.ldlt().solve(-gf);
      VectorXd z_new = z;
      for (Eigen::Index a = 0; a < nf; ++a) z_new[free[a]] += pf[a];
      z_new = z_new.cwiseMax(problem.lower).cwiseMin(problem.upper);
      const VectorXd step = z_new - z;
      if (step.norm() < opts.step_tol) {
        tiny_step = true;
        break;
      }
      problem.evaluate(z_new, r_trial, nullptr);
      const double cost_new = r_trial.squaredNorm();
      const double predicted = -(2.0 * grad.dot(step) + (jac * step).squaredNorm());
      if (std::isfinite(cost_new) && cost_new < cost && predicted > 0.0) {
        const double ratio = (cost - cost_new) / predicted;
        stalled = cost - cost_new <= opts.relative_reduction_tol * cost &&
                  predicted <= opts.relative_reduction_tol * cost;
        damping *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * ratio - 1.0, 3));
        growth = 2.0;
        z = z_new;
        cost = cost_new;
        accepted = true;
        break;
      }
      damping *= growth;
      growth *= 2.0;
    }
    if (tiny_step || !accepted || stalled) {
      // No representable (or worthwhile) improvement remains.
      out.converged = true;
      ++out.iterations;
      break;
    }
    problem.evaluate(z, r, &jac);
    if (!std::isfinite(r.squaredNorm())) throw std::runtime_error("lsq: non-finite cost");
  }
  out.z = z;
  out.cost = cost;
  return out;
}

void OcpSpec::validate() const {
  if (horizon < 1) throw std::invalid_argument("ocp: horizon must be >= 1");
  if (state_dim < 1 || control_dim < 1) throw std::invalid_argument("ocp: empty dimensions");
  if (x0.size() != state_dim) throw std::invalid_argument("ocp: initial state dimension");
  if (!dynamics || !stage_residual) throw std::invalid_argument("ocp: missing dynamics or cost");
  if (control_box.size() != control_dim) throw std::invalid_argument("ocp: control box dimension");
  if (state_box && state_box->size() != state_dim) throw std::invalid_argument("ocp: state box dimension");
  if (terminal_residual_dim > 0 && !terminal_residual) throw std::invalid_argument("ocp: terminal cost handle");
  if (path_constraint_dim > 0 && !path_constraints) throw std::invalid_argument("ocp: path constraint handle");
  if (free_initial_state) {
    if (initial_box.size() != state_dim) throw std::invalid_argument("ocp: initial box dimension");
    if (initial_residual_dim > 0 && !initial_residual) throw std::invalid_argument("ocp: arrival cost handle");
  } else if (state_box && state_box->violation(x0) > 1e-9) {
    throw std::invalid_argument("ocp: initial state outside the state box");
  }
}

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged:
      return "converged";
    case SolveStatus::MaxIter:
      return "max-iter";
    case SolveStatus::InfeasibleRelaxed:
      return "infeasible-relaxed";
  }
  return "unknown";
}

CostEvaluation evaluate_cost(const OcpSpec& spec, const VectorXd& x0, const MatrixXd& controls) {
  if (controls.cols() != spec.horizon || controls.rows() != spec.control_dim) {
    throw std::invalid_argument("evaluate_cost: control sequence has wrong shape");
  }
  CostEvaluation ev;
  ev.trajectory.resize(spec.state_dim, spec.horizon + 1);
  ev.trajectory.col(0) = x0;
  VectorXd r(spec.stage_residual_dim);
  if (spec.free_initial_state && spec.initial_residual_dim > 0) {
    VectorXd ri(spec.initial_residual_dim);
    spec.initial_residual(x0, ri);
    ev.cost += ri.squaredNorm();
  }
  for (int k = 0; k < spec.horizon; ++k) {
    const VectorXd xk = ev.trajectory.col(k);
    const VectorXd uk = controls.col(k);
    spec.stage_residual(xk, uk, k, r);
    ev.cost += r.squaredNorm();
    ev.trajectory.col(k + 1) = spec.dynamics(xk, uk, k);
  }
  if (spec.terminal_residual_dim > 0) {
    VectorXd rt(spec.terminal_residual_dim);
    spec.terminal_residual(ev.trajectory.col(spec.horizon), rt);
    ev.cost += rt.squaredNorm();
  }
  if (!std::isfinite(ev.cost)) throw std::runtime_error("evaluate_cost: non-finite cost");
  return ev;
}

CostEvaluation evaluate_cost(const OcpSpec& spec, const MatrixXd& controls) {
  return evaluate_cost(spec, spec.x0, controls);
}

double constraint_violation(const OcpSpec& spec, const MatrixXd& trajectory) {
  double worst = 0.0;
  VectorXd g(spec.path_constraint_dim);
  for (int k = 1; k <= spec.horizon; ++k) {
    const VectorXd xk = trajectory.col(k);
    if (spec.state_box) worst = std::max(worst, spec.state_box->violation(xk));
    if (spec.path_constraint_dim > 0) {
      spec.path_constraints(xk, k, g);
      worst = std::max(worst, g.maxCoeff());
    }
  }
  return worst;
}

namespace {

// Residual and sensitivity-based Jacobian of the penalized single-shooting
// transcription. Decision vector: [x0 (if free), u_0, ..., u_{N-1}].
class ShootingResidual {
 public:
  ShootingResidual(const OcpSpec& spec, double fd_rel) : spec_(spec), fd_rel_(fd_rel) {
    n_ = spec.state_dim;
    m_ = spec.control_dim;
    offset_ = spec.free_initial_state ? n_ : 0;
    nz_ = offset_ + m_ * spec.horizon;
    rows_ = (spec.free_initial_state ? spec.initial_residual_dim : 0) +
            spec.stage_residual_dim * spec.horizon + spec.terminal_residual_dim;
    if (spec.state_box) rows_ += n_ * spec.horizon;
    rows_ += spec.path_constraint_dim * spec.horizon;
  }

  Eigen::Index num_vars() const { return nz_; }
  Eigen::Index num_residuals() const { return rows_; }
  void set_penalty(double w) { sqrt_w_ = std::sqrt(w); }

  VectorXd pack(const VectorXd& x0, const MatrixXd& controls) const {
    VectorXd z(nz_);
    if (offset_ > 0) z.head(n_) = x0;
    z.tail(m_ * spec_.horizon) = controls.reshaped();
    return z;
  }
  VectorXd initial_state(const VectorXd& z) const { return offset_ > 0 ? VectorXd(z.head(n_)) : spec_.x0; }
  MatrixXd controls(const VectorXd& z) const {
    return z.tail(m_ * spec_.horizon).reshaped(m_, spec_.horizon);
  }

  void bounds(VectorXd& lo, VectorXd& hi) const {
    lo.resize(nz_);
    hi.resize(nz_);
    if (offset_ > 0) {
      lo.head(n_) = spec_.initial_box.lower;
      hi.head(n_) = spec_.initial_box.upper;
    }
    for (int k = 0; k < spec_.horizon; ++k) {
      lo.segment(offset_ + k * m_, m_) = spec_.control_box.lower;
      hi.segment(offset_ + k * m_, m_) = spec_.control_box.upper;
    }
  }

  void operator()(const VectorXd& z, VectorXd& r, MatrixXd* jac) const {
    const int N = spec_.horizon;
    const VectorXd x0 = initial_state(z);
    r.setZero(rows_);
    if (jac) jac->setZero(rows_, nz_);

    MatrixXd sens = MatrixXd::Zero(n_, nz_);  // d x_k / d z
    if (offset_ > 0) sens.leftCols(n_).setIdentity();

    Eigen::Index row = 0;
    if (spec_.free_initial_state && spec_.initial_residual_dim > 0) {
      const Eigen::Index d = spec_.initial_residual_dim;
      VectorXd ri(d);
      spec_.initial_residual(x0, ri);
      r.segment(row, d) = ri;
      if (jac) jac->block(row, 0, d, n_) = fd_jacobian_x(x0, d, [&](const VectorXd& x, VectorXd& out) {
        spec_.initial_residual(x, out);
      });
      row += d;
    }

    VectorXd x = x0;
    std::vector<VectorXd> states(static_cast<size_t>(N + 1));
    std::vector<MatrixXd> sens_hist;
    if (jac) sens_hist.resize(static_cast<size_t>(N + 1));
    states[0] = x;
    if (jac) sens_hist[0] = sens;

    const Eigen::Index ds = spec_.stage_residual_dim;
    VectorXd rs(ds);
    for (int k = 0; k < N; ++k) {
      const VectorXd u = z.segment(offset_ + k * m_, m_);
      spec_.stage_residual(x, u, k, rs);
      r.segment(row, ds) = rs;
      VectorXd next = spec_.dynamics(x, u, k);
      if (jac) {
        MatrixXd rx, ru, ax, bu;
        stage_derivatives(x, u, k, rx, ru, ax, bu);
        jac->block(row, 0, ds, nz_).noalias() = rx * sens;
        jac->block(row, offset_ + k * m_, ds, m_) += ru;
        MatrixXd next_sens = ax * sens;
        next_sens.block(0, offset_ + k * m_, n_, m_) += bu;
        sens = std::move(next_sens);
        sens_hist[static_cast<size_t>(k + 1)] = sens;
      }
      row += ds;
      x = std::move(next);
      states[static_cast<size_t>(k + 1)] = x;
    }

    if (spec_.terminal_residual_dim > 0) {
      const Eigen::Index d = spec_.terminal_residual_dim;
      VectorXd rt(d);
      spec_.terminal_residual(x, rt);
      r.segment(row, d) = rt;
      if (jac) {
        const MatrixXd tx = fd_jacobian_x(x, d, [&](const VectorXd& xs, VectorXd& out) {
          spec_.terminal_residual(xs, out);
        });
        jac->block(row, 0, d, nz_).noalias() = tx * sens;
      }
      row += d;
    }

    if (spec_.state_box) {
      const auto& box = *spec_.state_box;
      for (int k = 1; k <= N; ++k) {
        const VectorXd& xk = states[static_cast<size_t>(k)];
        for (Eigen::Index i = 0; i < n_; ++i, ++row) {
          double excess = 0.0;
          double slope = 0.0;
          if (xk[i] < box.lower[i]) {
            excess = box.lower[i] - xk[i];
            slope = -1.0;
          } else if (xk[i] > box.upper[i]) {
            excess = xk[i] - box.upper[i];
            slope = 1.0;
          }
          r[row] = sqrt_w_ * excess;
          if (jac && slope != 0.0) {
            jac->row(row) = sqrt_w_ * slope * sens_hist[static_cast<size_t>(k)].row(i);
          }
        }
      }
    }

    if (spec_.path_constraint_dim > 0) {
      const Eigen::Index d = spec_.path_constraint_dim;
      VectorXd g(d);
      for (int k = 1; k <= N; ++k) {
        const VectorXd& xk = states[static_cast<size_t>(k)];
        spec_.path_constraints(xk, k, g);
        const VectorXd active = g.cwiseMax(0.0);
        r.segment(row, d) = sqrt_w_ * active;
        if (jac && active.maxCoeff() > 0.0) {
          const MatrixXd gx = fd_jacobian_x(xk, d, [&](const VectorXd& xs, VectorXd& out) {
            spec_.path_constraints(xs, k, out);
          });
          for (Eigen::Index i = 0; i < d; ++i) {
            if (g[i] > 0.0) {
              jac->row(row + i).noalias() = sqrt_w_ * gx.row(i) * sens_hist[static_cast<size_t>(k)];
            }
          }
        }
        row += d;
      }
    }
  }

 private:
  double step_for(double v) const { return fd_rel_ * std::max(1.0, std::abs(v)); }

  template <class F>
  MatrixXd fd_jacobian_x(const VectorXd& x, Eigen::Index out_dim, F&& f) const {
    MatrixXd jac(out_dim, x.size());
    VectorXd xp = x, xm = x, fp(out_dim), fm(out_dim);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double h = step_for(x[i]);
      xp[i] = x[i] + h;
      xm[i] = x[i] - h;
      f(xp, fp);
      f(xm, fm);
      jac.col(i) = (fp - fm) / (2.0 * h);
      xp[i] = xm[i] = x[i];
    }
    return jac;
  }

  void stage_derivatives(const VectorXd& x, const VectorXd& u, int k, MatrixXd& rx, MatrixXd& ru,
                         MatrixXd& ax, MatrixXd& bu) const {
    const Eigen::Index ds = spec_.stage_residual_dim;
    rx.resize(ds, n_);
    ru.resize(ds, m_);
    ax.resize(n_, n_);
    bu.resize(n_, m_);
    VectorXd rp(ds), rm(ds);
    VectorXd xp = x, xm = x;
    for (Eigen::Index i = 0; i < n_; ++i) {
      const double h = step_for(x[i]);
      xp[i] = x[i] + h;
      xm[i] = x[i] - h;
      spec_.stage_residual(xp, u, k, rp);
      spec_.stage_residual(xm, u, k, rm);
      rx.col(i) = (rp - rm) / (2.0 * h);
      ax.col(i) = (spec_.dynamics(xp, u, k) - spec_.dynamics(xm, u, k)) / (2.0 * h);
      xp[i] = xm[i] = x[i];
    }
    VectorXd up = u, um = u;
    for (Eigen::Index j = 0; j < m_; ++j) {
      const double h = step_for(u[j]);
      up[j] = u[j] + h;
      um[j] = u[j] - h;
      spec_.stage_residual(x, up, k, rp);
      spec_.stage_residual(x, um, k, rm);
      ru.col(j) = (rp - rm) / (2.0 * h);
      bu.col(j) = (spec_.dynamics(x, up, k) - spec_.dynamics(x, um, k)) / (2.0 * h);
      up[j] = um[j] = u[j];
    }
  }

  const OcpSpec& spec_;
  double fd_rel_;
  Eigen::Index n_ = 0, m_ = 0, offset_ = 0, nz_ = 0, rows_ = 0;
  double sqrt_w_ = 0.0;
};

bool has_penalties(const OcpSpec& spec) {
  return spec.state_box.has_value() || spec.path_constraint_dim > 0;
}

}  // namespace

ShootingLinearization linearize_shooting(const OcpSpec& spec, const VectorXd& x0, const MatrixXd& controls,
                                         double penalty_weight, double fd_relative_step) {
  spec.validate();
  ShootingResidual residual(spec, fd_relative_step);
  residual.set_penalty(penalty_weight);
  ShootingLinearization lin;
  residual(residual.pack(x0, controls), lin.residual, &lin.jacobian);
  return lin;
}

OcpSolution solve(const OcpSpec& spec, const std::optional<MatrixXd>& warm_start, const OcpOptions& opts) {
  spec.validate();
  ShootingResidual residual(spec, opts.fd_relative_step);
  LsqProblem problem;
  problem.num_vars = residual.num_vars();
  problem.num_residuals = residual.num_residuals();
  residual.bounds(problem.lower, problem.upper);
  problem.evaluate = [&residual](const VectorXd& z, VectorXd& r, MatrixXd* jac) { residual(z, r, jac); };

  MatrixXd guess = warm_start ? *warm_start : MatrixXd::Zero(spec.control_dim, spec.horizon);
  if (guess.rows() != spec.control_dim || guess.cols() != spec.horizon) {
    throw std::invalid_argument("solve: warm start has wrong shape");
  }
  VectorXd z = residual.pack(spec.x0, guess);

  std::vector<double> schedule = opts.penalty_schedule;
  if (!has_penalties(spec) || schedule.empty()) schedule = {0.0};

  OcpSolution sol;
  bool converged = false;
  for (double weight : schedule) {
    residual.set_penalty(weight);
    const LsqResult res = solve_bounded_lsq(problem, z, opts.lsq);
    z = res.z;
    sol.iterations += res.iterations;
    converged = res.converged;
    const VectorXd x0 = residual.initial_state(z);
    const CostEvaluation ev = evaluate_cost(spec, x0, residual.controls(z));
    sol.max_violation = constraint_violation(spec, ev.trajectory);
    if (sol.max_violation <= opts.feasibility_tol) break;
  }
  sol.controls = residual.controls(z);
  const CostEvaluation ev = evaluate_cost(spec, residual.initial_state(z), sol.controls);
  sol.trajectory = ev.trajectory;
  sol.objective = ev.cost;
  if (sol.max_violation > opts.feasibility_tol) {
    sol.status = SolveStatus::InfeasibleRelaxed;
  } else {
    sol.status = converged ? SolveStatus::Converged : SolveStatus::MaxIter;
  }
  return sol;
}

OcpSolution solve_multistart(const OcpSpec& spec, const std::vector<MatrixXd>& guesses, const OcpOptions& opts) {
  if (guesses.empty()) return solve(spec, std::nullopt, opts);
  std::optional<OcpSolution> best;
  for (const auto& g : guesses) {
    OcpSolution s = solve(spec, g, opts);
    if (!best) {
      best = std::move(s);
      continue;
    }
    const bool s_feasible = s.status != SolveStatus::InfeasibleRelaxed;
    const bool b_feasible = best->status != SolveStatus::InfeasibleRelaxed;
    if ((s_feasible && !b_feasible) ||
        (s_feasible == b_feasible && (b_feasible ? s.objective < best->objective
                                                  : s.max_violation < best->max_violation))) {
      best = std::move(s);
    }
  }
  return *best;
}

OcpSolution brute_force_solve(const OcpSpec& spec, int grid_points_per_control_dim) {
  spec.validate();
  if (spec.horizon > 4) throw std::invalid_argument("brute_force_solve: horizon must be <= 4");
  if (grid_points_per_control_dim < 1) throw std::invalid_argument("brute_force_solve: empty grid");
  const auto G = static_cast<double>(grid_points_per_control_dim);
  const auto vars = static_cast<double>(spec.control_dim * spec.horizon);
  if (std::pow(G, vars) > 1e7) throw std::invalid_argument("brute_force_solve: enumeration budget exceeded");

  const Eigen::Index m = spec.control_dim;
  const int N = spec.horizon;
  const Eigen::Index total = m * N;
  auto level = [&](Eigen::Index dim, int idx) {
    const double lo = spec.control_box.lower[dim];
    const double hi = spec.control_box.upper[dim];
    if (grid_points_per_control_dim == 1 || lo == hi) return 0.5 * (lo + hi);
    return lo + (hi - lo) * idx / (grid_points_per_control_dim - 1);
  };

  std::vector<int> counter(static_cast<size_t>(total), 0);
  MatrixXd controls(m, N);
  OcpSolution best;
  best.objective = kInf;
  best.status = SolveStatus::InfeasibleRelaxed;
  double least_violation = kInf;
  MatrixXd least_violating;
  for (;;) {
    for (Eigen::Index i = 0; i < total; ++i) controls(i % m, i / m) = level(i % m, counter[static_cast<size_t>(i)]);
    const CostEvaluation ev = evaluate_cost(spec, controls);
    const double viol = constraint_violation(spec, ev.trajectory);
    ++best.iterations;
    if (viol <= 1e-9) {
      if (ev.cost < best.objective) {
        best.objective = ev.cost;
        best.controls = controls;
        best.trajectory = ev.trajectory;
        best.max_violation = viol;
        best.status = SolveStatus::Converged;
      }
    } else if (viol < least_violation) {
      least_violation = viol;
      least_violating = controls;
    }
    Eigen::Index pos = 0;
    while (pos < total && ++counter[static_cast<size_t>(pos)] == grid_points_per_control_dim) {
      counter[static_cast<size_t>(pos)] = 0;
      ++pos;
    }
    if (pos == total) break;
  }
  if (best.status == SolveStatus::InfeasibleRelaxed) {
    const CostEvaluation ev = evaluate_cost(spec, least_violating);
    best.controls = least_violating;
    best.trajectory = ev.trajectory;
    best.objective = ev.cost;
    best.max_violation = least_violation;
  }
  return best;
}

}  // namespace nhmpc
