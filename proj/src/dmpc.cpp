#include "nhmpc/dmpc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

namespace nhmpc {

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();

double sq(double v) { return v * v; }

bool is_multiple(double length, double cell, int& count) {
  const double ratio = length / cell;
  count = static_cast<int>(std::lround(ratio));
  return count >= 1 && std::abs(ratio - count) <= 1e-9 * std::max(1.0, ratio);
}

MatrixXd shifted(const MatrixXd& controls) {
  MatrixXd out = MatrixXd::Zero(controls.rows(), controls.cols());
  if (controls.cols() > 1) out.leftCols(controls.cols() - 1) = controls.rightCols(controls.cols() - 1);
  return out;
}

// Cell of `grid` at absolute step `step`; the nearest end is held outside its span.
const Occupancy& at_step(const OccupancyGrid& grid, std::uint32_t step) {
  if (step <= grid.front().step) return grid.front();
  const std::size_t offset = step - grid.front().step;
  return offset < grid.size() ? grid[offset] : grid.back();
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
  return v;
}

}  // namespace

GridSpec GridSpec::make(double cell, double x_bar, double y_bar) {
  GridSpec g;
  g.cell = cell;
  g.x_bar = x_bar;
  g.y_bar = y_bar;
  if (!(cell > 0.0) || !is_multiple(2 * x_bar, cell, g.a_max) || !is_multiple(2 * y_bar, cell, g.b_max)) {
    throw std::invalid_argument("grid: 2 x_bar and 2 y_bar must be multiples of the cell width");
  }
  return g;
}

void GridSpec::validate() const {
  if (!(cell > 0.0) || a_max < 1 || b_max < 1) throw std::invalid_argument("grid: invalid dimensions");
  if (std::abs(a_max * cell - 2 * x_bar) > 1e-9 || std::abs(b_max * cell - 2 * y_bar) > 1e-9) {
    throw std::invalid_argument("grid: cell counts do not tile the region");
  }
}

CellIndex quantize(const GridSpec& g, double x, double y) {
  if (!(std::abs(x) <= g.x_bar) || !(std::abs(y) <= g.y_bar)) {
    throw std::out_of_range("quantize: position outside the gridded region");
  }
  const int a = static_cast<int>(std::floor((x + g.x_bar) / g.cell));
  const int b = static_cast<int>(std::floor((y + g.y_bar) / g.cell));
  return {std::min(a, g.a_max - 1), std::min(b, g.b_max - 1)};
}

Eigen::Vector2d cell_center(const GridSpec& g, CellIndex idx) {
  if (idx.a < 0 || idx.a >= g.a_max || idx.b < 0 || idx.b >= g.b_max) {
    throw std::out_of_range("cell_center: index outside the grid");
  }
  return {g.cell * (idx.a + 0.5) - g.x_bar, g.cell * (idx.b + 0.5) - g.y_bar};
}

OccupancyGrid occupancy_grid(const GridSpec& g, const Eigen::MatrixXd& trajectory, std::uint32_t first_step) {
  OccupancyGrid grid;
  grid.reserve(static_cast<std::size_t>(trajectory.cols()));
  for (Eigen::Index k = 0; k < trajectory.cols(); ++k) {
    // Predictions may leave the box by the solver's feasibility tolerance.
    const double x = std::clamp(trajectory(0, k), -g.x_bar, g.x_bar);
    const double y = std::clamp(trajectory(1, k), -g.y_bar, g.y_bar);
    const CellIndex c = quantize(g, x, y);
    grid.push_back({first_step + static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(c.a),
                    static_cast<std::uint32_t>(c.b)});
  }
  return grid;
}

double minimal_cell_width(double v_bar, double delta) {
  if (!(v_bar > 0.0) || !(delta > 0.0)) throw std::invalid_argument("minimal_cell_width: positive inputs required");
  return v_bar * delta;
}

double safety_margin(const GridSpec& g, double v_bar, double delta, double d_min) {
  if (d_min < 0.0) throw std::invalid_argument("safety_margin: negative minimum distance");
  const double c_min = minimal_cell_width(v_bar, delta);
  if (g.cell < c_min * (1 - 1e-12)) throw std::invalid_argument("safety_margin: cell narrower than one step of travel");
  return g.cell + 2 * std::max(d_min, c_min) + c_min * std::cos(std::numbers::pi / 4) + SAFETY_EPS;
}

double squircle_constraint(const Eigen::Vector2d& own, const Eigen::Vector2d& center, double psi) {
  if (!(psi > 0.0)) throw std::invalid_argument("squircle_constraint: psi must be positive");
  const Eigen::Vector2d d = own - center;
  const double dist = d.norm();
  const double scale = psi / std::pow(2.0, 0.75);
  if (dist == 0.0) return scale;
  const double c = std::sqrt(sq(d.x() / dist) + SQUIRCLE_SMOOTHING);
  const double s = std::sqrt(sq(d.y() / dist) + SQUIRCLE_SMOOTHING);
  return scale * std::sqrt(c + s) - dist;
}

OccupancyGrid DiffEncoder::encode(const OccupancyGrid& current) {
  OccupancyGrid update;
  for (const auto& t : current) {
    if (std::find(memory_.begin(), memory_.end(), t) == memory_.end()) update.push_back(t);
  }
  memory_.assign(current.begin() + (current.empty() ? 0 : 1), current.end());
  return update;
}

OccupancyGrid DiffDecoder::decode(const OccupancyGrid& update) {
  OccupancyGrid full = memory_;
  for (const auto& t : update) {
    auto same = std::find_if(full.begin(), full.end(), [&](const Occupancy& m) { return m.step == t.step; });
    if (same != full.end()) {
      *same = t;
    } else {
      full.push_back(t);
    }
  }
  std::sort(full.begin(), full.end(), [](const Occupancy& l, const Occupancy& r) { return l.step < r.step; });
  if (full.size() != horizon_ + 1) throw std::runtime_error("diff_decode: assembled grid has the wrong length");
  for (std::size_t i = 1; i < full.size(); ++i) {
    if (full[i].step != full[i - 1].step + 1) throw std::runtime_error("diff_decode: gap in timestamps");
  }
  memory_.assign(full.begin() + 1, full.end());
  return full;
}

std::vector<std::uint8_t> serialize(std::span<const Occupancy> update) {
  std::vector<std::uint8_t> out;
  out.reserve(4 + 12 * update.size());
  put_u32(out, static_cast<std::uint32_t>(update.size()));
  for (const auto& t : update) {
    put_u32(out, t.step);
    put_u32(out, t.a);
    put_u32(out, t.b);
  }
  return out;
}

OccupancyGrid deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw std::runtime_error("deserialize: truncated header");
  const std::uint32_t count = get_u32(bytes, 0);
  if (bytes.size() != 4 + 12 * static_cast<std::size_t>(count)) throw std::runtime_error("deserialize: length mismatch");
  OccupancyGrid out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t pos = 4 + 12 * i;
    out[i] = {get_u32(bytes, pos), get_u32(bytes, pos + 4), get_u32(bytes, pos + 8)};
  }
  return out;
}

DmpcScenario DmpcScenario::four_corners(double cell, int horizon) {
  using std::numbers::pi;
  DmpcScenario sc;
  sc.grid = GridSpec::make(cell, 6.0, 6.0);
  sc.horizon = horizon;
  sc.robots = {
      {{4.5, 4.5, -3 * pi / 4}, {-4.5, -4.5, pi}},
      {{-4.5, 4.5, -pi / 4}, {4.5, -4.5, 0.0}},
      {{4.5, -4.5, 3 * pi / 4}, {-4.5, 4.5, pi}},
      {{-4.5, -4.5, pi / 4}, {4.5, 4.5, 0.0}},
  };
  return sc;
}

void DmpcScenario::validate() const {
  grid.validate();
  if (robots.empty()) throw std::invalid_argument("dmpc: no robots");
  if (horizon < 1 || max_steps < 1) throw std::invalid_argument("dmpc: horizon and max_steps must be positive");
  if (!(delta > 0.0) || !(v_bar > 0.0) || !(omega_bar > 0.0) || !(threshold > 0.0)) {
    throw std::invalid_argument("dmpc: delta, bounds and threshold must be positive");
  }
  for (double w : {weights.q1, weights.q2, weights.q3, weights.r1, weights.r2}) {
    if (!(w > 0.0)) throw std::invalid_argument("dmpc: weights must be positive");
  }
  (void)safety_margin(grid, v_bar, delta, d_min);
  for (const auto& r : robots) {
    for (const auto& s : {r.initial, r.reference}) {
      if (std::abs(s.x) > grid.x_bar || std::abs(s.y) > grid.y_bar) {
        throw std::invalid_argument("dmpc: robot state outside the gridded region");
      }
    }
  }
}

double dmpc_stage_cost(const DmpcWeights& w, const RobotState& e, const ControlInput& u) {
  return w.q1 * sq(sq(e.x)) + w.q2 * sq(e.y) + w.q3 * sq(sq(e.theta)) + w.r1 * sq(sq(u.v)) + w.r2 * sq(sq(u.omega));
}

OcpSpec dmpc_ocp(const DmpcScenario& sc, std::size_t robot, const RobotState& x0,
                 const std::vector<OccupancyGrid>& others, std::uint32_t now, double cost_scale) {
  if (robot >= sc.robots.size()) throw std::out_of_range("dmpc_ocp: robot index");
  if (!(cost_scale > 0.0)) throw std::invalid_argument("dmpc_ocp: cost scale must be positive");
  for (const auto& g : others) {
    if (g.empty()) throw std::invalid_argument("dmpc_ocp: empty occupancy grid");
  }
  OcpSpec spec;
  spec.horizon = sc.horizon;
  spec.state_dim = 3;
  spec.control_dim = 2;
  spec.x0 = to_vec(x0);
  const double delta = sc.delta;
  spec.dynamics = [delta](const VectorXd& x, const VectorXd& u, int) {
    return VectorXd(to_vec(euler_step(robot_state_from(x), {u[0], u[1]}, delta)));
  };
  const Eigen::Vector3d ref = to_vec(sc.robots[robot].reference);
  const auto& w = sc.weights;
  const double unit = 1.0 / std::sqrt(cost_scale);
  const Eigen::Matrix<double, 5, 1> root{std::sqrt(w.q1) * unit, std::sqrt(w.q2) * unit, std::sqrt(w.q3) * unit,
                                         std::sqrt(w.r1) * unit, std::sqrt(w.r2) * unit};
  spec.stage_residual_dim = 5;
  spec.stage_residual = [=](const VectorXd& x, const VectorXd& u, int, VectorXd& r) {
    const Eigen::Vector3d e = x - ref;
    r << root[0] * sq(e[0]), root[1] * e[1], root[2] * sq(e[2]), root[3] * sq(u[0]), root[4] * sq(u[1]);
  };
  spec.state_box = BoxConstraints(Eigen::Vector3d(-sc.grid.x_bar, -sc.grid.y_bar, -inf),
                                  Eigen::Vector3d(sc.grid.x_bar, sc.grid.y_bar, inf));
  spec.control_box = BoxConstraints(Eigen::Vector2d(-sc.v_bar, -sc.omega_bar), Eigen::Vector2d(sc.v_bar, sc.omega_bar));

  if (!others.empty()) {
    const double psi = safety_margin(sc.grid, sc.v_bar, sc.delta, sc.d_min);
    const GridSpec grid = sc.grid;
    // Centers per other robot and predicted stage k = 1..N.
    std::vector<std::vector<Eigen::Vector2d>> centers(others.size());
    for (std::size_t j = 0; j < others.size(); ++j) {
      for (int k = 1; k <= sc.horizon; ++k) {
        const auto& t = at_step(others[j], now + static_cast<std::uint32_t>(k));
        centers[j].push_back(cell_center(grid, {static_cast<int>(t.a), static_cast<int>(t.b)}));
      }
    }
    spec.path_constraint_dim = static_cast<Eigen::Index>(others.size());
    spec.path_constraints = [centers = std::move(centers), psi](const VectorXd& x, int k, VectorXd& g) {
      const Eigen::Vector2d own = x.head<2>();
      for (std::size_t j = 0; j < centers.size(); ++j) {
        g[static_cast<Eigen::Index>(j)] = squircle_constraint(own, centers[j][static_cast<std::size_t>(k - 1)], psi);
      }
    };
  }
  spec.validate();
  return spec;
}

double min_pairwise_distance(std::span<const RobotState> states) {
  double best = inf;
  for (std::size_t i = 0; i < states.size(); ++i) {
    for (std::size_t j = i + 1; j < states.size(); ++j) {
      best = std::min(best, std::hypot(states[i].x - states[j].x, states[i].y - states[j].y));
    }
  }
  return best;
}

namespace {

OcpSolution solve_robot(const DmpcScenario& sc, std::size_t i, const RobotState& x,
                        const std::vector<OccupancyGrid>& others, std::uint32_t now, const MatrixXd& warm,
                        std::mt19937_64& rng) {
  const RobotState& ref = sc.robots[i].reference;
  const double scale = dmpc_stage_cost(sc.weights, {x.x - ref.x, x.y - ref.y, x.theta - ref.theta}, {});
  const OcpSpec spec = dmpc_ocp(sc, i, x, others, now, scale > 0.0 ? scale : 1.0);
  std::vector<MatrixXd> guesses{warm, MatrixXd::Zero(2, sc.horizon)};
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int s = 0; s < sc.random_starts; ++s) {
    MatrixXd u(2, sc.horizon);
    for (int k = 0; k < sc.horizon; ++k) {
      u(0, k) = sc.v_bar * unit(rng);
      u(1, k) = sc.omega_bar * unit(rng);
    }
    guesses.push_back(std::move(u));
  }
  OcpSolution sol = solve_multistart(spec, guesses, sc.ocp);
  if (scale > 0.0) sol.objective *= scale;
  return sol;
}

}  // namespace

DmpcResult run_dmpc(const DmpcScenario& sc) {
  sc.validate();
  const std::size_t P = sc.robots.size();
  const auto N = static_cast<std::size_t>(sc.horizon);
  const BoxConstraints input_box(Eigen::Vector2d(-sc.v_bar, -sc.omega_bar), Eigen::Vector2d(sc.v_bar, sc.omega_bar));

  DmpcResult result;
  result.metrics.cell = sc.grid.cell;
  result.metrics.horizon = sc.horizon;

  std::vector<RobotState> x(P);
  std::vector<MatrixXd> warm(P, MatrixXd::Zero(2, sc.horizon));
  // latest[i][j]: robot j's grid as known to robot i. Initial grids come from u = 0.
  std::vector<std::vector<OccupancyGrid>> latest(P, std::vector<OccupancyGrid>(P));
  std::vector<DiffEncoder> encoders(P);
  std::vector<std::vector<DiffDecoder>> decoders(P, std::vector<DiffDecoder>(P, DiffDecoder(N)));
  for (std::size_t j = 0; j < P; ++j) {
    x[j] = sc.robots[j].initial;
    const MatrixXd still = to_vec(x[j]).replicate(1, sc.horizon + 1);
    const OccupancyGrid init = occupancy_grid(sc.grid, still, 0);
    for (std::size_t i = 0; i < P; ++i) latest[i][j] = init;
  }

  auto all_converged = [&] {
    for (std::size_t i = 0; i < P; ++i) {
      const auto& r = sc.robots[i].reference;
      if ((to_vec(x[i]) - to_vec(r)).norm() > sc.threshold) return false;
    }
    return true;
  };

  std::mt19937_64 rng(sc.seed);
  for (int n = 0; n < sc.max_steps && !all_converged(); ++n) {
    const auto now = static_cast<std::uint32_t>(n);
    DmpcStep row;
    row.step = n;
    row.states = x;
    std::vector<RobotState> next = x;
    for (std::size_t i = 0; i < P; ++i) {
      std::vector<OccupancyGrid> others;
      for (std::size_t j = 0; j < P; ++j) {
        if (j != i) others.push_back(latest[i][j]);
      }
      OcpSolution sol;
      try {
        sol = solve_robot(sc, i, x[i], others, now, warm[i], rng);
      } catch (const std::exception& e) {
        result.failure = "step " + std::to_string(n) + ", robot " + std::to_string(i + 1) + ": " + e.what();
        result.steps.push_back(row);
        result.final_states = x;
        return result;
      }
      const VectorXd u = input_box.clamp(sol.controls.col(0));
      const ControlInput applied{u[0], u[1]};
      const auto& ref = sc.robots[i].reference;
      row.controls.push_back(applied);
      row.stage_costs.push_back(
          dmpc_stage_cost(sc.weights, {x[i].x - ref.x, x[i].y - ref.y, x[i].theta - ref.theta}, applied));
      row.statuses.push_back(sol.status);
      row.violations.push_back(sol.max_violation);
      next[i] = euler_step(x[i], applied, sc.delta);
      warm[i] = shifted(sol.controls);

      if (P == 1) continue;
      const OccupancyGrid update = encoders[i].encode(occupancy_grid(sc.grid, sol.trajectory, now));
      const auto wire = serialize(update);
      for (std::size_t j = 0; j < P; ++j) {
        if (j != i) latest[j][i] = decoders[j][i].decode(deserialize(wire));
      }
      row.broadcast.push_back(update.size());
      result.metrics.k_diff += update.size();
      result.metrics.k_full += N + 1;
    }
    for (double l : row.stage_costs) result.metrics.m_total += l;
    result.steps.push_back(std::move(row));
    x = std::move(next);
    result.metrics.n_sharp = n + 1;
  }
  result.final_states = x;
  result.metrics.converged = all_converged();
  if (result.metrics.k_full > 0) {
    result.metrics.reduction_pct =
        100.0 * (1.0 - static_cast<double>(result.metrics.k_diff) / static_cast<double>(result.metrics.k_full));
  }
  return result;
}

}  // namespace nhmpc
