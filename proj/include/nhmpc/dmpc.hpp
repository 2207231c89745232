#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nhmpc/dynamics.hpp"
#include "nhmpc/ocp.hpp"

namespace nhmpc {

struct GridSpec {
  double cell = 0.5;
  double x_bar = 6.0;
  double y_bar = 6.0;
  int a_max = 24;
  int b_max = 24;

  // Throws unless 2 x_bar and 2 y_bar are integer multiples of the cell width.
  static GridSpec make(double cell, double x_bar, double y_bar);
  void validate() const;
};

struct CellIndex {
  int a = 0;
  int b = 0;
  bool operator==(const CellIndex&) const = default;
};

// Points on the upper boundary map to the last cell.
CellIndex quantize(const GridSpec& g, double x, double y);
inline CellIndex quantize(const GridSpec& g, const RobotState& s) { return quantize(g, s.x, s.y); }
Eigen::Vector2d cell_center(const GridSpec& g, CellIndex idx);

struct Occupancy {
  std::uint32_t step = 0;
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  bool operator==(const Occupancy&) const = default;
};

// Timestamped cells of one prediction, ordered by step.
using OccupancyGrid = std::vector<Occupancy>;

OccupancyGrid occupancy_grid(const GridSpec& g, const Eigen::MatrixXd& trajectory, std::uint32_t first_step);

// Smallest cell width a robot cannot cross within one sampling period.
double minimal_cell_width(double v_bar, double delta);
inline constexpr double SAFETY_EPS = 1e-3;
double safety_margin(const GridSpec& g, double v_bar, double delta, double d_min);

inline constexpr double SQUIRCLE_SMOOTHING = 1e-6;
// Positive inside the squircle of side psi around `center`.
double squircle_constraint(const Eigen::Vector2d& own, const Eigen::Vector2d& center, double psi);

// Sender side of the differential scheme. Memory holds the previous grid
// without its first entry.
class DiffEncoder {
 public:
  OccupancyGrid encode(const OccupancyGrid& current);
  [[nodiscard]] const OccupancyGrid& memory() const { return memory_; }

 private:
  OccupancyGrid memory_;
};

// Receiver side; rebuilds the full grid of one sender.
class DiffDecoder {
 public:
  explicit DiffDecoder(std::size_t horizon) : horizon_(horizon) {}
  // Throws std::runtime_error when the assembled grid has gaps or the wrong length.
  OccupancyGrid decode(const OccupancyGrid& update);
  [[nodiscard]] const OccupancyGrid& memory() const { return memory_; }

 private:
  std::size_t horizon_;
  OccupancyGrid memory_;
};

// u32 count followed by (step, a, b) u32 triples, all little-endian.
std::vector<std::uint8_t> serialize(std::span<const Occupancy> update);
OccupancyGrid deserialize(std::span<const std::uint8_t> bytes);

struct DmpcWeights {
  double q1 = 1.0, q2 = 25.0, q3 = 1.0, r1 = 0.2, r2 = 0.2;
};

struct DmpcRobot {
  RobotState initial;
  RobotState reference;
};

struct DmpcScenario {
  std::vector<DmpcRobot> robots;
  GridSpec grid = GridSpec::make(0.5, 6.0, 6.0);
  double v_bar = 1.0;
  double omega_bar = 1.0;
  double d_min = 0.5;
  int horizon = 9;
  DmpcWeights weights;
  double delta = 0.5;
  double threshold = 0.01;
  int max_steps = 200;
  int random_starts = 2;
  std::uint64_t seed = 1;
  OcpOptions ocp;

  // Four robots swapping corners of [-6, 6]^2.
  static DmpcScenario four_corners(double cell, int horizon = 9);
  void validate() const;
};

double dmpc_stage_cost(const DmpcWeights& w, const RobotState& error, const ControlInput& u);

// Robot i's OCP given the grids of all other robots; `now` is the current step.
OcpSpec dmpc_ocp(const DmpcScenario& sc, std::size_t robot, const RobotState& x0,
                 const std::vector<OccupancyGrid>& others, std::uint32_t now, double cost_scale = 1.0);

struct DmpcStep {
  int step = 0;
  std::vector<RobotState> states;
  std::vector<ControlInput> controls;
  std::vector<double> stage_costs;
  std::vector<std::size_t> broadcast;  // tuples sent per robot
  std::vector<SolveStatus> statuses;
  std::vector<double> violations;  // predicted constraint violation of each solve
};

struct DmpcMetrics {
  double cell = 0.0;
  int horizon = 0;
  int n_sharp = 0;
  std::size_t k_diff = 0;
  std::size_t k_full = 0;
  double reduction_pct = 0.0;
  double m_total = 0.0;
  bool converged = false;
};

struct DmpcResult {
  std::vector<DmpcStep> steps;
  std::vector<RobotState> final_states;
  DmpcMetrics metrics;
  std::optional<std::string> failure;
};

DmpcResult run_dmpc(const DmpcScenario& sc);

double min_pairwise_distance(std::span<const RobotState> states);

}  // namespace nhmpc
