#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nhmpc/certify_path.hpp"
#include "nhmpc/certify_regulation.hpp"
#include "nhmpc/closedloop.hpp"
#include "nhmpc/dmpc.hpp"
#include "nhmpc/relloc.hpp"

namespace nhmpc {

using Json = nlohmann::ordered_json;

std::filesystem::path data_dir();

Json load_json_file(const std::filesystem::path& path);

// "a.b=value": value is parsed as JSON when possible, otherwise stored as a string.
void apply_override(Json& doc, std::string_view assignment);

// Shortest round-trip decimal form; identical input gives identical text.
std::string format_number(double v);

// ---- scenario documents ----
// Every document carries "kind"; keys that are absent keep the defaults of the
// corresponding scenario type, unknown keys are rejected.

struct RegulationBatch {
  std::vector<RegulationScenario> runs;
};
RegulationBatch regulation_batch_from(const Json& doc);

struct MpfcBatch {
  std::vector<MpfcScenario> runs;
};
MpfcBatch mpfc_batch_from(const Json& doc);

struct DmpcBatch {
  std::vector<DmpcScenario> runs;  // one per cell width
};
DmpcBatch dmpc_batch_from(const Json& doc);

MrsScenario mrs_scenario_from(const Json& doc);
MrsReportOptions mrs_report_options_from(const Json& doc);

struct RmseBatch {
  std::vector<int> noise_cases;
  std::vector<RmseScenario> runs;  // one per noise case
};
RmseBatch rmse_batch_from(const Json& doc);

struct CertifyGrid {
  std::vector<double> deltas;
  std::vector<double> q2s;
  HorizonSearchOptions search;
};
CertifyGrid certify_grid_from(const Json& doc);

struct PathSweepSpec {
  double q_hat = 20.0;
  double epsilon = 2.0;
};
struct CertifyPathPlan {
  double delta = 0.1;
  double t_max = 40.0;  // longest horizon of the sweep (s)
  double amplitude = 0.6;
  double frequency = 0.25;
  PathWeights weights;
  std::vector<PathSweepSpec> sweeps;
};
CertifyPathPlan certify_path_plan_from(const Json& doc);

// ---- reference values shipped with the repository ----

struct ReferenceTables {
  std::vector<double> deltas;
  std::vector<double> q2s;
  std::vector<std::vector<int>> n_hat;  // [delta][q2]
  int n_hat_tolerance = 1;
  double example_alpha = 0.0;
  int example_alpha_horizon = 2;
  double example_alpha_tolerance = 0.0;
  std::vector<double> dmpc_cells;
  std::vector<int> dmpc_iterations;
  std::vector<double> dmpc_reduction_pct;
  std::vector<int> dmpc_min_horizon;
  std::vector<int> dmpc_n_sharp;
  double dmpc_reduction_min_pct = 60.0;
  int dmpc_step_slack = 15;  // allowed extra closed-loop steps over the reference count

  // Reference N-hat of one cell, if it is in the table.
  [[nodiscard]] std::optional<int> n_hat_at(double delta, double q2) const;
};
ReferenceTables load_reference_tables(const std::filesystem::path& path = data_dir() / "reference_tables.json");

// ---- tabular outputs ----

struct CertifyRow {
  double delta = 0.0;
  double q2 = 0.0;
  int n_hat = 0;
  double alpha = 0.0;
  double s_opt = 0.0;
  std::optional<int> reference;
  std::string error;  // empty on success
};

// step,x,y,theta[,lambda],v,omega[,g],V,ell,status
void write_trace_csv(std::ostream& out, const ClosedLoopTrace& trace);
// delta,q2,N_hat,alpha,s_opt,reference,diff,error
void write_certify_csv(std::ostream& out, std::span<const CertifyRow> rows);
Json certify_summary(std::span<const CertifyRow> rows);

struct PathSweepRow {
  double q_hat = 0.0;
  double epsilon = 0.0;
  double horizon = 0.0;
  double alpha = 0.0;
  std::string error;
};
// q_hat,epsilon,T,alpha,error
void write_path_sweep_csv(std::ostream& out, std::span<const PathSweepRow> rows);

// step,robot,x,y,theta,v,omega,ell,sent,status
void write_dmpc_trace_csv(std::ostream& out, const DmpcResult& result);
Json dmpc_metrics_json(const DmpcMetrics& m);

// t,robot,x,y,z,theta,x_hat,y_hat,z_hat,theta_hat,sx,sy,sz,stheta,x_ref,y_ref,z_ref,theta_ref,vx,vy,vz,wz,mpc_status,mhe_held
void write_mrs_csv(std::ostream& out, const MrsResult& result);
Json mrs_report_json(const MrsReport& r);

// step,t,mhe_position,ekf_position,mhe_orientation,ekf_orientation
void write_rmse_csv(std::ostream& out, const RmseTable& table, double delta);
Json rmse_summary_json(const RmseTable& table, int noise_case, int full_window_step);

}  // namespace nhmpc
