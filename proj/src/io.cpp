#include "nhmpc/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace nhmpc {

namespace {

constexpr double pi = std::numbers::pi;

[[noreturn]] void fail(std::string_view where, std::string_view what) {
  throw std::invalid_argument(std::string(where) + ": " + std::string(what));
}

void require_object(const Json& j, std::string_view where) {
  if (!j.is_object()) fail(where, "expected an object");
}

void allow_keys(const Json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  require_object(j, where);
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) fail(where, "unknown key '" + key + "'");
  }
}

void expect_kind(const Json& doc, std::string_view kind) {
  require_object(doc, "scenario");
  const auto it = doc.find("kind");
  if (it == doc.end() || !it->is_string()) fail("scenario", "missing \"kind\"");
  if (it->get<std::string>() != kind) fail("scenario", "expected kind '" + std::string(kind) + "', got '" +
                                                           it->get<std::string>() + "'");
}

double as_number(const Json& j, std::string_view where) {
  if (!j.is_number()) fail(where, "expected a number");
  return j.get<double>();
}

int as_int(const Json& j, std::string_view where) {
  if (!j.is_number_integer()) fail(where, "expected an integer");
  return j.get<int>();
}

template <class T>
void read(const Json& obj, const char* key, T& target) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  if constexpr (std::is_same_v<T, bool>) {
    if (!it->is_boolean()) fail(key, "expected a boolean");
    target = it->template get<bool>();
  } else if constexpr (std::is_same_v<T, std::uint64_t>) {
    if (!it->is_number_unsigned()) fail(key, "expected a nonnegative integer");
    target = it->template get<std::uint64_t>();
  } else if constexpr (std::is_integral_v<T>) {
    target = as_int(*it, key);
  } else {
    target = as_number(*it, key);
  }
}

// A scalar counts as a one-element list.
std::vector<double> number_list(const Json& j, std::string_view where) {
  std::vector<double> out;
  if (j.is_array()) {
    for (const auto& v : j) out.push_back(as_number(v, where));
  } else {
    out.push_back(as_number(j, where));
  }
  return out;
}

std::vector<int> int_list(const Json& j, std::string_view where) {
  std::vector<int> out;
  if (j.is_array()) {
    for (const auto& v : j) out.push_back(as_int(v, where));
  } else {
    out.push_back(as_int(j, where));
  }
  return out;
}

template <int N>
Eigen::Matrix<double, N, 1> fixed_vector(const Json& j, std::string_view where) {
  if (!j.is_array() || static_cast<int>(j.size()) != N) fail(where, "expected " + std::to_string(N) + " numbers");
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) v[i] = as_number(j[static_cast<std::size_t>(i)], where);
  return v;
}

RobotState robot_state(const Json& j, std::string_view where) {
  const auto v = fixed_vector<3>(j, where);
  return {v[0], v[1], v[2]};
}

RunningCost running_cost(const Json& j) {
  if (!j.is_string()) fail("cost", "expected \"proposed\" or \"quadratic\"");
  const auto s = j.get<std::string>();
  if (s == "proposed") return RunningCost::Proposed;
  if (s == "quadratic") return RunningCost::Quadratic;
  fail("cost", "expected \"proposed\" or \"quadratic\"");
}

CertificateParams certificate_params(const Json& j) {
  allow_keys(j, {"delta", "q2", "q1", "q3", "r1", "r2", "x_bar", "y_bar", "v_bar", "omega_bar"}, "params");
  double delta = 0.25;
  double q2 = 5.0;
  read(j, "delta", delta);
  read(j, "q2", q2);
  auto p = CertificateParams::table_cell(delta, q2);
  read(j, "q1", p.q1);
  read(j, "q3", p.q3);
  read(j, "r1", p.r1);
  read(j, "r2", p.r2);
  read(j, "x_bar", p.x_bar);
  read(j, "y_bar", p.y_bar);
  read(j, "v_bar", p.v_bar);
  read(j, "omega_bar", p.omega_bar);
  return p;
}

PathWeights path_weights(const Json& j, PathWeights w) {
  allow_keys(j, {"q1", "q2", "q3", "q_hat", "r1", "r2", "r_hat"}, "weights");
  read(j, "q1", w.q1);
  read(j, "q2", w.q2);
  read(j, "q3", w.q3);
  read(j, "q_hat", w.q_hat);
  read(j, "r1", w.r1);
  read(j, "r2", w.r2);
  read(j, "r_hat", w.r_hat);
  return w;
}

PathSpec sine_path(const Json& doc, double& amplitude, double& frequency) {
  if (const auto it = doc.find("path"); it != doc.end()) {
    allow_keys(*it, {"amplitude", "frequency"}, "path");
    read(*it, "amplitude", amplitude);
    read(*it, "frequency", frequency);
  }
  return PathSpec::sine(amplitude, frequency);
}

HorizonSearchOptions search_options(const Json& j) {
  allow_keys(j, {"grid", "linear_step", "geometric_points", "geometric_min", "n_cap"}, "search");
  HorizonSearchOptions o;
  if (const auto it = j.find("grid"); it != j.end()) {
    const auto s = it->is_string() ? it->get<std::string>() : std::string();
    if (s == "linear") {
      o.grid = SGrid::Linear;
    } else if (s == "geometric") {
      o.grid = SGrid::Geometric;
    } else {
      fail("search.grid", "expected \"linear\" or \"geometric\"");
    }
  }
  read(j, "linear_step", o.linear_step);
  read(j, "geometric_points", o.geometric_points);
  read(j, "geometric_min", o.geometric_min);
  read(j, "n_cap", o.n_cap);
  return o;
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

}  // namespace

std::filesystem::path data_dir() {
  if (const char* env = std::getenv("NHMPC_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return NHMPC_DATA_DIR;
}

Json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return Json::parse(in, nullptr, true, true);
  } catch (const Json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void apply_override(Json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw std::invalid_argument("override '" + std::string(assignment) + "' is not key=value");
  }
  const std::string_view path = assignment.substr(0, eq);
  const std::string text(assignment.substr(eq + 1));

  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::parse_error&) {
    value = text;
  }

  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key(path.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
    if (key.empty()) throw std::invalid_argument("override '" + std::string(assignment) + "' has an empty key");
    if (node->is_null()) *node = Json::object();
    if (node->is_array()) {
      std::size_t idx = 0;
      const auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), idx);
      if (ec != std::errc() || ptr != key.data() + key.size() || idx >= node->size()) {
        throw std::invalid_argument("override '" + std::string(assignment) + "': bad array index '" + key + "'");
      }
      node = &(*node)[idx];
    } else if (node->is_object()) {
      node = &(*node)[key];
    } else {
      throw std::invalid_argument("override '" + std::string(assignment) + "' descends into a scalar");
    }
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw std::runtime_error("format_number: conversion failed");
  return std::string(buf, ptr);
}

// ---- scenarios ----

RegulationBatch regulation_batch_from(const Json& doc) {
  expect_kind(doc, "regulation");
  allow_keys(doc, {"kind", "params", "cost", "max_steps", "random_starts", "seed", "runs", "circles", "assert"},
             "regulation");
  RegulationScenario base;
  base.params = certificate_params(doc.value("params", Json::object()));
  if (const auto it = doc.find("cost"); it != doc.end()) base.cost = running_cost(*it);
  read(doc, "max_steps", base.max_steps);
  read(doc, "random_starts", base.solver.random_starts);
  read(doc, "seed", base.solver.seed);

  RegulationBatch batch;
  for (const auto& run : doc.value("runs", Json::array())) {
    allow_keys(run, {"initial", "reference", "horizon", "threshold"}, "regulation.runs");
    RegulationScenario sc = base;
    if (!run.contains("initial")) fail("regulation.runs", "missing \"initial\"");
    sc.initial = robot_state(run["initial"], "initial");
    if (run.contains("reference")) sc.reference = robot_state(run["reference"], "reference");
    read(run, "horizon", sc.horizon);
    read(run, "threshold", sc.threshold);
    sc.validate();
    batch.runs.push_back(sc);
  }
  for (const auto& circle : doc.value("circles", Json::array())) {
    allow_keys(circle, {"radius", "points", "horizon", "threshold"}, "regulation.circles");
    double radius = 1.0;
    int points = 8;
    RegulationScenario sc = base;
    read(circle, "radius", radius);
    read(circle, "points", points);
    read(circle, "horizon", sc.horizon);
    read(circle, "threshold", sc.threshold);
    if (points < 1) fail("regulation.circles", "points must be positive");
    for (int i = 0; i < points; ++i) {
      const double angle = 2.0 * pi * i / points;
      sc.initial = {radius * std::cos(angle), radius * std::sin(angle), ((3 * i) % 8) * pi / 4.0};
      sc.validate();
      batch.runs.push_back(sc);
    }
  }
  return batch;
}

MpfcBatch mpfc_batch_from(const Json& doc) {
  expect_kind(doc, "mpfc");
  allow_keys(doc,
             {"kind", "path", "weights", "q_hat", "epsilon", "delta", "horizon_time", "max_steps", "threshold", "runs",
              "assert"},
             "mpfc");
  MpfcScenario base;
  double amplitude = 0.6;
  double frequency = 0.25;
  base.path = sine_path(doc, amplitude, frequency);
  if (doc.contains("weights")) base.weights = path_weights(doc["weights"], base.weights);
  read(doc, "q_hat", base.weights.q_hat);
  read(doc, "epsilon", base.epsilon);
  read(doc, "delta", base.delta);
  read(doc, "horizon_time", base.horizon_time);
  read(doc, "max_steps", base.max_steps);
  read(doc, "threshold", base.threshold);

  MpfcBatch batch;
  for (const auto& run : doc.value("runs", Json::array())) {
    allow_keys(run, {"initial", "lambda"}, "mpfc.runs");
    MpfcScenario sc = base;
    if (!run.contains("initial")) fail("mpfc.runs", "missing \"initial\"");
    sc.initial = robot_state(run["initial"], "initial");
    if (run.contains("lambda")) sc.initial_lambda = as_number(run["lambda"], "lambda");
    sc.validate();
    batch.runs.push_back(std::move(sc));
  }
  return batch;
}

DmpcBatch dmpc_batch_from(const Json& doc) {
  expect_kind(doc, "dmpc");
  allow_keys(doc, {"kind", "cells", "horizon", "seed", "random_starts", "max_steps", "threshold", "assert"}, "dmpc");
  int horizon = 9;
  read(doc, "horizon", horizon);
  std::vector<double> cells{0.5, 1.0, 1.5, 2.0};
  if (doc.contains("cells")) cells = number_list(doc["cells"], "cells");

  DmpcBatch batch;
  for (double c : cells) {
    auto sc = DmpcScenario::four_corners(c, horizon);
    read(doc, "seed", sc.seed);
    read(doc, "random_starts", sc.random_starts);
    read(doc, "max_steps", sc.max_steps);
    read(doc, "threshold", sc.threshold);
    sc.validate();
    batch.runs.push_back(std::move(sc));
  }
  return batch;
}

MrsScenario mrs_scenario_from(const Json& doc) {
  expect_kind(doc, "mrs");
  allow_keys(doc,
             {"kind", "case", "noise_case", "duration", "seed", "delta", "estimation_horizon", "control_horizon",
              "collision_margin", "report", "assert"},
             "mrs");
  int which = 1;
  int noise_case = 2;
  read(doc, "case", which);
  read(doc, "noise_case", noise_case);
  auto sc = MrsScenario::table_case(which);
  sc.noise = NoiseConfig::table_case(noise_case);
  read(doc, "duration", sc.duration);
  read(doc, "seed", sc.seed);
  read(doc, "delta", sc.delta);
  read(doc, "estimation_horizon", sc.estimation_horizon);
  read(doc, "control_horizon", sc.control_horizon);
  read(doc, "collision_margin", sc.collision_margin);
  sc.validate();
  return sc;
}

MrsReportOptions mrs_report_options_from(const Json& doc) {
  MrsReportOptions o;
  if (const auto it = doc.find("report"); it != doc.end()) {
    allow_keys(*it, {"settle_time", "window_factor", "window_release"}, "mrs.report");
    read(*it, "settle_time", o.settle_time);
    read(*it, "window_factor", o.window_factor);
    read(*it, "window_release", o.window_release);
  }
  return o;
}

RmseBatch rmse_batch_from(const Json& doc) {
  expect_kind(doc, "rmse");
  allow_keys(doc, {"kind", "noise_cases", "trials", "steps", "horizon", "seed", "assert"}, "rmse");
  RmseBatch batch;
  batch.noise_cases = {1, 2, 3};
  if (doc.contains("noise_cases")) batch.noise_cases = int_list(doc["noise_cases"], "noise_cases");
  for (int c : batch.noise_cases) {
    auto sc = RmseScenario::comparison(c);
    read(doc, "trials", sc.trials);
    read(doc, "steps", sc.steps);
    read(doc, "horizon", sc.horizon);
    read(doc, "seed", sc.seed);
    sc.validate();
    batch.runs.push_back(std::move(sc));
  }
  return batch;
}

CertifyGrid certify_grid_from(const Json& doc) {
  expect_kind(doc, "certify");
  allow_keys(doc, {"kind", "deltas", "q2s", "delta", "q2", "search", "seed", "assert"}, "certify");
  CertifyGrid g;
  g.deltas = {1.0, 0.5, 0.25, 0.1};
  g.q2s = {2.0, 5.0, 10.0, 100.0};
  if (doc.contains("deltas")) g.deltas = number_list(doc["deltas"], "deltas");
  if (doc.contains("q2s")) g.q2s = number_list(doc["q2s"], "q2s");
  // Scalar keys take precedence so that --set delta=1 selects a single row.
  if (doc.contains("delta")) g.deltas = number_list(doc["delta"], "delta");
  if (doc.contains("q2")) g.q2s = number_list(doc["q2"], "q2");
  if (doc.contains("search")) g.search = search_options(doc["search"]);
  return g;
}

CertifyPathPlan certify_path_plan_from(const Json& doc) {
  expect_kind(doc, "certify_path");
  allow_keys(doc, {"kind", "delta", "t_max", "path", "weights", "sweeps", "seed", "assert"}, "certify_path");
  CertifyPathPlan plan;
  read(doc, "delta", plan.delta);
  read(doc, "t_max", plan.t_max);
  sine_path(doc, plan.amplitude, plan.frequency);
  if (doc.contains("weights")) plan.weights = path_weights(doc["weights"], plan.weights);

  Json sweeps = doc.value("sweeps", Json::parse(R"([{"q_hat": [0.1, 0.2, 20], "epsilon": [2]},
                                                    {"q_hat": [20], "epsilon": [0.5, 1, 2, 4]}])"));
  if (!sweeps.is_array()) fail("certify_path.sweeps", "expected an array");
  for (const auto& s : sweeps) {
    allow_keys(s, {"q_hat", "epsilon"}, "certify_path.sweeps");
    const auto q_hats = s.contains("q_hat") ? number_list(s["q_hat"], "q_hat") : std::vector<double>{plan.weights.q_hat};
    const auto eps = s.contains("epsilon") ? number_list(s["epsilon"], "epsilon") : std::vector<double>{2.0};
    for (double q : q_hats) {
      for (double e : eps) plan.sweeps.push_back({q, e});
    }
  }
  return plan;
}

// ---- reference tables ----

std::optional<int> ReferenceTables::n_hat_at(double delta, double q2) const {
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    for (std::size_t j = 0; j < q2s.size(); ++j) {
      if (std::abs(deltas[i] - delta) <= 1e-12 && std::abs(q2s[j] - q2) <= 1e-12) return n_hat[i][j];
    }
  }
  return std::nullopt;
}

ReferenceTables load_reference_tables(const std::filesystem::path& path) {
  const Json doc = load_json_file(path);
  ReferenceTables t;
  const auto& h = doc.at("horizon_table");
  t.deltas = number_list(h.at("deltas"), "deltas");
  t.q2s = number_list(h.at("q2"), "q2");
  for (const auto& row : h.at("n_hat")) {
    t.n_hat.push_back(int_list(row, "n_hat"));
    if (t.n_hat.back().size() != t.q2s.size()) fail("horizon_table", "row length differs from q2 list");
  }
  if (t.n_hat.size() != t.deltas.size()) fail("horizon_table", "row count differs from delta list");
  t.n_hat_tolerance = h.at("tolerance").get<int>();

  const auto& ex = doc.at("example_alpha");
  t.example_alpha = ex.at("value").get<double>();
  t.example_alpha_horizon = ex.at("horizon").get<int>();
  t.example_alpha_tolerance = ex.at("tolerance").get<double>();

  const auto& d = doc.at("dmpc");
  t.dmpc_cells = number_list(d.at("cells"), "cells");
  t.dmpc_iterations = int_list(d.at("iterations"), "iterations");
  t.dmpc_reduction_pct = number_list(d.at("reduction_pct"), "reduction_pct");
  t.dmpc_min_horizon = int_list(d.at("min_horizon"), "min_horizon");
  t.dmpc_n_sharp = int_list(d.at("n_sharp"), "n_sharp");
  t.dmpc_reduction_min_pct = d.at("bands").at("reduction_min_pct").get<double>();
  t.dmpc_step_slack = d.at("bands").at("step_slack").get<int>();
  return t;
}

// ---- outputs ----

void write_trace_csv(std::ostream& out, const ClosedLoopTrace& trace) {
  const bool path = trace.path_following;
  out << "step,x,y,theta" << (path ? ",lambda" : "") << ",v,omega" << (path ? ",g" : "") << ",V,ell,status\n";
  for (const auto& s : trace.steps) {
    out << s.step << ',' << format_number(s.state.x) << ',' << format_number(s.state.y) << ','
        << format_number(s.state.theta);
    if (path) out << ',' << format_number(s.lambda.value_or(std::nan("")));
    out << ',' << format_number(s.control.v) << ',' << format_number(s.control.omega);
    if (path) out << ',' << format_number(s.g.value_or(std::nan("")));
    out << ',' << format_number(s.value) << ',' << format_number(s.stage_cost) << ',' << to_string(s.solver_status)
        << '\n';
  }
}

void write_certify_csv(std::ostream& out, std::span<const CertifyRow> rows) {
  out << "delta,q2,N_hat,alpha,s_opt,reference,diff,error\n";
  for (const auto& r : rows) {
    out << format_number(r.delta) << ',' << format_number(r.q2) << ',';
    if (r.error.empty()) {
      out << r.n_hat << ',' << format_number(r.alpha) << ',' << format_number(r.s_opt) << ',';
    } else {
      out << ",,,";
    }
    if (r.reference) {
      out << *r.reference << ',';
      if (r.error.empty()) out << r.n_hat - *r.reference;
    } else {
      out << ',';
    }
    out << ',' << csv_field(r.error) << '\n';
  }
}

Json certify_summary(std::span<const CertifyRow> rows) {
  Json list = Json::array();
  int failed = 0;
  int compared = 0;
  int exact = 0;
  int max_abs_diff = 0;
  for (const auto& r : rows) {
    Json row{{"delta", r.delta}, {"q2", r.q2}};
    if (r.error.empty()) {
      row["N_hat"] = r.n_hat;
      row["alpha"] = number_or_null(r.alpha);
      row["s_opt"] = number_or_null(r.s_opt);
    } else {
      row["N_hat"] = nullptr;
      row["error"] = r.error;
      ++failed;
    }
    if (r.reference) {
      row["reference"] = *r.reference;
      if (r.error.empty()) {
        const int diff = r.n_hat - *r.reference;
        row["diff"] = diff;
        ++compared;
        exact += diff == 0 ? 1 : 0;
        max_abs_diff = std::max(max_abs_diff, std::abs(diff));
      }
    }
    list.push_back(std::move(row));
  }
  return Json{{"cells", rows.size()},       {"failed", failed},          {"compared", compared},
              {"exact_matches", exact},     {"max_abs_diff", max_abs_diff}, {"rows", std::move(list)}};
}

void write_path_sweep_csv(std::ostream& out, std::span<const PathSweepRow> rows) {
  out << "q_hat,epsilon,T,alpha,error\n";
  for (const auto& r : rows) {
    out << format_number(r.q_hat) << ',' << format_number(r.epsilon) << ',';
    if (r.error.empty()) {
      out << format_number(r.horizon) << ',' << format_number(r.alpha) << ",\n";
    } else {
      out << ",," << csv_field(r.error) << '\n';
    }
  }
}

void write_dmpc_trace_csv(std::ostream& out, const DmpcResult& result) {
  out << "step,robot,x,y,theta,v,omega,ell,sent,status\n";
  for (const auto& s : result.steps) {
    for (std::size_t i = 0; i < s.states.size(); ++i) {
      out << s.step << ',' << i << ',' << format_number(s.states[i].x) << ',' << format_number(s.states[i].y) << ','
          << format_number(s.states[i].theta) << ',' << format_number(s.controls[i].v) << ','
          << format_number(s.controls[i].omega) << ',' << format_number(s.stage_costs[i]) << ',' << s.broadcast[i]
          << ',' << to_string(s.statuses[i]) << '\n';
    }
  }
}

Json dmpc_metrics_json(const DmpcMetrics& m) {
  return Json{{"c", m.cell},
              {"N", m.horizon},
              {"n_sharp", m.n_sharp},
              {"K_diff", m.k_diff},
              {"K_full", m.k_full},
              {"reduction_pct", number_or_null(m.reduction_pct)},
              {"M", number_or_null(m.m_total)},
              {"converged", m.converged}};
}

void write_mrs_csv(std::ostream& out, const MrsResult& result) {
  out << "t,robot,x,y,z,theta,x_hat,y_hat,z_hat,theta_hat,sx,sy,sz,stheta,x_ref,y_ref,z_ref,theta_ref,vx,vy,vz,wz,"
         "mpc_status,mhe_held\n";
  const auto state = [&](const RelState& s) {
    out << ',' << format_number(s.x) << ',' << format_number(s.y) << ',' << format_number(s.z) << ','
        << format_number(s.theta);
  };
  for (const auto& s : result.steps) {
    for (std::size_t i = 0; i < s.truth.size(); ++i) {
      out << format_number(s.t) << ',' << i;
      state(s.truth[i]);
      state(s.estimate[i]);
      for (int c = 0; c < 4; ++c) out << ',' << format_number(s.estimate_sigma[i][c]);
      state(s.reference[i]);
      const auto& u = s.controls[i];
      out << ',' << format_number(u.vx) << ',' << format_number(u.vy) << ',' << format_number(u.vz) << ','
          << format_number(u.wz) << ',' << to_string(s.mpc_status) << ',' << (s.mhe_held ? 1 : 0) << '\n';
    }
  }
}

Json mrs_report_json(const MrsReport& r) {
  return Json{{"steady_tracking_error", number_or_null(r.steady_tracking_error)},
              {"steady_orientation_error", number_or_null(r.steady_orientation_error)},
              {"estimation_position_rmse", number_or_null(r.estimation_position_rmse)},
              {"three_sigma_coverage", number_or_null(r.three_sigma_coverage)},
              {"max_constraint", number_or_null(r.max_constraint)},
              {"controls_in_bounds", r.controls_in_bounds},
              {"collision_window_steps", r.collision_window_steps},
              {"steady_steps", r.steady_steps}};
}

void write_rmse_csv(std::ostream& out, const RmseTable& table, double delta) {
  out << "step,t,mhe_position,ekf_position,mhe_orientation,ekf_orientation\n";
  for (std::size_t n = 0; n < table.mhe_position.size(); ++n) {
    out << n << ',' << format_number(static_cast<double>(n) * delta) << ',' << format_number(table.mhe_position[n])
        << ',' << format_number(table.ekf_position[n]) << ',' << format_number(table.mhe_orientation[n]) << ','
        << format_number(table.ekf_orientation[n]) << '\n';
  }
}

Json rmse_summary_json(const RmseTable& table, int noise_case, int full_window_step) {
  Json j{{"noise_case", noise_case},
         {"mhe_position_mean", number_or_null(table.mhe_position_mean)},
         {"ekf_position_mean", number_or_null(table.ekf_position_mean)},
         {"mhe_orientation_mean", number_or_null(table.mhe_orientation_mean)},
         {"ekf_orientation_mean", number_or_null(table.ekf_orientation_mean)},
         {"mhe_held", table.mhe_held},
         {"full_window_step", full_window_step}};
  const auto n = static_cast<std::size_t>(full_window_step);
  if (full_window_step >= 0 && n < table.mhe_position.size()) {
    const double level = table.mhe_position[n];
    j["mhe_full_window_position"] = number_or_null(level);
    j["ekf_steps_to_reach"] = first_step_below(table.ekf_position, level);
  } else {
    j["mhe_full_window_position"] = nullptr;
    j["ekf_steps_to_reach"] = nullptr;
  }
  return j;
}

}  // namespace nhmpc
