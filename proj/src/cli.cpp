#include "nhmpc/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace nhmpc {

namespace {

template <class F>
void parallel_for(std::size_t n, int jobs, F&& fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

class Failures {
 public:
  void add(std::string run, std::string check, double value, double limit) {
    list_.push_back(Json{{"run", std::move(run)}, {"check", std::move(check)}, {"value", finite(value)},
                         {"limit", finite(limit)}});
  }
  void add(std::string run, std::string check, std::string message) {
    list_.push_back(Json{{"run", std::move(run)}, {"check", std::move(check)}, {"message", std::move(message)}});
  }
  [[nodiscard]] bool empty() const { return list_.empty(); }
  [[nodiscard]] const Json& json() const { return list_; }

 private:
  static Json finite(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }
  Json list_ = Json::array();
};

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const std::filesystem::path& path, const Json& j) { write_file(path, j.dump(2) + "\n"); }

template <class Writer>
void write_csv(const std::filesystem::path& path, Writer&& writer) {
  std::ostringstream s;
  writer(s);
  write_file(path, s.str());
}

int finish(const RunConfig& cfg, const Failures& failures, std::ostream& log) {
  write_json(cfg.out_dir / "failures.json", Json{{"failures", failures.json()}});
  for (const auto& f : failures.json()) log << "FAILED " << f.dump() << '\n';
  return failures.empty() ? 0 : 1;
}

const Json& assertions(const Json& doc) {
  static const Json none = Json::object();
  const auto it = doc.find("assert");
  return it == doc.end() ? none : *it;
}

bool flag(const Json& a, const char* key) { return a.contains(key) && a[key].is_boolean() && a[key].get<bool>(); }

std::optional<double> limit(const Json& a, const char* key) {
  if (!a.contains(key)) return std::nullopt;
  if (!a[key].is_number()) throw std::invalid_argument(std::string("assert.") + key + ": expected a number");
  return a[key].get<double>();
}

std::string run_label(std::string_view kind, std::size_t i) { return std::string(kind) + "_" + std::to_string(i); }

Json state_json(const RobotState& s) { return Json::array({s.x, s.y, s.theta}); }

// ---- simulate: one function per loop ----

int simulate_regulation(const RunConfig& cfg, const Json& doc, std::ostream& log) {
  const auto batch = regulation_batch_from(doc);
  const Json& a = assertions(doc);
  std::vector<ClosedLoopTrace> traces(batch.runs.size());
  std::vector<std::string> errors(batch.runs.size());
  parallel_for(batch.runs.size(), cfg.jobs, [&](std::size_t i) {
    try {
      traces[i] = run_regulation(batch.runs[i]);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  Failures failures;
  Json runs = Json::array();
  for (std::size_t i = 0; i < batch.runs.size(); ++i) {
    const auto& sc = batch.runs[i];
    const auto label = run_label("regulation", i);
    Json r{{"run", label}, {"initial", state_json(sc.initial)}, {"horizon", sc.horizon}, {"threshold", sc.threshold}};
    if (!errors[i].empty()) {
      r["error"] = errors[i];
      failures.add(label, "error", errors[i]);
      runs.push_back(std::move(r));
      continue;
    }
    const auto& tr = traces[i];
    write_csv(cfg.out_dir / (label + ".csv"), [&](std::ostream& o) { write_trace_csv(o, tr); });
    r["status"] = to_string(tr.status);
    r["steps"] = tr.steps.size();
    r["final_value"] = tr.steps.empty() ? 0.0 : tr.steps.back().value;
    if (flag(a, "converged") && tr.status != LoopStatus::Converged) {
      failures.add(label, "converged", r["final_value"].get<double>(), sc.threshold);
    }
    log << label << ": " << to_string(tr.status) << " after " << tr.steps.size() << " steps\n";
    runs.push_back(std::move(r));
  }
  write_json(cfg.out_dir / "regulation_summary.json", Json{{"kind", "regulation"}, {"runs", std::move(runs)}});
  return finish(cfg, failures, log);
}

int simulate_mpfc(const RunConfig& cfg, const Json& doc, std::ostream& log) {
  const auto batch = mpfc_batch_from(doc);
  const Json& a = assertions(doc);
  std::vector<ClosedLoopTrace> traces(batch.runs.size());
  std::vector<std::string> errors(batch.runs.size());
  parallel_for(batch.runs.size(), cfg.jobs, [&](std::size_t i) {
    try {
      traces[i] = run_mpfc(batch.runs[i]);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  const double slack = limit(a, "value_slack").value_or(1e-8);
  Failures failures;
  Json runs = Json::array();
  for (std::size_t i = 0; i < batch.runs.size(); ++i) {
    const auto& sc = batch.runs[i];
    const auto label = run_label("mpfc", i);
    Json r{{"run", label}, {"initial", state_json(sc.initial)}, {"horizon_steps", sc.horizon_steps()}};
    if (!errors[i].empty()) {
      r["error"] = errors[i];
      failures.add(label, "error", errors[i]);
      runs.push_back(std::move(r));
      continue;
    }
    const auto& tr = traces[i];
    write_csv(cfg.out_dir / (label + ".csv"), [&](std::ostream& o) { write_trace_csv(o, tr); });
    double worst_increase = 0.0;
    double worst_lambda_drop = 0.0;
    for (std::size_t n = 1; n < tr.steps.size(); ++n) {
      worst_increase = std::max(worst_increase, tr.steps[n].value - tr.steps[n - 1].value);
      worst_lambda_drop = std::max(worst_lambda_drop, tr.steps[n - 1].lambda.value_or(0.0) - tr.steps[n].lambda.value_or(0.0));
    }
    r["status"] = to_string(tr.status);
    r["steps"] = tr.steps.size();
    r["final_value"] = tr.steps.empty() ? 0.0 : tr.steps.back().value;
    r["final_lambda"] = tr.steps.empty() ? 0.0 : tr.steps.back().lambda.value_or(0.0);
    r["max_value_increase"] = worst_increase;
    r["max_lambda_decrease"] = worst_lambda_drop;
    if (flag(a, "converged") && tr.status != LoopStatus::Converged) {
      failures.add(label, "converged", r["final_value"].get<double>(), sc.threshold);
    }
    if (flag(a, "value_decreasing") && worst_increase > slack) failures.add(label, "value_decreasing", worst_increase, slack);
    if (flag(a, "lambda_nondecreasing") && worst_lambda_drop > 0.0) {
      failures.add(label, "lambda_nondecreasing", worst_lambda_drop, 0.0);
    }
    log << label << ": " << to_string(tr.status) << " after " << tr.steps.size() << " steps\n";
    runs.push_back(std::move(r));
  }
  write_json(cfg.out_dir / "mpfc_summary.json", Json{{"kind", "mpfc"}, {"runs", std::move(runs)}});
  return finish(cfg, failures, log);
}

int simulate_dmpc(const RunConfig& cfg, const Json& doc, std::ostream& log) {
  const auto batch = dmpc_batch_from(doc);
  const Json& a = assertions(doc);
  std::vector<DmpcResult> results(batch.runs.size());
  std::vector<std::string> errors(batch.runs.size());
  parallel_for(batch.runs.size(), cfg.jobs, [&](std::size_t i) {
    try {
      results[i] = run_dmpc(batch.runs[i]);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  const double distance_slack = limit(a, "distance_slack").value_or(1e-3);
  const auto reduction_min = limit(a, "reduction_min_pct");
  Failures failures;
  Json metrics = Json::array();
  std::ostringstream table;
  table << "c,N,n_sharp,K_diff,K_full,reduction_pct,M,converged,min_distance\n";
  for (std::size_t i = 0; i < batch.runs.size(); ++i) {
    const auto& sc = batch.runs[i];
    const auto label = "dmpc_c" + format_number(sc.grid.cell);
    if (!errors[i].empty()) {
      failures.add(label, "error", errors[i]);
      metrics.push_back(Json{{"c", sc.grid.cell}, {"error", errors[i]}});
      continue;
    }
    const auto& res = results[i];
    write_csv(cfg.out_dir / (label + ".csv"), [&](std::ostream& o) { write_dmpc_trace_csv(o, res); });
    double min_distance = std::numeric_limits<double>::infinity();
    for (const auto& s : res.steps) min_distance = std::min(min_distance, min_pairwise_distance(s.states));
    if (!res.final_states.empty()) min_distance = std::min(min_distance, min_pairwise_distance(res.final_states));
    Json m = dmpc_metrics_json(res.metrics);
    m["min_distance"] = std::isfinite(min_distance) ? Json(min_distance) : Json(nullptr);
    if (res.failure) m["failure"] = *res.failure;
    const auto& mt = res.metrics;
    table << format_number(mt.cell) << ',' << mt.horizon << ',' << mt.n_sharp << ',' << mt.k_diff << ',' << mt.k_full
          << ',' << format_number(mt.reduction_pct) << ',' << format_number(mt.m_total) << ','
          << (mt.converged ? 1 : 0) << ',' << format_number(min_distance) << '\n';

    if (res.failure) failures.add(label, "error", *res.failure);
    if (flag(a, "converged") && !mt.converged) failures.add(label, "converged", mt.n_sharp, sc.max_steps);
    if (flag(a, "min_distance") && min_distance < sc.d_min - distance_slack) {
      failures.add(label, "min_distance", min_distance, sc.d_min - distance_slack);
    }
    if (reduction_min && mt.reduction_pct < *reduction_min) {
      failures.add(label, "reduction_pct", mt.reduction_pct, *reduction_min);
    }
    log << label << ": n# = " << mt.n_sharp << ", reduction " << format_number(mt.reduction_pct) << " %\n";
    metrics.push_back(std::move(m));
  }
  write_file(cfg.out_dir / "dmpc_metrics.csv", table.str());
  write_json(cfg.out_dir / "dmpc_metrics.json", Json{{"kind", "dmpc"}, {"metrics", std::move(metrics)}});
  return finish(cfg, failures, log);
}

int simulate_mrs(const RunConfig& cfg, const Json& doc, std::ostream& log) {
  const auto sc = mrs_scenario_from(doc);
  const auto opts = mrs_report_options_from(doc);
  const Json& a = assertions(doc);
  const auto result = run_mrs(sc, opts);
  write_csv(cfg.out_dir / "mrs_steps.csv", [&](std::ostream& o) { write_mrs_csv(o, result); });
  write_json(cfg.out_dir / "mrs_report.json", Json{{"kind", "mrs"}, {"report", mrs_report_json(result.report)}});

  const auto& r = result.report;
  Failures failures;
  if (const auto v = limit(a, "steady_error_max"); v && r.steady_tracking_error > *v) {
    failures.add("mrs", "steady_error_max", r.steady_tracking_error, *v);
  }
  if (const auto v = limit(a, "coverage_min"); v && r.three_sigma_coverage < *v) {
    failures.add("mrs", "coverage_min", r.three_sigma_coverage, *v);
  }
  if (const auto v = limit(a, "constraint_max"); v && r.max_constraint > *v) {
    failures.add("mrs", "constraint_max", r.max_constraint, *v);
  }
  if (flag(a, "controls_in_bounds") && !r.controls_in_bounds) failures.add("mrs", "controls_in_bounds", 0.0, 1.0);
  log << "mrs: steady error " << format_number(r.steady_tracking_error) << ", 3-sigma coverage "
      << format_number(r.three_sigma_coverage) << '\n';
  return finish(cfg, failures, log);
}

int simulate_rmse(const RunConfig& cfg, const Json& doc, std::ostream& log) {
  const auto batch = rmse_batch_from(doc);
  const Json& a = assertions(doc);
  std::vector<RmseTable> tables(batch.runs.size());
  parallel_for(batch.runs.size(), cfg.jobs, [&](std::size_t i) { tables[i] = rmse_harness(batch.runs[i]); });

  Failures failures;
  Json cases = Json::array();
  for (std::size_t i = 0; i < batch.runs.size(); ++i) {
    const auto& sc = batch.runs[i];
    const int which = batch.noise_cases[i];
    const auto label = "rmse_case" + std::to_string(which);
    write_csv(cfg.out_dir / (label + ".csv"), [&](std::ostream& o) { write_rmse_csv(o, tables[i], sc.delta); });
    cases.push_back(rmse_summary_json(tables[i], which, sc.horizon));
    if (flag(a, "mhe_not_worse") && tables[i].mhe_position_mean > tables[i].ekf_position_mean) {
      failures.add(label, "mhe_not_worse", tables[i].mhe_position_mean, tables[i].ekf_position_mean);
    }
    log << label << ": MHE " << format_number(tables[i].mhe_position_mean) << ", EKF "
        << format_number(tables[i].ekf_position_mean) << '\n';
  }
  write_json(cfg.out_dir / "rmse_summary.json", Json{{"kind", "rmse"}, {"cases", std::move(cases)}});
  return finish(cfg, failures, log);
}

std::string kind_of_loop(std::string_view loop) {
  for (std::string_view k : {"regulation", "mpfc", "dmpc", "mrs", "rmse"}) {
    if (loop == k) return std::string(k);
  }
  throw std::invalid_argument("unknown simulation loop '" + std::string(loop) + "'");
}

}  // namespace

Json default_scenario(std::string_view kind) {
  if (kind == "regulation") {
    return Json::parse(R"({
      "kind": "regulation",
      "params": {"delta": 0.25, "q2": 5},
      "cost": "proposed",
      "max_steps": 400,
      "random_starts": 3,
      "seed": 1,
      "circles": [
        {"radius": 1.9, "points": 8, "horizon": 7, "threshold": 1e-9},
        {"radius": 0.1, "points": 5, "horizon": 15, "threshold": 1e-11}
      ],
      "assert": {"converged": true}
    })");
  }
  if (kind == "mpfc") {
    return Json::parse(R"({
      "kind": "mpfc",
      "path": {"amplitude": 0.6, "frequency": 0.25},
      "q_hat": 20,
      "epsilon": 2,
      "delta": 0.1,
      "horizon_time": 7.5,
      "max_steps": 400,
      "threshold": 1e-6,
      "runs": [{"initial": [-20, 0, 0]}, {"initial": [-4, -0.7, 0]}],
      "assert": {"converged": true, "value_decreasing": true, "value_slack": 1e-8, "lambda_nondecreasing": true}
    })");
  }
  if (kind == "dmpc") {
    return Json::parse(R"({
      "kind": "dmpc",
      "cells": [0.5, 1, 1.5, 2],
      "horizon": 9,
      "seed": 1,
      "random_starts": 2,
      "max_steps": 200,
      "threshold": 0.01,
      "assert": {"converged": true, "min_distance": true, "distance_slack": 1e-3, "reduction_min_pct": 60}
    })");
  }
  if (kind == "mrs") {
    return Json::parse(R"({
      "kind": "mrs",
      "case": 1,
      "noise_case": 2,
      "duration": 75,
      "seed": 1,
      "delta": 0.2,
      "estimation_horizon": 20,
      "control_horizon": 20,
      "collision_margin": 0.1,
      "report": {"settle_time": 20, "window_factor": 2, "window_release": 5},
      "assert": {"steady_error_max": 0.2, "coverage_min": 0.99, "constraint_max": 1e-3, "controls_in_bounds": true}
    })");
  }
  if (kind == "rmse") {
    return Json::parse(R"({
      "kind": "rmse",
      "noise_cases": [1, 2, 3],
      "trials": 15,
      "steps": 80,
      "horizon": 30,
      "seed": 1,
      "assert": {"mhe_not_worse": true}
    })");
  }
  if (kind == "certify") {
    return Json::parse(R"({
      "kind": "certify",
      "deltas": [1, 0.5, 0.25, 0.1],
      "q2s": [2, 5, 10, 100],
      "search": {"grid": "linear", "linear_step": 0.1, "n_cap": 500}
    })");
  }
  if (kind == "certify_path") {
    return Json::parse(R"({
      "kind": "certify_path",
      "delta": 0.1,
      "t_max": 40,
      "path": {"amplitude": 0.6, "frequency": 0.25},
      "sweeps": [
        {"q_hat": [0.1, 0.2, 20], "epsilon": [2]},
        {"q_hat": [20], "epsilon": [0.5, 1, 2, 4]}
      ]
    })");
  }
  throw std::invalid_argument("no default scenario for kind '" + std::string(kind) + "'");
}

Json resolve_scenario(const RunConfig& cfg, std::string_view kind) {
  Json doc = cfg.scenario ? load_json_file(*cfg.scenario) : default_scenario(kind);
  if (cfg.seed) doc["seed"] = *cfg.seed;
  for (const auto& o : cfg.overrides) apply_override(doc, o);
  return doc;
}

int cmd_certify(const RunConfig& cfg, std::ostream& log) {
  const Json doc = resolve_scenario(cfg, "certify");
  const auto grid = certify_grid_from(doc);
  const auto refs = load_reference_tables();
  std::filesystem::create_directories(cfg.out_dir);

  std::vector<CertifyRow> rows;
  for (double d : grid.deltas) {
    for (double q : grid.q2s) rows.push_back({.delta = d, .q2 = q, .reference = refs.n_hat_at(d, q), .error = {}});
  }
  parallel_for(rows.size(), cfg.jobs, [&](std::size_t i) {
    auto& row = rows[i];
    try {
      const auto cert = minimal_horizon(CertificateParams::table_cell(row.delta, row.q2), grid.search);
      row.n_hat = cert.n_hat;
      row.alpha = cert.alpha_n_hat;
      row.s_opt = cert.s_opt;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  });

  write_csv(cfg.out_dir / "certify.csv", [&](std::ostream& o) { write_certify_csv(o, rows); });
  Json summary = certify_summary(rows);
  summary["kind"] = "certify";
  write_json(cfg.out_dir / "certify_summary.json", summary);

  Failures failures;
  const auto tolerance = limit(assertions(doc), "reference_tolerance");
  for (const auto& r : rows) {
    const auto label = "delta=" + format_number(r.delta) + ",q2=" + format_number(r.q2);
    if (!r.error.empty()) {
      failures.add(label, "error", r.error);
    } else if (tolerance && r.reference && std::abs(r.n_hat - *r.reference) > *tolerance) {
      failures.add(label, "reference_tolerance", r.n_hat, *r.reference);
    }
    if (r.error.empty()) log << label << ": N_hat = " << r.n_hat << '\n';
  }
  return finish(cfg, failures, log);
}

int cmd_certify_path(const RunConfig& cfg, std::ostream& log) {
  const Json doc = resolve_scenario(cfg, "certify_path");
  const auto plan = certify_path_plan_from(doc);
  std::filesystem::create_directories(cfg.out_dir);

  const auto path = PathSpec::sine(plan.amplitude, plan.frequency);
  std::vector<std::vector<PathSweepRow>> blocks(plan.sweeps.size());
  std::vector<Json> minimal(plan.sweeps.size());
  parallel_for(plan.sweeps.size(), cfg.jobs, [&](std::size_t i) {
    const auto& spec = plan.sweeps[i];
    Json m{{"q_hat", spec.q_hat}, {"epsilon", spec.epsilon}};
    try {
      if (!(plan.delta < plan.t_max)) throw std::invalid_argument("delta must be below t_max");
      auto w = plan.weights;
      w.q_hat = spec.q_hat;
      const auto p = PathCertificateParams::from_path(path, w, spec.epsilon, plan.delta);
      const int n_max = static_cast<int>(std::floor(plan.t_max / plan.delta + 1e-9));
      for (const auto& s : alpha_sweep(p, n_max)) blocks[i].push_back({spec.q_hat, spec.epsilon, s.horizon, s.alpha, {}});
      try {
        m["T_hat"] = minimal_T(p);
      } catch (const std::exception& e) {
        m["T_hat"] = nullptr;
        m["T_hat_error"] = e.what();
      }
    } catch (const std::exception& e) {
      blocks[i] = {{spec.q_hat, spec.epsilon, 0.0, 0.0, e.what()}};
      m["error"] = e.what();
    }
    minimal[i] = std::move(m);
  });

  std::vector<PathSweepRow> rows;
  for (const auto& b : blocks) rows.insert(rows.end(), b.begin(), b.end());
  write_csv(cfg.out_dir / "certify_path.csv", [&](std::ostream& o) { write_path_sweep_csv(o, rows); });
  write_json(cfg.out_dir / "certify_path_summary.json",
             Json{{"kind", "certify_path"}, {"delta", plan.delta}, {"sweeps", Json(minimal)}});

  Failures failures;
  for (const auto& m : minimal) {
    const auto label = "q_hat=" + format_number(m["q_hat"].get<double>()) +
                       ",epsilon=" + format_number(m["epsilon"].get<double>());
    if (m.contains("error")) {
      failures.add(label, "error", m["error"].get<std::string>());
    } else if (m["T_hat"].is_number()) {
      log << label << ": T_hat = " << format_number(m["T_hat"].get<double>()) << '\n';
    }
  }
  return finish(cfg, failures, log);
}

int cmd_simulate(const RunConfig& cfg, std::ostream& log) {
  std::string kind;
  if (!cfg.loop.empty()) kind = kind_of_loop(cfg.loop);
  if (cfg.scenario) {
    const Json file = load_json_file(*cfg.scenario);
    const auto file_kind = file.value("kind", std::string());
    if (!kind.empty() && file_kind != kind) {
      throw std::invalid_argument("scenario kind '" + file_kind + "' does not match loop '" + kind + "'");
    }
    kind = kind_of_loop(file_kind);
  }
  if (kind.empty()) throw std::invalid_argument("simulate needs a loop name or a scenario file");

  const Json doc = resolve_scenario(cfg, kind);
  std::filesystem::create_directories(cfg.out_dir);
  if (kind == "regulation") return simulate_regulation(cfg, doc, log);
  if (kind == "mpfc") return simulate_mpfc(cfg, doc, log);
  if (kind == "dmpc") return simulate_dmpc(cfg, doc, log);
  if (kind == "mrs") return simulate_mrs(cfg, doc, log);
  return simulate_rmse(cfg, doc, log);
}

int run_command(const RunConfig& cfg, std::ostream& log) {
  if (cfg.subcommand == "certify") return cmd_certify(cfg, log);
  if (cfg.subcommand == "certify-path") return cmd_certify_path(cfg, log);
  if (cfg.subcommand == "simulate") return cmd_simulate(cfg, log);
  throw std::invalid_argument("unknown subcommand '" + cfg.subcommand + "'");
}

}  // namespace nhmpc
