#include "tropictwin/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "tropictwin/calib.hpp"
#include "tropictwin/trace.hpp"
#include "tropictwin/util.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace tropictwin::pipeline {

namespace {

constexpr double kPeriodS = 900.0;
constexpr int kCemBudget = 640;  // plant rollouts granted to the model-free search

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << content;
  if (!out.good()) throw std::runtime_error("write failed: " + path);
}

void require_input(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) throw std::invalid_argument(what + " not found: " + path);
}

std::string manifest_path(const std::string& out_dir) {
  return (fs::path(out_dir) / "manifest.json").string();
}

Artifact make_artifact(const std::string& out_dir, const std::string& rel) {
  return {rel, file_digest((fs::path(out_dir) / rel).string())};
}

// Every stage funnels its bookkeeping through here: ensure the run directory,
// keep scenario/seed as first recorded, swap the stage record in.
void record_stage(const CommonOpts& c, StageRecord stage) {
  RunManifest m = read_manifest(c.out_dir);
  if (m.stages.empty()) {
    m.scenario = c.scenario_path.empty() ? "(default)" : c.scenario_path;
    m.seed = c.seed;
  }
  m.out_dir = c.out_dir;
  upsert_stage(m, std::move(stage));
  write_manifest(m, c.out_dir);
}

std::vector<plant::ControlAction> schedule_for(const std::string& mode, int days, uint64_t seed,
                                               const config::SiteConfig& cfg) {
  if (mode == "fixed")
    return std::vector<plant::ControlAction>(static_cast<std::size_t>(days) * 96,
                                             brain::fixed_policy(cfg).fixed);
  if (mode == "ops") return plant::operations_actions(days, kPeriodS, seed);
  if (mode == "excite") return plant::excitation_actions(days, kPeriodS, seed);
  throw std::invalid_argument("simulate mode must be fixed, ops or excite; got `" + mode + "`");
}

// calibration.csv carries `param,init,recovered,...` rows; apply the recovered
// column onto the physics parameters.
void apply_calibration(config::PhysicsParams& ph, const std::string& csv_path) {
  std::istringstream in(read_file(csv_path));
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string name, init, recovered;
    std::getline(row, name, ',');
    std::getline(row, init, ',');
    std::getline(row, recovered, ',');
    if (name.empty() || recovered.empty())
      throw std::invalid_argument("malformed calibration row: " + line);
    config::set_physics_param(ph, name, std::stod(recovered));
  }
}

ordered_json policy_json(const brain::Policy& pol) {
  ordered_json j;
  j["label"] = pol.label;
  switch (pol.kind) {
    case brain::PolicyKind::Fixed:
      j["kind"] = "fixed";
      j["action"] = {{"sup_set_c", pol.fixed.supply_setpoint_c},
                     {"fan_ratio", pol.fixed.fan_ratio},
                     {"chws_set_c", pol.fixed.chws_setpoint_c}};
      break;
    case brain::PolicyKind::Lookup: {
      j["kind"] = "lookup";
      ordered_json rows = ordered_json::array();
      for (const auto& a : pol.lookup)
        rows.push_back({a.supply_setpoint_c, a.fan_ratio, a.chws_setpoint_c});
      j["columns"] = {"sup_set_c", "fan_ratio", "chws_set_c"};
      j["schedule"] = std::move(rows);
      break;
    }
    case brain::PolicyKind::Parametric:
      j["kind"] = "parametric";
      j["phi"] = pol.phi;
      break;
  }
  j["fallback"] = pol.fallback;
  return j;
}

}  // namespace

std::string file_digest(const std::string& path) { return hex64(fnv1a64(read_file(path))); }

RunManifest read_manifest(const std::string& out_dir) {
  RunManifest m;
  m.out_dir = out_dir;
  const std::string path = manifest_path(out_dir);
  if (!fs::exists(path)) return m;
  ordered_json j;
  try {
    j = ordered_json::parse(read_file(path));
    m.scenario = j.at("scenario").get<std::string>();
    m.seed = j.at("seed").get<uint64_t>();
    m.out_dir = j.at("out_dir").get<std::string>();
    for (const auto& s : j.at("stages")) {
      StageRecord rec;
      rec.name = s.at("name").get<std::string>();
      for (const auto& a : s.at("artifacts"))
        rec.artifacts.push_back(
            {a.at("path").get<std::string>(), a.at("digest").get<std::string>()});
      m.stages.push_back(std::move(rec));
    }
  } catch (const ordered_json::exception& e) {
    throw std::invalid_argument("malformed manifest " + path + ": " + e.what());
  }
  return m;
}

void write_manifest(const RunManifest& m, const std::string& out_dir) {
  ordered_json j;
  j["scenario"] = m.scenario;
  j["seed"] = m.seed;
  j["out_dir"] = m.out_dir;
  ordered_json stages = ordered_json::array();
  for (const auto& s : m.stages) {
    ordered_json artifacts = ordered_json::array();
    for (const auto& a : s.artifacts) artifacts.push_back({{"path", a.path}, {"digest", a.digest}});
    stages.push_back({{"name", s.name}, {"artifacts", std::move(artifacts)}});
  }
  j["stages"] = std::move(stages);
  write_file(manifest_path(out_dir), j.dump(2) + "\n");
}

void upsert_stage(RunManifest& m, StageRecord stage) {
  for (auto& s : m.stages)
    if (s.name == stage.name) {
      s = std::move(stage);
      return;
    }
  m.stages.push_back(std::move(stage));
}

std::vector<std::string> verify_manifest(const std::string& out_dir) {
  std::vector<std::string> problems;
  RunManifest m = read_manifest(out_dir);
  for (const auto& s : m.stages)
    for (const auto& a : s.artifacts) {
      const std::string full = (fs::path(out_dir) / a.path).string();
      if (!fs::exists(full)) {
        problems.push_back(s.name + ": missing artifact " + a.path);
        continue;
      }
      if (file_digest(full) != a.digest)
        problems.push_back(s.name + ": digest mismatch for " + a.path);
    }
  return problems;
}

config::SiteConfig load_scenario(const std::string& scenario_path) {
  config::SiteConfig cfg;
  if (scenario_path.empty()) {
    cfg = config::default_case_study();
  } else {
    require_input(scenario_path, "scenario file");
    cfg = config::load_site_config(scenario_path);
  }
  auto violations = config::validate(cfg);
  if (!violations.empty()) {
    std::string msg = "invalid scenario:";
    for (const auto& v : violations) msg += "\n  " + v;
    throw std::invalid_argument(msg);
  }
  return cfg;
}

SimulateOutcome cmd_simulate(const CommonOpts& c, const std::string& mode) {
  if (c.days < 1) throw std::invalid_argument("simulate needs days >= 1");
  config::SiteConfig cfg = load_scenario(c.scenario_path);
  auto exo = plant::synth_workload(c.days, kPeriodS, c.seed);
  auto actions = schedule_for(mode, c.days, c.seed, cfg);
  auto init = plant::steady_state(actions.front(), exo.front(), cfg);
  plant::Trace tr = plant::run_periods(init, actions, exo, cfg).periods;

  fs::create_directories(c.out_dir);
  const std::string rel = "trace_" + mode + ".csv";
  trace::write_csv(tr, (fs::path(c.out_dir) / rel).string());

  SimulateOutcome out;
  out.trace_path = (fs::path(c.out_dir) / rel).string();
  out.rows = static_cast<int>(tr.records.size());
  for (const auto& r : tr.records) out.infeasible_periods += r.state.coil_infeasible ? 1 : 0;
  record_stage(c, {"simulate-" + mode, {make_artifact(c.out_dir, rel)}});
  return out;
}

TrainOutcome cmd_train(const CommonOpts& c, const std::string& trace_path, const std::string& mode,
                       double lambda_p) {
  if (mode != "data" && mode != "piml")
    throw std::invalid_argument("train mode must be data or piml; got `" + mode + "`");
  config::SiteConfig cfg = load_scenario(c.scenario_path);
  require_input(trace_path, "trace file");
  plant::Trace tr = trace::read_csv(trace_path);

  const auto rows_per_day = static_cast<std::size_t>(86400.0 / tr.timestep_s + 0.5);
  if (tr.records.size() < 7 * rows_per_day)
    throw std::invalid_argument("training needs a trace of at least 7 days (" +
                                std::to_string(7 * rows_per_day) + " periods); " + trace_path +
                                " has " + std::to_string(tr.records.size()));

  plant::Trace head = tr, tail = tr;
  head.records.assign(tr.records.begin(), tr.records.begin() + 5 * rows_per_day);
  tail.records.assign(tr.records.end() - 2 * rows_per_day, tr.records.end());
  auto ds_train = surrogate::dataset_from_trace(head);
  auto ds_test = surrogate::dataset_from_trace(tail);

  surrogate::TrainConfig tc;
  tc.lambda_p = lambda_p;
  tc.seed = c.seed;
  surrogate::TrainResult res = mode == "piml" ? surrogate::train_piml(ds_train, cfg, tc)
                                              : surrogate::train_data_driven(ds_train, tc);

  fs::create_directories(c.out_dir);
  const std::string model_rel = "model_" + mode + ".txt";
  const std::string report_rel = "errors_" + mode + ".csv";
  surrogate::save_model(res.params, (fs::path(c.out_dir) / model_rel).string());
  TrainOutcome out;
  out.errors = surrogate::evaluate_errors(res.params, ds_test);
  write_file((fs::path(c.out_dir) / report_rel).string(), surrogate::error_report_csv(out.errors));

  out.model_path = (fs::path(c.out_dir) / model_rel).string();
  out.report_path = (fs::path(c.out_dir) / report_rel).string();
  out.best_epoch = res.best_epoch;
  out.physics_rms = res.physics_rms;
  out.physics_within_budget = res.physics_within_budget;
  record_stage(c, {"train-" + mode,
                   {make_artifact(c.out_dir, model_rel), make_artifact(c.out_dir, report_rel)}});
  return out;
}

CalibrateOutcome cmd_calibrate(const CommonOpts& c, const std::string& trace_path,
                               const std::vector<std::string>& free_params) {
  config::SiteConfig cfg = load_scenario(c.scenario_path);
  require_input(trace_path, "trace file");
  plant::Trace tr = trace::read_csv(trace_path);

  calib::CalibrationProblem problem = calib::make_problem(tr, free_params, cfg);
  calib::validate_problem(problem);
  calib::CalibrationResult result = calib::calibrate(problem, cfg);

  fs::create_directories(c.out_dir);
  const std::string rel = "calibration.csv";
  calib::write_calibration_csv(result, nullptr, (fs::path(c.out_dir) / rel).string());

  CalibrateOutcome out;
  out.csv_path = (fs::path(c.out_dir) / rel).string();
  out.iterations = result.iterations;
  out.final_loss = result.final_loss;
  for (const auto& p : result.params) out.non_identifiable += p.identifiable ? 0 : 1;
  record_stage(c, {"calibrate", {make_artifact(c.out_dir, rel)}});
  return out;
}

OptimizeOutcome cmd_optimize(const CommonOpts& c, const std::string& method) {
  config::SiteConfig cfg = load_scenario(c.scenario_path);
  const std::string calib_csv = (fs::path(c.out_dir) / "calibration.csv").string();
  if (fs::exists(calib_csv)) apply_calibration(cfg.physics, calib_csv);

  // Held-out evaluation week: one seed past the training workload.
  auto exo = plant::synth_workload(c.days, kPeriodS, c.seed + 1);
  auto cs = brain::constraints_from(cfg);

  brain::Policy pol;
  brain::SearchLog log;
  bool searched = false;
  if (method == "fixed") {
    pol = brain::fixed_policy(cfg);
  } else if (method == "cem") {
    pol = brain::model_free_search(cfg, exo, kCemBudget, c.seed, &log);
    searched = true;
  } else if (method == "unipi" || method == "multipi") {
    const std::string model_path = (fs::path(c.out_dir) / "model_piml.txt").string();
    if (!fs::exists(model_path))
      throw std::invalid_argument("method " + method + " needs the trained twin at " + model_path +
                                  "; run the train stage with --mode piml first");
    surrogate::MlpParams model = surrogate::load_model(model_path);
    brain::OptimizeConfig oc;
    oc.seed = c.seed;
    pol = method == "unipi" ? brain::uni_pi_optimize(model, cfg, exo, cs, oc)
                            : brain::multi_pi_optimize(model, cfg, exo, cs, oc);
  } else {
    throw std::invalid_argument("method must be fixed, cem, unipi or multipi; got `" + method +
                                "`");
  }

  plant::Trace periods;
  OptimizeOutcome out;
  out.report = brain::evaluate(pol, cfg, exo, c.seed, &periods);

  fs::create_directories(c.out_dir);
  ordered_json pj = policy_json(pol);
  if (searched) {
    pj["search"] = {{"rollout_budget", kCemBudget},
                    {"generations", log.violation_periods_per_generation.size()},
                    {"interim_violation_periods", log.total_violation_periods},
                    {"budget_exhausted", log.budget_exhausted}};
  }
  const std::string policy_rel = "policy_" + method + ".json";
  const std::string eval_rel = "eval_" + method + ".json";
  const std::string periods_rel = "periods_" + method + ".csv";
  write_file((fs::path(c.out_dir) / policy_rel).string(), pj.dump(2) + "\n");
  write_file((fs::path(c.out_dir) / eval_rel).string(), brain::eval_report_json(out.report));
  write_file((fs::path(c.out_dir) / periods_rel).string(), brain::eval_periods_csv(periods, cfg));

  out.policy_path = (fs::path(c.out_dir) / policy_rel).string();
  out.report_path = (fs::path(c.out_dir) / eval_rel).string();
  out.periods_path = (fs::path(c.out_dir) / periods_rel).string();
  record_stage(c, {"optimize-" + method,
                   {make_artifact(c.out_dir, policy_rel), make_artifact(c.out_dir, eval_rel),
                    make_artifact(c.out_dir, periods_rel)}});
  return out;
}

ReportOutcome cmd_report(const std::string& run_dir) {
  require_input(run_dir, "run directory");
  std::vector<std::string> methods;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("eval_", 0) == 0 && name.size() > 10 &&
        name.compare(name.size() - 5, 5, ".json") == 0)
      methods.push_back(name.substr(5, name.size() - 10));
  }
  if (methods.empty())
    throw std::invalid_argument("report needs at least one eval_*.json in " + run_dir);

  const std::vector<std::string> canonical = {"fixed", "cem", "unipi", "multipi"};
  std::sort(methods.begin(), methods.end(), [&](const std::string& a, const std::string& b) {
    auto rank = [&](const std::string& m) {
      auto it = std::find(canonical.begin(), canonical.end(), m);
      return it == canonical.end() ? canonical.size() : it - canonical.begin();
    };
    auto ra = rank(a), rb = rank(b);
    return ra != rb ? ra < rb : a < b;
  });

  std::ostringstream csv;
  csv << "method,mean_cooling_power_kw,mean_fans_kw,mean_pumps_kw,mean_chillers_kw,"
         "mean_towers_kw,normalized_power,sla_violation_count,sla_violation_fraction\n";
  for (const auto& m : methods) {
    ordered_json j =
        ordered_json::parse(read_file((fs::path(run_dir) / ("eval_" + m + ".json")).string()));
    csv << m;
    for (const char* key : {"mean_cooling_power_kw", "mean_fans_kw", "mean_pumps_kw",
                            "mean_chillers_kw", "mean_towers_kw", "normalized_power"})
      csv << ',' << format_sig(j.at(key).get<double>(), 9);
    csv << ',' << j.at("sla_violation_count").get<int>() << ','
        << format_sig(j.at("sla_violation_fraction").get<double>(), 9) << '\n';
  }

  const std::string rel = "report.csv";
  write_file((fs::path(run_dir) / rel).string(), csv.str());

  RunManifest m = read_manifest(run_dir);
  m.out_dir = run_dir;
  upsert_stage(m, {"report", {make_artifact(run_dir, rel)}});
  write_manifest(m, run_dir);

  ReportOutcome out;
  out.table_path = (fs::path(run_dir) / rel).string();
  out.methods = static_cast<int>(methods.size());
  return out;
}

}  // namespace tropictwin::pipeline
