#pragma once

// File-based pipeline stages behind the CLI: each command loads its inputs
// from disk, writes its artifacts under one run directory, and records them
// with content digests in manifest.json so finished runs are verifiable and
// reruns are byte-comparable.

#include <cstdint>
#include <string>
#include <vector>

#include "tropictwin/brain.hpp"
#include "tropictwin/config.hpp"
#include "tropictwin/surrogate.hpp"

namespace tropictwin::pipeline {

struct Artifact {
  std::string path;    // relative to the run directory
  std::string digest;  // fnv1a-64 of the file bytes, hex
};

struct StageRecord {
  std::string name;
  std::vector<Artifact> artifacts;
};

struct RunManifest {
  std::string scenario;  // path as given on the command line, or "(default)"
  uint64_t seed = 0;
  std::string out_dir;
  std::vector<StageRecord> stages;
};

// Missing manifest.json yields an empty manifest; a malformed one throws.
RunManifest read_manifest(const std::string& out_dir);
void write_manifest(const RunManifest& m, const std::string& out_dir);

// Replaces the stage with the same name, else appends; first-appearance order
// is preserved so reruns emit identical bytes.
void upsert_stage(RunManifest& m, StageRecord stage);

// Re-reads every listed artifact and compares digests. Empty result = intact.
std::vector<std::string> verify_manifest(const std::string& out_dir);

std::string file_digest(const std::string& path);

// Scenario resolution: empty path selects the built-in case study. The loaded
// config is validated; violations throw std::invalid_argument.
config::SiteConfig load_scenario(const std::string& scenario_path);

struct CommonOpts {
  std::string scenario_path;  // empty -> built-in case study
  std::string out_dir = "out";
  uint64_t seed = 0;
  int days = 7;
};

// Synthesizes a seeded workload week, rolls the plant out under the chosen
// action schedule, and writes trace_<mode>.csv. Modes: "fixed" holds the
// commissioning baseline, "ops" follows the routine-operations schedule,
// "excite" runs the identification sweep.
struct SimulateOutcome {
  std::string trace_path;
  int rows = 0;
  int infeasible_periods = 0;
};
SimulateOutcome cmd_simulate(const CommonOpts& c, const std::string& mode);

// Splits the trace at day boundaries (first 5 days train, last 2 days test),
// trains a twin per mode ("data" or "piml"), and writes model_<mode>.txt plus
// the 4-target error report errors_<mode>.csv. Traces under 7 days are
// rejected.
struct TrainOutcome {
  std::string model_path;
  std::string report_path;
  int best_epoch = 0;
  double physics_rms = 0.0;
  bool physics_within_budget = true;
  std::vector<surrogate::TargetError> errors;
};
TrainOutcome cmd_train(const CommonOpts& c, const std::string& trace_path, const std::string& mode,
                       double lambda_p);

// Recovers the listed physics parameters from the trace by replay descent,
// starting from the scenario's values, and writes calibration.csv.
struct CalibrateOutcome {
  std::string csv_path;
  int iterations = 0;
  double final_loss = 0.0;
  int non_identifiable = 0;
};
CalibrateOutcome cmd_calibrate(const CommonOpts& c, const std::string& trace_path,
                               const std::vector<std::string>& free_params);

// Builds the policy for the method ("fixed", "cem", "unipi", "multipi") and
// evaluates it on the held-out week seeded with seed+1. The twin-guided
// methods load model_piml.txt from the run directory and apply calibration
// results when calibration.csv is present. Writes policy_<method>.json,
// eval_<method>.json and periods_<method>.csv.
struct OptimizeOutcome {
  std::string policy_path;
  std::string report_path;
  std::string periods_path;
  brain::EvalReport report;
};
OptimizeOutcome cmd_optimize(const CommonOpts& c, const std::string& method);

// Merges every eval_*.json in the run directory into report.csv, methods as
// rows in canonical order (fixed, cem, unipi, multipi, then others). Requires
// at least one report; idempotent on unchanged inputs.
struct ReportOutcome {
  std::string table_path;
  int methods = 0;
};
ReportOutcome cmd_report(const std::string& run_dir);

}  // namespace tropictwin::pipeline
