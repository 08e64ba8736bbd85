#include <cstdio>
#include <exception>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tropictwin/calib.hpp"
#include "tropictwin/config.hpp"
#include "tropictwin/pipeline.hpp"
#include "tropictwin/util.hpp"

namespace tt = tropictwin;

namespace {

std::vector<std::string> split_csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) {
    if (!out.empty()) out += ',';
    out += s;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Digital twin and cooling-control toolkit for a tropical chilled-water data center"};
  app.require_subcommand(1);
  app.footer("Environment: TROPIC_TWIN_THREADS caps internal parallelism.");

  tt::pipeline::CommonOpts common;
  std::string sim_mode = "fixed";
  std::string train_mode = "piml";
  std::string method = "multipi";
  std::string trace_path;
  std::string run_dir;
  std::string free_params = join(tt::calib::kDefaultFreeParams);
  double lambda_p = 0.15;

  auto add_common = [&](CLI::App* sub, bool with_days) {
    sub->add_option("--scenario", common.scenario_path,
                    "scenario file; omit for the built-in case study");
    sub->add_option("--seed", common.seed, "run seed")->capture_default_str();
    sub->add_option("--out", common.out_dir, "run directory")->capture_default_str();
    if (with_days)
      sub->add_option("--days", common.days, "length of the synthesized week(s)")
          ->capture_default_str();
  };

  auto* sim = app.add_subcommand("simulate", "synthesize a workload and roll out the plant");
  add_common(sim, true);
  sim->add_option("--mode", sim_mode, "action schedule: fixed, ops or excite")
      ->capture_default_str();

  auto* train = app.add_subcommand("train", "fit a twin on a trace, report held-out errors");
  train->add_option("trace", trace_path, "input trace CSV")->required();
  add_common(train, false);
  train->add_option("--mode", train_mode, "data or piml")->capture_default_str();
  train->add_option("--lambda-p", lambda_p, "physics residual weight (piml mode)")
      ->capture_default_str();

  auto* cal = app.add_subcommand("calibrate", "recover physics parameters from a trace");
  cal->add_option("trace", trace_path, "input trace CSV")->required();
  add_common(cal, false);
  cal->add_option("--free-params", free_params, "comma-separated parameter names")
      ->capture_default_str();

  auto* opt = app.add_subcommand("optimize", "build and evaluate a cooling policy");
  add_common(opt, true);
  opt->add_option("--method", method, "fixed, cem, unipi or multipi")->capture_default_str();

  auto* rep = app.add_subcommand("report", "merge eval reports into one comparison table");
  rep->add_option("dir", run_dir, "run directory with eval_*.json files")->required();

  sim->callback([&] {
    auto r = tt::pipeline::cmd_simulate(common, sim_mode);
    std::printf("wrote %s (%d periods, %d coil-infeasible)\n", r.trace_path.c_str(), r.rows,
                r.infeasible_periods);
  });
  train->callback([&] {
    auto r = tt::pipeline::cmd_train(common, trace_path, train_mode, lambda_p);
    std::printf("wrote %s (best epoch %d, physics rms %s%s)\n", r.model_path.c_str(), r.best_epoch,
                tt::format_sig(r.physics_rms, 3).c_str(),
                r.physics_within_budget ? "" : ", over budget");
    for (const auto& e : r.errors)
      std::printf("  %-12s mean %5.2f %%  max %5.2f %%\n", e.name.c_str(), 100.0 * e.mean_rel_err,
                  100.0 * e.max_rel_err);
    std::printf("wrote %s\n", r.report_path.c_str());
  });
  cal->callback([&] {
    auto r = tt::pipeline::cmd_calibrate(common, trace_path, split_csv_list(free_params));
    std::printf("wrote %s (%d iterations, final loss %s, %d non-identifiable)\n",
                r.csv_path.c_str(), r.iterations, tt::format_sig(r.final_loss, 3).c_str(),
                r.non_identifiable);
  });
  opt->callback([&] {
    auto r = tt::pipeline::cmd_optimize(common, method);
    std::printf("wrote %s\n", r.policy_path.c_str());
    std::printf("%s: mean %s kW, normalized %s, SLA violations %d\n",
                r.report.policy_label.c_str(),
                tt::format_sig(r.report.mean_cooling_power_kw, 4).c_str(),
                tt::format_sig(r.report.normalized_power, 4).c_str(),
                r.report.sla_violation_count);
    std::printf("wrote %s\nwrote %s\n", r.report_path.c_str(), r.periods_path.c_str());
  });
  rep->callback([&] {
    auto r = tt::pipeline::cmd_report(run_dir);
    std::printf("wrote %s (%d methods)\n", r.table_path.c_str(), r.methods);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const tt::config::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
