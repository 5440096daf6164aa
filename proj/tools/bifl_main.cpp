#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bifl/config.hpp"
#include "bifl/convergence.hpp"
#include "bifl/mlpu.hpp"
#include "bifl/runner.hpp"

// Exit codes: 0 success, 1 failed verification or audit/suite violations,
// 2 usage or config errors.
int main(int argc, char** argv) {
  CLI::App app{"binary federated learning simulator and estimator toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  CLI::App* run = app.add_subcommand("run", "execute the run described by a JSON config");
  run->add_option("config", config_path, "path to the run config")->required();

  std::string verify_dir;
  CLI::App* verify =
      app.add_subcommand("verify", "recompute a run's summary from its per-seed artifacts");
  verify->add_option("dir", verify_dir, "run directory")->required();

  std::vector<std::string> compare_dirs;
  CLI::App* compare =
      app.add_subcommand("compare", "tabulate final metrics across federated run directories");
  compare->add_option("dirs", compare_dirs, "run directories")->required()->expected(-1);

  double fit_m = 100.0;
  bool exclude_own = false;
  CLI::App* fit =
      app.add_subcommand("fit-curve", "fit and print the fast estimator curve for a cohort size");
  fit->add_option("--m", fit_m, "cohort size, must be > 3")->required();
  fit->add_flag("--exclude-own-vote", exclude_own,
                "fit for aggregates that exclude the local sign");

  double audit_m = 100.0;
  long long audit_samples = 100000;
  uint64_t audit_seed = 1;
  CLI::App* audit =
      app.add_subcommand("audit-estimator", "contraction audit of the estimation ratio");
  audit->add_option("--m", audit_m, "cohort size")->required();
  audit->add_option("--samples", audit_samples, "feasible (tally, weight) draws");
  audit->add_option("--seed", audit_seed, "audit seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) {
      bifl::RunConfig cfg = bifl::load_run_config(config_path);
      int rc = bifl::execute_run(cfg);
      if (rc == 0)
        std::cout << "run complete: " << cfg.output_dir << "\n";
      else
        std::cout << "run complete with assertion violations: " << cfg.output_dir << "\n";
      return rc;
    }
    if (*verify) {
      int rc = bifl::verify_run(verify_dir);
      if (rc == 0)
        std::cout << "verified: summary matches its per-seed artifacts\n";
      else
        std::cout << "MISMATCH: summary does not match its per-seed artifacts\n";
      return rc;
    }
    if (*compare) {
      std::cout << bifl::compare_runs(compare_dirs);
      return 0;
    }
    if (*fit) {
      std::cout << bifl::mlpu::curvefit_record(bifl::mlpu::fit_curve(fit_m, !exclude_own));
      return 0;
    }
    bifl::ContractionAudit a = bifl::contraction_audit(audit_m, audit_samples, audit_seed);
    std::cout << "m=" << a.m << "\n"
              << "samples=" << a.samples << "\n"
              << "on_domain=" << a.on_domain << "\n"
              << "on_domain_violations=" << a.on_domain_violations << "\n"
              << "off_domain_contractions=" << a.off_domain_contractions << "\n"
              << "min_ratio=" << a.min_ratio << "\n"
              << "max_ratio=" << a.max_ratio << "\n"
              << "max_off_domain_tally_pos=" << a.max_off_domain_tally_pos << "\n"
              << "min_off_domain_tally_neg=" << a.min_off_domain_tally_neg << "\n";
    return (a.on_domain_violations > 0 || a.off_domain_contractions > 0) ? 1 : 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
