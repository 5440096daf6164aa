#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bifl/convergence.hpp"
#include "bifl/federation.hpp"

namespace bifl {

enum class RunKind { Federated, ConvergenceLab, EstimatorAudit };

std::string run_kind_name(RunKind k);
RunKind run_kind_from_name(const std::string& name);

struct DatasetSpec {
  std::string source = "synth-digits";  // idx | synth-digits | synth-gaussian
  // idx source: file paths
  std::string train_images, train_labels, test_images, test_labels;
  // synthetic sources
  int train_count = 6000;
  int test_count = 1000;
  uint64_t generator_seed = 77;
  double noise_sigma = 0.25;  // synth-digits
  int max_shift = 3;          // synth-digits
  int classes = 10;           // synth-gaussian
  int features = 64;          // synth-gaussian
};

struct PartitionSpec {
  std::string scheme = "iid";  // iid | non-iid | unbalanced
  int clients = 10;
  int classes_per_client = 3;  // non-iid only
};

struct TrainSpec {
  int rounds = 60;
  int batch = 64;
  int eval_batch = 256;
  double participation = 1.0;
  LrSchedule lr;
};

struct AuditSpec {
  double m = 100.0;
  long long samples = 100000;  // contraction audit draws
  int probe_trials = 10000;    // Monte-Carlo trials per bias cell
  std::vector<double> alpha_grid = {1.0, 1.25, 1.5, 1.75, 2.0};
  std::vector<std::pair<double, double>> cells = {{0.05, 0.2}, {0.1, 0.2}, {0.2, 0.4}};
};

// One declarative experiment: a federated run over seeds, a convergence-lab
// suite, or an estimator audit. validate() throws std::invalid_argument
// diagnostics that name the offending field.
struct RunConfig {
  int schema_version = 1;
  RunKind kind = RunKind::Federated;
  std::string output_dir;
  std::vector<uint64_t> seeds = {1};

  DatasetSpec dataset;      // federated
  PartitionSpec partition;  // federated
  StrategyConfig strategy;  // federated
  TrainSpec train;          // federated

  DescentSuiteConfig lab;        // convergence-lab (the seed field is per-run)
  int geometry_instances = 10000;  // convergence-lab

  AuditSpec audit;  // estimator-audit

  void validate() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// Canonical serialization with every default resolved; parsing it back gives
// the same config, and its bytes are stable across runs.
std::string resolved_config_json(const RunConfig& cfg);

}  // namespace bifl
