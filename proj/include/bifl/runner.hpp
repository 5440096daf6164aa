#pragma once

#include <string>
#include <vector>

#include "bifl/config.hpp"

namespace bifl {

// Executes a validated config into its output directory: per-seed metric or
// findings CSVs, a summary.csv rebuilt from those files, manifests, the
// resolved config, and a counts-only events.log. Every artifact is
// timestamp-free, so reruns of the same config are byte-identical.
// Returns 0 on success; 1 when an assertion suite inside the run (descent,
// geometry, or contraction audits) reports violations.
int execute_run(const RunConfig& cfg);

// Recomputes summary.csv from the per-seed artifacts in dir and compares
// bytes against the stored file. 0 when identical, 1 otherwise.
int verify_run(const std::string& dir);

// Side-by-side table over federated run directories: final accuracy
// mean/std and cumulative traffic per strategy.
std::string compare_runs(const std::vector<std::string>& dirs);

}  // namespace bifl
