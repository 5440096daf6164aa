#include "bifl/runner.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

#include "bifl/binary_net.hpp"
#include "bifl/data.hpp"
#include "bifl/mlpu.hpp"

namespace bifl {

namespace {

namespace fs = std::filesystem;

std::string fmt17(double v) {
  char b[40];
  std::snprintf(b, sizeof(b), "%.17g", v);
  return b;
}

std::string fmt_g(double v) {
  char b[40];
  std::snprintf(b, sizeof(b), "%g", v);
  return b;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::string text = read_file(path);
  std::vector<std::vector<std::string>> rows;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    size_t start = 0;
    while (true) {
      size_t comma = line.find(',', start);
      if (comma == std::string::npos) {
        cells.push_back(line.substr(start));
        break;
      }
      cells.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

double to_num(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
  mean = 0.0;
  for (double x : xs) mean += x;
  mean /= double(xs.size());
  sd = 0.0;
  if (xs.size() > 1) {
    double acc = 0.0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    sd = std::sqrt(acc / double(xs.size() - 1));
  }
}

struct BuiltData {
  Dataset train, test;
};

BuiltData build_dataset(const DatasetSpec& d) {
  if (d.source == "idx")
    return {load_idx(d.train_images, d.train_labels), load_idx(d.test_images, d.test_labels)};
  if (d.source == "synth-digits") {
    // disjoint sample-index ranges off one generator seed keep the splits
    // from the same distribution without overlap
    return {synth_digits(d.train_count, d.generator_seed, 0, d.noise_sigma, d.max_shift),
            synth_digits(d.test_count, d.generator_seed, uint64_t(1) << 20, d.noise_sigma,
                         d.max_shift)};
  }
  int total = d.train_count + d.test_count;
  int per_class = (total + d.classes - 1) / d.classes;
  Dataset all = synth_gaussian(d.classes, per_class, d.features, d.generator_seed);
  std::vector<int> tr(d.train_count), te(d.test_count);
  std::iota(tr.begin(), tr.end(), 0);
  std::iota(te.begin(), te.end(), d.train_count);
  return {take(all, tr), take(all, te)};
}

Model build_model(const Dataset& train, bool binarized, Rng& init) {
  int features = int(train.images.numel() / train.size());
  int classes = train.classes;
  if (features == 784 && classes == 10) return Model::desk(init, binarized);
  int hidden = 32;
  Model m;
  m.layers.push_back(std::make_unique<DenseLayer>(features, hidden, binarized, init));
  m.layers.push_back(std::make_unique<BatchNormLayer>(hidden));
  m.layers.push_back(std::make_unique<TanhLayer>());
  m.layers.push_back(std::make_unique<DenseLayer>(hidden, classes, binarized, init));
  m.layers.push_back(std::make_unique<SoftmaxLayer>());
  return m;
}

Partition build_partition(const PartitionSpec& p, const Dataset& train, uint64_t seed) {
  Rng rng = Rng::stream(seed, "partition");
  if (p.scheme == "iid") return partition_iid(train.labels, train.classes, p.clients, rng);
  if (p.scheme == "non-iid")
    return partition_noniid(train.labels, train.classes, p.clients, p.classes_per_client, rng);
  return partition_unbalanced(train.labels, train.classes, rng);
}

std::string metrics_path(uint64_t seed) { return "metrics_seed" + std::to_string(seed) + ".csv"; }
std::string findings_path(uint64_t seed) {
  return "findings_seed" + std::to_string(seed) + ".csv";
}
std::string audit_path(uint64_t seed) { return "audit_seed" + std::to_string(seed) + ".csv"; }

// ---- summary builders (file-driven, shared by execute and verify) ----

std::string build_federated_summary(const fs::path& dir, const std::vector<uint64_t>& seeds) {
  struct Row {
    std::string strategy;
    double acc = 0.0, loss = 0.0;
    std::string up, down;
  };
  std::vector<std::vector<Row>> per_seed;
  for (uint64_t seed : seeds) {
    auto csv = read_csv(dir / metrics_path(seed));
    if (csv.size() < 2) throw std::runtime_error("empty metrics file for seed " + std::to_string(seed));
    std::vector<Row> rows;
    for (size_t i = 1; i < csv.size(); ++i) {
      const auto& c = csv[i];
      if (c.size() != 8) throw std::runtime_error("malformed metrics row");
      rows.push_back({c[1], to_num(c[2]), to_num(c[3]), c[4], c[5]});
    }
    if (!per_seed.empty() && rows.size() != per_seed.front().size())
      throw std::runtime_error("metrics files disagree in round count");
    per_seed.push_back(std::move(rows));
  }

  std::string out =
      "round,strategy,seeds,acc_mean,acc_std,loss_mean,loss_std,uplink_bits_cum,downlink_bits_cum\n";
  for (size_t r = 0; r < per_seed.front().size(); ++r) {
    const Row& first = per_seed.front()[r];
    std::vector<double> accs, losses;
    for (const auto& rows : per_seed) {
      if (rows[r].strategy != first.strategy || rows[r].up != first.up ||
          rows[r].down != first.down)
        throw std::runtime_error("metrics disagree across seeds at round " + std::to_string(r + 1));
      accs.push_back(rows[r].acc);
      losses.push_back(rows[r].loss);
    }
    double am, as, lm, ls;
    mean_std(accs, am, as);
    mean_std(losses, lm, ls);
    out += std::to_string(r + 1) + "," + first.strategy + "," + std::to_string(seeds.size()) +
           "," + fmt17(am) + "," + fmt17(as) + "," + fmt17(lm) + "," + fmt17(ls) + "," +
           first.up + "," + first.down + "\n";
  }
  return out;
}

std::string build_lab_summary(const fs::path& dir, const std::vector<uint64_t>& seeds) {
  std::string out =
      "seed,problems,rows,passing_steps,descent_violations,lambda_violations\n";
  for (uint64_t seed : seeds) {
    auto csv = read_csv(dir / findings_path(seed));
    long long rows = 0, passing = 0, v2 = 0, v1 = 0;
    long long max_problem = -1;
    for (size_t i = 1; i < csv.size(); ++i) {
      const auto& c = csv[i];
      if (c.size() != 8) throw std::runtime_error("malformed findings row");
      ++rows;
      max_problem = std::max(max_problem, (long long)to_num(c[0]));
      bool pre = c[7] == "1";
      if (!pre) continue;
      ++passing;
      if (to_num(c[5]) < 0.0) ++v1;
      if (to_num(c[6]) < 0.0) ++v2;
    }
    out += std::to_string(seed) + "," + std::to_string(max_problem + 1) + "," +
           std::to_string(rows) + "," + std::to_string(passing) + "," + std::to_string(v2) +
           "," + std::to_string(v1) + "\n";
  }
  return out;
}

std::string build_audit_summary(const fs::path& dir, const std::vector<uint64_t>& seeds) {
  // rows keyed by (mu, sigma, alpha) strings, in first-seed file order
  std::vector<std::array<std::string, 3>> order;
  std::map<std::array<std::string, 3>, std::vector<double>> bias;
  for (size_t si = 0; si < seeds.size(); ++si) {
    auto csv = read_csv(dir / audit_path(seeds[si]));
    for (size_t i = 1; i < csv.size(); ++i) {
      const auto& c = csv[i];
      if (c.size() != 7) throw std::runtime_error("malformed audit row");
      std::array<std::string, 3> key = {c[0], c[1], c[2]};
      if (si == 0) order.push_back(key);
      bias[key].push_back(to_num(c[4]));
    }
  }
  std::string out = "mu,sigma,alpha,seeds,bias_mean,bias_std\n";
  for (const auto& key : order) {
    const auto& xs = bias.at(key);
    if (xs.size() != seeds.size()) throw std::runtime_error("audit files disagree in cell set");
    double m, s;
    mean_std(xs, m, s);
    out += key[0] + "," + key[1] + "," + key[2] + "," + std::to_string(seeds.size()) + "," +
           fmt17(m) + "," + fmt17(s) + "\n";
  }
  return out;
}

// ---- per-kind executors ----

int run_federated(const RunConfig& cfg, const fs::path& dir) {
  BuiltData data = build_dataset(cfg.dataset);
  bool binarized = cfg.strategy.kind != StrategyKind::FaReal;

  long long fallbacks = 0;
  size_t fit_count = 0;
  for (size_t si = 0; si < cfg.seeds.size(); ++si) {
    uint64_t seed = cfg.seeds[si];
    Partition parts = build_partition(cfg.partition, data.train, seed);

    Rng net_rng = Rng::stream(seed, "net-init");
    Model proto = build_model(data.train, binarized, net_rng);

    FederationConfig fc;
    fc.strategy = cfg.strategy;
    fc.lr = cfg.train.lr;
    fc.participation = cfg.train.participation;
    fc.batch = cfg.train.batch;
    fc.eval_batch = cfg.train.eval_batch;
    fc.seed = seed;

    FederatedRun run(proto, data.train, parts, data.test, fc);
    std::vector<RoundMetrics> metrics = run_federation(run, cfg.train.rounds);

    std::string csv =
        "round,strategy,test_accuracy,test_loss,uplink_bits_cum,downlink_bits_cum,participants,"
        "seed\n";
    for (const RoundMetrics& m : metrics) {
      csv += std::to_string(m.round) + "," + kind_name(m.active) + "," +
             fmt17(m.test_accuracy) + "," + fmt17(m.test_loss) + "," +
             std::to_string(m.uplink_bits_cum) + "," + std::to_string(m.downlink_bits_cum) +
             "," + std::to_string(m.participants) + "," + std::to_string(seed) + "\n";
      fallbacks += m.estimator_fallbacks;
    }
    write_file(dir / metrics_path(seed), csv);

    std::string manifest = "client_id,rows,virtual_m\n";
    long long total = 0;
    for (const auto& shard : parts.shards) total += (long long)shard.size();
    for (size_t c = 0; c < parts.shards.size(); ++c)
      manifest += std::to_string(c) + "," + std::to_string(parts.shards[c].size()) + "," +
                  fmt_g(mlpu::virtual_m(double(total), double(parts.shards[c].size()))) + "\n";
    write_file(dir / ("partition_seed" + std::to_string(seed) + ".csv"), manifest);

    if (si == 0) {
      std::string ledger =
          "round,strategy,uplink_unit_bits,downlink_unit_bits,uplink_bits,downlink_bits\n";
      for (const RoundMetrics& m : metrics)
        ledger += std::to_string(m.round) + "," + kind_name(m.active) + "," +
                  std::to_string(m.uplink_bits / uint64_t(m.participants)) + "," +
                  std::to_string(m.downlink_bits / uint64_t(run.client_count())) + "," +
                  std::to_string(m.uplink_bits) + "," + std::to_string(m.downlink_bits) + "\n";
      write_file(dir / "comm_ledger.csv", ledger);

      for (const auto& [key, fit] : run.curve_fits()) {
        std::string name = "curvefit_M" + fmt_g(key.first) +
                           (key.second ? "_vote1" : "_vote0") + ".txt";
        write_file(dir / name, mlpu::curvefit_record(fit));
      }
      fit_count = run.curve_fits().size();
    }
  }

  write_file(dir / "summary.csv", build_federated_summary(dir, cfg.seeds));

  std::string events;
  events += "kind=federated\n";
  events += "seeds=" + std::to_string(cfg.seeds.size()) + "\n";
  events += "clients=" + std::to_string(cfg.partition.clients) + "\n";
  events += "rounds=" + std::to_string(cfg.train.rounds) + "\n";
  events += "strategy=" + kind_name(cfg.strategy.kind) + "\n";
  events += "train_rows=" + std::to_string(data.train.size()) + "\n";
  events += "test_rows=" + std::to_string(data.test.size()) + "\n";
  events += "estimator_fallbacks=" + std::to_string(fallbacks) + "\n";
  events += "curve_fits=" + std::to_string(fit_count) + "\n";
  write_file(dir / "events.log", events);
  return 0;
}

int run_lab(const RunConfig& cfg, const fs::path& dir) {
  long long violations = 0;
  long long geometry_violations_total = 0;
  std::string report;
  for (uint64_t seed : cfg.seeds) {
    DescentSuiteConfig sc = cfg.lab;
    sc.seed = seed;
    DescentSuiteReport rep = run_descent_suite(sc);
    write_file(dir / findings_path(seed), findings_csv(rep));

    long long geo_viol = 0;
    Rng rng = Rng::stream(seed, "lab-geometry");
    const int n = 16;
    for (int i = 0; i < cfg.geometry_instances; ++i) {
      std::vector<double> w_bar(n), w_bin(n), v(n);
      for (int j = 0; j < n; ++j) {
        w_bar[j] = rng.uniform(-1.0, 1.0);
        w_bin[j] = mlpu::sign_of(w_bar[j]);
        v[j] = rng.uniform() < 0.5 ? -1.0 : 1.0;
      }
      if (v == w_bin) v[0] = -v[0];
      if (!check_geometry_lemma(w_bar, w_bin, v).ok) ++geo_viol;
    }

    violations += rep.violations_descent + rep.violations_lambda + geo_viol;
    geometry_violations_total += geo_viol;
    report += "seed=" + std::to_string(seed) + " problems=" + std::to_string(rep.audits.size()) +
              " regenerated=" + std::to_string(rep.regenerated_problems) +
              " passing_steps=" + std::to_string(rep.total_passing_steps) +
              " descent_violations=" + std::to_string(rep.violations_descent) +
              " lambda_violations=" + std::to_string(rep.violations_lambda) +
              " printed_lambda_violations=" + std::to_string(rep.violations_lambda_printed) +
              " slope_runs=" + std::to_string(rep.slope_runs) +
              " slope_negative=" + std::to_string(rep.slope_negative) +
              " max_phi_form_gap=" + fmt17(rep.max_phi_form_ratio_error) +
              " geometry_instances=" + std::to_string(cfg.geometry_instances) +
              " geometry_violations=" + std::to_string(geo_viol) + "\n";
  }
  write_file(dir / "lab_report.txt", report);
  write_file(dir / "summary.csv", build_lab_summary(dir, cfg.seeds));

  std::string events;
  events += "kind=convergence-lab\n";
  events += "seeds=" + std::to_string(cfg.seeds.size()) + "\n";
  events += "problems_per_seed=" + std::to_string(cfg.lab.problems) + "\n";
  events += "geometry_instances_per_seed=" + std::to_string(cfg.geometry_instances) + "\n";
  events += "geometry_violations=" + std::to_string(geometry_violations_total) + "\n";
  write_file(dir / "events.log", events);
  return violations > 0 ? 1 : 0;
}

int run_audit(const RunConfig& cfg, const fs::path& dir) {
  long long contraction_failures = 0;
  for (uint64_t seed : cfg.seeds) {
    std::string csv = "mu,sigma,alpha,mean_estimate,bias,unanimous_fraction,best_alpha\n";
    for (const auto& [mu, sigma] : cfg.audit.cells) {
      BiasProbe probe = probe_theorem2(cfg.audit.m, mu, sigma, cfg.audit.alpha_grid,
                                       cfg.audit.probe_trials, seed);
      for (const BiasRow& row : probe.rows)
        csv += fmt_g(mu) + "," + fmt_g(sigma) + "," + fmt_g(row.alpha) + "," +
               fmt17(row.mean_estimate) + "," + fmt17(row.bias) + "," +
               fmt17(probe.unanimous_fraction) + "," + fmt_g(probe.best_alpha) + "\n";
    }
    write_file(dir / audit_path(seed), csv);

    ContractionAudit audit = contraction_audit(cfg.audit.m, cfg.audit.samples, seed);
    contraction_failures += audit.on_domain_violations + audit.off_domain_contractions;
    std::string ccsv =
        "m,samples,on_domain,on_domain_violations,off_domain_contractions,min_ratio,max_ratio,"
        "max_off_domain_tally_pos,min_off_domain_tally_neg\n";
    ccsv += fmt_g(audit.m) + "," + std::to_string(audit.samples) + "," +
            std::to_string(audit.on_domain) + "," + std::to_string(audit.on_domain_violations) +
            "," + std::to_string(audit.off_domain_contractions) + "," + fmt17(audit.min_ratio) +
            "," + fmt17(audit.max_ratio) + "," +
            std::to_string(audit.max_off_domain_tally_pos) + "," +
            std::to_string(audit.min_off_domain_tally_neg) + "\n";
    write_file(dir / ("contraction_seed" + std::to_string(seed) + ".csv"), ccsv);
  }
  write_file(dir / "summary.csv", build_audit_summary(dir, cfg.seeds));

  std::string events;
  events += "kind=estimator-audit\n";
  events += "seeds=" + std::to_string(cfg.seeds.size()) + "\n";
  events += "cells=" + std::to_string(cfg.audit.cells.size()) + "\n";
  events += "contraction_samples_per_seed=" + std::to_string(cfg.audit.samples) + "\n";
  events += "contraction_failures=" + std::to_string(contraction_failures) + "\n";
  write_file(dir / "events.log", events);
  return contraction_failures > 0 ? 1 : 0;
}

}  // namespace

int execute_run(const RunConfig& cfg) {
  cfg.validate();
  fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  write_file(dir / "resolved_config.json", resolved_config_json(cfg));
  switch (cfg.kind) {
    case RunKind::Federated: return run_federated(cfg, dir);
    case RunKind::ConvergenceLab: return run_lab(cfg, dir);
    case RunKind::EstimatorAudit: return run_audit(cfg, dir);
  }
  throw std::logic_error("unreachable run kind");
}

int verify_run(const std::string& dir_in) {
  fs::path dir(dir_in);
  RunConfig cfg = parse_run_config(read_file(dir / "resolved_config.json"));
  std::string expected;
  switch (cfg.kind) {
    case RunKind::Federated: expected = build_federated_summary(dir, cfg.seeds); break;
    case RunKind::ConvergenceLab: expected = build_lab_summary(dir, cfg.seeds); break;
    case RunKind::EstimatorAudit: expected = build_audit_summary(dir, cfg.seeds); break;
  }
  return read_file(dir / "summary.csv") == expected ? 0 : 1;
}

std::string compare_runs(const std::vector<std::string>& dirs) {
  if (dirs.empty()) throw std::invalid_argument("compare needs at least one run directory");
  std::string out =
      "run,strategy,rounds,seeds,final_acc_mean,final_acc_std,final_loss_mean,uplink_bits_cum,"
      "downlink_bits_cum\n";
  for (const std::string& d : dirs) {
    fs::path dir(d);
    RunConfig cfg = parse_run_config(read_file(dir / "resolved_config.json"));
    if (cfg.kind != RunKind::Federated)
      throw std::invalid_argument("compare expects federated run directories; '" + d + "' is " +
                                  run_kind_name(cfg.kind));
    auto csv = read_csv(dir / "summary.csv");
    if (csv.size() < 2) throw std::runtime_error("empty summary in " + d);
    const auto& last = csv.back();
    if (last.size() != 9) throw std::runtime_error("malformed summary row in " + d);
    char acc[64], sd[64], loss[64];
    std::snprintf(acc, sizeof(acc), "%.4f", to_num(last[3]));
    std::snprintf(sd, sizeof(sd), "%.4f", to_num(last[4]));
    std::snprintf(loss, sizeof(loss), "%.4f", to_num(last[5]));
    out += d + "," + last[1] + "," + last[0] + "," + last[2] + "," + acc + "," + sd + "," +
           loss + "," + last[7] + "," + last[8] + "\n";
  }
  return out;
}

}  // namespace bifl
