#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>

#include "bifl/config.hpp"

using namespace bifl;
using doctest::Contains;

namespace {

RunConfig parse(const std::string& text) { return parse_run_config(text); }

const char* kMinimalFederated = R"({"schema_version":1,"kind":"federated","output_dir":"out"})";

}  // namespace

TEST_CASE("minimal federated config resolves every default") {
  RunConfig cfg = parse(kMinimalFederated);
  CHECK(cfg.schema_version == 1);
  CHECK(cfg.kind == RunKind::Federated);
  CHECK(cfg.output_dir == "out");
  REQUIRE(cfg.seeds.size() == 1);
  CHECK(cfg.seeds[0] == 1);
  CHECK(cfg.dataset.source == "synth-digits");
  CHECK(cfg.dataset.train_count == 6000);
  CHECK(cfg.dataset.test_count == 1000);
  CHECK(cfg.dataset.generator_seed == 77);
  CHECK(cfg.dataset.noise_sigma == 0.25);
  CHECK(cfg.dataset.max_shift == 3);
  CHECK(cfg.partition.scheme == "iid");
  CHECK(cfg.partition.clients == 10);
  CHECK(cfg.strategy.kind == StrategyKind::Full);
  CHECK(!cfg.strategy.beta);
  CHECK(!cfg.strategy.alpha);
  CHECK(!cfg.strategy.hybrid_switch);
  CHECK(cfg.train.rounds == 60);
  CHECK(cfg.train.batch == 64);
  CHECK(cfg.train.eval_batch == 256);
  CHECK(cfg.train.participation == 1.0);
  REQUIRE(cfg.train.lr.steps.size() == 1);
  CHECK(cfg.train.lr.steps[0].second == 0.005);
}

TEST_CASE("run kind names round-trip and reject strangers") {
  for (RunKind k : {RunKind::Federated, RunKind::ConvergenceLab, RunKind::EstimatorAudit})
    CHECK(run_kind_from_name(run_kind_name(k)) == k);
  CHECK_THROWS_WITH_AS(run_kind_from_name("walkabout"), Contains("unknown value 'walkabout'"),
                       std::invalid_argument);
}

TEST_CASE("federated config round-trips through its resolved form") {
  std::string text = R"({
    "schema_version": 1,
    "kind": "federated",
    "output_dir": "runs/biml",
    "seeds": [1, 2, 3],
    "dataset": {"source": "synth-digits", "train_count": 600, "test_count": 100,
                "generator_seed": 9, "noise_sigma": 0.1, "max_shift": 2},
    "partition": {"scheme": "non-iid", "clients": 5, "classes_per_client": 4},
    "strategy": {"kind": "biml", "alpha": 1.25, "hybrid_switch": 20},
    "train": {"rounds": 30, "batch": 32, "eval_batch": 128, "participation": 0.5,
              "lr": [[10, 0.01], [30, 0.005]]}
  })";
  RunConfig cfg = parse(text);
  CHECK(cfg.seeds == std::vector<uint64_t>{1, 2, 3});
  CHECK(cfg.dataset.train_count == 600);
  CHECK(cfg.partition.scheme == "non-iid");
  CHECK(cfg.partition.classes_per_client == 4);
  CHECK(cfg.strategy.kind == StrategyKind::BiML);
  CHECK(cfg.strategy.alpha == 1.25);
  CHECK(cfg.strategy.hybrid_switch == 20);
  CHECK(cfg.train.participation == 0.5);
  REQUIRE(cfg.train.lr.steps.size() == 2);
  CHECK(cfg.train.lr.steps[0] == std::pair<int, double>{10, 0.01});
  CHECK(cfg.train.lr.steps[1] == std::pair<int, double>{30, 0.005});

  std::string resolved = resolved_config_json(cfg);
  RunConfig again = parse(resolved);
  CHECK(resolved_config_json(again) == resolved);
  CHECK(again.seeds == cfg.seeds);
  CHECK(again.strategy.kind == cfg.strategy.kind);
  CHECK(again.strategy.alpha == cfg.strategy.alpha);
  CHECK(again.strategy.hybrid_switch == cfg.strategy.hybrid_switch);
  CHECK(again.train.lr.steps == cfg.train.lr.steps);
  CHECK(again.dataset.generator_seed == cfg.dataset.generator_seed);
}

TEST_CASE("lab and audit configs round-trip and stay scoped to their blocks") {
  std::string lab_text = R"({
    "schema_version": 1, "kind": "convergence-lab", "output_dir": "runs/lab",
    "seeds": [7],
    "lab": {"problems": 25, "min_n": 4, "max_n": 9, "steps": 50,
            "pilot_eta_scale": 0.02, "geometry_instances": 500}
  })";
  RunConfig lab = parse(lab_text);
  CHECK(lab.lab.problems == 25);
  CHECK(lab.lab.min_n == 4);
  CHECK(lab.lab.max_n == 9);
  CHECK(lab.lab.steps == 50);
  CHECK(lab.lab.pilot_eta_scale == 0.02);
  CHECK(lab.geometry_instances == 500);
  std::string lab_resolved = resolved_config_json(lab);
  CHECK(lab_resolved.find("\"lab\"") != std::string::npos);
  CHECK(lab_resolved.find("\"dataset\"") == std::string::npos);
  CHECK(lab_resolved.find("\"audit\"") == std::string::npos);
  CHECK(resolved_config_json(parse(lab_resolved)) == lab_resolved);

  std::string audit_text = R"({
    "schema_version": 1, "kind": "estimator-audit", "output_dir": "runs/audit",
    "audit": {"m": 50, "samples": 2000, "probe_trials": 300,
              "alpha_grid": [1.0, 1.5], "cells": [[0.05, 0.2], [0.1, 0.4]]}
  })";
  RunConfig audit = parse(audit_text);
  CHECK(audit.audit.m == 50.0);
  CHECK(audit.audit.samples == 2000);
  CHECK(audit.audit.probe_trials == 300);
  CHECK(audit.audit.alpha_grid == std::vector<double>{1.0, 1.5});
  REQUIRE(audit.audit.cells.size() == 2);
  CHECK(audit.audit.cells[1] == std::pair<double, double>{0.1, 0.4});
  std::string audit_resolved = resolved_config_json(audit);
  CHECK(audit_resolved.find("\"audit\"") != std::string::npos);
  CHECK(audit_resolved.find("\"train\"") == std::string::npos);
  CHECK(resolved_config_json(parse(audit_resolved)) == audit_resolved);
}

TEST_CASE("resolved dataset block carries only the fields its source uses") {
  RunConfig digits = parse(kMinimalFederated);
  std::string r = resolved_config_json(digits);
  CHECK(r.find("noise_sigma") != std::string::npos);
  CHECK(r.find("\"classes\"") == std::string::npos);
  CHECK(r.find("train_images") == std::string::npos);

  RunConfig gauss = parse(R"({
    "schema_version": 1, "kind": "federated", "output_dir": "out",
    "dataset": {"source": "synth-gaussian", "train_count": 200, "test_count": 50,
                "classes": 4, "features": 16}
  })");
  std::string g = resolved_config_json(gauss);
  CHECK(g.find("\"classes\"") != std::string::npos);
  CHECK(g.find("\"features\"") != std::string::npos);
  CHECK(g.find("noise_sigma") == std::string::npos);

  RunConfig idx = parse(R"({
    "schema_version": 1, "kind": "federated", "output_dir": "out",
    "dataset": {"source": "idx", "train_images": "a", "train_labels": "b",
                "test_images": "c", "test_labels": "d"}
  })");
  std::string i = resolved_config_json(idx);
  CHECK(i.find("train_images") != std::string::npos);
  CHECK(i.find("train_count") == std::string::npos);

  // iid partitions do not advertise the non-iid knob
  CHECK(r.find("classes_per_client") == std::string::npos);
}

TEST_CASE("lr accepts a bare rate or a strictly increasing step table") {
  RunConfig flat = parse(R"({
    "schema_version": 1, "kind": "federated", "output_dir": "out",
    "train": {"lr": 0.01}
  })");
  REQUIRE(flat.train.lr.steps.size() == 1);
  CHECK(flat.train.lr.steps[0].second == 0.01);
  CHECK(flat.train.lr.lr_at(1) == 0.01);
  CHECK(flat.train.lr.lr_at(100000) == 0.01);

  auto bad = [](const std::string& lr) {
    return std::string(R"({"schema_version":1,"kind":"federated","output_dir":"out","train":{"lr":)") +
           lr + "}}";
  };
  CHECK_THROWS_WITH_AS(parse(bad("[]")), Contains("train.lr"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(bad("0")), Contains("must be > 0"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(bad("[[10, 0.01], [10, 0.005]]")),
                       Contains("strictly increasing"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(bad("[[10, 0.01], [20, 0]]")), Contains("rates must be > 0"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(bad("[[10, 0.01], 5]")), Contains("[through_round, rate]"),
                       std::invalid_argument);
}

TEST_CASE("malformed documents and unknown keys are named in the diagnostic") {
  CHECK_THROWS_WITH_AS(parse("{nope"), Contains("not valid JSON"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse("[1, 2]"), Contains("must be a JSON object"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(R"({"schema_version":1,"kind":"federated","output_dir":"o","frobnicate":1})"),
                       Contains("config field 'frobnicate' is not recognized"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(R"({"schema_version":1,"kind":"federated","output_dir":"o","dataset":{"sigma":1}})"),
                       Contains("config field 'dataset.sigma' is not recognized"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(R"({"schema_version":"one","kind":"federated","output_dir":"o"})"),
                       Contains("config field 'schema_version' must be an integer"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(R"({"schema_version":1,"kind":"federated","output_dir":7})"),
                       Contains("config field 'output_dir' must be a string"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(R"({"schema_version":2,"kind":"federated","output_dir":"o"})"),
                       Contains("schema_version' must be 1"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(R"({"schema_version":1,"kind":"federated"})"),
                       Contains("output_dir' must be a non-empty path"), std::invalid_argument);
}

TEST_CASE("seed lists must be non-empty, distinct, non-negative integers") {
  auto with_seeds = [](const std::string& seeds) {
    return std::string(R"({"schema_version":1,"kind":"federated","output_dir":"o","seeds":)") +
           seeds + "}";
  };
  CHECK(parse(with_seeds("[3, 1, 2]")).seeds == std::vector<uint64_t>{3, 1, 2});
  CHECK_THROWS_WITH_AS(parse(with_seeds("[]")), Contains("non-empty array"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(with_seeds("[1, 2, 1]")), Contains("duplicates"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(with_seeds("[-4]")), Contains("non-negative"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(with_seeds("[1.5]")), Contains("non-negative integers"),
                       std::invalid_argument);
}

TEST_CASE("strategy knobs are cross-checked against the chosen strategy") {
  auto with_strategy = [](const std::string& s) {
    return std::string(R"({"schema_version":1,"kind":"federated","output_dir":"o","strategy":)") +
           s + "}";
  };
  // beta belongs to the mixing strategies only
  CHECK_THROWS_WITH_AS(parse(with_strategy(R"({"kind":"biml","alpha":1.25,"beta":0.5})")),
                       Contains("beta"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse(with_strategy(R"({"kind":"bi-up-only"})")),
                       Contains("requires beta"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse(with_strategy(R"({"kind":"biml","alpha":1.0})")), Contains("alpha"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(parse(with_strategy(R"({"kind":"bifl-full","hybrid_switch":5})")),
                       Contains("hybrid"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse(with_strategy(R"({"kind":"warp-drive"})")), Contains("warp-drive"),
                       std::runtime_error);
  RunConfig ok = parse(with_strategy(R"({"kind":"bi-up-down","beta":0.3})"));
  CHECK(ok.strategy.kind == StrategyKind::UpDown);
  CHECK(ok.strategy.beta == 0.3);
}

TEST_CASE("federated field ranges are enforced with named diagnostics") {
  auto block = [](const std::string& key, const std::string& body) {
    return std::string(R"({"schema_version":1,"kind":"federated","output_dir":"o",")") + key +
           "\":" + body + "}";
  };
  CHECK_THROWS_WITH_AS(parse(block("dataset", R"({"source":"csv"})")),
                       Contains("dataset.source' has unknown value 'csv'"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(block("dataset", R"({"source":"idx"})")),
                       Contains("train_images' is required"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(block("dataset", R"({"train_count":0})")),
                       Contains("train_count' must be >= 1"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(block("dataset", R"({"noise_sigma":-0.1})")),
                       Contains("noise_sigma' must be >= 0"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      parse(block("dataset", R"({"source":"synth-gaussian","classes":1})")),
      Contains("classes' must be >= 2"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(block("dataset", R"({"generator_seed":-1})")),
                       Contains("generator_seed' must be a non-negative integer"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(block("partition", R"({"scheme":"ring"})")),
                       Contains("partition.scheme' has unknown value"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(block("partition", R"({"clients":0})")),
                       Contains("partition.clients' must be >= 1"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(block("partition", R"({"scheme":"unbalanced","clients":50})")),
                       Contains("must be 100 for the unbalanced scheme"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(block("train", R"({"rounds":0})")),
                       Contains("train.rounds' must be >= 1"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(block("train", R"({"participation":0})")),
                       Contains("participation' must lie in (0, 1]"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(block("train", R"({"participation":1.5})")),
                       Contains("participation' must lie in (0, 1]"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(block("train", R"({"participation":0.05})")),
                       Contains("leaves no uploader for 10 clients"), std::invalid_argument);
}

TEST_CASE("lab and audit field ranges are enforced with named diagnostics") {
  auto lab = [](const std::string& body) {
    return std::string(R"({"schema_version":1,"kind":"convergence-lab","output_dir":"o","lab":)") +
           body + "}";
  };
  CHECK_THROWS_WITH_AS(parse(lab(R"({"problems":0})")), Contains("lab.problems' must be >= 1"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(lab(R"({"min_n":0})")), Contains("1 <= min_n <= max_n <= 20"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(lab(R"({"max_n":24})")), Contains("1 <= min_n <= max_n <= 20"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(lab(R"({"steps":1})")), Contains("lab.steps' must be >= 2"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(lab(R"({"pilot_eta_scale":0})")),
                       Contains("pilot_eta_scale' must be > 0"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(lab(R"({"geometry_instances":-1})")),
                       Contains("geometry_instances' must be >= 0"), std::invalid_argument);

  auto audit = [](const std::string& body) {
    return std::string(
               R"({"schema_version":1,"kind":"estimator-audit","output_dir":"o","audit":)") +
           body + "}";
  };
  CHECK_THROWS_WITH_AS(parse(audit(R"({"m":4.5})")), Contains("audit.m' must be a positive integer"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(audit(R"({"m":0})")), Contains("positive integer"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(audit(R"({"samples":0})")), Contains("audit.samples' must be >= 1"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(audit(R"({"alpha_grid":[]})")),
                       Contains("alpha_grid' must be non-empty"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(audit(R"({"alpha_grid":[1.0, 0.9]})")),
                       Contains("strictly increasing"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(audit(R"({"alpha_grid":[-1.0, 1.0]})")),
                       Contains("entries must be > 0"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(audit(R"({"cells":[]})")), Contains("cells' must be non-empty"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(audit(R"({"cells":[[1.5, 0.2]]})")),
                       Contains("mu entries must lie in (-1, 1)"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(audit(R"({"cells":[[0.1, 0]]})")),
                       Contains("sigma entries must be > 0"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse(audit(R"({"cells":[0.1]})")),
                       Contains("[mu, sigma] pairs"), std::invalid_argument);
}

TEST_CASE("configs load from disk and missing files are reported") {
  std::string path = "test_config_tmp.json";
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << kMinimalFederated;
  }
  RunConfig cfg = load_run_config(path);
  CHECK(cfg.kind == RunKind::Federated);
  CHECK(cfg.output_dir == "out");
  std::remove(path.c_str());
  CHECK_THROWS_WITH_AS(load_run_config("no/such/config.json"),
                       Contains("cannot open config file"), std::runtime_error);
}
