#include "bifl/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace bifl {

using json = nlohmann::ordered_json;

namespace {

[[noreturn]] void fail(const std::string& field, const std::string& what) {
  throw std::invalid_argument("config field '" + field + "' " + what);
}

void expect_keys(const json& obj, const std::string& where,
                 const std::set<std::string>& allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key()))
      fail(where.empty() ? it.key() : where + "." + it.key(), "is not recognized");
  }
}

const json* opt(const json& obj, const std::string& key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

int get_int(const json& obj, const std::string& field, int fallback) {
  const json* v = opt(obj, field.substr(field.rfind('.') + 1));
  if (!v) return fallback;
  if (!v->is_number_integer()) fail(field, "must be an integer");
  return v->get<int>();
}

double get_num(const json& obj, const std::string& field, double fallback) {
  const json* v = opt(obj, field.substr(field.rfind('.') + 1));
  if (!v) return fallback;
  if (!v->is_number()) fail(field, "must be a number");
  return v->get<double>();
}

std::string get_str(const json& obj, const std::string& field, const std::string& fallback) {
  const json* v = opt(obj, field.substr(field.rfind('.') + 1));
  if (!v) return fallback;
  if (!v->is_string()) fail(field, "must be a string");
  return v->get<std::string>();
}

LrSchedule parse_lr(const json& v, const std::string& field) {
  LrSchedule lr;
  if (v.is_number()) {
    double rate = v.get<double>();
    if (!(rate > 0.0)) fail(field, "must be > 0");
    lr.steps = {{1 << 30, rate}};
    return lr;
  }
  if (!v.is_array() || v.empty()) fail(field, "must be a rate or a [[through_round, rate], ...] array");
  lr.steps.clear();
  int prev = 0;
  for (const json& e : v) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number())
      fail(field, "entries must be [through_round, rate] pairs");
    int through = e[0].get<int>();
    double rate = e[1].get<double>();
    if (through <= prev) fail(field, "through_rounds must be strictly increasing");
    if (!(rate > 0.0)) fail(field, "rates must be > 0");
    lr.steps.emplace_back(through, rate);
    prev = through;
  }
  return lr;
}

}  // namespace

std::string run_kind_name(RunKind k) {
  switch (k) {
    case RunKind::Federated: return "federated";
    case RunKind::ConvergenceLab: return "convergence-lab";
    case RunKind::EstimatorAudit: return "estimator-audit";
  }
  throw std::logic_error("unreachable run kind");
}

RunKind run_kind_from_name(const std::string& name) {
  if (name == "federated") return RunKind::Federated;
  if (name == "convergence-lab") return RunKind::ConvergenceLab;
  if (name == "estimator-audit") return RunKind::EstimatorAudit;
  throw std::invalid_argument("config field 'kind' has unknown value '" + name + "'");
}

void RunConfig::validate() const {
  if (schema_version != 1) fail("schema_version", "must be 1");
  if (output_dir.empty()) fail("output_dir", "must be a non-empty path");
  if (seeds.empty()) fail("seeds", "must be a non-empty array");
  std::set<uint64_t> distinct(seeds.begin(), seeds.end());
  if (distinct.size() != seeds.size()) fail("seeds", "must not contain duplicates");

  if (kind == RunKind::Federated) {
    strategy.validate();

    if (dataset.source == "idx") {
      if (dataset.train_images.empty()) fail("dataset.train_images", "is required for source=idx");
      if (dataset.train_labels.empty()) fail("dataset.train_labels", "is required for source=idx");
      if (dataset.test_images.empty()) fail("dataset.test_images", "is required for source=idx");
      if (dataset.test_labels.empty()) fail("dataset.test_labels", "is required for source=idx");
    } else if (dataset.source == "synth-digits" || dataset.source == "synth-gaussian") {
      if (dataset.train_count < 1) fail("dataset.train_count", "must be >= 1");
      if (dataset.test_count < 1) fail("dataset.test_count", "must be >= 1");
      if (dataset.source == "synth-digits") {
        if (!(dataset.noise_sigma >= 0.0)) fail("dataset.noise_sigma", "must be >= 0");
        if (dataset.max_shift < 0) fail("dataset.max_shift", "must be >= 0");
      } else {
        if (dataset.classes < 2) fail("dataset.classes", "must be >= 2");
        if (dataset.features < 1) fail("dataset.features", "must be >= 1");
      }
    } else {
      fail("dataset.source", "has unknown value '" + dataset.source + "'");
    }

    if (partition.clients < 1) fail("partition.clients", "must be >= 1");
    if (partition.scheme == "non-iid") {
      if (partition.classes_per_client < 1) fail("partition.classes_per_client", "must be >= 1");
    } else if (partition.scheme == "unbalanced") {
      if (partition.clients != 100)
        fail("partition.clients", "must be 100 for the unbalanced scheme");
    } else if (partition.scheme != "iid") {
      fail("partition.scheme", "has unknown value '" + partition.scheme + "'");
    }

    if (train.rounds < 1) fail("train.rounds", "must be >= 1");
    if (train.batch < 1) fail("train.batch", "must be >= 1");
    if (train.eval_batch < 1) fail("train.eval_batch", "must be >= 1");
    if (!(train.participation > 0.0) || train.participation > 1.0)
      fail("train.participation", "must lie in (0, 1]");
    if (int(train.participation * partition.clients) < 1)
      fail("train.participation", "leaves no uploader for " +
                                       std::to_string(partition.clients) + " clients");
  } else if (kind == RunKind::ConvergenceLab) {
    if (lab.problems < 1) fail("lab.problems", "must be >= 1");
    if (lab.min_n < 1 || lab.max_n < lab.min_n || lab.max_n > 20)
      fail("lab.min_n", "and lab.max_n must satisfy 1 <= min_n <= max_n <= 20");
    if (lab.steps < 2) fail("lab.steps", "must be >= 2");
    if (!(lab.pilot_eta_scale > 0.0)) fail("lab.pilot_eta_scale", "must be > 0");
    if (geometry_instances < 0) fail("lab.geometry_instances", "must be >= 0");
  } else {
    if (audit.m < 1.0 || audit.m != std::floor(audit.m))
      fail("audit.m", "must be a positive integer");
    if (audit.samples < 1) fail("audit.samples", "must be >= 1");
    if (audit.probe_trials < 1) fail("audit.probe_trials", "must be >= 1");
    if (audit.alpha_grid.empty()) fail("audit.alpha_grid", "must be non-empty");
    for (size_t i = 0; i < audit.alpha_grid.size(); ++i) {
      if (!(audit.alpha_grid[i] > 0.0)) fail("audit.alpha_grid", "entries must be > 0");
      if (i && audit.alpha_grid[i] <= audit.alpha_grid[i - 1])
        fail("audit.alpha_grid", "must be strictly increasing");
    }
    if (audit.cells.empty()) fail("audit.cells", "must be non-empty");
    for (const auto& [mu, sigma] : audit.cells) {
      if (std::abs(mu) >= 1.0) fail("audit.cells", "mu entries must lie in (-1, 1)");
      if (!(sigma > 0.0)) fail("audit.cells", "sigma entries must be > 0");
    }
  }
}

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw std::invalid_argument("config must be a JSON object");
  expect_keys(root, "", {"schema_version", "kind", "output_dir", "seeds", "dataset", "partition",
                         "strategy", "train", "lab", "audit"});

  RunConfig cfg;
  cfg.schema_version = get_int(root, "schema_version", cfg.schema_version);
  cfg.kind = run_kind_from_name(get_str(root, "kind", "federated"));
  cfg.output_dir = get_str(root, "output_dir", "");

  if (const json* s = opt(root, "seeds")) {
    if (!s->is_array() || s->empty()) fail("seeds", "must be a non-empty array");
    cfg.seeds.clear();
    for (const json& e : *s) {
      if (!e.is_number_integer() || e.get<int64_t>() < 0)
        fail("seeds", "must contain non-negative integers");
      cfg.seeds.push_back(e.get<uint64_t>());
    }
  }

  if (const json* d = opt(root, "dataset")) {
    if (!d->is_object()) fail("dataset", "must be an object");
    expect_keys(*d, "dataset",
                {"source", "train_images", "train_labels", "test_images", "test_labels",
                 "train_count", "test_count", "generator_seed", "noise_sigma", "max_shift",
                 "classes", "features"});
    cfg.dataset.source = get_str(*d, "dataset.source", cfg.dataset.source);
    cfg.dataset.train_images = get_str(*d, "dataset.train_images", "");
    cfg.dataset.train_labels = get_str(*d, "dataset.train_labels", "");
    cfg.dataset.test_images = get_str(*d, "dataset.test_images", "");
    cfg.dataset.test_labels = get_str(*d, "dataset.test_labels", "");
    cfg.dataset.train_count = get_int(*d, "dataset.train_count", cfg.dataset.train_count);
    cfg.dataset.test_count = get_int(*d, "dataset.test_count", cfg.dataset.test_count);
    if (const json* g = opt(*d, "generator_seed")) {
      if (!g->is_number_integer() || g->get<int64_t>() < 0)
        fail("dataset.generator_seed", "must be a non-negative integer");
      cfg.dataset.generator_seed = g->get<uint64_t>();
    }
    cfg.dataset.noise_sigma = get_num(*d, "dataset.noise_sigma", cfg.dataset.noise_sigma);
    cfg.dataset.max_shift = get_int(*d, "dataset.max_shift", cfg.dataset.max_shift);
    cfg.dataset.classes = get_int(*d, "dataset.classes", cfg.dataset.classes);
    cfg.dataset.features = get_int(*d, "dataset.features", cfg.dataset.features);
  }

  if (const json* p = opt(root, "partition")) {
    if (!p->is_object()) fail("partition", "must be an object");
    expect_keys(*p, "partition", {"scheme", "clients", "classes_per_client"});
    cfg.partition.scheme = get_str(*p, "partition.scheme", cfg.partition.scheme);
    cfg.partition.clients = get_int(*p, "partition.clients", cfg.partition.clients);
    cfg.partition.classes_per_client =
        get_int(*p, "partition.classes_per_client", cfg.partition.classes_per_client);
  }

  if (const json* s = opt(root, "strategy")) {
    if (!s->is_object()) fail("strategy", "must be an object");
    expect_keys(*s, "strategy", {"kind", "beta", "alpha", "hybrid_switch"});
    cfg.strategy.kind = kind_from_name(get_str(*s, "strategy.kind", kind_name(cfg.strategy.kind)));
    if (const json* b = opt(*s, "beta")) {
      if (!b->is_number()) fail("strategy.beta", "must be a number");
      cfg.strategy.beta = b->get<double>();
    }
    if (const json* a = opt(*s, "alpha")) {
      if (!a->is_number()) fail("strategy.alpha", "must be a number");
      cfg.strategy.alpha = a->get<double>();
    }
    if (const json* h = opt(*s, "hybrid_switch")) {
      if (!h->is_number_integer()) fail("strategy.hybrid_switch", "must be an integer");
      cfg.strategy.hybrid_switch = h->get<int>();
    }
  }

  if (const json* t = opt(root, "train")) {
    if (!t->is_object()) fail("train", "must be an object");
    expect_keys(*t, "train", {"rounds", "batch", "eval_batch", "participation", "lr"});
    cfg.train.rounds = get_int(*t, "train.rounds", cfg.train.rounds);
    cfg.train.batch = get_int(*t, "train.batch", cfg.train.batch);
    cfg.train.eval_batch = get_int(*t, "train.eval_batch", cfg.train.eval_batch);
    cfg.train.participation = get_num(*t, "train.participation", cfg.train.participation);
    if (const json* lr = opt(*t, "lr")) cfg.train.lr = parse_lr(*lr, "train.lr");
  }

  if (const json* l = opt(root, "lab")) {
    if (!l->is_object()) fail("lab", "must be an object");
    expect_keys(*l, "lab",
                {"problems", "min_n", "max_n", "steps", "pilot_eta_scale", "geometry_instances"});
    cfg.lab.problems = get_int(*l, "lab.problems", cfg.lab.problems);
    cfg.lab.min_n = get_int(*l, "lab.min_n", cfg.lab.min_n);
    cfg.lab.max_n = get_int(*l, "lab.max_n", cfg.lab.max_n);
    cfg.lab.steps = get_int(*l, "lab.steps", cfg.lab.steps);
    cfg.lab.pilot_eta_scale = get_num(*l, "lab.pilot_eta_scale", cfg.lab.pilot_eta_scale);
    cfg.geometry_instances = get_int(*l, "lab.geometry_instances", cfg.geometry_instances);
  }

  if (const json* a = opt(root, "audit")) {
    if (!a->is_object()) fail("audit", "must be an object");
    expect_keys(*a, "audit", {"m", "samples", "probe_trials", "alpha_grid", "cells"});
    cfg.audit.m = get_num(*a, "audit.m", cfg.audit.m);
    if (const json* s = opt(*a, "samples")) {
      if (!s->is_number_integer()) fail("audit.samples", "must be an integer");
      cfg.audit.samples = s->get<long long>();
    }
    cfg.audit.probe_trials = get_int(*a, "audit.probe_trials", cfg.audit.probe_trials);
    if (const json* g = opt(*a, "alpha_grid")) {
      if (!g->is_array()) fail("audit.alpha_grid", "must be an array of numbers");
      cfg.audit.alpha_grid.clear();
      for (const json& e : *g) {
        if (!e.is_number()) fail("audit.alpha_grid", "must be an array of numbers");
        cfg.audit.alpha_grid.push_back(e.get<double>());
      }
    }
    if (const json* c = opt(*a, "cells")) {
      if (!c->is_array()) fail("audit.cells", "must be an array of [mu, sigma] pairs");
      cfg.audit.cells.clear();
      for (const json& e : *c) {
        if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number())
          fail("audit.cells", "must be an array of [mu, sigma] pairs");
        cfg.audit.cells.emplace_back(e[0].get<double>(), e[1].get<double>());
      }
    }
  }

  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string resolved_config_json(const RunConfig& cfg) {
  json root;
  root["schema_version"] = cfg.schema_version;
  root["kind"] = run_kind_name(cfg.kind);
  root["output_dir"] = cfg.output_dir;
  root["seeds"] = cfg.seeds;

  if (cfg.kind == RunKind::Federated) {
    json d;
    d["source"] = cfg.dataset.source;
    if (cfg.dataset.source == "idx") {
      d["train_images"] = cfg.dataset.train_images;
      d["train_labels"] = cfg.dataset.train_labels;
      d["test_images"] = cfg.dataset.test_images;
      d["test_labels"] = cfg.dataset.test_labels;
    } else {
      d["train_count"] = cfg.dataset.train_count;
      d["test_count"] = cfg.dataset.test_count;
      d["generator_seed"] = cfg.dataset.generator_seed;
      if (cfg.dataset.source == "synth-digits") {
        d["noise_sigma"] = cfg.dataset.noise_sigma;
        d["max_shift"] = cfg.dataset.max_shift;
      } else {
        d["classes"] = cfg.dataset.classes;
        d["features"] = cfg.dataset.features;
      }
    }
    root["dataset"] = std::move(d);

    json p;
    p["scheme"] = cfg.partition.scheme;
    p["clients"] = cfg.partition.clients;
    if (cfg.partition.scheme == "non-iid")
      p["classes_per_client"] = cfg.partition.classes_per_client;
    root["partition"] = std::move(p);

    json s;
    s["kind"] = kind_name(cfg.strategy.kind);
    if (cfg.strategy.beta) s["beta"] = *cfg.strategy.beta;
    if (cfg.strategy.alpha) s["alpha"] = *cfg.strategy.alpha;
    if (cfg.strategy.hybrid_switch) s["hybrid_switch"] = *cfg.strategy.hybrid_switch;
    root["strategy"] = std::move(s);

    json t;
    t["rounds"] = cfg.train.rounds;
    t["batch"] = cfg.train.batch;
    t["eval_batch"] = cfg.train.eval_batch;
    t["participation"] = cfg.train.participation;
    json lr = json::array();
    for (const auto& [through, rate] : cfg.train.lr.steps)
      lr.push_back(json::array({through, rate}));
    t["lr"] = std::move(lr);
    root["train"] = std::move(t);
  } else if (cfg.kind == RunKind::ConvergenceLab) {
    json l;
    l["problems"] = cfg.lab.problems;
    l["min_n"] = cfg.lab.min_n;
    l["max_n"] = cfg.lab.max_n;
    l["steps"] = cfg.lab.steps;
    l["pilot_eta_scale"] = cfg.lab.pilot_eta_scale;
    l["geometry_instances"] = cfg.geometry_instances;
    root["lab"] = std::move(l);
  } else {
    json a;
    a["m"] = cfg.audit.m;
    a["samples"] = cfg.audit.samples;
    a["probe_trials"] = cfg.audit.probe_trials;
    a["alpha_grid"] = cfg.audit.alpha_grid;
    json cells = json::array();
    for (const auto& [mu, sigma] : cfg.audit.cells)
      cells.push_back(json::array({mu, sigma}));
    a["cells"] = std::move(cells);
    root["audit"] = std::move(a);
  }
  return root.dump(2) + "\n";
}

}  // namespace bifl
