#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "bifl/federation.hpp"

using namespace bifl;

namespace {

// dense 16-8 (binary) -> batchnorm -> tanh -> dense 8-4 (binary) -> softmax
Model tiny_net(uint64_t seed, bool binarized = true) {
  Rng init = Rng::stream(seed, "net-init");
  Model m;
  m.layers.push_back(std::make_unique<DenseLayer>(16, 8, binarized, init));
  m.layers.push_back(std::make_unique<BatchNormLayer>(8));
  m.layers.push_back(std::make_unique<TanhLayer>());
  m.layers.push_back(std::make_unique<DenseLayer>(8, 4, binarized, init));
  m.layers.push_back(std::make_unique<SoftmaxLayer>());
  return m;
}

Dataset blobs(uint64_t seed = 7) { return synth_gaussian(4, 50, 16, seed); }

Partition iid_parts(const Dataset& ds, int m, uint64_t seed = 9) {
  Rng rng = Rng::stream(seed, "parts");
  return partition_iid(ds.labels, ds.classes, m, rng);
}

FederationConfig base_cfg(StrategyConfig s, uint64_t seed = 3) {
  FederationConfig cfg;
  cfg.strategy = s;
  cfg.lr = LrSchedule{{{1 << 30, 0.01}}};
  cfg.batch = 16;
  cfg.eval_batch = 64;
  cfg.seed = seed;
  return cfg;
}

StrategyConfig mk(StrategyKind k, double beta = -1, double alpha = -1, int t = -1) {
  StrategyConfig s;
  s.kind = k;
  if (beta >= 0) s.beta = beta;
  if (alpha >= 0) s.alpha = alpha;
  if (t >= 0) s.hybrid_switch = t;
  return s;
}

}  // namespace

TEST_CASE("strategy names round-trip") {
  for (auto k : {StrategyKind::FaReal, StrategyKind::Full, StrategyKind::UpOnly,
                 StrategyKind::UpDown, StrategyKind::BiML})
    CHECK(kind_from_name(kind_name(k)) == k);
  CHECK_THROWS_AS(kind_from_name("federated-dreams"), std::runtime_error);
}

TEST_CASE("strategy config rules") {
  CHECK_NOTHROW(mk(StrategyKind::Full).validate());
  CHECK_NOTHROW(mk(StrategyKind::FaReal).validate());
  CHECK_NOTHROW(mk(StrategyKind::UpOnly, 0.3).validate());
  CHECK_NOTHROW(mk(StrategyKind::UpDown, 1.0).validate());
  CHECK_NOTHROW(mk(StrategyKind::BiML, -1, 1.25).validate());
  CHECK_NOTHROW(mk(StrategyKind::BiML, -1, 1.25, 20).validate());

  CHECK_THROWS_WITH_AS(mk(StrategyKind::UpOnly).validate(), doctest::Contains("requires beta"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(mk(StrategyKind::UpDown, 1.2).validate(), doctest::Contains("[0, 1]"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(mk(StrategyKind::BiML, 0.3, 1.25).validate(),
                       doctest::Contains("beta is not a biml parameter"), std::runtime_error);
  CHECK_THROWS_WITH_AS(mk(StrategyKind::Full, 0.3).validate(),
                       doctest::Contains("beta is not a"), std::runtime_error);
  CHECK_THROWS_WITH_AS(mk(StrategyKind::BiML).validate(), doctest::Contains("requires alpha"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(mk(StrategyKind::BiML, -1, 1.0).validate(),
                       doctest::Contains("alpha must be > 1"), std::runtime_error);
  CHECK_THROWS_WITH_AS(mk(StrategyKind::Full, -1, 1.25).validate(),
                       doctest::Contains("alpha is not a"), std::runtime_error);
  CHECK_THROWS_WITH_AS(mk(StrategyKind::UpOnly, 0.3, -1, 10).validate(),
                       doctest::Contains("only available with biml"), std::runtime_error);
  CHECK_THROWS_WITH_AS(mk(StrategyKind::BiML, -1, 1.25, 0).validate(),
                       doctest::Contains(">= 1"), std::runtime_error);
}

TEST_CASE("learning-rate schedule picks the covering step") {
  LrSchedule lr{{{30, 0.005}, {60, 0.002}}};
  CHECK(lr.lr_at(1) == 0.005);
  CHECK(lr.lr_at(30) == 0.005);
  CHECK(lr.lr_at(31) == 0.002);
  CHECK(lr.lr_at(60) == 0.002);
  CHECK(lr.lr_at(61) == 0.002);
}

TEST_CASE("weighted mean: anchors, lattice exactness, passthrough") {
  CHECK(aggregate_weighted_mean({{1.0}, {-1.0}}, {1, 1})[0] == 0.0);
  CHECK(aggregate_weighted_mean({{1.0}, {-1.0}}, {3, 1})[0] == 0.5);

  SUBCASE("tally round-trip at one hundred clients") {
    std::vector<std::vector<double>> ups;
    for (int i = 0; i < 100; ++i) ups.push_back({i < 75 ? 1.0 : -1.0});
    std::vector<long long> sizes(100, 60);
    double w = aggregate_weighted_mean(ups, sizes)[0];
    CHECK(w == 0.5);
    CHECK(mlpu::count_positive(w, 100.0) == 75.0);
  }
  SUBCASE("equal sizes equal the arithmetic mean") {
    std::vector<std::vector<double>> ups{{0.3, -0.7}, {0.5, 0.1}, {-0.2, 0.4}};
    auto out = aggregate_weighted_mean(ups, {5, 5, 5});
    CHECK(out[0] == doctest::Approx((0.3 + 0.5 - 0.2) / 3).epsilon(1e-15));
    CHECK(out[1] == doctest::Approx((-0.7 + 0.1 + 0.4) / 3).epsilon(1e-15));
  }
  SUBCASE("binary uploads with equal sizes sit exactly on the lattice") {
    int p = 10;
    Rng rng(4);
    std::vector<std::vector<double>> ups;
    for (int i = 0; i < p; ++i) {
      std::vector<double> u(37);
      for (auto& x : u) x = rng.uniform() < 0.5 ? -1.0 : 1.0;
      ups.push_back(u);
    }
    auto agg = aggregate_weighted_mean(ups, std::vector<long long>(p, 20));
    for (double w : agg) {
      int k = int(std::lround((w + 1.0) * p / 2.0));
      CHECK(w == (2.0 * k - p) / p);  // exact, not approximate
    }
  }
  SUBCASE("single upload passes through bit-exactly") {
    std::vector<double> u{0.1 + 0.2, -1.0 / 3.0, 5e-324};
    auto out = aggregate_weighted_mean({u}, {7});
    for (size_t i = 0; i < u.size(); ++i) CHECK(out[i] == u[i]);
  }
  CHECK_THROWS_WITH_AS(aggregate_weighted_mean({{1.0}, {1.0, 2.0}}, {1, 1}),
                       doctest::Contains("shape"), std::runtime_error);
  CHECK_THROWS_AS(aggregate_weighted_mean({{1.0}}, {0}), std::runtime_error);
  CHECK_THROWS_AS(aggregate_weighted_mean({}, {}), std::runtime_error);
}

TEST_CASE("pack and set cover every exchanged view") {
  Model m = tiny_net(1);
  auto w = pack_weights(m, false);
  CHECK(w.size() == 16 * 8 + 8 * 4);
  CHECK(w.size() == m.weight_count_total());
  auto ws = pack_weights(m, true);
  for (double x : ws) CHECK(std::abs(x) == 1.0);

  std::vector<double> repl(w.size());
  for (size_t i = 0; i < repl.size(); ++i) repl[i] = 0.001 * double(i % 7) - 0.003;
  set_weights(m, repl);
  CHECK(pack_weights(m, false) == repl);

  auto sc = pack_scales(m);
  CHECK(sc == std::vector<double>{1.0, 1.0});
  set_scales(m, {0.5, 2.0});
  CHECK(pack_scales(m) == std::vector<double>{0.5, 2.0});

  CHECK_THROWS_AS(set_weights(m, {1.0}), std::runtime_error);
  CHECK_THROWS_AS(set_scales(m, {1.0}), std::runtime_error);
}

TEST_CASE("download folds") {
  Model m = tiny_net(2);
  size_t n = m.weight_count_total();

  SUBCASE("full replacement clamps and re-derives signs") {
    std::vector<double> wt(n);
    for (size_t i = 0; i < n; ++i) wt[i] = -1.5 + 3.0 * double(i) / double(n - 1);
    update_full(m, wt);
    auto wb = pack_weights(m, false);
    auto bs = pack_weights(m, true);
    for (size_t i = 0; i < n; ++i) {
      CHECK(wb[i] == std::clamp(wt[i], -1.0, 1.0));
      CHECK(bs[i] == (wb[i] > 0 ? 1.0 : -1.0));
    }
  }
  SUBCASE("mixing endpoints and arithmetic") {
    auto before = pack_weights(m, false);
    std::vector<double> wt(n, -0.25);
    update_mix(m, wt, 0.0);
    CHECK(pack_weights(m, false) == before);  // beta 0 is the identity

    update_mix(m, wt, 1.0);
    auto after = pack_weights(m, false);
    for (double x : after) CHECK(x == -1.0);  // beta 1 is Sign of the aggregate

    Model h = tiny_net(2);
    std::vector<double> w1(n, 0.5);
    set_weights(h, w1);
    update_mix(h, wt, 0.3);
    auto mixed = pack_weights(h, false);
    for (double x : mixed) CHECK(x == doctest::Approx(0.05).epsilon(1e-12));
    auto signs = pack_weights(h, true);
    for (double x : signs) CHECK(x == 1.0);  // 0.05 > 0

    CHECK_THROWS_AS(update_mix(h, wt, 1.5), std::runtime_error);
  }
  SUBCASE("estimator fold matches the scalar pipeline") {
    double m_virtual = 100.0, alpha = 1.25;
    auto fit = mlpu::fit_curve(m_virtual, true);
    Model h = tiny_net(3);
    std::vector<double> local = pack_weights(h, false);
    std::vector<double> wt(n);
    Rng rng(11);
    for (size_t i = 0; i < n; ++i) {
      // a voter's own sign is part of the tally, so condition on it
      int k = local[i] > 0 ? 1 + int(rng.uniform_int(100)) : int(rng.uniform_int(100));
      wt[i] = (2.0 * k - 100.0) / 100.0;
    }
    auto st = update_biml(h, wt, m_virtual, true, alpha, &fit);
    CHECK(st.params == n);
    auto got = pack_weights(h, false);
    for (size_t i = 0; i < n; ++i) {
      double mp = mlpu::count_positive(wt[i], m_virtual);
      double u = mlpu::estimate_u_fast(fit, mp, mlpu::sign_of(local[i]));
      CHECK(got[i] == mlpu::update_weight(mlpu::mu_hat(u, local[i]), alpha));
      CHECK(std::abs(got[i]) <= 1.0);
    }
    auto wrong = mlpu::fit_curve(50.0, true);
    CHECK_THROWS_WITH_AS(update_biml(h, wt, m_virtual, true, alpha, &wrong),
                         doctest::Contains("does not match"), std::runtime_error);
  }
  SUBCASE("estimator fold without a fit runs the exact solver") {
    Model h = tiny_net(4);
    std::vector<double> local = pack_weights(h, false);
    // one voter: the aggregate is exactly this client's own sign
    std::vector<double> wt(n);
    for (size_t i = 0; i < n; ++i) wt[i] = local[i] > 0 ? 1.0 : -1.0;
    auto st = update_biml(h, wt, 1.0, true, 1.25, nullptr);
    CHECK(st.fallbacks == 0);
    auto got = pack_weights(h, false);
    for (size_t i = 0; i < n; ++i) {
      double mp = mlpu::count_positive(wt[i], 1.0);
      double u = mlpu::solve_u(1.0, mp, mlpu::sign_of(local[i]), 1e-6, true);
      CHECK(got[i] == mlpu::update_weight(mlpu::mu_hat(u, local[i]), 1.25));
    }
  }
}

TEST_CASE("communication charges match the strategy table") {
  size_t n = 50816;
  int l = 2;

  auto fa = ledger_charge(StrategyKind::FaReal, n, l, 10, 10, true);
  CHECK(fa.uplink_unit == 32 * n);
  CHECK(fa.downlink_unit == 32 * n);
  CHECK(fa.uplink_unit == 1626112);

  auto full = ledger_charge(StrategyKind::Full, n, l, 10, 10, true);
  CHECK(full.uplink_unit == 32 * n);
  CHECK(full.downlink_unit == 32 * n);

  auto biml = ledger_charge(StrategyKind::BiML, n, l, 10, 10, true);
  CHECK(biml.uplink_unit == n + 32 * size_t(l));
  CHECK(biml.uplink_unit == 50880);
  CHECK(biml.downlink_unit == 4 * n);  // ceil(log2(11)) = 4
  CHECK(biml.uplink_bits == 10 * biml.uplink_unit);
  CHECK(biml.downlink_bits == 10 * biml.downlink_unit);

  auto updown = ledger_charge(StrategyKind::UpDown, n, l, 10, 10, true);
  CHECK(updown.uplink_unit == n + 32 * size_t(l));
  CHECK(updown.downlink_unit == n);  // one bit per parameter

  SUBCASE("lattice index width at one hundred uploaders") {
    auto c = ledger_charge(StrategyKind::BiML, 82250, 4, 100, 100, true);
    CHECK(c.downlink_unit == 7 * 82250);  // ceil(log2(101)) = 7
    auto uneven = ledger_charge(StrategyKind::BiML, 82250, 4, 100, 100, false);
    CHECK(uneven.downlink_unit == 32 * 82250);
  }
  SUBCASE("thirty-two-fold uplink reduction, exactly, without scales") {
    auto a = ledger_charge(StrategyKind::FaReal, 1000000, 0, 100, 100, true);
    auto b = ledger_charge(StrategyKind::BiML, 1000000, 0, 100, 100, true);
    CHECK(a.uplink_unit == 32 * b.uplink_unit);
  }
  SUBCASE("published-scale upload volumes") {
    // 82250 weights over 4 scale layers, 100 of 100 clients uploading
    auto a = ledger_charge(StrategyKind::FaReal, 82250, 4, 100, 100, true);
    auto b = ledger_charge(StrategyKind::BiML, 82250, 4, 100, 100, true);
    double fa_mb = double(a.uplink_bits) / 8e6;
    double bi_mb = double(b.uplink_bits) / 8e6;
    CHECK(fa_mb == doctest::Approx(32.9).epsilon(0.01));
    CHECK(bi_mb == doctest::Approx(1.03).epsilon(0.01));
    double ratio = fa_mb / bi_mb;
    CHECK(std::abs(ratio - 32.9) / 32.9 < 0.05);
  }
  SUBCASE("partial participation scales only the uplink") {
    auto c = ledger_charge(StrategyKind::UpOnly, n, l, 10, 5, true);
    CHECK(c.uplink_bits == 5 * c.uplink_unit);
    CHECK(c.downlink_bits == 10 * c.downlink_unit);
    CHECK(c.downlink_unit == 3 * n);  // ceil(log2(6)) = 3
  }
  CHECK_THROWS_AS(ledger_charge(StrategyKind::Full, n, l, 10, 11, true), std::runtime_error);
  CHECK_THROWS_AS(ledger_charge(StrategyKind::Full, n, l, 10, 0, true), std::runtime_error);

  SUBCASE("ledger totals are running sums") {
    CommLedger led;
    auto c1 = ledger_charge(StrategyKind::BiML, n, l, 10, 10, true);
    led.add(c1);
    led.add(c1);
    CHECK(led.uplink_total == 2 * c1.uplink_bits);
    CHECK(led.downlink_total == 2 * c1.downlink_bits);
  }
}

TEST_CASE("single-client full exchange tracks centralized training bit for bit") {
  Dataset ds = blobs();
  Partition parts = iid_parts(ds, 1);
  REQUIRE(parts.shards[0].size() == 200);

  FederationConfig cfg = base_cfg(mk(StrategyKind::Full), 21);
  Model proto = tiny_net(5);
  FederatedRun run(proto, ds, parts, ds, cfg);

  Model central = proto;
  Adam opt;
  for (int t = 1; t <= 3; ++t) {
    run.run_round();

    Rng sh = Rng::stream(cfg.seed, "local-shuffle", 0, uint64_t(t));
    auto order = sh.permutation(200);
    for (size_t lo = 0; lo < order.size(); lo += 16) {
      size_t hi = std::min(order.size(), lo + 16);
      std::vector<int> rows(order.begin() + lo, order.begin() + hi);
      std::vector<int> labels;
      for (int r : rows) labels.push_back(ds.labels[size_t(r)]);
      Tensor x({int(rows.size()), 16});
      for (size_t i = 0; i < rows.size(); ++i)
        for (int j = 0; j < 16; ++j) x.v[i * 16 + j] = ds.images.v[size_t(rows[i]) * 16 + j];
      train_batch(central, opt, x, labels, 0.01, true);
    }

    auto fed_w = pack_weights(run.client(0).model, false);
    auto cen_w = pack_weights(central, false);
    REQUIRE(fed_w.size() == cen_w.size());
    for (size_t i = 0; i < fed_w.size(); ++i) REQUIRE(fed_w[i] == cen_w[i]);
    CHECK(pack_weights(run.client(0).model, true) == pack_weights(central, true));
    CHECK(run.aggregate_weights() == pack_weights(central, false));
  }
}

TEST_CASE("single-client sign uploads keep the binary weights") {
  Dataset ds = blobs();
  Partition parts = iid_parts(ds, 1);

  SUBCASE("estimator strategy") {
    FederationConfig cfg = base_cfg(mk(StrategyKind::BiML, -1, 1.25), 22);
    Model proto = tiny_net(6);
    FederatedRun run(proto, ds, parts, ds, cfg);
    for (int t = 0; t < 2; ++t) {
      run.run_round();
      for (double w : run.aggregate_weights()) {
        CHECK(std::abs(w) == 1.0);
        double mp = mlpu::count_positive(w, 1.0);
        CHECK((mp == 0.0 || mp == 1.0));  // single-voter tally
      }
      // the download may rescale W-bar but never flips a sign the client voted
      auto signs = pack_weights(run.client(0).model, true);
      CHECK(signs == run.aggregate_weights());
    }
  }
  SUBCASE("full-mix strategy equals centralized signs after round one") {
    FederationConfig cfg = base_cfg(mk(StrategyKind::UpOnly, 1.0), 22);
    Model proto = tiny_net(6);
    FederatedRun run(proto, ds, parts, ds, cfg);
    run.run_round();

    Model central = proto;
    Adam opt;
    Rng sh = Rng::stream(cfg.seed, "local-shuffle", 0, 1);
    auto order = sh.permutation(200);
    for (size_t lo = 0; lo < order.size(); lo += 16) {
      size_t hi = std::min(order.size(), lo + 16);
      std::vector<int> labels;
      Tensor x({int(hi - lo), 16});
      for (size_t i = lo; i < hi; ++i) {
        labels.push_back(ds.labels[size_t(order[i])]);
        for (int j = 0; j < 16; ++j) x.v[(i - lo) * 16 + j] = ds.images.v[size_t(order[i]) * 16 + j];
      }
      train_batch(central, opt, x, labels, 0.01, true);
    }
    CHECK(pack_weights(run.client(0).model, true) == pack_weights(central, true));
  }
}

TEST_CASE("sign-up strategies with beta one differ only in the ledger") {
  Dataset ds = blobs();
  Partition parts = iid_parts(ds, 4);

  FederationConfig cfg_a = base_cfg(mk(StrategyKind::UpOnly, 1.0), 31);
  FederationConfig cfg_b = base_cfg(mk(StrategyKind::UpDown, 1.0), 31);
  Model proto = tiny_net(7);
  FederatedRun a(proto, ds, parts, ds, cfg_a);
  FederatedRun b(proto, ds, parts, ds, cfg_b);
  for (int t = 0; t < 3; ++t) {
    auto ma = a.run_round();
    auto mb = b.run_round();
    CHECK(ma.test_accuracy == mb.test_accuracy);
    CHECK(ma.test_loss == mb.test_loss);
    CHECK(ma.uplink_bits == mb.uplink_bits);
    CHECK(ma.downlink_bits > mb.downlink_bits);  // signs cost 1 bit, lattice 3
  }
  for (size_t i = 0; i < 4; ++i) {
    CHECK(pack_weights(a.client(i).model, false) == pack_weights(b.client(i).model, false));
    CHECK(pack_scales(a.client(i).model) == pack_scales(b.client(i).model));
  }
}

TEST_CASE("equal-gradient clients leave the aggregate at their common weights") {
  Dataset ds = blobs();
  Partition parts;
  parts.shards = {{5}, {5}};  // same single row: identical gradients
  FederationConfig cfg = base_cfg(mk(StrategyKind::FaReal), 33);
  cfg.batch = 1;
  Model proto = tiny_net(8, false);
  FederatedRun run(proto, ds, parts, ds, cfg);
  run.run_round();
  auto w0 = pack_weights(run.client(0).model, false);
  auto w1 = pack_weights(run.client(1).model, false);
  CHECK(w0 == w1);
  CHECK(run.aggregate_weights() == w0);
}

TEST_CASE("same seed, same trace; the engine is replayable") {
  Dataset ds = blobs();
  Partition parts = iid_parts(ds, 4);
  FederationConfig cfg = base_cfg(mk(StrategyKind::BiML, -1, 1.25), 35);
  cfg.participation = 0.75;  // 3 of 4 upload
  Model proto = tiny_net(9);

  FederatedRun r1(proto, ds, parts, ds, cfg);
  FederatedRun r2(proto, ds, parts, ds, cfg);
  for (int t = 0; t < 3; ++t) {
    auto m1 = r1.run_round();
    auto m2 = r2.run_round();
    CHECK(m1.test_accuracy == m2.test_accuracy);
    CHECK(m1.test_loss == m2.test_loss);
    CHECK(m1.uplink_bits_cum == m2.uplink_bits_cum);
    CHECK(r1.last_participants() == r2.last_participants());
  }
  for (size_t i = 0; i < 4; ++i)
    CHECK(pack_weights(r1.client(i).model, false) == pack_weights(r2.client(i).model, false));
}

TEST_CASE("round mechanics: participants, lattice, downloads for everyone") {
  Dataset ds = blobs();
  Partition parts = iid_parts(ds, 4);
  FederationConfig cfg = base_cfg(mk(StrategyKind::UpOnly, 1.0), 36);
  cfg.participation = 0.5;
  Model proto = tiny_net(10);
  FederatedRun run(proto, ds, parts, ds, cfg);

  auto m1 = run.run_round();
  CHECK(m1.participants == 2);
  auto picked = run.last_participants();
  REQUIRE(picked.size() == 2);
  CHECK(picked[0] < picked[1]);
  CHECK(picked[0] >= 0);
  CHECK(picked[1] < 4);

  // every aggregate element on the 3-point lattice of 2 uploaders
  for (double w : run.aggregate_weights()) {
    int k = int(std::lround((w + 1.0) * 2 / 2.0));
    CHECK(w == (2.0 * k - 2) / 2);
  }
  // beta=1: every client's W-bar is the broadcast sign, participant or not
  for (size_t i = 0; i < 4; ++i) {
    auto wb = pack_weights(run.client(i).model, false);
    for (size_t j = 0; j < wb.size(); ++j)
      CHECK(wb[j] == (run.aggregate_weights()[j] > 0 ? 1.0 : -1.0));
  }
  // scales broadcast to everyone
  for (size_t i = 0; i < 4; ++i) CHECK(pack_scales(run.client(i).model) == run.aggregate_scales());
}

TEST_CASE("estimator strategy under partial participation uses uploader counts") {
  Dataset ds = blobs();
  Partition parts = iid_parts(ds, 10);  // 20 rows per shard
  FederationConfig cfg = base_cfg(mk(StrategyKind::BiML, -1, 1.25), 37);
  cfg.participation = 0.5;
  Model proto = tiny_net(11);
  FederatedRun run(proto, ds, parts, ds, cfg);
  run.run_round();
  CHECK(run.last_participants().size() == 5);
  // fits exist for exactly (5, voted) and (5, not voted)
  const auto& fits = run.curve_fits();
  CHECK(fits.size() == 2);
  CHECK(fits.count({5.0, true}) == 1);
  CHECK(fits.count({5.0, false}) == 1);
  // aggregate on the 6-point lattice, tallies integral
  for (double w : run.aggregate_weights()) {
    double mp = mlpu::count_positive(w, 5.0);
    CHECK(mp == std::floor(mp + 0.5));
  }
}

TEST_CASE("uneven shards run the virtual client counts") {
  Dataset ds = blobs();
  Partition parts;
  parts.shards = {{}, {}, {}};
  // disjoint shards of sizes 100, 50, 50
  for (int i = 0; i < 100; ++i) parts.shards[0].push_back(i);
  for (int i = 100; i < 150; ++i) parts.shards[1].push_back(i);
  for (int i = 150; i < 200; ++i) parts.shards[2].push_back(i);

  FederationConfig cfg = base_cfg(mk(StrategyKind::BiML, -1, 1.25), 38);
  Model proto = tiny_net(12);
  FederatedRun run(proto, ds, parts, ds, cfg);
  CHECK_FALSE(run.equal_shards());
  CHECK(run.client(0).virtual_m == 2.0);
  CHECK(run.client(1).virtual_m == 4.0);

  run.run_round();
  // client 0 sees m=2 (no fit, m <= 3); clients 1 and 2 see m=4 (fitted)
  const auto& fits = run.curve_fits();
  CHECK(fits.count({4.0, true}) == 1);
  CHECK(fits.count({2.0, true}) == 0);
  // unequal shards pay full-precision downlink
  CHECK(run.ledger().last.downlink_unit == 32 * proto.weight_count_total());
}

TEST_CASE("hybrid runs flip to real exchange after the switch round") {
  Dataset ds = blobs();
  Partition parts = iid_parts(ds, 2);
  FederationConfig cfg = base_cfg(mk(StrategyKind::BiML, -1, 1.25, 2), 39);
  Model proto = tiny_net(13);
  FederatedRun run(proto, ds, parts, ds, cfg);

  CHECK(run.active_kind(1) == StrategyKind::BiML);
  CHECK(run.active_kind(2) == StrategyKind::BiML);
  CHECK(run.active_kind(3) == StrategyKind::FaReal);

  auto m1 = run.run_round();
  auto m2 = run.run_round();
  CHECK(m1.active == StrategyKind::BiML);
  CHECK(m2.active == StrategyKind::BiML);
  size_t n = proto.weight_count_total();
  CHECK(m2.uplink_bits == 2 * (n + 32 * 2));

  auto m3 = run.run_round();
  CHECK(m3.active == StrategyKind::FaReal);
  CHECK(m3.uplink_bits == 2 * 32 * n);
  for (size_t i = 0; i < 2; ++i) {
    for (auto& l : run.client(i).model.layers)
      if (l->weight_count() > 0) CHECK_FALSE(l->binarized());
  }
  // real weights may now leave the unit interval; training keeps running
  auto m4 = run.run_round();
  CHECK(m4.active == StrategyKind::FaReal);
  CHECK(std::isfinite(m4.test_loss));
}

TEST_CASE("consensus evaluation model mirrors the aggregate") {
  Dataset ds = blobs();
  Partition parts = iid_parts(ds, 4);
  FederationConfig cfg = base_cfg(mk(StrategyKind::Full), 40);
  Model proto = tiny_net(14);
  FederatedRun run(proto, ds, parts, ds, cfg);
  run.run_round();

  Model& ev = run.eval_model();
  CHECK(pack_weights(ev, false) == run.aggregate_weights());
  CHECK(pack_scales(ev) == run.aggregate_scales());
  auto signs = pack_weights(ev, true);
  for (size_t j = 0; j < signs.size(); ++j)
    CHECK(signs[j] == (run.aggregate_weights()[j] > 0 ? 1.0 : -1.0));

  // batchnorm state is the size-weighted client average
  auto* evbn = dynamic_cast<BatchNormLayer*>(ev.layers[1].get());
  REQUIRE(evbn != nullptr);
  double total = 0.0;
  for (size_t i = 0; i < 4; ++i) total += double(run.client(i).rows.size());
  for (size_t j = 0; j < size_t(evbn->features); ++j) {
    double mean = 0.0, var = 0.0, gam = 0.0, bet = 0.0;
    for (size_t i = 0; i < 4; ++i) {
      auto* bn = dynamic_cast<BatchNormLayer*>(run.client(i).model.layers[1].get());
      double w = double(run.client(i).rows.size()) / total;
      mean += w * bn->run_mean[j];
      var += w * bn->run_var[j];
      gam += w * bn->gamma[j];
      bet += w * bn->beta[j];
    }
    CHECK(evbn->run_mean[j] == mean);
    CHECK(evbn->run_var[j] == var);
    CHECK(evbn->gamma[j] == gam);
    CHECK(evbn->beta[j] == bet);
  }
}

TEST_CASE("a short run learns the blob task") {
  Dataset ds = blobs();
  Partition parts = iid_parts(ds, 4);
  FederationConfig cfg = base_cfg(mk(StrategyKind::Full), 41);
  Model proto = tiny_net(15);
  FederatedRun run(proto, ds, parts, ds, cfg);
  auto trace = run_federation(run, 8);
  REQUIRE(trace.size() == 8);
  for (size_t t = 1; t < trace.size(); ++t) {
    CHECK(trace[t].round == int(t) + 1);
    CHECK(trace[t].uplink_bits_cum == trace[t - 1].uplink_bits_cum + trace[t].uplink_bits);
    CHECK(trace[t].downlink_bits_cum == trace[t - 1].downlink_bits_cum + trace[t].downlink_bits);
  }
  CHECK(trace.back().test_accuracy > 40.0);  // 4 classes, chance is 25
  CHECK(std::isfinite(trace.back().test_loss));
}

TEST_CASE("construction rejects inconsistent setups") {
  Dataset ds = blobs();
  Partition parts = iid_parts(ds, 4);
  Model bin = tiny_net(16, true);
  Model real = tiny_net(16, false);

  auto cfg = base_cfg(mk(StrategyKind::FaReal));
  CHECK_THROWS_WITH_AS(FederatedRun(bin, ds, parts, ds, cfg),
                       doctest::Contains("real-valued model"), std::runtime_error);
  auto cfg2 = base_cfg(mk(StrategyKind::Full));
  CHECK_THROWS_WITH_AS(FederatedRun(real, ds, parts, ds, cfg2),
                       doctest::Contains("binarized model"), std::runtime_error);

  auto cfg3 = base_cfg(mk(StrategyKind::Full));
  cfg3.participation = 0.2;  // floor(0.8) = 0 uploaders
  CHECK_THROWS_WITH_AS(FederatedRun(bin, ds, parts, ds, cfg3),
                       doctest::Contains("no uploader"), std::runtime_error);

  auto cfg4 = base_cfg(mk(StrategyKind::Full));
  cfg4.participation = 1.5;
  CHECK_THROWS_AS(FederatedRun(bin, ds, parts, ds, cfg4), std::runtime_error);

  Partition bad;
  bad.shards = {{0, 1}, {}};
  auto cfg5 = base_cfg(mk(StrategyKind::Full));
  CHECK_THROWS_WITH_AS(FederatedRun(bin, ds, bad, ds, cfg5), doctest::Contains("empty"),
                       std::runtime_error);

  auto cfg6 = base_cfg(mk(StrategyKind::BiML, 0.5, 1.25));
  CHECK_THROWS_AS(FederatedRun(bin, ds, parts, ds, cfg6), std::runtime_error);
}
