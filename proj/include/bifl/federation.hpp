#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bifl/binary_net.hpp"
#include "bifl/data.hpp"
#include "bifl/mlpu.hpp"
#include "bifl/rng.hpp"

namespace bifl {

// The five exchange strategies. FaReal trains and exchanges real-valued
// weights; the other four train binary networks and differ in what goes up,
// what comes down, and how the download is folded into the local W-bar.
enum class StrategyKind {
  FaReal = 0,
  Full = 1,     // up: W-bar, down: aggregate, local W-bar replaced
  UpOnly = 2,   // up: W^b,   down: real aggregate, beta-mix of its sign
  UpDown = 3,   // up: W^b,   down: Sign(aggregate), same beta-mix
  BiML = 4,     // up: W^b,   down: lattice aggregate, per-parameter estimator
};

std::string kind_name(StrategyKind k);
StrategyKind kind_from_name(const std::string& name);

struct StrategyConfig {
  StrategyKind kind = StrategyKind::Full;
  std::optional<double> beta;          // UpOnly/UpDown only, in [0, 1]
  std::optional<double> alpha;         // BiML only, > 1
  std::optional<int> hybrid_switch;    // BiML only: FaReal after this round

  // Throws std::runtime_error naming the violated rule.
  void validate() const;
};

// Piecewise-constant rate: the first entry whose through_round bound covers
// the (1-based) round supplies the rate; past the last bound the last rate
// sticks.
struct LrSchedule {
  std::vector<std::pair<int, double>> steps{{1 << 30, 0.005}};
  double lr_at(int round) const;
};

struct FederationConfig {
  StrategyConfig strategy;
  LrSchedule lr;
  double participation = 1.0;  // fraction of clients uploading per round
  int batch = 64;
  int eval_batch = 256;
  uint64_t seed = 1;
};

// Size-weighted mean of equally shaped uploads, accumulated in upload order
// with one final divide, so binary uploads with equal sizes land exactly on
// the (P+1)-point lattice {(2k - P) / P}. A single upload passes through
// bit-identically.
std::vector<double> aggregate_weighted_mean(const std::vector<std::vector<double>>& uploads,
                                            const std::vector<long long>& sizes);

// The exchanged views of a model: the flat concatenation of every dense/conv
// weight tensor (latent W-bar or signs W^b), and the per-layer scales.
std::vector<double> pack_weights(const Model& m, bool binary);
void set_weights(Model& m, const std::vector<double>& w);  // writes W-bar
std::vector<double> pack_scales(const Model& m);
void set_scales(Model& m, const std::vector<double>& scales);

// Download folds. All three leave W-bar in [-1, 1] and re-derive W^b.
void update_full(Model& m, const std::vector<double>& w_tilde);
void update_mix(Model& m, const std::vector<double>& w_tilde, double beta);

struct BimlUpdateStats {
  size_t params = 0;
  size_t fallbacks = 0;  // estimator escapes to the exact solver
};
// Per-parameter estimator fold: tally from the aggregate, fast u estimate,
// mu_hat from the local W-bar, then clip(alpha * mu_hat). voted marks
// whether this client's sign is part of the aggregate. fit may be null for
// virtual m too small to fit a curve (m <= 3); those updates run the exact
// solver, memoized per distinct tally, and are not counted as fallbacks.
BimlUpdateStats update_biml(Model& m, const std::vector<double>& w_tilde, double m_virtual,
                            bool voted, double alpha, const mlpu::CurveFit* fit);

// Per-round communication charge. Uplink is per participating client:
// 32N for real-valued uploads, N + 32L for sign uploads with scales.
// Downlink is per client (every client downloads): 32N for real-valued
// broadcasts, N for sign broadcasts, and ceil(log2(P+1)) * N for lattice
// aggregates when all shards are equal (P = uploader count), else 32N.
struct LedgerCharge {
  uint64_t uplink_unit = 0;    // bits per participating client
  uint64_t downlink_unit = 0;  // bits per downloading client
  uint64_t uplink_bits = 0;    // participants * uplink_unit
  uint64_t downlink_bits = 0;  // clients * downlink_unit
};
LedgerCharge ledger_charge(StrategyKind k, size_t n, int l, int clients, int participants,
                           bool equal_shards);

struct CommLedger {
  uint64_t uplink_total = 0;
  uint64_t downlink_total = 0;
  LedgerCharge last;
  void add(const LedgerCharge& c) {
    last = c;
    uplink_total += c.uplink_bits;
    downlink_total += c.downlink_bits;
  }
};

struct ClientState {
  int id = 0;
  Model model;
  std::unique_ptr<Optimizer> opt;
  std::vector<int> rows;    // sample rows of this client's shard, ascending
  double virtual_m = 0.0;   // |D| / |D_i| over the full federation
};

struct RoundMetrics {
  int round = 0;
  StrategyKind active = StrategyKind::Full;  // hybrid runs flip to FaReal
  double test_accuracy = 0.0;
  double test_loss = 0.0;
  int participants = 0;
  uint64_t uplink_bits = 0;       // this round
  uint64_t downlink_bits = 0;     // this round
  uint64_t uplink_bits_cum = 0;
  uint64_t downlink_bits_cum = 0;
  size_t estimator_fallbacks = 0;
};

// One federation: clients cloned from a common prototype, one local epoch
// per round, size-weighted aggregation in ascending client order, strategy
// download, and a consensus evaluation model (aggregate weights and scales,
// size-weighted batchnorm state) scored on the held-out test set. The
// datasets are held by reference and must outlive the run. Deterministic:
// every random choice comes from streams derived from (seed, purpose,
// client, round).
class FederatedRun {
 public:
  FederatedRun(const Model& prototype, const Dataset& train, const Partition& parts,
               const Dataset& test, FederationConfig cfg);

  RoundMetrics run_round();

  int rounds_done() const { return round_; }
  StrategyKind active_kind(int round) const;
  bool equal_shards() const { return equal_shards_; }
  size_t client_count() const { return clients_.size(); }
  ClientState& client(size_t i) { return clients_[i]; }
  const std::vector<int>& last_participants() const { return participants_; }
  const std::vector<double>& aggregate_weights() const { return w_tilde_; }
  const std::vector<double>& aggregate_scales() const { return scales_tilde_; }
  const CommLedger& ledger() const { return ledger_; }
  Model& eval_model() { return eval_model_; }
  size_t estimator_fallbacks() const { return fallbacks_total_; }
  // Lazily fitted fast-path curves, keyed by (virtual m, voted).
  const std::map<std::pair<double, bool>, mlpu::CurveFit>& curve_fits() const { return fits_; }

 private:
  const mlpu::CurveFit& fit_for(double m_virtual, bool voted);
  void local_epoch(ClientState& c, int round, bool binary);
  void refresh_eval_model(bool binary);

  FederationConfig cfg_;
  const Dataset& train_;
  const Dataset& test_;
  std::vector<ClientState> clients_;
  bool equal_shards_ = true;
  long long total_rows_ = 0;
  int round_ = 0;
  bool switched_ = false;  // hybrid flip already applied
  std::vector<int> participants_;
  std::vector<double> w_tilde_;
  std::vector<double> scales_tilde_;
  CommLedger ledger_;
  Model eval_model_;
  Tensor test_x_;
  std::vector<int> test_y_;
  size_t fallbacks_total_ = 0;
  std::map<std::pair<double, bool>, mlpu::CurveFit> fits_;
};

// Drives rounds 1..rounds and returns the per-round metrics trace.
std::vector<RoundMetrics> run_federation(FederatedRun& run, int rounds);

}  // namespace bifl
