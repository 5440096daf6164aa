#include "bifl/federation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

namespace bifl {

namespace {

// Weight-carrying layers in model order; every exchanged view walks this
// same sequence so packing and unpacking cannot disagree on order.
struct WeightRef {
  Tensor* w_bar;
  Tensor* w_bin;
};

std::vector<WeightRef> weight_refs(Model& m) {
  std::vector<WeightRef> out;
  for (auto& l : m.layers) {
    if (auto* d = dynamic_cast<DenseLayer*>(l.get())) out.push_back({&d->w_bar, &d->w_bin});
    if (auto* c = dynamic_cast<Conv2dLayer*>(l.get())) out.push_back({&c->w_bar, &c->w_bin});
  }
  return out;
}

std::vector<double*> scale_refs(Model& m) {
  std::vector<double*> out;
  for (auto& l : m.layers) {
    if (auto* d = dynamic_cast<DenseLayer*>(l.get())) out.push_back(&d->theta);
    if (auto* c = dynamic_cast<Conv2dLayer*>(l.get())) out.push_back(&c->theta);
  }
  return out;
}

std::vector<BatchNormLayer*> norm_refs(Model& m) {
  std::vector<BatchNormLayer*> out;
  for (auto& l : m.layers)
    if (auto* b = dynamic_cast<BatchNormLayer*>(l.get())) out.push_back(b);
  return out;
}

bool model_is_binarized(const Model& m) {
  for (const auto& l : m.layers)
    if (l->weight_count() > 0) return l->binarized();
  return false;
}

Tensor gather_images(const Dataset& ds, const std::vector<int>& rows) {
  size_t stride = ds.images.numel() / ds.size();
  std::vector<int> shape = ds.images.shape;
  shape[0] = int(rows.size());
  Tensor out(shape);
  for (size_t r = 0; r < rows.size(); ++r) {
    const double* src = ds.images.v.data() + size_t(rows[r]) * stride;
    std::copy(src, src + stride, out.v.data() + r * stride);
  }
  return out;
}

}  // namespace

std::string kind_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::FaReal: return "fa-real";
    case StrategyKind::Full: return "bifl-full";
    case StrategyKind::UpOnly: return "bi-up-only";
    case StrategyKind::UpDown: return "bi-up-down";
    case StrategyKind::BiML: return "biml";
  }
  throw std::runtime_error("unknown strategy kind");
}

StrategyKind kind_from_name(const std::string& name) {
  if (name == "fa-real") return StrategyKind::FaReal;
  if (name == "bifl-full") return StrategyKind::Full;
  if (name == "bi-up-only") return StrategyKind::UpOnly;
  if (name == "bi-up-down") return StrategyKind::UpDown;
  if (name == "biml") return StrategyKind::BiML;
  throw std::runtime_error("unknown strategy '" + name + "'");
}

void StrategyConfig::validate() const {
  bool mixing = kind == StrategyKind::UpOnly || kind == StrategyKind::UpDown;
  if (mixing) {
    if (!beta) throw std::runtime_error(kind_name(kind) + " requires beta");
    if (!(*beta >= 0.0 && *beta <= 1.0))
      throw std::runtime_error("beta must lie in [0, 1], got " + std::to_string(*beta));
  } else if (beta) {
    throw std::runtime_error("beta is not a " + kind_name(kind) + " parameter");
  }
  if (kind == StrategyKind::BiML) {
    if (!alpha) throw std::runtime_error("biml requires alpha");
    if (!(*alpha > 1.0))
      throw std::runtime_error("alpha must be > 1, got " + std::to_string(*alpha));
  } else if (alpha) {
    throw std::runtime_error("alpha is not a " + kind_name(kind) + " parameter");
  }
  if (hybrid_switch) {
    if (kind != StrategyKind::BiML)
      throw std::runtime_error("hybrid switching is only available with biml");
    if (*hybrid_switch < 1) throw std::runtime_error("hybrid switch round must be >= 1");
  }
}

double LrSchedule::lr_at(int round) const {
  if (steps.empty()) throw std::runtime_error("empty learning-rate schedule");
  for (const auto& [through, lr] : steps)
    if (round <= through) return lr;
  return steps.back().second;
}

std::vector<double> aggregate_weighted_mean(const std::vector<std::vector<double>>& uploads,
                                            const std::vector<long long>& sizes) {
  if (uploads.empty()) throw std::runtime_error("nothing to aggregate");
  if (uploads.size() != sizes.size())
    throw std::runtime_error("uploads and sizes disagree in count");
  size_t n = uploads[0].size();
  for (const auto& u : uploads)
    if (u.size() != n) throw std::runtime_error("upload shape mismatch");
  long long total = 0;
  for (long long s : sizes) {
    if (s < 1) throw std::runtime_error("shard sizes must be >= 1");
    total += s;
  }
  if (uploads.size() == 1) return uploads[0];  // exact passthrough
  std::vector<double> out(n, 0.0);
  for (size_t i = 0; i < uploads.size(); ++i) {
    double w = double(sizes[i]);
    const double* u = uploads[i].data();
    for (size_t j = 0; j < n; ++j) out[j] += w * u[j];
  }
  double inv = double(total);
  for (size_t j = 0; j < n; ++j) out[j] /= inv;
  return out;
}

std::vector<double> pack_weights(const Model& m, bool binary) {
  std::vector<double> out;
  out.reserve(m.weight_count_total());
  for (auto& r : weight_refs(const_cast<Model&>(m))) {
    const Tensor& t = binary ? *r.w_bin : *r.w_bar;
    out.insert(out.end(), t.v.begin(), t.v.end());
  }
  return out;
}

void set_weights(Model& m, const std::vector<double>& w) {
  if (w.size() != m.weight_count_total())
    throw std::runtime_error("weight vector size mismatch");
  size_t off = 0;
  for (auto& r : weight_refs(m)) {
    std::copy(w.begin() + off, w.begin() + off + r.w_bar->numel(), r.w_bar->v.begin());
    off += r.w_bar->numel();
  }
}

std::vector<double> pack_scales(const Model& m) {
  std::vector<double> out;
  for (double* t : scale_refs(const_cast<Model&>(m))) out.push_back(*t);
  return out;
}

void set_scales(Model& m, const std::vector<double>& scales) {
  auto refs = scale_refs(m);
  if (scales.size() != refs.size()) throw std::runtime_error("scale vector size mismatch");
  for (size_t i = 0; i < refs.size(); ++i) *refs[i] = scales[i];
}

void update_full(Model& m, const std::vector<double>& w_tilde) {
  set_weights(m, w_tilde);
  for (auto& r : weight_refs(m))
    for (double& x : r.w_bar->v) x = std::clamp(x, -1.0, 1.0);
  m.rebinarize();
}

void update_mix(Model& m, const std::vector<double>& w_tilde, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::runtime_error("beta must lie in [0, 1]");
  size_t off = 0;
  for (auto& r : weight_refs(m)) {
    for (double& x : r.w_bar->v) {
      double mixed = beta * mlpu::sign_of(w_tilde[off]) + (1.0 - beta) * x;
      x = std::clamp(mixed, -1.0, 1.0);
      ++off;
    }
  }
  if (off != w_tilde.size()) throw std::runtime_error("weight vector size mismatch");
  m.rebinarize();
}

BimlUpdateStats update_biml(Model& m, const std::vector<double>& w_tilde, double m_virtual,
                            bool voted, double alpha, const mlpu::CurveFit* fit) {
  if (fit && (fit->m != m_virtual || fit->own_vote != voted))
    throw std::runtime_error("curve fit does not match this client's tally model");
  // The lattice keeps distinct (tally, sign) pairs few, so the exact-solver
  // path stays cheap when memoized.
  std::map<std::pair<double, int>, double> solved;
  BimlUpdateStats st;
  size_t off = 0;
  for (auto& r : weight_refs(m)) {
    for (double& x : r.w_bar->v) {
      double m_p = mlpu::count_positive(w_tilde[off], m_virtual);
      int s = mlpu::sign_of(x);
      double u;
      if (fit) {
        bool fell_back = false;
        u = mlpu::estimate_u_fast(*fit, m_p, s, &fell_back);
        st.fallbacks += fell_back ? 1 : 0;
      } else {
        auto key = std::make_pair(m_p, s);
        auto it = solved.find(key);
        if (it == solved.end())
          it = solved.emplace(key, mlpu::solve_u(m_virtual, m_p, s, 1e-6, voted)).first;
        u = it->second;
      }
      x = mlpu::update_weight(mlpu::mu_hat(u, x), alpha);
      ++st.params;
      ++off;
    }
  }
  if (off != w_tilde.size()) throw std::runtime_error("weight vector size mismatch");
  m.rebinarize();
  return st;
}

LedgerCharge ledger_charge(StrategyKind k, size_t n, int l, int clients, int participants,
                           bool equal_shards) {
  if (clients < 1 || participants < 1 || participants > clients)
    throw std::runtime_error("participant count out of range");
  LedgerCharge c;
  uint64_t n64 = n, l64 = uint64_t(l);
  switch (k) {
    case StrategyKind::FaReal:
    case StrategyKind::Full:
      c.uplink_unit = 32 * n64;
      c.downlink_unit = 32 * n64;
      break;
    case StrategyKind::UpOnly:
    case StrategyKind::BiML:
      c.uplink_unit = n64 + 32 * l64;
      // Equal shards put every aggregate element on a (P+1)-point lattice,
      // so the index fits in ceil(log2(P+1)) bits; otherwise full floats.
      c.downlink_unit =
          equal_shards ? uint64_t(std::bit_width(unsigned(participants))) * n64 : 32 * n64;
      break;
    case StrategyKind::UpDown:
      c.uplink_unit = n64 + 32 * l64;
      c.downlink_unit = n64;
      break;
  }
  c.uplink_bits = uint64_t(participants) * c.uplink_unit;
  c.downlink_bits = uint64_t(clients) * c.downlink_unit;
  return c;
}

FederatedRun::FederatedRun(const Model& prototype, const Dataset& train, const Partition& parts,
                           const Dataset& test, FederationConfig cfg)
    : cfg_(std::move(cfg)), train_(train), test_(test), eval_model_(prototype) {
  cfg_.strategy.validate();
  if (parts.shards.empty()) throw std::runtime_error("no client shards");
  if (!(cfg_.participation > 0.0 && cfg_.participation <= 1.0))
    throw std::runtime_error("participation must lie in (0, 1]");
  if (cfg_.batch < 1) throw std::runtime_error("batch must be >= 1");
  int m = int(parts.shards.size());
  if (int(cfg_.participation * m) < 1)
    throw std::runtime_error("participation leaves no uploader");

  bool want_binary = cfg_.strategy.kind != StrategyKind::FaReal;
  if (model_is_binarized(prototype) != want_binary)
    throw std::runtime_error(kind_name(cfg_.strategy.kind) + " needs a " +
                             (want_binary ? "binarized" : "real-valued") + " model");

  for (const auto& shard : parts.shards) {
    if (shard.empty()) throw std::runtime_error("empty client shard");
    total_rows_ += (long long)shard.size();
  }
  equal_shards_ = true;
  for (const auto& shard : parts.shards)
    if (shard.size() != parts.shards[0].size()) equal_shards_ = false;

  clients_.reserve(parts.shards.size());
  for (size_t i = 0; i < parts.shards.size(); ++i) {
    ClientState c;
    c.id = int(i);
    c.model = prototype;
    c.opt = std::make_unique<Adam>();
    c.rows = parts.shards[i];
    c.virtual_m = mlpu::virtual_m(double(total_rows_), double(c.rows.size()));
    clients_.push_back(std::move(c));
  }

  test_x_ = gather_images(test_, [&] {
    std::vector<int> all(test_.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = int(i);
    return all;
  }());
  test_y_ = test_.labels;
}

StrategyKind FederatedRun::active_kind(int round) const {
  if (cfg_.strategy.hybrid_switch && round > *cfg_.strategy.hybrid_switch)
    return StrategyKind::FaReal;
  return cfg_.strategy.kind;
}

const mlpu::CurveFit& FederatedRun::fit_for(double m_virtual, bool voted) {
  auto key = std::make_pair(m_virtual, voted);
  auto it = fits_.find(key);
  if (it == fits_.end()) it = fits_.emplace(key, mlpu::fit_curve(m_virtual, voted)).first;
  return it->second;
}

void FederatedRun::local_epoch(ClientState& c, int round, bool binary) {
  Rng sh = Rng::stream(cfg_.seed, "local-shuffle", uint64_t(c.id), uint64_t(round));
  std::vector<int> order = sh.permutation(c.rows.size());
  double lr = cfg_.lr.lr_at(round);
  for (size_t lo = 0; lo < order.size(); lo += size_t(cfg_.batch)) {
    size_t hi = std::min(order.size(), lo + size_t(cfg_.batch));
    std::vector<int> rows(hi - lo);
    std::vector<int> labels(hi - lo);
    for (size_t i = lo; i < hi; ++i) {
      rows[i - lo] = c.rows[size_t(order[i])];
      labels[i - lo] = train_.labels[size_t(rows[i - lo])];
    }
    Tensor x = gather_images(train_, rows);
    train_batch(c.model, *c.opt, x, labels, lr, binary);
  }
}

void FederatedRun::refresh_eval_model(bool binary) {
  set_weights(eval_model_, w_tilde_);
  set_scales(eval_model_, scales_tilde_);
  if (binary) eval_model_.rebinarize();

  // Consensus batchnorm state: size-weighted average over every client.
  // Measurement-only; nothing flows back into training.
  auto dst = norm_refs(eval_model_);
  if (dst.empty()) return;
  for (auto* b : dst) {
    b->gamma.fill(0.0);
    b->beta.fill(0.0);
    b->run_mean.fill(0.0);
    b->run_var.fill(0.0);
  }
  for (auto& c : clients_) {
    double w = double(c.rows.size()) / double(total_rows_);
    auto src = norm_refs(c.model);
    for (size_t k = 0; k < dst.size(); ++k) {
      for (size_t j = 0; j < dst[k]->gamma.numel(); ++j) {
        dst[k]->gamma[j] += w * src[k]->gamma[j];
        dst[k]->beta[j] += w * src[k]->beta[j];
        dst[k]->run_mean[j] += w * src[k]->run_mean[j];
        dst[k]->run_var[j] += w * src[k]->run_var[j];
      }
    }
  }
}

RoundMetrics FederatedRun::run_round() {
  ++round_;
  StrategyKind active = active_kind(round_);
  if (active == StrategyKind::FaReal && cfg_.strategy.kind == StrategyKind::BiML && !switched_) {
    // Hybrid switch: the latent W-bar become plain real weights from here on.
    for (auto& c : clients_) c.model.set_binarized(false);
    eval_model_.set_binarized(false);
    switched_ = true;
  }
  bool binary = active != StrategyKind::FaReal;
  bool sign_upload = active == StrategyKind::UpOnly || active == StrategyKind::UpDown ||
                     active == StrategyKind::BiML;

  int m = int(clients_.size());
  int p = std::clamp(int(cfg_.participation * m), 1, m);
  Rng pick = Rng::stream(cfg_.seed, "round-participants", uint64_t(round_));
  participants_ = pick.sample_without_replacement(size_t(m), size_t(p));

  long long participant_rows = 0;
  for (int id : participants_) {
    local_epoch(clients_[size_t(id)], round_, binary);
    participant_rows += (long long)clients_[size_t(id)].rows.size();
  }

  std::vector<std::vector<double>> w_up, s_up;
  std::vector<long long> sizes;
  for (int id : participants_) {
    auto& c = clients_[size_t(id)];
    w_up.push_back(pack_weights(c.model, sign_upload));
    s_up.push_back(pack_scales(c.model));
    sizes.push_back((long long)c.rows.size());
  }
  w_tilde_ = aggregate_weighted_mean(w_up, sizes);
  scales_tilde_ = aggregate_weighted_mean(s_up, sizes);

  ledger_.add(ledger_charge(active, eval_model_.weight_count_total(),
                            eval_model_.scale_layer_count(), m, p, equal_shards_));

  size_t round_fallbacks = 0;
  for (auto& c : clients_) {
    switch (active) {
      case StrategyKind::FaReal:
        set_weights(c.model, w_tilde_);
        break;
      case StrategyKind::Full:
        update_full(c.model, w_tilde_);
        break;
      case StrategyKind::UpOnly:
      case StrategyKind::UpDown:
        update_mix(c.model, w_tilde_, *cfg_.strategy.beta);
        break;
      case StrategyKind::BiML: {
        double m_est = double(participant_rows) / double(c.rows.size());
        bool voted = std::binary_search(participants_.begin(), participants_.end(), c.id);
        const mlpu::CurveFit* fit = m_est > 3.0 ? &fit_for(m_est, voted) : nullptr;
        auto st = update_biml(c.model, w_tilde_, m_est, voted, *cfg_.strategy.alpha, fit);
        round_fallbacks += st.fallbacks;
        break;
      }
    }
    set_scales(c.model, scales_tilde_);
  }
  fallbacks_total_ += round_fallbacks;

  refresh_eval_model(binary);
  EvalResult er = evaluate(eval_model_, test_x_, test_y_, cfg_.eval_batch, binary);

  RoundMetrics rm;
  rm.round = round_;
  rm.active = active;
  rm.test_accuracy = er.accuracy;
  rm.test_loss = er.loss;
  rm.participants = p;
  rm.uplink_bits = ledger_.last.uplink_bits;
  rm.downlink_bits = ledger_.last.downlink_bits;
  rm.uplink_bits_cum = ledger_.uplink_total;
  rm.downlink_bits_cum = ledger_.downlink_total;
  rm.estimator_fallbacks = round_fallbacks;
  return rm;
}

std::vector<RoundMetrics> run_federation(FederatedRun& run, int rounds) {
  std::vector<RoundMetrics> out;
  out.reserve(size_t(rounds));
  for (int t = 0; t < rounds; ++t) out.push_back(run.run_round());
  return out;
}

}  // namespace bifl
