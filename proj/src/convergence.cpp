#include "bifl/convergence.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>

#include "bifl/mlpu.hpp"

namespace bifl {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

std::vector<double> sign_vec(const std::vector<double>& w) {
  std::vector<double> s(w.size());
  for (size_t i = 0; i < w.size(); ++i) s[i] = mlpu::sign_of(w[i]);
  return s;
}

int disagreements(const std::vector<double>& a, const std::vector<double>& b) {
  int k = 0;
  for (size_t i = 0; i < a.size(); ++i) k += a[i] != b[i];
  return k;
}

double dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// Columns of a random Gaussian matrix, Gram-Schmidt orthonormalized.
// Near-dependent draws (never seen at these sizes) restart the whole matrix.
std::vector<std::vector<double>> random_orthonormal(int n, Rng& rng) {
  while (true) {
    std::vector<std::vector<double>> q(n, std::vector<double>(n));
    bool ok = true;
    for (int j = 0; j < n && ok; ++j) {
      for (int i = 0; i < n; ++i) q[j][i] = rng.normal();
      for (int p = 0; p < j; ++p) {
        double c = dot(q[j], q[p]);
        for (int i = 0; i < n; ++i) q[j][i] -= c * q[p][i];
      }
      double len = norm(q[j]);
      if (len < 1e-6) {
        ok = false;
        break;
      }
      for (int i = 0; i < n; ++i) q[j][i] /= len;
    }
    if (ok) return q;
  }
}

}  // namespace

double ConvexProblem::value(const std::vector<double>& w) const {
  if (int(w.size()) != n) throw std::invalid_argument("value: point has wrong dimension");
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < n; ++j) row += a[size_t(i) * n + j] * (w[j] - center[j]);
    acc += (w[i] - center[i]) * row;
  }
  return 0.5 * acc;
}

std::vector<double> ConvexProblem::gradient(const std::vector<double>& w) const {
  if (int(w.size()) != n) throw std::invalid_argument("gradient: point has wrong dimension");
  std::vector<double> g(n);
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < n; ++j) row += a[size_t(i) * n + j] * (w[j] - center[j]);
    g[i] = row;
  }
  return g;
}

ConvexProblem random_spd_problem(int n, Rng& rng, double eig_lo, double eig_hi, double span) {
  if (n < 1) throw std::invalid_argument("random_spd_problem: n must be >= 1");
  if (!(eig_lo > 0.0) || !(eig_hi >= eig_lo))
    throw std::invalid_argument("random_spd_problem: need 0 < eig_lo <= eig_hi");
  std::vector<double> eigs(n);
  for (int i = 0; i < n; ++i)
    eigs[i] = std::exp(rng.uniform(std::log(eig_lo), std::log(eig_hi)));
  auto q = random_orthonormal(n, rng);

  ConvexProblem p;
  p.n = n;
  p.a.assign(size_t(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      double v = 0.0;
      for (int k = 0; k < n; ++k) v += q[k][i] * eigs[k] * q[k][j];
      p.a[size_t(i) * n + j] = v;
      p.a[size_t(j) * n + i] = v;
    }
  }
  p.center.resize(n);
  for (int i = 0; i < n; ++i) p.center[i] = rng.uniform(-span, span);
  p.xi = *std::min_element(eigs.begin(), eigs.end());
  p.beta_smooth = *std::max_element(eigs.begin(), eigs.end());
  p.rho = p.beta_smooth * (std::sqrt(double(n)) + norm(p.center));
  return p;
}

std::vector<double> binary_optimum(const ConvexProblem& p) {
  if (p.n < 1) throw std::invalid_argument("binary_optimum: empty problem");
  if (p.n > 20)
    throw std::invalid_argument("binary_optimum: exhaustive search is capped at 20 dimensions, got " +
                                std::to_string(p.n));
  std::vector<double> w(p.n), best;
  double best_f = 0.0;
  const uint32_t total = uint32_t(1) << p.n;
  for (uint32_t mask = 0; mask < total; ++mask) {
    // element 0 rides the top bit, so ascending masks enumerate vectors in
    // lexicographic order with -1 < +1; strict < keeps the first minimum.
    for (int i = 0; i < p.n; ++i)
      w[i] = (mask >> (p.n - 1 - i)) & 1 ? 1.0 : -1.0;
    double f = p.value(w);
    if (best.empty() || f < best_f) {
      best = w;
      best_f = f;
    }
  }
  return best;
}

PhiForms phi(double lambda, double k, double xi, double beta_smooth, double n) {
  if (!(lambda > 1.0))
    throw std::invalid_argument("phi: lambda must be > 1, got " + std::to_string(lambda));
  if (!(k >= 1.0) || !(k <= n))
    throw std::invalid_argument("phi: need 1 <= k <= n, got k=" + std::to_string(k) +
                                ", n=" + std::to_string(n));
  if (!(xi > 0.0) || !(xi <= beta_smooth))
    throw std::invalid_argument("phi: need 0 < xi <= beta_smooth, got xi=" + std::to_string(xi) +
                                ", beta_smooth=" + std::to_string(beta_smooth));

  const double b = beta_smooth;
  PhiForms out;
  double root = std::sqrt(b * b * b * lambda * lambda * n * (lambda * lambda + 1.0));
  double bracket = lambda * std::sqrt(xi * k) - std::sqrt(xi * (n - k)) -
                   lambda * std::sqrt((b - xi) * (n - k)) - std::sqrt(k * (b - xi));
  out.radical = (lambda - 1.0) / root * bracket;

  double angle = std::acos(std::sqrt(xi / b)) + std::acos(std::sqrt(k / n)) +
                 std::acos(lambda / std::sqrt(lambda * lambda + 1.0));
  out.cosine = (lambda - 1.0) / lambda * std::cos(angle);
  return out;
}

GeometryReport check_geometry_lemma(const std::vector<double>& w_bar,
                                    const std::vector<double>& w_bin,
                                    const std::vector<double>& v_bin) {
  const size_t n = w_bar.size();
  if (n == 0) throw std::invalid_argument("check_geometry_lemma: empty vectors");
  if (w_bin.size() != n || v_bin.size() != n)
    throw std::invalid_argument("check_geometry_lemma: dimension mismatch");
  for (size_t i = 0; i < n; ++i) {
    if (std::abs(w_bar[i]) > 1.0 + 1e-12)
      throw std::invalid_argument("check_geometry_lemma: real weights must lie in [-1, 1]");
    if (w_bin[i] != double(mlpu::sign_of(w_bar[i])))
      throw std::invalid_argument(
          "check_geometry_lemma: binary weights are not the sign of the real weights");
    if (v_bin[i] != 1.0 && v_bin[i] != -1.0)
      throw std::invalid_argument("check_geometry_lemma: comparison point must be binary");
  }

  GeometryReport r;
  r.k = disagreements(w_bin, v_bin);
  if (r.k == 0)
    throw std::invalid_argument("check_geometry_lemma: comparison point equals the binarization");

  double db2 = 0.0, dr2 = 0.0, inner = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double db = w_bin[i] - v_bin[i];
    double dr = w_bar[i] - v_bin[i];
    db2 += db * db;
    dr2 += dr * dr;
    inner += db * dr;
  }
  r.margin_distance = 4.0 * dr2 - db2;
  r.inner = inner;
  r.margin_angle = inner * inner - (double(r.k) / double(n)) * db2 * dr2;
  double denom = std::sqrt(db2 * dr2);
  r.angle = std::acos(std::clamp(inner / denom, -1.0, 1.0));
  r.angle_bound = std::acos(std::sqrt(double(r.k) / double(n)));
  // Both conclusions admit exact ties (clip-boundary weights), so the check
  // only rejects genuinely negative margins, with room for double rounding.
  double slack_d = 1e-9 * std::max(1.0, db2);
  double slack_a = 1e-9 * std::max(1.0, db2 * dr2);
  r.ok = r.margin_distance >= -slack_d && inner >= -slack_a && r.margin_angle >= -slack_a;
  return r;
}

TraceRecord run_binary_gd(const ConvexProblem& p, double eta, std::vector<double> w_bar0,
                          int steps) {
  if (!(eta > 0.0)) throw std::invalid_argument("run_binary_gd: eta must be > 0");
  if (steps < 1) throw std::invalid_argument("run_binary_gd: steps must be >= 1");
  if (int(w_bar0.size()) != p.n)
    throw std::invalid_argument("run_binary_gd: start point has wrong dimension");
  for (double& w : w_bar0) w = std::clamp(w, -1.0, 1.0);

  TraceRecord tr;
  tr.w_star = binary_optimum(p);
  tr.epsilon = norm(p.gradient(tr.w_star));
  if (tr.epsilon < 1e-12)
    throw std::invalid_argument(
        "run_binary_gd: gradient at the binary optimum is numerically zero; regenerate the problem");

  std::vector<double> w_bar = std::move(w_bar0);
  tr.steps.reserve(steps);
  for (int t = 0; t < steps; ++t) {
    StepRecord s;
    s.step = t;
    s.w_bar = w_bar;
    s.w_bin = sign_vec(w_bar);
    const std::vector<double>& w_bin = s.w_bin;
    s.k = disagreements(w_bin, tr.w_star);
    std::vector<double> g = p.gradient(w_bin);
    s.lambda = norm(g) / tr.epsilon;
    s.phi_defined = s.k >= 1 && s.lambda > 1.0;
    if (s.phi_defined) {
      PhiForms f = phi(s.lambda, double(s.k), p.xi, p.beta_smooth, double(p.n));
      s.phi_radical = f.radical;
      s.phi_cosine = f.cosine;
    }
    s.precondition = s.phi_defined && eta < s.phi_radical;
    s.dist_real = dist(w_bar, tr.w_star);
    s.dist_bin = 2.0 * std::sqrt(double(s.k));

    std::vector<double> w_next(p.n);
    for (int i = 0; i < p.n; ++i) w_next[i] = std::clamp(w_bar[i] - eta * g[i], -1.0, 1.0);
    double dist_next = dist(w_next, tr.w_star);

    const double eps = tr.epsilon;
    double root_k = 2.0 * std::sqrt(double(s.k));
    s.margin_lambda_low = s.lambda - (root_k * p.xi - eps) / eps;
    s.margin_lambda_high = (root_k * p.beta_smooth + eps) / eps - s.lambda;
    s.margin_lambda_low_printed = s.lambda - (double(s.k) * p.xi - eps) / eps;
    s.margin_lambda_high_printed = (double(s.k) * p.beta_smooth + eps) / eps - s.lambda;

    if (s.precondition) {
      s.margin_descent = s.dist_real * s.dist_real -
                         4.0 * (s.phi_radical - eta) * eta * p.beta_smooth * p.xi * double(s.k) -
                         dist_next * dist_next;
      // Strict-zero predicates: observed margins sit orders of magnitude
      // above rounding noise, and the findings CSV stores margins at full
      // precision, so a verifier can recount these exactly.
      if (s.margin_descent < 0.0) ++tr.violations_descent;
      if (s.margin_lambda_low < 0.0 || s.margin_lambda_high < 0.0) ++tr.violations_lambda;
      if (s.margin_lambda_low_printed < 0.0 || s.margin_lambda_high_printed < 0.0)
        ++tr.violations_lambda_printed;
    }
    tr.steps.push_back(s);
    w_bar = std::move(w_next);
  }
  tr.w_bar_final = std::move(w_bar);
  return tr;
}

DescentSuiteReport run_descent_suite(const DescentSuiteConfig& cfg) {
  if (cfg.problems < 1) throw std::invalid_argument("run_descent_suite: problems must be >= 1");
  if (cfg.min_n < 1 || cfg.max_n < cfg.min_n || cfg.max_n > 20)
    throw std::invalid_argument("run_descent_suite: need 1 <= min_n <= max_n <= 20");
  if (cfg.steps < 2) throw std::invalid_argument("run_descent_suite: steps must be >= 2");

  DescentSuiteReport rep;
  rep.cfg = cfg;
  uint64_t attempt = 0;
  while (int(rep.audits.size()) < cfg.problems) {
    ++attempt;
    Rng gen = Rng::stream(cfg.seed, "lab-problem", attempt);
    int n = cfg.min_n + gen.uniform_int(cfg.max_n - cfg.min_n + 1);
    ConvexProblem p = random_spd_problem(n, gen);

    std::vector<double> w_star = binary_optimum(p);
    if (norm(p.gradient(w_star)) < 1e-9) {
      ++rep.regenerated_problems;
      continue;
    }

    Rng init = Rng::stream(cfg.seed, "lab-init", attempt);
    std::vector<double> w0(n);
    for (int i = 0; i < n; ++i) w0[i] = init.uniform(-1.0, 1.0);

    // Step-size protocol: pilot run at a conservative rate, then eta = half
    // the smallest positive ceiling the pilot saw.
    TraceRecord pilot = run_binary_gd(p, cfg.pilot_eta_scale / p.beta_smooth, w0, cfg.steps);
    double min_phi = 0.0;
    bool seen = false;
    for (const StepRecord& s : pilot.steps) {
      if (s.phi_defined && s.phi_radical > 0.0 && (!seen || s.phi_radical < min_phi)) {
        min_phi = s.phi_radical;
        seen = true;
      }
    }
    if (!seen) {
      ++rep.regenerated_problems;
      continue;
    }

    ProblemAudit audit;
    audit.problem_id = int(rep.audits.size());
    audit.n = n;
    audit.eta = 0.5 * min_phi;
    audit.trace = run_binary_gd(p, audit.eta, w0, cfg.steps);

    std::vector<double> ts, ys;
    for (const StepRecord& s : audit.trace.steps) {
      if (s.precondition) ++audit.passing_steps;
      // Slope window: the passing prefix, while the distance is positive.
      if (int(ts.size()) == s.step && s.precondition && s.dist_real > 0.0) {
        ts.push_back(double(s.step));
        ys.push_back(std::log(s.dist_real));
      }
    }
    if (ts.size() >= 3) {
      double mt = 0.0, my = 0.0;
      for (size_t i = 0; i < ts.size(); ++i) {
        mt += ts[i];
        my += ys[i];
      }
      mt /= double(ts.size());
      my /= double(ts.size());
      double num = 0.0, den = 0.0;
      for (size_t i = 0; i < ts.size(); ++i) {
        num += (ts[i] - mt) * (ys[i] - my);
        den += (ts[i] - mt) * (ts[i] - mt);
      }
      audit.slope = num / den;
      audit.slope_counted = true;
      ++rep.slope_runs;
      if (audit.slope < 0.0) ++rep.slope_negative;
    }

    rep.total_passing_steps += audit.passing_steps;
    rep.violations_descent += audit.trace.violations_descent;
    rep.violations_lambda += audit.trace.violations_lambda;
    rep.violations_lambda_printed += audit.trace.violations_lambda_printed;
    for (const StepRecord& s : audit.trace.steps) {
      if (!s.phi_defined) continue;
      double want = p.beta_smooth * s.phi_radical;
      double err = std::abs(s.phi_cosine - want) / std::max(1.0, std::abs(want));
      rep.max_phi_form_ratio_error = std::max(rep.max_phi_form_ratio_error, err);
    }
    rep.audits.push_back(std::move(audit));
  }
  return rep;
}

std::string findings_csv(const DescentSuiteReport& r) {
  std::string out = "problem_id,step,k,lambda,phi,margin_1,margin_2,precondition_met\n";
  char line[256];
  for (const ProblemAudit& a : r.audits) {
    for (const StepRecord& s : a.trace.steps) {
      double phi_v = s.phi_defined ? s.phi_radical
                                   : std::numeric_limits<double>::quiet_NaN();
      double m1 = std::min(s.margin_lambda_low, s.margin_lambda_high);
      std::snprintf(line, sizeof(line), "%d,%d,%d,%.17g,%.17g,%.17g,%.17g,%d\n", a.problem_id,
                    s.step, s.k, s.lambda, phi_v, m1, s.margin_descent, s.precondition ? 1 : 0);
      out += line;
    }
  }
  return out;
}

BiasProbe probe_theorem2(double m, double mu, double sigma,
                         const std::vector<double>& alpha_grid, int trials, uint64_t seed) {
  long long mi = std::llround(m);
  if (mi < 1 || m != double(mi))
    throw std::invalid_argument("probe_theorem2: m must be a positive integer");
  if (!(sigma > 0.0)) throw std::invalid_argument("probe_theorem2: sigma must be > 0");
  if (trials < 1) throw std::invalid_argument("probe_theorem2: trials must be >= 1");
  if (alpha_grid.empty()) throw std::invalid_argument("probe_theorem2: empty alpha grid");

  BiasProbe probe;
  probe.m = m;
  probe.mu = mu;
  probe.sigma = sigma;
  probe.trials = trials;

  Rng rng = Rng::stream(seed, "bias-probe", uint64_t(mi));
  // The tally has at most 2(m+1) distinct (count, sign) inputs across the
  // whole run, so every likelihood maximization is solved exactly once.
  std::map<std::pair<long long, int>, double> memo;
  auto u_for = [&](long long m_p, int s) {
    auto it = memo.find({m_p, s});
    if (it != memo.end()) return it->second;
    double u = mlpu::solve_u(m, double(m_p), s, 1e-6, true);
    memo.insert({{m_p, s}, u});
    return u;
  };

  std::vector<double> w(static_cast<size_t>(mi));
  std::vector<double> acc(alpha_grid.size(), 0.0);
  double acc_mu = 0.0;
  long long unanimous = 0;
  for (int t = 0; t < trials; ++t) {
    double sum_signs = 0.0;
    for (long long i = 0; i < mi; ++i) {
      w[size_t(i)] = std::clamp(rng.normal(mu, sigma), -1.0, 1.0);
      sum_signs += mlpu::sign_of(w[size_t(i)]);
    }
    double w_tilde = sum_signs / m;
    long long m_p = std::llround(mlpu::count_positive(w_tilde, m));
    if (m_p == 0 || m_p == mi) ++unanimous;
    for (long long i = 0; i < mi; ++i) {
      double est = mlpu::mu_hat(u_for(m_p, mlpu::sign_of(w[size_t(i)])), w[size_t(i)]);
      acc_mu += est;
      for (size_t a = 0; a < alpha_grid.size(); ++a)
        acc[a] += mlpu::update_weight(est, alpha_grid[a]);
    }
  }

  const double samples = double(trials) * double(mi);
  probe.mean_mu_hat = acc_mu / samples;
  probe.unanimous_fraction = double(unanimous) / double(trials);
  probe.rows.resize(alpha_grid.size());
  size_t best = 0;
  for (size_t a = 0; a < alpha_grid.size(); ++a) {
    probe.rows[a].alpha = alpha_grid[a];
    probe.rows[a].mean_estimate = acc[a] / samples;
    probe.rows[a].bias = probe.rows[a].mean_estimate - mu;
    if (std::abs(probe.rows[a].bias) < std::abs(probe.rows[best].bias)) best = a;
  }
  probe.best_alpha = probe.rows[best].alpha;
  return probe;
}

ContractionAudit contraction_audit(double m, long long samples, uint64_t seed) {
  long long mi = std::llround(m);
  if (mi < 1 || m != double(mi))
    throw std::invalid_argument("contraction_audit: m must be a positive integer");
  if (samples < 1) throw std::invalid_argument("contraction_audit: samples must be >= 1");

  ContractionAudit audit;
  audit.m = m;
  audit.samples = samples;

  Rng rng = Rng::stream(seed, "contraction-audit", uint64_t(mi));
  std::map<std::pair<long long, int>, double> memo;
  const double boundary = -1.0 / std::sqrt(2.0);
  bool first = true;
  for (long long i = 0; i < samples; ++i) {
    double w_bar = rng.uniform(-1.0, 1.0);
    if (w_bar == 0.0) w_bar = 0.5;  // measure-zero draw; the ratio needs a nonzero weight
    int s = mlpu::sign_of(w_bar);
    // uniform over the tallies feasible with this client's own vote included
    long long m_p = s > 0 ? 1 + rng.uniform_int(int(mi)) : rng.uniform_int(int(mi));
    auto it = memo.find({m_p, s});
    if (it == memo.end())
      it = memo.insert({{m_p, s}, mlpu::solve_u(m, double(m_p), s, 1e-6, true)}).first;
    double u = it->second;
    double ratio = mlpu::mu_hat(u, w_bar) / w_bar;
    if (first || ratio < audit.min_ratio) audit.min_ratio = ratio;
    if (first || ratio > audit.max_ratio) audit.max_ratio = ratio;
    first = false;

    bool on_domain = u * s > boundary;
    if (on_domain) {
      ++audit.on_domain;
      if (!(std::abs(ratio) < 1.0)) ++audit.on_domain_violations;
    } else {
      if (std::abs(ratio) < 1.0) ++audit.off_domain_contractions;
      if (s > 0 && m_p > audit.max_off_domain_tally_pos) audit.max_off_domain_tally_pos = m_p;
      if (s < 0 && (audit.min_off_domain_tally_neg < 0 || m_p < audit.min_off_domain_tally_neg))
        audit.min_off_domain_tally_neg = m_p;
    }
  }
  return audit;
}

}  // namespace bifl
