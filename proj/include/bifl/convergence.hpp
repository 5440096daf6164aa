#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bifl/rng.hpp"

namespace bifl {

// Box-constrained quadratic F(W) = 1/2 (W-c)^T A (W-c) with A symmetric
// positive definite. Strong convexity xi and smoothness beta_smooth are the
// extreme eigenvalues, exact by construction; rho bounds the gradient norm
// on the clipped box.
struct ConvexProblem {
  int n = 0;
  std::vector<double> a;       // n x n, row-major, symmetric positive definite
  std::vector<double> center;  // c
  double xi = 0.0;
  double beta_smooth = 0.0;
  double rho = 0.0;

  double value(const std::vector<double>& w) const;
  std::vector<double> gradient(const std::vector<double>& w) const;
};

// A = Q diag(eigs) Q^T with a random orthonormal Q; eigenvalues log-uniform
// in [eig_lo, eig_hi], center uniform in [-span, span]^n.
ConvexProblem random_spd_problem(int n, Rng& rng, double eig_lo = 0.5, double eig_hi = 2.5,
                                 double span = 1.25);

// Exact argmin of F over {-1,+1}^n by full enumeration; ties break to the
// lexicographically smallest vector (-1 before +1). Refuses n > 20.
std::vector<double> binary_optimum(const ConvexProblem& p);

// The step-size ceiling of the descent condition, in both printed shapes.
// The radical shape appears in the descent lemma itself and is what the
// descent proof uses, so it is the gating value everywhere in this lab. The
// compact cosine rewrite equals beta_smooth times the radical shape, not the
// radical shape itself; the factor is reported, never silently absorbed.
struct PhiForms {
  double radical = 0.0;
  double cosine = 0.0;
};
// Preconditions: lambda > 1, 1 <= k <= n, 0 < xi <= beta_smooth. Violations
// throw a domain error naming the argument.
PhiForms phi(double lambda, double k, double xi, double beta_smooth, double n);

// Geometry of binarization: for W^b = Sign(W-bar) and any other binary V^b,
//   1) |W^b - V^b| <= 2 |W-bar - V^b|
//   2) angle(W^b - V^b, W-bar - V^b) <= arccos sqrt(K/n)
// Margins are reported in squared form (distances) and inner-product form
// (angle), both nonnegative when the conclusions hold.
struct GeometryReport {
  int k = 0;
  double margin_distance = 0.0;  // 4|Wbar-Vb|^2 - |Wb-Vb|^2
  double inner = 0.0;            // <Wb-Vb, Wbar-Vb>
  double margin_angle = 0.0;     // inner^2 - (K/n)|Wb-Vb|^2|Wbar-Vb|^2, inner >= 0
  double angle = 0.0;
  double angle_bound = 0.0;      // arccos sqrt(K/n)
  bool ok = false;
};
GeometryReport check_geometry_lemma(const std::vector<double>& w_bar,
                                    const std::vector<double>& w_bin,
                                    const std::vector<double>& v_bin);

// One recorded step of clipped binary gradient descent. State fields
// describe time t (before the update); margin_descent spans t -> t+1.
struct StepRecord {
  int step = 0;
  std::vector<double> w_bar;  // state entering the step
  std::vector<double> w_bin;  // Sign(w_bar)
  int k = 0;             // coordinates disagreeing with W*
  double lambda = 0.0;   // |grad F(W^b_t)| / epsilon
  bool phi_defined = false;
  double phi_radical = 0.0;
  double phi_cosine = 0.0;
  bool precondition = false;  // k >= 1, lambda > 1, 0 < eta < phi_radical
  double dist_real = 0.0;     // |W-bar_t - W*|
  double dist_bin = 0.0;      // 2 sqrt(K_t)
  // conclusion 2: dist_real_t^2 - 4 (phi - eta) eta beta xi K_t - dist_real_{t+1}^2 > 0
  double margin_descent = 0.0;
  // conclusion 1 bracket on lambda, in the distance normalization the proof
  // establishes (|W^b - W*| = 2 sqrt K): lambda within
  // [(2 sqrt(K) xi - eps) / eps, (2 sqrt(K) beta + eps) / eps]
  double margin_lambda_low = 0.0;
  double margin_lambda_high = 0.0;
  // the same bracket with K substituted for 2 sqrt(K), as printed in the
  // source statement; tracked as a finding, not a gate
  double margin_lambda_low_printed = 0.0;
  double margin_lambda_high_printed = 0.0;
};

struct TraceRecord {
  double epsilon = 0.0;
  std::vector<double> w_star;
  std::vector<StepRecord> steps;
  std::vector<double> w_bar_final;
  int violations_descent = 0;        // precondition-passing steps breaking conclusion 2
  int violations_lambda = 0;         // ... breaking the corrected conclusion-1 bracket
  int violations_lambda_printed = 0; // ... breaking the printed bracket (finding)
};

// Clipped binary gradient descent: W-bar' = clip(W-bar - eta grad F(W^b)),
// W^b = Sign(W-bar). Records every step; inequality violations are counted,
// never thrown.
TraceRecord run_binary_gd(const ConvexProblem& p, double eta, std::vector<double> w_bar0,
                          int steps);

struct ProblemAudit {
  int problem_id = 0;
  int n = 0;
  double eta = 0.0;        // 0.5 * min positive phi over the pilot run
  int passing_steps = 0;   // precondition-passing steps in the audited run
  double slope = 0.0;      // LS slope of ln dist_real over the passing prefix
  bool slope_counted = false;  // prefix had >= 3 steps with positive distance
  TraceRecord trace;
};

struct DescentSuiteConfig {
  int problems = 100;
  int min_n = 4;
  int max_n = 12;
  int steps = 60;
  double pilot_eta_scale = 0.05;  // pilot eta = scale / beta_smooth
  uint64_t seed = 1;
};

struct DescentSuiteReport {
  DescentSuiteConfig cfg;
  std::vector<ProblemAudit> audits;
  int total_passing_steps = 0;
  int violations_descent = 0;
  int violations_lambda = 0;
  int violations_lambda_printed = 0;  // findings
  int slope_runs = 0;
  int slope_negative = 0;
  int regenerated_problems = 0;           // epsilon ~ 0 or no positive pilot phi
  double max_phi_form_ratio_error = 0.0;  // max |cosine / (beta * radical) - 1|
};

DescentSuiteReport run_descent_suite(const DescentSuiteConfig& cfg);

// One CSV row per recorded step:
// problem_id,step,k,lambda,phi,margin_1,margin_2,precondition_met
// margin_1 is the binding side of the conclusion-1 bracket, margin_2 the
// conclusion-2 descent margin, phi the radical (gating) shape.
std::string findings_csv(const DescentSuiteReport& r);

// Monte-Carlo bias of the estimator update cycle: M weights drawn from
// N(mu, sigma^2) clipped to [-1,1], sign-aggregated, each voter estimating
// back from the tally and its own weight; the table reports the mean of
// clip(alpha * mu_hat) against mu per alpha.
struct BiasRow {
  double alpha = 0.0;
  double mean_estimate = 0.0;
  double bias = 0.0;
};

struct BiasProbe {
  double m = 0.0;
  double mu = 0.0;
  double sigma = 0.0;
  int trials = 0;
  double mean_mu_hat = 0.0;        // mean raw estimate (alpha = 1, no clip)
  double unanimous_fraction = 0.0; // trials whose tally was 0 or M
  std::vector<BiasRow> rows;
  double best_alpha = 0.0;         // grid argmin |bias|
};

BiasProbe probe_theorem2(double m, double mu, double sigma,
                         const std::vector<double>& alpha_grid, int trials, uint64_t seed);

// Contraction audit of the estimation ratio mu_hat / w_bar over uniformly
// drawn feasible (tally, weight) pairs. The sharp analytic domain is
/// u * sign(w_bar) > -1/sqrt(2): inside it |ratio| < 1 must hold on every
// sample, outside it |ratio| >= 1 must hold on every sample (strongly
// opposing tallies legitimately flip the weight past its old magnitude).
struct ContractionAudit {
  double m = 0.0;
  long long samples = 0;
  long long on_domain = 0;
  long long on_domain_violations = 0;    // |ratio| >= 1 inside the domain
  long long off_domain_contractions = 0; // |ratio| < 1 outside the domain
  double min_ratio = 0.0;
  double max_ratio = 0.0;
  long long max_off_domain_tally_pos = -1;  // largest off-domain tally, w > 0
  long long min_off_domain_tally_neg = -1;  // smallest off-domain tally, w < 0
};

ContractionAudit contraction_audit(double m, long long samples, uint64_t seed);

}  // namespace bifl
