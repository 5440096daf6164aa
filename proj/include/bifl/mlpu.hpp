#pragma once

#include <string>

namespace bifl::mlpu {

// Sign convention used across the whole codebase: Sign(0) = -1, so binary
// weights are always in {-1, +1}.
inline int sign_of(double w) { return w > 0.0 ? 1 : -1; }

// P(N(0,1) > a). Built so survival_z(a) + survival_z(-a) == 1 to float
// rounding for every a.
double survival_z(double a);

// log survival_z(a); accurate on the solver domain |a| <= 10 and meaningful
// out to |a| ~ 37 where erfc underflows.
double ln_survival(double a);

// Reduced per-parameter log-likelihood in u = mu/sigma, after profiling out
// sigma. m_p is the (possibly fractional) positive-vote tally among m
// virtual clients; own_vote subtracts this client's vote from its side of
// the tally. Coefficients within 1e-9 below zero clamp to zero; anything
// lower is an infeasible tally and throws.
double objective_f(double u, double m, double m_p, int sign_w, bool own_vote = true);

// Maximizer of objective_f over [-8, 8]: coarse scan at step 0.25, then
// golden-section to |bracket| <= tol. An endpoint argmax is a valid
// degenerate bracket (unanimous tallies want the boundary); only a
// nowhere-finite objective throws.
double solve_u(double m, double m_p, int sign_w, double tol = 1e-6, bool own_vote = true);

// Contraction ratio mu_hat/w_bar = u / v(u, s) and its exact inverse.
// ratio < 1 always; ratio > -1 iff u*s > -1/sqrt(2).
double ratio_from_u(double u, int sign_w);
double u_from_ratio(double rho, int sign_w);

// v = (u + s*sqrt(u^2+4))/2, the profiled sigma scale; never zero.
double v_from_u(double u, int sign_w);

// mu_hat = u * w_bar / v.
double mu_hat(double u, double w_bar);

// One coefficient set for the logarithmic fast path at a fixed virtual m.
// The fit runs in ratio space, where the curve is log-shaped (in u space it
// is S-shaped and the model cannot follow it): solve_u at every integer
// tally, transform through ratio_from_u, least-squares
// rho ~ a1 + a2*ln(m_p + a3). The w<0 branch is the exact mirror
// rho ~ a4 + a5*ln(a6 - m_p) with a4=a1, a5=a2, a6=m+a3.
// max_fit_error is sup |estimate_u_fast - solve_u| over the fitted tallies
// in u units; max_fit_error_ratio is the same sup in ratio units.
struct CurveFit {
  double m = 0.0;
  bool own_vote = true;
  double a1 = 0.0, a2 = 0.0, a3 = 0.0;
  double a4 = 0.0, a5 = 0.0, a6 = 0.0;
  double max_fit_error = 0.0;
  double max_fit_error_ratio = 0.0;
  int sample_count = 0;
};

// Fits the fast path over integer tallies {1 .. ceil(m)-1}; needs at least
// three samples (m > 3).
CurveFit fit_curve(double m, bool own_vote = true);

// Fast estimate of u: evaluate the fitted ratio model, invert exactly.
// Falls back to solve_u (and reports it via fell_back) when the log
// argument or the inversion domain rho < 1 is violated.
double estimate_u_fast(const CurveFit& fit, double m_p, int sign_w, bool* fell_back = nullptr);

// w_bar' = clip(alpha * mu_hat, -1, 1).
double update_weight(double mu, double alpha);

// Tally from an aggregated weight: m_p = (w_tilde + 1) * m / 2. Feasible
// aggregates give m_p in [0, m] up to 1e-9; outside that throws.
double count_positive(double w_tilde, double m);

// Virtual client count m_i = total/local, kept unrounded.
double virtual_m(double total, double local);

// Versioned one-fit-per-file text record; round-trips exactly.
std::string curvefit_record(const CurveFit& fit);
CurveFit parse_curvefit(const std::string& text);

}  // namespace bifl::mlpu
