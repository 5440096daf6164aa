#include "bifl/mlpu.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace bifl::mlpu {
namespace {

constexpr double kULo = -8.0;
constexpr double kUHi = 8.0;
constexpr double kGolden = 0.6180339887498949;

// sqrt(u^2+4) + s*u without cancellation on either sign of u.
double radical_plus(double u, int s) {
  double r = std::sqrt(u * u + 4.0);
  double su = s > 0 ? u : -u;
  if (su >= 0.0) return r + su;
  return 4.0 / (r - su);
}

double clamp_coeff(double c, const char* side) {
  if (c >= 0.0) return c;
  if (c >= -1e-9) return 0.0;
  throw std::runtime_error(std::string("infeasible tally: negative ") + side +
                           " coefficient " + std::to_string(c));
}

}  // namespace

double survival_z(double a) {
  // Mirror the negative half off the positive half so z(a) + z(-a) == 1
  // holds to rounding by construction.
  if (a >= 0.0) return 0.5 * std::erfc(a / std::numbers::sqrt2);
  return 1.0 - 0.5 * std::erfc(-a / std::numbers::sqrt2);
}

double ln_survival(double a) {
  if (a <= 0.0) return std::log(survival_z(a));
  // erfc stays normal out to a ~ 37; the direct log is accurate there.
  return std::log(0.5 * std::erfc(a / std::numbers::sqrt2));
}

double objective_f(double u, double m, double m_p, int sign_w, bool own_vote) {
  double cp = m_p - ((own_vote && sign_w > 0) ? 1.0 : 0.0);
  double cn = (m - m_p) - ((own_vote && sign_w < 0) ? 1.0 : 0.0);
  cp = clamp_coeff(cp, "positive");
  cn = clamp_coeff(cn, "negative");
  double f = -std::numbers::ln2;
  if (cp > 0.0) f += cp * ln_survival(-u);  // ln P(N <= u)
  if (cn > 0.0) f += cn * ln_survival(u);   // ln P(N <= -u)
  double rp = radical_plus(u, sign_w);
  double rm = radical_plus(u, -sign_w);
  f += std::log(rp) - rm * rm / 8.0;
  return f;
}

double solve_u(double m, double m_p, int sign_w, double tol, bool own_vote) {
  auto f = [&](double u) { return objective_f(u, m, m_p, sign_w, own_vote); };

  constexpr int kSteps = 64;  // step 0.25 over [-8, 8]
  int best = -1;
  double fbest = -std::numeric_limits<double>::infinity();
  for (int k = 0; k <= kSteps; ++k) {
    double x = kULo + 0.25 * k;
    double fx = f(x);
    if (std::isfinite(fx) && fx > fbest) {
      fbest = fx;
      best = k;
    }
  }
  if (best < 0) throw std::runtime_error("u solver: objective not finite anywhere on [-8, 8]");

  // Endpoint argmax leaves a one-sided (degenerate) bracket; golden-section
  // then converges onto the boundary, which is the correct answer for
  // unanimous tallies.
  double a = kULo + 0.25 * std::max(0, best - 1);
  double b = kULo + 0.25 * std::min(kSteps, best + 1);
  double c = b - kGolden * (b - a);
  double d = a + kGolden * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kGolden * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kGolden * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

double v_from_u(double u, int sign_w) {
  return (sign_w > 0 ? 0.5 : -0.5) * radical_plus(u, sign_w);
}

double ratio_from_u(double u, int sign_w) {
  double su = sign_w > 0 ? u : -u;
  return 2.0 * su / radical_plus(u, sign_w);
}

double u_from_ratio(double rho, int sign_w) {
  if (!(rho < 1.0))
    throw std::runtime_error("ratio inversion needs rho < 1, got " + std::to_string(rho));
  double u = rho / std::sqrt(1.0 - rho);
  return sign_w > 0 ? u : -u;
}

double mu_hat(double u, double w_bar) { return u * w_bar / v_from_u(u, sign_of(w_bar)); }

double update_weight(double mu, double alpha) { return std::clamp(alpha * mu, -1.0, 1.0); }

double count_positive(double w_tilde, double m) {
  double m_p = (w_tilde + 1.0) * m / 2.0;
  if (m_p < -1e-9 || m_p > m + 1e-9)
    throw std::runtime_error("aggregate weight " + std::to_string(w_tilde) +
                             " implies tally outside [0, m]");
  return std::clamp(m_p, 0.0, m);
}

double virtual_m(double total, double local) {
  if (local <= 0.0) throw std::runtime_error("virtual m: local dataset size must be positive");
  if (total < local) throw std::runtime_error("virtual m: total smaller than local shard");
  return total / local;
}

namespace {

struct LinFit {
  double a1 = 0.0, a2 = 0.0, sse = std::numeric_limits<double>::infinity();
};

LinFit ls_for_a3(const std::vector<double>& mp, const std::vector<double>& rho, double a3) {
  size_t n = mp.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    double x = std::log(mp[i] + a3);
    sx += x;
    sy += rho[i];
    sxx += x * x;
    sxy += x * rho[i];
  }
  double var = sxx - sx * sx / double(n);
  LinFit out;
  if (var <= 0.0) return out;
  out.a2 = (sxy - sx * sy / double(n)) / var;
  out.a1 = (sy - out.a2 * sx) / double(n);
  out.sse = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double e = rho[i] - out.a1 - out.a2 * std::log(mp[i] + a3);
    out.sse += e * e;
  }
  return out;
}

}  // namespace

CurveFit fit_curve(double m, bool own_vote) {
  int hi = int(std::ceil(m)) - 1;
  if (hi < 3)
    throw std::runtime_error("curve fit needs at least 3 tally samples, m=" + std::to_string(m));

  std::vector<double> mp(hi), us(hi), rho(hi);
  for (int k = 0; k < hi; ++k) {
    mp[k] = k + 1.0;
    us[k] = solve_u(m, mp[k], +1, 1e-6, own_vote);
    rho[k] = ratio_from_u(us[k], +1);
  }

  // Profile the nonlinear offset: closed-form (a1, a2) per a3, dense scan
  // near the pole at -min(mp) plus a wide tail, then golden-section refine.
  double const lo3 = -mp[0] + 1e-6;
  std::vector<double> grid;
  for (int i = 0; i <= 400; ++i) grid.push_back(lo3 + (0.0 - lo3) * i / 400.0);
  for (int i = 1; i <= 400; ++i) grid.push_back(2.0 * m * i / 400.0);
  double best_a3 = grid[0], best_sse = std::numeric_limits<double>::infinity();
  double prev = grid[0], next = grid.back();
  for (size_t i = 0; i < grid.size(); ++i) {
    double sse = ls_for_a3(mp, rho, grid[i]).sse;
    if (sse < best_sse) {
      best_sse = sse;
      best_a3 = grid[i];
      prev = i > 0 ? grid[i - 1] : grid[0];
      next = i + 1 < grid.size() ? grid[i + 1] : grid.back();
    }
  }
  double a = prev, b = next;
  double c = b - kGolden * (b - a);
  double d = a + kGolden * (b - a);
  double fc = ls_for_a3(mp, rho, c).sse;
  double fd = ls_for_a3(mp, rho, d).sse;
  while (b - a > 1e-9) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kGolden * (b - a);
      fc = ls_for_a3(mp, rho, c).sse;
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kGolden * (b - a);
      fd = ls_for_a3(mp, rho, d).sse;
    }
  }
  best_a3 = 0.5 * (a + b);
  LinFit lin = ls_for_a3(mp, rho, best_a3);

  CurveFit fit;
  fit.m = m;
  fit.own_vote = own_vote;
  fit.a1 = lin.a1;
  fit.a2 = lin.a2;
  fit.a3 = best_a3;
  fit.a4 = lin.a1;
  fit.a5 = lin.a2;
  fit.a6 = m + best_a3;
  fit.sample_count = hi;
  for (int k = 0; k < hi; ++k) {
    double rho_hat = fit.a1 + fit.a2 * std::log(mp[k] + fit.a3);
    fit.max_fit_error_ratio = std::max(fit.max_fit_error_ratio, std::abs(rho_hat - rho[k]));
    double err_u = rho_hat < 1.0 - 1e-12
                       ? std::abs(u_from_ratio(rho_hat, +1) - us[k])
                       : std::numeric_limits<double>::infinity();
    fit.max_fit_error = std::max(fit.max_fit_error, err_u);
  }
  return fit;
}

double estimate_u_fast(const CurveFit& fit, double m_p, int sign_w, bool* fell_back) {
  if (fell_back) *fell_back = false;
  double arg = sign_w > 0 ? m_p + fit.a3 : fit.a6 - m_p;
  if (arg > 0.0) {
    double rho = sign_w > 0 ? fit.a1 + fit.a2 * std::log(arg) : fit.a4 + fit.a5 * std::log(arg);
    if (rho < 1.0 - 1e-12) return u_from_ratio(rho, sign_w);
  }
  if (fell_back) *fell_back = true;
  return solve_u(fit.m, m_p, sign_w, 1e-6, fit.own_vote);
}

std::string curvefit_record(const CurveFit& fit) {
  char buf[640];
  std::snprintf(buf, sizeof buf,
                "bifl-curvefit v1\n"
                "m %.17g\n"
                "own_vote %d\n"
                "a1 %.17g\na2 %.17g\na3 %.17g\na4 %.17g\na5 %.17g\na6 %.17g\n"
                "samples %d\n"
                "max_fit_error_u %.17g\n"
                "max_fit_error_ratio %.17g\n",
                fit.m, fit.own_vote ? 1 : 0, fit.a1, fit.a2, fit.a3, fit.a4, fit.a5, fit.a6,
                fit.sample_count, fit.max_fit_error, fit.max_fit_error_ratio);
  return buf;
}

CurveFit parse_curvefit(const std::string& text) {
  std::istringstream in(text);
  std::string header, version;
  in >> header >> version;
  if (header != "bifl-curvefit" || version != "v1")
    throw std::runtime_error("curve fit record: bad header '" + header + " " + version + "'");
  CurveFit fit;
  std::string key;
  auto want = [&](const char* name, auto& dst) {
    in >> key >> dst;
    if (!in || key != name)
      throw std::runtime_error("curve fit record: expected field '" + std::string(name) + "'");
  };
  int vote = 0;
  want("m", fit.m);
  want("own_vote", vote);
  fit.own_vote = vote != 0;
  want("a1", fit.a1);
  want("a2", fit.a2);
  want("a3", fit.a3);
  want("a4", fit.a4);
  want("a5", fit.a5);
  want("a6", fit.a6);
  want("samples", fit.sample_count);
  want("max_fit_error_u", fit.max_fit_error);
  want("max_fit_error_ratio", fit.max_fit_error_ratio);
  return fit;
}

}  // namespace bifl::mlpu
