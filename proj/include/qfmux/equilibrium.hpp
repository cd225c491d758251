#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "qfmux/errors.hpp"
#include "qfmux/source_model.hpp"

namespace qfmux::eq {

// Closed-loop equilibrium: common utility, per-stream rates, and the implied
// buffer/accumulator states. pi_eq/phi_eq are filled only when gains are
// supplied to the solve.
struct EquilibriumPoint {
  double u_eq = 0.0;
  std::vector<double> r_eq;    // kbit/s
  std::vector<double> b_eq;    // bits
  std::vector<double> pi_eq;   // s*slots (delay mode) or kbit*slots (buffer mode)
  std::vector<double> phi_eq;  // utility*slots
};

struct SolveOptions {
  double rel_tol = 1e-9;     // |sum f^-1(U) - Rc| < rel_tol * Rc
  int max_doublings = 60;    // bracket growth budget
  double rate_cap_kbps = 1e9;  // per-stream sanity cap on equilibrium rates
};

struct Feasibility {
  bool feasible = false;
  std::string diagnostic;
};

namespace detail {

// Sum of inverse characteristics at utility u minus Rc; strictly increasing
// in u on its domain. Returns +inf past any stream's representable range.
inline double rate_residual(const std::vector<model::SourceParams>& params, double u,
                            double rc) {
  double sum = 0.0;
  for (const auto& p : params) {
    double r;
    if (p.family == model::Family::AtanSsim && u >= model::utility_supremum(p))
      return std::numeric_limits<double>::infinity();
    r = model::inverse_rate(p, u);
    if (!std::isfinite(r)) return std::numeric_limits<double>::infinity();
    sum += r;
  }
  return sum - rc;
}

// Least utility the whole set can share (0 when any arctan stream is present,
// unbounded below otherwise) and the lowest asymptotic cap across streams.
inline void utility_domain(const std::vector<model::SourceParams>& params, double& lo,
                           double& cap) {
  lo = -std::numeric_limits<double>::infinity();
  cap = std::numeric_limits<double>::infinity();
  for (const auto& p : params) {
    if (p.family == model::Family::AtanSsim) {
      lo = std::max(lo, 0.0);
      cap = std::min(cap, model::utility_supremum(p));
    }
  }
}

struct Bracket {
  double lo = 0.0;
  double hi = 0.0;
};

// Grow a bracket [lo, hi] with residual(lo) <= 0 <= residual(hi) outward from
// the mean utility at R0 = Rc/N.
inline Bracket find_bracket(const std::vector<model::SourceParams>& params, double rc,
                            const SolveOptions& opt) {
  const double n = static_cast<double>(params.size());
  const double r0 = rc / n;
  double u_lo_domain, u_cap;
  utility_domain(params, u_lo_domain, u_cap);

  double u0 = 0.0;
  for (const auto& p : params) u0 += model::eval_utility(p, r0);
  u0 /= n;
  if (u0 >= u_cap) u0 = 0.5 * u_cap;
  if (u0 <= u_lo_domain) u0 = std::isfinite(u_cap) ? 0.5 * u_cap : u_lo_domain + 1.0;

  double step = std::max(1.0, std::abs(u0));
  double lo = u0, hi = u0;
  double res_lo = rate_residual(params, lo, rc);
  double res_hi = res_lo;
  int doublings = 0;
  while (res_lo > 0.0) {
    lo -= step;
    step *= 2.0;
    if (lo < u_lo_domain) lo = u_lo_domain;
    res_lo = rate_residual(params, lo, rc);
    if (lo == u_lo_domain && res_lo > 0.0)
      throw infeasible_error(
          "solve_equilibrium: channel rate not reachable above the utility domain floor");
    if (++doublings > opt.max_doublings)
      throw infeasible_error("solve_equilibrium: bracket growth exhausted (low side)");
  }
  step = std::max(1.0, std::abs(u0));
  doublings = 0;
  while (res_hi < 0.0) {
    hi += step;
    step *= 2.0;
    if (hi >= u_cap) hi = std::nextafter(u_cap, -std::numeric_limits<double>::infinity());
    res_hi = rate_residual(params, hi, rc);
    if (hi >= u_cap && res_hi < 0.0)
      throw infeasible_error(
          "solve_equilibrium: channel rate not reachable below the utility asymptote");
    if (++doublings > opt.max_doublings)
      throw infeasible_error("solve_equilibrium: bracket growth exhausted (high side)");
  }
  return {lo, hi};
}

}  // namespace detail

inline EquilibriumPoint solve_equilibrium(const std::vector<model::SourceParams>& params,
                                          double rc, const SolveOptions& opt);

// Unique-solution check for sum_i f^-1(a_i, U) = Rc; the log family has an
// unbounded inverse, the arctan family is probed by running the bracket
// search (including the per-stream rate sanity cap).
inline Feasibility check_feasibility(const std::vector<model::SourceParams>& params,
                                     double rc, const SolveOptions& opt = {}) {
  if (params.empty()) return {false, "no streams"};
  if (!(rc > 0.0)) return {false, "channel rate must be positive"};
  bool any_atan = false;
  for (const auto& p : params) {
    p.validate();
    if (p.family == model::Family::AtanSsim) any_atan = true;
  }
  if (!any_atan)
    return {true, "log-family inverses are unbounded; a unique equilibrium exists"};
  try {
    detail::find_bracket(params, rc, opt);
    solve_equilibrium(params, rc, opt);
  } catch (const infeasible_error& e) {
    return {false, e.what()};
  }
  return {true, "bracket found below the lowest arctan asymptote"};
}

// Solve sum_i f^-1(a_i, U) = Rc for the common utility by bisection, then
// recover the per-stream rates.
inline EquilibriumPoint solve_equilibrium(const std::vector<model::SourceParams>& params,
                                          double rc, const SolveOptions& opt = {}) {
  if (params.empty()) throw infeasible_error("solve_equilibrium: no streams");
  if (!(rc > 0.0)) throw infeasible_error("solve_equilibrium: channel rate must be > 0");
  for (const auto& p : params) p.validate();

  auto bracket = detail::find_bracket(params, rc, opt);
  double lo = bracket.lo, hi = bracket.hi;
  double u = 0.5 * (lo + hi);
  const double tol = opt.rel_tol * rc;
  for (int it = 0; it < 2000; ++it) {
    u = 0.5 * (lo + hi);
    const double res = detail::rate_residual(params, u, rc);
    if (std::abs(res) < tol) break;
    if (res > 0.0)
      hi = u;
    else
      lo = u;
    if (hi - lo <= std::abs(u) * 1e-16) break;
  }

  EquilibriumPoint point;
  point.u_eq = u;
  point.r_eq.reserve(params.size());
  for (const auto& p : params) {
    const double r = model::inverse_rate(p, u);
    if (!(r <= opt.rate_cap_kbps))
      throw infeasible_error("solve_equilibrium: equilibrium rate beyond the sanity cap");
    point.r_eq.push_back(r);
  }
  return point;
}

// Everything the accumulator back-solve needs beyond the characteristics.
struct EquilibriumContext {
  double ki_t = 0.0;
  double ki_e = 0.0;
  double T = 1.0 / 3.0;
  double tau0_s = 1.5;
  double b0_bits = 4e5;
  bool buffer_level_mode = false;
};

// Full equilibrium including buffers and PI accumulators:
//   B_eq = tau0 * R_eq (delay mode) or B0 (buffer mode)
//   Pi_eq = (R0 - R_eq) * T / Ki_e
//   phi_eq = (R_eq - R0) / Ki_t   (zero-sum-consistent reading)
inline EquilibriumPoint solve_equilibrium(const std::vector<model::SourceParams>& params,
                                          double rc, const EquilibriumContext& ctx,
                                          const SolveOptions& opt = {}) {
  if (ctx.ki_t == 0.0 || ctx.ki_e == 0.0)
    throw infeasible_error("solve_equilibrium: accumulators undefined with zero integral gains");
  EquilibriumPoint point = solve_equilibrium(params, rc, opt);
  const double r0 = rc / static_cast<double>(params.size());
  point.b_eq.reserve(params.size());
  point.pi_eq.reserve(params.size());
  point.phi_eq.reserve(params.size());
  for (double r : point.r_eq) {
    point.b_eq.push_back(ctx.buffer_level_mode ? ctx.b0_bits : ctx.tau0_s * r * 1000.0);
    point.pi_eq.push_back((r0 - r) * ctx.T / ctx.ki_e);
    point.phi_eq.push_back((r - r0) / ctx.ki_t);
  }
  return point;
}

}  // namespace qfmux::eq
