#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "qfmux/errors.hpp"
#include "qfmux/rng.hpp"

namespace qfmux::model {

enum class Family { LogPsnr, AtanSsim };

inline const char* family_name(Family f) {
  return f == Family::LogPsnr ? "log_psnr" : "atan_ssim";
}

// Two-parameter rate-utility characteristic. Rates are in kbit/s.
//   LogPsnr:  f(a, R) = a1 * ln(a2 * R)
//   AtanSsim: f(a, R) = a1 * atan(a2 * R)
struct SourceParams {
  Family family = Family::LogPsnr;
  double a1 = 1.0;  // utility scale (dB for LogPsnr, SSIM units for AtanSsim)
  double a2 = 1.0;  // inverse-rate scale, 1/(kbit/s)

  void validate() const {
    if (!(a1 > 0.0) || !std::isfinite(a1))
      throw std::domain_error("SourceParams: a1 must be positive");
    if (!(a2 > 0.0) || !std::isfinite(a2))
      throw std::domain_error("SourceParams: a2 must be positive");
  }
};

struct RateUtilitySample {
  double rate = 0.0;  // kbit/s, > 0
  double utility = 0.0;
};

// Random-walk description for the parameter vector; increments are
// independent zero-mean Gaussians, clamped componentwise afterwards.
struct ParamNoiseSpec {
  double sigma1_sq = 0.0;
  double sigma2_sq = 0.0;
  double a1_min = 0.01, a1_max = 10.0;
  double a2_min = 0.001, a2_max = 1.0;

  void validate() const {
    if (sigma1_sq < 0.0 || sigma2_sq < 0.0)
      throw std::domain_error("ParamNoiseSpec: variances must be >= 0");
    if (!(a1_min > 0.0 && a1_min < a1_max))
      throw std::domain_error("ParamNoiseSpec: a1 clamp bounds invalid");
    if (!(a2_min > 0.0 && a2_min < a2_max))
      throw std::domain_error("ParamNoiseSpec: a2 clamp bounds invalid");
  }
};

inline double eval_utility(const SourceParams& p, double rate) {
  switch (p.family) {
    case Family::LogPsnr:
      if (!(rate > 0.0)) throw std::domain_error("eval_utility: log model needs rate > 0");
      return p.a1 * std::log(p.a2 * rate);
    case Family::AtanSsim:
      if (rate < 0.0) throw std::domain_error("eval_utility: rate must be >= 0");
      return p.a1 * std::atan(p.a2 * rate);
  }
  throw std::logic_error("eval_utility: unknown family");
}

// Least utility reachable only asymptotically from above (AtanSsim) or
// +infinity for the unbounded log model.
inline double utility_supremum(const SourceParams& p) {
  return p.family == Family::AtanSsim ? p.a1 * M_PI / 2.0
                                      : std::numeric_limits<double>::infinity();
}

// Inverse of f with respect to rate.
inline double inverse_rate(const SourceParams& p, double utility) {
  switch (p.family) {
    case Family::LogPsnr:
      return std::exp(utility / p.a1) / p.a2;
    case Family::AtanSsim: {
      if (utility < 0.0)
        throw std::range_error("inverse_rate: utility below attainable range");
      if (utility >= utility_supremum(p))
        throw std::range_error("inverse_rate: utility at or above the atan asymptote");
      return std::tan(utility / p.a1) / p.a2;
    }
  }
  throw std::logic_error("inverse_rate: unknown family");
}

// d f / d rate.
inline double utility_rate_slope(const SourceParams& p, double rate) {
  switch (p.family) {
    case Family::LogPsnr:
      if (!(rate > 0.0)) throw std::domain_error("utility_rate_slope: rate must be > 0");
      return p.a1 / rate;
    case Family::AtanSsim: {
      if (rate < 0.0) throw std::domain_error("utility_rate_slope: rate must be >= 0");
      const double x = p.a2 * rate;
      return p.a1 * p.a2 / (1.0 + x * x);
    }
  }
  throw std::logic_error("utility_rate_slope: unknown family");
}

// (d f / d a1, d f / d a2).
struct ParamGradient {
  double d_a1 = 0.0;
  double d_a2 = 0.0;
};

inline ParamGradient utility_param_gradient(const SourceParams& p, double rate) {
  switch (p.family) {
    case Family::LogPsnr:
      if (!(rate > 0.0))
        throw std::domain_error("utility_param_gradient: rate must be > 0");
      return {std::log(p.a2 * rate), p.a1 / p.a2};
    case Family::AtanSsim: {
      if (rate < 0.0) throw std::domain_error("utility_param_gradient: rate must be >= 0");
      const double x = p.a2 * rate;
      return {std::atan(x), p.a1 * rate / (1.0 + x * x)};
    }
  }
  throw std::logic_error("utility_param_gradient: unknown family");
}

namespace detail {

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
};

inline LinearFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw fit_error("fit_model: samples share a single rate");
  return {sxy / sxx, my - sxy / sxx * mx};
}

inline double atan_sse(double a2, const std::vector<RateUtilitySample>& s, double* a1_out) {
  double num = 0.0, den = 0.0;
  for (const auto& smp : s) {
    const double g = std::atan(a2 * smp.rate);
    num += smp.utility * g;
    den += g * g;
  }
  const double a1 = den > 0.0 ? num / den : 0.0;
  if (a1_out) *a1_out = a1;
  double sse = 0.0;
  for (const auto& smp : s) {
    const double e = smp.utility - a1 * std::atan(a2 * smp.rate);
    sse += e * e;
  }
  return sse;
}

}  // namespace detail

struct AtanFitOptions {
  double a2_lo = 1e-5;
  double a2_hi = 10.0;
  int scan_points = 64;  // coarse log scan before the golden-section refine
};

// Fit (a1, a2) to sampled points.
//  - LogPsnr: exact linear least squares on U = a1*ln(R) + a1*ln(a2).
//  - AtanSsim: coarse log-space scan then golden-section search on a2, with
//    the optimal a1 in closed form (regression through the origin of U on
//    atan(a2*R)); converges when the bracket width drops below 1e-8 * a2.
inline SourceParams fit_model(Family family, const std::vector<RateUtilitySample>& samples,
                              const AtanFitOptions& opt = {}) {
  if (samples.size() < 2) throw fit_error("fit_model: need at least 2 samples");
  for (const auto& s : samples) {
    if (!(s.rate > 0.0)) throw fit_error("fit_model: rates must be positive");
  }

  if (family == Family::LogPsnr) {
    std::vector<double> x, y;
    x.reserve(samples.size());
    y.reserve(samples.size());
    for (const auto& s : samples) {
      x.push_back(std::log(s.rate));
      y.push_back(s.utility);
    }
    const auto ls = detail::least_squares(x, y);
    if (!(ls.slope > 0.0)) throw fit_error("fit_model: fitted a1 not positive");
    const double a1 = ls.slope;
    const double a2 = std::exp(ls.intercept / a1);
    if (!(a2 > 0.0) || !std::isfinite(a2))
      throw fit_error("fit_model: fitted a2 not positive");
    return {Family::LogPsnr, a1, a2};
  }

  // AtanSsim branch.
  bool distinct = false;
  for (std::size_t i = 1; i < samples.size(); ++i)
    if (samples[i].rate != samples[0].rate) distinct = true;
  if (!distinct) throw fit_error("fit_model: samples share a single rate");

  const double llo = std::log(opt.a2_lo), lhi = std::log(opt.a2_hi);
  double best_sse = std::numeric_limits<double>::infinity();
  int best_idx = 0;
  for (int i = 0; i < opt.scan_points; ++i) {
    const double a2 =
        std::exp(llo + (lhi - llo) * static_cast<double>(i) / (opt.scan_points - 1));
    const double sse = detail::atan_sse(a2, samples, nullptr);
    if (sse < best_sse) {
      best_sse = sse;
      best_idx = i;
    }
  }
  const auto grid_a2 = [&](int i) {
    i = std::clamp(i, 0, opt.scan_points - 1);
    return std::exp(llo + (lhi - llo) * static_cast<double>(i) / (opt.scan_points - 1));
  };
  double lo = grid_a2(best_idx - 1);
  double hi = grid_a2(best_idx + 1);

  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = hi - gr * (hi - lo);
  double d = lo + gr * (hi - lo);
  double fc = detail::atan_sse(c, samples, nullptr);
  double fd = detail::atan_sse(d, samples, nullptr);
  while (hi - lo > 1e-8 * (0.5 * (lo + hi))) {
    if (fc < fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - gr * (hi - lo);
      fc = detail::atan_sse(c, samples, nullptr);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + gr * (hi - lo);
      fd = detail::atan_sse(d, samples, nullptr);
    }
  }
  double a1 = 0.0;
  const double a2 = 0.5 * (lo + hi);
  detail::atan_sse(a2, samples, &a1);
  if (!(a1 > 0.0)) throw fit_error("fit_model: fitted a1 not positive");
  return {Family::AtanSsim, a1, a2};
}

// Squared correlation between observed and predicted series,
// (sum (x-xbar)(y-ybar))^2 / (sum (x-xbar)^2 * sum (y-ybar)^2).
inline double correlation_r2(const std::vector<double>& observed,
                             const std::vector<double>& predicted) {
  const std::size_t n = observed.size();
  if (n != predicted.size() || n < 2)
    throw std::invalid_argument("correlation_r2: need equal-length series, n >= 2");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += observed[i];
    my += predicted[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = observed[i] - mx;
    const double dy = predicted[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw std::domain_error("correlation_r2: zero variance in a series");
  return (sxy * sxy) / (sxx * syy);
}

// One step of the parameter random walk; clamping keeps the result valid.
inline SourceParams step_params(const SourceParams& p, const ParamNoiseSpec& noise,
                                RngStream& rng) {
  const double d1 = rng.gaussian(0.0, std::sqrt(noise.sigma1_sq));
  const double d2 = rng.gaussian(0.0, std::sqrt(noise.sigma2_sq));
  SourceParams out = p;
  out.a1 = std::clamp(p.a1 + d1, noise.a1_min, noise.a1_max);
  out.a2 = std::clamp(p.a2 + d2, noise.a2_min, noise.a2_max);
  return out;
}

}  // namespace qfmux::model
