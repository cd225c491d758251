#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "qfmux/rng.hpp"
#include "qfmux/source_model.hpp"

using namespace qfmux::model;

namespace {

// Central finite difference in rate, h = 1e-4 * R.
double fd_rate_slope(const SourceParams& p, double rate) {
  const double h = 1e-4 * rate;
  return (eval_utility(p, rate + h) - eval_utility(p, rate - h)) / (2.0 * h);
}

ParamGradient fd_param_gradient(const SourceParams& p, double rate) {
  SourceParams up = p, dn = p;
  const double h1 = 1e-5 * p.a1;
  up.a1 = p.a1 + h1;
  dn.a1 = p.a1 - h1;
  const double g1 = (eval_utility(up, rate) - eval_utility(dn, rate)) / (2.0 * h1);
  up = dn = p;
  const double h2 = 1e-5 * p.a2;
  up.a2 = p.a2 + h2;
  dn.a2 = p.a2 - h2;
  const double g2 = (eval_utility(up, rate) - eval_utility(dn, rate)) / (2.0 * h2);
  return {g1, g2};
}

SourceParams random_params(Family fam, qfmux::RngStream& rng) {
  if (fam == Family::LogPsnr) return {fam, rng.uniform(0.05, 3.0), rng.uniform(0.01, 0.5)};
  return {fam, rng.uniform(0.3, 0.9), rng.uniform(0.005, 0.3)};
}

}  // namespace

TEST_CASE("eval_utility closed forms") {
  SourceParams unit{Family::LogPsnr, 1.0, 1.0};
  CHECK(eval_utility(unit, 1.0) == doctest::Approx(0.0));

  SourceParams prog1{Family::LogPsnr, 1.11, 0.15};
  CHECK(eval_utility(prog1, 2000.0) == doctest::Approx(1.11 * std::log(300.0)).epsilon(1e-14));

  SourceParams ssim{Family::AtanSsim, 0.64, 0.037};
  const double cap = 0.64 * M_PI / 2.0;
  CHECK(eval_utility(ssim, 1e9) == doctest::Approx(cap).epsilon(1e-7));
  CHECK(eval_utility(ssim, 1e9) < cap);

  CHECK_THROWS_AS(eval_utility(prog1, 0.0), std::domain_error);
  CHECK_THROWS_AS(eval_utility(prog1, -5.0), std::domain_error);
  CHECK(eval_utility(ssim, 0.0) == doctest::Approx(0.0));
}

TEST_CASE("inverse_rate closed forms and range errors") {
  SourceParams unit{Family::LogPsnr, 1.0, 1.0};
  CHECK(inverse_rate(unit, 0.0) == doctest::Approx(1.0).epsilon(1e-14));

  SourceParams prog1{Family::LogPsnr, 1.11, 0.15};
  const double u = eval_utility(prog1, 1669.9);
  CHECK(inverse_rate(prog1, u) == doctest::Approx(1669.9).epsilon(1e-12));

  SourceParams ssim{Family::AtanSsim, 0.64, 0.037};
  CHECK_THROWS_AS(inverse_rate(ssim, 0.64 * M_PI / 2.0), std::range_error);
  CHECK_THROWS_AS(inverse_rate(ssim, -0.1), std::range_error);
}

TEST_CASE("round trip inverse_rate . eval_utility over random draws") {
  qfmux::RngStream rng(11);
  for (int i = 0; i < 500; ++i) {
    const Family fam = (i % 2 == 0) ? Family::LogPsnr : Family::AtanSsim;
    const SourceParams p = random_params(fam, rng);
    const double rate = rng.uniform(20.0, 5000.0);
    const double u = eval_utility(p, rate);
    if (fam == Family::AtanSsim && u >= utility_supremum(p)) continue;
    const double back = inverse_rate(p, u);
    CHECK(back == doctest::Approx(rate).epsilon(1e-10));
    CHECK(eval_utility(p, back) == doctest::Approx(u).epsilon(1e-10));
  }
}

TEST_CASE("monotonicity in rate") {
  qfmux::RngStream rng(12);
  for (int i = 0; i < 200; ++i) {
    const Family fam = (i % 2 == 0) ? Family::LogPsnr : Family::AtanSsim;
    const SourceParams p = random_params(fam, rng);
    const double ra = rng.uniform(1.0, 2500.0);
    const double rb = ra + rng.uniform(1.0, 2500.0);
    CHECK(eval_utility(p, ra) < eval_utility(p, rb));
  }
}

TEST_CASE("utility_rate_slope closed forms") {
  SourceParams lp{Family::LogPsnr, 2.0, 0.7};
  CHECK(utility_rate_slope(lp, 2.0) == doctest::Approx(1.0).epsilon(1e-14));

  SourceParams at{Family::AtanSsim, 1.0, 1.0};
  CHECK(utility_rate_slope(at, 0.0) == doctest::Approx(1.0).epsilon(1e-14));

  CHECK_THROWS_AS(utility_rate_slope(lp, 0.0), std::domain_error);
}

TEST_CASE("slopes match central finite differences") {
  qfmux::RngStream rng(13);
  for (int i = 0; i < 1000; ++i) {
    const Family fam = (i % 2 == 0) ? Family::LogPsnr : Family::AtanSsim;
    const SourceParams p = random_params(fam, rng);
    const double rate = rng.uniform(20.0, 5000.0);
    const double analytic = utility_rate_slope(p, rate);
    const double fd = fd_rate_slope(p, rate);
    CHECK(analytic == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("utility_param_gradient closed forms") {
  SourceParams prog1{Family::LogPsnr, 1.11, 0.15};
  const auto g = utility_param_gradient(prog1, 1000.0);
  CHECK(g.d_a1 == doctest::Approx(std::log(150.0)).epsilon(1e-14));
  CHECK(g.d_a2 == doctest::Approx(1.11 / 0.15).epsilon(1e-14));

  SourceParams at{Family::AtanSsim, 0.64, 0.037};
  const auto g0 = utility_param_gradient(at, 0.0);
  CHECK(g0.d_a1 == 0.0);
  CHECK(g0.d_a2 == 0.0);
}

TEST_CASE("param gradients match finite differences") {
  qfmux::RngStream rng(14);
  for (int i = 0; i < 1000; ++i) {
    const Family fam = (i % 2 == 0) ? Family::LogPsnr : Family::AtanSsim;
    const SourceParams p = random_params(fam, rng);
    const double rate = rng.uniform(20.0, 5000.0);
    const auto an = utility_param_gradient(p, rate);
    const auto fd = fd_param_gradient(p, rate);
    CHECK(an.d_a1 == doctest::Approx(fd.d_a1).epsilon(1e-6));
    CHECK(an.d_a2 == doctest::Approx(fd.d_a2).epsilon(1e-6));
  }
}

TEST_CASE("fit_model recovers log parameters exactly from noiseless samples") {
  const SourceParams truth{Family::LogPsnr, 1.11, 0.15};
  std::vector<RateUtilitySample> samples;
  for (double r : {80.0, 200.0, 800.0, 2000.0})
    samples.push_back({r, eval_utility(truth, r)});
  const auto fit = fit_model(Family::LogPsnr, samples);
  CHECK(fit.a1 == doctest::Approx(1.11).epsilon(1e-6));
  CHECK(fit.a2 == doctest::Approx(0.15).epsilon(1e-6));
}

TEST_CASE("fit_model with two log samples interpolates exactly") {
  const SourceParams truth{Family::LogPsnr, 0.8, 0.21};
  std::vector<RateUtilitySample> samples = {{100.0, eval_utility(truth, 100.0)},
                                            {900.0, eval_utility(truth, 900.0)}};
  const auto fit = fit_model(Family::LogPsnr, samples);
  for (const auto& s : samples)
    CHECK(eval_utility(fit, s.rate) == doctest::Approx(s.utility).epsilon(1e-12));
}

TEST_CASE("fit_model recovers atan parameters from noiseless samples") {
  const SourceParams truth{Family::AtanSsim, 0.64, 0.037};
  std::vector<RateUtilitySample> samples;
  for (double r : {80.0, 200.0, 800.0, 2000.0})
    samples.push_back({r, eval_utility(truth, r)});
  const auto fit = fit_model(Family::AtanSsim, samples);
  CHECK(fit.a1 == doctest::Approx(0.64).epsilon(1e-4));
  CHECK(fit.a2 == doctest::Approx(0.037).epsilon(1e-4));
}

TEST_CASE("fit_model error paths") {
  std::vector<RateUtilitySample> one = {{100.0, 3.0}};
  CHECK_THROWS_AS(fit_model(Family::LogPsnr, one), qfmux::fit_error);

  std::vector<RateUtilitySample> same = {{100.0, 3.0}, {100.0, 4.0}, {100.0, 5.0}};
  CHECK_THROWS_AS(fit_model(Family::LogPsnr, same), qfmux::fit_error);
  CHECK_THROWS_AS(fit_model(Family::AtanSsim, same), qfmux::fit_error);

  // Decreasing utilities force a non-positive a1.
  std::vector<RateUtilitySample> dec = {{100.0, 5.0}, {400.0, 3.0}, {1600.0, 1.0}};
  CHECK_THROWS_AS(fit_model(Family::LogPsnr, dec), qfmux::fit_error);
}

TEST_CASE("correlation_r2 basics") {
  std::vector<double> x = {1.0, 2.0, 4.0, 8.0};
  CHECK(correlation_r2(x, x) == doctest::Approx(1.0).epsilon(1e-14));

  std::vector<double> neg = {-1.0, -2.0, -4.0, -8.0};
  CHECK(correlation_r2(x, neg) == doctest::Approx(1.0).epsilon(1e-14));

  std::vector<double> flat = {2.0, 2.0, 2.0, 2.0};
  CHECK_THROWS_AS(correlation_r2(x, flat), std::domain_error);

  std::vector<double> y = {1.0, 2.1, 3.7, 8.4};
  const double r2 = correlation_r2(x, y);
  CHECK(r2 > 0.0);
  CHECK(r2 <= 1.0);
}

TEST_CASE("step_params: zero variance leaves params unchanged") {
  SourceParams p{Family::LogPsnr, 1.11, 0.15};
  ParamNoiseSpec noise;  // zero variances
  qfmux::RngStream rng(20);
  const auto q = step_params(p, noise, rng);
  CHECK(q.a1 == p.a1);
  CHECK(q.a2 == p.a2);
}

TEST_CASE("step_params: empirical increment variance matches the configured values") {
  ParamNoiseSpec noise;
  noise.sigma1_sq = 6.25e-2;
  noise.sigma2_sq = 2.25e-4;
  noise.a1_min = 1e-6;  // wide box so clamping does not bias the estimate
  noise.a1_max = 1e6;
  noise.a2_min = 1e-9;
  noise.a2_max = 1e6;
  SourceParams p{Family::LogPsnr, 100.0, 100.0};
  qfmux::RngStream rng(21);
  const int n = 100000;
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto q = step_params(p, noise, rng);
    const double d1 = q.a1 - p.a1;
    const double d2 = q.a2 - p.a2;
    s1 += d1 * d1;
    s2 += d2 * d2;
  }
  CHECK(s1 / n == doctest::Approx(6.25e-2).epsilon(0.05));
  CHECK(s2 / n == doctest::Approx(2.25e-4).epsilon(0.05));
}

TEST_CASE("step_params clamps to the admissible box") {
  ParamNoiseSpec noise;
  noise.sigma1_sq = 1.0;
  noise.sigma2_sq = 1.0;
  noise.a1_min = 0.01;
  noise.a1_max = 10.0;
  noise.a2_min = 0.001;
  noise.a2_max = 1.0;
  SourceParams p{Family::LogPsnr, 0.02, 0.002};
  qfmux::RngStream rng(22);
  bool hit_lo1 = false, hit_lo2 = false;
  for (int i = 0; i < 2000; ++i) {
    const auto q = step_params(p, noise, rng);
    CHECK(q.a1 >= noise.a1_min);
    CHECK(q.a1 <= noise.a1_max);
    CHECK(q.a2 >= noise.a2_min);
    CHECK(q.a2 <= noise.a2_max);
    if (q.a1 == noise.a1_min) hit_lo1 = true;
    if (q.a2 == noise.a2_min) hit_lo2 = true;
  }
  CHECK(hit_lo1);
  CHECK(hit_lo2);
}
