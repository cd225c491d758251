#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qfmux/config.hpp"
#include "qfmux/csv.hpp"
#include "qfmux/equilibrium.hpp"
#include "qfmux/errors.hpp"
#include "qfmux/linearization.hpp"
#include "qfmux/sim_engine.hpp"

namespace qfmux::cli {

// Exit codes: 0 ok, 2 config error, 3 infeasible/solver error, 4 numeric failure.
inline constexpr int kOk = 0;
inline constexpr int kConfigError = 2;
inline constexpr int kInfeasible = 3;
inline constexpr int kNumericFailure = 4;

struct CommonOptions {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> policy;
};

namespace detail {

inline io::RunConfig load_with_overrides(const CommonOptions& opt) {
  io::RunConfig cfg = io::load_config(opt.config_path);
  if (opt.seed) cfg.scenario.seed = *opt.seed;
  if (opt.policy) {
    if (*opt.policy == "qf")
      cfg.scenario.policy = sim::Policy::QF;
    else if (*opt.policy == "trf")
      cfg.scenario.policy = sim::Policy::TRF;
    else if (*opt.policy == "ummf")
      cfg.scenario.policy = sim::Policy::UMMF;
    else
      throw config_error("--policy must be qf, trf or ummf");
    cfg.scenario.validate();
  }
  return cfg;
}

inline std::vector<model::SourceParams> stream_params(const sim::Scenario& sc) {
  std::vector<model::SourceParams> params;
  params.reserve(sc.streams.size());
  for (const auto& s : sc.streams) params.push_back(s.params);
  return params;
}

inline eq::EquilibriumContext equilibrium_context(const sim::Scenario& sc) {
  eq::EquilibriumContext ctx;
  ctx.ki_t = sc.gains.ki_t;
  ctx.ki_e = sc.gains.ki_e;
  ctx.T = sc.plant.vu_duration_s;
  ctx.tau0_s = sc.plant.tau0_s;
  ctx.b0_bits = sc.plant.b0_bits;
  ctx.buffer_level_mode = sc.gains.mode == control::Mode::BufferLevel;
  return ctx;
}

inline void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw config_error("cannot create output directory '" + dir + "'");
}

}  // namespace detail

inline int cmd_simulate(const CommonOptions& opt) {
  const auto cfg = detail::load_with_overrides(opt);
  detail::ensure_out_dir(opt.out_dir);

  sim::Engine engine(cfg.scenario);
  std::vector<sim::StepRow> rows;
  int slot = 0;
  try {
    for (slot = 1; slot <= cfg.scenario.horizon; ++slot) {
      auto step_rows = engine.step(slot);
      rows.insert(rows.end(), step_rows.begin(), step_rows.end());
    }
  } catch (const infeasible_error& e) {
    std::cerr << "simulate: aborted at slot " << slot << ": " << e.what() << "\n";
    return kInfeasible;
  } catch (const numeric_error& e) {
    std::cerr << "simulate: aborted at slot " << slot << ": " << e.what() << "\n";
    return kNumericFailure;
  }
  const auto metrics = sim::Engine::compute_metrics(rows, cfg.scenario.plant.b0_bits,
                                                    cfg.scenario.plant.tau0_s);

  const auto ts_path = opt.out_dir + "/timeseries.csv";
  io::write_timeseries(ts_path, rows);

  io::json summary = {
      {"seed", cfg.scenario.seed},
      {"config", io::echo_config(cfg)},
      {"metrics",
       {{"delta_b_kbit", metrics.delta_b_kbit},
        {"sigma2_b_kbit2", metrics.sigma2_b_kbit2},
        {"delta_p", metrics.delta_p},
        {"sigma2_p", metrics.sigma2_p},
        {"delta_tau_s", metrics.delta_tau_s},
        {"sigma2_tau_s2", metrics.sigma2_tau_s2},
        {"underflows", metrics.underflows},
        {"overflows", metrics.overflows}}},
  };
  std::ofstream sum(opt.out_dir + "/summary.json");
  if (!sum) throw config_error("cannot open summary output");
  sum << summary.dump(2) << "\n";

  std::cout << "simulate: " << rows.size() << " rows -> " << ts_path << "\n"
            << summary["metrics"].dump(2) << "\n";
  return kOk;
}

inline int cmd_equilibrium(const CommonOptions& opt) {
  const auto cfg = detail::load_with_overrides(opt);
  const auto params = detail::stream_params(cfg.scenario);
  const auto feas = eq::check_feasibility(params, cfg.scenario.channel_rate_kbps);
  if (!feas.feasible) {
    std::cerr << "equilibrium: infeasible: " << feas.diagnostic << "\n";
    return kInfeasible;
  }
  const auto point = eq::solve_equilibrium(params, cfg.scenario.channel_rate_kbps,
                                           detail::equilibrium_context(cfg.scenario));
  std::cout << "u_eq: " << io::fmt(point.u_eq) << "\n";
  for (std::size_t i = 0; i < point.r_eq.size(); ++i) {
    std::cout << "stream " << i << ": r_eq_kbps=" << io::fmt(point.r_eq[i])
              << " b_eq_bits=" << io::fmt(point.b_eq[i])
              << " pi_eq=" << io::fmt(point.pi_eq[i])
              << " phi_eq=" << io::fmt(point.phi_eq[i]) << "\n";
  }
  return kOk;
}

inline int cmd_stability(const CommonOptions& opt) {
  const auto cfg = detail::load_with_overrides(opt);
  detail::ensure_out_dir(opt.out_dir);
  const auto& sc = cfg.scenario;
  const auto params = detail::stream_params(sc);
  const auto point = eq::solve_equilibrium(params, sc.channel_rate_kbps,
                                           detail::equilibrium_context(sc));
  const auto model = lin::assemble_A(sc.gains.mode, sc.gains, point, params,
                                     sc.plant.alpha, sc.plant.vu_duration_s,
                                     sc.plant.tau0_s);
  const auto report = lin::classify_stability(model);

  const auto csv_path = opt.out_dir + "/eigenvalues.csv";
  io::write_eigenvalues(csv_path, report);
  std::cout << "state_dim: " << model.state_dim << "\n"
            << "structural_unit_roots: " << report.structural_unit_count << "\n"
            << "conserved_integral_roots: " << report.conserved_integral_count << "\n"
            << "spectral_radius_excl: " << io::fmt(report.spectral_radius_excl) << "\n"
            << "margin: " << io::fmt(report.margin) << "\n"
            << "stable: " << (report.stable ? "yes" : "no") << "\n"
            << "eigenvalues: " << csv_path << "\n";
  return kOk;
}

inline int cmd_tune_gains(const CommonOptions& opt, std::optional<int> budget,
                          std::optional<int> realizations) {
  auto cfg = detail::load_with_overrides(opt);
  io::TuneConfig tc = cfg.tuning.value_or(io::TuneConfig{});
  if (budget) tc.budget = *budget;
  if (realizations) tc.realizations = *realizations;

  lin::TuneSpec spec;
  spec.mode = cfg.scenario.gains.mode;
  spec.n_streams = tc.n_streams;
  spec.realizations = tc.realizations;
  spec.budget = tc.budget;
  spec.rc_kbps = cfg.scenario.channel_rate_kbps;
  spec.T = cfg.scenario.plant.vu_duration_s;
  spec.alpha = cfg.scenario.plant.alpha;
  spec.tau0_s = cfg.scenario.plant.tau0_s;
  spec.kp_t_range = tc.kp_t_range;
  spec.ki_t_range = tc.ki_t_range;
  spec.kp_e_range = tc.kp_e_range;
  spec.ki_e_range = tc.ki_e_range;
  spec.param_generator = [tc](RngStream& rng) {
    std::vector<model::SourceParams> out;
    for (int i = 0; i < tc.n_streams; ++i) {
      model::SourceParams p;
      p.family = model::Family::LogPsnr;
      p.a1 = std::clamp(tc.mean_a1 + rng.gaussian(0.0, std::sqrt(tc.sigma1_sq)),
                        tc.box.a1_min, tc.box.a1_max);
      p.a2 = std::clamp(tc.mean_a2 + rng.gaussian(0.0, std::sqrt(tc.sigma2_sq)),
                        tc.box.a2_min, tc.box.a2_max);
      out.push_back(p);
    }
    return out;
  };

  RngStream rng(cfg.scenario.seed);
  const auto result = lin::tune_gains(spec, rng);
  io::json doc = {
      {"found", result.found},
      {"evaluated", result.evaluated},
  };
  if (result.found) {
    doc["gains"] = {{"mode", control::mode_name(spec.mode)},
                    {"kp_t", result.gains.kp_t},
                    {"ki_t", result.gains.ki_t},
                    {"kp_e", result.gains.kp_e},
                    {"ki_e", result.gains.ki_e}};
    doc["min_margin"] = result.best_min_margin;
    doc["margins"] = result.margins;
  } else {
    doc["message"] = result.message;
  }
  std::cout << doc.dump(2) << "\n";
  if (!result.found) {
    std::cerr << "tune-gains: " << result.message << "\n";
    return kInfeasible;
  }
  return kOk;
}

inline int cmd_fit_model(const std::string& samples_path, const std::string& family_name) {
  const auto samples = io::read_samples(samples_path);
  model::Family family;
  if (family_name == "log_psnr")
    family = model::Family::LogPsnr;
  else if (family_name == "atan_ssim")
    family = model::Family::AtanSsim;
  else
    throw config_error("--family must be log_psnr or atan_ssim");

  const auto fit = model::fit_model(family, samples);
  std::vector<double> observed, predicted;
  for (const auto& s : samples) {
    observed.push_back(s.utility);
    predicted.push_back(model::eval_utility(fit, s.rate));
  }
  io::json doc = {{"model", model::family_name(fit.family)},
                  {"a1", fit.a1},
                  {"a2", fit.a2},
                  {"r2", model::correlation_r2(observed, predicted)},
                  {"samples", samples.size()}};
  std::cout << doc.dump(2) << "\n";
  return kOk;
}

inline int run(int argc, char** argv) {
  CLI::App app{"Quality-fair multiplexed streaming: simulator and stability toolkit"};
  app.require_subcommand(1);

  CommonOptions opt;
  std::optional<int> budget, realizations;
  std::string samples_path, family = "log_psnr";
  std::uint64_t seed_raw = 0;
  std::string policy_raw;

  auto add_common = [&](CLI::App* sub, bool needs_config = true) {
    auto* c = sub->add_option("--config", opt.config_path, "JSON run configuration");
    if (needs_config) c->required();
    sub->add_option("--out-dir", opt.out_dir, "output directory");
    sub->add_option("--seed", seed_raw, "override the scenario seed");
    sub->add_option("--policy", policy_raw, "override the policy (qf|trf|ummf)");
  };

  auto* simulate = app.add_subcommand("simulate", "run the closed-loop simulation");
  add_common(simulate);
  auto* equilibrium = app.add_subcommand("equilibrium", "solve the closed-loop equilibrium");
  add_common(equilibrium);
  auto* stability = app.add_subcommand("stability", "assemble and classify the linearized loop");
  add_common(stability);
  auto* tune = app.add_subcommand("tune-gains", "random search for robust PI gains");
  add_common(tune);
  tune->add_option("--budget", [&](const std::vector<std::string>& v) {
        budget = std::stoi(v.front());
        return true;
      }, "gain candidates to evaluate");
  tune->add_option("--realizations", [&](const std::vector<std::string>& v) {
        realizations = std::stoi(v.front());
        return true;
      }, "characteristic sets per candidate");
  auto* fit = app.add_subcommand("fit-model", "fit a rate-utility model to samples");
  fit->add_option("--samples", samples_path, "CSV of rate,utility pairs")->required();
  fit->add_option("--family", family, "log_psnr | atan_ssim");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  for (CLI::App* sub : {simulate, equilibrium, stability, tune}) {
    if (sub->parsed()) {
      if (sub->count("--seed") > 0) opt.seed = seed_raw;
      if (sub->count("--policy") > 0) opt.policy = policy_raw;
    }
  }

  try {
    if (simulate->parsed()) return cmd_simulate(opt);
    if (equilibrium->parsed()) return cmd_equilibrium(opt);
    if (stability->parsed()) return cmd_stability(opt);
    if (tune->parsed()) return cmd_tune_gains(opt, budget, realizations);
    if (fit->parsed()) return cmd_fit_model(samples_path, family);
  } catch (const config_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const infeasible_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInfeasible;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const fit_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumericFailure;
  }
  return kConfigError;
}

}  // namespace qfmux::cli
