#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "qfmux/errors.hpp"
#include "qfmux/linearization.hpp"
#include "qfmux/sim_engine.hpp"

namespace qfmux::io {

using nlohmann::json;

struct TuneConfig {
  int n_streams = 4;
  int realizations = 10;
  int budget = 200;
  lin::GainRange kp_t_range{1e-1, 5e2};
  lin::GainRange ki_t_range{1e-2, 5e1};
  lin::GainRange kp_e_range{1e-1, 5e2};
  lin::GainRange ki_e_range{1e-2, 5e1};
  double mean_a1 = 1.0717;  // componentwise mean of the reference set
  double mean_a2 = 0.1833;
  double sigma1_sq = 6.25e-2;
  double sigma2_sq = 2.25e-4;
  model::ParamNoiseSpec box;  // clamp box for the drawn characteristics
};

struct RunConfig {
  sim::Scenario scenario;
  std::optional<TuneConfig> tuning;
};

namespace detail {

inline void expect_keys(const json& obj, const std::string& path,
                        const std::set<std::string>& allowed) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!allowed.count(key))
      throw config_error("config: unknown key '" + path + key + "'");
  }
}

template <typename T>
T require(const json& obj, const std::string& path, const std::string& key) {
  if (!obj.contains(key))
    throw config_error("config: missing field '" + path + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw config_error("config: field '" + path + key + "' has the wrong type");
  }
}

template <typename T>
T optional_or(const json& obj, const std::string& path, const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw config_error("config: field '" + path + key + "' has the wrong type");
  }
}

inline model::Family parse_family(const std::string& name, const std::string& path) {
  if (name == "log_psnr") return model::Family::LogPsnr;
  if (name == "atan_ssim") return model::Family::AtanSsim;
  throw config_error("config: '" + path + "' must be log_psnr or atan_ssim");
}

inline sim::Policy parse_policy(const std::string& name) {
  if (name == "qf") return sim::Policy::QF;
  if (name == "trf") return sim::Policy::TRF;
  if (name == "ummf") return sim::Policy::UMMF;
  throw config_error("config: scenario.policy must be qf, trf or ummf");
}

inline control::Mode parse_mode(const std::string& name) {
  if (name == "buffer_level") return control::Mode::BufferLevel;
  if (name == "buffering_delay") return control::Mode::BufferingDelay;
  throw config_error("config: gains.mode must be buffer_level or buffering_delay");
}

inline model::ParamNoiseSpec parse_noise(const json& j, const std::string& path) {
  expect_keys(j, path,
              {"sigma1_sq", "sigma2_sq", "a1_min", "a1_max", "a2_min", "a2_max"});
  model::ParamNoiseSpec n;
  n.sigma1_sq = optional_or(j, path, "sigma1_sq", 0.0);
  n.sigma2_sq = optional_or(j, path, "sigma2_sq", 0.0);
  n.a1_min = optional_or(j, path, "a1_min", n.a1_min);
  n.a1_max = optional_or(j, path, "a1_max", n.a1_max);
  n.a2_min = optional_or(j, path, "a2_min", n.a2_min);
  n.a2_max = optional_or(j, path, "a2_max", n.a2_max);
  return n;
}

inline lin::GainRange parse_range(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2)
    throw config_error("config: '" + path + "' must be a [lo, hi] pair");
  lin::GainRange r{j.at(0).get<double>(), j.at(1).get<double>()};
  if (!(r.lo > 0.0 && r.lo < r.hi))
    throw config_error("config: '" + path + "' must satisfy 0 < lo < hi");
  return r;
}

}  // namespace detail

inline RunConfig parse_config(const json& doc) {
  using detail::expect_keys;
  using detail::optional_or;
  using detail::require;

  if (!doc.is_object()) throw config_error("config: document must be a JSON object");
  expect_keys(doc, "", {"version", "notes", "scenario", "gains", "plant", "limits",
                        "ummf", "tuning"});
  const int version = require<int>(doc, "", "version");
  if (version != 1) throw config_error("config: unsupported version");

  RunConfig cfg;
  auto& sc = cfg.scenario;

  const json& jsc = doc.contains("scenario") ? doc.at("scenario") : json::object();
  if (!doc.contains("scenario")) throw config_error("config: missing field 'scenario'");
  expect_keys(jsc, "scenario.",
              {"horizon", "channel_rate_kbps", "rate_events", "policy", "seed", "streams"});
  sc.horizon = require<int>(jsc, "scenario.", "horizon");
  sc.channel_rate_kbps = require<double>(jsc, "scenario.", "channel_rate_kbps");
  sc.policy = detail::parse_policy(require<std::string>(jsc, "scenario.", "policy"));
  sc.seed = optional_or<std::uint64_t>(jsc, "scenario.", "seed", 1);
  if (jsc.contains("rate_events")) {
    for (std::size_t k = 0; k < jsc.at("rate_events").size(); ++k) {
      const auto& je = jsc.at("rate_events").at(k);
      const std::string path = "scenario.rate_events[" + std::to_string(k) + "].";
      expect_keys(je, path, {"slot", "rate_kbps"});
      sim::ChannelRateEvent ev;
      ev.slot = require<int>(je, path, "slot");
      ev.rate_kbps = require<double>(je, path, "rate_kbps");
      sc.rate_events.push_back(ev);
    }
  }
  if (!jsc.contains("streams") || jsc.at("streams").empty())
    throw config_error("config: missing field 'scenario.streams'");
  for (std::size_t k = 0; k < jsc.at("streams").size(); ++k) {
    const auto& js = jsc.at("streams").at(k);
    const std::string path = "scenario.streams[" + std::to_string(k) + "].";
    expect_keys(js, path, {"model", "a1", "a2", "join_slot", "leave_slot", "noise"});
    sim::StreamSpec spec;
    spec.params.family = detail::parse_family(require<std::string>(js, path, "model"), path + "model");
    spec.params.a1 = require<double>(js, path, "a1");
    spec.params.a2 = require<double>(js, path, "a2");
    spec.join_slot = optional_or(js, path, "join_slot", 1);
    if (js.contains("leave_slot") && !js.at("leave_slot").is_null())
      spec.leave_slot = require<int>(js, path, "leave_slot");
    if (js.contains("noise")) spec.noise = detail::parse_noise(js.at("noise"), path + "noise.");
    sc.streams.push_back(spec);
  }

  const json& jg = doc.contains("gains") ? doc.at("gains") : json::object();
  if (!doc.contains("gains")) throw config_error("config: missing field 'gains'");
  expect_keys(jg, "gains.", {"mode", "kp_t", "ki_t", "kp_e", "ki_e"});
  sc.gains.mode = detail::parse_mode(require<std::string>(jg, "gains.", "mode"));
  sc.gains.kp_t = require<double>(jg, "gains.", "kp_t");
  sc.gains.ki_t = require<double>(jg, "gains.", "ki_t");
  sc.gains.kp_e = require<double>(jg, "gains.", "kp_e");
  sc.gains.ki_e = require<double>(jg, "gains.", "ki_e");

  const json& jp = doc.contains("plant") ? doc.at("plant") : json::object();
  if (!doc.contains("plant")) throw config_error("config: missing field 'plant'");
  expect_keys(jp, "plant.",
              {"vu_duration_s", "b_max_bits", "b0_bits", "tau0_s", "alpha",
               "initial_buffer_vus"});
  sc.plant.vu_duration_s = require<double>(jp, "plant.", "vu_duration_s");
  sc.plant.b_max_bits = require<double>(jp, "plant.", "b_max_bits");
  sc.plant.b0_bits = require<double>(jp, "plant.", "b0_bits");
  sc.plant.tau0_s = require<double>(jp, "plant.", "tau0_s");
  sc.plant.alpha = require<double>(jp, "plant.", "alpha");
  sc.plant.initial_buffer_vus = optional_or(jp, "plant.", "initial_buffer_vus", 3);

  sc.limits.ceiling_kbps = sc.channel_rate_kbps;
  if (doc.contains("limits")) {
    const auto& jl = doc.at("limits");
    expect_keys(jl, "limits.", {"rate_floor_kbps", "rate_ceiling_kbps"});
    sc.limits.floor_kbps = optional_or(jl, "limits.", "rate_floor_kbps", 10.0);
    sc.limits.ceiling_kbps =
        optional_or(jl, "limits.", "rate_ceiling_kbps", sc.channel_rate_kbps);
  }
  if (doc.contains("ummf")) {
    const auto& ju = doc.at("ummf");
    expect_keys(ju, "ummf.", {"kp_t"});
    sc.ummf_kp_t = optional_or(ju, "ummf.", "kp_t", 3.0);
  }

  if (doc.contains("tuning")) {
    const auto& jt = doc.at("tuning");
    expect_keys(jt, "tuning.",
                {"n_streams", "realizations", "budget", "kp_t_range", "ki_t_range",
                 "kp_e_range", "ki_e_range", "mean_a1", "mean_a2", "sigma1_sq",
                 "sigma2_sq", "box"});
    TuneConfig tc;
    tc.n_streams = optional_or(jt, "tuning.", "n_streams", tc.n_streams);
    tc.realizations = optional_or(jt, "tuning.", "realizations", tc.realizations);
    tc.budget = optional_or(jt, "tuning.", "budget", tc.budget);
    if (jt.contains("kp_t_range")) tc.kp_t_range = detail::parse_range(jt.at("kp_t_range"), "tuning.kp_t_range");
    if (jt.contains("ki_t_range")) tc.ki_t_range = detail::parse_range(jt.at("ki_t_range"), "tuning.ki_t_range");
    if (jt.contains("kp_e_range")) tc.kp_e_range = detail::parse_range(jt.at("kp_e_range"), "tuning.kp_e_range");
    if (jt.contains("ki_e_range")) tc.ki_e_range = detail::parse_range(jt.at("ki_e_range"), "tuning.ki_e_range");
    tc.mean_a1 = optional_or(jt, "tuning.", "mean_a1", tc.mean_a1);
    tc.mean_a2 = optional_or(jt, "tuning.", "mean_a2", tc.mean_a2);
    tc.sigma1_sq = optional_or(jt, "tuning.", "sigma1_sq", tc.sigma1_sq);
    tc.sigma2_sq = optional_or(jt, "tuning.", "sigma2_sq", tc.sigma2_sq);
    tc.box.a1_min = 0.3;
    tc.box.a1_max = 3.0;
    tc.box.a2_min = 0.05;
    tc.box.a2_max = 0.5;
    if (jt.contains("box")) tc.box = detail::parse_noise(jt.at("box"), "tuning.box.");
    cfg.tuning = tc;
  }

  // Cross-field validation happens in the module types.
  cfg.scenario.validate();
  const double n = static_cast<double>(cfg.scenario.streams.size());
  if (!(cfg.scenario.channel_rate_kbps > n * cfg.scenario.limits.floor_kbps))
    throw config_error("config: channel rate must exceed N * rate floor");
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("config: cannot open '" + path + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw config_error("config: parse failure in '" + path + "': " + e.what());
  }
  return parse_config(doc);
}

// Normalized re-serialization; parsing the echo reproduces the same RunConfig.
inline json echo_config(const RunConfig& cfg) {
  const auto& sc = cfg.scenario;
  json jstreams = json::array();
  for (const auto& s : sc.streams) {
    json js = {
        {"model", model::family_name(s.params.family)},
        {"a1", s.params.a1},
        {"a2", s.params.a2},
        {"join_slot", s.join_slot},
        {"noise",
         {{"sigma1_sq", s.noise.sigma1_sq},
          {"sigma2_sq", s.noise.sigma2_sq},
          {"a1_min", s.noise.a1_min},
          {"a1_max", s.noise.a1_max},
          {"a2_min", s.noise.a2_min},
          {"a2_max", s.noise.a2_max}}},
    };
    if (s.leave_slot) js["leave_slot"] = *s.leave_slot;
    jstreams.push_back(js);
  }
  json jevents = json::array();
  for (const auto& ev : sc.rate_events)
    jevents.push_back({{"slot", ev.slot}, {"rate_kbps", ev.rate_kbps}});

  json doc = {
      {"version", 1},
      {"scenario",
       {{"horizon", sc.horizon},
        {"channel_rate_kbps", sc.channel_rate_kbps},
        {"rate_events", jevents},
        {"policy", sim::policy_name(sc.policy)},
        {"seed", sc.seed},
        {"streams", jstreams}}},
      {"gains",
       {{"mode", control::mode_name(sc.gains.mode)},
        {"kp_t", sc.gains.kp_t},
        {"ki_t", sc.gains.ki_t},
        {"kp_e", sc.gains.kp_e},
        {"ki_e", sc.gains.ki_e}}},
      {"plant",
       {{"vu_duration_s", sc.plant.vu_duration_s},
        {"b_max_bits", sc.plant.b_max_bits},
        {"b0_bits", sc.plant.b0_bits},
        {"tau0_s", sc.plant.tau0_s},
        {"alpha", sc.plant.alpha},
        {"initial_buffer_vus", sc.plant.initial_buffer_vus}}},
      {"limits",
       {{"rate_floor_kbps", sc.limits.floor_kbps},
        {"rate_ceiling_kbps", sc.limits.ceiling_kbps}}},
      {"ummf", {{"kp_t", sc.ummf_kp_t}}},
  };
  if (cfg.tuning) {
    const auto& tc = *cfg.tuning;
    doc["tuning"] = {
        {"n_streams", tc.n_streams},
        {"realizations", tc.realizations},
        {"budget", tc.budget},
        {"kp_t_range", {tc.kp_t_range.lo, tc.kp_t_range.hi}},
        {"ki_t_range", {tc.ki_t_range.lo, tc.ki_t_range.hi}},
        {"kp_e_range", {tc.kp_e_range.lo, tc.kp_e_range.hi}},
        {"ki_e_range", {tc.ki_e_range.lo, tc.ki_e_range.hi}},
        {"mean_a1", tc.mean_a1},
        {"mean_a2", tc.mean_a2},
        {"sigma1_sq", tc.sigma1_sq},
        {"sigma2_sq", tc.sigma2_sq},
        {"box",
         {{"sigma1_sq", tc.box.sigma1_sq},
          {"sigma2_sq", tc.box.sigma2_sq},
          {"a1_min", tc.box.a1_min},
          {"a1_max", tc.box.a1_max},
          {"a2_min", tc.box.a2_min},
          {"a2_max", tc.box.a2_max}}},
    };
  }
  return doc;
}

}  // namespace qfmux::io
