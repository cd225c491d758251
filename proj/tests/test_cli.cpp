#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "qfmux/cli.hpp"
#include "qfmux/config.hpp"

namespace fs = std::filesystem;
using qfmux::io::json;

namespace {

json minimal_config() {
  return json::parse(R"({
    "version": 1,
    "scenario": {
      "horizon": 40,
      "channel_rate_kbps": 3000.0,
      "policy": "qf",
      "seed": 7,
      "streams": [
        {"model": "log_psnr", "a1": 1.0, "a2": 0.18},
        {"model": "log_psnr", "a1": 1.2, "a2": 0.15},
        {"model": "log_psnr", "a1": 0.9, "a2": 0.20}
      ]
    },
    "gains": {"mode": "buffering_delay", "kp_t": 66.0, "ki_t": 2.6, "kp_e": 66.0, "ki_e": 1.3},
    "plant": {"vu_duration_s": 0.3333333333333333, "b_max_bits": 12000000.0,
              "b0_bits": 400000.0, "tau0_s": 1.5, "alpha": 0.2, "initial_buffer_vus": 3}
  })");
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("qfmux_test_" + std::to_string(std::rand()) + std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string write_doc(const TempDir& dir, const std::string& name, const json& doc) {
  const auto p = (dir.path / name).string();
  std::ofstream out(p);
  out << doc.dump(2);
  return p;
}

int run_cli(std::vector<std::string> args) {
  std::vector<char*> argv;
  args.insert(args.begin(), "qfmux");
  for (auto& a : args) argv.push_back(a.data());
  return qfmux::cli::run(static_cast<int>(argv.size()), argv.data());
}

std::size_t count_lines(const std::string& path) {
  std::ifstream in(path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("config parsing validates structure") {
  SUBCASE("valid document parses") {
    const auto cfg = qfmux::io::parse_config(minimal_config());
    CHECK(cfg.scenario.streams.size() == 3);
    CHECK(cfg.scenario.gains.ki_t == 2.6);
    // Ceiling defaults to the channel rate.
    CHECK(cfg.scenario.limits.ceiling_kbps == 3000.0);
  }

  SUBCASE("missing field is reported by name") {
    auto doc = minimal_config();
    doc["gains"].erase("ki_e");
    try {
      qfmux::io::parse_config(doc);
      FAIL("expected config_error");
    } catch (const qfmux::config_error& e) {
      CHECK(std::string(e.what()).find("ki_e") != std::string::npos);
    }
  }

  SUBCASE("unknown key is an error") {
    auto doc = minimal_config();
    doc["scenario"]["streems"] = json::array();
    try {
      qfmux::io::parse_config(doc);
      FAIL("expected config_error");
    } catch (const qfmux::config_error& e) {
      CHECK(std::string(e.what()).find("streems") != std::string::npos);
    }
  }

  SUBCASE("invariant violations are rejected") {
    auto doc = minimal_config();
    doc["plant"]["alpha"] = 1.5;
    CHECK_THROWS(qfmux::io::parse_config(doc));

    doc = minimal_config();
    doc["scenario"]["horizon"] = 2;
    CHECK_THROWS(qfmux::io::parse_config(doc));

    doc = minimal_config();
    doc["gains"]["ki_t"] = 0.0;  // QF needs integral action
    CHECK_THROWS(qfmux::io::parse_config(doc));
  }
}

TEST_CASE("config echo round-trips") {
  const auto cfg = qfmux::io::parse_config(minimal_config());
  const auto echo = qfmux::io::echo_config(cfg);
  const auto cfg2 = qfmux::io::parse_config(echo);
  CHECK(qfmux::io::echo_config(cfg2) == echo);
}

TEST_CASE("simulate writes the bundle and respects seed overrides") {
  TempDir dir;
  const auto cfg_path = write_doc(dir, "run.json", minimal_config());
  const auto out1 = (dir.path / "o1").string();
  const auto out2 = (dir.path / "o2").string();
  const auto out3 = (dir.path / "o3").string();

  CHECK(run_cli({"simulate", "--config", cfg_path, "--out-dir", out1}) == 0);
  CHECK(count_lines(out1 + "/timeseries.csv") == 1 + 40 * 3);

  // Same seed -> byte-identical series; different seed -> different file.
  CHECK(run_cli({"simulate", "--config", cfg_path, "--out-dir", out2}) == 0);
  std::ifstream f1(out1 + "/timeseries.csv"), f2(out2 + "/timeseries.csv");
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);

  auto noisy = minimal_config();
  noisy["scenario"]["streams"][0]["noise"] = {{"sigma1_sq", 0.01}, {"sigma2_sq", 1e-5}};
  const auto noisy_path = write_doc(dir, "noisy.json", noisy);
  CHECK(run_cli({"simulate", "--config", noisy_path, "--out-dir", out1}) == 0);
  CHECK(run_cli({"simulate", "--config", noisy_path, "--out-dir", out2, "--seed", "99"}) == 0);
  CHECK(run_cli({"simulate", "--config", noisy_path, "--out-dir", out3, "--seed", "99"}) == 0);
  std::ifstream g1(out1 + "/timeseries.csv"), g2(out2 + "/timeseries.csv"),
      g3(out3 + "/timeseries.csv");
  std::string t1((std::istreambuf_iterator<char>(g1)), {});
  std::string t2((std::istreambuf_iterator<char>(g2)), {});
  std::string t3((std::istreambuf_iterator<char>(g3)), {});
  CHECK(t1 != t2);
  CHECK(t2 == t3);

  // The summary's config echo re-parses to an equivalent document.
  std::ifstream sum(out1 + "/summary.json");
  json summary;
  sum >> summary;
  const auto cfg_echoed = qfmux::io::parse_config(summary.at("config"));
  CHECK(qfmux::io::echo_config(cfg_echoed) == summary.at("config"));
}

TEST_CASE("simulate rejects broken configs with exit code 2") {
  TempDir dir;
  auto doc = minimal_config();
  doc["gains"].erase("kp_t");
  const auto cfg_path = write_doc(dir, "broken.json", doc);
  CHECK(run_cli({"simulate", "--config", cfg_path, "--out-dir", dir.path.string()}) == 2);

  const auto missing = (dir.path / "nonexistent.json").string();
  CHECK(run_cli({"simulate", "--config", missing}) == 2);
}

TEST_CASE("equilibrium subcommand") {
  TempDir dir;
  SUBCASE("symmetric config splits evenly") {
    auto doc = minimal_config();
    for (auto& s : doc["scenario"]["streams"]) {
      s["a1"] = 1.1;
      s["a2"] = 0.2;
    }
    const auto cfg_path = write_doc(dir, "sym.json", doc);
    CHECK(run_cli({"equilibrium", "--config", cfg_path}) == 0);
  }
  SUBCASE("infeasible channel rate exits with 3") {
    auto doc = minimal_config();
    doc["scenario"]["streams"] = json::array(
        {{{"model", "atan_ssim"}, {"a1", 0.64}, {"a2", 0.037}},
         {{"model", "atan_ssim"}, {"a1", 0.61}, {"a2", 0.029}}});
    doc["scenario"]["channel_rate_kbps"] = 5e9;  // beyond the per-stream sanity cap
    doc["limits"] = {{"rate_floor_kbps", 10.0}, {"rate_ceiling_kbps", 5e9}};
    const auto cfg_path = write_doc(dir, "inf.json", doc);
    CHECK(run_cli({"equilibrium", "--config", cfg_path}) == 3);
  }
}

TEST_CASE("stability subcommand writes one CSV row per state") {
  TempDir dir;
  const auto cfg_path = write_doc(dir, "run.json", minimal_config());
  CHECK(run_cli({"stability", "--config", cfg_path, "--out-dir", dir.path.string()}) == 0);
  // 3 streams, delay mode: state dim 33, plus the header line.
  CHECK(count_lines((dir.path / "eigenvalues.csv").string()) == 34);
}

TEST_CASE("tune-gains subcommand") {
  TempDir dir;
  auto doc = minimal_config();
  doc["tuning"] = {{"n_streams", 3}, {"realizations", 3}, {"budget", 40}};
  const auto cfg_path = write_doc(dir, "tune.json", doc);
  CHECK(run_cli({"tune-gains", "--config", cfg_path}) == 0);
  CHECK(run_cli({"tune-gains", "--config", cfg_path, "--budget", "0"}) == 3);
}

TEST_CASE("fit-model subcommand") {
  TempDir dir;
  const auto samples_path = (dir.path / "samples.csv").string();
  {
    std::ofstream out(samples_path);
    out << "rate,utility\n";
    for (double r : {80.0, 200.0, 800.0, 2000.0})
      out << r << ',' << 1.11 * std::log(0.15 * r) << "\n";
  }
  CHECK(run_cli({"fit-model", "--samples", samples_path, "--family", "log_psnr"}) == 0);

  const auto short_path = (dir.path / "short.csv").string();
  {
    std::ofstream out(short_path);
    out << "rate,utility\n100,3.0\n";
  }
  CHECK(run_cli({"fit-model", "--samples", short_path, "--family", "log_psnr"}) == 2);
}

TEST_CASE("policy override flows through simulate") {
  TempDir dir;
  const auto cfg_path = write_doc(dir, "run.json", minimal_config());
  const auto out = (dir.path / "trf").string();
  CHECK(run_cli({"simulate", "--config", cfg_path, "--out-dir", out, "--policy", "trf"}) == 0);
  std::ifstream sum(out + "/summary.json");
  json summary;
  sum >> summary;
  CHECK(summary["config"]["scenario"]["policy"] == "trf");

  // TRF gives every stream the same drain rate; the QF run does not.
  std::ifstream ts(out + "/timeseries.csv");
  std::string header, line;
  std::getline(ts, header);
  std::getline(ts, line);
  std::string first = line;
  std::getline(ts, line);
  // trans_rate is column 5 (0-based 4).
  auto field = [](const std::string& row, int idx) {
    std::istringstream ss(row);
    std::string f;
    for (int k = 0; k <= idx; ++k) std::getline(ss, f, ',');
    return f;
  };
  CHECK(field(first, 4) == field(line, 4));

  CHECK(run_cli({"simulate", "--config", cfg_path, "--out-dir", out, "--policy", "bogus"}) == 2);
}

TEST_CASE("eigenvalue CSV flags the excluded unit roots") {
  TempDir dir;
  const auto cfg_path = write_doc(dir, "run.json", minimal_config());
  CHECK(run_cli({"stability", "--config", cfg_path, "--out-dir", dir.path.string()}) == 0);
  std::ifstream in((dir.path / "eigenvalues.csv").string());
  std::string line;
  std::getline(in, line);  // header
  int structural = 0, rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    if (line.size() >= 2 && line.substr(line.size() - 2) == ",1") ++structural;
  }
  CHECK(rows == 33);        // 3 streams, delay mode
  CHECK(structural == 7);   // 3*2 parameter walks + the conserved integral
}

TEST_CASE("malformed sample files are rejected") {
  TempDir dir;
  const auto path = (dir.path / "bad.csv").string();
  {
    std::ofstream out(path);
    out << "rate,utility\n100,abc\n";
  }
  CHECK(run_cli({"fit-model", "--samples", path, "--family", "log_psnr"}) == 2);
  CHECK(run_cli({"fit-model", "--samples", path, "--family", "nonsense"}) == 2);
}
