#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "qfmux/errors.hpp"
#include "qfmux/linearization.hpp"
#include "qfmux/sim_engine.hpp"
#include "qfmux/source_model.hpp"

namespace qfmux::io {

// Shortest round-trippable decimal.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline constexpr const char* kTimeseriesHeader =
    "slot,stream_id,enc_target,enc_applied,trans_rate,buffer_bits,tau_exact,tau_est,"
    "utility,phi,pi_acc,underflow,overflow";

inline void write_timeseries(std::ostream& out, const std::vector<sim::StepRow>& rows) {
  out << kTimeseriesHeader << "\n";
  for (const auto& r : rows) {
    out << r.slot << ',' << r.stream_id << ',' << fmt(r.enc_target) << ','
        << fmt(r.enc_applied) << ',' << fmt(r.trans_rate) << ',' << fmt(r.buffer_bits)
        << ',' << fmt(r.tau_exact) << ',' << fmt(r.tau_est) << ',' << fmt(r.utility) << ','
        << fmt(r.phi) << ',' << fmt(r.pi_acc) << ',' << r.underflow << ',' << r.overflow
        << "\n";
  }
}

inline void write_timeseries(const std::string& path, const std::vector<sim::StepRow>& rows) {
  std::ofstream out(path);
  if (!out) throw config_error("cannot open output file '" + path + "'");
  write_timeseries(out, rows);
}

// Eigenvalue dump for root-locus plots; `structural` marks the unit roots
// excluded from the stability verdict.
inline void write_eigenvalues(std::ostream& out, const lin::StabilityReport& report) {
  out << "re,im,modulus,structural\n";
  // Identify the excluded set the same way the classifier does.
  std::vector<std::size_t> order(report.eigenvalues.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(report.eigenvalues[a] - 1.0) < std::abs(report.eigenvalues[b] - 1.0);
  });
  std::vector<int> flag(report.eigenvalues.size(), 0);
  const int excluded = report.structural_unit_count + report.conserved_integral_count;
  for (int k = 0; k < excluded && k < static_cast<int>(order.size()); ++k)
    flag[order[static_cast<std::size_t>(k)]] = 1;
  for (std::size_t i = 0; i < report.eigenvalues.size(); ++i) {
    const auto& z = report.eigenvalues[i];
    out << fmt(z.real()) << ',' << fmt(z.imag()) << ',' << fmt(std::abs(z)) << ','
        << flag[i] << "\n";
  }
}

inline void write_eigenvalues(const std::string& path, const lin::StabilityReport& report) {
  std::ofstream out(path);
  if (!out) throw config_error("cannot open output file '" + path + "'");
  write_eigenvalues(out, report);
}

// rate,utility sample table for the model-fitting command.
inline std::vector<model::RateUtilitySample> read_samples(std::istream& in) {
  std::vector<model::RateUtilitySample> samples;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first && line.find("rate") != std::string::npos) {
      first = false;
      continue;
    }
    first = false;
    std::istringstream ls(line);
    std::string a, b;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b))
      throw config_error("samples: malformed line '" + line + "'");
    try {
      samples.push_back({std::stod(a), std::stod(b)});
    } catch (const std::exception&) {
      throw config_error("samples: non-numeric entry in line '" + line + "'");
    }
  }
  return samples;
}

inline std::vector<model::RateUtilitySample> read_samples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open samples file '" + path + "'");
  return read_samples(in);
}

}  // namespace qfmux::io
