#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "qfmux/equilibrium.hpp"
#include "qfmux/errors.hpp"
#include "qfmux/source_model.hpp"

namespace qfmux::control {

enum class Mode { BufferLevel, BufferingDelay };

inline const char* mode_name(Mode m) {
  return m == Mode::BufferLevel ? "buffer_level" : "buffering_delay";
}

// PI gains for the two loops. Units follow the engine's kbit/s convention:
//   kp_t, ki_t  (kbit/s) per utility unit
//   kp_e, ki_e  (kbit/s)*T per second of delay error (BufferingDelay)
//               (kbit/s)*T per kbit of level error   (BufferLevel)
struct ControllerGains {
  double kp_t = 0.0;
  double ki_t = 0.0;
  double kp_e = 0.0;
  double ki_e = 0.0;
  Mode mode = Mode::BufferingDelay;

  void validate_for_qf() const {
    if (ki_t == 0.0 || ki_e == 0.0)
      throw std::domain_error("ControllerGains: QF needs nonzero integral gains");
    if (!std::isfinite(kp_t) || !std::isfinite(ki_t) || !std::isfinite(kp_e) ||
        !std::isfinite(ki_e))
      throw std::domain_error("ControllerGains: gains must be finite");
  }
};

struct RateLimits {
  double floor_kbps = 10.0;
  double ceiling_kbps = 4000.0;  // defaults to the channel rate in configs
};

// One slot's worth of controller output for every stream. Transmission rates
// sum to the channel rate for the policies that guarantee it (QF, TRF).
struct RateCommand {
  std::vector<double> transmission_rates;  // drain commands, kbit/s
  std::vector<double> encoding_targets;    // raw PI outputs, kbit/s
  std::vector<double> encoding_applied;    // clamped commands, kbit/s
};

// Neumaier-compensated sum.
inline double neumaier_sum(const std::vector<double>& xs) {
  double sum = 0.0, comp = 0.0;
  for (double x : xs) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x))
      comp += (sum - t) + x;
    else
      comp += (x - t) + sum;
    sum = t;
  }
  return sum + comp;
}

// delta_U_i = mean(udd) - udd_i; entries sum to zero up to rounding.
inline std::vector<double> utility_discrepancies(const std::vector<double>& udd) {
  if (udd.empty()) throw std::invalid_argument("utility_discrepancies: empty input");
  const double mean = neumaier_sum(udd) / static_cast<double>(udd.size());
  std::vector<double> out(udd.size());
  for (std::size_t i = 0; i < udd.size(); ++i) out[i] = mean - udd[i];
  return out;
}

namespace detail {

// Clamp entries at the floor and shrink the above-floor surplus of the rest
// proportionally so the total is preserved exactly.
inline void redistribute_to_floor(std::vector<double>& rates, double floor_kbps,
                                  double total) {
  const double n = static_cast<double>(rates.size());
  if (total < floor_kbps * n - 1e-9 * std::abs(total))
    throw infeasible_error("transmission allocation: channel rate below N * rate floor");
  double deficit = 0.0, surplus = 0.0;
  for (double r : rates) {
    if (r < floor_kbps)
      deficit += floor_kbps - r;
    else
      surplus += r - floor_kbps;
  }
  if (deficit == 0.0) return;
  if (surplus <= 0.0)
    throw infeasible_error("transmission allocation: every stream clamped at the floor");
  const double scale = (surplus - deficit) / surplus;
  if (scale < 0.0)
    throw infeasible_error("transmission allocation: floors exceed the channel rate");
  for (double& r : rates) {
    if (r < floor_kbps)
      r = floor_kbps;
    else
      r = floor_kbps + (r - floor_kbps) * scale;
  }
}

}  // namespace detail

// Quality-fair transmission rates: R_i = R0 + (Kp+Ki) dU_i + Ki phi_i,
// floor-clamped with proportional redistribution so the sum stays at N*R0.
inline std::vector<double> qf_transmission_rates(const std::vector<double>& udd,
                                                 const std::vector<double>& phi,
                                                 double r0_kbps,
                                                 const ControllerGains& gains,
                                                 const RateLimits& limits = {}) {
  if (udd.size() != phi.size())
    throw std::invalid_argument("qf_transmission_rates: size mismatch");
  const auto delta = utility_discrepancies(udd);
  std::vector<double> rates(udd.size());
  const double k = gains.kp_t + gains.ki_t;
  for (std::size_t i = 0; i < udd.size(); ++i)
    rates[i] = r0_kbps + k * delta[i] + gains.ki_t * phi[i];
  detail::redistribute_to_floor(rates, limits.floor_kbps,
                                r0_kbps * static_cast<double>(rates.size()));
  return rates;
}

// phi accumulates the utility discrepancy; held at zero for the first two
// active slots.
inline double update_phi_value(double phi, double delta_u, int slot_age) {
  return slot_age <= 2 ? 0.0 : phi + delta_u;
}

inline std::vector<double> update_phi(const std::vector<double>& phi,
                                      const std::vector<double>& delta_u, int slot) {
  if (phi.size() != delta_u.size())
    throw std::invalid_argument("update_phi: size mismatch");
  std::vector<double> out(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i)
    out[i] = update_phi_value(phi[i], delta_u[i], slot);
  return out;
}

struct EncodingRate {
  double target_kbps = 0.0;   // raw PI output
  double applied_kbps = 0.0;  // clamped to [floor, ceiling]
};

// Per-stream encoding-rate PI: R = R0 - (Kp+Ki)/T * delta - Ki/T * Pi.
// `discrepancy` is delta-tau in seconds (BufferingDelay) or delta-B in kbit
// (BufferLevel); `pi_acc` is its running sum.
inline EncodingRate qf_encoding_rate(double discrepancy, double pi_acc, double r0_kbps,
                                     const ControllerGains& gains, double T,
                                     const RateLimits& limits = {}) {
  if (!(T > 0.0)) throw std::domain_error("qf_encoding_rate: T must be > 0");
  const double raw = r0_kbps - (gains.kp_e + gains.ki_e) / T * discrepancy -
                     gains.ki_e / T * pi_acc;
  const double applied = std::min(std::max(raw, limits.floor_kbps), limits.ceiling_kbps);
  return {raw, applied};
}

// Pi accumulates the buffer/delay discrepancy; held at zero for the first
// three active slots.
inline double update_pi_acc_value(double pi_acc, double discrepancy, int slot_age) {
  return slot_age <= 3 ? 0.0 : pi_acc + discrepancy;
}

inline std::vector<double> update_pi_acc(const std::vector<double>& pi_acc,
                                         const std::vector<double>& discrepancy,
                                         int slot) {
  if (pi_acc.size() != discrepancy.size())
    throw std::invalid_argument("update_pi_acc: size mismatch");
  std::vector<double> out(pi_acc.size());
  for (std::size_t i = 0; i < pi_acc.size(); ++i)
    out[i] = update_pi_acc_value(pi_acc[i], discrepancy[i], slot);
  return out;
}

// Transmission-rate-fair baseline: everyone drains at Rc/N.
inline std::vector<double> trf_rates(std::size_t n, double rc_kbps) {
  if (n == 0) throw std::invalid_argument("trf_rates: need at least one stream");
  return std::vector<double>(n, rc_kbps / static_cast<double>(n));
}

// Utility-max-min-fair encoding rates. With strictly increasing utilities the
// max-min optimum equalizes them, so this reduces to the equilibrium solve on
// the (delayed) characteristics.
inline std::vector<double> ummf_encoding_rates(
    const std::vector<model::SourceParams>& delayed_params, double rc_kbps) {
  const auto point = eq::solve_equilibrium(delayed_params, rc_kbps);
  return point.r_eq;
}

// UMMF drain control: proportional on the buffer-level discrepancy,
// kp_t in (kbit/s) per kbit. The sum is not renormalized.
inline std::vector<double> ummf_transmission_rates(const std::vector<double>& buffer_bits,
                                                   double b0_bits, double kp_t,
                                                   double r0_kbps,
                                                   const RateLimits& limits = {}) {
  if (kp_t < 0.0) throw std::domain_error("ummf_transmission_rates: kp_t must be >= 0");
  std::vector<double> rates(buffer_bits.size());
  for (std::size_t i = 0; i < buffer_bits.size(); ++i) {
    const double delta_kbit = (buffer_bits[i] - b0_bits) / 1000.0;
    rates[i] = std::max(r0_kbps + kp_t * delta_kbit, limits.floor_kbps);
  }
  return rates;
}

}  // namespace qfmux::control
