#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <stdexcept>

#include "qfmux/errors.hpp"

namespace qfmux::plant {

// kbit/s * s -> bits
inline constexpr double kKbitToBits = 1000.0;

struct PlantConfig {
  double vu_duration_s = 1.0 / 3.0;  // T
  double b_max_bits = 4e6;
  double b0_bits = 4e5;       // reference level, buffer mode
  double tau0_s = 1.5;        // reference delay, delay mode
  double alpha = 0.2;         // rate-estimate smoothing, in (0,1)
  int initial_buffer_vus = 3;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0))
      throw std::domain_error("PlantConfig: alpha must be in (0,1)");
    if (!(b0_bits < b_max_bits))
      throw std::domain_error("PlantConfig: B0 must be below B_max");
    if (!(vu_duration_s > 0.0)) throw std::domain_error("PlantConfig: T must be > 0");
    if (!(tau0_s > 0.0)) throw std::domain_error("PlantConfig: tau0 must be > 0");
    if (initial_buffer_vus < 0)
      throw std::domain_error("PlantConfig: initial_buffer_vus must be >= 0");
  }
};

// One buffered video unit; remaining_bits tracks partial draining of the head.
struct VuRecord {
  double size_bits = 0.0;
  double remaining_bits = 0.0;
  double enc_rate = 0.0;  // kbit/s the VU was encoded at
  double utility = 0.0;
};

struct StepFlags {
  bool underflow = false;
  bool overflow = false;
  double drained_bits = 0.0;
  double stored_bits = 0.0;
};

// All per-stream dynamic state.
//   enc_rate_delay_line[0] = R^e(j-1), [1] = R^e(j-2)
//   utility_delay_line[0]  = U(j-1),   [1] = U(j-2)
struct StreamState {
  double buffer_bits = 0.0;
  double enc_rate_delay_line[2] = {0.0, 0.0};
  double utility_delay_line[2] = {0.0, 0.0};
  double phi = 0.0;            // cumulated utility discrepancy
  double pi_acc = 0.0;         // cumulated buffer/delay discrepancy
  double rate_estimate = 0.0;  // smoothed arrival encoding rate, kbit/s
  std::deque<VuRecord> vu_queue;

  double queued_bits() const {
    double s = 0.0;
    for (const auto& vu : vu_queue) s += vu.remaining_bits;
    return s;
  }
};

inline double delayed_enc_rate(const StreamState& s) { return s.enc_rate_delay_line[1]; }
inline double delayed_utility(const StreamState& s) { return s.utility_delay_line[1]; }

// One buffer update: deposit the arriving VU, then drain the requested bits
// from the head with partial-VU tracking. Saturation is reported, not thrown.
inline StepFlags buffer_step(StreamState& s, double enc_rate_arriving_kbps,
                             double drain_rate_kbps, double T, double b_max_bits,
                             double arriving_utility = 0.0) {
  if (enc_rate_arriving_kbps < 0.0 || drain_rate_kbps < 0.0)
    throw std::domain_error("buffer_step: rates must be >= 0");
  StepFlags flags;

  const double arriving_bits = enc_rate_arriving_kbps * T * kKbitToBits;
  if (arriving_bits > 0.0) {
    s.vu_queue.push_back(
        {arriving_bits, arriving_bits, enc_rate_arriving_kbps, arriving_utility});
    s.buffer_bits += arriving_bits;
    flags.stored_bits = arriving_bits;
  }

  double to_drain = drain_rate_kbps * T * kKbitToBits;
  if (to_drain > s.buffer_bits) {
    flags.underflow = true;
    to_drain = s.buffer_bits;
  }
  flags.drained_bits = to_drain;
  s.buffer_bits -= to_drain;
  while (to_drain > 0.0 && !s.vu_queue.empty()) {
    VuRecord& head = s.vu_queue.front();
    if (head.remaining_bits > to_drain) {
      head.remaining_bits -= to_drain;
      to_drain = 0.0;
    } else {
      to_drain -= head.remaining_bits;
      s.vu_queue.pop_front();
    }
  }

  if (s.buffer_bits > b_max_bits) {
    // Tail-drop the excess of the freshest content.
    double excess = s.buffer_bits - b_max_bits;
    flags.overflow = true;
    flags.stored_bits -= excess;
    s.buffer_bits = b_max_bits;
    while (excess > 0.0 && !s.vu_queue.empty()) {
      VuRecord& tail = s.vu_queue.back();
      if (tail.remaining_bits > excess) {
        tail.remaining_bits -= excess;
        excess = 0.0;
      } else {
        excess -= tail.remaining_bits;
        s.vu_queue.pop_back();
      }
    }
  }

  if (std::abs(s.queued_bits() - s.buffer_bits) > 1.0)
    throw numeric_error("buffer_step: VU queue out of sync with the buffer level");
  return flags;
}

// Exponential smoothing of the arrival encoding rate. `slot_age` is the
// stream-local slot count (1 on the first active slot); the filter
// bootstraps from the current target rate for the first two slots.
inline void update_rate_estimate(StreamState& s, double current_target_kbps,
                                 double alpha, int slot_age) {
  if (slot_age <= 2) {
    s.rate_estimate = current_target_kbps;
  } else {
    s.rate_estimate = alpha * delayed_enc_rate(s) + (1.0 - alpha) * s.rate_estimate;
  }
}

// Estimated buffering delay, B / R~, in seconds.
inline double estimate_delay(const StreamState& s) {
  if (!(s.rate_estimate > 0.0))
    throw numeric_error("estimate_delay: rate estimate not positive");
  return s.buffer_bits / (s.rate_estimate * kKbitToBits);
}

// Ground-truth buffering delay: h * T where h counts whole VUs plus the
// drained head's remaining fraction.
inline double exact_delay(const StreamState& s, double T) {
  double h = 0.0;
  for (const auto& vu : s.vu_queue) h += vu.remaining_bits / vu.size_bits;
  return h * T;
}

// Shift both delay lines by one slot; the dropped entries are the values the
// controllers saw as two-slot-delayed quantities.
inline void shift_delay_lines(StreamState& s, double new_enc_rate, double new_utility) {
  s.enc_rate_delay_line[1] = s.enc_rate_delay_line[0];
  s.enc_rate_delay_line[0] = new_enc_rate;
  s.utility_delay_line[1] = s.utility_delay_line[0];
  s.utility_delay_line[0] = new_utility;
}

}  // namespace qfmux::plant
