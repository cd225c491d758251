#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qfmux/control.hpp"
#include "qfmux/equilibrium.hpp"
#include "qfmux/errors.hpp"
#include "qfmux/plant.hpp"
#include "qfmux/rng.hpp"
#include "qfmux/source_model.hpp"

namespace qfmux::sim {

enum class Policy { QF, TRF, UMMF };

inline const char* policy_name(Policy p) {
  switch (p) {
    case Policy::QF: return "qf";
    case Policy::TRF: return "trf";
    case Policy::UMMF: return "ummf";
  }
  return "?";
}

struct StreamSpec {
  model::SourceParams params;
  model::ParamNoiseSpec noise;
  int join_slot = 1;                 // first active slot (1-based)
  std::optional<int> leave_slot;     // first slot the stream is gone
};

struct ChannelRateEvent {
  int slot = 1;
  double rate_kbps = 0.0;
};

struct Scenario {
  int horizon = 300;                       // slots
  double channel_rate_kbps = 4000.0;       // initial R^c
  std::vector<ChannelRateEvent> rate_events;
  Policy policy = Policy::QF;
  control::ControllerGains gains;
  control::RateLimits limits;
  plant::PlantConfig plant;
  double ummf_kp_t = 3.0;  // (kbit/s) per kbit, UMMF drain control
  std::vector<StreamSpec> streams;
  std::uint64_t seed = 1;

  void validate() const {
    if (horizon < 4) throw std::domain_error("Scenario: horizon must be >= 4");
    if (!(channel_rate_kbps > 0.0))
      throw std::domain_error("Scenario: channel rate must be > 0");
    for (const auto& ev : rate_events)
      if (!(ev.rate_kbps > 0.0))
        throw std::domain_error("Scenario: channel rate must stay > 0");
    if (streams.empty()) throw std::domain_error("Scenario: need at least one stream");
    for (const auto& s : streams) {
      s.params.validate();
      s.noise.validate();
      if (s.join_slot < 1) throw std::domain_error("Scenario: join_slot must be >= 1");
      if (s.leave_slot && *s.leave_slot <= s.join_slot)
        throw std::domain_error("Scenario: leave_slot must be after join_slot");
    }
    plant.validate();
    if (policy == Policy::QF) gains.validate_for_qf();
  }
};

// One CSV row: controller outputs computed during the slot plus the plant
// state after the slot's arrivals and drains.
struct StepRow {
  int slot = 0;
  int stream_id = 0;
  double enc_target = 0.0;   // raw PI output, kbit/s
  double enc_applied = 0.0;  // clamped command, kbit/s
  double trans_rate = 0.0;   // drain command, kbit/s
  double buffer_bits = 0.0;
  double tau_exact = 0.0;    // s
  double tau_est = 0.0;      // s
  double utility = 0.0;      // utility of the VU encoded this slot
  double phi = 0.0;
  double pi_acc = 0.0;
  int underflow = 0;
  int overflow = 0;
};

struct MetricsSummary {
  double delta_b_kbit = 0.0;     // mean (B - B0)
  double sigma2_b_kbit2 = 0.0;   // variance of (B - B0)
  double delta_p = 0.0;          // mean |P_i - mean(P)| per slot
  double sigma2_p = 0.0;         // mean (P_i - mean(P))^2 per slot
  double delta_tau_s = 0.0;      // mean (tau - tau0)
  double sigma2_tau_s2 = 0.0;    // variance of (tau - tau0)
  long underflows = 0;
  long overflows = 0;
};

struct RunResult {
  std::vector<StepRow> rows;
  MetricsSummary metrics;
};

namespace detail {

struct StreamRuntime {
  int id = 0;
  model::SourceParams params;          // a(j)
  model::SourceParams params_delayed;  // a(j-1)
  model::ParamNoiseSpec noise;
  plant::StreamState state;
  int age = 0;  // active slots so far; 1 on the first stepped slot
  RngStream rng{0};
};

}  // namespace detail

// Closed-loop world. step() advances one slot with a simultaneous commit of
// the whole state vector, matching the discrete-time state-space update.
class Engine {
 public:
  explicit Engine(const Scenario& scenario) : scenario_(scenario) {
    scenario_.validate();
    limits_ = scenario_.limits;
    channel_rate_ = scenario_.channel_rate_kbps;
    joined_.assign(scenario_.streams.size(), false);
  }

  // Test hooks: additive impulses applied to the commanded encoding rate or
  // to the freshly produced utility at a given (slot, stream).
  void inject_enc_rate_impulse(int slot, int stream_id, double delta_kbps) {
    enc_impulses_[{slot, stream_id}] = delta_kbps;
  }
  void inject_utility_impulse(int slot, int stream_id, double delta) {
    utility_impulses_[{slot, stream_id}] = delta;
  }

  double channel_rate() const { return channel_rate_; }
  int active_streams() const { return static_cast<int>(streams_.size()); }

  const std::vector<detail::StreamRuntime>& streams() const { return streams_; }

  // Instantiate every slot-1 stream and pin the whole world at a solved
  // equilibrium: buffers, VU queues, delay lines, estimators and accumulators
  // all take their equilibrium values and the warm-up thresholds are already
  // behind. With frozen parameters the subsequent steps must hold the state.
  void initialize_at_equilibrium(const eq::EquilibriumPoint& point) {
    apply_events(1);
    if (streams_.size() != scenario_.streams.size())
      throw std::invalid_argument(
          "initialize_at_equilibrium: every stream must join at slot 1");
    if (point.r_eq.size() != streams_.size() || point.b_eq.size() != streams_.size() ||
        point.pi_eq.size() != streams_.size() || point.phi_eq.size() != streams_.size())
      throw std::invalid_argument("initialize_at_equilibrium: incomplete equilibrium");
    const double T = scenario_.plant.vu_duration_s;
    for (std::size_t i = 0; i < streams_.size(); ++i) {
      auto& s = streams_[i];
      const double r = point.r_eq[i];
      const double b = point.b_eq[i];
      const double vu_bits = r * T * plant::kKbitToBits;

      plant::StreamState st;
      st.buffer_bits = b;
      const int whole = static_cast<int>(std::floor(b / vu_bits));
      const double frac_bits = b - whole * vu_bits;
      if (frac_bits > 0.0)
        st.vu_queue.push_back({vu_bits, frac_bits, r, point.u_eq});
      for (int k = 0; k < whole; ++k)
        st.vu_queue.push_back({vu_bits, vu_bits, r, point.u_eq});
      st.rate_estimate = r;
      st.enc_rate_delay_line[0] = st.enc_rate_delay_line[1] = r;
      st.utility_delay_line[0] = st.utility_delay_line[1] = point.u_eq;
      st.phi = point.phi_eq[i];
      st.pi_acc = point.pi_eq[i];

      s.state = std::move(st);
      s.age = 10;
    }
    global_age_ = 10;  // past both accumulator warm-up thresholds
  }

  // Advance to slot j (1-based), returning the per-stream rows.
  std::vector<StepRow> step(int slot) {
    apply_events(slot);
    const std::size_t n = streams_.size();
    if (n == 0) return {};
    const double rc = channel_rate_;
    const double r0 = rc / static_cast<double>(n);
    const double T = scenario_.plant.vu_duration_s;

    // Slot-start reads (the j-indexed state).
    std::vector<double> udd(n), phi(n), discrepancy(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto& s = streams_[i];
      udd[i] = plant::delayed_utility(s.state);
      phi[i] = s.state.phi;
      if (scenario_.gains.mode == control::Mode::BufferingDelay)
        discrepancy[i] = plant::estimate_delay(s.state) - scenario_.plant.tau0_s;
      else
        discrepancy[i] = (s.state.buffer_bits - scenario_.plant.b0_bits) / 1000.0;
    }
    const auto delta_u = control::utility_discrepancies(udd);

    // Controller outputs for the slot.
    control::RateCommand cmd;
    cmd.transmission_rates.resize(n);
    cmd.encoding_targets.resize(n);
    cmd.encoding_applied.resize(n);
    switch (scenario_.policy) {
      case Policy::QF:
        cmd.transmission_rates =
            control::qf_transmission_rates(udd, phi, r0, scenario_.gains, limits_);
        break;
      case Policy::TRF:
        cmd.transmission_rates = control::trf_rates(n, rc);
        break;
      case Policy::UMMF: {
        std::vector<double> buffers(n);
        for (std::size_t i = 0; i < n; ++i) buffers[i] = streams_[i].state.buffer_bits;
        cmd.transmission_rates = control::ummf_transmission_rates(
            buffers, scenario_.plant.b0_bits, scenario_.ummf_kp_t, r0, limits_);
        break;
      }
    }

    // Encoding commands (these become R^ed at the next slot).
    if (scenario_.policy == Policy::UMMF) {
      std::vector<model::SourceParams> delayed;
      delayed.reserve(n);
      for (const auto& s : streams_) delayed.push_back(s.params_delayed);
      auto rates = control::ummf_encoding_rates(delayed, rc);
      for (std::size_t i = 0; i < n; ++i) {
        cmd.encoding_targets[i] = rates[i];
        cmd.encoding_applied[i] =
            std::min(std::max(rates[i], limits_.floor_kbps), limits_.ceiling_kbps);
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        const auto e = control::qf_encoding_rate(discrepancy[i], streams_[i].state.pi_acc,
                                                 r0, scenario_.gains, T, limits_);
        cmd.encoding_targets[i] = e.target_kbps;
        cmd.encoding_applied[i] = e.applied_kbps;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (auto it = enc_impulses_.find({slot, streams_[i].id}); it != enc_impulses_.end())
        cmd.encoding_applied[i] += it->second;
    }

    // Commit phase: accumulators, plant, estimator, delay lines, parameters.
    // The accumulator warm-up holds follow the global slot clock: holding a
    // late joiner individually would break the zero sum of phi and with it
    // the channel-rate identity.
    global_age_ += 1;
    std::vector<StepRow> rows(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto& s = streams_[i];
      s.age += 1;

      s.state.phi = control::update_phi_value(s.state.phi, delta_u[i], global_age_);
      s.state.pi_acc =
          control::update_pi_acc_value(s.state.pi_acc, discrepancy[i], global_age_);

      const double arriving_rate = plant::delayed_enc_rate(s.state);
      const double arriving_utility = udd[i];
      const auto flags = plant::buffer_step(s.state, arriving_rate, cmd.transmission_rates[i], T,
                                            scenario_.plant.b_max_bits, arriving_utility);

      plant::update_rate_estimate(s.state, cmd.encoding_applied[i], scenario_.plant.alpha, s.age);

      // Utility of the VU encoded with this slot's command; it becomes the
      // dd-available utility two slots from now.
      double new_utility = model::eval_utility(s.params, cmd.encoding_applied[i]);
      if (auto it = utility_impulses_.find({slot, s.id}); it != utility_impulses_.end())
        new_utility += it->second;
      plant::shift_delay_lines(s.state, cmd.encoding_applied[i], new_utility);

      s.params_delayed = s.params;
      s.params = model::step_params(s.params, s.noise, s.rng);

      StepRow row;
      row.slot = slot;
      row.stream_id = s.id;
      row.enc_target = cmd.encoding_targets[i];
      row.enc_applied = cmd.encoding_applied[i];
      row.trans_rate = cmd.transmission_rates[i];
      row.buffer_bits = s.state.buffer_bits;
      row.tau_exact = plant::exact_delay(s.state, T);
      row.tau_est = plant::estimate_delay(s.state);
      row.utility = new_utility;
      row.phi = s.state.phi;
      row.pi_acc = s.state.pi_acc;
      row.underflow = flags.underflow ? 1 : 0;
      row.overflow = flags.overflow ? 1 : 0;
      rows[i] = row;
    }
    return rows;
  }

  RunResult run() {
    RunResult result;
    result.rows.reserve(static_cast<std::size_t>(scenario_.horizon) *
                        std::max<std::size_t>(scenario_.streams.size(), 1));
    for (int slot = 1; slot <= scenario_.horizon; ++slot) {
      auto rows = step(slot);
      result.rows.insert(result.rows.end(), rows.begin(), rows.end());
    }
    result.metrics = compute_metrics(result.rows, scenario_.plant.b0_bits,
                                     scenario_.plant.tau0_s);
    return result;
  }

  // Mean/variance discrepancies over all stream-slot pairs. Level and delay
  // discrepancies are signed (reference: B0, tau0); the per-slot quality
  // discrepancy P_i - mean(P) sums to zero by construction, so its headline
  // number is the mean absolute value and its spread the uncentered mean
  // square.
  static MetricsSummary compute_metrics(const std::vector<StepRow>& rows, double b0_bits,
                                        double tau0_s) {
    MetricsSummary m;
    if (rows.empty()) return m;

    std::map<int, std::vector<const StepRow*>> by_slot;
    for (const auto& r : rows) by_slot[r.slot].push_back(&r);

    std::vector<double> b_dev, tau_dev, p_dev;
    for (const auto& [slot, slot_rows] : by_slot) {
      double p_mean = 0.0;
      for (const auto* r : slot_rows) p_mean += r->utility;
      p_mean /= static_cast<double>(slot_rows.size());
      for (const auto* r : slot_rows) {
        b_dev.push_back((r->buffer_bits - b0_bits) / 1000.0);
        tau_dev.push_back(r->tau_exact - tau0_s);
        p_dev.push_back(r->utility - p_mean);
        m.underflows += r->underflow;
        m.overflows += r->overflow;
      }
    }
    const double count = static_cast<double>(b_dev.size());
    double sum_b = 0.0, sum_tau = 0.0, sum_p_abs = 0.0, sum_p_sq = 0.0;
    for (std::size_t k = 0; k < b_dev.size(); ++k) {
      sum_b += b_dev[k];
      sum_tau += tau_dev[k];
      sum_p_abs += std::abs(p_dev[k]);
      sum_p_sq += p_dev[k] * p_dev[k];
    }
    m.delta_b_kbit = sum_b / count;
    m.delta_tau_s = sum_tau / count;
    m.delta_p = sum_p_abs / count;
    m.sigma2_p = sum_p_sq / count;
    double var_b = 0.0, var_tau = 0.0;
    for (std::size_t k = 0; k < b_dev.size(); ++k) {
      var_b += (b_dev[k] - m.delta_b_kbit) * (b_dev[k] - m.delta_b_kbit);
      var_tau += (tau_dev[k] - m.delta_tau_s) * (tau_dev[k] - m.delta_tau_s);
    }
    m.sigma2_b_kbit2 = var_b / count;
    m.sigma2_tau_s2 = var_tau / count;
    return m;
  }

 private:
  void apply_events(int slot) {
    for (const auto& ev : scenario_.rate_events)
      if (ev.slot == slot) channel_rate_ = ev.rate_kbps;

    bool membership_changed = false;
    // Leaves: state is discarded.
    for (auto it = streams_.begin(); it != streams_.end();) {
      const auto& spec = scenario_.streams[static_cast<std::size_t>(it->id)];
      if (spec.leave_slot && *spec.leave_slot == slot) {
        it = streams_.erase(it);
        membership_changed = true;
      } else {
        ++it;
      }
    }
    // Joins: bootstrapped like an initial stream at the post-join R^c/N.
    std::vector<int> joining;
    for (std::size_t idx = 0; idx < scenario_.streams.size(); ++idx) {
      if (scenario_.streams[idx].join_slot == slot && !joined_[idx])
        joining.push_back(static_cast<int>(idx));
    }
    if (!joining.empty()) {
      const double n_after = static_cast<double>(streams_.size() + joining.size());
      for (int idx : joining) {
        streams_.push_back(make_runtime(idx, channel_rate_ / n_after));
        joined_[static_cast<std::size_t>(idx)] = true;
      }
      membership_changed = true;
    }
    // The transmission integral must keep summing to zero across the active
    // set, otherwise the drain commands stop adding up to the channel rate.
    if (membership_changed && !streams_.empty()) {
      double mean = 0.0;
      for (const auto& s : streams_) mean += s.state.phi;
      mean /= static_cast<double>(streams_.size());
      for (auto& s : streams_) s.state.phi -= mean;
    }
  }

  detail::StreamRuntime make_runtime(int spec_idx, double r0) const {
    const auto& spec = scenario_.streams[static_cast<std::size_t>(spec_idx)];
    detail::StreamRuntime rt;
    rt.id = spec_idx;
    rt.params = spec.params;
    rt.params_delayed = spec.params;
    rt.noise = spec.noise;
    rt.rng = RngStream::derive(scenario_.seed, static_cast<std::uint64_t>(spec_idx));
    rt.age = 0;

    const double T = scenario_.plant.vu_duration_s;
    const double vu_bits = r0 * T * plant::kKbitToBits;
    const double u0 = model::eval_utility(spec.params, r0);
    for (int k = 0; k < scenario_.plant.initial_buffer_vus; ++k) {
      rt.state.vu_queue.push_back({vu_bits, vu_bits, r0, u0});
      rt.state.buffer_bits += vu_bits;
    }
    rt.state.rate_estimate = r0;
    rt.state.enc_rate_delay_line[0] = rt.state.enc_rate_delay_line[1] = r0;
    rt.state.utility_delay_line[0] = rt.state.utility_delay_line[1] = u0;
    return rt;
  }

  Scenario scenario_;
  control::RateLimits limits_;
  double channel_rate_ = 0.0;
  int global_age_ = 0;
  std::vector<detail::StreamRuntime> streams_;
  std::vector<bool> joined_;
  std::map<std::pair<int, int>, double> enc_impulses_;
  std::map<std::pair<int, int>, double> utility_impulses_;
};

}  // namespace qfmux::sim
