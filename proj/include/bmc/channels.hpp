#pragma once

#include <span>
#include <string>
#include <variant>
#include <vector>

#include "bmc/random.hpp"

namespace bmc {

inline constexpr int kSamplesPerSweep = 512;

/// Delayed-rectifier K+ channel (Traub-style modification of Hodgkin-Huxley).
struct KdParams {
  double M = 4.0;
  double R_alpha = 0.032;  // ms^-1 mV^-1
  double V_T = -63.0;      // mV
  double th_alpha = 15.0;  // mV
  double q_alpha = 5.0;    // mV
  double R_beta = 0.5;     // ms^-1
  double th_beta = 10.0;   // mV
  double q_beta = 40.0;    // mV
  double g_bar = 5.0;      // mS/cm^2
  double E_K = -90.0;      // mV

  static constexpr int kFreeParams = 8;
  void validate() const;
  std::vector<double> free_params() const;
  static KdParams from_free(std::span<const double> v);
  static const std::vector<std::string>& free_names();
};

/// Slow non-inactivating (M-type) K+ channel.
struct KsParams {
  double M = 1.0;
  double th_p = 35.0;      // mV
  double q_p = 10.0;       // mV
  double R_tau = 3.3;
  double q_tau = 20.0;     // mV
  double tau_max = 4000.0; // ms
  double g_bar = 0.004;    // mS/cm^2
  double E_K = -90.0;      // mV
  /// Reproduce the printed time-constant formula, which offsets by (V - th_p)
  /// instead of (V + th_p).
  bool strict_printed_offset = false;

  static constexpr int kFreeParams = 5;
  void validate() const;
  std::vector<double> free_params() const;
  static KsParams from_free(std::span<const double> v);
  static const std::vector<std::string>& free_names();
};

using ChannelParams = std::variant<KdParams, KsParams>;

struct Rates {
  double alpha;
  double beta;
};
Rates kd_rates(double v, const KdParams& p);

struct Kinetics {
  double p_inf;
  double tau;
};
Kinetics ks_kinetics(double v, const KsParams& p);

/// Piece of a sweep: V moves linearly from v_start to v_end over `duration` ms
/// (v_start == v_end for a step).
struct Segment {
  double duration;
  double v_start;
  double v_end;
};

using Sweep = std::vector<Segment>;

struct VoltageProtocol {
  std::string name;
  std::vector<Sweep> sweeps;
  double dt = 0.025;  // ms
  double holding_v = -90.0;

  int n_sweeps() const { return static_cast<int>(sweeps.size()); }
  double duration() const;  // longest sweep, ms
  void validate() const;
};

struct ProtocolSettings {
  double holding_v = -90.0;
  double dt = 0.025;
  int steps = 12;
  double lead_in = 100.0;  // ms at holding before the first step
  double tail = 100.0;     // ms at holding after the last step
  // activation
  double act_low = -90.0, act_high = 60.0, act_duration = 500.0;
  // inactivation
  double inact_low = -90.0, inact_high = 60.0, inact_pre_duration = 500.0;
  double inact_test_v = 20.0, inact_test_duration = 200.0;
  // deactivation
  double deact_pre_v = 40.0, deact_pre_duration = 200.0;
  double deact_low = -120.0, deact_high = -10.0, deact_duration = 300.0;
  // action potentials
  int spikes = 10;
  double spike_rest = -70.0, spike_peak = 40.0, spike_width = 2.0, spike_interval = 50.0;
  // ramps
  std::vector<double> ramp_slopes{0.1, 0.2, 0.5, 1.0};  // mV/ms
  double ramp_low = -90.0, ramp_high = 40.0;
};

/// activation, inactivation, deactivation, action_potentials, ramps.
std::vector<VoltageProtocol> build_protocols(const ProtocolSettings& settings = {});

struct ProtocolTrace {
  std::string name;
  int n_sweeps = 0;
  std::vector<double> values;  // sweep-major, n_sweeps * kSamplesPerSweep
};

/// Currents normalized by g_bar, one entry per protocol.
struct TraceSet {
  std::vector<ProtocolTrace> protocols;
};

/// Gate value and normalized current at the requested times of one sweep.
/// `gate_trace`, when non-null, receives the gate value after every internal step.
struct SweepResponse {
  std::vector<double> gate;
  std::vector<double> current;  // I / g_bar
};
SweepResponse simulate_sweep(const ChannelParams& params, const Sweep& sweep, double dt,
                             std::span<const double> sample_times, double holding_v,
                             std::vector<double>* gate_trace = nullptr);

/// Sample times used for subsampling a sweep of the given duration.
std::vector<double> subsample_times(double duration);

ProtocolTrace simulate_clamp(const ChannelParams& params, const VoltageProtocol& protocol);
TraceSet simulate_all(const ChannelParams& params, const std::vector<VoltageProtocol>& protocols);

/// Uniform prior U(0.3 gt, 1.3 gt) around the ground-truth free parameters.
std::vector<double> sample_channel_prior(int model_index, Rng& rng);
std::pair<std::vector<double>, std::vector<double>> channel_prior_bounds(int model_index);
ChannelParams channel_from_free(int model_index, std::span<const double> free);

std::string format_protocols(const std::vector<VoltageProtocol>& protocols);
std::vector<VoltageProtocol> parse_protocols(const std::string& text);

}  // namespace bmc
