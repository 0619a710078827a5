#include "bmc/channels.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bmc/errors.hpp"

namespace bmc {

void KdParams::validate() const {
  if (q_alpha == 0.0 || q_beta == 0.0) throw DomainError("KdParams: q_alpha and q_beta must be nonzero");
  if (!(g_bar > 0.0)) throw DomainError("KdParams: g_bar must be positive");
  if (!(M > 0.0)) throw DomainError("KdParams: exponent M must be positive");
}

std::vector<double> KdParams::free_params() const {
  return {M, R_alpha, V_T, th_alpha, q_alpha, R_beta, th_beta, q_beta};
}

KdParams KdParams::from_free(std::span<const double> v) {
  if (v.size() != kFreeParams) throw InputError("KdParams::from_free: expected 8 values");
  KdParams p;
  p.M = v[0];
  p.R_alpha = v[1];
  p.V_T = v[2];
  p.th_alpha = v[3];
  p.q_alpha = v[4];
  p.R_beta = v[5];
  p.th_beta = v[6];
  p.q_beta = v[7];
  return p;
}

const std::vector<std::string>& KdParams::free_names() {
  static const std::vector<std::string> names{"M", "R_alpha", "V_T", "th_alpha", "q_alpha", "R_beta", "th_beta", "q_beta"};
  return names;
}

void KsParams::validate() const {
  if (q_p == 0.0 || q_tau == 0.0) throw DomainError("KsParams: q_p and q_tau must be nonzero");
  if (!(tau_max > 0.0)) throw DomainError("KsParams: tau_max must be positive");
  if (!(g_bar > 0.0)) throw DomainError("KsParams: g_bar must be positive");
  if (!(M > 0.0)) throw DomainError("KsParams: exponent M must be positive");
}

std::vector<double> KsParams::free_params() const { return {M, th_p, q_p, R_tau, q_tau}; }

KsParams KsParams::from_free(std::span<const double> v) {
  if (v.size() != kFreeParams) throw InputError("KsParams::from_free: expected 5 values");
  KsParams p;
  p.M = v[0];
  p.th_p = v[1];
  p.q_p = v[2];
  p.R_tau = v[3];
  p.q_tau = v[4];
  return p;
}

const std::vector<std::string>& KsParams::free_names() {
  static const std::vector<std::string> names{"M", "th_p", "q_p", "R_tau", "q_tau"};
  return names;
}

Rates kd_rates(double v, const KdParams& p) {
  const double u = v - p.V_T - p.th_alpha;
  double alpha;
  if (std::fabs(u) < 1e-4 * std::fabs(p.q_alpha)) {
    // u / (1 - exp(-u/q)) = q (1 + u/(2q) + u^2/(12 q^2) + ...)
    const double r = u / p.q_alpha;
    alpha = p.R_alpha * p.q_alpha * (1.0 + 0.5 * r + r * r / 12.0);
  } else {
    alpha = p.R_alpha * u / -std::expm1(-u / p.q_alpha);
  }
  const double beta = p.R_beta * std::exp(-(v - p.V_T - p.th_beta) / p.q_beta);
  return {alpha, beta};
}

Kinetics ks_kinetics(double v, const KsParams& p) {
  const double p_inf = 1.0 / (1.0 + std::exp(-(v + p.th_p) / p.q_p));
  const double w = (p.strict_printed_offset ? v - p.th_p : v + p.th_p) / p.q_tau;
  const double tau = p.tau_max / (p.R_tau * std::exp(w) + std::exp(-w));
  return {p_inf, tau};
}

double VoltageProtocol::duration() const {
  double longest = 0.0;
  for (const auto& sweep : sweeps) {
    double total = 0.0;
    for (const auto& seg : sweep) total += seg.duration;
    longest = std::max(longest, total);
  }
  return longest;
}

void VoltageProtocol::validate() const {
  if (!(dt > 0.0)) throw DomainError("VoltageProtocol '" + name + "': dt must be positive");
  if (sweeps.empty()) throw DomainError("VoltageProtocol '" + name + "': no sweeps");
  for (const auto& sweep : sweeps) {
    if (sweep.empty()) throw DomainError("VoltageProtocol '" + name + "': empty sweep");
    for (const auto& seg : sweep)
      if (!(seg.duration > 0.0)) throw DomainError("VoltageProtocol '" + name + "': non-positive segment");
  }
}

namespace {

double level(double low, double high, int i, int n) {
  return n == 1 ? low : low + (high - low) * static_cast<double>(i) / static_cast<double>(n - 1);
}

// Steady state and time constant of the single gate, in the common relaxation
// form dx/dt = (x_inf - x) / tau.
constexpr double kGauss1 = 0.5 - 0.28867513459481288225;  // 1/2 -+ sqrt(3)/6
constexpr double kGauss2 = 0.5 + 0.28867513459481288225;

struct GateKinetics {
  double x_inf;
  double tau;
};

struct GateModel {
  const ChannelParams& params;

  GateKinetics at(double v) const {
    if (const auto* kd = std::get_if<KdParams>(&params)) {
      const auto r = kd_rates(v, *kd);
      const double sum = r.alpha + r.beta;
      return {r.alpha / sum, 1.0 / sum};
    }
    const auto k = ks_kinetics(v, std::get<KsParams>(params));
    return {k.p_inf, k.tau};
  }
  double exponent() const {
    return std::visit([](const auto& p) { return p.M; }, params);
  }
  double reversal() const {
    return std::visit([](const auto& p) { return p.E_K; }, params);
  }
};

double relax(double x, const GateKinetics& k, double h) { return k.x_inf + (x - k.x_inf) * std::exp(-h / k.tau); }

// One step of dx/dt = a(t) - b(t) x under a linearly varying voltage, with
// a = x_inf / tau and b = 1 / tau. Fourth-order Magnus expansion on the two
// Gauss nodes of the step; the exponential of the augmented 2x2 generator is
// closed-form. Reduces to `relax` when the two nodes agree.
double relax_varying(double x, const GateKinetics& k1, const GateKinetics& k2, double h) {
  const double b1 = 1.0 / k1.tau, b2 = 1.0 / k2.tau;
  const double a1 = k1.x_inf * b1, a2 = k2.x_inf * b2;
  const double B = 0.5 * h * (b1 + b2);
  const double A = 0.5 * h * (a1 + a2) + std::sqrt(3.0) / 12.0 * h * h * (b1 * a2 - b2 * a1);
  return std::exp(-B) * x + A * (-std::expm1(-B)) / B;
}

}  // namespace

std::vector<VoltageProtocol> build_protocols(const ProtocolSettings& s) {
  std::vector<VoltageProtocol> out;
  const double hold = s.holding_v;

  VoltageProtocol act{"activation", {}, s.dt, hold};
  for (int i = 0; i < s.steps; ++i)
    act.sweeps.push_back({{s.lead_in, hold, hold},
                          {s.act_duration, level(s.act_low, s.act_high, i, s.steps), level(s.act_low, s.act_high, i, s.steps)},
                          {s.tail, hold, hold}});
  out.push_back(std::move(act));

  VoltageProtocol inact{"inactivation", {}, s.dt, hold};
  for (int i = 0; i < s.steps; ++i) {
    const double v = level(s.inact_low, s.inact_high, i, s.steps);
    inact.sweeps.push_back({{s.lead_in, hold, hold},
                            {s.inact_pre_duration, v, v},
                            {s.inact_test_duration, s.inact_test_v, s.inact_test_v},
                            {s.tail, hold, hold}});
  }
  out.push_back(std::move(inact));

  VoltageProtocol deact{"deactivation", {}, s.dt, hold};
  for (int i = 0; i < s.steps; ++i) {
    const double v = level(s.deact_low, s.deact_high, i, s.steps);
    deact.sweeps.push_back({{s.lead_in, hold, hold},
                            {s.deact_pre_duration, s.deact_pre_v, s.deact_pre_v},
                            {s.deact_duration, v, v},
                            {s.tail, hold, hold}});
  }
  out.push_back(std::move(deact));

  VoltageProtocol ap{"action_potentials", {}, s.dt, s.spike_rest};
  Sweep train;
  const double half = 0.5 * s.spike_width;
  for (int i = 0; i < s.spikes; ++i) {
    train.push_back({s.spike_interval - s.spike_width, s.spike_rest, s.spike_rest});
    train.push_back({half, s.spike_rest, s.spike_peak});
    train.push_back({half, s.spike_peak, s.spike_rest});
  }
  ap.sweeps.push_back(std::move(train));
  out.push_back(std::move(ap));

  VoltageProtocol ramps{"ramps", {}, s.dt, s.ramp_low};
  for (double slope : s.ramp_slopes) {
    const double t = (s.ramp_high - s.ramp_low) / slope;
    ramps.sweeps.push_back({{s.lead_in, s.ramp_low, s.ramp_low},
                            {t, s.ramp_low, s.ramp_high},
                            {t, s.ramp_high, s.ramp_low},
                            {s.tail, s.ramp_low, s.ramp_low}});
  }
  out.push_back(std::move(ramps));
  return out;
}

std::vector<double> subsample_times(double duration) {
  std::vector<double> t(kSamplesPerSweep);
  const double step = duration / kSamplesPerSweep;
  for (int j = 0; j < kSamplesPerSweep; ++j) t[static_cast<std::size_t>(j)] = (j + 0.5) * step;
  return t;
}

SweepResponse simulate_sweep(const ChannelParams& params, const Sweep& sweep, double dt,
                             std::span<const double> sample_times, double holding_v, std::vector<double>* gate_trace) {
  std::visit([](const auto& p) { p.validate(); }, params);
  if (!(dt > 0.0)) throw DomainError("simulate_sweep: dt must be positive");
  const GateModel model{params};
  const double exponent = model.exponent();
  const double reversal = model.reversal();

  SweepResponse out;
  out.gate.reserve(sample_times.size());
  out.current.reserve(sample_times.size());

  double x = model.at(holding_v).x_inf;
  double t = 0.0;
  std::size_t next_sample = 0;

  auto advance = [&](const Segment& seg, double seg_t0, double to) {
    const double span = to - t;
    if (span <= 0.0) return;
    if (seg.v_start == seg.v_end) {
      x = relax(x, model.at(seg.v_start), span);
      if (gate_trace) gate_trace->push_back(x);
    } else {
      const int n = std::max(1, static_cast<int>(std::ceil(span / dt - 1e-9)));
      const double h = span / n;
      const double slope = (seg.v_end - seg.v_start) / seg.duration;
      for (int i = 0; i < n; ++i) {
        const double t1 = t + (i + kGauss1) * h, t2 = t + (i + kGauss2) * h;
        x = relax_varying(x, model.at(seg.v_start + slope * (t1 - seg_t0)), model.at(seg.v_start + slope * (t2 - seg_t0)),
                          h);
        if (gate_trace) gate_trace->push_back(x);
      }
    }
    t = to;
  };

  double seg_t0 = 0.0;
  for (const auto& seg : sweep) {
    const double seg_t1 = seg_t0 + seg.duration;
    while (next_sample < sample_times.size() && sample_times[next_sample] < seg_t1) {
      const double ts = std::max(sample_times[next_sample], t);
      advance(seg, seg_t0, ts);
      const double v = seg.v_start + (seg.v_end - seg.v_start) * (ts - seg_t0) / seg.duration;
      out.gate.push_back(x);
      out.current.push_back(std::pow(x, exponent) * (v - reversal));
      ++next_sample;
    }
    advance(seg, seg_t0, seg_t1);
    seg_t0 = seg_t1;
  }
  // samples past the end of the sweep hold the final state
  const auto& last = sweep.back();
  while (next_sample < sample_times.size()) {
    out.gate.push_back(x);
    out.current.push_back(std::pow(x, exponent) * (last.v_end - reversal));
    ++next_sample;
  }
  return out;
}

ProtocolTrace simulate_clamp(const ChannelParams& params, const VoltageProtocol& protocol) {
  protocol.validate();
  ProtocolTrace trace{protocol.name, protocol.n_sweeps(), {}};
  trace.values.reserve(static_cast<std::size_t>(protocol.n_sweeps()) * kSamplesPerSweep);
  for (int s = 0; s < protocol.n_sweeps(); ++s) {
    const auto& sweep = protocol.sweeps[static_cast<std::size_t>(s)];
    double duration = 0.0;
    for (const auto& seg : sweep) duration += seg.duration;
    const auto times = subsample_times(duration);
    const auto response = simulate_sweep(params, sweep, protocol.dt, times, protocol.holding_v);
    for (double c : response.current) {
      if (!std::isfinite(c))
        throw DivergenceError("simulate_clamp: non-finite state in protocol '" + protocol.name + "' sweep " +
                              std::to_string(s));
      trace.values.push_back(c);
    }
  }
  return trace;
}

TraceSet simulate_all(const ChannelParams& params, const std::vector<VoltageProtocol>& protocols) {
  TraceSet set;
  set.protocols.reserve(protocols.size());
  for (const auto& p : protocols) set.protocols.push_back(simulate_clamp(params, p));
  return set;
}

std::pair<std::vector<double>, std::vector<double>> channel_prior_bounds(int model_index) {
  const auto gt = model_index == 0 ? KdParams{}.free_params() : KsParams{}.free_params();
  std::vector<double> lo(gt.size()), hi(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    lo[i] = std::min(0.3 * gt[i], 1.3 * gt[i]);
    hi[i] = std::max(0.3 * gt[i], 1.3 * gt[i]);
  }
  return {lo, hi};
}

std::vector<double> sample_channel_prior(int model_index, Rng& rng) {
  const auto [lo, hi] = channel_prior_bounds(model_index);
  std::vector<double> v(lo.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = lo[i] + (hi[i] - lo[i]) * rng.uniform();
  return v;
}

ChannelParams channel_from_free(int model_index, std::span<const double> free) {
  if (model_index == 0) return KdParams::from_free(free);
  if (model_index == 1) return KsParams::from_free(free);
  throw InputError("channel_from_free: model index must be 0 (Kd) or 1 (Ks)");
}

std::string format_protocols(const std::vector<VoltageProtocol>& protocols) {
  std::ostringstream os;
  os.precision(17);
  for (const auto& p : protocols) {
    os << "protocol " << p.name << "\n";
    os << "dt " << p.dt << "\n";
    os << "holding " << p.holding_v << "\n";
    for (const auto& sweep : p.sweeps) {
      os << "sweep\n";
      for (const auto& seg : sweep) os << "segment " << seg.duration << " " << seg.v_start << " " << seg.v_end << "\n";
    }
    os << "end\n";
  }
  return os.str();
}

std::vector<VoltageProtocol> parse_protocols(const std::string& text) {
  std::vector<VoltageProtocol> out;
  std::istringstream is(text);
  std::string line;
  VoltageProtocol* current = nullptr;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key) || key[0] == '#') continue;
    auto fail = [&] { throw InputError("protocol text line " + std::to_string(line_no) + ": malformed '" + line + "'"); };
    if (key == "protocol") {
      if (current) fail();
      out.push_back({});
      current = &out.back();
      if (!(ls >> current->name)) fail();
      continue;
    }
    if (!current) fail();
    if (key == "dt") {
      if (!(ls >> current->dt)) fail();
    } else if (key == "holding") {
      if (!(ls >> current->holding_v)) fail();
    } else if (key == "sweep") {
      current->sweeps.emplace_back();
    } else if (key == "segment") {
      Segment seg{};
      if (current->sweeps.empty() || !(ls >> seg.duration >> seg.v_start >> seg.v_end)) fail();
      current->sweeps.back().push_back(seg);
    } else if (key == "end") {
      current->validate();
      current = nullptr;
    } else {
      fail();
    }
  }
  if (current) throw InputError("protocol text: missing 'end' for protocol '" + current->name + "'");
  return out;
}

}  // namespace bmc
