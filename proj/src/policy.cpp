#include "specshare/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include <fmt/format.h>

#include "specshare/error.hpp"

namespace specshare {

ScriptedPolicy::ScriptedPolicy(std::vector<PowerProfile> script,
                               std::optional<std::size_t> loop_from)
    : script_(std::move(script)), loop_from_(loop_from) {
  if (loop_from_ && *loop_from_ >= script_.size())
    throw std::invalid_argument("loop_from past the end of the script");
  tdma_ = std::all_of(script_.begin(), script_.end(),
                      [](const PowerProfile& p) { return is_tdma_profile(p); });
}

PowerProfile ScriptedPolicy::act(std::size_t t, std::span<const int>) {
  if (t < script_.size()) return script_[t];
  if (!loop_from_) return PowerProfile(script_.empty() ? 0 : script_.front().size(), 0.0);
  const std::size_t period = script_.size() - *loop_from_;
  return script_[*loop_from_ + (t - script_.size()) % period];
}

RoundRobinPolicy::RoundRobinPolicy(std::vector<std::size_t> order, PowerProfile powers)
    : order_(std::move(order)), powers_(std::move(powers)) {
  if (order_.empty()) throw std::invalid_argument("round-robin order is empty");
  for (const std::size_t u : order_)
    if (u >= powers_.size()) throw std::invalid_argument("round-robin user out of range");
}

PowerProfile RoundRobinPolicy::act(std::size_t t, std::span<const int>) {
  PowerProfile p(powers_.size(), 0.0);
  const std::size_t u = order_[t % order_.size()];
  p[u] = powers_[u];
  return p;
}

PolicyTrace evaluate(Policy& policy, const NetworkInstance& net, const SensingModel& sensing,
                     std::size_t horizon, UserStreams& streams,
                     const SignalOverride& override_signal) {
  const std::size_t n = net.size();
  PolicyTrace trace;
  trace.powers.reserve(horizon);
  trace.signals.reserve(horizon);
  trace.rates.reserve(horizon);

  for (std::size_t t = 0; t < horizon; ++t) {
    PowerProfile p = policy.act(t, trace.signals);
    if (p.size() != n)
      throw InvariantFault(fmt::format("slot {}: policy emitted {} powers for {} users", t,
                                       p.size(), n));
    for (std::size_t i = 0; i < n; ++i)
      if (!(p[i] >= 0.0) || !net.power_set(i).contains(p[i]))
        throw InvariantFault(
            fmt::format("slot {}: user {} power {} is not in its power set", t, i, p[i]));
    if (policy.tdma() && !is_tdma_profile(p))
      throw InvariantFault(fmt::format("slot {}: TDMA policy emitted concurrent transmitters", t));

    std::optional<int> forced;
    if (override_signal) forced = override_signal(t);
    const int y = forced ? *forced : system_distress(net, sensing, p, streams);

    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = throughput(net, p, i);

    trace.powers.push_back(std::move(p));
    trace.signals.push_back(y);
    trace.rates.push_back(std::move(r));
  }
  return trace;
}

DiscountedMetrics discounted_metrics(const PolicyTrace& trace, double discount) {
  const std::size_t n = trace.num_users();
  DiscountedMetrics m;
  m.throughput.assign(n, 0.0);
  m.power.assign(n, 0.0);
  double weight = 1.0 - discount;
  double largest = 0.0;
  for (std::size_t t = 0; t < trace.horizon(); ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      m.throughput[i] += weight * trace.rates[t][i];
      m.power[i] += weight * trace.powers[t][i];
      largest = std::max({largest, trace.rates[t][i], trace.powers[t][i]});
    }
    weight *= discount;
  }
  // (1-d) sum_{t>=T} d^t x <= d^T x_max, with x_max taken from the trace.
  m.tail_residual = std::pow(discount, static_cast<double>(trace.horizon())) * largest;
  return m;
}

std::vector<double> running_discounted_throughput(const PolicyTrace& trace, double discount,
                                                  std::size_t i) {
  std::vector<double> out(trace.horizon());
  double weight = 1.0 - discount;
  double sum = 0.0;
  for (std::size_t t = 0; t < trace.horizon(); ++t) {
    sum += weight * trace.rates[t].at(i);
    out[t] = sum;
    weight *= discount;
  }
  return out;
}

double throughput_energy_ratio(const NetworkInstance& net, std::size_t i, double r_tdma) {
  if (!(r_tdma > 0.0)) throw std::invalid_argument("instantaneous throughput must be positive");
  const double snr = r_tdma < 0.25 ? std::expm1(r_tdma * std::numbers::ln2) : std::exp2(r_tdma) - 1.0;
  return net.noise_over_gain(i) * snr / r_tdma;
}

bool deviation_profitable(const NetworkInstance& net, std::size_t i, double p_i, std::size_t j,
                          double p_j) {
  if (i == j) throw std::invalid_argument("deviation check needs two distinct users");
  return p_j * net.gain(j, j) > p_i * net.gain(i, j);
}

std::vector<DeviationFlag> certify_deviation_proof(const NetworkInstance& net,
                                                   std::span<const PowerProfile> schedule,
                                                   std::span<const double> powers) {
  if (powers.size() != net.size()) throw std::invalid_argument("one power per user expected");
  std::vector<DeviationFlag> flags;
  for (const PowerProfile& slot : schedule) {
    if (!is_tdma_profile(slot)) throw std::invalid_argument("schedule is not TDMA");
    const auto it = std::find_if(slot.begin(), slot.end(), [](double v) { return v > 0.0; });
    if (it == slot.end()) continue;
    const auto i = static_cast<std::size_t>(it - slot.begin());
    for (std::size_t j = 0; j < net.size(); ++j) {
      if (j == i || !(powers[j] > 0.0)) continue;
      if (!deviation_profitable(net, i, *it, j, powers[j])) continue;
      const bool seen = std::any_of(flags.begin(), flags.end(), [&](const DeviationFlag& f) {
        return f.slot_owner == i && f.deviator == j && f.owner_power == *it;
      });
      if (!seen) flags.push_back({i, j, *it, powers[j]});
    }
  }
  return flags;
}

TwoSlotDeviation best_two_slot_deviation(const NetworkInstance& net, std::size_t i, double p_i,
                                         std::size_t t_i, std::size_t j, double p_j,
                                         std::size_t t_j, double discount) {
  if (i == j || t_i == t_j) throw std::invalid_argument("deviation needs two users, two slots");
  if (!(p_i > 0.0) || !(p_j > 0.0)) throw std::invalid_argument("powers must be positive");

  const double g = net.gain(j, j);
  const double quiet = net.noise(j);                    // j's own slot
  const double crowded = quiet + p_i * net.gain(i, j);  // i's slot
  const double w1 = (1.0 - discount) * std::pow(discount, static_cast<double>(t_i));
  const double w2 = (1.0 - discount) * std::pow(discount, static_cast<double>(t_j));
  const double k = w1 / w2;
  const double own_gain = 1.0 + p_j * g / quiet;  // 2^{r_j}

  // E(q) = w1 q + w2 q2(q), with q2 fixed by the throughput constraint, is
  // convex; its stationary point solves (1 + q g/A)^{k+1} = (B + p_j g)/A.
  double q = crowded / g * (std::pow((quiet + p_j * g) / crowded, 1.0 / (k + 1.0)) - 1.0);
  const double q_max = crowded / g * (std::pow(own_gain, 1.0 / k) - 1.0);
  q = std::clamp(q, 0.0, q_max);
  const double q2 = std::max(0.0, quiet / g * (own_gain * std::pow(1.0 + q * g / crowded, -k) - 1.0));

  TwoSlotDeviation d;
  d.borrowed_power = q;
  d.own_power = q2;
  d.baseline_energy = w2 * p_j;
  d.deviation_energy = w1 * q + w2 * q2;
  d.baseline_throughput = w2 * std::log2(own_gain);
  d.deviation_throughput = w1 * std::log2(1.0 + q * g / crowded) + w2 * std::log2(1.0 + q2 * g / quiet);
  return d;
}

PowerPerturbation equal_power_perturbation(const NetworkInstance& net, std::size_t i, double p1,
                                           std::size_t t1, double p2, std::size_t t2,
                                           double discount, double eps1) {
  if (t1 == t2) throw std::invalid_argument("perturbation needs two distinct slots");
  const double s = net.noise_over_gain(i);
  const double c = std::pow(discount, static_cast<double>(t1) - static_cast<double>(t2));
  const double lr = -std::log1p(eps1 / (s + p1));  // log((s+p1)/(s+p1+eps1))

  PowerPerturbation out;
  out.eps1 = eps1;
  out.eps2 = (s + p2) * -std::expm1(c * lr);
  const double d1 = std::pow(discount, static_cast<double>(t1));
  const double d2 = std::pow(discount, static_cast<double>(t2));
  out.energy_increase = d1 * eps1 - d2 * out.eps2;
  out.throughput_change = (d1 * std::log1p(eps1 / (s + p1)) +
                           d2 * std::log1p(-out.eps2 / (s + p2))) / std::numbers::ln2;
  return out;
}

}  // namespace specshare
