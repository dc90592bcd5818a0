#include "specshare/baselines.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "specshare/error.hpp"

namespace specshare {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> resolve_targets(const NetworkInstance& net, std::span<const double> targets) {
  if (targets.empty()) return {net.min_rates().begin(), net.min_rates().end()};
  if (targets.size() != net.size()) throw std::invalid_argument("one target per user expected");
  return {targets.begin(), targets.end()};
}

}  // namespace

StationarySolution stationary_solve(const NetworkInstance& net, std::span<const double> targets_in,
                                    const StationaryOptions& options) {
  const std::size_t n = net.size();
  const std::vector<double> targets = resolve_targets(net, targets_in);

  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd u(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double snr = targets[i] < 0.25 ? std::expm1(targets[i] * std::numbers::ln2)
                                         : std::exp2(targets[i]) - 1.0;
    u(i) = snr * net.noise_over_gain(i);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) f(i, j) = snr * net.gain(j, i) / net.gain(i, i);
  }

  StationarySolution sol;
  sol.power.assign(n, 0.0);
  sol.spectral_radius = n > 1 ? f.eigenvalues().cwiseAbs().maxCoeff() : 0.0;
  if (!(sol.spectral_radius < 1.0)) {
    sol.diagnostic = fmt::format(
        "spectral radius of the normalized gain matrix is {:.6g} >= 1: no finite power profile "
        "meets every requirement at once",
        sol.spectral_radius);
    return sol;
  }

  // Synchronous best response from zero; monotone increasing to the minimal
  // fixed point when it exists.
  Eigen::VectorXd p = Eigen::VectorXd::Zero(n);
  for (; sol.iterations < options.max_iterations; ++sol.iterations) {
    const Eigen::VectorXd next = f * p + u;
    const double change = (next - p).lpNorm<Eigen::Infinity>();
    p = next;
    if (change <= options.tolerance * p.lpNorm<Eigen::Infinity>()) break;
    if (p.maxCoeff() > 1e300) break;
  }
  // Close the remaining gap with a direct solve of (I - F) p = u.
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd::Identity(n, n) - f);
  if (!lu.isInvertible()) {
    sol.diagnostic = "I - F is singular";
    return sol;
  }
  const Eigen::VectorXd exact = lu.solve(u);
  if (!exact.allFinite() || exact.minCoeff() < 0.0) {
    sol.diagnostic = "fixed point is not a nonnegative power profile";
    return sol;
  }
  for (std::size_t i = 0; i < n; ++i) {
    sol.power[i] = exact(i);
    if (sol.power[i] > net.power_set(i).max() * (1.0 + 1e-12)) {
      sol.diagnostic = fmt::format("user {} needs {:.6g} W, above its grid maximum {:.6g} W", i,
                                   sol.power[i], net.power_set(i).max());
      return sol;
    }
  }
  sol.feasible = true;
  return sol;
}

std::optional<double> stationary_symmetric_power(double r, double noise, double alpha) {
  const double snr = std::exp2(r) - 1.0;
  const double denom = 1.0 - snr * alpha;
  if (!(denom > 0.0)) return std::nullopt;
  return snr * noise / denom;
}

RoundRobinPowers round_robin_closed_form(double r, double discount, double noise) {
  RoundRobinPowers p;
  p.first = noise / (1.0 + discount) * (std::exp2(r * (1.0 + discount)) - 1.0);
  p.second = noise * discount / (1.0 + discount) * (std::exp2(r * (1.0 + 1.0 / discount)) - 1.0);
  return p;
}

double round_robin_crossover(double r, double discount, double noise) {
  const RoundRobinPowers rr = round_robin_closed_form(r, discount, noise);
  const double rr_total = rr.first + rr.second;
  auto excess = [&](double alpha) {
    const auto p = stationary_symmetric_power(r, noise, alpha);
    return p ? 2.0 * *p - rr_total : kInf;
  };
  double lo = 0.0;
  double hi = 1.0 / (std::exp2(r) - 1.0);
  if (excess(lo) >= 0.0) return 0.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    const double mid = 0.5 * (lo + hi);
    (excess(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<double> round_robin_shares(std::size_t n, double discount) {
  std::vector<double> s(n);
  const double cycle = 1.0 - std::pow(discount, static_cast<double>(n));
  for (std::size_t k = 0; k < n; ++k)
    s[k] = (1.0 - discount) * std::pow(discount, static_cast<double>(k)) / cycle;
  return s;
}

RoundRobinResult round_robin_metrics(const NetworkInstance& net, std::span<const std::size_t> order,
                                     double discount, std::size_t horizon,
                                     const SensingModel& sensing, UserStreams& streams) {
  const std::size_t n = net.size();
  const std::vector<double> shares = round_robin_shares(order.size(), discount);
  RoundRobinResult res;
  res.powers.assign(n, 0.0);
  res.closed_form.assign(n, 0.0);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t i = order[k];
    if (i >= n) throw std::invalid_argument("round-robin user out of range");
    const double rate = net.min_rate(i) / shares[k];
    res.powers[i] = net.noise_over_gain(i) * (std::exp2(rate) - 1.0);
    res.closed_form[i] = shares[k] * res.powers[i];
  }
  RoundRobinPolicy policy({order.begin(), order.end()}, res.powers);
  const NetworkInstance with_levels = net.with_power_levels(res.powers);
  res.simulated = discounted_metrics(evaluate(policy, with_levels, sensing, horizon, streams), discount);
  return res;
}

PunishForgivePolicy::PunishForgivePolicy(LdfScheduler scheduler, PowerProfile stationary,
                                         std::vector<double> stationary_rates,
                                         PunishForgiveConfig cfg)
    : scheduler_(std::move(scheduler)),
      stationary_(std::move(stationary)),
      stationary_rates_(std::move(stationary_rates)),
      cfg_(cfg) {}

PowerProfile PunishForgivePolicy::act(std::size_t t, std::span<const int> history) {
  if (t > 0) {
    if (last_punished_) {
      scheduler_.absorb(stationary_rates_);
      --remaining_;
    } else {
      scheduler_.advance(history[t - 1]);
      if (history[t - 1] == 1) remaining_ = cfg_.duration;
    }
  }
  if (remaining_ > 0) {
    last_punished_ = true;
    punished_.push_back(t);
    return stationary_;
  }
  last_punished_ = false;
  return scheduler_.profile(scheduler_.decide(), stationary_.size());
}

PunishForgivePolicy punish_forgive_policy(const NetworkInstance& net, const ItsSolution& its,
                                          const FeasibilityConstants& constants,
                                          const StationarySolution& stationary, double discount,
                                          PunishForgiveConfig cfg, LdfConfig ldf) {
  if (!stationary.feasible)
    throw InfeasibleError("punish-forgive needs a feasible stationary punishment: " +
                          stationary.diagnostic);
  std::vector<double> rates(net.size());
  for (std::size_t i = 0; i < net.size(); ++i) rates[i] = throughput(net, stationary.power, i);
  return PunishForgivePolicy(LdfScheduler(its, constants, discount, ldf), stationary.power,
                             std::move(rates), cfg);
}

double prefix_energy(const NetworkInstance& net, double discount, std::span<const double> r_star,
                     std::span<const std::size_t> prefix) {
  const std::size_t n = net.size();
  std::vector<double> share(n, 0.0);
  double w = 1.0 - discount;
  for (const std::size_t u : prefix) {
    share.at(u) += w;
    w *= discount;
  }
  const double tail_mass = std::pow(discount, static_cast<double>(prefix.size()));
  double tail_needed = 0.0;
  double energy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = net.noise_over_gain(i) * (std::exp2(r_star[i]) - 1.0);
    const double tail = std::max(0.0, net.min_rate(i) / r_star[i] - share[i]);
    tail_needed += tail;
    energy += (share[i] + tail) * p;
  }
  if (tail_needed > tail_mass * (1.0 + 1e-12) + 1e-15) return kInf;
  return energy;
}

OracleResult optimal_schedule_oracle(const NetworkInstance& net, double discount,
                                     std::span<const double> r_star, std::size_t horizon) {
  const std::size_t n = net.size();
  if (horizon > kOracleMaxHorizon || n > kOracleMaxUsers)
    throw std::invalid_argument(fmt::format(
        "oracle refuses {} users x {} slots (limits {} and {})", n, horizon, kOracleMaxUsers,
        kOracleMaxHorizon));
  if (r_star.size() != n) throw std::invalid_argument("one rate per user expected");

  OracleResult res;
  for (std::size_t i = 0; i < n; ++i)
    res.lower_bound += net.min_rate(i) / r_star[i] * net.noise_over_gain(i) * (std::exp2(r_star[i]) - 1.0);
  // A fractional tail is a valid continuation whenever the whole simplex of
  // normalized continuation values is self-generating.
  res.tail_realizable = discount >= 1.0 - 1.0 / static_cast<double>(n);
  res.energy = kInf;

  const double tol = 1e-12 * std::max(1.0, res.lower_bound);
  std::vector<std::size_t> cur;
  std::vector<double> share(n, 0.0);
  bool prune = true;
  std::vector<double> need(n);
  for (std::size_t i = 0; i < n; ++i) need[i] = net.min_rate(i) / r_star[i];
  // Depth-first in lexicographic order. Slot shares only grow along a branch,
  // and an overshooting user pays for throughput it does not need, so such
  // subtrees are skipped as long as some prefix avoids overshoot.
  std::function<void()> dfs = [&] {
    if (cur.size() == horizon) {
      ++res.explored;
      const double e = prefix_energy(net, discount, r_star, cur);
      if (e < res.energy - tol) {
        res.energy = e;
        res.schedule = cur;
        res.optimal_count = 1;
      } else if (std::abs(e - res.energy) <= tol) {
        ++res.optimal_count;
      }
      return;
    }
    const double w = (1.0 - discount) * std::pow(discount, static_cast<double>(cur.size()));
    for (std::size_t u = 0; u < n; ++u) {
      share[u] += w;
      if (!prune || share[u] <= need[u] + 1e-12) {
        cur.push_back(u);
        dfs();
        cur.pop_back();
      }
      share[u] -= w;
    }
  };
  dfs();
  if (res.schedule.empty()) {
    // Every prefix overshoots someone; fall back to the unpruned search.
    prune = false;
    res.explored = 0;
    dfs();
  }
  res.prefix = schedule_string(res.schedule);
  return res;
}

std::string schedule_string(std::span<const std::size_t> schedule) {
  std::string s;
  for (const std::size_t u : schedule) {
    if (u >= 9) throw std::invalid_argument("schedule labels stop at 9");
    s.push_back(static_cast<char>('1' + u));
  }
  return s;
}

std::vector<std::size_t> parse_schedule(const std::string& s) {
  std::vector<std::size_t> out;
  for (const char c : s) {
    if (c < '1' || c > '9') throw std::invalid_argument("schedule labels must be digits 1-9");
    out.push_back(static_cast<std::size_t>(c - '1'));
  }
  return out;
}

bool equal_up_to_relabeling(const std::string& a, const std::string& b) {
  if (a.size() != b.size()) return false;
  std::array<char, 256> fwd{};
  std::array<char, 256> back{};
  for (std::size_t k = 0; k < a.size(); ++k) {
    const auto x = static_cast<unsigned char>(a[k]);
    const auto y = static_cast<unsigned char>(b[k]);
    if (fwd[x] == 0 && back[y] == 0) {
      fwd[x] = b[k];
      back[y] = a[k];
    } else if (fwd[x] != b[k] || back[y] != a[k]) {
      return false;
    }
  }
  return true;
}

}  // namespace specshare
