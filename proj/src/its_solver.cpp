#include "specshare/its_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "specshare/error.hpp"

namespace specshare {

namespace {

constexpr double kLn2 = std::numbers::ln2;
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kInnerTol = 1e-12;

// 2^r - 1: expm1 near 0 to avoid cancellation, exp2 elsewhere so integer
// rates stay exact.
double pow2m1(double r) { return r < 0.25 ? std::expm1(r * kLn2) : std::exp2(r) - 1.0; }

// A(r) = ln2 r 2^r - 2^r + 1.
double kkt_a(double r) {
  const double e = pow2m1(r);
  return r * kLn2 * (e + 1.0) - e;
}

double kkt_a_prime(double r) { return kLn2 * kLn2 * r * std::exp2(r); }

std::vector<double> active_targets(const NetworkInstance& net, std::span<const double> targets) {
  if (targets.empty()) return {net.min_rates().begin(), net.min_rates().end()};
  if (targets.size() != net.size()) throw std::invalid_argument("one target per user expected");
  for (const double v : targets)
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("targets must be >= 0");
  return {targets.begin(), targets.end()};
}

double discount_bound(std::span<const double> mu, double pair_terms, std::size_t active) {
  const double mu_sum = std::accumulate(mu.begin(), mu.end(), 0.0);
  const double denom = static_cast<double>(active) - 1.0 + pair_terms;
  if (denom == 0.0) return 0.0;  // a single user never has to wait
  return 1.0 / (1.0 + (1.0 - mu_sum) / denom);
}

// One user's side of the ITS bisection: solves its KKT equation for the announced
// multiplier and reports R_i / r_i.
class ItsAgent {
 public:
  ItsAgent(const NetworkInstance& net, std::size_t user, const Criterion& c, double target,
           double cap)
      : net_(&net), user_(user), criterion_(&c), target_(target), cap_(cap) {}

  double respond(double lambda) {
    root_ = kkt_inner_solve(*net_, user_, lambda, *criterion_, target_, cap_);
    return target_ / root_.rate;
  }

  std::size_t user() const noexcept { return user_; }
  const KktRoot& root() const noexcept { return root_; }
  double target() const noexcept { return target_; }

 private:
  const NetworkInstance* net_;
  std::size_t user_;
  const Criterion* criterion_;
  double target_;
  double cap_;
  KktRoot root_;
};

// Lossless in-process broadcast. deliver() is the per-round barrier.
class BroadcastBus {
 public:
  explicit BroadcastBus(std::size_t n) : inbox_(n, 0.0), posted_(n, false) {}

  void post(std::size_t from, double value) {
    inbox_[from] = value;
    posted_[from] = true;
  }

  std::span<const double> deliver() {
    if (!std::all_of(posted_.begin(), posted_.end(), [](bool b) { return b; }))
      throw InvariantFault("broadcast round closed before every agent posted");
    messages_ += inbox_.size();
    std::fill(posted_.begin(), posted_.end(), false);
    return inbox_;
  }

  std::size_t messages() const noexcept { return messages_; }

 private:
  std::vector<double> inbox_;
  std::vector<bool> posted_;
  std::size_t messages_ = 0;
};

}  // namespace

double Criterion::weight(std::size_t i, std::size_t n) const {
  if (weights.empty()) return 1.0 / static_cast<double>(n);
  return weights.at(i);
}

double criterion_value(const Criterion& c, std::span<const double> avg_power) {
  double e = 0.0;
  for (std::size_t i = 0; i < avg_power.size(); ++i) {
    const double w = c.weight(i, avg_power.size());
    e += c.kind == CriterionKind::weighted_sum ? w * avg_power[i] : w * std::log(avg_power[i]);
  }
  return e;
}

double tdma_average_power(const NetworkInstance& net, std::size_t i, double r, double target) {
  return net.noise_over_gain(i) * pow2m1(r) / r * target;
}

double rate_objective(const NetworkInstance& net, const Criterion& c, std::span<const double> r,
                      std::span<const double> targets) {
  double e = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (!(targets[i] > 0.0)) continue;
    const double p = tdma_average_power(net, i, r[i], targets[i]);
    const double w = c.weight(i, r.size());
    e += c.kind == CriterionKind::weighted_sum ? w * p : w * std::log(p);
  }
  return e;
}

double tdma_power(const NetworkInstance& net, std::size_t i, double r) {
  if (!(r > 0.0)) return 0.0;
  return net.noise_over_gain(i) * pow2m1(r);
}

PowerProfile tdma_profile(const NetworkInstance& net, std::size_t i, double r) {
  if (i >= net.size()) throw std::out_of_range("user index out of range");
  PowerProfile p(net.size(), 0.0);
  if (!(r > 0.0)) return p;
  p[i] = tdma_power(net, i, r);
  if (p[i] > net.power_set(i).max() * (1.0 + 1e-12))
    throw InfeasibleError(fmt::format("user {} needs {:.6g} W for rate {:.6g}, grid max is {:.6g} W",
                                      i, p[i], r, net.power_set(i).max()));
  return p;
}

double FeasibilityConstants::deviation_term(std::size_t i, std::size_t j) const {
  if (obedient) return 0.0;
  return -rho_tdma.at(i) / b(i, j);
}

double FeasibilityConstants::mu_sum() const {
  return std::accumulate(mu_lower.begin(), mu_lower.end(), 0.0);
}

FeasibilityConstants obedient_constants(std::size_t num_users) {
  FeasibilityConstants k;
  k.obedient = true;
  k.b = SquareMatrix(num_users, -kInf);
  for (std::size_t i = 0; i < num_users; ++i) k.b(i, i) = 0.0;
  k.mu_lower.assign(num_users, 0.0);
  k.rate_cap.assign(num_users, kInf);
  k.rho_tdma.assign(num_users, 0.0);
  // -rho/b vanishes for b = -inf, so Condition 1 collapses to 1 - 1/n.
  k.delta_min = discount_bound(k.mu_lower, 0.0, num_users);
  return k;
}

FeasibilityConstants feasibility_constants(const NetworkInstance& net,
                                           const SensingModel& sensing,
                                           std::span<const double> rates_tdma,
                                           std::span<const double> targets_in) {
  const std::size_t n = net.size();
  if (rates_tdma.size() != n) throw std::invalid_argument("one rate per user expected");
  if (sensing.size() != n) throw std::invalid_argument("sensing model size mismatch");
  const std::vector<double> targets = active_targets(net, targets_in);

  std::vector<bool> active(n);
  std::vector<PowerProfile> solo(n);
  FeasibilityConstants k;
  k.b = SquareMatrix(n, 0.0);
  k.mu_lower.assign(n, 0.0);
  k.rate_cap.assign(n, kInf);
  k.rho_tdma.assign(n, 0.0);
  std::size_t num_active = 0;
  for (std::size_t i = 0; i < n; ++i) {
    active[i] = rates_tdma[i] > 0.0 && targets[i] > 0.0;
    if (!active[i]) continue;
    ++num_active;
    solo[i] = tdma_profile(net, i, rates_tdma[i]);
    k.rho_tdma[i] = system_distress_prob(net, sensing, solo[i]);
  }

  std::vector<double> rbar(n);
  for (std::size_t j = 0; j < n; ++j) rbar[j] = net.max_solo_rate(j);

  constexpr int kPasses = 2;
  for (int pass = 0; pass < kPasses; ++pass) {
    k.in_regime = true;
    k.diagnostic.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i || !active[j]) continue;
        double best = -kInf;
        PowerProfile p = solo[i];
        for (const double level : net.power_set(j).levels()) {
          if (!(level > 0.0)) continue;  // p~^i_j = 0 is excluded
          p[j] = level;
          const double rj = throughput(net, p, j);
          const double drop = k.rho_tdma[i] - system_distress_prob(net, sensing, p);
          best = std::max(best, drop / (rj / rbar[j]));
        }
        k.b(i, j) = best;
        if (!(best < 0.0) && k.in_regime) {
          k.in_regime = false;
          k.diagnostic = fmt::format(
              "b[{}][{}] = {:.6g} is not negative: a deviation by user {} does not raise the "
              "distress probability in user {}'s slot",
              i, j, best, j, i);
        }
      }
    }
    if (!k.in_regime) break;

    for (std::size_t i = 0; i < n; ++i) {
      k.mu_lower[i] = 0.0;
      k.rate_cap[i] = kInf;
      if (!active[i]) continue;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i && active[j])
          k.mu_lower[i] = std::max(k.mu_lower[i], (1.0 - k.rho_tdma[i]) / -k.b(i, j));
      if (k.mu_lower[i] > 0.0) k.rate_cap[i] = targets[i] / k.mu_lower[i];
    }
    for (std::size_t j = 0; j < n; ++j)
      if (active[j] && std::isfinite(k.rate_cap[j])) rbar[j] = k.rate_cap[j];
    k.passes = pass + 1;
  }

  if (!k.in_regime) {
    k.feasible = false;
    k.delta_min = std::numeric_limits<double>::quiet_NaN();
    return k;
  }

  double pair_terms = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && active[i] && active[j]) pair_terms += k.deviation_term(i, j);

  if (k.mu_sum() >= 1.0) {
    k.feasible = false;
    k.delta_min = std::numeric_limits<double>::quiet_NaN();
    k.diagnostic = fmt::format("sum of mu = {:.6g} >= 1", k.mu_sum());
    return k;
  }
  k.delta_min = discount_bound(k.mu_lower, pair_terms, num_active);
  return k;
}

FeasibilityConstants feasibility_constants(const NetworkInstance& net,
                                           const SensingModel& sensing,
                                           std::span<const double> rates_tdma) {
  return feasibility_constants(net, sensing, rates_tdma, {});
}

double kkt_lhs(const NetworkInstance& net, std::size_t i, double r, const Criterion& c,
               double target) {
  const double w = c.weight(i, net.size());
  if (c.kind == CriterionKind::weighted_sum) return w * kkt_a(r) * net.noise_over_gain(i);
  if (!(r > 0.0)) return 0.0;
  // dE/dP = w/P with P = s R (2^r-1)/r; the noise-over-gain factor cancels.
  return w / target * r * kkt_a(r) / pow2m1(r);
}

double kkt_lhs_derivative(const NetworkInstance& net, std::size_t i, double r,
                          const Criterion& c, double target) {
  const double w = c.weight(i, net.size());
  if (c.kind == CriterionKind::weighted_sum) return w * kkt_a_prime(r) * net.noise_over_gain(i);
  const double e = pow2m1(r);
  const double a = kkt_a(r);
  const double num = (a + r * kkt_a_prime(r)) * e - r * a * kLn2 * (e + 1.0);
  return w / target * num / (e * e);
}

KktRoot kkt_inner_solve(const NetworkInstance& net, std::size_t i, double lambda,
                        const Criterion& c, double target, double cap) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (!(cap > 0.0)) throw std::invalid_argument("rate cap must be positive");
  KktRoot root;
  if (lambda == 0.0) return root;  // the left-hand side vanishes only at r = 0

  const double tol = kInnerTol * std::max(1.0, lambda);
  const double at_cap = kkt_lhs(net, i, cap, c, target) - lambda;
  if (at_cap <= tol) {
    root.rate = cap;
    root.capped = true;
    root.no_root = at_cap < -tol;
    root.residual = at_cap;
    return root;
  }

  double lo = 0.0;
  double hi = cap;
  double r = std::min(1.0, 0.5 * cap);
  double f = 0.0;
  for (int it = 0; it < 400; ++it) {
    f = kkt_lhs(net, i, r, c, target) - lambda;
    if (std::abs(f) <= tol) break;
    if (f > 0.0) hi = r; else lo = r;
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi) break;
    const double d = kkt_lhs_derivative(net, i, r, c, target);
    double next = d > 0.0 ? r - f / d : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    r = next;
  }
  root.rate = r;
  root.residual = f;
  return root;
}

ItsSolution its_solve(const NetworkInstance& net, const Criterion& c,
                      const FeasibilityConstants& constants, std::span<const double> targets_in,
                      const ItsOptions& options) {
  const std::size_t n = net.size();
  const std::vector<double> targets = active_targets(net, targets_in);
  if (constants.rate_cap.size() != n) throw std::invalid_argument("constants size mismatch");
  if (!(options.precision > 0.0)) throw std::invalid_argument("precision must be positive");

  std::vector<ItsAgent> agents;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(targets[i] > 0.0)) continue;
    const double cap = std::min(constants.rate_cap[i], net.max_solo_rate(i));
    agents.emplace_back(net, i, c, targets[i], cap);
  }

  ItsSolution sol;
  sol.targets = targets;
  sol.r_star.assign(n, 0.0);
  sol.p_star.assign(n, 0.0);
  sol.kkt_mu.assign(n, 0.0);
  sol.capped.assign(n, false);
  if (agents.empty()) return sol;

  BroadcastBus bus(agents.size());
  const std::size_t workers = std::clamp<std::size_t>(options.threads, 1, agents.size());

  // One round: every agent solves for lambda and broadcasts R_i/r_i; after
  // the barrier each agent holds the same inbox and forms the same sum.
  auto round = [&](double lambda) {
    if (workers == 1) {
      for (std::size_t a = 0; a < agents.size(); ++a) bus.post(a, agents[a].respond(lambda));
    } else {
      std::vector<double> out(agents.size());
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          for (std::size_t a = w; a < agents.size(); a += workers) out[a] = agents[a].respond(lambda);
        });
      pool.clear();
      for (std::size_t a = 0; a < agents.size(); ++a) bus.post(a, out[a]);
    }
    const auto inbox = bus.deliver();
    return std::accumulate(inbox.begin(), inbox.end(), 0.0);
  };

  double lambda_lo = 0.0;
  double lambda_hi = 1.0;
  double lambda = lambda_hi;
  double sum = round(lambda);

  while (sum > 1.0) {
    lambda_hi *= 2.0;
    lambda = lambda_hi;
    if (lambda_hi > options.lambda_cap)
      throw InfeasibleError(fmt::format(
          "ITS doubling passed lambda = {:.3g} with sum R/r = {:.9g} > 1: the rate caps cannot "
          "fit every requirement into one slot share",
          options.lambda_cap, sum));
    ++sol.doubling_steps;
    sum = round(lambda);
  }
  sol.lambda_upper_after_doubling = lambda_hi;

  while (std::abs(sum - 1.0) > options.precision) {
    if (lambda_hi - lambda_lo <= 4.0 * std::numeric_limits<double>::epsilon() * lambda_hi) {
      spdlog::warn("ITS bracket collapsed at lambda = {} with |sum - 1| = {}", lambda,
                   std::abs(sum - 1.0));
      break;
    }
    lambda = 0.5 * (lambda_lo + lambda_hi);
    ++sol.bisection_steps;
    sum = round(lambda);
    if (sum < 1.0) lambda_hi = lambda; else lambda_lo = lambda;
  }

  sol.lambda = lambda;
  sol.iterations = sol.doubling_steps + sol.bisection_steps;
  sol.messages_broadcast = bus.messages();
  sol.residual_before_normalization = std::abs(sum - 1.0);

  // Dividing the rates by the sum would square it instead; scaling the
  // free users by the factor that closes sum R/r = 1 is what the step is for,
  // and leaves capped users on their caps.
  double capped_share = 0.0;
  double free_share = 0.0;
  for (const ItsAgent& a : agents) {
    const double share = a.target() / a.root().rate;
    (a.root().capped ? capped_share : free_share) += share;
  }
  const bool scale_all = free_share == 0.0 || capped_share >= 1.0;
  const double factor = scale_all ? sum : free_share / (1.0 - capped_share);

  for (const ItsAgent& a : agents) {
    const std::size_t i = a.user();
    const KktRoot& root = a.root();
    sol.capped[i] = root.capped;
    sol.r_star[i] = (root.capped && !scale_all) ? root.rate : root.rate * factor;
    sol.p_star[i] = tdma_power(net, i, sol.r_star[i]);
    if (root.capped)
      sol.kkt_mu[i] = std::max(0.0, targets[i] * (lambda - kkt_lhs(net, i, root.rate, c, targets[i])));
  }
  auto conserved = [&] {
    double total = 0.0;
    for (const ItsAgent& a : agents) total += a.target() / sol.r_star[a.user()];
    return total;
  };
  double after = conserved();
  // Rounding leaves the sum a few ulps off; nudge the free user with the
  // largest share until it is exactly one.
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t nudge = kNone;
  double largest = 0.0;
  for (const ItsAgent& a : agents) {
    const double share = a.target() / sol.r_star[a.user()];
    if ((scale_all || !a.root().capped) && share > largest) {
      largest = share;
      nudge = a.user();
    }
  }
  for (int k = 0; nudge != kNone && after != 1.0 && k < 4096; ++k) {
    double& r = sol.r_star[nudge];
    r = std::nextafter(r, after > 1.0 ? std::numeric_limits<double>::infinity() : 0.0);
    after = conserved();
  }
  if (nudge != kNone) sol.p_star[nudge] = tdma_power(net, nudge, sol.r_star[nudge]);
  sol.residual = std::abs(after - 1.0);
  return sol;
}

ItsSolution its_solve(const NetworkInstance& net, const Criterion& c,
                      const FeasibilityConstants& constants, const ItsOptions& options) {
  return its_solve(net, c, constants, {}, options);
}

Design design(const NetworkInstance& net, const SensingModel& sensing, const Criterion& c,
              DesignMode mode, std::span<const double> targets, const ItsOptions& options) {
  Design d;
  d.constants = obedient_constants(net.size());
  d.its = its_solve(net, c, d.constants, targets, options);
  if (mode == DesignMode::obedient) return d;

  auto gate = [](const FeasibilityConstants& k) {
    if (!k.in_regime) throw InfeasibleError("outside the deviation-proof regime: " + k.diagnostic);
    if (!k.feasible) throw InfeasibleError("deviation-proof constants infeasible: " + k.diagnostic);
  };
  FeasibilityConstants k = feasibility_constants(net, sensing, d.its.r_star, targets);
  gate(k);
  d.its = its_solve(net, c, k, targets, options);
  d.constants = feasibility_constants(net, sensing, d.its.r_star, targets);
  gate(d.constants);
  return d;
}

double reformulated_objective(double x) { return pow2m1(1.0 / x) * x; }

double reduced_second_derivative(double x) { return kLn2 * std::exp2(1.0 / x) / (x * x * x); }

double exact_second_derivative(double x) { return kLn2 * reduced_second_derivative(x); }

ConvexityReport convexity_check(CriterionKind kind, std::span<const double> xs) {
  auto phi = [kind](double x) {
    const double h = reformulated_objective(x);
    return kind == CriterionKind::weighted_sum ? h : std::log(h);
  };
  auto analytic = [kind](double x) {
    const double h2 = exact_second_derivative(x);
    if (kind == CriterionKind::weighted_sum) return reduced_second_derivative(x);
    const double h = reformulated_objective(x);
    const double h1 = std::exp2(1.0 / x) * (1.0 - kLn2 / x) - 1.0;
    return (h2 * h - h1 * h1) / (h * h);
  };

  ConvexityReport rep;
  rep.min_numeric = kInf;
  rep.min_analytic = kInf;
  for (const double x : xs) {
    if (!(x > 0.0)) throw std::invalid_argument("convexity samples must be positive");
    const double step = 1e-3 * x;
    const double second = (phi(x + step) - 2.0 * phi(x) + phi(x - step)) / (step * step);
    const double exact = analytic(x);
    ++rep.samples;
    if (!(second > 0.0)) ++rep.numeric_nonpositive;
    if (!(exact > 0.0)) ++rep.analytic_nonpositive;
    rep.min_numeric = std::min(rep.min_numeric, second);
    rep.min_analytic = std::min(rep.min_analytic, exact);
  }
  return rep;
}

}  // namespace specshare
