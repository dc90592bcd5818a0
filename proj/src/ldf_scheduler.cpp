#include "specshare/ldf_scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "specshare/error.hpp"

namespace specshare {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool is_active(std::span<const double> r_star, std::size_t j) { return r_star[j] > 0.0; }

// Puts the state back on sum r' = 1 after a step and absorbs rounding at the
// edges of [0, 1]. Anything larger is a real excursion.
void settle(ContinuationState& s, std::span<const double> r_star, const LdfConfig& cfg,
            bool check_drift) {
  double sum = 0.0;
  for (std::size_t j = 0; j < s.r_prime.size(); ++j)
    if (is_active(r_star, j)) sum += s.r_prime[j];
  if (sum == 0.0) return;
  if (check_drift && std::abs(sum - 1.0) > cfg.drift_tolerance)
    throw InvariantFault(
        fmt::format("slot {}: sum of r' drifted to {:.17g}", s.t, sum));
  for (double& v : s.r_prime) v /= sum;

  bool rescale = false;
  for (std::size_t j = 0; j < s.r_prime.size(); ++j) {
    if (!is_active(r_star, j)) continue;
    double& v = s.r_prime[j];
    const double excess = v < 0.0 ? -v : (v > 1.0 ? v - 1.0 : 0.0);
    if (excess == 0.0) continue;
    if (excess > cfg.clamp_tolerance) {
      if (cfg.mode == MonitoringMode::perfect)
        throw InvariantFault(fmt::format(
            "slot {}: r'[{}] = {:.12g} left [0, 1]; the continuation set is not "
            "self-generating at this discount factor",
            s.t, j, v));
      spdlog::warn("slot {}: clamping r'[{}] = {:.6g} into [0, 1]", s.t, j, v);
    }
    v = std::clamp(v, 0.0, 1.0);
    rescale = true;
  }
  if (rescale) {
    double total = 0.0;
    for (std::size_t j = 0; j < s.r_prime.size(); ++j)
      if (is_active(r_star, j)) total += s.r_prime[j];
    if (total > 0.0)
      for (double& v : s.r_prime) v /= total;
  }
}

ContinuationState apply_update(const ContinuationState& state, const ScheduleDecision& d,
                               const FeasibilityConstants& k, std::span<const double> r_star,
                               double discount, int y, const LdfConfig& cfg) {
  ContinuationState next = state;
  next.t = state.t + 1;
  const std::size_t n = state.r_prime.size();
  const std::size_t is = d.i_star;
  if (is == kNobody) return next;
  const double inv = 1.0 / discount;
  const double tail = inv - 1.0;

  if (cfg.mode == MonitoringMode::perfect) {
    for (std::size_t j = 0; j < n; ++j)
      if (is_active(r_star, j)) next.r_prime[j] = state.r_prime[j] * inv;
    next.r_prime[is] = state.r_prime[is] * inv - tail;
  } else {
    const double rho1 = k.rho_tdma[is];
    const double rho0 = 1.0 - rho1;
    const double rho = y == 0 ? rho1 : rho0;
    double spread = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == is || !is_active(r_star, j)) continue;
      const double c = rho / -k.b(is, j);
      spread += c;
      next.r_prime[j] = state.r_prime[j] * inv + (y == 0 ? tail * c : -tail * c);
    }
    next.r_prime[is] = state.r_prime[is] * inv - tail * (y == 0 ? 1.0 + spread : 1.0 - spread);
  }
  settle(next, r_star, cfg, true);
  return next;
}

}  // namespace

std::vector<double> ContinuationState::gamma(std::span<const double> r_star) const {
  std::vector<double> g(r_prime.size());
  for (std::size_t j = 0; j < g.size(); ++j) g[j] = r_prime[j] * r_star[j];
  return g;
}

ContinuationState initial_state(const ItsSolution& its) {
  ContinuationState s;
  s.r_prime.assign(its.size(), 0.0);
  for (std::size_t j = 0; j < its.size(); ++j)
    if (its.r_star[j] > 0.0) s.r_prime[j] = its.targets[j] / its.r_star[j];
  return s;
}

double distance(const ContinuationState& state, const FeasibilityConstants& k,
                std::span<const double> r_star, std::size_t j, const LdfConfig& cfg) {
  if (!is_active(r_star, j)) return -kInf;
  const double rp = state.r_prime.at(j);
  if (rp >= 1.0) return kInf;
  const double mu = k.mu_lower[j];
  const bool perfect = cfg.mode == MonitoringMode::perfect;
  if (cfg.distance == DistanceForm::algorithm) {
    const double scale = perfect ? 1.0 : k.rho_tdma[j];
    return (rp - mu) / (1.0 - rp) * scale;
  }
  double extra = 0.0;
  if (!perfect)
    for (std::size_t q = 0; q < r_star.size(); ++q)
      if (q != j && is_active(r_star, q)) extra += k.deviation_term(j, q);
  return (rp - mu) / (1.0 - rp + extra);
}

ScheduleDecision decide(const ContinuationState& state, const FeasibilityConstants& k,
                        const ItsSolution& its, const LdfConfig& cfg) {
  ScheduleDecision d;
  d.t = state.t;
  d.r_prime = state.r_prime;
  d.distances.resize(its.size());
  // The distance scales by rho(y=1|p~j), which is zero under tight sensing and would
  // make every user tie. Ties fall back to the unscaled ratio, then to the lowest index.
  LdfConfig unscaled = cfg;
  unscaled.mode = MonitoringMode::perfect;
  double best = -kInf, best_tie = -kInf;
  for (std::size_t j = 0; j < its.size(); ++j) {
    d.distances[j] = distance(state, k, its.r_star, j, cfg);
    if (!is_active(its.r_star, j)) continue;
    const bool scaled = cfg.mode != MonitoringMode::perfect && cfg.distance == DistanceForm::algorithm;
    const double tie = scaled ? distance(state, k, its.r_star, j, unscaled) : 0.0;
    if (d.i_star == kNobody || d.distances[j] > best || (d.distances[j] == best && tie > best_tie)) {
      best = d.distances[j];
      best_tie = tie;
      d.i_star = j;
    }
  }
  if (d.i_star != kNobody) d.power = its.p_star[d.i_star];
  return d;
}

std::pair<ScheduleDecision, ContinuationState> step(const ContinuationState& state,
                                                    const FeasibilityConstants& constants,
                                                    const ItsSolution& its, double discount,
                                                    int observed_y, const LdfConfig& cfg) {
  if (!(discount > 0.0 && discount < 1.0)) throw std::invalid_argument("discount must be in (0, 1)");
  ScheduleDecision d = decide(state, constants, its, cfg);
  d.y = observed_y;
  ContinuationState next = apply_update(state, d, constants, its.r_star, discount, observed_y, cfg);
  return {std::move(d), std::move(next)};
}

LdfScheduler::LdfScheduler(ItsSolution its, FeasibilityConstants constants, double discount,
                           LdfConfig cfg)
    : LdfScheduler(its, std::move(constants), discount, cfg, initial_state(its)) {}

LdfScheduler::LdfScheduler(ItsSolution its, FeasibilityConstants constants, double discount,
                           LdfConfig cfg, ContinuationState initial)
    : its_(std::move(its)),
      constants_(std::move(constants)),
      discount_(discount),
      cfg_(cfg),
      state_(std::move(initial)) {
  if (!(discount_ > 0.0 && discount_ < 1.0))
    throw std::invalid_argument("discount must be in (0, 1)");
  if (state_.r_prime.size() != its_.size() || constants_.mu_lower.size() != its_.size())
    throw std::invalid_argument("scheduler inputs disagree on the number of users");
}

ScheduleDecision LdfScheduler::decide() const { return specshare::decide(state_, constants_, its_, cfg_); }

ScheduleDecision LdfScheduler::advance(int y) {
  auto [d, next] = step(state_, constants_, its_, discount_, y, cfg_);
  state_ = std::move(next);
  return d;
}

void LdfScheduler::absorb(std::span<const double> delivered) {
  // gamma_j = (1-d) x_j + d gamma_j'  =>  r'_j <- (r'_j - (1-d) x_j / r*_j) / d
  for (std::size_t j = 0; j < state_.r_prime.size(); ++j) {
    if (!is_active(its_.r_star, j)) continue;
    state_.r_prime[j] =
        (state_.r_prime[j] - (1.0 - discount_) * delivered[j] / its_.r_star[j]) / discount_;
  }
  ++state_.t;
  // An outside slot can overshoot a user's remaining claim; that is clamped
  // rather than faulted, whatever the monitoring mode.
  LdfConfig lenient = cfg_;
  lenient.mode = MonitoringMode::signal_dependent;
  settle(state_, its_.r_star, lenient, true);
}

PowerProfile LdfScheduler::profile(const ScheduleDecision& d, std::size_t num_users) const {
  PowerProfile p(num_users, 0.0);
  if (d.i_star != kNobody) p[d.i_star] = d.power;
  return p;
}

PowerProfile LdfPolicy::act(std::size_t t, std::span<const int> history) {
  if (t != log_.size()) throw std::logic_error("LDF policy must be driven slot by slot");
  if (t > 0) {
    log_.back().y = history[t - 1];
    scheduler_.advance(history[t - 1]);
  }
  log_.push_back(scheduler_.decide());
  return scheduler_.profile(log_.back(), num_users_);
}

BoundReport check_throughput_bound(const PolicyTrace& trace, const ItsSolution& its,
                                   double discount, double slack) {
  BoundReport rep;
  for (std::size_t i = 0; i < its.size(); ++i) {
    if (!(its.r_star[i] > 0.0)) continue;
    const std::vector<double> avg = running_discounted_throughput(trace, discount, i);
    double decay = discount;  // d^{t+1}
    for (std::size_t t = 0; t < avg.size(); ++t, decay *= discount) {
      const double gap = std::abs(avg[t] - its.targets[i]);
      const double bound = its.r_star[i] * decay;
      ++rep.checks;
      rep.worst_ratio = std::max(rep.worst_ratio, gap / (bound + slack));
      if (gap > bound + slack) {
        if (rep.violations++ == 0) {
          rep.first_slot = t;
          rep.first_user = i;
        }
      }
    }
  }
  return rep;
}

BoundReport check_expected_bound(std::span<const PolicyTrace> traces, const ItsSolution& its,
                                 double discount, double slack) {
  BoundReport rep;
  if (traces.size() < 2) throw std::invalid_argument("expected-bound check needs >= 2 traces");
  const double count = static_cast<double>(traces.size());
  for (std::size_t i = 0; i < its.size(); ++i) {
    if (!(its.r_star[i] > 0.0)) continue;
    std::vector<std::vector<double>> paths;
    for (const PolicyTrace& tr : traces) paths.push_back(running_discounted_throughput(tr, discount, i));
    const std::size_t horizon = paths.front().size();
    double decay = discount;
    for (std::size_t t = 0; t < horizon; ++t, decay *= discount) {
      double mean = 0.0;
      for (const auto& p : paths) mean += p[t];
      mean /= count;
      double var = 0.0;
      for (const auto& p : paths) var += (p[t] - mean) * (p[t] - mean);
      const double se = std::sqrt(var / (count - 1.0) / count);
      const double gap = std::abs(mean - its.targets[i]);
      const double bound = its.r_star[i] * decay + 3.0 * se;
      ++rep.checks;
      rep.worst_ratio = std::max(rep.worst_ratio, gap / (bound + slack));
      if (gap > bound + slack && rep.violations++ == 0) {
        rep.first_slot = t;
        rep.first_user = i;
      }
    }
  }
  return rep;
}

LdfRun run_ldf(const NetworkInstance& net, const SensingModel& sensing, const ItsSolution& its,
               const FeasibilityConstants& constants, double discount, std::size_t horizon,
               UserStreams& streams, const LdfConfig& cfg) {
  const NetworkInstance with_levels = net.with_power_levels(its.p_star);
  LdfPolicy policy(LdfScheduler(its, constants, discount, cfg), net.size());
  LdfRun run;
  run.trace = evaluate(policy, with_levels, sensing, horizon, streams);
  run.decisions = policy.decisions();
  if (!run.decisions.empty()) run.decisions.back().y = run.trace.signals.back();
  run.bound = check_throughput_bound(run.trace, its, discount, cfg.bound_slack);
  if (cfg.mode == MonitoringMode::perfect && !run.bound.ok())
    throw InvariantFault(fmt::format(
        "throughput-distance bound violated at slot {} for user {} ({} violations)",
        run.bound.first_slot, run.bound.first_user, run.bound.violations));
  return run;
}

}  // namespace specshare
