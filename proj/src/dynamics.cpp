#include "specshare/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "specshare/error.hpp"

namespace specshare {

namespace {

std::size_t count_primaries(const NetworkInstance& universe, const std::vector<std::size_t>& users) {
  return static_cast<std::size_t>(std::count_if(
      users.begin(), users.end(), [&](std::size_t u) { return u < universe.num_primary(); }));
}

std::string event_label(EventKind kind, std::size_t user) {
  return fmt::format("{} {}", kind == EventKind::enter ? "ENTER" : "EXIT", user);
}

}  // namespace

DynamicSession::DynamicSession(NetworkInstance universe, SensingModel sensing,
                               std::vector<std::size_t> initial_users, std::uint64_t seed,
                               DynamicOptions options)
    : universe_(std::move(universe)),
      sensing_(std::move(sensing)),
      options_(std::move(options)),
      streams_(seed, 0, universe_.size()),
      entered_(universe_.size(), kNobody),
      exited_(universe_.size(), kNobody) {
  if (sensing_.size() != universe_.size())
    throw std::invalid_argument("sensing model does not match the universe");
  std::sort(initial_users.begin(), initial_users.end());
  initial_users.erase(std::unique(initial_users.begin(), initial_users.end()), initial_users.end());
  if (initial_users.empty()) throw std::invalid_argument("no initial users");
  for (auto u : initial_users)
    if (u >= universe_.size()) throw std::invalid_argument(fmt::format("unknown user {}", u));

  std::vector<double> targets;
  for (auto u : initial_users) targets.push_back(universe_.min_rate(u));
  current_.emplace(build_epoch(initial_users, targets));  // infeasible start propagates

  EpochRecord rec;
  rec.start = 0;
  for (auto u : initial_users) {
    rec.events.push_back(event_label(EventKind::enter, u));
    entered_[u] = 0;
  }
  rec.users = initial_users;
  rec.rates = current_->scheduler.its().r_star;
  rec.targets = targets;
  rec.delta_min = current_->scheduler.constants().delta_min;
  epochs_.push_back(std::move(rec));
}

DynamicSession::Epoch DynamicSession::build_epoch(std::vector<std::size_t> users,
                                                  const std::vector<double>& targets) const {
  auto net = universe_.subset(users, count_primaries(universe_, users));
  auto sensing = sensing_.subset(users);
  auto d = design(net, sensing, options_.criterion, options_.mode, targets, options_.its);
  if (!(d.constants.delta_min <= net.discount()))
    throw InfeasibleError(fmt::format("discount {} below the population's minimum {}",
                                      net.discount(), d.constants.delta_min));
  LdfScheduler scheduler(d.its, d.constants, net.discount(), options_.ldf);
  return Epoch{std::move(net), std::move(sensing), std::move(users), std::move(scheduler)};
}

bool DynamicSession::on_membership_change(const MembershipEvent& event) {
  if (event.t < now())
    throw std::invalid_argument(
        fmt::format("membership change at slot {} is in the past (now {})", event.t, now()));
  run_until(event.t);

  std::vector<std::size_t> next = current_->users;
  std::vector<std::string> labels;
  for (auto u : event.users) {
    if (u >= universe_.size()) throw std::invalid_argument(fmt::format("unknown user {}", u));
    auto it = std::find(next.begin(), next.end(), u);
    if (event.kind == EventKind::enter) {
      if (it != next.end()) throw std::invalid_argument(fmt::format("user {} already active", u));
      if (exited_[u] != kNobody)
        throw std::invalid_argument(fmt::format("user {} left earlier; re-entry unsupported", u));
      next.push_back(u);
    } else {
      if (it == next.end()) throw std::invalid_argument(fmt::format("user {} not active", u));
      next.erase(it);
    }
    labels.push_back(event_label(event.kind, u));
  }
  std::sort(next.begin(), next.end());

  auto reject = [&](std::string why) {
    spdlog::warn("slot {}: membership change rejected: {}", now(), why);
    rejected_.push_back({now(), labels, std::move(why)});
    return false;
  };
  if (next.empty()) return reject("no users would remain");

  // Stayers carry their continuation throughput, entrants their minimum rate.
  std::vector<double> targets;
  targets.reserve(next.size());
  for (auto u : next) {
    bool stays = std::find(current_->users.begin(), current_->users.end(), u) !=
                 current_->users.end();
    targets.push_back(stays ? continuation(u) : universe_.min_rate(u));
  }

  std::optional<Epoch> built;
  try {
    built.emplace(build_epoch(next, targets));
  } catch (const InfeasibleError& e) {
    return reject(e.what());
  }

  for (auto u : event.users) (event.kind == EventKind::enter ? entered_ : exited_)[u] = now();
  current_.emplace(std::move(*built));

  EpochRecord rec;
  rec.start = now();
  rec.events = std::move(labels);
  rec.users = next;
  rec.rates = current_->scheduler.its().r_star;
  rec.targets = std::move(targets);
  rec.delta_min = current_->scheduler.constants().delta_min;
  spdlog::info("slot {}: epoch {} with {} users", now(), epochs_.size(), next.size());
  epochs_.push_back(std::move(rec));
  return true;
}

void DynamicSession::run_until(std::size_t t) {
  const std::size_t n = universe_.size();
  while (now() < t) {
    auto& ep = *current_;
    auto d = ep.scheduler.decide();
    PowerProfile p(n, 0.0);
    if (d.i_star != kNobody) p[ep.users[d.i_star]] = d.power;

    // Silent users add nothing to anyone's interference, so the universe
    // network gives the epoch's signal while keeping one stream per user.
    int y = system_distress(universe_, sensing_, p, streams_);
    auto taken = ep.scheduler.advance(y);
    if (taken.i_star != d.i_star)
      throw InvariantFault(fmt::format("slot {}: scheduler decision changed on advance", now()));

    std::vector<double> rates(n, 0.0);
    if (d.i_star != kNobody) rates[ep.users[d.i_star]] = throughput(universe_, p, ep.users[d.i_star]);
    trace_.powers.push_back(std::move(p));
    trace_.signals.push_back(y);
    trace_.rates.push_back(std::move(rates));
    epoch_of_slot_.push_back(epochs_.size() - 1);
  }
}

double DynamicSession::continuation(std::size_t user) const {
  const auto& users = current_->users;
  auto it = std::find(users.begin(), users.end(), user);
  if (it == users.end()) return 0.0;
  auto j = static_cast<std::size_t>(it - users.begin());
  const auto& s = current_->scheduler.state();
  return s.r_prime[j] * current_->scheduler.its().r_star[j];
}

EpochBoundReport check_epochwise_bound(const DynamicSession& session, double slack) {
  EpochBoundReport report;
  const double d = session.discount();
  const auto& epochs = session.epochs();
  const auto& trace = session.trace();
  const std::size_t horizon = session.now();

  for (std::size_t l = 0; l < epochs.size(); ++l) {
    const auto& ep = epochs[l];
    const std::size_t end = l + 1 < epochs.size() ? epochs[l + 1].start : horizon;
    for (std::size_t k = 0; k < ep.users.size(); ++k) {
      const std::size_t u = ep.users[k];
      const std::size_t e = session.entered()[u];
      const double r = ep.rates[k];
      const double gamma = ep.targets[k];
      // Throughput the user already has on its own clock before this epoch.
      double before = 0.0;
      double w = 1.0 - d;
      for (std::size_t t = e; t < ep.start; ++t) {
        before += w * trace.rates[t][u];
        w *= d;
      }
      const double scale = std::pow(d, static_cast<double>(ep.start - e));  // d^{t_l - e}
      const double target = session.universe().min_rate(u);

      EpochBoundEntry entry{l, u};
      double cumulative = before;  // user-clock sum up to t
      double epoch_sum = 0.0;      // normalized sum from t_l
      double we = 1.0 - d;
      for (std::size_t t = ep.start; t < end; ++t) {
        const double x = trace.rates[t][u];
        cumulative += w * x;
        w *= d;
        epoch_sum += we * x;
        we *= d;

        const double abs_gap = std::abs(scale * epoch_sum - scale * gamma);
        const double abs_bound = r * std::pow(d, static_cast<double>(t - e + 1));
        const double norm_gap = std::abs(epoch_sum - gamma);
        const double norm_bound = r * std::pow(d, static_cast<double>(t - ep.start + 1));
        if (abs_gap > abs_bound + slack) entry.holds = false;
        if (norm_gap > norm_bound + slack) entry.normalized_holds = false;
        entry.worst_ratio = std::max(entry.worst_ratio, abs_gap / (abs_bound + slack));

        // Cumulative distance from the minimum rate equals the epoch distance
        // carried back to the user's clock.
        const double telescoped = scale * (epoch_sum - gamma);
        entry.telescoping_error =
            std::max(entry.telescoping_error, std::abs((cumulative - target) - telescoped));
      }
      if (!entry.holds) ++report.violations;
      if (!entry.normalized_holds) ++report.normalized_violations;
      report.max_telescoping_error = std::max(report.max_telescoping_error, entry.telescoping_error);
      report.entries.push_back(entry);
    }
  }
  return report;
}

DynamicScenario membership_scenario(std::uint64_t seed, std::size_t horizon,
                                       const ChannelDefaults& defaults) {
  constexpr std::size_t kPrimary = 11;
  constexpr std::size_t kSecondary = 8;
  constexpr std::size_t n = kPrimary + kSecondary;

  NetworkParams params;
  params.num_primary = kPrimary;
  params.num_secondary = kSecondary;
  params.gains = SquareMatrix(n);
  CounterRng gains(seed, 0x6a1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      // Exponential power gains: mean 1 on the direct link, alpha across.
      const double mean = i == j ? 1.0 : defaults.alpha;
      params.gains(i, j) = -mean * std::log1p(-gains.uniform_at(i * 64 + j));
    }
  params.noise.assign(n, defaults.noise);
  params.power_sets.assign(n, PowerSet::uniform_grid(defaults.power_max, defaults.grid_points));
  for (std::size_t k = 0; k < kPrimary; ++k)
    params.min_rates.push_back(k + 1 < kPrimary ? 0.2 + 0.02 * static_cast<double>(k) : 0.4);
  params.min_rates.resize(n, 0.1);
  params.discount = defaults.discount;

  DynamicScenario s;
  s.universe = NetworkInstance(std::move(params));
  s.sensing = SensingModel::uniform(s.universe, ErrorDistribution::gaussian(defaults.error_variance),
                                    defaults.threshold);
  for (std::size_t k = 0; k < 10; ++k) s.initial_users.push_back(k);
  s.initial_users.push_back(kPrimary + 0);  // SU1
  s.initial_users.push_back(kPrimary + 1);  // SU2
  s.events.push_back({100, EventKind::exit, {kPrimary + 1}});
  s.events.push_back({150, EventKind::enter, {kPrimary + 2}});
  s.events.push_back({200, EventKind::enter, {10}});
  std::vector<std::size_t> late;
  for (std::size_t k = 3; k < kSecondary; ++k) late.push_back(kPrimary + k);
  s.events.push_back({250, EventKind::enter, late});
  s.horizon = horizon;
  for (std::size_t k = 0; k < kPrimary; ++k) s.labels.push_back(fmt::format("PU{}", k + 1));
  for (std::size_t k = 0; k < kSecondary; ++k) s.labels.push_back(fmt::format("SU{}", k + 1));
  return s;
}

DynamicSession run_scenario(const DynamicScenario& scenario, std::uint64_t seed,
                            DynamicOptions options) {
  DynamicSession session(scenario.universe, scenario.sensing, scenario.initial_users, seed,
                         std::move(options));
  for (const auto& ev : scenario.events) {
    if (ev.t >= scenario.horizon) break;
    session.on_membership_change(ev);
  }
  session.run_until(scenario.horizon);
  return session;
}

}  // namespace specshare
