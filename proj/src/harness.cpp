#include "specshare/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <ostream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "specshare/error.hpp"
#include "specshare/io.hpp"
#include "specshare/ldf_scheduler.hpp"

namespace specshare {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::size_t idx(PolicyKind k) { return static_cast<std::size_t>(k); }

ExperimentKind parse_kind(const std::string& s) {
  if (s == "alpha-sweep") return ExperimentKind::alpha_sweep;
  if (s == "user-sweep") return ExperimentKind::user_sweep;
  if (s == "rate-sweep") return ExperimentKind::rate_sweep;
  if (s == "dynamic") return ExperimentKind::dynamic;
  if (s == "single") return ExperimentKind::single;
  throw ConfigError("unknown experiment kind '" + s + "'");
}

double mean_of(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? kNaN : s / static_cast<double>(xs.size());
}

double stderr_of(std::span<const double> xs) {
  if (xs.size() < 2) return kNaN;
  const double m = mean_of(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
}

TrialOutcome summarize(const DiscountedMetrics& m) {
  return {true, mean_of(m.power), mean_of(m.throughput)};
}

SensingModel trial_sensing(const ExperimentSpec& spec, const NetworkInstance& net) {
  return SensingModel::uniform(net, ErrorDistribution::gaussian(spec.defaults.error_variance),
                               spec.defaults.threshold);
}

// Distress streams are private to (seed, point, trial).
UserStreams trial_streams(const ExperimentSpec& spec, const GridPoint& point, std::size_t trial,
                          std::size_t n) {
  return UserStreams(mix64(spec.seed ^ mix64(point.index + 0x51ED)), trial, n);
}

// Runs fn(k) for k in [0, count) on up to `threads` workers. The first
// exception (lowest k) is rethrown after every worker has stopped.
template <class Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  std::vector<std::exception_ptr> errors(count);
  if (threads == 1) {
    for (std::size_t k = 0; k < count; ++k) fn(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w)
      pool.emplace_back([&] {
        for (std::size_t k; !failed && (k = next.fetch_add(1)) < count;) {
          try {
            fn(k);
          } catch (...) {
            errors[k] = std::current_exception();
            failed = true;
          }
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string fmt_value(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{:.17g}", v);
}

DynamicSummary run_dynamic(const ExperimentSpec& spec, std::size_t threads) {
  ChannelDefaults cd;
  cd.noise = spec.defaults.noise;
  cd.alpha = spec.defaults.alpha;
  cd.threshold = spec.defaults.threshold;
  cd.error_variance = spec.defaults.error_variance;
  cd.discount = spec.defaults.discount;
  cd.power_max = spec.defaults.power_max;
  cd.grid_points = spec.defaults.grid_points;

  struct PerTrial {
    std::vector<std::size_t> present;
    std::vector<double> throughput, power;
    std::vector<std::size_t> violations;
    EpochBoundReport report;
    std::size_t rejected = 0;
  };
  std::vector<PerTrial> out(spec.trials);
  DynamicScenario first = membership_scenario(spec.seed, spec.horizon, cd);
  const std::size_t n = first.universe.size();

  parallel_for(spec.trials, threads, [&](std::size_t trial) {
    const std::uint64_t s = mix64(spec.seed ^ mix64(trial + 0xD7));
    auto sc = membership_scenario(s, spec.horizon, cd);
    DynamicOptions opts;
    opts.criterion = spec.criterion;
    opts.mode = spec.mode;
    auto session = run_scenario(sc, s, opts);
    PerTrial& r = out[trial];
    r.report = check_epochwise_bound(session);
    r.rejected = session.rejected().size();
    r.present.assign(n, 0);
    r.throughput.assign(n, 0.0);
    r.power.assign(n, 0.0);
    r.violations.assign(n, 0);
    const double d = session.discount();
    for (std::size_t u = 0; u < n; ++u) {
      const std::size_t e = session.entered()[u];
      if (e == kNobody) continue;
      const std::size_t end = std::min(session.exited()[u], session.now());
      double w = 1.0 - d;
      for (std::size_t t = e; t < end; ++t) {
        r.throughput[u] += w * session.trace().rates[t][u];
        r.power[u] += w * session.trace().powers[t][u];
        w *= d;
      }
      r.present[u] = 1;
    }
    for (const auto& entry : r.report.entries)
      if (!entry.holds || !entry.normalized_holds) ++r.violations[entry.user];
  });

  DynamicSummary sum;
  sum.trials = spec.trials;
  for (std::size_t u = 0; u < n; ++u) {
    DynamicUserStats st;
    st.label = first.labels[u];
    st.target = first.universe.min_rate(u);
    std::vector<double> thr, pow;
    for (const auto& r : out) {
      if (!r.present[u]) continue;
      ++st.present_trials;
      thr.push_back(r.throughput[u]);
      pow.push_back(r.power[u]);
      st.bound_violations += r.violations[u];
    }
    st.throughput_mean = mean_of(thr);
    st.power_mean = mean_of(pow);
    sum.users.push_back(std::move(st));
  }
  for (const auto& r : out) {
    sum.bound_violations += r.report.violations;
    sum.normalized_violations += r.report.normalized_violations;
    sum.rejected_changes += r.rejected;
    sum.max_telescoping_error = std::max(sum.max_telescoping_error, r.report.max_telescoping_error);
  }
  return sum;
}

}  // namespace

std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::alpha_sweep: return "alpha-sweep";
    case ExperimentKind::user_sweep: return "user-sweep";
    case ExperimentKind::rate_sweep: return "rate-sweep";
    case ExperimentKind::dynamic: return "dynamic";
    case ExperimentKind::single: return "single";
  }
  return "?";
}

std::string to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::proposed: return "proposed";
    case PolicyKind::stationary: return "stationary";
    case PolicyKind::punish_forgive: return "punish_forgive";
  }
  return "?";
}

void ExperimentSpec::validate() const {
  if (trials < 1) throw ConfigError("trials must be at least 1");
  if (horizon < 1) throw ConfigError("horizon must be at least 1");
  if (!(defaults.discount > 0.0 && defaults.discount < 1.0))
    throw ConfigError("discount must lie in (0, 1)");
  if (!(defaults.noise > 0.0)) throw ConfigError("noise must be positive");
  auto nonempty = [](bool empty, const char* what) {
    if (empty) throw ConfigError(fmt::format("'{}' grid must be non-empty", what));
  };
  switch (kind) {
    case ExperimentKind::alpha_sweep: nonempty(alphas.empty(), "alphas"); break;
    case ExperimentKind::user_sweep: nonempty(users.empty(), "users"); break;
    case ExperimentKind::rate_sweep: nonempty(rates.empty(), "rates"); break;
    default: break;
  }
  for (auto n : users)
    if (n < 1 || n > 64) throw ConfigError("user counts must lie in [1, 64]");
  if (defaults.users < 1 || defaults.users > 64) throw ConfigError("users must lie in [1, 64]");
  for (double a : alphas)
    if (!(a >= 0.0)) throw ConfigError("alpha must be non-negative");
  for (double r : rates)
    if (!(r > 0.0)) throw ConfigError("rates must be positive");
}

ExperimentSpec parse_experiment(const nlohmann::json& doc) try {
  ExperimentSpec s;
  s.kind = parse_kind(doc.at("kind").get<std::string>());
  if (doc.contains("grid")) {
    const auto& g = doc["grid"];
    s.alphas = g.value("alpha", s.alphas);
    s.users = g.value("users", s.users);
    s.rates = g.value("rate", s.rates);
  }
  s.trials = doc.value("trials", s.trials);
  s.seed = doc.value("seed", s.seed);
  s.horizon = doc.value("horizon", s.horizon);
  s.threads = doc.value("threads", s.threads);
  if (doc.contains("defaults")) {
    const auto& d = doc["defaults"];
    auto& x = s.defaults;
    x.noise = d.value("noise", x.noise);
    x.alpha = d.value("alpha", x.alpha);
    x.users = d.value("users", x.users);
    x.rate = d.value("rate", x.rate);
    x.threshold = d.value("theta", x.threshold);
    x.error_variance = d.value("error_variance", x.error_variance);
    x.discount = d.value("discount", x.discount);
    x.power_max = d.value("power_max", x.power_max);
    x.grid_points = d.value("grid_points", x.grid_points);
  }
  const std::string gm = doc.value("gain_model", "exponential");
  if (gm == "exponential") s.gain_model = GainModel::exponential;
  else if (gm == "normal-magnitude") s.gain_model = GainModel::normal_magnitude;
  else throw ConfigError("unknown gain model '" + gm + "'");
  if (doc.contains("criterion")) {
    s.criterion.kind = parse_criterion_kind(doc["criterion"].value("kind", "weighted_sum"));
    if (doc["criterion"].contains("weights"))
      s.criterion.weights = doc["criterion"]["weights"].get<std::vector<double>>();
  }
  s.mode = parse_design_mode(doc.value("mode", "obedient"));
  s.punish.duration = doc.value("punish_duration", s.punish.duration);
  s.validate();
  return s;
} catch (const nlohmann::json::exception& e) {
  throw ConfigError(std::string("bad experiment spec: ") + e.what());
}

nlohmann::json experiment_to_json(const ExperimentSpec& s) {
  const auto& d = s.defaults;
  return {
      {"kind", to_string(s.kind)},
      {"grid", {{"alpha", s.alphas}, {"users", s.users}, {"rate", s.rates}}},
      {"trials", s.trials},
      {"seed", s.seed},
      {"horizon", s.horizon},
      {"defaults",
       {{"noise", d.noise}, {"alpha", d.alpha}, {"users", d.users}, {"rate", d.rate},
        {"theta", d.threshold}, {"error_variance", d.error_variance}, {"discount", d.discount},
        {"power_max", d.power_max}, {"grid_points", d.grid_points}}},
      {"gain_model", s.gain_model == GainModel::exponential ? "exponential" : "normal-magnitude"},
      {"criterion", {{"kind", to_string(s.criterion.kind)}}},
      {"mode", to_string(s.mode)},
      {"punish_duration", s.punish.duration},
  };
}

std::vector<GridPoint> grid_points(const ExperimentSpec& spec) {
  const auto& d = spec.defaults;
  std::vector<GridPoint> pts;
  auto add = [&](double a, std::size_t n, double r) { pts.push_back({pts.size(), a, n, r}); };
  switch (spec.kind) {
    case ExperimentKind::alpha_sweep:
      for (double a : spec.alphas) add(a, d.users, d.rate);
      break;
    case ExperimentKind::user_sweep:
      for (auto n : spec.users) add(d.alpha, n, d.rate);
      break;
    case ExperimentKind::rate_sweep:
      for (double r : spec.rates) add(d.alpha, d.users, r);
      break;
    case ExperimentKind::single:
      add(d.alpha, d.users, d.rate);
      break;
    case ExperimentKind::dynamic:
      break;
  }
  return pts;
}

NetworkInstance draw_network(const ExperimentSpec& spec, const GridPoint& point, std::size_t trial) {
  const std::size_t n = point.users;
  const CounterRng rng(spec.seed, trial);
  NetworkParams p;
  p.num_primary = n;
  p.gains = SquareMatrix(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double mean = i == j ? 1.0 : point.alpha;
      const double e = -std::log1p(-rng.uniform_at(i * 64 + j));  // Exp(1)
      p.gains(i, j) = spec.gain_model == GainModel::exponential ? mean * e : std::sqrt(mean * e);
    }
  p.noise.assign(n, spec.defaults.noise);
  p.power_sets.assign(n, PowerSet::uniform_grid(spec.defaults.power_max, spec.defaults.grid_points));
  p.min_rates.assign(n, point.rate);
  p.discount = spec.defaults.discount;
  return NetworkInstance(std::move(p));
}

TrialResult run_trial(const ExperimentSpec& spec, const GridPoint& point, std::size_t trial) {
  TrialResult res;
  const auto net = draw_network(spec, point, trial);
  const auto sensing = trial_sensing(spec, net);
  const auto targets = std::vector<double>(net.min_rates().begin(), net.min_rates().end());
  const double d = net.discount();

  std::optional<Design> des;
  try {
    des = design(net, sensing, spec.criterion, spec.mode, targets);
    if (!(des->constants.delta_min <= d)) des.reset();
  } catch (const InfeasibleError&) {
    des.reset();
  }
  if (des) {
    LdfConfig cfg;  // perfect monitoring: run_ldf faults on any bound violation
    auto streams = trial_streams(spec, point, trial, net.size());
    auto run = run_ldf(net, sensing, des->its, des->constants, d, spec.horizon, streams, cfg);
    res.policy[idx(PolicyKind::proposed)] = summarize(discounted_metrics(run.trace, d));
  }

  const auto stat = stationary_solve(net);
  if (stat.feasible) {
    std::vector<double> r(net.size());
    for (std::size_t i = 0; i < net.size(); ++i) r[i] = throughput(net, stat.power, i);
    res.policy[idx(PolicyKind::stationary)] = {true, mean_of(stat.power), mean_of(r)};

    if (des) {
      auto policy = punish_forgive_policy(net, des->its, des->constants, stat, d, spec.punish);
      auto eval_net = net.with_power_levels(des->its.p_star).with_power_levels(stat.power);
      auto streams = trial_streams(spec, point, trial, net.size());
      auto trace = evaluate(policy, eval_net, sensing, spec.horizon, streams);
      res.policy[idx(PolicyKind::punish_forgive)] = summarize(discounted_metrics(trace, d));
    }
  }
  return res;
}

std::optional<double> energy_saving_ratio(const PointResult& point, PolicyKind baseline,
                                          PolicyKind proposed) {
  double pb = 0.0, pp = 0.0;
  std::size_t k = 0;
  for (const auto& t : point.trials) {
    const auto& b = t.policy[idx(baseline)];
    const auto& p = t.policy[idx(proposed)];
    if (!b.feasible || !p.feasible) continue;
    pb += b.power;
    pp += p.power;
    ++k;
  }
  if (k == 0 || !(pb > 0.0)) return std::nullopt;
  return 100.0 * (1.0 - pp / pb);
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  const auto start = std::chrono::steady_clock::now();
  ExperimentResult result;
  result.spec = spec;
  result.threads_used = std::max<std::size_t>(1, spec.threads);

  if (spec.kind == ExperimentKind::dynamic) {
    result.dynamic = run_dynamic(spec, result.threads_used);
  } else {
    const auto pts = grid_points(spec);
    const std::size_t T = spec.trials;
    std::vector<TrialResult> all(pts.size() * T);
    parallel_for(all.size(), result.threads_used,
                 [&](std::size_t k) { all[k] = run_trial(spec, pts[k / T], k % T); });

    for (const auto& pt : pts) {
      PointResult pr;
      pr.point = pt;
      pr.trials.assign(all.begin() + static_cast<std::ptrdiff_t>(pt.index * T),
                       all.begin() + static_cast<std::ptrdiff_t>((pt.index + 1) * T));
      for (std::size_t q = 0; q < kNumPolicies; ++q) {
        std::vector<double> pw, th;
        for (const auto& t : pr.trials)
          if (t.policy[q].feasible) {
            pw.push_back(t.policy[q].power);
            th.push_back(t.policy[q].throughput);
          }
        auto& st = pr.stats[q];
        st.trials = T;
        st.feasible = pw.size();
        st.power_mean = mean_of(pw);
        st.power_se = stderr_of(pw);
        st.throughput_mean = mean_of(th);
        st.throughput_se = stderr_of(th);
      }
      result.points.push_back(std::move(pr));
    }

    // Paired view: trials feasible at every point of the sweep.
    for (std::size_t q = 0; q < kNumPolicies; ++q) {
      std::vector<std::size_t> common;
      for (std::size_t t = 0; t < T; ++t) {
        bool everywhere = true;
        for (const auto& pr : result.points) everywhere = everywhere && pr.trials[t].policy[q].feasible;
        if (everywhere) common.push_back(t);
      }
      for (auto& pr : result.points) {
        std::vector<double> pw;
        for (auto t : common) pw.push_back(pr.trials[t].policy[q].power);
        pr.stats[q].power_mean_common = mean_of(pw);
        pr.stats[q].common_trials = common.size();
      }
    }
  }
  result.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void write_csv(std::ostream& os, const ExperimentResult& result) {
  const std::string kind = to_string(result.spec.kind);
  os << "point,kind,alpha,users,rate,policy,metric,value\n";
  if (result.dynamic) {
    const auto& d = *result.dynamic;
    const auto& def = result.spec.defaults;
    for (std::size_t u = 0; u < d.users.size(); ++u) {
      const auto& s = d.users[u];
      auto row = [&](const char* metric, double v) {
        os << fmt::format("{},{},{},{},{},{},{},{}\n", u, kind, fmt_value(def.alpha), s.label,
                          fmt_value(s.target), "proposed", metric, fmt_value(v));
      };
      row("present_trials", static_cast<double>(s.present_trials));
      row("throughput_mean", s.throughput_mean);
      row("power_mean", s.power_mean);
      row("bound_violations", static_cast<double>(s.bound_violations));
    }
    return;
  }
  for (const auto& pr : result.points) {
    const auto& p = pr.point;
    auto prefix = fmt::format("{},{},{},{},{}", p.index, kind, fmt_value(p.alpha), p.users,
                              fmt_value(p.rate));
    for (std::size_t q = 0; q < kNumPolicies; ++q) {
      const auto& st = pr.stats[q];
      const auto name = to_string(static_cast<PolicyKind>(q));
      auto row = [&](const char* metric, double v) {
        os << prefix << ',' << name << ',' << metric << ',' << fmt_value(v) << '\n';
      };
      row("trials", static_cast<double>(st.trials));
      row("feasible", static_cast<double>(st.feasible));
      row("feasible_fraction", st.feasible_fraction());
      row("power_mean", st.power_mean);
      row("power_se", st.power_se);
      row("power_mean_common", st.power_mean_common);
      row("throughput_mean", st.throughput_mean);
      row("throughput_se", st.throughput_se);
    }
    for (auto base : {PolicyKind::stationary, PolicyKind::punish_forgive}) {
      auto s = energy_saving_ratio(pr, base);
      os << prefix << ",proposed,saving_vs_" << to_string(base) << ','
         << fmt_value(s ? *s : kNaN) << '\n';
    }
  }
}

nlohmann::json manifest_json(const ExperimentResult& result, const std::string& csv_path) {
  nlohmann::json m;
  m["tool"] = "specshare";
  m["version"] = "0.1.0";
  m["spec"] = experiment_to_json(result.spec);
  m["seed"] = result.spec.seed;
  m["threads"] = result.threads_used;
  m["runtime_seconds"] = result.runtime_seconds;
  m["gain_seed_key"] = "(seed, trial, i*64+j)";
  m["signal_seed_key"] = "(seed, point, trial, user)";
  if (!csv_path.empty()) m["csv"] = csv_path;
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& pr : result.points) {
    nlohmann::json f;
    for (std::size_t q = 0; q < kNumPolicies; ++q)
      f[to_string(static_cast<PolicyKind>(q))] = pr.stats[q].feasible;
    pts.push_back({{"point", pr.point.index},
                   {"alpha", pr.point.alpha},
                   {"users", pr.point.users},
                   {"rate", pr.point.rate},
                   {"feasible_trials", f}});
  }
  m["points"] = pts;
  if (result.dynamic) {
    const auto& d = *result.dynamic;
    m["dynamic"] = {{"trials", d.trials},
                    {"bound_violations", d.bound_violations},
                    {"normalized_violations", d.normalized_violations},
                    {"rejected_changes", d.rejected_changes},
                    {"max_telescoping_error", d.max_telescoping_error}};
  }
  return m;
}

}  // namespace specshare
