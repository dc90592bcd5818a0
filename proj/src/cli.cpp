#include "specshare/cli.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "specshare/baselines.hpp"
#include "specshare/dynamics.hpp"
#include "specshare/error.hpp"
#include "specshare/harness.hpp"
#include "specshare/io.hpp"
#include "specshare/its_solver.hpp"
#include "specshare/ldf_scheduler.hpp"

namespace specshare {

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 1;
  std::optional<std::size_t> horizon;
  double precision = 1e-9;
  std::string out;
  std::string format = "json";
  std::size_t threads = 1;
  std::string mode;  // empty: whatever the config says
  std::string monitoring = "perfect";
  std::string distance = "algorithm";
  std::string decisions;
};

// Writes to --out if given, else to the command's stdout.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) throw ConfigError("cannot write " + path);
    }
    os_ = file_ ? file_.get() : &fallback;
  }
  std::ostream& operator*() { return *os_; }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* os_;
};

ModelConfig model(const Common& c) {
  if (c.config.empty()) throw ConfigError("--config is required");
  auto m = load_model(c.config);
  if (!c.mode.empty()) m.mode = parse_design_mode(c.mode);
  return m;
}

ItsOptions its_options(const Common& c) {
  ItsOptions o;
  o.precision = c.precision;
  o.threads = c.threads;
  return o;
}

LdfConfig ldf_config(const Common& c) {
  LdfConfig cfg;
  if (c.monitoring == "perfect") cfg.mode = MonitoringMode::perfect;
  else if (c.monitoring == "signal") cfg.mode = MonitoringMode::signal_dependent;
  else throw ConfigError("--monitoring must be perfect or signal");
  if (c.distance == "algorithm") cfg.distance = DistanceForm::algorithm;
  else if (c.distance == "prose") cfg.distance = DistanceForm::prose;
  else throw ConfigError("--distance must be algorithm or prose");
  return cfg;
}

Design solve(const ModelConfig& m, const Common& c) {
  std::vector<double> targets(m.net.min_rates().begin(), m.net.min_rates().end());
  return design(m.net, m.sensing, m.criterion, m.mode, targets, its_options(c));
}

void print_json(std::ostream& os, const json& j) { os << j.dump(2) << '\n'; }

int cmd_its(const Common& c, std::ostream& out) {
  auto m = model(c);
  auto d = solve(m, c);
  Sink sink(c.out, out);
  auto report = its_report(d);
  report["feasible"] = true;
  report["mode"] = to_string(m.mode);
  report["discount"] = m.net.discount();
  report["discount_ok"] = d.constants.delta_min <= m.net.discount();
  print_json(*sink, report);
  return kExitOk;
}

int cmd_ldf(const Common& c, std::ostream& out) {
  auto m = model(c);
  auto d = solve(m, c);
  const double delta = m.net.discount();
  UserStreams streams(c.seed, 0, m.net.size());
  auto run = run_ldf(m.net, m.sensing, d.its, d.constants, delta, c.horizon.value_or(200), streams,
                     ldf_config(c));
  if (!c.decisions.empty()) {
    std::ofstream log(c.decisions);
    if (!log) throw ConfigError("cannot write " + c.decisions);
    write_decisions_jsonl(log, run.decisions);
  }
  Sink sink(c.out, out);
  if (c.format == "jsonl") {
    write_trace_jsonl(*sink, run.trace);
  } else if (c.format == "csv") {
    *sink << "t,user,power,rate,y\n";
    for (std::size_t t = 0; t < run.trace.horizon(); ++t)
      for (std::size_t i = 0; i < run.trace.num_users(); ++i)
        *sink << fmt::format("{},{},{:.17g},{:.17g},{}\n", t, i, run.trace.powers[t][i],
                             run.trace.rates[t][i], run.trace.signals[t]);
  } else {
    std::string schedule;
    for (const auto& dec : run.decisions)
      schedule += dec.i_star == kNobody ? std::string("0") : std::to_string(dec.i_star + 1);
    print_json(*sink, {{"its", its_report(d)},
                       {"metrics", metrics_json(discounted_metrics(run.trace, delta))},
                       {"bound", bound_report(run.bound)},
                       {"schedule", schedule}});
  }
  if (!run.bound.ok()) return kExitFault;  // signal mode reports instead of throwing
  return kExitOk;
}

int cmd_stationary(const Common& c, std::ostream& out) {
  auto m = model(c);
  auto s = stationary_solve(m.net);
  Sink sink(c.out, out);
  print_json(*sink, stationary_report(s));
  return s.feasible ? kExitOk : kExitInfeasible;
}

int cmd_compare(const Common& c, std::ostream& out, const CLI::App& app) {
  if (c.config.empty()) throw ConfigError("--config (experiment spec) is required");
  auto spec = parse_experiment(read_json_file(c.config));
  if (app.count("--seed")) spec.seed = c.seed;
  if (c.horizon) spec.horizon = *c.horizon;
  if (app.count("--threads")) spec.threads = c.threads;
  if (!c.mode.empty()) spec.mode = parse_design_mode(c.mode);
  spec.validate();
  auto result = run_experiment(spec);
  Sink sink(c.out, out);
  if (c.format == "json" && c.out.empty()) {
    print_json(*sink, manifest_json(result));
    return kExitOk;
  }
  write_csv(*sink, result);
  if (!c.out.empty()) {
    std::ofstream man(c.out + ".manifest.json");
    man << manifest_json(result, c.out).dump(2) << '\n';
  }
  return kExitOk;
}

int cmd_dynamic(const Common& c, std::ostream& out, const CLI::App& app) {
  ExperimentSpec spec;
  spec.kind = ExperimentKind::dynamic;
  spec.horizon = 400;
  if (!c.config.empty()) spec = parse_experiment(read_json_file(c.config));
  if (app.count("--seed") || c.config.empty()) spec.seed = c.seed;
  if (c.horizon) spec.horizon = *c.horizon;
  if (!c.mode.empty()) spec.mode = parse_design_mode(c.mode);

  ChannelDefaults cd;
  cd.noise = spec.defaults.noise;
  cd.alpha = spec.defaults.alpha;
  cd.threshold = spec.defaults.threshold;
  cd.error_variance = spec.defaults.error_variance;
  cd.discount = spec.defaults.discount;
  cd.power_max = spec.defaults.power_max;
  cd.grid_points = spec.defaults.grid_points;
  auto scenario = membership_scenario(spec.seed, spec.horizon, cd);
  DynamicOptions opts;
  opts.criterion = spec.criterion;
  opts.mode = spec.mode;
  opts.its = its_options(c);
  opts.ldf = ldf_config(c);
  auto session = run_scenario(scenario, spec.seed, opts);
  auto report = check_epochwise_bound(session);

  Sink sink(c.out, out);
  if (c.format == "jsonl") {
    write_trace_jsonl(*sink, session.trace());
  } else {
    json rejected = json::array();
    for (const auto& r : session.rejected())
      rejected.push_back({{"t", r.t}, {"event", r.events}, {"diagnostic", r.diagnostic}});
    print_json(*sink, {{"labels", scenario.labels},
                       {"epochs", epoch_log(session)},
                       {"rejected", rejected},
                       {"bound", epoch_bound_report(report)}});
  }
  return report.ok() ? kExitOk : kExitFault;
}

int cmd_oracle(const Common& c, std::ostream& out) {
  auto m = model(c);
  auto d = solve(m, c);
  auto r = optimal_schedule_oracle(m.net, m.net.discount(), d.its.r_star, c.horizon.value_or(10));
  Sink sink(c.out, out);
  auto j = oracle_report(r);
  j["r_star"] = d.its.r_star;
  print_json(*sink, j);
  return kExitOk;
}

// Invariant suite over small built-in instances.
int cmd_check(const Common& c, std::ostream& out) {
  int failures = 0;
  auto line = [&](bool ok, const std::string& what) {
    out << (ok ? "ok   " : "FAIL ") << what << '\n';
    if (!ok) ++failures;
  };
  auto guarded = [&](const std::string& name, const std::function<void()>& body) {
    try {
      body();
    } catch (const std::exception& e) {
      line(false, name + ": " + e.what());
    }
  };

  auto sym = [](double alpha, double delta) {
    NetworkParams p;
    p.num_primary = 2;
    p.gains = SquareMatrix::from_rows({{1.0, alpha}, {alpha, 1.0}});
    p.noise = {0.05, 0.05};
    p.power_sets.assign(2, PowerSet::uniform_grid(1e12, 512));
    p.min_rates = {1.0, 1.0};
    p.discount = delta;
    return NetworkInstance(p);
  };

  guarded("conservation", [&] {
    ExperimentSpec spec;
    spec.defaults.users = 3;
    spec.seed = c.seed;
    for (std::size_t trial = 0; trial < 20; ++trial) {
      auto net = draw_network(spec, {0, 0.5, 3, 1.0}, trial);
      auto its = its_solve(net, {}, obedient_constants(3), its_options(c));
      double sum = 0.0;
      for (std::size_t i = 0; i < 3; ++i) sum += net.min_rate(i) / its.r_star[i];
      if (!(std::abs(its.residual_before_normalization) <= c.precision) || sum != 1.0 ||
          its.residual != 0.0) {
        line(false, fmt::format("conservation: trial {} residual {:.3g}", trial,
                                its.residual_before_normalization));
        return;
      }
    }
    line(true, "conservation: sum R/r* = 1 on 20 random 3-user instances");
  });

  guarded("bound", [&] {
    auto net = sym(0.5, 0.9);
    auto sensing = SensingModel::uniform(net, ErrorDistribution::gaussian(0.1), 1.0);
    auto its = its_solve(net, {}, obedient_constants(2));
    UserStreams streams(c.seed, 0, 2);
    auto run = run_ldf(net, sensing, its, obedient_constants(2), 0.9, 2000, streams);
    line(run.bound.ok(), fmt::format("throughput bound: {} checks, worst ratio {:.3f}",
                                     run.bound.checks, run.bound.worst_ratio));
  });

  guarded("convexity", [&] {
    std::vector<double> xs;
    CounterRng rng(c.seed, 0xC0);
    for (int k = 0; k < 1000; ++k) xs.push_back(0.05 + 10.0 * rng.uniform());
    auto ws = convexity_check(CriterionKind::weighted_sum, xs);
    auto pf = convexity_check(CriterionKind::proportional_fairness, xs);
    line(ws.convex() && pf.convex(), "convexity: 1000 samples per criterion");
  });

  guarded("oracle", [&] {
    auto net = sym(0.5, 0.9);
    auto its = its_solve(net, {}, obedient_constants(2));
    auto r = optimal_schedule_oracle(net, 0.9, its.r_star, 10);
    const double reference = prefix_energy(net, 0.9, its.r_star, parse_schedule("1221122112"));
    const bool ok = std::abs(r.energy - r.lower_bound) <= 1e-12 * r.lower_bound &&
                    std::abs(reference - r.energy) <= 1e-12 * r.energy;
    line(ok, fmt::format("oracle: optimum {:.12g} = lower bound, 1221122112 attains it "
                         "({} optimal prefixes)", r.energy, r.optimal_count));
  });

  guarded("stationary", [&] {
    auto s = stationary_solve(sym(0.5, 0.9));
    auto s1 = stationary_solve(sym(1.0, 0.9));
    line(s.feasible && std::abs(s.power[0] - 0.1) < 1e-12 && !s1.feasible,
         "stationary: 0.1 W at alpha 0.5, infeasible at alpha 1");
  });

  guarded("dynamic", [&] {
    auto sc = membership_scenario(c.seed, 400);
    auto session = run_scenario(sc, c.seed);
    auto rep = check_epochwise_bound(session);
    line(rep.ok(), fmt::format("dynamic: {} epochs, {} user-epochs, telescoping {:.2g}",
                               session.epochs().size(), rep.entries.size(),
                               rep.max_telescoping_error));
  });

  return failures == 0 ? kExitOk : kExitFault;
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  init_logging();
  CLI::App app{"Energy-efficient TDMA spectrum sharing: solver, scheduler and simulator", "specshare"};
  app.require_subcommand(1);
  Common c;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", c.config, "model (or experiment spec) JSON");
    sub->add_option("--seed", c.seed, "random seed");
    sub->add_option("--horizon", c.horizon, "number of slots");
    sub->add_option("--precision", c.precision, "ITS stopping precision e")
        ->check(CLI::PositiveNumber);
    sub->add_option("--out", c.out, "output path (default stdout)");
    sub->add_option("--format", c.format, "output format")
        ->check(CLI::IsMember({"csv", "json", "jsonl"}));
    sub->add_option("--threads", c.threads, "worker threads (results do not depend on it)")
        ->check(CLI::PositiveNumber);
    sub->add_option("--mode", c.mode, "design mode")
        ->check(CLI::IsMember({"obedient", "deviation_proof", "deviation-proof"}));
  };
  auto add_ldf = [&](CLI::App* sub) {
    sub->add_option("--monitoring", c.monitoring, "perfect | signal");
    sub->add_option("--distance", c.distance, "algorithm | prose");
  };

  auto* its = app.add_subcommand("its", "solve the TDMA power levels");
  auto* ldf = app.add_subcommand("ldf", "run the scheduler");
  auto* stat = app.add_subcommand("stationary", "optimal stationary powers");
  auto* cmp = app.add_subcommand("compare", "run an experiment spec");
  auto* dyn = app.add_subcommand("dynamic", "users entering and leaving");
  auto* orc = app.add_subcommand("oracle", "exhaustive optimal prefix");
  auto* chk = app.add_subcommand("check", "invariant suite");
  for (auto* s : {its, ldf, stat, cmp, dyn, orc, chk}) add_common(s);
  add_ldf(ldf);
  add_ldf(dyn);
  ldf->add_option("--decisions", c.decisions, "per-slot decision log (JSONL)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*its) return cmd_its(c, out);
    if (*ldf) return cmd_ldf(c, out);
    if (*stat) return cmd_stationary(c, out);
    if (*cmp) return cmd_compare(c, out, *cmp);
    if (*dyn) return cmd_dynamic(c, out, *dyn);
    if (*orc) return cmd_oracle(c, out);
    if (*chk) return cmd_check(c, out);
  } catch (const InfeasibleError& e) {
    out << json{{"feasible", false}, {"diagnostic", e.what()}}.dump(2) << '\n';
    return kExitInfeasible;
  } catch (const InvariantFault& e) {
    err << "invariant fault: " << e.what() << '\n';
    return kExitFault;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitFault;
  }
  return kExitUsage;
}

}  // namespace specshare
