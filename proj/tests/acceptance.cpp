// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// to run a subset; exits nonzero if any selected criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "specshare/baselines.hpp"
#include "specshare/cli.hpp"
#include "specshare/dynamics.hpp"
#include "specshare/error.hpp"
#include "specshare/harness.hpp"
#include "specshare/io.hpp"
#include "specshare/its_solver.hpp"
#include "specshare/ldf_scheduler.hpp"
#include "support/grid_oracle.hpp"
#include "support/instances.hpp"

using namespace specshare;
using namespace specshare::testing;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

struct Check {
  int id;
  std::string title;
  double limit_seconds;
  std::function<Verdict()> run;
};

// ---------------------------------------------------------------------------

Verdict stationary_closed_form() {
  Verdict v;
  auto s = stationary_solve(symmetric(0.5));
  v.require(s.feasible && std::abs(s.power[0] - 0.1) < 1e-12 && std::abs(s.power[1] - 0.1) < 1e-12,
            fmt::format("p = {:.17g}", s.feasible ? s.power[0] : -1.0));
  for (double a : {0.0, 0.3, 0.9, 0.999, 1.0 - 1e-6})
    v.require(stationary_solve(symmetric(a)).feasible, fmt::format("alpha {} should be feasible", a));
  for (double a : {1.0, 1.0 + 1e-9, 1.2, 2.0, 10.0})
    v.require(!stationary_solve(symmetric(a)).feasible, fmt::format("alpha {} should be infeasible", a));
  v.note(fmt::format("p^stat = {:.17g}", s.power[0]));
  return v;
}

Verdict round_robin() {
  Verdict v;
  const double d = 0.9, r = 1.0, s2 = 0.05;
  auto rr = round_robin_closed_form(r, d, s2);
  const double p1 = s2 / (1 + d) * (std::exp2(r * (1 + d)) - 1);
  const double p2 = s2 * d / (1 + d) * (std::exp2(r * (1 + 1 / d)) - 1);
  v.require(std::abs(rr.first - p1) <= 1e-10 && std::abs(rr.second - p2) <= 1e-10, "closed forms");
  auto net = symmetric(0.5, r, d);
  UserStreams streams(1, 0, 2);
  std::vector<std::size_t> order{0, 1};
  auto sim = round_robin_metrics(net, order, d, 400, default_sensing(net), streams);
  const double tail = std::pow(d, 400) * std::max(rr.second, 4.0);
  for (std::size_t i = 0; i < 2; ++i) {
    v.require(std::abs(sim.simulated.power[i] - sim.closed_form[i]) <= tail + 1e-12, "simulated power");
    v.require(std::abs(sim.simulated.throughput[i] - r) <= tail + 1e-12, "simulated throughput");
  }
  const double a = round_robin_crossover(r, d, s2);
  v.require(a >= 0.33 && a <= 0.34, fmt::format("crossover {:.6f}", a));
  v.note(fmt::format("P1 = {:.5f}, P2 = {:.5f}, alpha* = {:.5f}", rr.first, rr.second, a));
  return v;
}

Verdict optimal_prefix() {
  Verdict v;
  auto net = symmetric(0.5, 1.0, 0.9);
  auto its = its_solve(net, {}, obedient_constants(2));
  auto r = optimal_schedule_oracle(net, 0.9, its.r_star, 10);
  const double reference = prefix_energy(net, 0.9, its.r_star, parse_schedule("1221122112"));
  v.require(equal_up_to_relabeling(r.prefix, "1221122112"),
            fmt::format("oracle returns {} (lexicographically least of {} optimal prefixes)", r.prefix,
                        r.optimal_count));
  v.note(fmt::format("optimum {:.12g}, 1221122112 costs {:.12g} (gap {:.2g})", r.energy, reference,
                     reference - r.energy));
  return v;
}

Verdict its_correctness() {
  Verdict v;
  const double e = 1e-9;
  std::size_t worst_excess = 0;
  double worst_obj = 0.0;
  for (const auto& inst : its_instances()) {
    ItsOptions opt;
    opt.precision = e;
    auto its = its_solve(inst.net, inst.criterion, obedient_constants(inst.net.size()), opt);
    v.require(its.residual_before_normalization <= e, inst.name + ": post-loop residual");
    v.require(its.residual == 0.0, inst.name + ": normalized residual");
    auto grid = grid_oracle(inst.net, inst.criterion);
    std::vector<double> shares;
    for (std::size_t i = 0; i < inst.net.size(); ++i) shares.push_back(inst.net.min_rate(i) / its.r_star[i]);
    const double obj = oracle_objective(inst.net, inst.criterion, shares);
    const double rel = (obj - grid.objective) / std::abs(grid.objective);
    worst_obj = std::max(worst_obj, rel);
    v.require(rel <= 1e-3, fmt::format("{}: objective {:.3g} above the grid oracle", inst.name, rel));
    const auto bound = its.doubling_steps +
        static_cast<std::size_t>(std::ceil(std::log2(its.lambda_upper_after_doubling / e)));
    if (its.iterations > bound) {
      worst_excess = std::max(worst_excess, its.iterations - bound);
      v.require(false, fmt::format("{}: {} iterations > bound {}", inst.name, its.iterations, bound));
    }
  }
  v.note(fmt::format("worst objective gap {:.2g}, worst iteration excess {}", worst_obj, worst_excess));
  return v;
}

Verdict convexity() {
  Verdict v;
  CounterRng rng(2024, 5);
  std::vector<double> xs;
  // x = 1/r for rates between 0.05 and 20 bits/s/Hz.
  for (int k = 0; k < 1000; ++k) xs.push_back(1.0 / (0.05 + 19.95 * rng.uniform()));
  for (auto kind : {CriterionKind::weighted_sum, CriterionKind::proportional_fairness}) {
    auto rep = convexity_check(kind, xs);
    v.require(rep.samples == 1000 && rep.convex(),
              fmt::format("{}: {} numeric / {} analytic non-positive", to_string(kind),
                          rep.numeric_nonpositive, rep.analytic_nonpositive));
  }
  std::size_t reduced_bad = 0;
  for (double x : xs) reduced_bad += !(reduced_second_derivative(x) > 0.0);
  v.require(reduced_bad == 0, "reduced closed form not positive");
  return v;
}

Verdict obedient_bound() {
  Verdict v;
  for (std::size_t n = 2; n <= 10; ++n) {
    auto net = symmetric(0.1, 0.5, 0.9, n);
    // Deviation terms off: b = -inf, mu = 0.
    auto off = obedient_constants(n);
    const double target = 1.0 - 1.0 / static_cast<double>(n);
    v.require(std::abs(off.delta_min - target) <= 1e-12, fmt::format("n = {}: delta_min", n));

    const double d = off.delta_min;
    auto at = net.with_discount(d);
    auto its = its_solve(at, {}, off);
    UserStreams s(n, 0, n);
    try {
      auto run = run_ldf(at, default_sensing(at), its, off, d, 10000, s);
      bool ok = true;
      for (const auto& dec : run.decisions) {
        double sum = 0.0;
        for (double r : dec.r_prime) {
          sum += r;
          ok = ok && r >= 0.0 && r <= 1.0;
        }
        ok = ok && std::abs(sum - 1.0) <= 1e-12;
      }
      v.require(ok, fmt::format("n = {}: state left the simplex at delta_min", n));
    } catch (const InvariantFault& e) {
      v.require(false, fmt::format("n = {}: fault at delta_min: {}", n, e.what()));
    }

    auto below = net.with_discount(d - 0.05);
    UserStreams s2(n, 1, n);
    bool faulted = false;
    try {
      run_ldf(below, default_sensing(below), its_solve(below, {}, off), off, d - 0.05, 10000, s2);
    } catch (const InvariantFault&) {
      faulted = true;
    }
    v.require(faulted, fmt::format("n = {}: no fault at delta_min - 0.05", n));
  }
  return v;
}

Verdict throughput_bound() {
  Verdict v;
  CounterRng rng(77, 1);
  std::size_t violations = 0, checks = 0;
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const std::size_t n = 2 + static_cast<std::size_t>(rng.uniform() * 7.0);
    const double d = 0.9 + 0.09 * rng.uniform();
    auto net = random_instance(1000 + static_cast<std::uint64_t>(k), n, 0.3, 1.0, d);
    std::vector<double> rates;
    for (std::size_t i = 0; i < n; ++i) rates.push_back(0.2 + 0.8 * rng.uniform());
    net = net.with_min_rates(rates);
    auto its = its_solve(net, {}, obedient_constants(n));
    UserStreams s(static_cast<std::uint64_t>(k), 0, n);
    try {
      auto run = run_ldf(net, default_sensing(net), its, obedient_constants(n), d, 201, s);
      checks += run.bound.checks;
      violations += run.bound.violations;
      worst = std::max(worst, run.bound.worst_ratio);
    } catch (const InvariantFault& e) {
      ++violations;
      v.note(fmt::format("instance {}: {}", k, e.what()));
    }
  }
  v.require(violations == 0, fmt::format("{} violations", violations));
  v.note(fmt::format("{} checks, worst gap/bound {:.3f}", checks, worst));
  return v;
}

Verdict perturbation() {
  Verdict v;
  std::size_t tested = 0, bad = 0;
  for (int k = 0; k < 20; ++k) {
    const std::size_t n = 2 + static_cast<std::size_t>(k % 3);
    auto net = random_instance(500 + static_cast<std::uint64_t>(k), n, 0.3, 0.8, 0.95);
    auto its = its_solve(net, {}, obedient_constants(n));
    const double pmax = 8.0 * *std::max_element(its.p_star.begin(), its.p_star.end());
    NetworkParams p = net.params();
    p.power_sets.assign(n, PowerSet::uniform_grid(pmax, 512));
    net = NetworkInstance(p);
    const double step = net.power_set(0).grid_step();
    UserStreams s(1, 0, n);
    auto run = run_ldf(net, default_sensing(net), its, obedient_constants(n), 0.95, 60, s);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::size_t> slots;
      for (const auto& d : run.decisions)
        if (d.i_star == i) slots.push_back(d.t);
      for (std::size_t a = 0; a + 1 < slots.size() && a < 4; ++a)
        for (auto [t1, t2] : {std::pair{slots[a], slots[a + 1]}, std::pair{slots[a + 1], slots[a]}})
          for (double mult : {1.0, 2.0, 5.0, 10.0}) {
            const double eps1 = mult * step;
            auto pert = equal_power_perturbation(net, i, its.p_star[i], t1, its.p_star[i], t2, 0.95, eps1);
            if (pert.eps2 > its.p_star[i]) continue;
            ++tested;
            if (!(pert.energy_increase > 0.0)) ++bad;
          }
    }
  }
  v.require(tested > 0 && bad == 0, fmt::format("{} of {} perturbations did not raise energy", bad, tested));
  v.note(fmt::format("{} perturbations", tested));
  return v;
}

// Re-evaluates a two-slot deviation straight from the rate model.
std::pair<double, double> replay(const NetworkInstance& net, std::size_t i, double p_i, std::size_t t_i,
                                 std::size_t j, double borrowed, double own, std::size_t t_j, double d) {
  PowerProfile slot_i(2, 0.0), slot_j(2, 0.0);
  slot_i[i] = p_i;
  slot_i[j] = borrowed;
  slot_j[j] = own;
  const double wi = (1 - d) * std::pow(d, static_cast<double>(t_i));
  const double wj = (1 - d) * std::pow(d, static_cast<double>(t_j));
  const double thr = wi * throughput(net, slot_i, j) + wj * throughput(net, slot_j, j);
  const double energy = wi * borrowed + wj * own;
  return {thr, energy};
}

Verdict deviation() {
  Verdict v;
  const double d = 0.9;
  // p_j g_jj = 0.3 > p_i g_ij = 0.015: j can profit from i's slot.
  auto weak = make_network({{1.0, 0.1}, {0.1, 2.0}}, {1, 1}, d);
  const double p_i = 0.15, p_j = 0.15;
  v.require(deviation_profitable(weak, 0, p_i, 1, p_j), "weak case should be flagged");
  auto dev = best_two_slot_deviation(weak, 0, p_i, 0, 1, p_j, 1, d);
  auto [thr0, e0] = replay(weak, 0, p_i, 0, 1, 0.0, p_j, 1, d);
  auto [thr1, e1] = replay(weak, 0, p_i, 0, 1, dev.borrowed_power, dev.own_power, 1, d);
  v.require(std::abs(thr1 - thr0) <= 1e-12 * thr0, fmt::format("throughput changed by {:.3g}", thr1 - thr0));
  v.require(e1 < e0, fmt::format("deviation energy {:.6g} not below {:.6g}", e1, e0));

  // p_j g_jj = 0.15 < p_i g_ij = 0.3: no gain.
  auto strong = make_network({{1.0, 2.0}, {2.0, 1.0}}, {1, 1}, d);
  v.require(!deviation_profitable(strong, 0, p_i, 1, p_j), "strong case should not be flagged");
  auto none = best_two_slot_deviation(strong, 0, p_i, 0, 1, p_j, 1, d);
  auto [thr2, e2] = replay(strong, 0, p_i, 0, 1, none.borrowed_power, none.own_power, 1, d);
  v.require(std::abs(thr2 - thr0) <= 1e-12 * thr0 || none.borrowed_power == 0.0, "throughput");
  v.require(!(e2 < e0 - 1e-15), fmt::format("reversed case reduced energy to {:.6g}", e2));
  // Brute force over borrowed powers confirms there is no cheaper split.
  bool cheaper = false;
  for (int k = 1; k <= 2000; ++k) {
    const double q = 0.3 * k / 2000.0;
    const double wi = 1 - d, wj = (1 - d) * d;
    PowerProfile si{p_i, q};
    const double need = (wi * 2.0 + wj * 2.0 - wi * throughput(strong, si, 1)) / wj;  // rate left for own slot
    const double own = std::max(0.0, (std::exp2(need) - 1) * 0.05);
    if (wi * q + wj * own < e0 - 1e-15) cheaper = true;
  }
  v.require(!cheaper, "brute force found a cheaper deviation");
  v.note(fmt::format("weak: {:.6g} -> {:.6g}", e0, e1));
  return v;
}

Verdict dynamic_membership() {
  Verdict v;
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    auto sc = membership_scenario(seed, 400);
    auto session = run_scenario(sc, seed);
    auto rep = check_epochwise_bound(session);
    v.require(session.epochs().size() == 5, fmt::format("seed {}: {} epochs", seed, session.epochs().size()));
    v.require(session.rejected().empty(), fmt::format("seed {}: rejected change", seed));
    v.require(rep.violations == 0, fmt::format("seed {}: {} per-epoch violations", seed, rep.violations));
    v.require(rep.normalized_violations == 0,
              fmt::format("seed {}: {} return-to-target violations", seed, rep.normalized_violations));
    v.require(rep.max_telescoping_error <= 1e-9,
              fmt::format("seed {}: telescoping {:.3g}", seed, rep.max_telescoping_error));
    // Over the full run every user that stayed sits within r_max d^{t+1} of its requirement.
    const double d = session.discount();
    double rmax = 0.0;
    for (const auto& e : session.epochs())
      for (double r : e.rates) rmax = std::max(rmax, r);
    for (std::size_t u = 0; u < session.universe().size(); ++u) {
      const std::size_t e = session.entered()[u];
      if (e == kNobody || session.exited()[u] != kNobody) continue;
      double acc = 0.0, w = 1 - d;
      for (std::size_t t = e; t < session.now(); ++t) {
        acc += w * session.trace().rates[t][u];
        w *= d;
        const double bound = rmax * std::pow(d, static_cast<double>(t - e + 1));
        if (std::abs(acc - session.universe().min_rate(u)) > bound + 1e-12) {
          v.require(false, fmt::format("seed {}: user {} off target at {}", seed, u, t));
          break;
        }
      }
    }
  }
  return v;
}

ExperimentSpec sweep_spec(ExperimentKind kind) {
  ExperimentSpec s;
  s.kind = kind;
  s.trials = 200;
  s.seed = 2024;
  s.horizon = 500;
  s.alphas = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  for (std::size_t n = 2; n <= 18; ++n) s.users.push_back(n);
  return s;
}

Verdict sweeps() {
  Verdict v;
  auto alpha = run_experiment(sweep_spec(ExperimentKind::alpha_sweep));
  auto users = run_experiment(sweep_spec(ExperimentKind::user_sweep));

  std::vector<double> prop, stat_common, stat_raw;
  for (const auto& p : alpha.points) {
    prop.push_back(p.stats[0].power_mean);
    stat_common.push_back(p.stats[1].power_mean_common);
    stat_raw.push_back(p.stats[1].power_mean);
  }
  const double pmin = *std::min_element(prop.begin(), prop.end());
  const double pmax = *std::max_element(prop.begin(), prop.end());
  const double pmean = std::accumulate(prop.begin(), prop.end(), 0.0) / static_cast<double>(prop.size());
  v.require((pmax - pmin) < 0.05 * pmean, fmt::format("proposed spread {:.3g}", (pmax - pmin) / pmean));
  bool increasing = true, raw_increasing = true;
  for (std::size_t k = 1; k < stat_common.size(); ++k) {
    increasing = increasing && stat_common[k] > stat_common[k - 1];
    raw_increasing = raw_increasing && stat_raw[k] > stat_raw[k - 1];
  }
  v.require(increasing, "stationary paired mean not increasing in alpha");
  v.note(fmt::format("stationary paired mean {:.4f} -> {:.4f} over {} common draws; per-point mean {}",
                     stat_common.front(), stat_common.back(), alpha.points[0].stats[1].common_trials,
                     raw_increasing ? "also increasing" : "not monotone (draw dropout)"));

  double worst_stat = 0.0;
  bool proposed_all = true;
  for (const auto& p : users.points) {
    if (p.point.users > 7) worst_stat = std::max(worst_stat, p.stats[1].feasible_fraction());
    proposed_all = proposed_all && p.stats[0].feasible == p.stats[0].trials;
  }
  v.require(worst_stat < 0.05, fmt::format("stationary feasible {:.3f} beyond 7 users", worst_stat));
  v.require(proposed_all, "proposed infeasible somewhere up to 18 users");

  double best = -1e300;
  std::string where;
  for (const auto* res : {&alpha, &users})
    for (const auto& p : res->points) {
      const bool high = res == &alpha ? p.point.alpha >= 0.7 : p.point.users >= 5;
      if (!high) continue;
      for (auto base : {PolicyKind::stationary, PolicyKind::punish_forgive}) {
        auto s = energy_saving_ratio(p, base);
        if (s && *s > best) {
          best = *s;
          where = fmt::format("alpha {} N {} vs {}", p.point.alpha, p.point.users, to_string(base));
        }
      }
    }
  v.require(best >= 80.0, fmt::format("best saving {:.1f}%", best));
  v.note(fmt::format("best saving {:.1f}% at {}", best, where));
  return v;
}

std::string csv(const ExperimentSpec& s) {
  std::ostringstream os;
  write_csv(os, run_experiment(s));
  return os.str();
}

Verdict determinism() {
  Verdict v;
  auto s = sweep_spec(ExperimentKind::alpha_sweep);
  s.trials = 40;
  const auto one = csv(s);
  for (std::size_t threads : {2, 4, 7}) {
    s.threads = threads;
    v.require(csv(s) == one, fmt::format("alpha sweep differs with {} threads", threads));
  }
  auto u = sweep_spec(ExperimentKind::user_sweep);
  u.users = {2, 4, 8};
  u.trials = 20;
  const auto uone = csv(u);
  u.threads = 3;
  v.require(csv(u) == uone, "user sweep differs with 3 threads");
  ExperimentSpec dyn;
  dyn.kind = ExperimentKind::dynamic;
  dyn.trials = 3;
  dyn.horizon = 300;
  const auto done = csv(dyn);
  dyn.threads = 3;
  v.require(csv(dyn) == done, "dynamic experiment differs with 3 threads");
  // Through the command line as well: the rate sweep written to disk.
  auto run_cli = [](const std::string& threads) {
    const auto file = std::filesystem::temp_directory_path() / ("specshare_rate_t" + threads + ".csv");
    const std::string path = file.string();
    const std::string config = std::string(SPECSHARE_CONFIG_DIR) + "/sweep_rate.json";
    const char* argv[] = {"specshare", "compare", "--config", config.c_str(), "--threads", threads.c_str(),
                          "--out", path.c_str()};
    std::ostringstream out, err;
    const int code = dispatch(8, argv, out, err);
    std::ifstream in(path, std::ios::binary);
    std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::filesystem::remove(file);
    std::filesystem::remove(path + ".manifest.json");
    return std::pair{code, body};
  };
  const auto [c1, f1] = run_cli("1");
  const auto [c3, f3] = run_cli("3");
  v.require(c1 == 0 && c3 == 0 && !f1.empty(), "compare did not run");
  v.require(f1 == f3, "CLI rate sweep differs with 3 threads");
  v.note(fmt::format("{} bytes compared", one.size() + uone.size() + done.size() + f1.size()));
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  init_logging();
  std::vector<Check> all{
      {1, "stationary closed form", 1, stationary_closed_form},
      {2, "round-robin closed forms", 5, round_robin},
      {3, "optimal-prefix oracle", 30, optimal_prefix},
      {4, "ITS correctness", 60, its_correctness},
      {5, "convexity", 1, convexity},
      {6, "obedient discount bound", 10, obedient_bound},
      {7, "throughput bound", 60, throughput_bound},
      {8, "power perturbation", 30, perturbation},
      {9, "deviation certification", 5, deviation},
      {10, "dynamic membership", 120, dynamic_membership},
      {11, "sweep trends", 900, sweeps},
      {12, "determinism", 120, determinism},
  };
  std::set<int> only;
  for (int k = 1; k < argc; ++k) only.insert(std::atoi(argv[k]));

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    v.require(secs <= c.limit_seconds, fmt::format("took {:.1f}s > {:.0f}s", secs, c.limit_seconds));
    std::printf("%s %2d %s [%.2fs] %s\n", v.pass ? "PASS" : "FAIL", c.id, c.title.c_str(), secs,
                v.detail.c_str());
    std::fflush(stdout);
    failed += !v.pass;
  }
  return failed == 0 ? 0 : 1;
}
