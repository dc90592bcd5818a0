#include <doctest.h>

#include <sstream>

#include "specshare/error.hpp"
#include "specshare/harness.hpp"
#include "specshare/io.hpp"
#include "support/instances.hpp"

using namespace specshare;

namespace {

ExperimentSpec small_sweep() {
  ExperimentSpec s;
  s.kind = ExperimentKind::alpha_sweep;
  s.alphas = {0.2, 0.6};
  s.trials = 6;
  s.horizon = 150;
  s.seed = 17;
  return s;
}

std::string csv_of(const ExperimentResult& r) {
  std::ostringstream os;
  write_csv(os, r);
  return os.str();
}

}  // namespace

TEST_CASE("energy saving ratio") {
  PointResult p;
  TrialResult t;
  t.policy[0] = {true, 0.1, 1.0};
  t.policy[1] = {true, 1.0, 1.0};
  t.policy[2] = {false, 0.0, 0.0};
  p.trials = {t};
  CHECK(energy_saving_ratio(p, PolicyKind::stationary).value() == doctest::Approx(90.0));
  CHECK_FALSE(energy_saving_ratio(p, PolicyKind::punish_forgive).has_value());
  t.policy[1].power = 0.1;
  p.trials = {t};
  CHECK(energy_saving_ratio(p, PolicyKind::stationary).value() == doctest::Approx(0.0));
}

TEST_CASE("spec parsing and validation") {
  auto doc = nlohmann::json::parse(R"({"kind": "user-sweep", "grid": {"users": [2, 3]},
                                       "trials": 4, "seed": 9, "defaults": {"alpha": 0.3}})");
  auto s = parse_experiment(doc);
  CHECK(s.kind == ExperimentKind::user_sweep);
  CHECK(s.users == std::vector<std::size_t>{2, 3});
  CHECK(s.defaults.alpha == 0.3);
  CHECK(s.defaults.discount == 0.95);
  CHECK(parse_experiment(experiment_to_json(s)).users == s.users);
  CHECK_THROWS_AS(parse_experiment(nlohmann::json::parse(R"({"kind": "alpha-sweep"})")), ConfigError);
  CHECK_THROWS_AS(parse_experiment(nlohmann::json::parse(R"({"kind": "single", "trials": 0})")), ConfigError);
  CHECK_THROWS_AS(parse_experiment(nlohmann::json::parse(R"({"kind": "nope"})")), ConfigError);
}

TEST_CASE("channel draws are shared across grid points") {
  ExperimentSpec s = small_sweep();
  auto a = draw_network(s, {0, 0.2, 3, 1.0}, 4);
  auto b = draw_network(s, {1, 0.6, 3, 1.0}, 4);
  CHECK(a.gain(0, 0) == b.gain(0, 0));
  CHECK(b.gain(0, 1) == doctest::Approx(3.0 * a.gain(0, 1)));
  auto c = draw_network(s, {0, 0.2, 2, 1.0}, 4);
  CHECK(c.gain(1, 0) == a.gain(1, 0));
}

TEST_CASE("sweep results are independent of the thread count") {
  auto s1 = small_sweep();
  auto s4 = small_sweep();
  s4.threads = 4;
  const auto a = csv_of(run_experiment(s1));
  const auto b = csv_of(run_experiment(s4));
  CHECK(a == b);
  CHECK(a.find("proposed,power_mean") != std::string::npos);
}

TEST_CASE("proposed power does not depend on the cross gains") {
  auto r = run_experiment(small_sweep());
  REQUIRE(r.points.size() == 2);
  CHECK(r.points[0].stats[0].feasible == 6);
  CHECK(r.points[0].stats[0].power_mean == r.points[1].stats[0].power_mean);
  CHECK(r.points[0].stats[1].power_mean_common < r.points[1].stats[1].power_mean_common);
}

TEST_CASE("dynamic experiment") {
  ExperimentSpec s;
  s.kind = ExperimentKind::dynamic;
  s.trials = 2;
  s.horizon = 300;
  auto r = run_experiment(s);
  REQUIRE(r.dynamic);
  CHECK(r.dynamic->bound_violations == 0);
  CHECK(r.dynamic->users.size() == 19);
  CHECK(r.dynamic->users[0].present_trials == 2);
  auto m = manifest_json(r);
  CHECK(m["dynamic"]["trials"] == 2);
}

TEST_CASE("model documents round-trip") {
  auto doc = nlohmann::json::parse(R"({"gains": [[1, 0.4], [0.3, 0.9]], "noise": 0.05,
      "min_rates": [1, 2], "discount": 0.95, "power_grid": {"max": 10, "points": 11},
      "sensing": {"dist": "uniform", "param": 0.1, "theta": 0.5},
      "criterion": {"kind": "pf"}, "mode": "deviation_proof"})");
  auto m = parse_model(doc);
  CHECK(m.net.size() == 2);
  CHECK(m.net.gain(1, 0) == 0.3);
  CHECK(m.net.power_set(0).size() == 11);
  CHECK(m.criterion.kind == CriterionKind::proportional_fairness);
  CHECK(m.mode == DesignMode::deviation_proof);
  auto again = parse_model(model_to_json(m));
  CHECK(again.net.gain(0, 1) == 0.4);
  CHECK(again.net.power_set(1).size() == 11);
  CHECK(again.sensing.user(0).threshold == 0.5);
  CHECK_THROWS_AS(parse_model(nlohmann::json::parse(R"({"noise": 1})")), ConfigError);
  CHECK_THROWS_AS(parse_model(nlohmann::json::parse(R"({"gains": [[1, 2, 3]], "noise": 0.05,
      "min_rates": 1, "discount": 0.9})")), ConfigError);
}
