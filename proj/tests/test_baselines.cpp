#include <doctest.h>

#include <cmath>
#include <optional>
#include <vector>

#include "specshare/baselines.hpp"
#include "specshare/error.hpp"
#include "support/instances.hpp"

using namespace specshare;
using namespace specshare::testing;

TEST_CASE("stationary fixed point") {
  auto s = stationary_solve(symmetric(0.5));
  REQUIRE(s.feasible);
  CHECK(std::abs(s.power[0] - 0.1) < 1e-12);
  CHECK(std::abs(s.power[1] - 0.1) < 1e-12);
  CHECK(stationary_symmetric_power(1.0, 0.05, 0.5).value() == doctest::Approx(0.1));

  CHECK_FALSE(stationary_solve(symmetric(1.0)).feasible);
  CHECK_FALSE(stationary_solve(symmetric(1.5)).feasible);
  CHECK_FALSE(stationary_symmetric_power(1.0, 0.05, 1.0).has_value());
  auto near = stationary_solve(symmetric(0.99));
  REQUIRE(near.feasible);
  CHECK(near.power[0] == doctest::Approx(0.05 / 0.01).epsilon(1e-9));

  auto single = stationary_solve(make_network({{2.0}}, {1.5}, 0.9));
  REQUIRE(single.feasible);
  CHECK(single.power[0] == doctest::Approx((std::exp2(1.5) - 1) * 0.05 / 2.0).epsilon(1e-12));
}

TEST_CASE("round robin closed forms") {
  auto rr = round_robin_closed_form(1.0, 0.9, 0.05);
  CHECK(rr.first == doctest::Approx(0.05 / 1.9 * (std::exp2(1.9) - 1)).epsilon(1e-12));
  CHECK(rr.second == doctest::Approx(0.05 * 0.9 / 1.9 * (std::exp2(1 + 1 / 0.9) - 1)).epsilon(1e-12));
  CHECK(rr.first == doctest::Approx(0.071898209635453417).epsilon(1e-12));
  CHECK(rr.second == doctest::Approx(0.078637238421376376).epsilon(1e-12));

  auto limit = round_robin_closed_form(1.0, 1.0 - 1e-9, 0.05);
  CHECK(limit.first == doctest::Approx(0.05 * 3 / 2).epsilon(1e-6));
  CHECK(limit.second == doctest::Approx(0.05 * 3 / 2).epsilon(1e-6));

  const double a = round_robin_crossover(1.0, 0.9, 0.05);
  CHECK(a == doctest::Approx(0.33570463773922343).epsilon(1e-9));
  CHECK(a >= 0.33);
  CHECK(a <= 0.34);

  auto shares = round_robin_shares(3, 0.9);
  CHECK(shares[0] + shares[1] + shares[2] == doctest::Approx(1.0));
}

TEST_CASE("simulated round robin agrees with the closed form") {
  auto net = symmetric(0.5);
  UserStreams s(1, 0, 2);
  std::vector<std::size_t> order{0, 1};
  auto res = round_robin_metrics(net, order, 0.9, 300, default_sensing(net), s);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(std::abs(res.simulated.power[i] - res.closed_form[i]) <= res.simulated.tail_residual + 1e-12);
    CHECK(std::abs(res.simulated.throughput[i] - 1.0) <= res.simulated.tail_residual + 1e-12);
  }
}

TEST_CASE("punish-forgive") {
  auto net = symmetric(0.5, 1.0, 0.9);
  auto its = its_solve(net, {}, obedient_constants(2));
  auto stat = stationary_solve(net);
  auto eval_net = net.with_power_levels(its.p_star).with_power_levels(stat.power);

  SUBCASE("without distress it is the schedule") {
    // A threshold far above any interference: nobody ever signals.
    auto quiet = SensingModel::uniform(net, ErrorDistribution::uniform(0.1), 100.0);
    auto pf = punish_forgive_policy(net, its, obedient_constants(2), stat, 0.9);
    UserStreams s1(1, 0, 2), s2(1, 0, 2);
    auto a = evaluate(pf, eval_net, quiet, 40, s1);
    auto b = run_ldf(net, quiet, its, obedient_constants(2), 0.9, 40, s2);
    CHECK(a.powers == b.trace.powers);
    CHECK(pf.punished_slots().empty());
  }
  SUBCASE("a signal at t = 4 punishes slot 5") {
    auto pf = punish_forgive_policy(net, its, obedient_constants(2), stat, 0.9);
    UserStreams s(1, 0, 2);
    auto tr = evaluate(pf, eval_net, default_sensing(net), 12, s, [](std::size_t t) {
      return std::optional<int>(t == 4 ? 1 : 0);
    });
    CHECK(tr.powers[5] == stat.power);
    CHECK(is_tdma_profile(tr.powers[4]));
    CHECK(is_tdma_profile(tr.powers[6]));
    CHECK(pf.punished_slots() == std::vector<std::size_t>{5});
  }
  SUBCASE("no punishment profile at alpha 1") {
    auto hard = symmetric(1.0, 1.0, 0.9);
    auto its1 = its_solve(hard, {}, obedient_constants(2));
    CHECK_THROWS_AS(punish_forgive_policy(hard, its1, obedient_constants(2), stationary_solve(hard), 0.9),
                    InfeasibleError);
  }
}

TEST_CASE("optimal prefix oracle") {
  auto net = symmetric(0.5, 1.0, 0.9);
  auto its = its_solve(net, {}, obedient_constants(2));
  auto r = optimal_schedule_oracle(net, 0.9, its.r_star, 10);
  CHECK(r.prefix == "1111112222");
  CHECK(r.optimal_count == 914);
  CHECK(r.tail_realizable);
  CHECK(r.energy == doctest::Approx(r.lower_bound).epsilon(1e-12));
  CHECK(r.energy == doctest::Approx(0.15).epsilon(1e-12));
  // The alternating prefix is among the optima.
  const double reference = prefix_energy(net, 0.9, its.r_star, parse_schedule("1221122112"));
  CHECK(reference == doctest::Approx(r.energy).epsilon(1e-12));
  // A prefix that starves user 2 cannot be completed.
  CHECK(std::isinf(prefix_energy(net, 0.9, its.r_star, parse_schedule("1111111111"))));

  auto half = symmetric(0.5, 1.0, 0.5);
  auto its_half = its_solve(half, {}, obedient_constants(2));
  auto rh = optimal_schedule_oracle(half, 0.5, its_half.r_star, 10);
  CHECK(prefix_energy(half, 0.5, its_half.r_star, parse_schedule("1222222222")) ==
        doctest::Approx(rh.energy).epsilon(1e-12));

  auto single = make_network({{1}}, {1}, 0.9);
  auto its1 = its_solve(single, {}, obedient_constants(1));
  CHECK(optimal_schedule_oracle(single, 0.9, its1.r_star, 6).prefix == "111111");

  CHECK_THROWS(optimal_schedule_oracle(net, 0.9, its.r_star, kOracleMaxHorizon + 1));
}

TEST_CASE("schedule strings") {
  CHECK(schedule_string(std::vector<std::size_t>{0, 1, 1, 0}) == "1221");
  CHECK(parse_schedule("1221") == std::vector<std::size_t>{0, 1, 1, 0});
  CHECK(equal_up_to_relabeling("1221122112", "2112211221"));
  CHECK_FALSE(equal_up_to_relabeling("1221", "1212"));
  CHECK_FALSE(equal_up_to_relabeling("1221", "122"));
}
