#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "specshare/net_model.hpp"
#include "specshare/rng.hpp"
#include "support/instances.hpp"

using namespace specshare;
using specshare::testing::make_network;

TEST_CASE("throughput follows the SINR rate") {
  auto net = make_network({{1, 1}, {1, 1}}, {1, 1}, 0.9);
  std::vector<double> p{0.0, 3.0};
  CHECK(throughput(net, p, 0) == 0.0);
  p = {0.15, 0.0};
  CHECK(throughput(net, p, 0) == doctest::Approx(2.0).epsilon(1e-14));
  p = {1.0, 1.0};
  CHECK(throughput(net, p, 0) == doctest::Approx(std::log2(1.0 + 1.0 / 1.05)).epsilon(1e-14));
  CHECK(throughput(net, p, 0) == doctest::Approx(0.96523).epsilon(1e-5));
}

TEST_CASE("interference temperature") {
  auto net = make_network({{1, 0.2, 0.2}, {0.5, 1, 0.2}, {0.2, 0.2, 1}}, {1, 1, 1}, 0.9);
  std::vector<double> silent{0.3, 0.0, 0.0};
  CHECK(interference_temperature(net, silent, 0) == doctest::Approx(0.05));
  std::vector<double> one{0.3, 1.0, 0.0};
  CHECK(interference_temperature(net, one, 0) == doctest::Approx(0.55));
  std::vector<double> two{1.0, 1.0, 1.0};
  CHECK(interference_temperature(net, two, 2) == doctest::Approx(0.45));
}

TEST_CASE("quantizer levels are conditional means") {
  SUBCASE("noiseless sensing") {
    auto q = quantizer_levels(ErrorDistribution::gaussian(0.0), 1.0, 0.05);
    CHECK(q.low == doctest::Approx(0.05));
    CHECK(q.high == doctest::Approx(0.05));
  }
  SUBCASE("gaussian, quadrature against truncated-normal moments") {
    auto q = quantizer_levels(ErrorDistribution::gaussian(0.1), 1.0, 0.05);
    CHECK(q.low == doctest::Approx(0.048614090439847726).epsilon(1e-9));
    CHECK(q.high == doctest::Approx(1.0894308359884746).epsilon(1e-9));
    // mean preserving: P(low) low + P(high) high = sigma^2
    const double ph = ErrorDistribution::gaussian(0.1).exceed_prob(0.95);
    CHECK((1 - ph) * q.low + ph * q.high == doctest::Approx(0.05).epsilon(1e-9));
  }
  SUBCASE("uniform") {
    auto q = quantizer_levels(ErrorDistribution::uniform(0.1), 0.05, 0.05);
    CHECK(q.low == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(q.high == doctest::Approx(0.1).epsilon(1e-12));
  }
}

TEST_CASE("distress probabilities") {
  UserSensing s;
  s.error = ErrorDistribution::gaussian(0.1);
  s.threshold = 1.0;
  CHECK(distress_prob_at(s, 0.05) == doctest::Approx(1.3315596295692769e-3).epsilon(1e-9));
  s.threshold = 0.01;
  CHECK(distress_prob_at(s, 0.05) > 0.5);
  UserSensing below;
  below.error = ErrorDistribution::gaussian(0.0);
  below.threshold = 0.01;
  CHECK(distress_prob_at(below, 0.05) == 1.0);
  UserSensing u;
  u.error = ErrorDistribution::uniform(0.1);
  u.threshold = 1.0;
  CHECK(distress_prob_at(u, 0.05) == 0.0);
}

TEST_CASE("system distress signal") {
  auto net = make_network({{1, 0}, {0, 1}}, {1, 1}, 0.9);
  // Thresholds put each transmitter's own probability at one half.
  SensingModel sensing({ErrorDistribution::gaussian(0.1), ErrorDistribution::gaussian(0.1)},
                       {0.05, 0.05}, net.noise());
  std::vector<double> both{1.0, 1.0};
  CHECK(system_distress_prob(net, sensing, both) == doctest::Approx(0.75));

  std::vector<double> silent{0.0, 0.0};
  CHECK(system_distress_prob(net, sensing, silent) == 0.0);
  UserStreams streams(5, 0, 2);
  for (int k = 0; k < 100; ++k) CHECK(system_distress(net, sensing, silent, streams) == 0);

  // Monte-Carlo against the product formula.
  int hits = 0;
  const int draws = 40000;
  for (int k = 0; k < draws; ++k) hits += system_distress(net, sensing, both, streams);
  CHECK(static_cast<double>(hits) / draws == doctest::Approx(0.75).epsilon(0.02));

  std::vector<double> one{1.0, 0.0};
  CHECK_THROWS_AS((void)distress_prob(net, sensing, one, 1), std::invalid_argument);
}

TEST_CASE("power sets") {
  auto grid = PowerSet::uniform_grid(1.0, 5);
  CHECK(grid.size() == 5);
  CHECK(grid.levels()[0] == 0.0);
  CHECK(grid.max() == 1.0);
  CHECK(grid.contains(0.25));
  CHECK_FALSE(grid.contains(0.3));
  auto more = grid.with_level(0.3);
  CHECK(more.contains(0.3));
  CHECK(more.size() == 6);
}

TEST_CASE("network validation and subsets") {
  CHECK_THROWS(make_network({{1, 0.1}, {0.1, 1}}, {1, 1}, 1.5));
  CHECK_THROWS(make_network({{-1, 0.1}, {0.1, 1}}, {1, 1}, 0.9));
  auto net = make_network({{1, 0.1, 0.2}, {0.3, 2, 0.4}, {0.5, 0.6, 3}}, {1, 2, 3}, 0.9);
  std::vector<std::size_t> keep{0, 2};
  auto sub = net.subset(keep, 2);
  CHECK(sub.size() == 2);
  CHECK(sub.gain(0, 1) == 0.2);
  CHECK(sub.gain(1, 0) == 0.5);
  CHECK(sub.gain(1, 1) == 3.0);
  CHECK(sub.min_rate(1) == 3.0);
}

TEST_CASE("tdma detection") {
  CHECK(is_tdma_profile(std::vector<double>{0, 0, 0}));
  CHECK(is_tdma_profile(std::vector<double>{0, 1, 0}));
  CHECK_FALSE(is_tdma_profile(std::vector<double>{1, 1, 0}));
}

TEST_CASE("counter rng is reproducible and splittable") {
  CounterRng a(1, 2), b(1, 2), c(1, 3);
  for (int k = 0; k < 10; ++k) CHECK(a() == b());
  CHECK(a.at(0) != c.at(0));
  CHECK(a.uniform_at(7) == b.uniform_at(7));
  UserStreams s1(9, 4, 3), s2(9, 4, 3);
  CHECK(s1.user(2)() == s2.user(2)());
  CHECK(s1.user(0).at(0) != s1.user(1).at(0));
  double sum = 0;
  for (int k = 0; k < 20000; ++k) sum += a.uniform();
  CHECK(sum / 20000 == doctest::Approx(0.5).epsilon(0.02));
}
