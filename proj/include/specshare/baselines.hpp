#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "specshare/its_solver.hpp"
#include "specshare/ldf_scheduler.hpp"
#include "specshare/net_model.hpp"
#include "specshare/policy.hpp"

namespace specshare {

struct StationaryOptions {
  std::size_t max_iterations = 20000;
  double tolerance = 1e-14;  // relative change that ends the iteration
};

struct StationarySolution {
  bool feasible = false;
  PowerProfile power;
  double spectral_radius = 0.0;  // of the normalized gain matrix F
  std::size_t iterations = 0;
  std::string diagnostic;
};

// Minimal fixed point of p_i = (2^{R_i} - 1) I_i(p_{-i}) / g_ii. Feasible iff
// the spectral radius of F_ij = (2^{R_i} - 1) g_ji / g_ii is below 1 and the
// fixed point fits under every grid maximum.
StationarySolution stationary_solve(const NetworkInstance& net,
                                    std::span<const double> targets = {},
                                    const StationaryOptions& options = {});

// Symmetric two-user closed form (2^r - 1) sigma^2 / (1 - (2^r - 1) alpha);
// nullopt when alpha >= 1/(2^r - 1).
std::optional<double> stationary_symmetric_power(double r, double noise, double alpha);

struct RoundRobinPowers {
  double first = 0.0;   // average power of the user transmitting at t = 0, 2, 4, ...
  double second = 0.0;  // ... and at t = 1, 3, 5, ...
};

// Two users, unit direct gains, throughput r each.
RoundRobinPowers round_robin_closed_form(double r, double discount, double noise);

// Alpha at which two-user round robin and the stationary policy spend the same
// total power (unit direct gains, throughput r each). Bisection.
double round_robin_crossover(double r, double discount, double noise);

// Discounted slot share of position k in an n-cycle: (1-d) d^k / (1 - d^n).
std::vector<double> round_robin_shares(std::size_t n, double discount);

struct RoundRobinResult {
  PowerProfile powers;               // per-user transmit power in its slots
  std::vector<double> closed_form;   // per-user average power, infinite horizon
  DiscountedMetrics simulated;
};

// Round robin in the given order; each user's slot power is set so that its
// discounted throughput equals its minimum rate.
RoundRobinResult round_robin_metrics(const NetworkInstance& net, std::span<const std::size_t> order,
                                     double discount, std::size_t horizon,
                                     const SensingModel& sensing, UserStreams& streams);

struct PunishForgiveConfig {
  std::size_t duration = 1;  // punished slots per distress signal
};

// Cooperates as the LDF schedule; after a distress signal everyone plays the
// stationary profile for `duration` slots, then the schedule resumes with the
// throughput those slots delivered credited to the continuation values.
class PunishForgivePolicy final : public Policy {
 public:
  PunishForgivePolicy(LdfScheduler scheduler, PowerProfile stationary,
                      std::vector<double> stationary_rates, PunishForgiveConfig cfg);

  PowerProfile act(std::size_t t, std::span<const int> history) override;

  const std::vector<std::size_t>& punished_slots() const noexcept { return punished_; }

 private:
  LdfScheduler scheduler_;
  PowerProfile stationary_;
  std::vector<double> stationary_rates_;
  PunishForgiveConfig cfg_;
  std::size_t remaining_ = 0;
  bool last_punished_ = false;
  std::vector<std::size_t> punished_;
};

// Throws InfeasibleError when the stationary solution is infeasible (no
// punishment profile exists).
PunishForgivePolicy punish_forgive_policy(const NetworkInstance& net, const ItsSolution& its,
                                          const FeasibilityConstants& constants,
                                          const StationarySolution& stationary, double discount,
                                          PunishForgiveConfig cfg = {}, LdfConfig ldf = {});

struct OracleResult {
  std::string prefix;                 // 1-based user labels
  std::vector<std::size_t> schedule;  // 0-based
  double energy = 0.0;                // prefix energy + cheapest tail completion
  double lower_bound = 0.0;           // sum_i R_i p*_i / r*_i
  bool tail_realizable = false;       // relaxed tail is reachable by some TDMA schedule
  std::size_t optimal_count = 0;      // prefixes attaining the optimum
  std::size_t explored = 0;
};

inline constexpr std::size_t kOracleMaxHorizon = 12;
inline constexpr std::size_t kOracleMaxUsers = 3;

// Total discounted energy of a TDMA prefix completed by the cheapest
// fractional tail; +inf if no tail can meet the requirements.
double prefix_energy(const NetworkInstance& net, double discount, std::span<const double> r_star,
                     std::span<const std::size_t> prefix);

// Exhaustive search over all user assignments of the first `horizon` slots;
// returns the lexicographically least optimal prefix.
OracleResult optimal_schedule_oracle(const NetworkInstance& net, double discount,
                                     std::span<const double> r_star, std::size_t horizon);

std::string schedule_string(std::span<const std::size_t> schedule);
std::vector<std::size_t> parse_schedule(const std::string& s);
bool equal_up_to_relabeling(const std::string& a, const std::string& b);

}  // namespace specshare
