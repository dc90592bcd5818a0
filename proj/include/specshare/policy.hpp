#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "specshare/net_model.hpp"
#include "specshare/rng.hpp"

namespace specshare {

// Joint strategy evaluated centrally: slot index and the distress history
// y^0..y^{t-1} in, power profile out. Implementations may keep state, so a
// policy object belongs to one evaluation at a time.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual PowerProfile act(std::size_t t, std::span<const int> history) = 0;
  // At most one positive entry per emitted profile.
  virtual bool tdma() const noexcept { return false; }
};

class StationaryPolicy final : public Policy {
 public:
  explicit StationaryPolicy(PowerProfile p) : p_(std::move(p)) {}
  PowerProfile act(std::size_t, std::span<const int>) override { return p_; }
  bool tdma() const noexcept override { return is_tdma_profile(p_); }

 private:
  PowerProfile p_;
};

// Replays a fixed list of profiles; past its end it keeps replaying from
// `loop_from` (or emits silence if loop_from is empty).
class ScriptedPolicy final : public Policy {
 public:
  ScriptedPolicy(std::vector<PowerProfile> script, std::optional<std::size_t> loop_from = {});
  PowerProfile act(std::size_t t, std::span<const int> history) override;
  bool tdma() const noexcept override { return tdma_; }

 private:
  std::vector<PowerProfile> script_;
  std::optional<std::size_t> loop_from_;
  bool tdma_ = true;
};

// Cyclic TDMA: slot t belongs to order[t % order.size()], at that user's
// fixed power.
class RoundRobinPolicy final : public Policy {
 public:
  RoundRobinPolicy(std::vector<std::size_t> order, PowerProfile powers);
  PowerProfile act(std::size_t t, std::span<const int> history) override;
  bool tdma() const noexcept override { return true; }

 private:
  std::vector<std::size_t> order_;
  PowerProfile powers_;
};

struct PolicyTrace {
  std::vector<PowerProfile> powers;        // p^t
  std::vector<int> signals;                // y^t
  std::vector<std::vector<double>> rates;  // r_i(p^t)

  std::size_t horizon() const noexcept { return powers.size(); }
  std::size_t num_users() const noexcept { return powers.empty() ? 0 : powers.front().size(); }
};

// Returns a forced value for y^t, or nullopt to sample it.
using SignalOverride = std::function<std::optional<int>(std::size_t t)>;

PolicyTrace evaluate(Policy& policy, const NetworkInstance& net, const SensingModel& sensing,
                     std::size_t horizon, UserStreams& streams,
                     const SignalOverride& override_signal = {});

struct DiscountedMetrics {
  std::vector<double> throughput;  // R_i
  std::vector<double> power;       // P_i
  // Upper bound on what the truncated tail could still add to any entry.
  double tail_residual = 0.0;
};

DiscountedMetrics discounted_metrics(const PolicyTrace& trace, double discount);

// (1-delta) * sum_{tau<=t} delta^tau r_i^tau for every t.
std::vector<double> running_discounted_throughput(const PolicyTrace& trace, double discount,
                                                  std::size_t i);

// sigma^2/g * (2^r - 1)/r: average power per unit of average throughput for a
// TDMA user that always transmits at rate r.
double throughput_energy_ratio(const NetworkInstance& net, std::size_t i, double r_tdma);

// Whether user j gains by also transmitting in a slot owned by user i, where i
// uses p_i there and j uses p_j in its own slot.
bool deviation_profitable(const NetworkInstance& net, std::size_t i, double p_i, std::size_t j,
                          double p_j);

struct DeviationFlag {
  std::size_t slot_owner = 0;  // i
  std::size_t deviator = 0;    // j
  double owner_power = 0.0;
  double deviator_power = 0.0;
};

// Pairwise check over every owned slot and every other scheduled user. `powers`
// holds the power each user uses in its own slots.
std::vector<DeviationFlag> certify_deviation_proof(const NetworkInstance& net,
                                                   std::span<const PowerProfile> schedule,
                                                   std::span<const double> powers);

// User j owns slot t_j at power p_j; user i owns slot t_i at p_i. j moves
// part of its throughput into slot t_i (transmitting on top of i) and lowers
// its own slot power to keep its discounted throughput unchanged.
struct TwoSlotDeviation {
  double borrowed_power = 0.0;  // j's power in slot t_i
  double own_power = 0.0;       // j's reduced power in slot t_j
  double baseline_energy = 0.0;
  double deviation_energy = 0.0;
  double baseline_throughput = 0.0;
  double deviation_throughput = 0.0;

  bool reduces_energy() const noexcept { return deviation_energy < baseline_energy; }
};

// Energy-minimizing two-slot deviation (the problem is convex in the borrowed
// power; the minimizer has a closed form). Energies/throughputs are the
// undivided discounted sums over the two slots.
TwoSlotDeviation best_two_slot_deviation(const NetworkInstance& net, std::size_t i, double p_i,
                                         std::size_t t_i, std::size_t j, double p_j,
                                         std::size_t t_j, double discount);

// One user, two of its slots t1, t2 at powers p1, p2. Raising slot t1 by eps1
// and lowering t2 by the throughput-preserving eps2.
struct PowerPerturbation {
  double eps1 = 0.0;
  double eps2 = 0.0;
  // delta^t1 eps1 - delta^t2 eps2: > 0 means the perturbation costs energy.
  double energy_increase = 0.0;
  // Change in discounted throughput recomputed from the perturbed powers.
  double throughput_change = 0.0;
};

PowerPerturbation equal_power_perturbation(const NetworkInstance& net, std::size_t i, double p1,
                                           std::size_t t1, double p2, std::size_t t2,
                                           double discount, double eps1);

}  // namespace specshare
