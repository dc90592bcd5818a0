#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "specshare/its_solver.hpp"
#include "specshare/net_model.hpp"
#include "specshare/policy.hpp"

namespace specshare {

enum class MonitoringMode {
  signal_dependent,  // updates driven by the observed distress signal
  perfect,           // no deviations to police: the plain continuation split
};

enum class DistanceForm {
  algorithm,  // (r' - mu)/(1 - r') * rho(y=1|p~^j)
  prose,      // (r' - mu)/(1 - r' + sum_k -rho(y=1|p~^j)/b_jk)
};

struct LdfConfig {
  MonitoringMode mode = MonitoringMode::perfect;
  DistanceForm distance = DistanceForm::algorithm;
  // Largest |sum r' - 1| accepted before re-projection.
  double drift_tolerance = 1e-12;
  // Excursions outside [0, 1] up to this size are rounding and get clamped.
  double clamp_tolerance = 1e-9;
  // Absolute slack on the throughput-distance bound checks.
  double bound_slack = 1e-12;
};

// Everything the scheduler remembers: the slot index and r'.
struct ContinuationState {
  std::size_t t = 0;
  std::vector<double> r_prime;

  // gamma_j = r'_j * r*_j.
  std::vector<double> gamma(std::span<const double> r_star) const;
};

inline constexpr std::size_t kNobody = std::numeric_limits<std::size_t>::max();

struct ScheduleDecision {
  std::size_t t = 0;
  std::size_t i_star = kNobody;
  std::vector<double> distances;
  std::vector<double> r_prime;  // state the decision was taken in
  double power = 0.0;
  int y = 0;                    // filled in once the slot's signal is known
};

ContinuationState initial_state(const ItsSolution& its);

// +inf once r'_j reaches 1; -inf for users with no throughput left to claim
// (zero target).
double distance(const ContinuationState& state, const FeasibilityConstants& constants,
                std::span<const double> r_star, std::size_t j, const LdfConfig& cfg = {});

ScheduleDecision decide(const ContinuationState& state, const FeasibilityConstants& constants,
                        const ItsSolution& its, const LdfConfig& cfg = {});

// One slot of the algorithm: pick i*, then update r' for the observed signal.
std::pair<ScheduleDecision, ContinuationState> step(const ContinuationState& state,
                                                    const FeasibilityConstants& constants,
                                                    const ItsSolution& its, double discount,
                                                    int observed_y, const LdfConfig& cfg = {});

// Stateful wrapper used by the policies.
class LdfScheduler {
 public:
  LdfScheduler(ItsSolution its, FeasibilityConstants constants, double discount,
               LdfConfig cfg = {});
  LdfScheduler(ItsSolution its, FeasibilityConstants constants, double discount, LdfConfig cfg,
               ContinuationState initial);

  const ContinuationState& state() const noexcept { return state_; }
  const ItsSolution& its() const noexcept { return its_; }
  const FeasibilityConstants& constants() const noexcept { return constants_; }
  double discount() const noexcept { return discount_; }
  const LdfConfig& config() const noexcept { return cfg_; }

  ScheduleDecision decide() const;
  // Runs the current slot with signal y; returns the decision taken.
  ScheduleDecision advance(int y);
  // A slot spent outside the schedule in which user j received delivered[j].
  void absorb(std::span<const double> delivered);
  PowerProfile profile(const ScheduleDecision& d, std::size_t num_users) const;

 private:
  ItsSolution its_;
  FeasibilityConstants constants_;
  double discount_;
  LdfConfig cfg_;
  ContinuationState state_;
};

class LdfPolicy final : public Policy {
 public:
  LdfPolicy(LdfScheduler scheduler, std::size_t num_users)
      : scheduler_(std::move(scheduler)), num_users_(num_users) {}

  PowerProfile act(std::size_t t, std::span<const int> history) override;
  bool tdma() const noexcept override { return true; }

  const std::vector<ScheduleDecision>& decisions() const noexcept { return log_; }
  const LdfScheduler& scheduler() const noexcept { return scheduler_; }

 private:
  LdfScheduler scheduler_;
  std::size_t num_users_;
  std::vector<ScheduleDecision> log_;
};

struct BoundReport {
  std::size_t checks = 0;
  std::size_t violations = 0;
  double worst_ratio = 0.0;  // max |distance| / bound over all checks
  std::size_t first_slot = kNobody;
  std::size_t first_user = kNobody;

  bool ok() const noexcept { return violations == 0; }
};

// |(1-d) sum_{tau<=t} d^tau r_i^tau - R_i| <= r*_i d^{t+1} at every slot.
BoundReport check_throughput_bound(const PolicyTrace& trace, const ItsSolution& its,
                                   double discount, double slack = 1e-12);

// The same bound on the seed-average path, with a 3-standard-error band.
BoundReport check_expected_bound(std::span<const PolicyTrace> traces, const ItsSolution& its,
                                 double discount, double slack = 1e-12);

struct LdfRun {
  PolicyTrace trace;
  std::vector<ScheduleDecision> decisions;
  BoundReport bound;
};

// Simulates the schedule. In perfect-monitoring mode a bound violation is an
// InvariantFault naming the slot; in signal-dependent mode it is only reported.
LdfRun run_ldf(const NetworkInstance& net, const SensingModel& sensing, const ItsSolution& its,
               const FeasibilityConstants& constants, double discount, std::size_t horizon,
               UserStreams& streams, const LdfConfig& cfg = {});

}  // namespace specshare
