#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "specshare/its_solver.hpp"
#include "specshare/ldf_scheduler.hpp"
#include "specshare/net_model.hpp"
#include "specshare/policy.hpp"
#include "specshare/rng.hpp"

namespace specshare {

enum class EventKind { enter, exit };

struct MembershipEvent {
  std::size_t t = 0;
  EventKind kind = EventKind::enter;
  std::vector<std::size_t> users;  // ids in the universe network
};

struct EpochRecord {
  std::size_t start = 0;
  std::vector<std::string> events;  // "ENTER 11", "EXIT 2", ...
  std::vector<std::size_t> users;   // active ids, ascending
  std::vector<double> rates;        // r^(k), aligned with users
  std::vector<double> targets;      // ITS inputs: gamma_i(t_k) or R_i^min
  double delta_min = 0.0;
};

struct RejectedChange {
  std::size_t t = 0;
  std::vector<std::string> events;
  std::string diagnostic;
};

struct DynamicOptions {
  Criterion criterion;
  DesignMode mode = DesignMode::obedient;
  ItsOptions its;
  LdfConfig ldf;
};

// Runs the schedule over a universe of potential users, re-solving at every
// ENTER/EXIT. Inputs to the re-solve are the continuation throughputs of the
// users already present and the minimum rates of the entrants.
class DynamicSession {
 public:
  DynamicSession(NetworkInstance universe, SensingModel sensing,
                 std::vector<std::size_t> initial_users, std::uint64_t seed,
                 DynamicOptions options = {});

  // Applies the change at the current slot. Returns false (and keeps the
  // current epoch) if the new population is infeasible.
  bool on_membership_change(const MembershipEvent& event);
  // Simulates slots [now(), t).
  void run_until(std::size_t t);

  std::size_t now() const noexcept { return trace_.horizon(); }
  double discount() const noexcept { return universe_.discount(); }
  const NetworkInstance& universe() const noexcept { return universe_; }
  const std::vector<EpochRecord>& epochs() const noexcept { return epochs_; }
  const std::vector<RejectedChange>& rejected() const noexcept { return rejected_; }
  // Universe-wide per-slot record.
  const PolicyTrace& trace() const noexcept { return trace_; }
  const std::vector<std::size_t>& epoch_of_slot() const noexcept { return epoch_of_slot_; }
  // Slot at which each universe user joined / left (kNobody if never).
  const std::vector<std::size_t>& entered() const noexcept { return entered_; }
  const std::vector<std::size_t>& exited() const noexcept { return exited_; }
  // Current normalized continuation throughput of a universe user.
  double continuation(std::size_t user) const;

 private:
  struct Epoch {
    NetworkInstance net;
    SensingModel sensing;
    std::vector<std::size_t> users;
    LdfScheduler scheduler;
  };

  Epoch build_epoch(std::vector<std::size_t> users, const std::vector<double>& targets) const;

  NetworkInstance universe_;
  SensingModel sensing_;
  DynamicOptions options_;
  UserStreams streams_;
  std::optional<Epoch> current_;
  std::vector<EpochRecord> epochs_;
  std::vector<RejectedChange> rejected_;
  PolicyTrace trace_;
  std::vector<std::size_t> epoch_of_slot_;
  std::vector<std::size_t> entered_;
  std::vector<std::size_t> exited_;
};

struct EpochBoundEntry {
  std::size_t epoch = 0;
  std::size_t user = 0;
  bool holds = true;             // absolute form, bound r^(l) d^{t+1} on the user's clock
  bool normalized_holds = true;  // against gamma_i(t_l), bound r^(l) d^{t - t_l + 1}
  double worst_ratio = 0.0;      // max gap / bound, absolute form
  double telescoping_error = 0.0;
};

struct EpochBoundReport {
  std::vector<EpochBoundEntry> entries;
  std::size_t violations = 0;
  std::size_t normalized_violations = 0;
  double max_telescoping_error = 0.0;

  bool ok(double telescoping_tol = 1e-9) const noexcept {
    return violations == 0 && normalized_violations == 0 && max_telescoping_error <= telescoping_tol;
  }
};

// Per-epoch distance check on every user's own clock (slot 0 = its entry).
EpochBoundReport check_epochwise_bound(const DynamicSession& session, double slack = 1e-12);

struct DynamicScenario {
  NetworkInstance universe;
  SensingModel sensing;
  std::vector<std::size_t> initial_users;
  std::vector<MembershipEvent> events;
  std::size_t horizon = 0;
  std::vector<std::string> labels;  // "PU1".."PU11", "SU1".."SU8"
};

struct ChannelDefaults {
  double noise = 0.05;
  double alpha = 0.2;
  double threshold = 1.0;
  double error_variance = 0.1;
  double discount = 0.95;
  double power_max = 1e12;
  std::size_t grid_points = 512;
};

// 11 PUs and 8 SUs; PU n needs 0.2 + 0.02 (n - 1), every SU 0.1. Starts with
// PU1-10 + SU1-2; SU2 leaves at 100, SU3 enters at 150, PU11 at 200 and
// SU4-8 at 250.
DynamicScenario membership_scenario(std::uint64_t seed, std::size_t horizon = 400,
                                       const ChannelDefaults& defaults = {});

// Runs the scenario's events in order and simulates up to its horizon.
DynamicSession run_scenario(const DynamicScenario& scenario, std::uint64_t seed,
                            DynamicOptions options = {});

}  // namespace specshare
