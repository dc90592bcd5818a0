#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "specshare/net_model.hpp"

namespace specshare {

enum class CriterionKind { weighted_sum, proportional_fairness };

// Energy-efficiency criterion E(P_1..P_n). Empty weights mean equal weights
// summing to one.
struct Criterion {
  CriterionKind kind = CriterionKind::weighted_sum;
  std::vector<double> weights;

  double weight(std::size_t i, std::size_t n) const;
};

// E evaluated at average powers. Proportional fairness is sum w_i log P_i.
double criterion_value(const Criterion& c, std::span<const double> avg_power);

// Average power of user i at instantaneous rate r and average throughput R.
double tdma_average_power(const NetworkInstance& net, std::size_t i, double r, double target);

// E as a function of instantaneous rates (users with zero target skipped).
double rate_objective(const NetworkInstance& net, const Criterion& c, std::span<const double> r,
                      std::span<const double> targets);

// Power that user i needs, alone on the channel, to reach rate r.
double tdma_power(const NetworkInstance& net, std::size_t i, double r);
// p~^i: only user i transmits, at the power for rate r. Throws InfeasibleError
// if that power exceeds i's grid maximum.
PowerProfile tdma_profile(const NetworkInstance& net, std::size_t i, double r);

struct FeasibilityConstants {
  SquareMatrix b;                 // b_ij, -inf when deviation terms are off
  std::vector<double> mu_lower;   // mu_i
  std::vector<double> rate_cap;   // rbar_i = R_i / mu_i (inf when mu_i = 0)
  std::vector<double> rho_tdma;   // rho(y=1 | p~^i)
  double delta_min = 0.0;
  int passes = 0;
  bool obedient = false;
  bool in_regime = true;          // every off-diagonal b_ij < 0
  bool feasible = true;           // sum(mu) < 1
  std::string diagnostic;

  // -rho(y=1|p~^i)/b_ij, zero when deviation terms are off.
  double deviation_term(std::size_t i, std::size_t j) const;
  double mu_sum() const;
};

// Deviation terms disabled (b = -inf): mu = 0, no rate caps, delta_min = 1 - 1/n.
FeasibilityConstants obedient_constants(std::size_t num_users);

// Constants for the given instantaneous rates. b_ij is a max over the grid of
// P_j (zero excluded); its rbar_j normalizer is resolved by one fixed-point
// pass started from the largest solo rate on the grid.
FeasibilityConstants feasibility_constants(const NetworkInstance& net,
                                           const SensingModel& sensing,
                                           std::span<const double> rates_tdma);
// Same, with explicit throughput targets in place of the network's minimum
// rates (users with a zero target or zero rate are left out).
FeasibilityConstants feasibility_constants(const NetworkInstance& net,
                                           const SensingModel& sensing,
                                           std::span<const double> rates_tdma,
                                           std::span<const double> targets);

struct KktRoot {
  double rate = 0.0;
  bool capped = false;   // hit min(rbar_i, grid-max solo rate)
  bool no_root = false;  // cap reached without bracketing a root
  double residual = 0.0;
};

// Marginal-energy side of the KKT equation at rate r: dE/dP_i * A(r) * s_i,
// with A(r) = ln2 r 2^r - 2^r + 1. Increasing in r for both criteria.
double kkt_lhs(const NetworkInstance& net, std::size_t i, double r, const Criterion& c,
               double target);
double kkt_lhs_derivative(const NetworkInstance& net, std::size_t i, double r,
                          const Criterion& c, double target);

// Root of kkt_lhs(r) = lambda on (0, cap], safeguarded Newton.
KktRoot kkt_inner_solve(const NetworkInstance& net, std::size_t i, double lambda,
                        const Criterion& c, double target, double cap);

struct ItsOptions {
  double precision = 1e-9;  // e
  double lambda_cap = 1e12;
  std::size_t threads = 1;  // per-user agents solved concurrently per round
};

struct ItsSolution {
  std::vector<double> r_star;
  std::vector<double> p_star;
  std::vector<double> targets;
  std::vector<double> kkt_mu;  // multipliers of the active rate caps
  std::vector<bool> capped;
  double lambda = 0.0;
  double lambda_upper_after_doubling = 1.0;
  std::size_t doubling_steps = 0;
  std::size_t bisection_steps = 0;
  std::size_t iterations = 0;  // doubling + bisection
  std::size_t messages_broadcast = 0;
  double residual_before_normalization = 0.0;
  double residual = 0.0;  // after normalization

  std::size_t size() const noexcept { return r_star.size(); }
};

// ITS bisection on lambda. Users whose target is 0 sit out (r* = 0, no messages).
// Rate caps come from `constants` and the grid maximum.
ItsSolution its_solve(const NetworkInstance& net, const Criterion& c,
                      const FeasibilityConstants& constants, std::span<const double> targets,
                      const ItsOptions& options = {});
ItsSolution its_solve(const NetworkInstance& net, const Criterion& c,
                      const FeasibilityConstants& constants, const ItsOptions& options = {});

enum class DesignMode { obedient, deviation_proof };

struct Design {
  ItsSolution its;
  FeasibilityConstants constants;
};

// obedient: obedient constants + ITS. deviation_proof: ITS without caps,
// constants at those rates, ITS again under the caps, constants recomputed at
// the final rates. Throws InfeasibleError when the instance is out of reach.
Design design(const NetworkInstance& net, const SensingModel& sensing, const Criterion& c,
              DesignMode mode, std::span<const double> targets, const ItsOptions& options = {});

struct ConvexityReport {
  std::size_t samples = 0;
  std::size_t numeric_nonpositive = 0;
  std::size_t analytic_nonpositive = 0;
  double min_numeric = 0.0;
  double min_analytic = 0.0;

  bool convex() const noexcept { return numeric_nonpositive == 0 && analytic_nonpositive == 0; }
};

// h(x) = (2^{1/x} - 1) x, the per-user objective in x = 1/r coordinates.
double reformulated_objective(double x);
// ln2 * 2^{1/x} / x^3, the exact h''(x) divided by ln2; same sign everywhere.
double reduced_second_derivative(double x);
// Exact h''(x) = ln2^2 * 2^{1/x} / x^3.
double exact_second_derivative(double x);

// Central second differences of the per-user criterion term in x-coordinates
// at the given x samples, plus the analytic sign check.
ConvexityReport convexity_check(CriterionKind kind, std::span<const double> xs);

}  // namespace specshare
